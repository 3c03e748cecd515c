#include "spoilcal/segment.hpp"

#include "spoilcal/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <queue>

namespace spoilcal::segment {

using raster::CellIndex;
using raster::GeoRef;
using raster::Grid;

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<std::ptrdiff_t>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

Grid gaussian_blur(const Grid& grid, double sigma) {
    if (!(sigma > 0.0)) throw Error("gaussian_blur: sigma must be positive");
    const std::vector<double> k = gaussian_kernel(sigma);
    const auto radius = static_cast<std::ptrdiff_t>(k.size() / 2);
    const std::size_t w = grid.width(), h = grid.height();

    // Numerator and valid-weight planes are blurred together; their ratio is
    // the 2-D renormalized convolution because the kernel is separable.
    std::vector<double> num(w * h), den(w * h);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const bool valid = !std::isnan(grid[i]);
        num[i] = valid ? grid[i] : 0.0;
        den[i] = valid ? 1.0 : 0.0;
    }
    std::vector<double> tnum(w * h), tden(w * h);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double sn = 0.0, sd = 0.0;
            for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
                const std::size_t cc = reflect_index(static_cast<std::ptrdiff_t>(c) + o, w);
                const double kv = k[static_cast<std::size_t>(o + radius)];
                sn += kv * num[r * w + cc];
                sd += kv * den[r * w + cc];
            }
            tnum[r * w + c] = sn;
            tden[r * w + c] = sd;
        }
    }
    Grid out(grid.georef(), raster::kNoData);
    std::vector<double> col_num(h), col_den(h);
    for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t r = 0; r < h; ++r) {
            double sn = 0.0, sd = 0.0;
            for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
                const std::size_t rr = reflect_index(static_cast<std::ptrdiff_t>(r) + o, h);
                const double kv = k[static_cast<std::size_t>(o + radius)];
                sn += kv * tnum[rr * w + c];
                sd += kv * tden[rr * w + c];
            }
            if (!std::isnan(grid.at(r, c)) && sd > 0.0) out.at(r, c) = static_cast<float>(sn / sd);
        }
    }
    return out;
}

double otsu_threshold(const Grid& grid) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (float v : grid.values()) {
        if (std::isnan(v)) continue;
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
    }
    if (!(lo < hi)) throw DegenerateError("otsu_threshold: grid needs at least two distinct valid values");

    constexpr std::size_t kBins = 256;
    const double width = (hi - lo) / kBins;
    std::array<double, kBins> hist{};
    double total = 0.0;
    for (float v : grid.values()) {
        if (std::isnan(v)) continue;
        const auto bin = std::min<std::size_t>(kBins - 1, static_cast<std::size_t>((v - lo) / width));
        hist[bin] += 1.0;
        total += 1.0;
    }
    double sum_all = 0.0;
    for (std::size_t k = 0; k < kBins; ++k) sum_all += hist[k] * (lo + (static_cast<double>(k) + 0.5) * width);

    double best = -1.0;
    std::size_t best_k = 0;
    double count0 = 0.0, sum0 = 0.0;
    for (std::size_t k = 0; k < kBins; ++k) {
        count0 += hist[k];
        sum0 += hist[k] * (lo + (static_cast<double>(k) + 0.5) * width);
        const double count1 = total - count0;
        if (count0 == 0.0 || count1 == 0.0) continue;
        const double mean0 = sum0 / count0;
        const double mean1 = (sum_all - sum0) / count1;
        const double between = (count0 / total) * (count1 / total) * (mean0 - mean1) * (mean0 - mean1);
        if (between > best) {
            best = between;
            best_k = k;
        }
    }
    return lo + static_cast<double>(best_k + 1) * width;
}

std::vector<Seed> detect_local_maxima(const Grid& grid, std::size_t window_radius, double min_height) {
    if (window_radius < 1) throw Error("detect_local_maxima: window_radius must be >= 1");
    const std::size_t w = grid.width(), h = grid.height();
    const auto rad = static_cast<std::ptrdiff_t>(window_radius);
    constexpr float kLow = -std::numeric_limits<float>::infinity();
    auto val = [&](std::size_t i) { return std::isnan(grid[i]) ? kLow : grid[i]; };

    // Windowed maximum (clipped at the borders), separable.
    std::vector<float> row_max(w * h), win_max(w * h);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t c0 = c >= window_radius ? c - window_radius : 0;
            const std::size_t c1 = std::min(w - 1, c + window_radius);
            float m = kLow;
            for (std::size_t cc = c0; cc <= c1; ++cc) m = std::max(m, val(r * w + cc));
            row_max[r * w + c] = m;
        }
    }
    for (std::size_t r = 0; r < h; ++r) {
        const std::size_t r0 = r >= window_radius ? r - window_radius : 0;
        const std::size_t r1 = std::min(h - 1, r + window_radius);
        for (std::size_t c = 0; c < w; ++c) {
            float m = kLow;
            for (std::size_t rr = r0; rr <= r1; ++rr) m = std::max(m, row_max[rr * w + c]);
            win_max[r * w + c] = m;
        }
    }
    auto is_candidate = [&](std::size_t i) { return !std::isnan(grid[i]) && grid[i] == win_max[i]; };

    std::vector<int> component(w * h, -1);
    std::vector<Seed> seeds;
    int next_component = 0;
    std::vector<std::size_t> members;
    for (std::size_t start = 0; start < w * h; ++start) {
        if (!is_candidate(start) || component[start] >= 0) continue;
        const float v = grid[start];
        const int id = next_component++;
        // 8-connected equal-valued component through the full grid.
        members.clear();
        std::queue<std::size_t> queue;
        queue.push(start);
        component[start] = id;
        bool all_candidates = true;
        while (!queue.empty()) {
            const std::size_t i = queue.front();
            queue.pop();
            members.push_back(i);
            if (!is_candidate(i)) all_candidates = false;
            const auto r = static_cast<std::ptrdiff_t>(i / w), c = static_cast<std::ptrdiff_t>(i % w);
            for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
                for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                    const std::ptrdiff_t nr = r + dr, nc = c + dc;
                    if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(h) || nc >= static_cast<std::ptrdiff_t>(w)) {
                        continue;
                    }
                    const auto j = static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc);
                    if (component[j] < 0 && grid[j] == v) {
                        component[j] = id;
                        queue.push(j);
                    }
                }
            }
        }
        if (!all_candidates || static_cast<double>(v) < min_height) continue;

        bool has_lower = false;
        bool strict = true;
        for (std::size_t i : members) {
            const auto r = static_cast<std::ptrdiff_t>(i / w), c = static_cast<std::ptrdiff_t>(i % w);
            for (std::ptrdiff_t rr = std::max<std::ptrdiff_t>(0, r - rad);
                 strict && rr <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h) - 1, r + rad); ++rr) {
                for (std::ptrdiff_t cc = std::max<std::ptrdiff_t>(0, c - rad);
                     cc <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - 1, c + rad); ++cc) {
                    const auto j = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
                    if (std::isnan(grid[j])) continue;
                    if (grid[j] < v) {
                        has_lower = true;
                    } else if (component[j] != id) {
                        strict = false;
                        break;
                    }
                }
            }
            if (!strict) break;
        }
        if (!strict || !has_lower) continue;
        const std::size_t first = *std::min_element(members.begin(), members.end());
        seeds.push_back({{first / w, first % w}, static_cast<double>(v)});
    }
    std::sort(seeds.begin(), seeds.end(), [](const Seed& a, const Seed& b) { return a.cell < b.cell; });
    return seeds;
}

Grid voronoi_labels(const Grid& foreground, const std::vector<Seed>& seeds) {
    Grid labels(foreground.georef(), 0.0f);
    if (seeds.empty()) return labels;
    for (std::size_t r = 0; r < foreground.height(); ++r) {
        for (std::size_t c = 0; c < foreground.width(); ++c) {
            const float f = foreground.at(r, c);
            if (std::isnan(f) || f == 0.0f) continue;
            // Squared distances between integer cell indices are exact.
            std::int64_t best = std::numeric_limits<std::int64_t>::max();
            std::size_t best_k = 0;
            for (std::size_t k = 0; k < seeds.size(); ++k) {
                const auto dr = static_cast<std::int64_t>(r) - static_cast<std::int64_t>(seeds[k].cell.row);
                const auto dc = static_cast<std::int64_t>(c) - static_cast<std::int64_t>(seeds[k].cell.col);
                const std::int64_t d = dr * dr + dc * dc;
                if (d < best) {
                    best = d;
                    best_k = k;
                }
            }
            labels.at(r, c) = static_cast<float>(best_k + 1);
        }
    }
    return labels;
}

SegmentMap voronoi_segment(const Grid& dsm, const SegmentParams& params) {
    const Grid blurred = gaussian_blur(dsm, params.sigma);
    double threshold = 0.0;
    try {
        threshold = otsu_threshold(blurred);
    } catch (const DegenerateError& e) {
        throw SegmentationError(std::string("voronoi_segment: flat or empty DSM: ") + e.what());
    }
    Grid foreground(blurred.georef(), 0.0f);
    for (std::size_t i = 0; i < blurred.size(); ++i) {
        if (!std::isnan(blurred[i]) && blurred[i] > threshold) foreground[i] = 1.0f;
    }
    const std::vector<Seed> candidates =
        detect_local_maxima(blurred, params.window_radius, params.min_height.value_or(threshold));
    SegmentMap seg;
    for (const Seed& s : candidates) {
        if (foreground.at(s.cell.row, s.cell.col) != 0.0f) seg.seeds.push_back(s);
    }
    if (seg.seeds.empty()) {
        throw SegmentationError("voronoi_segment: no seed points left after background removal");
    }
    seg.labels = voronoi_labels(foreground, seg.seeds);
    seg.cell_counts.assign(seg.seeds.size(), 0);
    for (float v : seg.labels.values()) {
        if (v > 0.0f) ++seg.cell_counts[static_cast<std::size_t>(v) - 1];
    }
    return seg;
}

namespace {

using Vertex = std::pair<std::size_t, std::size_t>; // (row, col) on the cell-corner lattice

// Rings of the union of cells labelled `label`, region on the left when
// walked in world coordinates (exteriors counter-clockwise, holes clockwise).
std::vector<std::vector<Vertex>> trace_rings(const Grid& labels, float label) {
    const std::size_t w = labels.width(), h = labels.height();
    auto inside = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
        return r >= 0 && c >= 0 && r < static_cast<std::ptrdiff_t>(h) && c < static_cast<std::ptrdiff_t>(w) &&
               labels.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) == label;
    };
    std::multimap<Vertex, Vertex> edges;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (labels.at(r, c) != label) continue;
            const auto ir = static_cast<std::ptrdiff_t>(r), ic = static_cast<std::ptrdiff_t>(c);
            if (!inside(ir + 1, ic)) edges.emplace(Vertex{r + 1, c}, Vertex{r + 1, c + 1});
            if (!inside(ir, ic + 1)) edges.emplace(Vertex{r + 1, c + 1}, Vertex{r, c + 1});
            if (!inside(ir - 1, ic)) edges.emplace(Vertex{r, c + 1}, Vertex{r, c});
            if (!inside(ir, ic - 1)) edges.emplace(Vertex{r, c}, Vertex{r + 1, c});
        }
    }
    std::vector<std::vector<Vertex>> rings;
    while (!edges.empty()) {
        auto it = edges.begin();
        const Vertex start = it->first;
        Vertex prev = it->first, cur = it->second;
        edges.erase(it);
        std::vector<Vertex> ring{start};
        while (cur != start) {
            ring.push_back(cur);
            auto [lo, hi] = edges.equal_range(cur);
            auto chosen = lo;
            if (std::next(lo) != hi) {
                // Pinch vertex: take the left turn so diagonal cells split
                // into separate rings. Directions in (drow, dcol).
                const auto in_r = static_cast<std::ptrdiff_t>(cur.first) - static_cast<std::ptrdiff_t>(prev.first);
                const auto in_c = static_cast<std::ptrdiff_t>(cur.second) - static_cast<std::ptrdiff_t>(prev.second);
                for (auto e = lo; e != hi; ++e) {
                    const auto out_r = static_cast<std::ptrdiff_t>(e->second.first) - static_cast<std::ptrdiff_t>(cur.first);
                    const auto out_c = static_cast<std::ptrdiff_t>(e->second.second) - static_cast<std::ptrdiff_t>(cur.second);
                    // World y points to -row; a left turn in world frame has
                    // positive cross product (in_x*out_y - in_y*out_x).
                    const std::ptrdiff_t cross = in_c * (-out_r) - (-in_r) * out_c;
                    if (cross > 0) chosen = e;
                }
            }
            prev = cur;
            cur = chosen->second;
            edges.erase(chosen);
        }
        // Keep corners only.
        std::vector<Vertex> corners;
        const std::size_t n = ring.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Vertex& a = ring[(i + n - 1) % n];
            const Vertex& b = ring[i];
            const Vertex& c = ring[(i + 1) % n];
            const bool collinear = (a.first == b.first && b.first == c.first) || (a.second == b.second && b.second == c.second);
            if (!collinear) corners.push_back(b);
        }
        // Start at the smallest (row, col) corner for stable output.
        std::rotate(corners.begin(), std::min_element(corners.begin(), corners.end()), corners.end());
        rings.push_back(std::move(corners));
    }
    return rings;
}

double signed_area_world(const std::vector<Vertex>& ring) {
    // x = col, y = -row
    double a = 0.0;
    for (std::size_t i = 0; i < ring.size(); ++i) {
        const auto& p = ring[i];
        const auto& q = ring[(i + 1) % ring.size()];
        a += static_cast<double>(p.second) * -static_cast<double>(q.first) -
             static_cast<double>(q.second) * -static_cast<double>(p.first);
    }
    return 0.5 * a;
}

bool contains(const std::vector<Vertex>& ring, double row, double col) {
    bool in = false;
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        const double ri = static_cast<double>(ring[i].first), ci = static_cast<double>(ring[i].second);
        const double rj = static_cast<double>(ring[j].first), cj = static_cast<double>(ring[j].second);
        if ((ri > row) != (rj > row) && col < (cj - ci) * (row - ri) / (rj - ri) + ci) in = !in;
    }
    return in;
}

} // namespace

void export_segments_geojson(const SegmentMap& seg, const std::filesystem::path& path) {
    using nlohmann::json;
    const GeoRef& geo = seg.labels.georef();
    auto to_world = [&](const std::vector<Vertex>& ring) {
        json coords = json::array();
        for (const Vertex& v : ring) {
            coords.push_back({geo.origin_x + static_cast<double>(v.second) * geo.cell_size,
                              geo.origin_y - static_cast<double>(v.first) * geo.cell_size});
        }
        coords.push_back(coords.front());
        return coords;
    };

    json features = json::array();
    for (std::size_t k = 1; k <= seg.segment_count(); ++k) {
        const auto rings = trace_rings(seg.labels, static_cast<float>(k));
        std::vector<std::vector<Vertex>> outers, holes;
        for (const auto& ring : rings) (signed_area_world(ring) > 0.0 ? outers : holes).push_back(ring);
        std::vector<std::vector<std::size_t>> holes_of(outers.size());
        for (std::size_t hi = 0; hi < holes.size(); ++hi) {
            // The hole's first corner edge borders a cell of this segment: a
            // cell centre lying just inside that vertex identifies its outer ring.
            const Vertex v = holes[hi][0];
            double best_area = std::numeric_limits<double>::infinity();
            std::size_t owner = 0;
            for (double dr : {-0.5, 0.5}) {
                for (double dc : {-0.5, 0.5}) {
                    const double rr = static_cast<double>(v.first) + dr, cc = static_cast<double>(v.second) + dc;
                    if (rr < 0 || cc < 0 || rr >= static_cast<double>(geo.height) || cc >= static_cast<double>(geo.width)) continue;
                    if (seg.labels.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)) != static_cast<float>(k)) continue;
                    for (std::size_t oi = 0; oi < outers.size(); ++oi) {
                        const double area = signed_area_world(outers[oi]);
                        if (area < best_area && contains(outers[oi], rr, cc)) {
                            best_area = area;
                            owner = oi;
                        }
                    }
                }
            }
            if (!outers.empty()) holes_of[owner].push_back(hi);
        }
        json polygons = json::array();
        for (std::size_t oi = 0; oi < outers.size(); ++oi) {
            json poly = json::array({to_world(outers[oi])});
            for (std::size_t hi : holes_of[oi]) poly.push_back(to_world(holes[hi]));
            polygons.push_back(poly);
        }
        json geometry = polygons.size() == 1 ? json{{"type", "Polygon"}, {"coordinates", polygons[0]}}
                                             : json{{"type", "MultiPolygon"}, {"coordinates", polygons}};
        features.push_back({{"type", "Feature"},
                            {"geometry", geometry},
                            {"properties", {{"segment_id", k}, {"cell_count", seg.cell_counts[k - 1]}}}});
    }
    json fc{{"type", "FeatureCollection"}, {"features", features}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path.string());
    out << fc.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace spoilcal::segment
