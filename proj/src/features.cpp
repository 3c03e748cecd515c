#include "spoilcal/features.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/parallel.hpp"
#include "spoilcal/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <queue>
#include <sstream>

namespace spoilcal::features {

using raster::Grid;
using segment::reflect_index;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Reflect-padded copy of a band in double precision.
struct Padded {
    std::size_t pad = 0;
    std::size_t stride = 0;
    std::vector<double> data;

    Padded(const Grid& g, std::size_t p) : pad(p), stride(g.width() + 2 * p) {
        const std::size_t h = g.height() + 2 * p;
        data.resize(stride * h);
        for (std::size_t r = 0; r < h; ++r) {
            const std::size_t sr = reflect_index(static_cast<std::ptrdiff_t>(r) - static_cast<std::ptrdiff_t>(p), g.height());
            for (std::size_t c = 0; c < stride; ++c) {
                const std::size_t sc = reflect_index(static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(p), g.width());
                data[r * stride + c] = g.at(sr, sc);
            }
        }
    }
    // Value at image offset (row + dr, col + dc), |dr|,|dc| <= pad.
    double at(std::size_t row, std::size_t col, std::ptrdiff_t dr, std::ptrdiff_t dc) const {
        return data[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(row + pad) + dr) * stride +
                    static_cast<std::size_t>(static_cast<std::ptrdiff_t>(col + pad) + dc)];
    }
};

// True 2-D convolution with a (2R+1)^2 kernel, reflect padding.
std::vector<double> convolve2d(const Padded& p, std::size_t w, std::size_t h, const std::vector<double>& k, std::size_t radius) {
    const std::size_t kw = 2 * radius + 1;
    std::vector<double> out(w * h, 0.0);
    const auto R = static_cast<std::ptrdiff_t>(radius);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t dy = -R; dy <= R; ++dy) {
                const double* row = &p.data[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r + p.pad) - dy) * p.stride];
                const double* krow = &k[static_cast<std::size_t>(dy + R) * kw];
                const auto base = static_cast<std::ptrdiff_t>(c + p.pad);
                for (std::ptrdiff_t dx = -R; dx <= R; ++dx) s += krow[dx + R] * row[base - dx];
            }
            out[r * w + c] = s;
        }
    }
    return out;
}

// Separable convolution: horizontal taps hx (over dx) then vertical taps vy (over dy).
std::vector<double> convolve_separable(const Padded& p, std::size_t w, std::size_t h, const std::vector<double>& hx,
                                       const std::vector<double>& vy, std::size_t radius) {
    const auto R = static_cast<std::ptrdiff_t>(radius);
    const std::size_t ph = h + 2 * p.pad;
    std::vector<double> tmp(w * ph, 0.0);
    for (std::size_t r = 0; r < ph; ++r) {
        const double* row = &p.data[r * p.stride];
        for (std::size_t c = 0; c < w; ++c) {
            const auto base = static_cast<std::ptrdiff_t>(c + p.pad);
            double s = 0.0;
            for (std::ptrdiff_t dx = -R; dx <= R; ++dx) s += hx[static_cast<std::size_t>(dx + R)] * row[base - dx];
            tmp[r * w + c] = s;
        }
    }
    std::vector<double> out(w * h, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::ptrdiff_t dy = -R; dy <= R; ++dy) {
            const double kv = vy[static_cast<std::size_t>(dy + R)];
            const double* src = &tmp[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r + p.pad) - dy) * w];
            double* dst = &out[r * w];
            for (std::size_t c = 0; c < w; ++c) dst[c] += kv * src[c];
        }
    }
    return out;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// 3x3 gradient stencils (correlation form, rows then columns).
using Stencil = std::array<std::array<double, 3>, 3>;

Grid gradient_magnitude(const Padded& p, const raster::GeoRef& geo, const Stencil& kx) {
    Stencil ky{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) ky[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = kx[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    Grid out(geo);
    for (std::size_t r = 0; r < geo.height; ++r) {
        for (std::size_t c = 0; c < geo.width; ++c) {
            double gx = 0.0, gy = 0.0;
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    const double v = p.at(r, c, i - 1, j - 1);
                    gx += kx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * v;
                    gy += ky[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * v;
                }
            }
            out.at(r, c) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
        }
    }
    return out;
}

constexpr Stencil kSobel{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
constexpr Stencil kPrewitt{{{-1, 0, 1}, {-1, 0, 1}, {-1, 0, 1}}};
constexpr Stencil kScharr{{{-3, 0, 3}, {-10, 0, 10}, {-3, 0, 3}}};

} // namespace

FeatureMapSet spectral_maps(const Grid& r, const Grid& g, const Grid& b) {
    if (!(r.georef() == g.georef()) || !(r.georef() == b.georef())) {
        throw FormatError("spectral_maps: bands must share one grid geometry");
    }
    auto ratio = [](const Grid& num, const Grid& den) {
        Grid out(num.georef(), raster::kNoData);
        for (std::size_t i = 0; i < num.size(); ++i) {
            const double d = den[i];
            if (std::isnan(d) || std::isnan(num[i]) || std::fabs(d) < 1e-6) continue;
            out[i] = static_cast<float>(static_cast<double>(num[i]) / d);
        }
        return out;
    };
    return {{"R_band", r}, {"G_band", g}, {"B_band", b},
            {"rgb_ratio_rg", ratio(r, g)}, {"rgb_ratio_gb", ratio(g, b)}, {"rgb_ratio_rb", ratio(r, b)}};
}

int quantize(double value, int levels) {
    const double v = std::clamp(value, 0.0, 255.0);
    return std::min(levels - 1, static_cast<int>(v * levels / 256.0));
}

GlcmFeatures glcm_at(const Grid& band, std::size_t row, std::size_t col, int window, int levels) {
    if (window < 3 || window % 2 == 0) throw Error("glcm: window must be odd and >= 3");
    if (levels < 2) throw Error("glcm: levels must be >= 2");
    const int half = window / 2;
    // Quantized window, -1 marks NaN.
    std::vector<int> q(static_cast<std::size_t>(window * window));
    for (int dr = -half; dr <= half; ++dr) {
        const std::size_t rr = reflect_index(static_cast<std::ptrdiff_t>(row) + dr, band.height());
        for (int dc = -half; dc <= half; ++dc) {
            const std::size_t cc = reflect_index(static_cast<std::ptrdiff_t>(col) + dc, band.width());
            const float v = band.at(rr, cc);
            q[static_cast<std::size_t>((dr + half) * window + dc + half)] = std::isnan(v) ? -1 : quantize(v, levels);
        }
    }
    // Sparse symmetric co-occurrence counts.
    struct Entry {
        int i, j;
        double count;
    };
    std::vector<Entry> entries;
    double total = 0.0;
    auto add = [&](int i, int j) {
        for (Entry& e : entries) {
            if (e.i == i && e.j == j) {
                e.count += 1.0;
                return;
            }
        }
        entries.push_back({i, j, 1.0});
    };
    constexpr int kOffsets[4][2] = {{0, 1}, {-1, 1}, {-1, 0}, {-1, -1}};
    for (int r = 0; r < window; ++r) {
        for (int c = 0; c < window; ++c) {
            const int a = q[static_cast<std::size_t>(r * window + c)];
            if (a < 0) continue;
            for (const auto& off : kOffsets) {
                const int r2 = r + off[0], c2 = c + off[1];
                if (r2 < 0 || c2 < 0 || r2 >= window || c2 >= window) continue;
                const int b = q[static_cast<std::size_t>(r2 * window + c2)];
                if (b < 0) continue;
                add(a, b);
                add(b, a);
                total += 2.0;
            }
        }
    }
    GlcmFeatures f;
    if (total == 0.0) {
        const double nan = std::nan("");
        return {nan, nan, nan, nan, nan, nan, nan, nan};
    }
    double mu_i = 0.0, mu_j = 0.0;
    for (const Entry& e : entries) {
        const double p = e.count / total;
        mu_i += e.i * p;
        mu_j += e.j * p;
    }
    double var_i = 0.0, var_j = 0.0, sum_ij = 0.0;
    for (const Entry& e : entries) {
        const double p = e.count / total;
        var_i += (e.i - mu_i) * (e.i - mu_i) * p;
        var_j += (e.j - mu_j) * (e.j - mu_j) * p;
        sum_ij += static_cast<double>(e.i) * e.j * p;
    }
    double cov = 0.0;
    for (const Entry& e : entries) {
        const double p = e.count / total;
        const double d = e.i - e.j;
        const double s = e.i + e.j - mu_i - mu_j;
        f.energy += p * p;
        f.entropy -= p * std::log(p);
        cov += (e.i - mu_i) * (e.j - mu_j) * p;
        f.idm += p / (1.0 + d * d);
        f.inertia += d * d * p;
        f.cluster_shade += s * s * s * p;
        f.cluster_prominence += s * s * s * s * p;
    }
    const double sd = std::sqrt(var_i) * std::sqrt(var_j);
    f.correlation = sd > 0.0 ? cov / sd : 0.0;
    // Marginal statistics of the row distribution.
    f.haralick_correlation = var_i > 0.0 && sd > 0.0 ? (sum_ij - mu_i * mu_i) / var_i : 0.0;
    return f;
}

FeatureMapSet glcm_maps(const Grid& band, std::string_view band_name, int window, int levels) {
    std::array<Grid, 8> maps;
    for (Grid& g : maps) g = Grid(band.georef());
    for (std::size_t r = 0; r < band.height(); ++r) {
        for (std::size_t c = 0; c < band.width(); ++c) {
            const GlcmFeatures f = glcm_at(band, r, c, window, levels);
            const double vals[8] = {f.energy, f.entropy, f.correlation, f.idm, f.inertia,
                                    f.cluster_shade, f.cluster_prominence, f.haralick_correlation};
            for (std::size_t k = 0; k < 8; ++k) maps[k].at(r, c) = static_cast<float>(vals[k]);
        }
    }
    FeatureMapSet out;
    const std::string suffix = "_q" + std::to_string(levels) + (window == 3 ? "" : "_w" + std::to_string(window));
    for (std::size_t k = 0; k < 8; ++k) {
        out.push_back({std::string(band_name) + "_glcm_" + std::string(kGlcmNames[k]) + suffix, std::move(maps[k])});
    }
    return out;
}

std::vector<double> gabor_kernel(double theta, double sigma, double psi, double gamma) {
    const auto R = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    const double lambda = 4.0 * sigma;
    const std::size_t kw = static_cast<std::size_t>(2 * R + 1);
    std::vector<double> k(kw * kw);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::ptrdiff_t dy = -R; dy <= R; ++dy) {
        for (std::ptrdiff_t dx = -R; dx <= R; ++dx) {
            const double x = static_cast<double>(dx), y = static_cast<double>(dy);
            const double xp = x * ct + y * st;
            const double yp = -x * st + y * ct;
            k[static_cast<std::size_t>(dy + R) * kw + static_cast<std::size_t>(dx + R)] =
                std::exp(-(xp * xp + gamma * gamma * yp * yp) / (2.0 * sigma * sigma)) * std::cos(2.0 * kPi * xp / lambda + psi);
        }
    }
    return k;
}

std::string gabor_name(std::string_view band_name, double theta, double sigma, double psi, double gamma) {
    return std::string(band_name) + "_gabor_t" + fmt2(theta) + "_s" + fmt_g(sigma) + "_p" + fmt2(psi) + "_g" + fmt2(gamma);
}

FeatureMapSet gabor_maps(const Grid& band, std::string_view band_name, const GaborParams& params) {
    if (params.thetas.empty() || params.sigmas.empty() || params.psis.empty() || params.gammas.empty()) {
        throw Error("gabor_maps: every parameter set must be nonempty");
    }
    const std::size_t w = band.width(), h = band.height();
    double max_sigma = 0.0;
    for (double s : params.sigmas) max_sigma = std::max(max_sigma, s);
    const Padded padded(band, static_cast<std::size_t>(std::ceil(3.0 * max_sigma)));

    FeatureMapSet out;
    for (double theta : params.thetas) {
        for (double sigma : params.sigmas) {
            const auto R = static_cast<std::size_t>(std::ceil(3.0 * sigma));
            const double omega = 2.0 * kPi / (4.0 * sigma);
            for (double gamma : params.gammas) {
                // cos(w x' + psi) = cos(psi) cos(w x') - sin(psi) sin(w x'):
                // two base responses serve every phase.
                std::vector<double> resp_cos, resp_sin;
                if (theta == 0.0) {
                    const auto Ri = static_cast<std::ptrdiff_t>(R);
                    std::vector<double> hc, hs, vy;
                    for (std::ptrdiff_t d = -Ri; d <= Ri; ++d) {
                        const double x = static_cast<double>(d);
                        const double env = std::exp(-x * x / (2.0 * sigma * sigma));
                        hc.push_back(env * std::cos(omega * x));
                        hs.push_back(env * std::sin(omega * x));
                        vy.push_back(std::exp(-gamma * gamma * x * x / (2.0 * sigma * sigma)));
                    }
                    resp_cos = convolve_separable(padded, w, h, hc, vy, R);
                    resp_sin = convolve_separable(padded, w, h, hs, vy, R);
                } else {
                    const std::vector<double> kc = gabor_kernel(theta, sigma, 0.0, gamma);
                    const std::vector<double> ks = gabor_kernel(theta, sigma, -kPi / 2.0, gamma); // cos(u - pi/2) = sin(u)
                    resp_cos = convolve2d(padded, w, h, kc, R);
                    resp_sin = convolve2d(padded, w, h, ks, R);
                }
                for (double psi : params.psis) {
                    const double cp = std::cos(psi), sp = std::sin(psi);
                    Grid g(band.georef());
                    for (std::size_t i = 0; i < w * h; ++i) g[i] = static_cast<float>(std::fabs(cp * resp_cos[i] - sp * resp_sin[i]));
                    out.push_back({gabor_name(band_name, theta, sigma, psi, gamma), std::move(g)});
                }
            }
        }
    }
    return out;
}

Grid canny(const Grid& band, const CannyParams& params) {
    const Grid smooth = segment::gaussian_blur(band, params.presmooth_sigma);
    const std::size_t w = band.width(), h = band.height();
    const Padded p(smooth, 1);
    std::vector<double> mag(w * h), gxs(w * h), gys(w * h);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double gx = 0.0, gy = 0.0;
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    const double v = p.at(r, c, i - 1, j - 1);
                    gx += kSobel[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * v;
                    gy += kSobel[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] * v;
                }
            }
            gxs[r * w + c] = gx;
            gys[r * w + c] = gy;
            mag[r * w + c] = std::sqrt(gx * gx + gy * gy);
        }
    }
    auto mag_at = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
        if (r < 0 || c < 0 || r >= static_cast<std::ptrdiff_t>(h) || c >= static_cast<std::ptrdiff_t>(w)) return 0.0;
        return mag[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
    };
    // Non-maximum suppression along the quantized gradient direction. The
    // strict/non-strict pair keeps exactly one cell of an equal-magnitude ridge.
    std::vector<double> thin(w * h, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double m = mag[r * w + c];
            if (!(m > 0.0)) continue;
            double angle = std::atan2(gys[r * w + c], gxs[r * w + c]) * 180.0 / kPi;
            if (angle < 0.0) angle += 180.0;
            std::ptrdiff_t dr, dc;
            if (angle < 22.5 || angle >= 157.5) {
                dr = 0; dc = 1;
            } else if (angle < 67.5) {
                dr = 1; dc = 1;
            } else if (angle < 112.5) {
                dr = 1; dc = 0;
            } else {
                dr = 1; dc = -1;
            }
            const auto ir = static_cast<std::ptrdiff_t>(r), ic = static_cast<std::ptrdiff_t>(c);
            if (m > mag_at(ir - dr, ic - dc) && m >= mag_at(ir + dr, ic + dc)) thin[r * w + c] = m;
        }
    }
    // Hysteresis: strong cells seed an 8-connected walk through weak cells.
    Grid out(band.georef(), 0.0f);
    std::queue<std::size_t> queue;
    for (std::size_t i = 0; i < w * h; ++i) {
        if (thin[i] >= params.high) {
            out[i] = 1.0f;
            queue.push(i);
        }
    }
    while (!queue.empty()) {
        const std::size_t i = queue.front();
        queue.pop();
        const auto r = static_cast<std::ptrdiff_t>(i / w), c = static_cast<std::ptrdiff_t>(i % w);
        for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
            for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
                const std::ptrdiff_t nr = r + dr, nc = c + dc;
                if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(h) || nc >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t j = static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc);
                if (out[j] == 0.0f && thin[j] >= params.low) {
                    out[j] = 1.0f;
                    queue.push(j);
                }
            }
        }
    }
    return out;
}

FeatureMapSet edge_maps(const Grid& band, std::string_view band_name) {
    const Padded p(band, 1);
    const std::string prefix = std::string(band_name) + "_edge_";
    FeatureMapSet out;
    out.push_back({prefix + "sobel", gradient_magnitude(p, band.georef(), kSobel)});
    out.push_back({prefix + "prewitt", gradient_magnitude(p, band.georef(), kPrewitt)});
    out.push_back({prefix + "scharr", gradient_magnitude(p, band.georef(), kScharr)});
    Grid roberts(band.georef());
    for (std::size_t r = 0; r < band.height(); ++r) {
        for (std::size_t c = 0; c < band.width(); ++c) {
            const double a = p.at(r, c, 0, 0), b = p.at(r, c, 0, 1), d = p.at(r, c, 1, 0), e = p.at(r, c, 1, 1);
            const double gx = a - e, gy = b - d;
            roberts.at(r, c) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
        }
    }
    out.push_back({prefix + "roberts", std::move(roberts)});
    out.push_back({prefix + "canny", canny(band)});
    return out;
}

Grid median3(const Grid& band) {
    const Padded p(band, 1);
    Grid out(band.georef(), raster::kNoData);
    std::array<double, 9> buf{};
    for (std::size_t r = 0; r < band.height(); ++r) {
        for (std::size_t c = 0; c < band.width(); ++c) {
            std::size_t n = 0;
            for (int i = -1; i <= 1; ++i) {
                for (int j = -1; j <= 1; ++j) {
                    const double v = p.at(r, c, i, j);
                    if (!std::isnan(v)) buf[n++] = v;
                }
            }
            if (n == 0) continue;
            const auto mid = buf.begin() + static_cast<std::ptrdiff_t>((n - 1) / 2);
            std::nth_element(buf.begin(), mid, buf.begin() + static_cast<std::ptrdiff_t>(n));
            out.at(r, c) = static_cast<float>(*mid);
        }
    }
    return out;
}

FeatureMapSet smooth_maps(const Grid& band, std::string_view band_name) {
    const std::string prefix = std::string(band_name) + "_smooth_";
    return {{prefix + "gauss_s3", segment::gaussian_blur(band, 3.0)},
            {prefix + "gauss_s7", segment::gaussian_blur(band, 7.0)},
            {prefix + "median_k3", median3(band)}};
}

std::vector<ZonalStat> zonal_stats(const Grid& map, const Grid& labels, std::size_t segment_count) {
    if (!(map.georef() == labels.georef())) throw FormatError("zonal_stats: map and labels must share one grid geometry");
    std::vector<double> sum(segment_count, 0.0);
    std::vector<std::size_t> count(segment_count, 0);
    auto label_of = [&](std::size_t i) -> std::size_t {
        const float l = labels[i];
        if (std::isnan(l) || l < 1.0f) return 0;
        const auto k = static_cast<std::size_t>(l);
        return k <= segment_count ? k : 0;
    };
    for (std::size_t i = 0; i < map.size(); ++i) {
        const std::size_t k = label_of(i);
        if (k == 0 || std::isnan(map[i])) continue;
        sum[k - 1] += map[i];
        ++count[k - 1];
    }
    std::vector<ZonalStat> out(segment_count);
    for (std::size_t k = 0; k < segment_count; ++k) {
        out[k].count = count[k];
        out[k].mean = count[k] ? sum[k] / static_cast<double>(count[k]) : std::nan("");
    }
    std::vector<double> ss(segment_count, 0.0);
    for (std::size_t i = 0; i < map.size(); ++i) {
        const std::size_t k = label_of(i);
        if (k == 0 || std::isnan(map[i])) continue;
        const double d = map[i] - out[k - 1].mean;
        ss[k - 1] += d * d;
    }
    for (std::size_t k = 0; k < segment_count; ++k) {
        out[k].std = count[k] ? std::sqrt(ss[k] / static_cast<double>(count[k])) : std::nan("");
    }
    return out;
}

std::string family_name(Family f) {
    switch (f) {
    case Family::Spectral: return "spectral";
    case Family::Glcm: return "glcm";
    case Family::Gabor: return "gabor";
    case Family::Edge: return "edge";
    case Family::Smooth: return "smooth";
    }
    return "?";
}

Family parse_family(const std::string& name) {
    for (Family f : {Family::Spectral, Family::Glcm, Family::Gabor, Family::Edge, Family::Smooth}) {
        if (family_name(f) == name) return f;
    }
    throw ConfigError("unknown feature family: " + name);
}

FeatureConfig feature_config_from_json(const nlohmann::json& j) {
    FeatureConfig cfg;
    try {
        if (j.contains("families")) {
            cfg.families.clear();
            for (const auto& f : j.at("families")) cfg.families.insert(parse_family(f.get<std::string>()));
        }
        cfg.glcm_window = j.value("glcm_window", cfg.glcm_window);
        cfg.glcm_levels = j.value("glcm_levels", cfg.glcm_levels);
        if (j.contains("gabor")) {
            const auto& g = j.at("gabor");
            cfg.gabor.thetas = g.value("thetas", cfg.gabor.thetas);
            cfg.gabor.sigmas = g.value("sigmas", cfg.gabor.sigmas);
            cfg.gabor.psis = g.value("psis", cfg.gabor.psis);
            cfg.gabor.gammas = g.value("gammas", cfg.gabor.gammas);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid feature config: ") + e.what());
    }
    if (cfg.glcm_window < 3 || cfg.glcm_window % 2 == 0) throw ConfigError("features.glcm_window must be odd and >= 3");
    if (cfg.glcm_levels < 2) throw ConfigError("features.glcm_levels must be >= 2");
    return cfg;
}

nlohmann::json feature_config_to_json(const FeatureConfig& cfg) {
    std::vector<std::string> fams;
    for (Family f : cfg.families) fams.push_back(family_name(f));
    return {{"families", fams},
            {"glcm_window", cfg.glcm_window},
            {"glcm_levels", cfg.glcm_levels},
            {"gabor",
             {{"thetas", cfg.gabor.thetas}, {"sigmas", cfg.gabor.sigmas}, {"psis", cfg.gabor.psis}, {"gammas", cfg.gabor.gammas}}}};
}

FeatureTable build_feature_table(const raster::Scene& scene, const segment::SegmentMap& seg, const FeatureConfig& cfg) {
    scene.validate();
    const Grid labels = raster::resample_nearest(seg.labels, scene.rgb_georef());
    const std::size_t K = seg.segment_count();

    struct Task {
        Family family;
        std::size_t band; // unused for spectral
    };
    std::vector<Task> tasks;
    for (Family f : cfg.families) {
        if (f == Family::Spectral) {
            tasks.push_back({f, 0});
        } else {
            for (std::size_t b = 0; b < 3; ++b) tasks.push_back({f, b});
        }
    }
    // Each task reduces its maps to (name, stats) right away.
    using Reduced = std::vector<std::pair<std::string, std::vector<ZonalStat>>>;
    std::vector<Reduced> results(tasks.size());
    parallel_for(tasks.size(), cfg.jobs, [&](std::size_t t) {
        const Task& task = tasks[t];
        const Grid& band = scene.band(task.band);
        const char* bname = raster::kBandNames[task.band];
        FeatureMapSet maps;
        switch (task.family) {
        case Family::Spectral: maps = spectral_maps(scene.r, scene.g, scene.b); break;
        case Family::Glcm: maps = glcm_maps(band, bname, cfg.glcm_window, cfg.glcm_levels); break;
        case Family::Gabor: maps = gabor_maps(band, bname, cfg.gabor); break;
        case Family::Edge: maps = edge_maps(band, bname); break;
        case Family::Smooth: maps = smooth_maps(band, bname); break;
        }
        for (const FeatureMap& m : maps) results[t].emplace_back(m.name, zonal_stats(m.grid, labels, K));
    });

    std::map<std::string, const std::vector<ZonalStat>*> by_column;
    for (const Reduced& red : results) {
        for (const auto& [name, stats] : red) {
            if (!by_column.emplace(name + "_mean", &stats).second) throw Error("duplicate feature map name: " + name);
            by_column.emplace(name + "_std", &stats);
        }
    }
    FeatureTable table;
    for (const auto& [col, _] : by_column) table.columns.push_back(col);
    for (std::size_t k = 0; k < K; ++k) {
        table.keys.push_back({scene.scene_id, k + 1});
        std::vector<double> row;
        row.reserve(table.columns.size());
        for (const auto& [col, stats] : by_column) {
            const bool is_mean = col.size() >= 5 && col.compare(col.size() - 5, 5, "_mean") == 0;
            row.push_back(is_mean ? (*stats)[k].mean : (*stats)[k].std);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

FeatureTable concat(const std::vector<FeatureTable>& tables) {
    FeatureTable out;
    for (const FeatureTable& t : tables) {
        if (out.columns.empty() && out.rows.empty()) {
            out.columns = t.columns;
        } else if (t.columns != out.columns) {
            throw SchemaError("concat: feature tables have different columns");
        }
        out.keys.insert(out.keys.end(), t.keys.begin(), t.keys.end());
        out.rows.insert(out.rows.end(), t.rows.begin(), t.rows.end());
    }
    return out;
}

JoinResult join_labels(const FeatureTable& table, const std::vector<TruthPoint>& points, const segment::SegmentMap& seg) {
    JoinResult res;
    const raster::GeoRef& geo = seg.labels.georef();
    struct Assigned {
        synth::Category label;
        std::string pile_id;
    };
    std::map<std::size_t, Assigned> assigned;
    for (const TruthPoint& p : points) {
        const auto cell = raster::cell_at(geo, p.x, p.y);
        if (!cell) {
            res.warnings.push_back("point " + p.pile_id + " (" + text::fmt_double(p.x) + ", " + text::fmt_double(p.y) +
                                   ") lies outside the grid; unmatched");
            continue;
        }
        const float l = seg.labels.at(cell->row, cell->col);
        if (std::isnan(l) || l < 1.0f) {
            res.warnings.push_back("point " + p.pile_id + " (" + text::fmt_double(p.x) + ", " + text::fmt_double(p.y) +
                                   ") falls on background; unmatched");
            continue;
        }
        const auto k = static_cast<std::size_t>(l);
        auto [it, inserted] = assigned.emplace(k, Assigned{p.label, p.pile_id});
        if (!inserted) {
            if (it->second.label != p.label) {
                throw ConflictError("segment " + std::to_string(k) + " receives conflicting labels from points " +
                                    it->second.pile_id + " (" + synth::category_name(it->second.label) + ") and " +
                                    p.pile_id + " (" + synth::category_name(p.label) + ")");
            }
            res.warnings.push_back("segment " + std::to_string(k) + " holds points " + it->second.pile_id + " and " +
                                   p.pile_id + "; keeping " + it->second.pile_id);
        }
    }
    res.labeled.table.columns = table.columns;
    for (std::size_t i = 0; i < table.row_count(); ++i) {
        const auto it = assigned.find(table.keys[i].segment_id);
        if (it == assigned.end()) continue;
        res.labeled.table.keys.push_back(table.keys[i]);
        res.labeled.table.rows.push_back(table.rows[i]);
        res.labeled.labels.push_back(it->second.label);
        res.labeled.pile_ids.push_back(it->second.pile_id);
    }
    return res;
}

LabeledTable concat(const std::vector<LabeledTable>& tables) {
    LabeledTable out;
    std::vector<FeatureTable> ft;
    for (const LabeledTable& t : tables) {
        ft.push_back(t.table);
        out.labels.insert(out.labels.end(), t.labels.begin(), t.labels.end());
        out.pile_ids.insert(out.pile_ids.end(), t.pile_ids.begin(), t.pile_ids.end());
    }
    out.table = concat(ft);
    return out;
}

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read file: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!text::trim(line).empty()) lines.push_back(line);
    }
    return lines;
}

double parse_cell(const std::string& s, const fs::path& path, std::size_t line_no) {
    double v;
    if (!text::parse_double(text::trim(s), v)) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" + s + "'");
    }
    return v;
}

void write_rows(std::ostream& out, const FeatureTable& t, const LabeledTable* labeled) {
    out << "scene_id,segment_id";
    if (labeled) out << ",label,pile_id";
    for (const auto& c : t.columns) out << ',' << c;
    out << '\n';
    for (std::size_t i = 0; i < t.row_count(); ++i) {
        out << t.keys[i].scene_id << ',' << t.keys[i].segment_id;
        if (labeled) out << ',' << synth::category_name(labeled->labels[i]) << ',' << labeled->pile_ids[i];
        for (double v : t.rows[i]) out << ',' << text::fmt_double(v);
        out << '\n';
    }
}

FeatureTable parse_rows(const fs::path& path, bool labeled, LabeledTable* lt) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw FormatError(path.string() + ": empty table");
    const auto header = text::split(lines[0], ',');
    const std::size_t lead = labeled ? 4 : 2;
    if (header.size() < lead || header[0] != "scene_id" || header[1] != "segment_id" ||
        (labeled && (header[2] != "label" || header[3] != "pile_id"))) {
        throw FormatError(path.string() + ": unexpected header");
    }
    FeatureTable t;
    t.columns.assign(header.begin() + static_cast<std::ptrdiff_t>(lead), header.end());
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        const auto cells = text::split(lines[ln], ',');
        if (cells.size() != header.size()) {
            throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": expected " + std::to_string(header.size()) +
                              " fields, got " + std::to_string(cells.size()));
        }
        t.keys.push_back({cells[0], static_cast<std::size_t>(parse_cell(cells[1], path, ln + 1))});
        if (labeled) {
            lt->labels.push_back(synth::parse_category(cells[2]));
            lt->pile_ids.push_back(cells[3]);
        }
        std::vector<double> row;
        for (std::size_t c = lead; c < cells.size(); ++c) row.push_back(parse_cell(cells[c], path, ln + 1));
        t.rows.push_back(std::move(row));
    }
    return t;
}

} // namespace

std::vector<TruthPoint> read_truth_csv(const fs::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw FormatError(path.string() + ": empty truth file");
    const auto header = text::split(lines[0], ',');
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < header.size(); ++i) idx[text::trim(header[i])] = i;
    for (const char* col : {"x", "y", "label", "pile_id"}) {
        if (!idx.count(col)) throw FormatError(path.string() + ": missing column '" + col + "'");
    }
    std::vector<TruthPoint> pts;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        const auto cells = text::split(lines[ln], ',');
        if (cells.size() != header.size()) throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": wrong field count");
        TruthPoint p;
        p.x = parse_cell(cells[idx["x"]], path, ln + 1);
        p.y = parse_cell(cells[idx["y"]], path, ln + 1);
        p.label = synth::parse_category(text::trim(cells[idx["label"]]));
        p.pile_id = text::trim(cells[idx["pile_id"]]);
        if (p.pile_id.empty()) throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": empty pile_id");
        pts.push_back(std::move(p));
    }
    return pts;
}

void write_table_csv(const FeatureTable& table, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path.string());
    write_rows(out, table, nullptr);
    if (!out) throw IoError("write failed: " + path.string());
}

FeatureTable read_table_csv(const fs::path& path) { return parse_rows(path, false, nullptr); }

void write_labeled_csv(const LabeledTable& table, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path.string());
    write_rows(out, table.table, &table);
    if (!out) throw IoError("write failed: " + path.string());
}

LabeledTable read_labeled_csv(const fs::path& path) {
    LabeledTable lt;
    lt.table = parse_rows(path, true, &lt);
    return lt;
}

} // namespace spoilcal::features
