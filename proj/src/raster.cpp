#include "spoilcal/raster.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/png_io.hpp"
#include "spoilcal/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace spoilcal::raster {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
    return v;
}

void append_le(std::string& out, std::span<const float> values) {
    const std::size_t base = out.size();
    out.resize(base + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(values[i]));
        std::memcpy(out.data() + base + i * 4, &bits, 4);
    }
}

std::vector<float> decode_le(const std::string& bytes, std::size_t offset, std::size_t count) {
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + offset + i * 4, 4);
        out[i] = std::bit_cast<float>(to_le(bits));
    }
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory: " + dir.string());
}

json georef_to_json(const GeoRef& g) {
    return json{{"width", g.width},
                {"height", g.height},
                {"cell_size", g.cell_size},
                {"origin_x", g.origin_x},
                {"origin_y", g.origin_y}};
}

GeoRef georef_from_json(const json& j, const fs::path& file) {
    try {
        GeoRef g;
        g.width = j.at("width").get<std::size_t>();
        g.height = j.at("height").get<std::size_t>();
        g.cell_size = j.at("cell_size").get<double>();
        g.origin_x = j.at("origin_x").get<double>();
        g.origin_y = j.at("origin_y").get<double>();
        g.validate();
        return g;
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": bad grid geometry: " + e.what());
    }
}

json parse_meta(const fs::path& file) {
    const std::string text = read_file(file);
    try {
        json meta = json::parse(text);
        if (meta.value("dtype", "") != "f32le") throw FormatError(file.string() + ": dtype must be \"f32le\"");
        if (meta.value("nodata", "") != "nan") throw FormatError(file.string() + ": nodata must be \"nan\"");
        return meta;
    } catch (const json::exception& e) {
        throw FormatError(file.string() + ": corrupt metadata: " + e.what());
    }
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

} // namespace

void GeoRef::validate() const {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw FormatError("cell_size must be positive");
    if (width < 1 || height < 1) throw FormatError("grid must be at least 1x1");
    if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) throw FormatError("origin must be finite");
}

Grid::Grid(const GeoRef& georef, float fill) : georef_(georef), values_(georef.cell_count(), fill) {
    georef_.validate();
}

Grid::Grid(const GeoRef& georef, std::vector<float> values) : georef_(georef), values_(std::move(values)) {
    georef_.validate();
    if (values_.size() != georef_.cell_count()) {
        throw FormatError("grid has " + std::to_string(values_.size()) + " values, expected " +
                          std::to_string(georef_.cell_count()));
    }
}

bool Grid::bit_equal(const Grid& other) const {
    return georef_ == other.georef_ && values_.size() == other.values_.size() &&
           std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
}

void Scene::validate() const {
    if (!(r.georef() == g.georef()) || !(r.georef() == b.georef())) {
        throw FormatError("scene " + scene_id + ": R, G, B must share one grid geometry");
    }
    if (!overlap_window(r.georef(), dsm.georef())) {
        throw FormatError("scene " + scene_id + ": DSM does not overlap the RGB extent");
    }
}

bool Scene::bit_equal(const Scene& o) const {
    return scene_id == o.scene_id && timestamp == o.timestamp && r.bit_equal(o.r) && g.bit_equal(o.g) &&
           b.bit_equal(o.b) && dsm.bit_equal(o.dsm);
}

void validate_series(const SceneSeries& series) {
    for (std::size_t i = 0; i < series.size(); ++i) {
        series[i].validate();
        // ISO-8601 dates of equal precision order lexicographically.
        if (i > 0 && !(series[i - 1].timestamp < series[i].timestamp)) {
            throw FormatError("scene timestamps must be strictly increasing: " + series[i - 1].timestamp +
                              " then " + series[i].timestamp);
        }
    }
}

Scene load_scene(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    const json meta = parse_meta(meta_path);
    Scene s;
    GeoRef rgb, dsm;
    try {
        s.scene_id = meta.at("scene_id").get<std::string>();
        s.timestamp = meta.at("timestamp").get<std::string>();
        rgb = georef_from_json(meta.at("rgb"), meta_path);
        dsm = georef_from_json(meta.at("dsm"), meta_path);
    } catch (const json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }

    const fs::path rgb_path = dir / "rgb.bin";
    const std::string rgb_bytes = read_file(rgb_path);
    const std::size_t n = rgb.cell_count();
    if (rgb_bytes.size() != 3 * n * 4) {
        throw FormatError(rgb_path.string() + ": payload has " + std::to_string(rgb_bytes.size() / 4) +
                          " values, meta declares " + std::to_string(3 * n));
    }
    s.r = Grid(rgb, decode_le(rgb_bytes, 0, n));
    s.g = Grid(rgb, decode_le(rgb_bytes, n * 4, n));
    s.b = Grid(rgb, decode_le(rgb_bytes, 2 * n * 4, n));

    const fs::path dsm_path = dir / "dsm.bin";
    const std::string dsm_bytes = read_file(dsm_path);
    if (dsm_bytes.size() != dsm.cell_count() * 4) {
        throw FormatError(dsm_path.string() + ": payload has " + std::to_string(dsm_bytes.size() / 4) +
                          " values, meta declares " + std::to_string(dsm.cell_count()));
    }
    s.dsm = Grid(dsm, decode_le(dsm_bytes, 0, dsm.cell_count()));
    return s;
}

void save_scene(const Scene& scene, const fs::path& dir) {
    scene.validate();
    ensure_dir(dir);
    json meta{{"scene_id", scene.scene_id},
              {"timestamp", scene.timestamp},
              {"rgb", georef_to_json(scene.rgb_georef())},
              {"dsm", georef_to_json(scene.dsm.georef())},
              {"dtype", "f32le"},
              {"nodata", "nan"}};
    std::string rgb;
    rgb.reserve(scene.r.size() * 12);
    append_le(rgb, scene.r.values());
    append_le(rgb, scene.g.values());
    append_le(rgb, scene.b.values());
    std::string dsm;
    append_le(dsm, scene.dsm.values());
    write_file(dir / "rgb.bin", rgb);
    write_file(dir / "dsm.bin", dsm);
    write_file(dir / "meta.json", dump_json(meta));
}

Grid load_grid(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    const json meta = parse_meta(meta_path);
    GeoRef geo;
    try {
        geo = georef_from_json(meta.at("grid"), meta_path);
    } catch (const json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    const fs::path bin = dir / "grid.bin";
    const std::string bytes = read_file(bin);
    if (bytes.size() != geo.cell_count() * 4) {
        throw FormatError(bin.string() + ": payload has " + std::to_string(bytes.size() / 4) +
                          " values, meta declares " + std::to_string(geo.cell_count()));
    }
    return Grid(geo, decode_le(bytes, 0, geo.cell_count()));
}

void save_grid(const Grid& grid, const std::string& name, const fs::path& dir) {
    ensure_dir(dir);
    json meta{{"name", name}, {"grid", georef_to_json(grid.georef())}, {"dtype", "f32le"}, {"nodata", "nan"}};
    std::string bytes;
    append_le(bytes, grid.values());
    write_file(dir / "grid.bin", bytes);
    write_file(dir / "meta.json", dump_json(meta));
}

WorldRect extent(const GeoRef& g) { return {g.min_x(), g.max_x(), g.min_y(), g.max_y()}; }

std::optional<WorldRect> overlap_window(const GeoRef& a, const GeoRef& b) {
    const WorldRect ea = extent(a);
    const WorldRect eb = extent(b);
    WorldRect w{std::max(ea.min_x, eb.min_x), std::min(ea.max_x, eb.max_x), std::max(ea.min_y, eb.min_y),
                std::min(ea.max_y, eb.max_y)};
    // Extents that only touch along an edge have no common area.
    if (!(w.min_x < w.max_x) || !(w.min_y < w.max_y)) return std::nullopt;
    return w;
}

std::optional<CellIndex> cell_at(const GeoRef& g, double x, double y) {
    const double fc = std::floor((x - g.origin_x) / g.cell_size);
    const double fr = std::floor((g.origin_y - y) / g.cell_size);
    if (!(fc >= 0.0) || !(fr >= 0.0) || fc >= static_cast<double>(g.width) || fr >= static_cast<double>(g.height)) {
        return std::nullopt;
    }
    return CellIndex{static_cast<std::size_t>(fr), static_cast<std::size_t>(fc)};
}

Grid resample_nearest(const Grid& src, const GeoRef& target) {
    if (src.georef() == target) return src;
    Grid out(target, kNoData);
    const GeoRef& sg = src.georef();
    std::vector<std::ptrdiff_t> col_map(target.width);
    for (std::size_t c = 0; c < target.width; ++c) {
        const double fc = std::floor((target.center_x(c) - sg.origin_x) / sg.cell_size);
        col_map[c] = (fc >= 0.0 && fc < static_cast<double>(sg.width)) ? static_cast<std::ptrdiff_t>(fc) : -1;
    }
    for (std::size_t r = 0; r < target.height; ++r) {
        const double fr = std::floor((sg.origin_y - target.center_y(r)) / sg.cell_size);
        if (!(fr >= 0.0 && fr < static_cast<double>(sg.height))) continue;
        const auto sr = static_cast<std::size_t>(fr);
        for (std::size_t c = 0; c < target.width; ++c) {
            if (col_map[c] >= 0) out.at(r, c) = src.at(sr, static_cast<std::size_t>(col_map[c]));
        }
    }
    return out;
}

std::vector<CellIndex> sample_mask_points(const Grid& mask, std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const float v = mask[i];
        if (!std::isnan(v) && v != 0.0f) eligible.push_back(i);
    }
    if (eligible.size() < n) {
        throw SamplingError("requested " + std::to_string(n) + " sample points but only " +
                                std::to_string(eligible.size()) + " cells are eligible",
                            eligible.size());
    }
    // Partial Fisher-Yates: the first n slots end up as a uniform draw
    // without replacement.
    Rng rng = Rng::stream(seed, {0x5A4D504C});
    std::vector<CellIndex> out;
    out.reserve(n);
    const std::size_t w = mask.width();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(eligible.size() - i));
        std::swap(eligible[i], eligible[j]);
        out.push_back({eligible[i] / w, eligible[i] % w});
    }
    return out;
}

std::uint8_t scale_to_byte(double value, ValueRange range) {
    const double t = (value - range.min) / (range.max - range.min);
    const double v = std::clamp(t, 0.0, 1.0) * 255.0;
    return static_cast<std::uint8_t>(std::lround(v));
}

void render_png(const Grid& grid, const fs::path& path, ValueRange range) {
    if (!(range.min < range.max)) throw Error("render_png: value range min must be below max");
    std::vector<std::uint8_t> rgba(grid.size() * 4, 0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const float v = grid[i];
        if (std::isnan(v)) continue;
        const std::uint8_t b = scale_to_byte(v, range);
        rgba[i * 4] = rgba[i * 4 + 1] = rgba[i * 4 + 2] = b;
        rgba[i * 4 + 3] = 255;
    }
    png::write_rgba(path, grid.width(), grid.height(), rgba);
}

void render_png(const Grid& r, const Grid& g, const Grid& b, const fs::path& path, ValueRange range) {
    if (!(range.min < range.max)) throw Error("render_png: value range min must be below max");
    if (!(r.georef() == g.georef()) || !(r.georef() == b.georef())) {
        throw FormatError("render_png: bands must share one grid geometry");
    }
    std::vector<std::uint8_t> rgba(r.size() * 4, 0);
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (std::isnan(r[i]) || std::isnan(g[i]) || std::isnan(b[i])) continue;
        rgba[i * 4] = scale_to_byte(r[i], range);
        rgba[i * 4 + 1] = scale_to_byte(g[i], range);
        rgba[i * 4 + 2] = scale_to_byte(b[i], range);
        rgba[i * 4 + 3] = 255;
    }
    png::write_rgba(path, r.width(), r.height(), rgba);
}

} // namespace spoilcal::raster
