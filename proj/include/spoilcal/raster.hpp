#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spoilcal::raster {

inline constexpr float kNoData = std::numeric_limits<float>::quiet_NaN();

// Grid geometry. (origin_x, origin_y) is the world position of the top-left
// outer corner of cell (0,0); rows increase southward, so row r spans
// y in [origin_y - (r+1)*cell_size, origin_y - r*cell_size].
struct GeoRef {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double cell_size = 1.0;
    std::size_t width = 1;
    std::size_t height = 1;

    std::size_t cell_count() const { return width * height; }
    double min_x() const { return origin_x; }
    double max_x() const { return origin_x + static_cast<double>(width) * cell_size; }
    double min_y() const { return origin_y - static_cast<double>(height) * cell_size; }
    double max_y() const { return origin_y; }
    double center_x(std::size_t col) const { return origin_x + (static_cast<double>(col) + 0.5) * cell_size; }
    double center_y(std::size_t row) const { return origin_y - (static_cast<double>(row) + 0.5) * cell_size; }

    // Throws FormatError when the geometry is unusable.
    void validate() const;

    bool operator==(const GeoRef&) const = default;
};

struct CellIndex {
    std::size_t row = 0;
    std::size_t col = 0;
    bool operator==(const CellIndex&) const = default;
    auto operator<=>(const CellIndex&) const = default;
};

struct WorldRect {
    double min_x = 0.0;
    double max_x = 0.0;
    double min_y = 0.0;
    double max_y = 0.0;
    bool operator==(const WorldRect&) const = default;
};

class Grid {
public:
    Grid() = default;
    explicit Grid(const GeoRef& georef, float fill = 0.0f);
    Grid(const GeoRef& georef, std::vector<float> values);

    const GeoRef& georef() const { return georef_; }
    std::size_t width() const { return georef_.width; }
    std::size_t height() const { return georef_.height; }
    std::size_t size() const { return values_.size(); }

    float at(std::size_t row, std::size_t col) const { return values_[row * georef_.width + col]; }
    float& at(std::size_t row, std::size_t col) { return values_[row * georef_.width + col]; }
    float operator[](std::size_t i) const { return values_[i]; }
    float& operator[](std::size_t i) { return values_[i]; }

    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }

    // Bitwise comparison; NaN payloads compare equal to themselves.
    bool bit_equal(const Grid& other) const;

private:
    GeoRef georef_;
    std::vector<float> values_;
};

struct Scene {
    std::string scene_id;
    std::string timestamp;
    Grid r;
    Grid g;
    Grid b;
    Grid dsm;

    const GeoRef& rgb_georef() const { return r.georef(); }
    const Grid& band(std::size_t i) const { return i == 0 ? r : (i == 1 ? g : b); }
    Grid& band(std::size_t i) { return i == 0 ? r : (i == 1 ? g : b); }

    void validate() const;
    bool bit_equal(const Scene& other) const;
};

using SceneSeries = std::vector<Scene>;

inline constexpr const char* kBandNames[3] = {"R", "G", "B"};

// Checks ordering (strictly increasing timestamps) and per-scene invariants.
void validate_series(const SceneSeries& series);

Scene load_scene(const std::filesystem::path& dir);
void save_scene(const Scene& scene, const std::filesystem::path& dir);

// Single-band container with the same encoding as scene payloads:
// meta.json {name, grid:{...}, dtype, nodata} plus grid.bin.
Grid load_grid(const std::filesystem::path& dir);
void save_grid(const Grid& grid, const std::string& name, const std::filesystem::path& dir);

WorldRect extent(const GeoRef& g);
std::optional<WorldRect> overlap_window(const GeoRef& a, const GeoRef& b);

// Cell containing world point (x, y), if any. Points on the east/south outer
// edge belong to no cell.
std::optional<CellIndex> cell_at(const GeoRef& g, double x, double y);

Grid resample_nearest(const Grid& src, const GeoRef& target);

// n distinct cells with mask != 0 and mask not NaN, uniform without
// replacement, in sampling order.
std::vector<CellIndex> sample_mask_points(const Grid& mask, std::size_t n, std::uint64_t seed);

struct ValueRange {
    double min = 0.0;
    double max = 255.0;
};

// Grayscale render: linear clamp-scale into [0,255]; NaN -> transparent.
void render_png(const Grid& grid, const std::filesystem::path& path, ValueRange range);
// Color render of three bands sharing one range.
void render_png(const Grid& r, const Grid& g, const Grid& b, const std::filesystem::path& path,
                ValueRange range);

std::uint8_t scale_to_byte(double value, ValueRange range);

} // namespace spoilcal::raster
