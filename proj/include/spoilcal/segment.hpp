#pragma once

#include "spoilcal/raster.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

namespace spoilcal::segment {

// Mirror index without repeating the edge cell (… 2 1 | 0 1 2 … n-1 | n-2 …).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

// Normalized 1-D Gaussian taps, radius ceil(3 * sigma).
std::vector<double> gaussian_kernel(double sigma);

// Separable Gaussian, reflect padding. NaN cells contribute no weight and the
// remaining weights are renormalized; NaN inputs stay NaN.
raster::Grid gaussian_blur(const raster::Grid& grid, double sigma);

// 256 bins over [min, max] of the valid values. Returns the upper edge of
// the last background bin, so "value > threshold" is the foreground rule.
double otsu_threshold(const raster::Grid& grid);

struct Seed {
    raster::CellIndex cell;
    double elevation = 0.0;
    bool operator==(const Seed&) const = default;
};

// Cells strictly above every other valid cell within Chebyshev radius
// window_radius. A connected equal-valued plateau counts as one maximum,
// reported at its smallest (row, col), when every cell within the window of
// the plateau is strictly lower. Seeds below min_height are dropped. Sorted
// by (row, col).
std::vector<Seed> detect_local_maxima(const raster::Grid& grid, std::size_t window_radius, double min_height);

struct SegmentMap {
    raster::Grid labels; // 0 background, 1..K segment ids
    std::vector<Seed> seeds; // seeds[k-1] is the seed of segment k
    std::vector<std::size_t> cell_counts; // cell_counts[k-1]

    std::size_t segment_count() const { return seeds.size(); }
};

struct SegmentParams {
    double sigma = 12.0;
    std::size_t window_radius = 8;
    std::optional<double> min_height; // default: the Otsu threshold
};

// Nearest-seed labeling of foreground cells (Euclidean distance between cell
// centers, ties to the smaller segment id). Seeds are numbered in order.
raster::Grid voronoi_labels(const raster::Grid& foreground, const std::vector<Seed>& seeds);

SegmentMap voronoi_segment(const raster::Grid& dsm, const SegmentParams& params = {});

void export_segments_geojson(const SegmentMap& seg, const std::filesystem::path& path);

} // namespace spoilcal::segment
