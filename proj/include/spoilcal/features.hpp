#pragma once

#include "spoilcal/raster.hpp"
#include "spoilcal/segment.hpp"
#include "spoilcal/synth.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace spoilcal::features {

struct FeatureMap {
    std::string name;
    raster::Grid grid;
};

using FeatureMapSet = std::vector<FeatureMap>;

// R, G, B plus the ratios R/G, G/B, R/B (denominator below 1e-6 -> NaN).
FeatureMapSet spectral_maps(const raster::Grid& r, const raster::Grid& g, const raster::Grid& b);

struct GlcmFeatures {
    double energy = 0.0;
    double entropy = 0.0;
    double correlation = 0.0;
    double idm = 0.0;
    double inertia = 0.0;
    double cluster_shade = 0.0;
    double cluster_prominence = 0.0;
    double haralick_correlation = 0.0;
};

inline constexpr std::array<std::string_view, 8> kGlcmNames = {
    "energy", "entropy", "correlation", "idm", "inertia", "cluster_shade", "cluster_prominence", "haralick_correlation"};

// Gray level of a DN after clamping to [0,255] and splitting into `levels` bins.
int quantize(double value, int levels);

// Symmetric co-occurrence over the 0, 45, 90 and 135 degree unit offsets
// inside a window centered on (row, col), reflect padded. All NaN-free pairs
// count; a window without any pair yields NaN features.
GlcmFeatures glcm_at(const raster::Grid& band, std::size_t row, std::size_t col, int window = 3, int levels = 16);
FeatureMapSet glcm_maps(const raster::Grid& band, std::string_view band_name, int window = 3, int levels = 16);

struct GaborParams {
    std::vector<double> thetas{0.0, 0.78539816339744831};
    std::vector<double> sigmas{1.0, 3.0};
    std::vector<double> psis{0.0, 0.78539816339744831, 1.5707963267948966, 2.3561944901923448};
    std::vector<double> gammas{0.05, 0.5};
};

// Real Gabor taps, row-major over dy then dx in [-R, R], R = ceil(3 sigma),
// wavelength 4 sigma.
std::vector<double> gabor_kernel(double theta, double sigma, double psi, double gamma);
std::string gabor_name(std::string_view band_name, double theta, double sigma, double psi, double gamma);
// |band * kernel| (true convolution, reflect padding) for every combination.
FeatureMapSet gabor_maps(const raster::Grid& band, std::string_view band_name, const GaborParams& params = {});

struct CannyParams {
    double low = 100.0;
    double high = 200.0;
    double presmooth_sigma = 1.4;
};

raster::Grid canny(const raster::Grid& band, const CannyParams& params = {});
// Sobel, Prewitt, Scharr, Roberts gradient magnitudes plus the Canny map.
FeatureMapSet edge_maps(const raster::Grid& band, std::string_view band_name);

// 3x3 median skipping NaN; an even valid count takes the lower middle value.
raster::Grid median3(const raster::Grid& band);
// Gaussian sigma 3 and 7 and the 3x3 median.
FeatureMapSet smooth_maps(const raster::Grid& band, std::string_view band_name);

struct ZonalStat {
    double mean = 0.0;
    double std = 0.0;
    std::size_t count = 0;
};

// Per segment 1..segment_count: NaN-skipping mean and population std.
// Segments without valid cells get (NaN, NaN).
std::vector<ZonalStat> zonal_stats(const raster::Grid& map, const raster::Grid& labels, std::size_t segment_count);

enum class Family { Spectral, Glcm, Gabor, Edge, Smooth };

std::string family_name(Family f);
Family parse_family(const std::string& name);

struct FeatureConfig {
    std::set<Family> families{Family::Spectral, Family::Glcm, Family::Gabor, Family::Edge, Family::Smooth};
    int glcm_window = 3;
    int glcm_levels = 16;
    GaborParams gabor;
    int jobs = 1;
};

FeatureConfig feature_config_from_json(const nlohmann::json& j);
nlohmann::json feature_config_to_json(const FeatureConfig& cfg);

struct RowKey {
    std::string scene_id;
    std::size_t segment_id = 0;
    bool operator==(const RowKey&) const = default;
};

struct FeatureTable {
    std::vector<std::string> columns; // lexicographic
    std::vector<RowKey> keys;
    std::vector<std::vector<double>> rows;

    std::size_t row_count() const { return rows.size(); }
};

FeatureTable build_feature_table(const raster::Scene& scene, const segment::SegmentMap& seg, const FeatureConfig& cfg = {});

// Stacks tables with identical columns.
FeatureTable concat(const std::vector<FeatureTable>& tables);

struct TruthPoint {
    double x = 0.0;
    double y = 0.0;
    synth::Category label = synth::Category::Cat1;
    std::string pile_id;
};

struct LabeledTable {
    FeatureTable table;
    std::vector<synth::Category> labels;
    std::vector<std::string> pile_ids;

    std::size_t row_count() const { return table.row_count(); }
};

struct JoinResult {
    LabeledTable labeled;
    std::vector<std::string> warnings; // unmatched points
};

// Points map to the segment containing their cell in seg.labels; labeled
// rows are kept in table order, unlabeled rows dropped.
JoinResult join_labels(const FeatureTable& table, const std::vector<TruthPoint>& points, const segment::SegmentMap& seg);

LabeledTable concat(const std::vector<LabeledTable>& tables);

std::vector<TruthPoint> read_truth_csv(const std::filesystem::path& path);

void write_table_csv(const FeatureTable& table, const std::filesystem::path& path);
FeatureTable read_table_csv(const std::filesystem::path& path);
void write_labeled_csv(const LabeledTable& table, const std::filesystem::path& path);
LabeledTable read_labeled_csv(const std::filesystem::path& path);

} // namespace spoilcal::features
