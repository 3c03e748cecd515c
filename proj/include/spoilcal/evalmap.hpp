#pragma once

#include "spoilcal/features.hpp"
#include "spoilcal/metrics.hpp"
#include "spoilcal/ml.hpp"
#include "spoilcal/raster.hpp"
#include "spoilcal/segment.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace spoilcal::evalmap {

struct ClassifiedMap {
    raster::Grid labels; // 0 background / unclassified, 1 Cat1, 2 Cat2
    std::vector<std::string> warnings;
};

// Paints every segment with its predicted category code. Segments whose
// feature row is all NaN, or that have no row, stay 0.
ClassifiedMap classify_scene(const ml::TrainedModel& model, const features::FeatureTable& table,
                             const segment::SegmentMap& seg);

struct ChangeReport {
    std::size_t agree_cells = 0;
    std::size_t differ_cells = 0;
    double agree_fraction = 0.0;
    double differ_area_m2 = 0.0;
    double total_area_m2 = 0.0;
};

// Cells that are 0 or NaN in either map are not evaluated.
ChangeReport diff_label_maps(const raster::Grid& a, const raster::Grid& b);

struct NamedChange {
    std::string scene_id;
    ChangeReport change;
};

nlohmann::json report_json(const std::vector<ml::CVReport>& calibrated, const std::vector<ml::CVReport>& uncalibrated,
                           const std::vector<NamedChange>& changes);
std::string report_text(const std::vector<ml::CVReport>& calibrated, const std::vector<ml::CVReport>& uncalibrated,
                        const std::vector<NamedChange>& changes);

// report.json and report.txt in dir. Reports are paired by model name.
void emit_report(const std::vector<ml::CVReport>& calibrated, const std::vector<ml::CVReport>& uncalibrated,
                 const std::vector<NamedChange>& changes, const std::filesystem::path& dir);

// Fixed palette: background dark gray, Cat1 orange, Cat2 blue, NaN transparent.
void render_thematic_png(const raster::Grid& labels, const std::filesystem::path& path);

} // namespace spoilcal::evalmap
