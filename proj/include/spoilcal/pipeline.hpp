#pragma once

#include "spoilcal/calib.hpp"
#include "spoilcal/features.hpp"
#include "spoilcal/ml.hpp"
#include "spoilcal/segment.hpp"
#include "spoilcal/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spoilcal::pipeline {

// Declarative run description. Input paths are optional when a synth block
// is present: the synth command writes scenes, masks and truth under out.
struct RunConfig {
    std::optional<synth::SynthConfig> synth;
    std::vector<std::filesystem::path> scenes;
    std::vector<std::filesystem::path> masks; // one per consecutive scene pair
    std::filesystem::path truth_csv;
    std::filesystem::path out = "out";

    calib::CalibrationParams calibration;
    segment::SegmentParams segmentation;
    features::FeatureConfig features;
    std::vector<ml::Kind> classifiers{ml::Kind::Qsvm, ml::Kind::Subspace};
    ml::TrainParams classifier_params;
    ml::FoldParams cv;
    int jobs = 1;
};

// Every offending field is collected into one ConfigError. Relative paths
// resolve against base_dir.
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const RunConfig& cfg);

// Overrides a seed everywhere it is used.
void set_seed(RunConfig& cfg, std::uint64_t seed);

enum class Branch { Calibrated, Uncalibrated };
std::string branch_name(Branch b);

// Artifact locations under cfg.out.
struct Layout {
    std::filesystem::path root;

    std::filesystem::path synth_scenes() const { return root / "scenes"; }
    std::filesystem::path truth_dir() const { return root / "truth"; }
    std::filesystem::path calibrated_scenes() const { return root / "calibrated" / "scenes"; }
    std::filesystem::path calibration_dir() const { return root / "calibrated"; }
    std::filesystem::path segments() const { return root / "segments"; }
    std::filesystem::path branch(Branch b) const { return root / branch_name(b); }
    std::filesystem::path report() const { return root / "report"; }
};

// Outcome of a command: warnings turn the exit code into 2.
struct Status {
    std::vector<std::string> warnings;
    void merge(const Status& o) { warnings.insert(warnings.end(), o.warnings.begin(), o.warnings.end()); }
};

// Resolved inputs; falls back to the synth outputs under out.
std::vector<std::filesystem::path> scene_dirs(const RunConfig& cfg);
std::vector<std::filesystem::path> mask_dirs(const RunConfig& cfg);
std::filesystem::path truth_path(const RunConfig& cfg);

Status cmd_synth(const RunConfig& cfg);
Status cmd_calibrate(const RunConfig& cfg);
Status cmd_segment(const RunConfig& cfg);
Status cmd_features(const RunConfig& cfg, const std::vector<Branch>& branches);
Status cmd_evaluate(const RunConfig& cfg, const std::vector<Branch>& branches);
Status cmd_train(const RunConfig& cfg, const std::vector<Branch>& branches);
Status cmd_classify(const RunConfig& cfg, const std::vector<Branch>& branches);
Status cmd_diff(const RunConfig& cfg);
Status cmd_report(const RunConfig& cfg);

// synth (when configured), segment, calibrate, then features, evaluate,
// train and classify on both branches, diff and report.
Status run_pipeline(const RunConfig& cfg);

// Segment map stored by cmd_segment: labels container plus seeds.json.
void save_segment_map(const segment::SegmentMap& seg, const std::filesystem::path& dir);
segment::SegmentMap load_segment_map(const std::filesystem::path& dir);

} // namespace spoilcal::pipeline
