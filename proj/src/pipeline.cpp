#include "spoilcal/pipeline.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/evalmap.hpp"
#include "spoilcal/raster.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace spoilcal::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json(const json& j, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    return p.is_absolute() || base.empty() ? p : base / p;
}

// Collects field errors so a bad config reports all of them at once.
struct FieldErrors {
    std::vector<std::string> items;

    template <typename Fn>
    void field(const std::string& name, Fn&& fn) {
        try {
            fn();
        } catch (const json::exception& e) {
            items.push_back(name + ": " + e.what());
        } catch (const Error& e) {
            items.push_back(name + ": " + e.what());
        }
    }
    void check(bool ok, const std::string& msg) {
        if (!ok) items.push_back(msg);
    }
    void raise(const std::string& what) const {
        if (items.empty()) return;
        std::string msg = what;
        for (const auto& i : items) msg += "\n  " + i;
        throw ConfigError(msg);
    }
};

void require_dir(FieldErrors& errs, const std::string& field, const fs::path& p) {
    errs.check(fs::is_directory(p), field + ": directory not found: " + p.string());
}

void require_file(FieldErrors& errs, const std::string& field, const fs::path& p) {
    errs.check(fs::is_regular_file(p), field + ": file not found: " + p.string());
}

std::string scene_id_of(const fs::path& dir) {
    return read_json(dir / "meta.json").at("scene_id").get<std::string>();
}

std::vector<std::string> raw_ids(const RunConfig& cfg) {
    std::vector<std::string> ids;
    for (const auto& d : scene_dirs(cfg)) ids.push_back(scene_id_of(d));
    return ids;
}

std::vector<fs::path> branch_scene_dirs(const RunConfig& cfg, Branch b) {
    if (b == Branch::Uncalibrated) return scene_dirs(cfg);
    std::vector<fs::path> dirs;
    const Layout lay{cfg.out};
    const auto ids = raw_ids(cfg);
    // The reference scene passes through calibration under its own id.
    for (std::size_t i = 0; i < ids.size(); ++i) dirs.push_back(lay.calibrated_scenes() / (i == 0 ? ids[i] : ids[i] + ".cal"));
    return dirs;
}

void require_scenes(const RunConfig& cfg, Branch b) {
    FieldErrors errs;
    const auto dirs = b == Branch::Uncalibrated ? scene_dirs(cfg) : branch_scene_dirs(cfg, b);
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        require_dir(errs, b == Branch::Uncalibrated ? "scenes[" + std::to_string(i) + "]" : "calibrated scene (run calibrate)",
                    dirs[i]);
    }
    errs.raise("missing inputs:");
}

void require_segments(const RunConfig& cfg, const std::vector<std::string>& ids) {
    FieldErrors errs;
    for (const auto& id : ids) require_dir(errs, "segments (run segment)", Layout{cfg.out}.segments() / id);
    errs.raise("missing inputs:");
}

// Feature rows joined with truth over every scene of a branch.
features::LabeledTable labeled_rows(const RunConfig& cfg, Branch b, Status& st) {
    FieldErrors errs;
    require_file(errs, "truth_csv", truth_path(cfg));
    errs.raise("missing inputs:");
    const auto ids = raw_ids(cfg);
    require_segments(cfg, ids);
    const auto points = features::read_truth_csv(truth_path(cfg));
    const auto dirs = branch_scene_dirs(cfg, b);
    const Layout lay{cfg.out};
    std::vector<features::LabeledTable> parts;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        const std::string sid = scene_id_of(dirs[i]);
        const fs::path table_path = lay.branch(b) / "features" / (sid + ".csv");
        if (!fs::is_regular_file(table_path)) throw ConfigError("features: file not found (run features): " + table_path.string());
        const auto table = features::read_table_csv(table_path);
        const auto seg = load_segment_map(lay.segments() / ids[i]);
        auto joined = features::join_labels(table, points, seg);
        for (const auto& w : joined.warnings) st.warnings.push_back(branch_name(b) + " " + sid + ": " + w);
        parts.push_back(std::move(joined.labeled));
    }
    auto all = features::concat(parts);
    features::write_labeled_csv(all, lay.branch(b) / "labeled.csv");
    return all;
}

} // namespace

std::string branch_name(Branch b) { return b == Branch::Calibrated ? "calibrated" : "uncalibrated"; }

RunConfig config_from_json(const json& j, const fs::path& base_dir) {
    RunConfig cfg;
    FieldErrors errs;
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    static const std::set<std::string> known = {"synth", "scenes", "masks", "truth_csv", "out", "calibration",
                                                "segmentation", "features", "classifiers", "classifier_params",
                                                "cv", "jobs", "seed"};
    for (const auto& [key, value] : j.items()) {
        errs.check(known.count(key) > 0, key + ": unknown field");
    }
    if (j.contains("synth")) {
        errs.field("synth", [&] {
            auto s = synth::config_from_json(j.at("synth"));
            s.validate();
            cfg.synth = s;
        });
    }
    auto paths = [&](const char* key, std::vector<fs::path>& dst) {
        if (!j.contains(key)) return;
        errs.field(key, [&] {
            for (const auto& p : j.at(key)) dst.push_back(resolve(p.get<std::string>(), base_dir));
        });
    };
    paths("scenes", cfg.scenes);
    paths("masks", cfg.masks);
    if (j.contains("truth_csv")) errs.field("truth_csv", [&] { cfg.truth_csv = resolve(j.at("truth_csv").get<std::string>(), base_dir); });
    if (j.contains("out")) errs.field("out", [&] { cfg.out = resolve(j.at("out").get<std::string>(), base_dir); });
    if (!cfg.synth && cfg.scenes.empty()) errs.items.push_back("scenes: no scene directories and no synth block");
    if (!cfg.scenes.empty() && !cfg.masks.empty() && cfg.masks.size() + 1 != cfg.scenes.size()) {
        errs.items.push_back("masks: expected " + std::to_string(cfg.scenes.size() - 1) + " entries, one per scene pair");
    }

    if (j.contains("calibration")) {
        const json& c = j.at("calibration");
        errs.field("calibration.n_points", [&] { cfg.calibration.n_points = c.value("n_points", cfg.calibration.n_points); });
        errs.field("calibration.alpha", [&] { cfg.calibration.alpha = c.value("alpha", cfg.calibration.alpha); });
        errs.field("calibration.seed", [&] { cfg.calibration.seed = c.value("seed", cfg.calibration.seed); });
        errs.field("calibration.with_intercept",
                   [&] { cfg.calibration.with_intercept = c.value("with_intercept", cfg.calibration.with_intercept); });
    }
    errs.check(cfg.calibration.n_points >= 3, "calibration.n_points: must be >= 3");
    errs.check(cfg.calibration.alpha > 0.0 && cfg.calibration.alpha < 1.0, "calibration.alpha: must be in (0, 1)");

    if (j.contains("segmentation")) {
        const json& s = j.at("segmentation");
        errs.field("segmentation.sigma", [&] { cfg.segmentation.sigma = s.value("sigma", cfg.segmentation.sigma); });
        errs.field("segmentation.window_radius",
                   [&] { cfg.segmentation.window_radius = s.value("window_radius", cfg.segmentation.window_radius); });
        errs.field("segmentation.min_height", [&] {
            if (s.contains("min_height") && !s.at("min_height").is_null()) cfg.segmentation.min_height = s.at("min_height").get<double>();
        });
    }
    errs.check(cfg.segmentation.sigma > 0.0, "segmentation.sigma: must be > 0");
    errs.check(cfg.segmentation.window_radius >= 1, "segmentation.window_radius: must be >= 1");

    if (j.contains("features")) errs.field("features", [&] { cfg.features = features::feature_config_from_json(j.at("features")); });
    if (j.contains("classifiers")) {
        errs.field("classifiers", [&] {
            cfg.classifiers.clear();
            for (const auto& k : j.at("classifiers")) cfg.classifiers.push_back(ml::parse_kind(k.get<std::string>()));
            if (cfg.classifiers.empty()) throw ConfigError("at least one classifier is required");
        });
    }
    if (j.contains("classifier_params")) {
        errs.field("classifier_params", [&] { cfg.classifier_params = ml::train_params_from_json(j.at("classifier_params")); });
    }
    errs.check(cfg.classifier_params.C > 0.0, "classifier_params.C: must be > 0");
    errs.check(cfg.classifier_params.tol > 0.0, "classifier_params.tol: must be > 0");
    errs.check(cfg.classifier_params.k >= 1, "classifier_params.k: must be >= 1");
    if (j.contains("cv")) {
        const json& c = j.at("cv");
        errs.field("cv.k", [&] { cfg.cv.k = c.value("k", cfg.cv.k); });
        errs.field("cv.stratify", [&] { cfg.cv.stratify = c.value("stratify", cfg.cv.stratify); });
        errs.field("cv.group_by_pile", [&] { cfg.cv.group_by_pile = c.value("group_by_pile", cfg.cv.group_by_pile); });
        errs.field("cv.seed", [&] { cfg.cv.seed = c.value("seed", cfg.cv.seed); });
    }
    errs.check(cfg.cv.k >= 2, "cv.k: must be >= 2");
    if (j.contains("jobs")) errs.field("jobs", [&] { cfg.jobs = j.at("jobs").get<int>(); });
    errs.check(cfg.jobs >= 1, "jobs: must be >= 1");
    if (j.contains("seed")) errs.field("seed", [&] { set_seed(cfg, j.at("seed").get<std::uint64_t>()); });
    errs.raise("invalid run config:");
    cfg.features.jobs = cfg.jobs;
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw ConfigError("config: file not found: " + path.string());
    return config_from_json(read_json(path), path.parent_path());
}

json config_to_json(const RunConfig& cfg) {
    json j;
    if (cfg.synth) j["synth"] = synth::config_to_json(*cfg.synth);
    auto strs = [](const std::vector<fs::path>& ps) {
        std::vector<std::string> out;
        for (const auto& p : ps) out.push_back(p.string());
        return out;
    };
    j["scenes"] = strs(cfg.scenes);
    j["masks"] = strs(cfg.masks);
    j["truth_csv"] = cfg.truth_csv.string();
    j["out"] = cfg.out.string();
    j["calibration"] = {{"n_points", cfg.calibration.n_points}, {"alpha", cfg.calibration.alpha},
                        {"seed", cfg.calibration.seed}, {"with_intercept", cfg.calibration.with_intercept}};
    j["segmentation"] = {{"sigma", cfg.segmentation.sigma}, {"window_radius", cfg.segmentation.window_radius},
                         {"min_height", cfg.segmentation.min_height ? json(*cfg.segmentation.min_height) : json(nullptr)}};
    j["features"] = features::feature_config_to_json(cfg.features);
    std::vector<std::string> kinds;
    for (auto k : cfg.classifiers) kinds.push_back(ml::kind_name(k));
    j["classifiers"] = kinds;
    j["classifier_params"] = ml::train_params_to_json(cfg.classifier_params);
    j["cv"] = {{"k", cfg.cv.k}, {"stratify", cfg.cv.stratify}, {"group_by_pile", cfg.cv.group_by_pile}, {"seed", cfg.cv.seed}};
    j["jobs"] = cfg.jobs;
    return j;
}

void set_seed(RunConfig& cfg, std::uint64_t seed) {
    if (cfg.synth) cfg.synth->seed = seed;
    cfg.calibration.seed = seed;
    cfg.classifier_params.seed = seed;
    cfg.cv.seed = seed;
}

std::vector<fs::path> scene_dirs(const RunConfig& cfg) {
    if (!cfg.scenes.empty()) return cfg.scenes;
    if (!cfg.synth) throw ConfigError("scenes: no scene directories configured");
    std::vector<fs::path> dirs;
    for (std::size_t t = 0; t < cfg.synth->date_count(); ++t) dirs.push_back(Layout{cfg.out}.synth_scenes() / ("t" + std::to_string(t)));
    return dirs;
}

std::vector<fs::path> mask_dirs(const RunConfig& cfg) {
    if (!cfg.masks.empty()) return cfg.masks;
    const std::size_t n = scene_dirs(cfg).size();
    std::vector<fs::path> dirs;
    for (std::size_t p = 0; p + 1 < n; ++p) {
        dirs.push_back(Layout{cfg.out}.truth_dir() / "masks" / ("pair_" + std::to_string(p) + "_" + std::to_string(p + 1)));
    }
    return dirs;
}

fs::path truth_path(const RunConfig& cfg) {
    if (!cfg.truth_csv.empty()) return cfg.truth_csv;
    return Layout{cfg.out}.truth_dir() / "truth.csv";
}

void save_segment_map(const segment::SegmentMap& seg, const fs::path& dir) {
    raster::save_grid(seg.labels, "segments", dir);
    json seeds = json::array();
    for (const auto& s : seg.seeds) seeds.push_back({{"row", s.cell.row}, {"col", s.cell.col}, {"elevation", s.elevation}});
    write_json({{"seeds", seeds}, {"cell_counts", seg.cell_counts}}, dir / "seeds.json");
}

segment::SegmentMap load_segment_map(const fs::path& dir) {
    segment::SegmentMap seg;
    seg.labels = raster::load_grid(dir);
    const json j = read_json(dir / "seeds.json");
    try {
        for (const auto& s : j.at("seeds")) {
            seg.seeds.push_back({{s.at("row").get<std::size_t>(), s.at("col").get<std::size_t>()}, s.at("elevation").get<double>()});
        }
        seg.cell_counts = j.at("cell_counts").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw FormatError((dir / "seeds.json").string() + ": " + e.what());
    }
    if (seg.cell_counts.size() != seg.seeds.size()) throw FormatError((dir / "seeds.json").string() + ": seed/count mismatch");
    return seg;
}

Status cmd_synth(const RunConfig& cfg) {
    if (!cfg.synth) throw ConfigError("synth: the run config has no synth block");
    const Layout lay{cfg.out};
    const auto gen = synth::gen_series(*cfg.synth);
    for (const auto& s : gen.series) raster::save_scene(s, lay.synth_scenes() / s.scene_id);
    synth::export_truth(gen.truth, *cfg.synth, lay.truth_dir());
    return {};
}

Status cmd_calibrate(const RunConfig& cfg) {
    const auto dirs = scene_dirs(cfg);
    const auto mdirs = mask_dirs(cfg);
    FieldErrors errs;
    for (std::size_t i = 0; i < dirs.size(); ++i) require_dir(errs, "scenes[" + std::to_string(i) + "]", dirs[i]);
    for (std::size_t i = 0; i < mdirs.size(); ++i) require_dir(errs, "masks[" + std::to_string(i) + "]", mdirs[i]);
    errs.raise("missing inputs:");

    raster::SceneSeries series;
    for (const auto& d : dirs) series.push_back(raster::load_scene(d));
    std::vector<raster::Grid> masks;
    for (const auto& d : mdirs) masks.push_back(raster::load_grid(d));
    const auto cal = calib::calibrate_series(series, masks, cfg.calibration);
    const Layout lay{cfg.out};
    for (const auto& s : cal.series) raster::save_scene(s, lay.calibrated_scenes() / s.scene_id);
    calib::calibration_report(cal.calibration, lay.calibration_dir());

    Status st;
    for (const auto& r : cal.calibration.records) {
        if (!r.significant) {
            st.warnings.push_back("calibration " + r.reference + " -> " + r.target + " band " + raster::kBandNames[r.band] +
                                  ": fit not significant (p = " + std::to_string(r.fit.p_value) + ")");
        }
    }
    return st;
}

Status cmd_segment(const RunConfig& cfg) {
    require_scenes(cfg, Branch::Uncalibrated);
    const Layout lay{cfg.out};
    for (const auto& d : scene_dirs(cfg)) {
        const auto scene = raster::load_scene(d);
        const auto seg = segment::voronoi_segment(scene.dsm, cfg.segmentation);
        const fs::path out = lay.segments() / scene.scene_id;
        save_segment_map(seg, out);
        segment::export_segments_geojson(seg, out / "segments.geojson");
    }
    return {};
}

Status cmd_features(const RunConfig& cfg, const std::vector<Branch>& branches) {
    const auto raw = scene_dirs(cfg);
    const auto ids = raw_ids(cfg);
    require_segments(cfg, ids);
    const Layout lay{cfg.out};
    for (Branch b : branches) {
        require_scenes(cfg, b);
        const auto dirs = branch_scene_dirs(cfg, b);
        for (std::size_t i = 0; i < dirs.size(); ++i) {
            const auto scene = raster::load_scene(dirs[i]);
            if (b == Branch::Calibrated) {
                // The shared segmentation is only valid if calibration left the DSM alone.
                const auto original = raster::load_scene(raw[i]);
                if (!scene.dsm.bit_equal(original.dsm)) {
                    throw ConflictError("calibrated scene " + scene.scene_id + " has a DSM that differs from " + ids[i]);
                }
            }
            const auto seg = load_segment_map(lay.segments() / ids[i]);
            const auto table = features::build_feature_table(scene, seg, cfg.features);
            fs::create_directories(lay.branch(b) / "features");
            features::write_table_csv(table, lay.branch(b) / "features" / (scene.scene_id + ".csv"));
        }
    }
    return {};
}

Status cmd_evaluate(const RunConfig& cfg, const std::vector<Branch>& branches) {
    Status st;
    const Layout lay{cfg.out};
    for (Branch b : branches) {
        const auto data = ml::from_labeled(labeled_rows(cfg, b, st));
        for (ml::Kind k : cfg.classifiers) {
            const ml::TrainParams params = cfg.classifier_params;
            const ml::Trainer trainer = [k, params](const ml::Dataset& d) { return ml::train(k, d, params); };
            const auto rep = ml::cross_validate(trainer, data, cfg.cv, cfg.jobs, false, ml::kind_name(k));
            write_json(ml::cv_report_to_json(rep), lay.branch(b) / "cv" / (ml::kind_name(k) + ".json"));
        }
    }
    return st;
}

Status cmd_train(const RunConfig& cfg, const std::vector<Branch>& branches) {
    Status st;
    const Layout lay{cfg.out};
    for (Branch b : branches) {
        const auto data = ml::from_labeled(labeled_rows(cfg, b, st));
        for (ml::Kind k : cfg.classifiers) {
            const auto model = ml::train(k, data, cfg.classifier_params);
            write_json(ml::model_to_json(model), lay.branch(b) / "models" / (ml::kind_name(k) + ".json"));
        }
    }
    return st;
}

Status cmd_classify(const RunConfig& cfg, const std::vector<Branch>& branches) {
    Status st;
    const Layout lay{cfg.out};
    const auto ids = raw_ids(cfg);
    require_segments(cfg, ids);
    for (Branch b : branches) {
        const auto dirs = branch_scene_dirs(cfg, b);
        for (ml::Kind k : cfg.classifiers) {
            const fs::path model_path = lay.branch(b) / "models" / (ml::kind_name(k) + ".json");
            if (!fs::is_regular_file(model_path)) throw ConfigError("model: file not found (run train): " + model_path.string());
            const auto model = ml::model_from_json(read_json(model_path));
            for (std::size_t i = 0; i < dirs.size(); ++i) {
                const std::string sid = scene_id_of(dirs[i]);
                const auto table = features::read_table_csv(lay.branch(b) / "features" / (sid + ".csv"));
                const auto seg = load_segment_map(lay.segments() / ids[i]);
                const auto map = evalmap::classify_scene(model, table, seg);
                for (const auto& w : map.warnings) st.warnings.push_back(branch_name(b) + " " + ml::kind_name(k) + ": " + w);
                const fs::path out = lay.branch(b) / "maps" / ml::kind_name(k);
                raster::save_grid(map.labels, sid + " " + ml::kind_name(k), out / sid);
                evalmap::render_thematic_png(map.labels, out / (sid + ".png"));
            }
        }
    }
    return st;
}

Status cmd_diff(const RunConfig& cfg) {
    const Layout lay{cfg.out};
    const auto cal_dirs = branch_scene_dirs(cfg, Branch::Calibrated);
    const auto raw = scene_dirs(cfg);
    json out = json::object();
    for (ml::Kind k : cfg.classifiers) {
        json per_scene = json::array();
        for (std::size_t i = 0; i < raw.size(); ++i) {
            const std::string cal_id = scene_id_of(cal_dirs[i]), raw_id = scene_id_of(raw[i]);
            const fs::path a = lay.branch(Branch::Calibrated) / "maps" / ml::kind_name(k) / cal_id;
            const fs::path b = lay.branch(Branch::Uncalibrated) / "maps" / ml::kind_name(k) / raw_id;
            if (!fs::is_directory(a) || !fs::is_directory(b)) throw ConfigError("maps: not found (run classify) for scene " + raw_id);
            const auto c = evalmap::diff_label_maps(raster::load_grid(a), raster::load_grid(b));
            per_scene.push_back({{"scene_id", raw_id},
                                 {"agree_cells", c.agree_cells},
                                 {"differ_cells", c.differ_cells},
                                 {"agree_fraction", c.agree_fraction},
                                 {"differ_area_m2", c.differ_area_m2},
                                 {"total_area_m2", c.total_area_m2}});
        }
        out[ml::kind_name(k)] = per_scene;
    }
    write_json(out, lay.root / "changes.json");
    return {};
}

Status cmd_report(const RunConfig& cfg) {
    const Layout lay{cfg.out};
    std::vector<ml::CVReport> cal, uncal;
    for (ml::Kind k : cfg.classifiers) {
        for (Branch b : {Branch::Calibrated, Branch::Uncalibrated}) {
            const fs::path p = lay.branch(b) / "cv" / (ml::kind_name(k) + ".json");
            if (!fs::is_regular_file(p)) throw ConfigError("cv report: file not found (run evaluate): " + p.string());
            (b == Branch::Calibrated ? cal : uncal).push_back(ml::cv_report_from_json(read_json(p)));
        }
    }
    std::vector<evalmap::NamedChange> changes;
    const fs::path cp = lay.root / "changes.json";
    if (fs::is_regular_file(cp)) {
        const json j = read_json(cp);
        const std::string primary = ml::kind_name(cfg.classifiers.front());
        if (j.contains(primary)) {
            for (const auto& e : j.at(primary)) {
                evalmap::ChangeReport c;
                c.agree_cells = e.at("agree_cells").get<std::size_t>();
                c.differ_cells = e.at("differ_cells").get<std::size_t>();
                c.agree_fraction = e.at("agree_fraction").get<double>();
                c.differ_area_m2 = e.at("differ_area_m2").get<double>();
                c.total_area_m2 = e.at("total_area_m2").get<double>();
                changes.push_back({e.at("scene_id").get<std::string>(), c});
            }
        }
    }
    evalmap::emit_report(cal, uncal, changes, lay.report());
    return {};
}

Status run_pipeline(const RunConfig& cfg) {
    const std::vector<Branch> both{Branch::Calibrated, Branch::Uncalibrated};
    Status st;
    if (cfg.synth && cfg.scenes.empty()) st.merge(cmd_synth(cfg));
    st.merge(cmd_segment(cfg));
    st.merge(cmd_calibrate(cfg));
    st.merge(cmd_features(cfg, both));
    st.merge(cmd_evaluate(cfg, both));
    st.merge(cmd_train(cfg, both));
    st.merge(cmd_classify(cfg, both));
    st.merge(cmd_diff(cfg));
    st.merge(cmd_report(cfg));
    return st;
}

} // namespace spoilcal::pipeline
