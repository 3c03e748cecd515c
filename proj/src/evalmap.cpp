#include "spoilcal/evalmap.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/png_io.hpp"
#include "spoilcal/text.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace spoilcal::evalmap {

using nlohmann::json;

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) counts[a][b] += o.counts[a][b];
    return *this;
}

Metrics metrics(const ConfusionMatrix& cm) {
    const std::size_t total = cm.total();
    if (total == 0) throw Error("metrics: empty confusion matrix");
    Metrics m;
    m.overall_accuracy = static_cast<double>(cm.counts[0][0] + cm.counts[1][1]) / static_cast<double>(total);
    for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t o = 1 - c;
        const auto tp = static_cast<double>(cm.counts[c][c]);
        const auto fp = static_cast<double>(cm.counts[o][c]);
        const auto fn = static_cast<double>(cm.counts[c][o]);
        ClassMetrics& k = m.per_class[c];
        if (tp + fp > 0.0) k.precision = tp / (tp + fp); else k.undefined = true;
        if (tp + fn > 0.0) k.recall = tp / (tp + fn); else k.undefined = true;
        if (k.precision + k.recall > 0.0) {
            k.f1 = 2.0 * k.precision * k.recall / (k.precision + k.recall);
        } else {
            k.undefined = true;
        }
    }
    return m;
}

ClassifiedMap classify_scene(const ml::TrainedModel& model, const features::FeatureTable& table,
                             const segment::SegmentMap& seg) {
    ClassifiedMap out{raster::Grid(seg.labels.georef(), 0.0f), {}};
    if (seg.segment_count() == 0) return out;

    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < table.row_count(); ++i) {
        bool any = false;
        for (double v : table.rows[i]) any = any || !std::isnan(v);
        if (any) {
            usable.push_back(i);
        } else {
            out.warnings.push_back("scene " + table.keys[i].scene_id + " segment " + std::to_string(table.keys[i].segment_id) +
                                   ": all features NaN, left unclassified");
        }
    }
    std::vector<int> code(seg.segment_count() + 1, 0);
    if (!usable.empty()) {
        features::FeatureTable sub;
        sub.columns = table.columns;
        for (std::size_t i : usable) {
            sub.keys.push_back(table.keys[i]);
            sub.rows.push_back(table.rows[i]);
        }
        const std::vector<int> pred = ml::predict(model, ml::from_table(sub));
        for (std::size_t r = 0; r < pred.size(); ++r) {
            const std::size_t id = sub.keys[r].segment_id;
            if (id == 0 || id > seg.segment_count()) throw Error("classify_scene: segment id out of range");
            code[id] = pred[r] + 1;
        }
    }
    for (std::size_t i = 0; i < seg.labels.size(); ++i) {
        const float v = seg.labels[i];
        if (std::isnan(v) || v <= 0.0f) continue;
        out.labels[i] = static_cast<float>(code[static_cast<std::size_t>(v)]);
    }
    return out;
}

ChangeReport diff_label_maps(const raster::Grid& a, const raster::Grid& b) {
    if (!(a.georef() == b.georef())) throw Error("diff_label_maps: label maps have different georeferences");
    ChangeReport r;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const float u = a[i], v = b[i];
        if (std::isnan(u) || std::isnan(v) || u == 0.0f || v == 0.0f) continue;
        (u == v ? r.agree_cells : r.differ_cells) += 1;
    }
    const double cell_area = a.georef().cell_size * a.georef().cell_size;
    const std::size_t total = r.agree_cells + r.differ_cells;
    r.agree_fraction = total ? static_cast<double>(r.agree_cells) / static_cast<double>(total) : 0.0;
    r.differ_area_m2 = static_cast<double>(r.differ_cells) * cell_area;
    r.total_area_m2 = static_cast<double>(total) * cell_area;
    return r;
}

namespace {

const char* kClassNames[2] = {"Cat1", "Cat2"};

json cv_summary(const ml::CVReport& r) {
    json per_class = json::object();
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& m = r.metrics.per_class[c];
        per_class[kClassNames[c]] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"undefined", m.undefined}};
    }
    return {{"overall_accuracy", r.metrics.overall_accuracy},
            {"per_class", per_class},
            {"pooled_confusion", json::array({json::array({r.pooled.counts[0][0], r.pooled.counts[0][1]}),
                                              json::array({r.pooled.counts[1][0], r.pooled.counts[1][1]})})}};
}

const ml::CVReport* find_model(const std::vector<ml::CVReport>& reports, const std::string& name) {
    for (const auto& r : reports)
        if (r.model == name) return &r;
    return nullptr;
}

json change_json(const ChangeReport& c) {
    return {{"agree_cells", c.agree_cells}, {"differ_cells", c.differ_cells}, {"agree_fraction", c.agree_fraction},
            {"differ_area_m2", c.differ_area_m2}, {"total_area_m2", c.total_area_m2}};
}

ChangeReport sum_changes(const std::vector<NamedChange>& changes) {
    ChangeReport t;
    for (const auto& c : changes) {
        t.agree_cells += c.change.agree_cells;
        t.differ_cells += c.change.differ_cells;
        t.differ_area_m2 += c.change.differ_area_m2;
        t.total_area_m2 += c.change.total_area_m2;
    }
    const std::size_t n = t.agree_cells + t.differ_cells;
    t.agree_fraction = n ? static_cast<double>(t.agree_cells) / static_cast<double>(n) : 0.0;
    return t;
}

std::string pad(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace

json report_json(const std::vector<ml::CVReport>& calibrated, const std::vector<ml::CVReport>& uncalibrated,
                 const std::vector<NamedChange>& changes) {
    json algos = json::array();
    for (const auto& cal : calibrated) {
        json a = {{"model", cal.model}, {"calibrated", cv_summary(cal)}};
        if (const auto* un = find_model(uncalibrated, cal.model)) {
            a["uncalibrated"] = cv_summary(*un);
            a["accuracy_gap"] = cal.metrics.overall_accuracy - un->metrics.overall_accuracy;
        } else {
            a["uncalibrated"] = nullptr;
            a["accuracy_gap"] = nullptr;
        }
        algos.push_back(std::move(a));
    }
    json j = {{"algorithms", algos}};
    if (!changes.empty()) {
        json per_scene = json::array();
        for (const auto& c : changes) {
            json e = change_json(c.change);
            e["scene_id"] = c.scene_id;
            per_scene.push_back(std::move(e));
        }
        j["changes"] = {{"per_scene", per_scene}, {"total", change_json(sum_changes(changes))}};
    }
    return j;
}

std::string report_text(const std::vector<ml::CVReport>& calibrated, const std::vector<ml::CVReport>& uncalibrated,
                        const std::vector<NamedChange>& changes) {
    std::ostringstream s;
    s << "Overall accuracy, calibrated vs uncalibrated\n";
    s << pad("model", 12) << pad("calibrated", 12) << pad("uncalibrated", 14) << "gap\n";
    for (const auto& cal : calibrated) {
        const auto* un = find_model(uncalibrated, cal.model);
        s << pad(cal.model, 12) << pad(text::fmt_sig(cal.metrics.overall_accuracy, 3), 12)
          << pad(un ? text::fmt_sig(un->metrics.overall_accuracy, 3) : "-", 14)
          << (un ? text::fmt_sig(cal.metrics.overall_accuracy - un->metrics.overall_accuracy, 3) : "-") << "\n";
    }
    auto class_table = [&](const std::vector<ml::CVReport>& reports, const char* branch) {
        s << "\nPer-class metrics (" << branch << ")\n";
        s << pad("model", 12) << pad("class", 7) << pad("precision", 11) << pad("recall", 9) << "f1\n";
        for (const auto& r : reports) {
            for (std::size_t c = 0; c < 2; ++c) {
                const auto& m = r.metrics.per_class[c];
                s << pad(r.model, 12) << pad(kClassNames[c], 7) << pad(text::fmt_sig(m.precision, 3), 11)
                  << pad(text::fmt_sig(m.recall, 3), 9) << text::fmt_sig(m.f1, 3) << (m.undefined ? " (undefined ratio)" : "")
                  << "\n";
            }
        }
    };
    class_table(calibrated, "calibrated");
    class_table(uncalibrated, "uncalibrated");
    if (!changes.empty()) {
        s << "\nPrediction change between branches\n";
        s << pad("scene", 14) << pad("differ_m2", 12) << pad("total_m2", 12) << "differ_fraction\n";
        auto line = [&](const std::string& name, const ChangeReport& c) {
            s << pad(name, 14) << pad(text::fmt_sig(c.differ_area_m2, 3), 12) << pad(text::fmt_sig(c.total_area_m2, 3), 12)
              << text::fmt_sig(c.total_area_m2 > 0.0 ? c.differ_area_m2 / c.total_area_m2 : 0.0, 3) << "\n";
        };
        for (const auto& c : changes) line(c.scene_id, c.change);
        line("total", sum_changes(changes));
    }
    return s.str();
}

void emit_report(const std::vector<ml::CVReport>& calibrated, const std::vector<ml::CVReport>& uncalibrated,
                 const std::vector<NamedChange>& changes, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file(dir / "report.json", report_json(calibrated, uncalibrated, changes).dump(2) + "\n");
    write_file(dir / "report.txt", report_text(calibrated, uncalibrated, changes));
}

void render_thematic_png(const raster::Grid& labels, const std::filesystem::path& path) {
    static constexpr std::uint8_t palette[3][3] = {{64, 64, 64}, {230, 159, 0}, {86, 180, 233}};
    std::vector<std::uint8_t> rgba(labels.size() * 4, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const float v = labels[i];
        if (std::isnan(v)) continue;
        const auto c = static_cast<std::size_t>(v == 1.0f ? 1 : (v == 2.0f ? 2 : 0));
        rgba[4 * i] = palette[c][0];
        rgba[4 * i + 1] = palette[c][1];
        rgba[4 * i + 2] = palette[c][2];
        rgba[4 * i + 3] = 255;
    }
    png::write_rgba(path, labels.width(), labels.height(), rgba);
}

} // namespace spoilcal::evalmap
