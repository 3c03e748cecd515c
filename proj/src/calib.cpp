#include "spoilcal/calib.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/text.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace spoilcal::calib {

using raster::Grid;
namespace fs = std::filesystem;

bool SeriesCalibration::all_significant() const {
    return std::all_of(records.begin(), records.end(), [](const CalibrationRecord& r) { return r.significant; });
}

SamplePairs collect_invariant_pairs(const Grid& ref_band, const Grid& target_band, const Grid& invariant_mask,
                                    std::size_t n, std::uint64_t seed) {
    if (!(ref_band.georef() == invariant_mask.georef()) || !(target_band.georef() == invariant_mask.georef())) {
        throw FormatError("collect_invariant_pairs: bands and mask must share one grid geometry");
    }
    Grid eligible(invariant_mask.georef(), 0.0f);
    for (std::size_t i = 0; i < eligible.size(); ++i) {
        const float m = invariant_mask[i];
        if (!std::isnan(m) && m != 0.0f && !std::isnan(ref_band[i]) && !std::isnan(target_band[i])) eligible[i] = 1.0f;
    }
    const auto cells = raster::sample_mask_points(eligible, n, seed);
    SamplePairs out;
    out.x.reserve(n);
    out.y.reserve(n);
    for (const auto& c : cells) {
        out.x.push_back(ref_band.at(c.row, c.col));
        out.y.push_back(target_band.at(c.row, c.col));
    }
    return out;
}

double two_sided_t_pvalue(double t, double df) {
    if (std::isnan(t)) return 1.0;
    if (std::isinf(t)) return 0.0;
    const boost::math::students_t dist(df);
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
}

RegressionFit fit_slope_through_origin(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error("fit_slope_through_origin: x and y differ in length");
    const std::size_t n = x.size();
    if (n < 3) throw DegenerateError("fit_slope_through_origin: need at least 3 points, got " + std::to_string(n));
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        syy += y[i] * y[i];
    }
    if (!(sxx > 0.0)) throw DegenerateError("fit_slope_through_origin: sum of x^2 is zero");
    RegressionFit fit;
    fit.n = n;
    fit.slope = sxy / sxx;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - fit.slope * x[i];
        rss += e * e;
    }
    fit.residual_ss = rss;
    fit.r2 = syy > 0.0 ? std::clamp(1.0 - rss / syy, 0.0, 1.0) : 0.0;
    const double df = static_cast<double>(n - 1);
    const double se = std::sqrt(rss / (df * sxx));
    if (se > 0.0) {
        fit.p_value = two_sided_t_pvalue(fit.slope / se, df);
    } else {
        fit.p_value = fit.slope != 0.0 ? 0.0 : 1.0;
    }
    return fit;
}

RegressionFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error("fit_line: x and y differ in length");
    const std::size_t n = x.size();
    if (n < 3) throw DegenerateError("fit_line: need at least 3 points, got " + std::to_string(n));
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw DegenerateError("fit_line: x has zero variance");
    RegressionFit fit;
    fit.n = n;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - fit.intercept - fit.slope * x[i];
        rss += e * e;
    }
    fit.residual_ss = rss;
    fit.r2 = syy > 0.0 ? std::clamp(1.0 - rss / syy, 0.0, 1.0) : 0.0;
    const double df = static_cast<double>(n - 2);
    const double se = std::sqrt(rss / (df * sxx));
    fit.p_value = se > 0.0 ? two_sided_t_pvalue(fit.slope / se, df) : (fit.slope != 0.0 ? 0.0 : 1.0);
    return fit;
}

Grid calibrate_band(const Grid& band, double slope, double intercept) {
    if (!(slope > 0.0) || !std::isfinite(slope)) {
        throw DegenerateError("calibrate_band: slope must be positive, got " + text::fmt_double(slope));
    }
    Grid out = band;
    for (float& v : out.values()) {
        if (!std::isnan(v)) v = static_cast<float>((static_cast<double>(v) - intercept) / slope);
    }
    return out;
}

CalibratedSeries calibrate_series(const raster::SceneSeries& series, const std::vector<Grid>& invariant_masks,
                                  const CalibrationParams& params) {
    if (series.size() < 2) throw ConfigError("calibrate_series: need at least 2 scenes");
    if (invariant_masks.size() < series.size() - 1) {
        throw ConfigError("calibrate_series: invariant mask missing for pair " + std::to_string(invariant_masks.size()) +
                          " -> " + std::to_string(invariant_masks.size() + 1) + " (" +
                          series[invariant_masks.size()].scene_id + ", " + series[invariant_masks.size() + 1].scene_id + ")");
    }
    raster::validate_series(series);

    CalibratedSeries out;
    out.calibration.n_points = params.n_points;
    out.calibration.seed = params.seed;
    out.calibration.alpha = params.alpha;
    out.series.push_back(series[0]);

    for (std::size_t i = 1; i < series.size(); ++i) {
        const raster::Scene& ref = out.series[i - 1];
        const raster::Scene& tgt = series[i];
        const raster::GeoRef& mask_geo = invariant_masks[i - 1].georef();

        // One spatial sample per pair, restricted to cells valid in every band.
        Grid eligible(mask_geo, 0.0f);
        std::array<Grid, 3> ref_bands, tgt_bands;
        for (std::size_t b = 0; b < 3; ++b) {
            ref_bands[b] = raster::resample_nearest(ref.band(b), mask_geo);
            tgt_bands[b] = raster::resample_nearest(tgt.band(b), mask_geo);
        }
        for (std::size_t c = 0; c < eligible.size(); ++c) {
            const float m = invariant_masks[i - 1][c];
            bool ok = !std::isnan(m) && m != 0.0f;
            for (std::size_t b = 0; ok && b < 3; ++b) ok = !std::isnan(ref_bands[b][c]) && !std::isnan(tgt_bands[b][c]);
            if (ok) eligible[c] = 1.0f;
        }
        const std::uint64_t pair_seed = params.seed + static_cast<std::uint64_t>(i);

        raster::Scene cal = tgt;
        cal.scene_id = tgt.scene_id + ".cal";
        for (std::size_t b = 0; b < 3; ++b) {
            const std::string context = ref.scene_id + " -> " + tgt.scene_id + " band " + raster::kBandNames[b];
            SamplePairs pairs;
            try {
                pairs = collect_invariant_pairs(ref_bands[b], tgt_bands[b], eligible, params.n_points, pair_seed);
            } catch (const SamplingError& e) {
                throw SamplingError(context + ": " + e.what(), e.eligible());
            }
            CalibrationRecord rec;
            rec.reference = ref.scene_id;
            rec.target = tgt.scene_id;
            rec.band = b;
            try {
                rec.fit = params.with_intercept ? fit_line(pairs.x, pairs.y) : fit_slope_through_origin(pairs.x, pairs.y);
                cal.band(b) = calibrate_band(tgt.band(b), rec.fit.slope, rec.fit.intercept);
            } catch (const DegenerateError& e) {
                throw DegenerateError(context + ": " + e.what());
            }
            rec.significant = rec.fit.p_value < params.alpha;
            out.calibration.records.push_back(rec);
        }
        out.series.push_back(std::move(cal));
    }
    return out;
}

std::string calibration_csv(const SeriesCalibration& sc) {
    std::ostringstream out;
    out << "reference,target,band,slope,r2,p,n,significant_at_95\n";
    for (const auto& r : sc.records) {
        out << r.reference << ',' << r.target << ',' << raster::kBandNames[r.band] << ',' << text::fmt_double(r.fit.slope)
            << ',' << text::fmt_double(r.fit.r2) << ',' << text::fmt_double(r.fit.p_value) << ',' << r.fit.n << ','
            << (r.fit.p_value < 0.05 ? "true" : "false") << '\n';
    }
    return out.str();
}

void calibration_report(const SeriesCalibration& sc, const fs::path& dir) {
    using nlohmann::json;
    std::error_code ec;
    fs::create_directories(dir, ec);
    json records = json::array();
    for (const auto& r : sc.records) {
        records.push_back({{"reference", r.reference},
                           {"target", r.target},
                           {"band", raster::kBandNames[r.band]},
                           {"slope", r.fit.slope},
                           {"intercept", r.fit.intercept},
                           {"r2", r.fit.r2},
                           {"p", r.fit.p_value},
                           {"n", r.fit.n},
                           {"residual_ss", r.fit.residual_ss},
                           {"significant_at_95", r.fit.p_value < 0.05},
                           {"significant_at_alpha", r.significant}});
    }
    json j{{"n_points", sc.n_points}, {"seed", sc.seed}, {"alpha", sc.alpha}, {"records", records}};
    {
        std::ofstream out(dir / "calibration.json");
        if (!out) throw IoError("cannot write file: " + (dir / "calibration.json").string());
        out << j.dump(2) << "\n";
    }
    std::ofstream out(dir / "calibration.csv");
    if (!out) throw IoError("cannot write file: " + (dir / "calibration.csv").string());
    out << calibration_csv(sc);
    if (!out) throw IoError("write failed: " + (dir / "calibration.csv").string());
}

} // namespace spoilcal::calib
