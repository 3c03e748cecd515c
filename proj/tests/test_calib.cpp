#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "test_util.hpp"

#include "spoilcal/calib.hpp"
#include "spoilcal/error.hpp"
#include "spoilcal/rng.hpp"
#include "spoilcal/synth.hpp"
#include "spoilcal/text.hpp"

#include <cmath>
#include <set>

using namespace spoilcal;
using namespace spoilcal::calib;
using raster::GeoRef;
using raster::Grid;

namespace {

// Reference survey gains; each is also the slope against the calibrated predecessor.
const std::vector<synth::Rgb> kSurveyGains = {
    {1.0, 1.0, 1.0},          {0.8987, 0.8567, 0.8172}, {1.14, 1.1784, 1.1801}, {0.9257, 0.9258, 0.9048},
    {0.983, 0.9769, 0.9432},  {1.2659, 1.2196, 1.1824}, {0.5482, 0.5338, 0.5215},
};

synth::SynthConfig chain_config(double noise) {
    synth::SynthConfig c;
    c.width = 256;
    c.height = 192;
    c.mound_sigma = 2.5;
    c.footprint_radius = 6.0;
    c.cat1.texture_amplitude = 0.08;
    c.cat2.texture_amplitude = 0.08;
    c.gains = kSurveyGains;
    c.noise_sigma = noise;
    c.seed = 11;
    return c;
}

Grid scaled(const Grid& g, double k) {
    Grid out = g;
    for (float& v : out.values()) v = static_cast<float>(k * v);
    return out;
}

} // namespace

TEST_CASE("collect_invariant_pairs") {
    const Grid ref = oracle::random_grid(20, 20, 1, 50, 200);
    Grid mask(ref.georef(), 1.0f);
    SUBCASE("identical bands") {
        const auto p = collect_invariant_pairs(ref, ref, mask, 100, 3);
        REQUIRE(p.x.size() == 100);
        CHECK(p.x == p.y);
    }
    SUBCASE("scaled target") {
        const Grid tgt = scaled(ref, 0.8987);
        const auto p = collect_invariant_pairs(ref, tgt, mask, 100, 3);
        for (std::size_t i = 0; i < p.x.size(); ++i) CHECK(p.y[i] == doctest::Approx(0.8987 * p.x[i]).epsilon(1e-7));
    }
    SUBCASE("NaN cells are never sampled") {
        Grid tgt = ref;
        tgt[5] = raster::kNoData;
        Grid r2 = ref;
        r2[6] = raster::kNoData;
        const auto p = collect_invariant_pairs(r2, tgt, mask, 398, 3);
        for (std::size_t i = 0; i < p.x.size(); ++i) {
            CHECK_FALSE(std::isnan(p.x[i]));
            CHECK_FALSE(std::isnan(p.y[i]));
        }
        CHECK_THROWS_AS(collect_invariant_pairs(r2, tgt, mask, 399, 3), SamplingError);
    }
    SUBCASE("geometry mismatch") {
        const Grid other = oracle::random_grid(21, 20, 1);
        CHECK_THROWS_AS(collect_invariant_pairs(ref, other, mask, 10, 3), FormatError);
    }
}

TEST_CASE("fit_slope_through_origin: exact fits") {
    std::vector<double> x, y;
    for (int i = 1; i <= 50; ++i) x.push_back(3.0 * i);
    auto f = fit_slope_through_origin(x, x);
    CHECK(f.slope == 1.0);
    CHECK(f.r2 == 1.0);
    CHECK(f.residual_ss == 0.0);
    CHECK(f.p_value == 0.0);

    for (double a : {0.8987, -2.5, 1e-3, 417.0}) {
        y.clear();
        for (double v : x) y.push_back(a * v);
        f = fit_slope_through_origin(x, y);
        CHECK(f.slope == doctest::Approx(a).epsilon(1e-14));
        CHECK(f.r2 == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(f.residual_ss <= 1e-20 * std::abs(a) * std::abs(a) * 1e6);
    }
}

TEST_CASE("fit_slope_through_origin: matches golden-section SSE minimizer") {
    Rng rng(77);
    std::vector<double> x(1000), y(1000);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.uniform(50, 200);
        y[i] = 1.14 * x[i] + 3.0 * rng.normal();
    }
    const auto f = fit_slope_through_origin(x, y);
    CHECK(std::abs(f.slope - oracle::golden_slope(x, y)) <= 1e-9);
    CHECK(f.p_value < 0.05);
    CHECK(f.n == 1000);
    CHECK(f.r2 >= 0.0);
    CHECK(f.r2 <= 1.0);

    // Scale equivariance.
    std::vector<double> y3(y);
    for (double& v : y3) v *= 3.0;
    const auto g = fit_slope_through_origin(x, y3);
    CHECK(g.slope == doctest::Approx(3.0 * f.slope).epsilon(1e-13));
    CHECK(g.r2 == doctest::Approx(f.r2).epsilon(1e-13));
}

TEST_CASE("fit_slope_through_origin: degenerate input") {
    const std::vector<double> z{0, 0, 0, 0}, y{1, 2, 3, 4};
    CHECK_THROWS_AS(fit_slope_through_origin(z, y), DegenerateError);
    const std::vector<double> two{1, 2};
    CHECK_THROWS_AS(fit_slope_through_origin(two, two), DegenerateError);
}

TEST_CASE("p-values") {
    // df = 1 is the Cauchy distribution: p = 1 - 2 atan(|t|) / pi.
    for (double t : {0.3, 1.0, 4.0, 25.0}) {
        CHECK(two_sided_t_pvalue(t, 1) == doctest::Approx(1.0 - 2.0 * std::atan(t) / oracle::kPi).epsilon(1e-12));
    }
    // df = 2: p = 1 - t / sqrt(2 + t^2).
    for (double t : {0.5, 2.0, 9.0}) {
        CHECK(two_sided_t_pvalue(t, 2) == doctest::Approx(1.0 - t / std::sqrt(2.0 + t * t)).epsilon(1e-12));
    }
    CHECK(two_sided_t_pvalue(0.0, 10) == doctest::Approx(1.0));
    CHECK(two_sided_t_pvalue(-3.0, 5) == two_sided_t_pvalue(3.0, 5));
    // df = 3: p = 1 - (2/pi) (atan(u) + u / (1 + u^2)), u = t / sqrt(3).
    for (double t : {0.7, 3.182446305284263}) {
        const double u = t / std::sqrt(3.0);
        CHECK(two_sided_t_pvalue(t, 3) == doctest::Approx(1.0 - 2.0 / oracle::kPi * (std::atan(u) + u / (1 + u * u))).epsilon(1e-12));
    }
    CHECK(two_sided_t_pvalue(3.182446305284263, 3) == doctest::Approx(0.05).epsilon(1e-9));

    // Weak relation: not significant.
    const std::vector<double> x{1, 2, 3, 4, 5}, y{2, -3, 4, -5, 1.5};
    CHECK(fit_slope_through_origin(x, y).p_value > 0.05);
}

TEST_CASE("fit_line") {
    std::vector<double> x, y;
    for (int i = 0; i < 20; ++i) {
        x.push_back(i);
        y.push_back(2.0 + 0.5 * i);
    }
    const auto f = fit_line(x, y);
    CHECK(f.slope == doctest::Approx(0.5));
    CHECK(f.intercept == doctest::Approx(2.0));
    CHECK(f.r2 == doctest::Approx(1.0));
}

TEST_CASE("calibrate_band") {
    Grid g(GeoRef{0, 0, 1, 4, 1}, std::vector<float>{89.87f, raster::kNoData, 300.0f, 0.0f});
    const Grid one = calibrate_band(g, 1.0);
    CHECK(one.bit_equal(g));
    const Grid c = calibrate_band(g, 0.8987);
    const float want = 100.0f;
    CHECK(std::abs(c[0] - want) <= std::nextafter(want, 200.0f) - want);
    CHECK(std::isnan(c[1]));
    CHECK(calibrate_band(g, 0.5)[2] == 600.0f); // no clamping
    CHECK_THROWS_AS(calibrate_band(g, 0.0), DegenerateError);
    CHECK_THROWS_AS(calibrate_band(g, -1.0), DegenerateError);
}

TEST_CASE("calibrate_series: identical scenes") {
    auto c = chain_config(0.0);
    c.gains.assign(3, {1, 1, 1});
    const auto gen = synth::gen_series(c);
    const auto cal = calibrate_series(gen.series, gen.truth.invariant_masks, {200, 1});
    REQUIRE(cal.calibration.records.size() == 6);
    for (const auto& r : cal.calibration.records) CHECK(r.fit.slope == 1.0);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t b = 0; b < 3; ++b) CHECK(cal.series[t].band(b).bit_equal(gen.series[t].band(b)));
    }
    CHECK(cal.series[0].scene_id == "t0");
    CHECK(cal.series[1].scene_id == "t1.cal");
}

TEST_CASE("calibrate_series: noiseless chain recovers the configured gains") {
    const auto c = chain_config(0.0);
    const auto gen = synth::gen_series(c);
    const auto cal = calibrate_series(gen.series, gen.truth.invariant_masks, {1000, 1});
    REQUIRE(cal.calibration.records.size() == 18);
    double composed[3] = {1, 1, 1};
    for (const auto& r : cal.calibration.records) {
        const std::size_t t = static_cast<std::size_t>(r.target[1] - '0');
        CHECK(r.fit.slope == doctest::Approx(kSurveyGains[t][r.band] / kSurveyGains[0][r.band]).epsilon(1e-6));
        CHECK(r.fit.r2 == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(r.significant);
        composed[r.band] = r.fit.slope;
    }
    for (std::size_t b = 0; b < 3; ++b) CHECK(composed[b] == doctest::Approx(kSurveyGains[6][b]).epsilon(1e-6));

    // Band order and pair order follow the chain.
    for (std::size_t k = 0; k < 18; ++k) {
        const auto& r = cal.calibration.records[k];
        CHECK(r.band == k % 3);
        CHECK(r.target == "t" + std::to_string(k / 3 + 1));
        CHECK(r.reference == (k < 3 ? std::string("t0") : "t" + std::to_string(k / 3) + ".cal"));
    }

    // Invariant-region means match scene 0.
    for (std::size_t t = 1; t < 7; ++t) {
        const Grid& m = gen.truth.invariant_masks[t - 1];
        for (std::size_t b = 0; b < 3; ++b) {
            double s0 = 0, st = 0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < m.size(); ++i) {
                if (m[i] == 0.0f) continue;
                s0 += gen.series[0].band(b)[i];
                st += cal.series[t].band(b)[i];
                ++n;
            }
            CHECK(std::abs(st - s0) / static_cast<double>(n) <= 1e-3);
        }
    }

    // Calibrating the calibrated series is (nearly) the identity.
    raster::SceneSeries again = cal.series;
    const auto twice = calibrate_series(again, gen.truth.invariant_masks, {1000, 2});
    for (const auto& r : twice.calibration.records) CHECK(std::abs(r.fit.slope - 1.0) <= 1e-6);
}

TEST_CASE("calibrate_series: errors carry context") {
    const auto gen = synth::gen_series(chain_config(0.0));
    std::vector<Grid> masks(gen.truth.invariant_masks.begin(), gen.truth.invariant_masks.begin() + 3);
    CHECK_THROWS_AS(calibrate_series(gen.series, masks, {}), ConfigError);

    raster::SceneSeries series(gen.series.begin(), gen.series.begin() + 2);
    for (float& v : series[1].g.values()) v = 0.0f;
    for (float& v : series[0].g.values()) v = 0.0f;
    try {
        calibrate_series(series, gen.truth.invariant_masks, {100, 1});
        FAIL("expected DegenerateError");
    } catch (const DegenerateError& e) {
        CHECK(std::string(e.what()).find("t0 -> t1 band G") != std::string::npos);
    }
    try {
        calibrate_series(gen.series, gen.truth.invariant_masks, {10000000, 1});
        FAIL("expected SamplingError");
    } catch (const SamplingError& e) {
        CHECK(e.eligible() > 0);
        CHECK(std::string(e.what()).find("t0 -> t1") != std::string::npos);
    }
}

TEST_CASE("calibration_report") {
    testutil::TempDir tmp("calrep");
    SeriesCalibration sc;
    CHECK(calibration_csv(sc) == "reference,target,band,slope,r2,p,n,significant_at_95\n");

    std::vector<double> x, y;
    for (int i = 1; i <= 1000; ++i) {
        x.push_back(i);
        y.push_back(0.8987 * i);
    }
    CalibrationRecord r{"t0", "t1", 0, fit_slope_through_origin(x, y), true};
    sc.records.push_back(r);
    CalibrationRecord weak{"t1.cal", "t2", 1, {}, false};
    weak.fit.slope = 1.1;
    weak.fit.r2 = 0.3;
    weak.fit.p_value = 0.2;
    weak.fit.n = 5;
    sc.records.push_back(weak);
    calibration_report(sc, tmp.path());
    const std::string csv = testutil::slurp(tmp / "calibration.csv");
    // The slope is printed at full round-trip precision; it sits within an ulp or two of 0.8987.
    const auto rows = text::split(csv, '\n');
    REQUIRE(rows.size() >= 3);
    const auto f = text::split(rows[1], ',');
    REQUIRE(f.size() == 8);
    CHECK(f[0] == "t0");
    CHECK(f[1] == "t1");
    CHECK(f[2] == "R");
    CHECK(std::stod(f[3]) == doctest::Approx(0.8987).epsilon(1e-12));
    CHECK(f[4] == "1.0");
    CHECK(f[7] == "true");
    CHECK(csv.find("\nt1.cal,t2,G,1.1,0.3,0.2,5,false\n") != std::string::npos);
    const auto j = nlohmann::json::parse(testutil::slurp(tmp / "calibration.json"));
    CHECK(j.at("records").size() == 2);
    CHECK(j.at("records")[1].at("significant_at_95") == false);
}
