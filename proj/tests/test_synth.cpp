#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/segment.hpp"
#include "spoilcal/synth.hpp"

#include <cmath>
#include <set>

using namespace spoilcal;
using namespace spoilcal::synth;
using raster::Grid;

namespace {

SynthConfig small_config() {
    SynthConfig c;
    c.width = 128;
    c.height = 96;
    c.cell_size = 0.25;
    c.dsm_cell_size = 0.5;
    c.mound_rows = 3;
    c.mound_cols = 4;
    c.mound_sigma = 1.2;
    c.footprint_radius = 3.0;
    c.gains = {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
    return c;
}

} // namespace

TEST_CASE("gen_dsm: no mounds gives a flat zero surface") {
    SynthConfig c = small_config();
    c.mound_rows = 0;
    const Grid dsm = gen_dsm(c, 0);
    for (float v : dsm.values()) CHECK(v == 0.0f);
}

TEST_CASE("gen_dsm: single mound peaks at its height") {
    SynthConfig c = small_config();
    c.mound_rows = 1;
    c.mound_cols = 1;
    const Grid dsm = gen_dsm(c, 0);
    float peak = 0.0f;
    for (float v : dsm.values()) peak = std::max(peak, v);
    // Peak cell center is at most half a cell diagonal from the mound center.
    const double d2 = 2.0 * 0.25 * 0.25;
    CHECK(peak <= c.mound_height);
    CHECK(peak >= c.mound_height * std::exp(-d2 / (2 * c.mound_sigma * c.mound_sigma)) - 1e-6);
}

TEST_CASE("gen_dsm: two distant mounds give two local maxima at the closed-form peaks") {
    SynthConfig c;
    c.width = 160;
    c.height = 64;
    c.mound_rows = 1;
    c.mound_cols = 2;
    c.mound_sigma = 2.0;
    c.jitter = 1.3;
    c.seed = 5;
    const Grid dsm = gen_dsm(c, 0);
    const auto mounds = layout_mounds(c);
    const auto geo = dsm.georef();

    // Oracle: argmax of the closed-form surface over each half of the grid.
    std::set<raster::CellIndex> expect;
    for (std::size_t half = 0; half < 2; ++half) {
        double best = -1.0;
        raster::CellIndex arg;
        for (std::size_t r = 0; r < geo.height; ++r) {
            for (std::size_t col = half * geo.width / 2; col < (half + 1) * geo.width / 2; ++col) {
                double z = 0.0;
                for (const auto& m : mounds) {
                    const double dx = geo.center_x(col) - m.x, dy = geo.center_y(r) - m.y;
                    z += c.mound_height * std::exp(-(dx * dx + dy * dy) / (2 * c.mound_sigma * c.mound_sigma));
                }
                if (z > best) {
                    best = z;
                    arg = {r, col};
                }
            }
        }
        expect.insert(arg);
    }
    const auto seeds = segment::detect_local_maxima(dsm, 8, 1.0);
    REQUIRE(seeds.size() == 2);
    std::set<raster::CellIndex> got{seeds[0].cell, seeds[1].cell};
    CHECK(got == expect);
}

TEST_CASE("gen_rgb: zero texture gives piecewise-constant palette colors") {
    SynthConfig c = small_config();
    const auto rgb = gen_rgb(c, 0);
    const Grid owner = owner_map(c, 0);
    const auto mounds = layout_mounds(c);
    for (std::size_t i = 0; i < owner.size(); ++i) {
        const auto id = static_cast<std::size_t>(owner[i]);
        const Rgb& want = id == 0 ? c.background.rgb
                                  : (mounds[id - 1].category == Category::Cat1 ? c.cat1.rgb : c.cat2.rgb);
        for (std::size_t b = 0; b < 3; ++b) REQUIRE(rgb[b][i] == static_cast<float>(want[b]));
    }
}

TEST_CASE("gen_rgb: deterministic per seed, different across seeds") {
    SynthConfig c = small_config();
    c.cat1.texture_amplitude = 0.1;
    c.cat2.texture_amplitude = 0.1;
    c.background.texture_amplitude = 0.05;
    const auto a = gen_rgb(c, 1), b = gen_rgb(c, 1);
    for (std::size_t k = 0; k < 3; ++k) CHECK(a[k].bit_equal(b[k]));
    c.seed = 2;
    CHECK_FALSE(gen_rgb(c, 1)[0].bit_equal(a[0]));
}

TEST_CASE("gen_rgb: category means match the configured palette delta") {
    SynthConfig c;
    // Texture is spatially correlated, so the sample needs many more cells
    // than 1e4 for the mean to settle within half a DN.
    c.width = 1024;
    c.height = 1024;
    c.mound_rows = 4;
    c.mound_cols = 4;
    c.mound_sigma = 10.0;
    c.footprint_radius = 28.0;
    c.cat1 = {{110, 100, 90}, 2.0, 0.08};
    c.cat2 = {{121, 110, 99}, 2.0, 0.08};
    c.seed = 4;
    const auto rgb = gen_rgb(c, 0);
    const Grid owner = owner_map(c, 0);
    const auto mounds = layout_mounds(c);
    for (std::size_t b = 0; b < 3; ++b) {
        double s1 = 0, s2 = 0;
        std::size_t n1 = 0, n2 = 0;
        for (std::size_t i = 0; i < owner.size(); ++i) {
            const auto id = static_cast<std::size_t>(owner[i]);
            if (id == 0) continue;
            if (mounds[id - 1].category == Category::Cat1) {
                s1 += rgb[b][i];
                ++n1;
            } else {
                s2 += rgb[b][i];
                ++n2;
            }
        }
        REQUIRE(n1 >= 10000);
        REQUIRE(n2 >= 10000);
        const double delta = s2 / static_cast<double>(n2) - s1 / static_cast<double>(n1);
        CHECK(std::abs(delta - (c.cat2.rgb[b] - c.cat1.rgb[b])) <= 0.5);
    }
}

TEST_CASE("apply_gains") {
    raster::GeoRef g{0, 0, 1, 2, 1};
    std::array<Grid, 3> in{Grid(g, 100.0f), Grid(g, 200.0f), Grid(g, 37.5f)};
    const auto id = apply_gains(in, {1, 1, 1}, 0.0, 1);
    for (std::size_t b = 0; b < 3; ++b) CHECK(id[b].bit_equal(in[b]));
    const auto out = apply_gains(in, {0.8987, 2.0, 1.0}, 0.0, 1);
    CHECK(out[0][0] == doctest::Approx(89.87).epsilon(1e-7));
    CHECK(out[1][0] == 255.0f);
    CHECK_THROWS(apply_gains(in, {0.0, 1, 1}, 0.0, 1));
    const auto n1 = apply_gains(in, {1, 1, 1}, 2.0, 9), n2 = apply_gains(in, {1, 1, 1}, 2.0, 9);
    CHECK(n1[0].bit_equal(n2[0]));
    CHECK_FALSE(n1[0].bit_equal(in[0]));
}

TEST_CASE("gen_series: unit gains and no noise keep invariant regions identical") {
    SynthConfig c = small_config();
    c.gains.assign(7, {1, 1, 1});
    const auto gen = gen_series(c);
    REQUIRE(gen.series.size() == 7);
    REQUIRE(gen.truth.invariant_masks.size() == 6);
    for (std::size_t t = 1; t < 7; ++t) {
        const Grid& m = gen.truth.invariant_masks[t - 1];
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m[i] == 0.0f) continue;
            for (std::size_t b = 0; b < 3; ++b) REQUIRE(gen.series[t].band(b)[i] == gen.series[0].band(b)[i]);
        }
    }
    CHECK(gen.series[0].scene_id == "t0");
    CHECK(gen.series[0].timestamp == "2023-01-01");
    CHECK(gen.series[1].timestamp == "2023-01-08");
}

TEST_CASE("gen_series: masked cells carry the pair gain ratio exactly") {
    SynthConfig c = small_config();
    c.cat1.texture_amplitude = 0.1;
    c.cat2.texture_amplitude = 0.1;
    c.gains = {{1, 1, 1}, {0.8987, 0.8567, 0.8172}, {1.0245, 1.0095, 0.9645}};
    const auto gen = gen_series(c);
    for (std::size_t t = 1; t < 3; ++t) {
        const Grid& m = gen.truth.invariant_masks[t - 1];
        std::size_t checked = 0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m[i] == 0.0f) continue;
            for (std::size_t b = 0; b < 3; ++b) {
                const double ratio = static_cast<double>(gen.series[t].band(b)[i]) / gen.series[t - 1].band(b)[i];
                REQUIRE(ratio == doctest::Approx(c.gains[t][b] / c.gains[t - 1][b]).epsilon(2e-7));
            }
            ++checked;
        }
        CHECK(checked > 1000);
    }
}

TEST_CASE("gen_series: a new mound is excluded from masks until present in both scenes") {
    SynthConfig c = small_config();
    c.gains.assign(5, {1, 1, 1});
    c.new_mounds = {{5, 3}};
    const auto gen = gen_series(c);
    const Grid owner = owner_map(c, 4);
    for (std::size_t p = 0; p < 4; ++p) {
        const Grid& m = gen.truth.invariant_masks[p];
        bool any = false;
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (owner[i] == 6.0f && m[i] != 0.0f) any = true;
        }
        CHECK(any == (p >= 3)); // pair (3,4) is the first with the mound in both scenes
    }
    CHECK(gen.truth.mounds[5].first_date == 3);
}

TEST_CASE("layout: balanced categories and determinism") {
    SynthConfig c = small_config();
    const auto a = layout_mounds(c), b = layout_mounds(c);
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].category == b[i].category);
        n1 += a[i].category == Category::Cat1;
    }
    CHECK(n1 == 6);
    CHECK(a.size() == 12);
    const auto s1 = gen_series(c), s2 = gen_series(c);
    for (std::size_t t = 0; t < s1.series.size(); ++t) CHECK(s1.series[t].bit_equal(s2.series[t]));
}

TEST_CASE("config validation and JSON round trip") {
    SynthConfig c = small_config();
    c.new_mounds = {{1, 2}};
    c.noise_sigma = 1.5;
    const SynthConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));

    SynthConfig bad = small_config();
    bad.gains[1][2] = -1.0;
    bad.noise_sigma = -1.0;
    bad.mound_rows = 1;
    bad.mound_cols = 2;
    try {
        bad.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("gains[1]") != std::string::npos);
        CHECK(msg.find("noise_sigma") != std::string::npos);
        CHECK(msg.find("per category") != std::string::npos);
    }
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"width", "wide"}}), ConfigError);
    CHECK(parse_category("Cat2") == Category::Cat2);
    CHECK_THROWS_AS(parse_category("Cat3"), FormatError);
}

TEST_CASE("export_truth writes mounds, gains and masks") {
    testutil::TempDir tmp("truth");
    SynthConfig c = small_config();
    const auto gen = gen_series(c);
    export_truth(gen.truth, c, tmp.path());
    const auto j = nlohmann::json::parse(testutil::slurp(tmp / "truth.json"));
    CHECK(j.at("mounds").size() == 12);
    CHECK(j.at("gains").size() == 3);
    const std::string csv = testutil::slurp(tmp / "truth.csv");
    CHECK(csv.rfind("x,y,label,pile_id\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
    CHECK(raster::load_grid(tmp / "masks" / "pair_0_1").bit_equal(gen.truth.invariant_masks[0]));
}
