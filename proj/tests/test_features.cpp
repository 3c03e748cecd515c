#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "test_util.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/features.hpp"
#include "spoilcal/segment.hpp"
#include "spoilcal/synth.hpp"

#include <cmath>
#include <map>

using namespace spoilcal;
using namespace spoilcal::features;
using raster::GeoRef;
using raster::Grid;

namespace {

constexpr double kSobelK[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr double kPrewittK[3][3] = {{-1, 0, 1}, {-1, 0, 1}, {-1, 0, 1}};
constexpr double kScharrK[3][3] = {{-3, 0, 3}, {-10, 0, 10}, {-3, 0, 3}};

const Grid& find(const FeatureMapSet& set, const std::string& name) {
    for (const auto& m : set) {
        if (m.name == name) return m.grid;
    }
    FAIL("missing map " << name);
    throw std::logic_error("unreachable");
}

void check_map(const Grid& got, const std::vector<double>& want, double rel) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (std::isnan(want[i])) {
            REQUIRE(std::isnan(got[i]));
            continue;
        }
        REQUIRE(std::abs(got[i] - want[i]) <= rel * std::max(1.0, std::abs(want[i])));
    }
}

Grid checkerboard(std::size_t n, float a, float b) {
    Grid g(GeoRef{0, 0, 1, n, n});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) g.at(r, c) = (r + c) % 2 ? b : a;
    }
    return g;
}

struct SmallScene {
    synth::SynthConfig cfg;
    raster::Scene scene;
    segment::SegmentMap seg;
};

SmallScene small_scene() {
    SmallScene s;
    s.cfg.width = 96;
    s.cfg.height = 96;
    s.cfg.mound_rows = 2;
    s.cfg.mound_cols = 2;
    s.cfg.mound_sigma = 2.0;
    s.cfg.footprint_radius = 5.0;
    s.cfg.cat1.texture_amplitude = 0.1;
    s.cfg.cat2.texture_amplitude = 0.1;
    s.cfg.gains = {{1, 1, 1}};
    const auto gen = synth::gen_series(s.cfg);
    s.scene = gen.series[0];
    s.seg = segment::voronoi_segment(s.scene.dsm, {2.0, 4, std::nullopt});
    return s;
}

} // namespace

TEST_CASE("spectral_maps") {
    GeoRef g{0, 0, 1, 3, 1};
    const Grid r(g, std::vector<float>{100, 120, 5});
    const Grid gg(g, std::vector<float>{100, 60, 0});
    const Grid b(g, std::vector<float>{100, 30, 2});
    const auto m = spectral_maps(r, gg, b);
    REQUIRE(m.size() == 6);
    CHECK(find(m, "rgb_ratio_rg")[0] == 1.0f);
    CHECK(find(m, "rgb_ratio_gb")[0] == 1.0f);
    CHECK(find(m, "rgb_ratio_rb")[0] == 1.0f);
    CHECK(find(m, "rgb_ratio_rg")[1] == 2.0f);
    CHECK(std::isnan(find(m, "rgb_ratio_rg")[2]));
    CHECK(find(m, "rgb_ratio_gb")[2] == 0.0f);
    CHECK(find(m, "R_band").bit_equal(r));
}

TEST_CASE("glcm: constant window") {
    const Grid g(GeoRef{0, 0, 1, 5, 5}, 77.0f);
    const auto f = glcm_at(g, 2, 2);
    CHECK(f.energy == 1.0);
    CHECK(f.entropy == 0.0);
    CHECK(f.inertia == 0.0);
    CHECK(f.idm == 1.0);
    CHECK(f.correlation == 0.0);
    CHECK(f.haralick_correlation == 0.0);
}

TEST_CASE("glcm: 3x3 checkerboard of levels 0 and 15") {
    // Interior window: 12 horizontal/vertical pairs join opposite levels and
    // 8 diagonal pairs join equal levels. Symmetric counts over 40:
    // (0,15) = (15,0) = 12, (0,0) = (15,15) = 8.
    const Grid g = checkerboard(5, 0.0f, 255.0f);
    const auto f = glcm_at(g, 2, 2);
    const double p_off = 12.0 / 40, p_on = 8.0 / 40;
    CHECK(f.energy == doctest::Approx(2 * p_off * p_off + 2 * p_on * p_on));
    CHECK(f.energy == doctest::Approx(0.26));
    CHECK(f.inertia == doctest::Approx(225.0 * 2 * p_off));
    CHECK(f.inertia == doctest::Approx(135.0));
    CHECK(f.idm == doctest::Approx(2 * p_on + 2 * p_off / 226.0));
    const auto o = oracle::glcm(g, 2, 2);
    CHECK(f.energy == doctest::Approx(o.energy).epsilon(1e-12));
}

TEST_CASE("glcm: random grids match the brute-force oracle") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Grid g = oracle::random_grid(16, 16, seed, -20, 280);
        if (seed == 3) {
            for (std::size_t i = 0; i < g.size(); i += 5) g[i] = raster::kNoData;
        }
        const auto maps = glcm_maps(g, "R");
        REQUIRE(maps.size() == 8);
        for (std::size_t r = 0; r < 16; ++r) {
            for (std::size_t c = 0; c < 16; ++c) {
                const auto f = glcm_at(g, r, c);
                const auto o = oracle::glcm(g, static_cast<long>(r), static_cast<long>(c));
                const double got[8] = {f.energy, f.entropy, f.correlation, f.idm, f.inertia, f.cluster_shade,
                                       f.cluster_prominence, f.haralick_correlation};
                const double want[8] = {o.energy, o.entropy, o.correlation, o.idm, o.inertia, o.shade, o.prominence, o.haralick};
                for (std::size_t k = 0; k < 8; ++k) {
                    if (std::isnan(want[k])) {
                        REQUIRE(std::isnan(got[k]));
                        continue;
                    }
                    REQUIRE(std::abs(got[k] - want[k]) <= 1e-9 * std::max(1.0, std::abs(want[k])));
                    const float m = maps[k].grid.at(r, c);
                    REQUIRE(std::abs(m - want[k]) <= 1e-6 * std::max(1.0, std::abs(want[k])));
                }
            }
        }
    }
    CHECK(find(glcm_maps(oracle::random_grid(4, 4, 1), "G"), "G_glcm_energy_q16").size() == 16);
}

TEST_CASE("quantize") {
    CHECK(quantize(-5, 16) == 0);
    CHECK(quantize(15.99, 16) == 0);
    CHECK(quantize(16, 16) == 1);
    CHECK(quantize(255, 16) == 15);
    CHECK(quantize(900, 16) == 15);
}

TEST_CASE("gabor") {
    SUBCASE("odd kernel on a constant image") {
        const Grid g(GeoRef{0, 0, 1, 20, 20}, 200.0f);
        for (double theta : {0.0, oracle::kPi / 4}) {
            const auto k = gabor_kernel(theta, 3.0, oracle::kPi / 2, 0.5);
            double dc = 0;
            for (double v : k) dc += std::abs(v);
            GaborParams p{{theta}, {3.0}, {oracle::kPi / 2}, {0.5}};
            const auto maps = gabor_maps(g, "R", p);
            REQUIRE(maps.size() == 1);
            for (float v : maps[0].grid.values()) CHECK(v <= 1e-6 * 200.0 * dc);
        }
    }
    SUBCASE("grating at wavelength 4 sigma prefers theta 0") {
        // Zero-mean grating: an even kernel also responds to a DC offset,
        // equally for every theta, which would mask the orientation response.
        const double sigma = 3.0;
        Grid g(GeoRef{0, 0, 1, 48, 48});
        for (std::size_t r = 0; r < 48; ++r) {
            for (std::size_t c = 0; c < 48; ++c) g.at(r, c) = static_cast<float>(100 * std::cos(2 * oracle::kPi * c / (4 * sigma)));
        }
        GaborParams p{{0.0, oracle::kPi / 4}, {sigma}, {0.0}, {0.5}};
        const auto maps = gabor_maps(g, "R", p);
        double e0 = 0, e45 = 0;
        for (std::size_t r = 12; r < 36; ++r) {
            for (std::size_t c = 12; c < 36; ++c) {
                e0 += maps[0].grid.at(r, c);
                e45 += maps[1].grid.at(r, c);
            }
        }
        CHECK(e0 > e45);
    }
    SUBCASE("matches direct convolution") {
        const Grid g = oracle::random_grid(16, 16, 4);
        const GaborParams p;
        const auto maps = gabor_maps(g, "B", p);
        REQUIRE(maps.size() == 32);
        for (double theta : p.thetas)
            for (double sigma : p.sigmas)
                for (double psi : p.psis)
                    for (double gamma : p.gammas) {
                        const auto want = oracle::gabor_direct(g, theta, sigma, psi, gamma);
                        check_map(find(maps, gabor_name("B", theta, sigma, psi, gamma)), want, 1e-6);
                    }
        CHECK(gabor_name("G", 0.0, 1.0, 0.78539816339744831, 0.05) == "G_gabor_t0.00_s1_p0.79_g0.05");
    }
}

TEST_CASE("edge maps") {
    SUBCASE("constant image") {
        const Grid g(GeoRef{0, 0, 1, 10, 10}, 90.0f);
        for (const auto& m : edge_maps(g, "R")) {
            for (float v : m.grid.values()) CHECK(v == 0.0f);
        }
    }
    SUBCASE("gradients match stencil oracles") {
        const Grid g = oracle::random_grid(32, 32, 12);
        const auto maps = edge_maps(g, "G");
        REQUIRE(maps.size() == 5);
        check_map(find(maps, "G_edge_sobel"), oracle::gradient3(g, kSobelK), 1e-6);
        check_map(find(maps, "G_edge_prewitt"), oracle::gradient3(g, kPrewittK), 1e-6);
        check_map(find(maps, "G_edge_scharr"), oracle::gradient3(g, kScharrK), 1e-6);
        check_map(find(maps, "G_edge_roberts"), oracle::roberts(g), 1e-6);
        for (float v : find(maps, "G_edge_canny").values()) CHECK((v == 0.0f || v == 1.0f));
    }
    SUBCASE("horizontal step") {
        Grid g(GeoRef{0, 0, 1, 8, 8}, 0.0f);
        for (std::size_t r = 4; r < 8; ++r)
            for (std::size_t c = 0; c < 8; ++c) g.at(r, c) = 255.0f;
        const auto maps = edge_maps(g, "R");
        const Grid& sobel = find(maps, "R_edge_sobel");
        for (std::size_t c = 0; c < 8; ++c) {
            CHECK(sobel.at(3, c) == 1020.0f);
            CHECK(sobel.at(4, c) == 1020.0f);
            CHECK(sobel.at(0, c) == 0.0f);
        }
        // Canny: rows 3 and 4 tie in exact arithmetic, rounding picks one;
        // either way the result is a single full line of width one.
        const Grid& canny = find(maps, "R_edge_canny");
        std::size_t line = canny.at(3, 0) == 1.0f ? 3 : 4;
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t c = 0; c < 8; ++c) CHECK(canny.at(r, c) == (r == line ? 1.0f : 0.0f));
    }
    SUBCASE("weak step stays below the thresholds") {
        Grid g(GeoRef{0, 0, 1, 8, 8}, 0.0f);
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t c = 4; c < 8; ++c) g.at(r, c) = 20.0f;
        const Grid edges = canny(g);
        for (float v : edges.values()) CHECK(v == 0.0f);
    }
}

TEST_CASE("smooth maps") {
    const Grid c(GeoRef{0, 0, 1, 12, 12}, 55.0f);
    for (const auto& m : smooth_maps(c, "R")) {
        for (float v : m.grid.values()) CHECK(std::abs(v - 55.0f) <= 1e-4f);
    }
    Grid imp(GeoRef{0, 0, 1, 7, 7}, 0.0f);
    imp.at(3, 3) = 1000.0f;
    const Grid med = median3(imp);
    for (float v : med.values()) CHECK(v == 0.0f);

    Grid g = oracle::random_grid(32, 32, 13);
    for (std::size_t i = 0; i < g.size(); i += 9) g[i] = raster::kNoData;
    const Grid m = median3(g);
    const auto want = oracle::median3(g);
    for (std::size_t i = 0; i < g.size(); ++i) REQUIRE(static_cast<double>(m[i]) == want[i]);

    const auto maps = smooth_maps(g, "B");
    check_map(find(maps, "B_smooth_gauss_s3"), oracle::gaussian_direct(g, 3.0), 1e-6);
}

TEST_CASE("translation equivariance away from borders") {
    const Grid g = oracle::random_grid(40, 40, 14);
    Grid s(g.georef());
    for (std::size_t r = 0; r < 40; ++r)
        for (std::size_t c = 0; c < 40; ++c) s.at(r, c) = g.at((r + 37) % 40, (c + 38) % 40); // shift by (3, 2)
    const auto e1 = edge_maps(g, "R"), e2 = edge_maps(s, "R");
    GaborParams p{{0.7}, {1.0}, {0.3}, {0.5}};
    const auto g1 = gabor_maps(g, "R", p), g2 = gabor_maps(s, "R", p);
    for (std::size_t r = 8; r < 30; ++r) {
        for (std::size_t c = 8; c < 30; ++c) {
            CHECK(find(e2, "R_edge_sobel").at(r + 3, c + 2) == find(e1, "R_edge_sobel").at(r, c));
            CHECK(g2[0].grid.at(r + 3, c + 2) == doctest::Approx(g1[0].grid.at(r, c)).epsilon(1e-9));
            CHECK(glcm_at(s, r + 3, c + 2).entropy == glcm_at(g, r, c).entropy);
        }
    }
}

TEST_CASE("zonal_stats") {
    GeoRef geo{0, 0, 1, 5, 1};
    const Grid map(geo, std::vector<float>{1, 2, 3, raster::kNoData, 9});
    const Grid labels(geo, std::vector<float>{1, 1, 1, 2, 3});
    const auto z = zonal_stats(map, labels, 4);
    CHECK(z[0].mean == 2.0);
    CHECK(z[0].std == doctest::Approx(std::sqrt(2.0 / 3.0)));
    CHECK(std::isnan(z[1].mean));
    CHECK(std::isnan(z[1].std));
    CHECK(z[2].mean == 9.0);
    CHECK(z[2].std == 0.0);
    CHECK(std::isnan(z[3].mean)); // no cells at all

    const Grid rm = oracle::random_grid(64, 64, 15);
    Grid rl(rm.georef());
    Rng rng(16);
    for (float& v : rl.values()) v = static_cast<float>(rng.below(8));
    const auto zs = zonal_stats(rm, rl, 7);
    for (std::size_t k = 1; k <= 7; ++k) {
        double s = 0, n = 0;
        for (std::size_t i = 0; i < rm.size(); ++i)
            if (rl[i] == static_cast<float>(k)) {
                s += rm[i];
                n += 1;
            }
        const double mean = s / n;
        double ss = 0;
        for (std::size_t i = 0; i < rm.size(); ++i)
            if (rl[i] == static_cast<float>(k)) ss += (rm[i] - mean) * (rm[i] - mean);
        CHECK(std::abs(zs[k - 1].mean - mean) <= 1e-12 * std::abs(mean));
        CHECK(std::abs(zs[k - 1].std - std::sqrt(ss / n)) <= 1e-12 * std::sqrt(ss / n));
    }
    const auto zc = zonal_stats(Grid(rm.georef(), 3.5f), rl, 7);
    for (const auto& s : zc) {
        CHECK(s.mean == 3.5);
        CHECK(s.std == 0.0);
    }
    CHECK_THROWS_AS(zonal_stats(map, Grid(GeoRef{0, 0, 1, 4, 1}), 1), FormatError);
}

TEST_CASE("build_feature_table") {
    const SmallScene s = small_scene();
    REQUIRE(s.seg.segment_count() == 4);
    FeatureConfig cfg;
    const FeatureTable t = build_feature_table(s.scene, s.seg, cfg);
    CHECK(t.columns.size() == 300);
    CHECK(std::is_sorted(t.columns.begin(), t.columns.end()));
    CHECK(t.row_count() == 4);
    CHECK(t.keys[0] == RowKey{"t0", 1});
    for (const auto& row : t.rows) CHECK(row.size() == 300);

    FeatureConfig spectral;
    spectral.families = {Family::Spectral};
    const FeatureTable sp = build_feature_table(s.scene, s.seg, spectral);
    CHECK(sp.columns.size() == 12);
    CHECK(sp.columns.front() == "B_band_mean");

    cfg.jobs = 3;
    const FeatureTable again = build_feature_table(s.scene, s.seg, cfg);
    CHECK(again.columns == t.columns);
    for (std::size_t i = 0; i < t.row_count(); ++i) {
        for (std::size_t j = 0; j < t.columns.size(); ++j) {
            CHECK((again.rows[i][j] == t.rows[i][j] || (std::isnan(again.rows[i][j]) && std::isnan(t.rows[i][j]))));
        }
    }
}

TEST_CASE("feature config JSON") {
    FeatureConfig c;
    c.families = {Family::Edge, Family::Smooth};
    c.glcm_levels = 8;
    const auto back = feature_config_from_json(feature_config_to_json(c));
    CHECK(back.families == c.families);
    CHECK(back.glcm_levels == 8);
    CHECK_THROWS_AS(feature_config_from_json(nlohmann::json{{"glcm_window", 4}}), ConfigError);
    CHECK_THROWS_AS(parse_family("wavelet"), ConfigError);
}

TEST_CASE("join_labels") {
    const SmallScene s = small_scene();
    FeatureConfig spectral;
    spectral.families = {Family::Spectral};
    const FeatureTable t = build_feature_table(s.scene, s.seg, spectral);
    std::vector<TruthPoint> pts;
    const auto mounds = synth::layout_mounds(s.cfg);
    for (const auto& m : mounds) pts.push_back({m.x, m.y, m.category, m.pile_id});
    auto res = join_labels(t, pts, s.seg);
    CHECK(res.warnings.empty());
    REQUIRE(res.labeled.row_count() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto cell = raster::cell_at(s.seg.labels.georef(), mounds[i].x, mounds[i].y);
        const auto k = static_cast<std::size_t>(s.seg.labels.at(cell->row, cell->col));
        for (std::size_t row = 0; row < 4; ++row) {
            if (res.labeled.table.keys[row].segment_id == k) {
                CHECK(res.labeled.labels[row] == mounds[i].category);
                CHECK(res.labeled.pile_ids[row] == mounds[i].pile_id);
            }
        }
    }

    // Background and outside points are reported, not joined.
    pts.push_back({0.1, -0.1, synth::Category::Cat1, "BG"});
    pts.push_back({-50, 50, synth::Category::Cat1, "OUT"});
    res = join_labels(t, pts, s.seg);
    CHECK(res.warnings.size() == 2);
    CHECK(res.labeled.row_count() == 4);

    // A second point in one segment with the other label is a conflict.
    pts.pop_back();
    pts.pop_back();
    auto other = pts[0];
    other.x += 0.3;
    other.pile_id = "X";
    other.label = other.label == synth::Category::Cat1 ? synth::Category::Cat2 : synth::Category::Cat1;
    pts.push_back(other);
    try {
        join_labels(t, pts, s.seg);
        FAIL("expected ConflictError");
    } catch (const ConflictError& e) {
        CHECK(std::string(e.what()).find("segment ") != std::string::npos);
    }
}

TEST_CASE("table CSV round trips") {
    testutil::TempDir tmp("tables");
    const SmallScene s = small_scene();
    FeatureConfig cfg;
    cfg.families = {Family::Spectral, Family::Edge};
    FeatureTable t = build_feature_table(s.scene, s.seg, cfg);
    t.rows[1][2] = std::nan("");
    write_table_csv(t, tmp / "t.csv");
    const FeatureTable back = read_table_csv(tmp / "t.csv");
    CHECK(back.columns == t.columns);
    CHECK(back.keys == t.keys);
    for (std::size_t i = 0; i < t.row_count(); ++i)
        for (std::size_t j = 0; j < t.columns.size(); ++j)
            CHECK((back.rows[i][j] == t.rows[i][j] || (std::isnan(back.rows[i][j]) && std::isnan(t.rows[i][j]))));

    LabeledTable lt;
    lt.table = t;
    for (std::size_t i = 0; i < t.row_count(); ++i) {
        lt.labels.push_back(i % 2 ? synth::Category::Cat2 : synth::Category::Cat1);
        lt.pile_ids.push_back("P0" + std::to_string(i));
    }
    write_labeled_csv(lt, tmp / "l.csv");
    const LabeledTable lb = read_labeled_csv(tmp / "l.csv");
    CHECK(lb.labels == lt.labels);
    CHECK(lb.pile_ids == lt.pile_ids);
    write_labeled_csv(lb, tmp / "l2.csv");
    CHECK(testutil::slurp(tmp / "l.csv") == testutil::slurp(tmp / "l2.csv"));

    const auto both = concat(std::vector<FeatureTable>{t, t});
    CHECK(both.row_count() == 2 * t.row_count());
    FeatureTable narrow = t;
    narrow.columns.pop_back();
    CHECK_THROWS_AS(concat(std::vector<FeatureTable>{t, narrow}), SchemaError);

    testutil::spit(tmp / "truth.csv", "x,y,label,pile_id\n1.5,-2.0,Cat2,P07\n3,4,Cat1,P08\n");
    const auto pts = read_truth_csv(tmp / "truth.csv");
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].label == synth::Category::Cat2);
    CHECK(pts[1].pile_id == "P08");
    testutil::spit(tmp / "bad.csv", "x,y,label\n1,2,Cat1\n");
    CHECK_THROWS_AS(read_truth_csv(tmp / "bad.csv"), FormatError);
    testutil::spit(tmp / "bad2.csv", "x,y,label,pile_id\n1,zz,Cat1,P1\n");
    CHECK_THROWS_AS(read_truth_csv(tmp / "bad2.csv"), FormatError);
    CHECK_THROWS_AS(read_truth_csv(tmp / "missing.csv"), IoError);
}
