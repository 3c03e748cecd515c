#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string err;
};

Run spoilcal(const testutil::TempDir& dir, const std::string& args) {
    const fs::path log = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.path().string() + "' && '" SPOILCAL_CLI "' " + args + " >/dev/null 2>'" + log.string() + "'";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = testutil::slurp(log);
    return r;
}

json small_config() {
    return json::parse(R"({
      "synth": {
        "width": 256, "height": 256, "cell_size": 0.25, "dsm_cell_size": 0.5,
        "mound_rows": 2, "mound_cols": 3, "mound_height": 6.0, "mound_sigma": 3.0, "footprint_radius": 8.0,
        "background": {"rgb": [150, 140, 120], "texture_sigma": 2.0, "texture_amplitude": 0.05},
        "cat1": {"rgb": [110, 100, 90], "texture_sigma": 2.0, "texture_amplitude": 0.05},
        "cat2": {"rgb": [130, 118, 105], "texture_sigma": 2.0, "texture_amplitude": 0.05},
        "gains": [[1.0, 1.0, 1.0], [0.8, 0.85, 0.9], [1.2, 1.1, 1.05]],
        "noise_sigma": 1.0, "seed": 3
      },
      "out": "out",
      "calibration": {"n_points": 300, "alpha": 0.05, "seed": 3},
      "segmentation": {"sigma": 4, "window_radius": 6},
      "features": {"families": ["spectral"]},
      "classifiers": ["lda"],
      "cv": {"k": 3, "stratify": true, "group_by_pile": true, "seed": 3},
      "jobs": 1
    })");
}

// Config reading the synth outputs of `src` as plain inputs.
json explicit_config(const std::string& src, const std::string& truth) {
    json j = small_config();
    j.erase("synth");
    j["scenes"] = {src + "/scenes/t0", src + "/scenes/t1", src + "/scenes/t2"};
    j["masks"] = {src + "/truth/masks/pair_0_1", src + "/truth/masks/pair_1_2"};
    j["truth_csv"] = truth;
    j["out"] = "explicit";
    return j;
}

} // namespace

TEST_CASE("usage errors") {
    testutil::TempDir dir("cli");
    CHECK(spoilcal(dir, "").code == 1);
    CHECK(spoilcal(dir, "--help").code == 0);
    CHECK(spoilcal(dir, "frobnicate --config x.json").code == 1);
    CHECK(spoilcal(dir, "calibrate").code == 1);

    const Run missing = spoilcal(dir, "calibrate --config nope.json");
    CHECK(missing.code == 1);
    CHECK(missing.err.find("nope.json") != std::string::npos);

    testutil::spit(dir / "run.json", small_config().dump());
    CHECK(spoilcal(dir, "synth --config run.json --jobs 0").code == 1);
    CHECK(spoilcal(dir, "train --config run.json --classifier bogus").code == 1);
    CHECK(spoilcal(dir, "train --config run.json --branch sideways").code == 1);
}

TEST_CASE("config errors list every offending field") {
    testutil::TempDir dir("cli");
    testutil::spit(dir / "bad.json", R"({"cv": {"k": "x"}, "jobs": "two", "bogus": 1, "features": {"families": ["nope"]}})");
    const Run r = spoilcal(dir, "calibrate --config bad.json");
    CHECK(r.code == 1);
    for (const char* field : {"cv.k", "jobs", "bogus", "features", "scenes"}) {
        CHECK_MESSAGE(r.err.find(field) != std::string::npos, field);
    }

    testutil::spit(dir / "notjson.json", "{ not json");
    CHECK(spoilcal(dir, "calibrate --config notjson.json").code == 1);
}

TEST_CASE("stepwise commands match the pipeline command") {
    testutil::TempDir dir("cli");
    testutil::spit(dir / "run.json", small_config().dump());

    REQUIRE(spoilcal(dir, "pipeline --config run.json --out whole").code == 0);
    for (const char* step : {"synth", "segment", "calibrate", "features", "evaluate", "train", "classify", "diff", "report"}) {
        const Run r = spoilcal(dir, std::string(step) + " --config run.json --out steps");
        CHECK_MESSAGE(r.code == 0, step, ": ", r.err);
    }
    for (const char* f : {"report/report.json", "report/report.txt", "calibrated/calibration.csv", "calibrated/cv/lda.json",
                          "uncalibrated/cv/lda.json", "calibrated/models/lda.json", "truth/truth.csv"}) {
        CHECK_MESSAGE(testutil::slurp(dir / "whole" / f) == testutil::slurp(dir / "steps" / f), f);
    }

    const json rep = json::parse(testutil::slurp(dir / "whole" / "report" / "report.json"));
    REQUIRE(rep["algorithms"].size() == 1);
    CHECK(rep["algorithms"][0]["model"] == "lda");
    CHECK(rep["changes"]["per_scene"].size() == 3);

    // three scenes, two pairs, three bands
    const std::string csv = testutil::slurp(dir / "whole" / "calibrated" / "calibration.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("explicit inputs, missing truth and warnings") {
    testutil::TempDir dir("cli");
    testutil::spit(dir / "run.json", small_config().dump());
    REQUIRE(spoilcal(dir, "synth --config run.json").code == 0);
    REQUIRE(spoilcal(dir, "calibrate --config run.json").code == 0);

    // same scenes and masks given as paths calibrate identically
    testutil::spit(dir / "explicit.json", explicit_config("out", "out/truth/truth.csv").dump());
    REQUIRE(spoilcal(dir, "calibrate --config explicit.json").code == 0);
    CHECK(testutil::slurp(dir / "out" / "calibrated" / "calibration.csv") ==
          testutil::slurp(dir / "explicit" / "calibrated" / "calibration.csv"));

    testutil::spit(dir / "notruth.json", explicit_config("out", "missing.csv").dump());
    REQUIRE(spoilcal(dir, "segment --config notruth.json").code == 0);
    REQUIRE(spoilcal(dir, "features --config notruth.json").code == 0);
    const Run r = spoilcal(dir, "evaluate --config notruth.json");
    CHECK(r.code == 1);
    CHECK(r.err.find("truth_csv") != std::string::npos);

    // a truth point on bare ground cannot be joined and is reported
    std::string truth = testutil::slurp(dir / "out" / "truth" / "truth.csv");
    truth += "0.5,-0.5,Cat1,PX\n";
    testutil::spit(dir / "extra.csv", truth);
    testutil::spit(dir / "extra.json", explicit_config("out", "extra.csv").dump());
    const Run w = spoilcal(dir, "evaluate --config extra.json --branch uncalibrated");
    CHECK(w.code == 2);
    CHECK(w.err.find("warning:") != std::string::npos);
}

TEST_CASE("seed override is deterministic") {
    testutil::TempDir dir("cli");
    testutil::spit(dir / "run.json", small_config().dump());
    REQUIRE(spoilcal(dir, "pipeline --config run.json --seed 11 --out a").code == 0);
    REQUIRE(spoilcal(dir, "pipeline --config run.json --seed 11 --out b --jobs 2").code == 0);
    for (const char* f : {"report/report.json", "calibrated/calibration.csv", "truth/truth.csv", "scenes/t1/rgb.bin"}) {
        CHECK_MESSAGE(testutil::slurp(dir / "a" / f) == testutil::slurp(dir / "b" / f), f);
    }
    REQUIRE(spoilcal(dir, "synth --config run.json --seed 12 --out c").code == 0);
    CHECK(testutil::slurp(dir / "a" / "scenes/t1/rgb.bin") != testutil::slurp(dir / "c" / "scenes/t1/rgb.bin"));
}
