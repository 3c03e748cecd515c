#pragma once

#include "spoilcal/raster.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace spoilcal::synth {

using Rgb = std::array<double, 3>;

enum class Category { Cat1 = 1, Cat2 = 2 };

std::string category_name(Category c);
Category parse_category(const std::string& name);

// Surface appearance of one class of terrain. Texture is multiplicative:
// value = rgb * (1 + texture_amplitude * T), T a unit-variance field made by
// blurring white noise with texture_sigma (cells).
struct Palette {
    Rgb rgb{128.0, 128.0, 128.0};
    double texture_sigma = 2.0;
    double texture_amplitude = 0.0;
};

struct NewMound {
    std::size_t mound = 0; // row-major index into the mound grid
    std::size_t date = 0;  // first date index the mound exists
};

struct SynthConfig {
    std::size_t width = 512;
    std::size_t height = 512;
    double cell_size = 0.25;
    double dsm_cell_size = 0.50;
    double origin_x = 0.0;
    double origin_y = 0.0;

    std::size_t mound_rows = 3;
    std::size_t mound_cols = 4;
    double mound_height = 8.0;     // m
    double mound_sigma = 5.0;      // m, Gaussian footprint
    double footprint_radius = 0.0; // m, colored area around a center; 0 -> 2 * mound_sigma
    double jitter = 0.0;           // m, uniform center perturbation

    Palette background{{150.0, 140.0, 120.0}, 2.0, 0.0};
    Palette cat1{{110.0, 100.0, 90.0}, 2.0, 0.0};
    Palette cat2{{121.0, 110.0, 99.0}, 2.0, 0.0};

    // gains[t][band]; the number of dates is gains.size().
    std::vector<Rgb> gains{{1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}};
    std::vector<std::string> dates; // ISO-8601; empty -> weekly from 2023-01-01
    double noise_sigma = 0.0;
    std::vector<NewMound> new_mounds;
    std::uint64_t seed = 1;

    std::size_t date_count() const { return gains.size(); }
    std::size_t mound_count() const { return mound_rows * mound_cols; }
    double owned_radius() const { return footprint_radius > 0.0 ? footprint_radius : 2.0 * mound_sigma; }
    raster::GeoRef rgb_georef() const;
    raster::GeoRef dsm_georef() const;
    std::string date_label(std::size_t t) const;

    // Throws ConfigError listing every offending field.
    void validate() const;
};

SynthConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const SynthConfig& cfg);

struct Mound {
    std::size_t id = 0;
    std::string pile_id;
    double x = 0.0; // world m
    double y = 0.0;
    Category category = Category::Cat1;
    std::size_t first_date = 0;

    bool present_at(std::size_t t) const { return first_date <= t; }
};

struct GroundTruth {
    std::vector<Mound> mounds;
    std::vector<Rgb> gains;
    std::vector<raster::Grid> invariant_masks; // pair (t-1, t) at index t-1, RGB grid
};

// Mound layout for a configuration; deterministic per seed.
std::vector<Mound> layout_mounds(const SynthConfig& cfg);

raster::Grid gen_dsm(const SynthConfig& cfg, std::size_t date);
// Per RGB cell: 0 for background, mound id + 1 for the owning mound.
raster::Grid owner_map(const SynthConfig& cfg, std::size_t date);
std::array<raster::Grid, 3> gen_rgb(const SynthConfig& cfg, std::size_t date);
std::array<raster::Grid, 3> apply_gains(const std::array<raster::Grid, 3>& rgb, const Rgb& gains, double noise_sigma,
                                        std::uint64_t seed);

struct Generated {
    raster::SceneSeries series;
    GroundTruth truth;
};

Generated gen_series(const SynthConfig& cfg);

// truth.json (mounds, gains), truth.csv (x,y,label,pile_id) and one mask
// container per consecutive pair under dir/masks/.
void export_truth(const GroundTruth& truth, const SynthConfig& cfg, const std::filesystem::path& dir);

} // namespace spoilcal::synth
