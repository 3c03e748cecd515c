#include "spoilcal/synth.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/rng.hpp"
#include "spoilcal/segment.hpp"
#include "spoilcal/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

namespace spoilcal::synth {

using nlohmann::json;
using raster::GeoRef;
using raster::Grid;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTextureTag = 0x54455854;
constexpr std::uint64_t kLayoutTag = 0x4C41594F;
constexpr std::uint64_t kNoiseTag = 0x4E4F4953;

// Days since 1970-01-01 to civil date (proleptic Gregorian).
std::string civil_from_days(long z) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const long doe = z - era * 146097;
    const long yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    long y = yoe + era * 400;
    const long doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const long mp = (5 * doy + 2) / 153;
    const long d = doy - (153 * mp + 2) / 5 + 1;
    const long m = mp < 10 ? mp + 3 : mp - 9;
    if (m <= 2) ++y;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04ld-%02ld-%02ld", y, m, d);
    return buf;
}

const Palette& palette_for(const SynthConfig& cfg, int owner_kind) {
    return owner_kind == 0 ? cfg.background : (owner_kind == 1 ? cfg.cat1 : cfg.cat2);
}

json palette_to_json(const Palette& p) {
    return json{{"rgb", p.rgb}, {"texture_sigma", p.texture_sigma}, {"texture_amplitude", p.texture_amplitude}};
}

Palette palette_from_json(const json& j, const Palette& fallback) {
    Palette p = fallback;
    if (j.contains("rgb")) p.rgb = j.at("rgb").get<Rgb>();
    p.texture_sigma = j.value("texture_sigma", p.texture_sigma);
    p.texture_amplitude = j.value("texture_amplitude", p.texture_amplitude);
    return p;
}

// Unit-variance smooth noise field on the RGB grid for one palette entry.
Grid texture_field(const SynthConfig& cfg, int palette_index) {
    const GeoRef geo = cfg.rgb_georef();
    Grid noise(geo, 0.0f);
    Rng rng = Rng::stream(cfg.seed, {kTextureTag, static_cast<std::uint64_t>(palette_index)});
    for (float& v : noise.values()) v = static_cast<float>(rng.normal());
    const Palette& p = palette_for(cfg, palette_index);
    Grid smooth = segment::gaussian_blur(noise, p.texture_sigma);
    // A separable normalized kernel scales white-noise variance by (sum k^2)^2.
    double ss = 0.0;
    for (double k : segment::gaussian_kernel(p.texture_sigma)) ss += k * k;
    for (float& v : smooth.values()) v = static_cast<float>(v / ss);
    return smooth;
}

} // namespace

std::string category_name(Category c) { return c == Category::Cat1 ? "Cat1" : "Cat2"; }

Category parse_category(const std::string& name) {
    if (name == "Cat1" || name == "1") return Category::Cat1;
    if (name == "Cat2" || name == "2") return Category::Cat2;
    throw FormatError("unknown category label: " + name);
}

GeoRef SynthConfig::rgb_georef() const { return GeoRef{origin_x, origin_y, cell_size, width, height}; }

GeoRef SynthConfig::dsm_georef() const {
    const double ext_x = static_cast<double>(width) * cell_size;
    const double ext_y = static_cast<double>(height) * cell_size;
    return GeoRef{origin_x, origin_y, dsm_cell_size,
                  std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ext_x / dsm_cell_size))),
                  std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ext_y / dsm_cell_size)))};
}

std::string SynthConfig::date_label(std::size_t t) const {
    if (t < dates.size()) return dates[t];
    // 2023-01-01 is day 19358 of the Unix epoch; one acquisition per week.
    return civil_from_days(19358 + 7 * static_cast<long>(t));
}

void SynthConfig::validate() const {
    std::vector<std::string> problems;
    if (width < 1 || height < 1) problems.push_back("width/height must be >= 1");
    if (!(cell_size > 0.0)) problems.push_back("cell_size must be > 0");
    if (!(dsm_cell_size > 0.0)) problems.push_back("dsm_cell_size must be > 0");
    if (mound_count() / 2 < 2) problems.push_back("mound_rows*mound_cols must give >= 2 mounds per category");
    if (!(mound_sigma > 0.0)) problems.push_back("mound_sigma must be > 0");
    if (!(mound_height > 0.0)) problems.push_back("mound_height must be > 0");
    if (gains.empty()) problems.push_back("gains must list at least one date");
    for (std::size_t t = 0; t < gains.size(); ++t) {
        for (double g : gains[t]) {
            if (!(g > 0.0) || !std::isfinite(g)) {
                problems.push_back("gains[" + std::to_string(t) + "] must be positive");
                break;
            }
        }
    }
    if (!dates.empty() && dates.size() != gains.size()) problems.push_back("dates must match the number of gain rows");
    if (!(noise_sigma >= 0.0)) problems.push_back("noise_sigma must be >= 0");
    for (const Palette* p : {&background, &cat1, &cat2}) {
        if (!(p->texture_sigma > 0.0)) problems.push_back("texture_sigma must be > 0");
        if (!(p->texture_amplitude >= 0.0)) problems.push_back("texture_amplitude must be >= 0");
    }
    for (const NewMound& nm : new_mounds) {
        if (nm.mound >= mound_count()) problems.push_back("new_mounds: mound index " + std::to_string(nm.mound) + " out of range");
        if (nm.date >= gains.size()) problems.push_back("new_mounds: date index " + std::to_string(nm.date) + " out of range");
    }
    if (!problems.empty()) {
        std::string msg = "invalid synth config:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
}

SynthConfig config_from_json(const json& j) {
    SynthConfig c;
    try {
        c.width = j.value("width", c.width);
        c.height = j.value("height", c.height);
        c.cell_size = j.value("cell_size", c.cell_size);
        c.dsm_cell_size = j.value("dsm_cell_size", c.dsm_cell_size);
        c.origin_x = j.value("origin_x", c.origin_x);
        c.origin_y = j.value("origin_y", c.origin_y);
        c.mound_rows = j.value("mound_rows", c.mound_rows);
        c.mound_cols = j.value("mound_cols", c.mound_cols);
        c.mound_height = j.value("mound_height", c.mound_height);
        c.mound_sigma = j.value("mound_sigma", c.mound_sigma);
        c.footprint_radius = j.value("footprint_radius", c.footprint_radius);
        c.jitter = j.value("jitter", c.jitter);
        if (j.contains("background")) c.background = palette_from_json(j.at("background"), c.background);
        if (j.contains("cat1")) c.cat1 = palette_from_json(j.at("cat1"), c.cat1);
        if (j.contains("cat2")) c.cat2 = palette_from_json(j.at("cat2"), c.cat2);
        if (j.contains("gains")) c.gains = j.at("gains").get<std::vector<Rgb>>();
        if (j.contains("dates")) c.dates = j.at("dates").get<std::vector<std::string>>();
        c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
        if (j.contains("new_mounds")) {
            c.new_mounds.clear();
            for (const auto& e : j.at("new_mounds")) {
                c.new_mounds.push_back({e.at("mound").get<std::size_t>(), e.at("date").get<std::size_t>()});
            }
        }
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid synth config: ") + e.what());
    }
    return c;
}

json config_to_json(const SynthConfig& c) {
    json nm = json::array();
    for (const auto& m : c.new_mounds) nm.push_back({{"mound", m.mound}, {"date", m.date}});
    return json{{"width", c.width},
                {"height", c.height},
                {"cell_size", c.cell_size},
                {"dsm_cell_size", c.dsm_cell_size},
                {"origin_x", c.origin_x},
                {"origin_y", c.origin_y},
                {"mound_rows", c.mound_rows},
                {"mound_cols", c.mound_cols},
                {"mound_height", c.mound_height},
                {"mound_sigma", c.mound_sigma},
                {"footprint_radius", c.footprint_radius},
                {"jitter", c.jitter},
                {"background", palette_to_json(c.background)},
                {"cat1", palette_to_json(c.cat1)},
                {"cat2", palette_to_json(c.cat2)},
                {"gains", c.gains},
                {"dates", c.dates},
                {"noise_sigma", c.noise_sigma},
                {"new_mounds", nm},
                {"seed", c.seed}};
}

std::vector<Mound> layout_mounds(const SynthConfig& cfg) {
    const std::size_t n = cfg.mound_count();
    std::vector<Category> cats(n, Category::Cat2);
    std::fill(cats.begin(), cats.begin() + static_cast<std::ptrdiff_t>((n + 1) / 2), Category::Cat1);
    Rng rng = Rng::stream(cfg.seed, {kLayoutTag});
    for (std::size_t i = n; i > 1; --i) std::swap(cats[i - 1], cats[rng.below(i)]);

    const double ext_x = static_cast<double>(cfg.width) * cfg.cell_size;
    const double ext_y = static_cast<double>(cfg.height) * cfg.cell_size;
    std::vector<Mound> mounds;
    mounds.reserve(n);
    for (std::size_t r = 0; r < cfg.mound_rows; ++r) {
        for (std::size_t c = 0; c < cfg.mound_cols; ++c) {
            Mound m;
            m.id = mounds.size();
            char buf[64];
            std::snprintf(buf, sizeof(buf), "P%02zu", m.id);
            m.pile_id = buf;
            m.x = cfg.origin_x + (static_cast<double>(c) + 0.5) * ext_x / static_cast<double>(cfg.mound_cols);
            m.y = cfg.origin_y - (static_cast<double>(r) + 0.5) * ext_y / static_cast<double>(cfg.mound_rows);
            if (cfg.jitter > 0.0) {
                m.x += rng.uniform(-cfg.jitter, cfg.jitter);
                m.y += rng.uniform(-cfg.jitter, cfg.jitter);
            }
            m.category = cats[m.id];
            mounds.push_back(m);
        }
    }
    for (const NewMound& nm : cfg.new_mounds) {
        if (nm.mound < mounds.size()) mounds[nm.mound].first_date = nm.date;
    }
    return mounds;
}

Grid gen_dsm(const SynthConfig& cfg, std::size_t date) {
    const GeoRef geo = cfg.dsm_georef();
    Grid dsm(geo, 0.0f);
    const auto mounds = layout_mounds(cfg);
    const double two_s2 = 2.0 * cfg.mound_sigma * cfg.mound_sigma;
    for (std::size_t r = 0; r < geo.height; ++r) {
        const double y = geo.center_y(r);
        for (std::size_t c = 0; c < geo.width; ++c) {
            const double x = geo.center_x(c);
            double z = 0.0;
            for (const Mound& m : mounds) {
                if (!m.present_at(date)) continue;
                const double d2 = (x - m.x) * (x - m.x) + (y - m.y) * (y - m.y);
                z += cfg.mound_height * std::exp(-d2 / two_s2);
            }
            dsm.at(r, c) = static_cast<float>(z);
        }
    }
    return dsm;
}

Grid owner_map(const SynthConfig& cfg, std::size_t date) {
    const GeoRef geo = cfg.rgb_georef();
    Grid owner(geo, 0.0f);
    const auto mounds = layout_mounds(cfg);
    const double r2max = cfg.owned_radius() * cfg.owned_radius();
    for (std::size_t r = 0; r < geo.height; ++r) {
        const double y = geo.center_y(r);
        for (std::size_t c = 0; c < geo.width; ++c) {
            const double x = geo.center_x(c);
            double best = r2max;
            std::size_t best_id = 0;
            for (const Mound& m : mounds) {
                if (!m.present_at(date)) continue;
                const double d2 = (x - m.x) * (x - m.x) + (y - m.y) * (y - m.y);
                if (d2 <= best && (best_id == 0 || d2 < best)) {
                    best = d2;
                    best_id = m.id + 1;
                }
            }
            owner.at(r, c) = static_cast<float>(best_id);
        }
    }
    return owner;
}

std::array<Grid, 3> gen_rgb(const SynthConfig& cfg, std::size_t date) {
    const GeoRef geo = cfg.rgb_georef();
    const Grid owner = owner_map(cfg, date);
    const auto mounds = layout_mounds(cfg);

    std::array<std::optional<Grid>, 3> textures;
    for (int k = 0; k < 3; ++k) {
        if (palette_for(cfg, k).texture_amplitude > 0.0) textures[static_cast<std::size_t>(k)] = texture_field(cfg, k);
    }
    std::array<Grid, 3> out{Grid(geo), Grid(geo), Grid(geo)};
    for (std::size_t i = 0; i < geo.cell_count(); ++i) {
        const auto id = static_cast<std::size_t>(owner[i]);
        const int kind = id == 0 ? 0 : static_cast<int>(mounds[id - 1].category);
        const Palette& p = palette_for(cfg, kind);
        double factor = 1.0;
        if (const auto& t = textures[static_cast<std::size_t>(kind)]) factor += p.texture_amplitude * (*t)[i];
        for (std::size_t b = 0; b < 3; ++b) out[b][i] = static_cast<float>(p.rgb[b] * factor);
    }
    return out;
}

std::array<Grid, 3> apply_gains(const std::array<Grid, 3>& rgb, const Rgb& gains, double noise_sigma, std::uint64_t seed) {
    for (double g : gains) {
        if (!(g > 0.0)) throw Error("apply_gains: gains must be positive");
    }
    std::array<Grid, 3> out = rgb;
    for (std::size_t b = 0; b < 3; ++b) {
        Rng rng = Rng::stream(seed, {kNoiseTag, b});
        for (float& v : out[b].values()) {
            if (std::isnan(v)) continue;
            double x = gains[b] * static_cast<double>(v);
            if (noise_sigma > 0.0) x += noise_sigma * rng.normal();
            v = static_cast<float>(std::clamp(x, 0.0, 255.0));
        }
    }
    return out;
}

Generated gen_series(const SynthConfig& cfg) {
    cfg.validate();
    Generated gen;
    gen.truth.mounds = layout_mounds(cfg);
    gen.truth.gains = cfg.gains;
    std::vector<Grid> owners;
    for (std::size_t t = 0; t < cfg.date_count(); ++t) {
        raster::Scene s;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "t%zu", t);
        s.scene_id = buf;
        s.timestamp = cfg.date_label(t);
        const auto truth_rgb = gen_rgb(cfg, t);
        const std::uint64_t date_seed = splitmix64(cfg.seed ^ splitmix64(t + 1));
        auto bands = apply_gains(truth_rgb, cfg.gains[t], cfg.noise_sigma, date_seed);
        s.r = std::move(bands[0]);
        s.g = std::move(bands[1]);
        s.b = std::move(bands[2]);
        s.dsm = gen_dsm(cfg, t);
        gen.series.push_back(std::move(s));
        owners.push_back(owner_map(cfg, t));
    }
    for (std::size_t t = 1; t < cfg.date_count(); ++t) {
        Grid mask(cfg.rgb_georef(), 0.0f);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (owners[t - 1][i] > 0.0f && owners[t - 1][i] == owners[t][i]) mask[i] = 1.0f;
        }
        gen.truth.invariant_masks.push_back(std::move(mask));
    }
    raster::validate_series(gen.series);
    return gen;
}

void export_truth(const GroundTruth& truth, const SynthConfig& cfg, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    json mounds = json::array();
    for (const Mound& m : truth.mounds) {
        mounds.push_back({{"id", m.id},
                          {"pile_id", m.pile_id},
                          {"x", m.x},
                          {"y", m.y},
                          {"category", category_name(m.category)},
                          {"first_date", m.first_date}});
    }
    std::vector<std::string> dates;
    for (std::size_t t = 0; t < cfg.date_count(); ++t) dates.push_back(cfg.date_label(t));
    json j{{"mounds", mounds}, {"gains", truth.gains}, {"dates", dates}};
    {
        std::ofstream out(dir / "truth.json");
        if (!out) throw IoError("cannot write file: " + (dir / "truth.json").string());
        out << j.dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "truth.csv");
        if (!out) throw IoError("cannot write file: " + (dir / "truth.csv").string());
        out << "x,y,label,pile_id\n";
        for (const Mound& m : truth.mounds) {
            out << text::fmt_double(m.x) << ',' << text::fmt_double(m.y) << ',' << category_name(m.category) << ','
                << m.pile_id << '\n';
        }
    }
    for (std::size_t p = 0; p < truth.invariant_masks.size(); ++p) {
        const std::string name = "pair_" + std::to_string(p) + "_" + std::to_string(p + 1);
        raster::save_grid(truth.invariant_masks[p], name, dir / "masks" / name);
    }
}

} // namespace spoilcal::synth
