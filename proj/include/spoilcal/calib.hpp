#pragma once

#include "spoilcal/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace spoilcal::calib {

struct RegressionFit {
    double slope = 0.0;
    double intercept = 0.0; // always 0 for the through-origin model
    double r2 = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
    double residual_ss = 0.0;
};

struct CalibrationRecord {
    std::string reference; // scene id of the (calibrated) reference
    std::string target;    // scene id of the uncalibrated target
    std::size_t band = 0;  // 0 R, 1 G, 2 B
    RegressionFit fit;
    bool significant = true; // p < alpha
};

struct SeriesCalibration {
    std::vector<CalibrationRecord> records;
    std::size_t n_points = 0;
    std::uint64_t seed = 0;
    double alpha = 0.05;

    bool all_significant() const;
};

struct SamplePairs {
    std::vector<double> x; // reference DN
    std::vector<double> y; // target DN
};

// Cells where the mask is set and both bands are valid are eligible; n of
// them are drawn without replacement. All three grids must share a GeoRef.
SamplePairs collect_invariant_pairs(const raster::Grid& ref_band, const raster::Grid& target_band,
                                    const raster::Grid& invariant_mask, std::size_t n, std::uint64_t seed);

// Least squares through the origin, y = slope * x. R^2 uses the uncentered
// total sum of squares; p is the two-sided Student-t test of the slope with
// n - 1 degrees of freedom.
RegressionFit fit_slope_through_origin(std::span<const double> x, std::span<const double> y);

// Ordinary least squares with intercept (centered R^2, df = n - 2).
RegressionFit fit_line(std::span<const double> x, std::span<const double> y);

// Two-sided p-value of a t statistic with df degrees of freedom.
double two_sided_t_pvalue(double t, double df);

// (band - intercept) / slope on every valid cell; NaN preserved, no clamping.
raster::Grid calibrate_band(const raster::Grid& band, double slope, double intercept = 0.0);

struct CalibrationParams {
    std::size_t n_points = 1000;
    std::uint64_t seed = 1;
    double alpha = 0.05;
    bool with_intercept = false;
};

struct CalibratedSeries {
    raster::SceneSeries series;
    SeriesCalibration calibration;
};

// Scene 0 is the reference and passes through. Scene i is fitted band by band
// against the calibrated scene i-1 on invariant_masks[i-1], then divided by
// the slope. Calibrated scene ids get the ".cal" suffix. One spatial sample
// per pair is shared by the three bands.
CalibratedSeries calibrate_series(const raster::SceneSeries& series, const std::vector<raster::Grid>& invariant_masks,
                                  const CalibrationParams& params = {});

// Writes calibration.csv and calibration.json into dir.
void calibration_report(const SeriesCalibration& sc, const std::filesystem::path& dir);
std::string calibration_csv(const SeriesCalibration& sc);

} // namespace spoilcal::calib
