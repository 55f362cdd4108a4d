#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crl/stereo_ops.hpp"

namespace crl {

struct CameraGeometry {
    double focal_length = 0.0;  // pixels
    double baseline = 0.0;      // meters
};

enum class ThreePEMode { Plain, Kitti };

// Mean absolute disparity error over valid pixels (the Euclidean distance of
// a scalar quantity). Returns nullopt when no pixel is valid.
std::optional<double> epe(const DisparityMap& pred, const DisparityMap& gt,
                          const std::uint8_t* extra_mask = nullptr);

// Percentage of valid pixels whose endpoint error exceeds 3 (strict).
// Kitti mode additionally requires error > 5% of |gt|; the two definitions
// must never be conflated, so the mode is always explicit at the call site.
std::optional<double> three_pixel_error(const DisparityMap& pred, const DisparityMap& gt,
                                        const std::uint8_t* extra_mask = nullptr,
                                        ThreePEMode mode = ThreePEMode::Plain);

std::int64_t count_valid(const DisparityMap& pred, const DisparityMap& gt,
                         const std::uint8_t* extra_mask = nullptr);

// depth = f*l/d; throws std::domain_error for d <= 0.
double disparity_to_depth(double disparity, const CameraGeometry& cam);
double depth_to_disparity(double depth, const CameraGeometry& cam);

struct EvalEntry {
    std::string method;
    std::string id;
    double epe = 0.0;
    double three_pe = 0.0;  // percent
    std::int64_t valid_px = 0;
    double wall_ms = 0.0;
};

struct EvalAggregate {
    std::string method;
    double epe = 0.0;       // valid-pixel-weighted mean
    double three_pe = 0.0;  // valid-pixel-weighted mean
    std::int64_t valid_px = 0;
    double wall_ms = 0.0;  // mean per sample
};

struct EvalReport {
    std::vector<EvalEntry> per_sample;
    std::vector<EvalAggregate> aggregates;  // one per method, in first-seen order
};

// Aggregates are pixel-weighted so sparse-GT samples count proportionally.
EvalReport make_report(const std::vector<EvalEntry>& entries);

// CSV schema: header, one row per (method, sample), footer aggregate rows
// with id = "ALL". Numbers round-trip exactly.
std::string report_csv(const EvalReport& report);
std::vector<EvalEntry> parse_report_csv(const std::string& csv);
std::string report_table(const EvalReport& report);

}  // namespace crl
