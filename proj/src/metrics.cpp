#include "crl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace crl {

namespace {

void check_pair(const DisparityMap& pred, const DisparityMap& gt) {
    if (pred.scale != gt.scale)
        throw UsageError("metric: scale mismatch (" + std::to_string(pred.scale) + " vs " +
                         std::to_string(gt.scale) + ")");
    if (!(pred.data.shape() == gt.data.shape()))
        throw DimensionError("metric: shape mismatch " + pred.data.shape().str() + " vs " +
                             gt.data.shape().str());
}

template <typename Fn>
void for_valid(const DisparityMap& pred, const DisparityMap& gt, const std::uint8_t* extra,
               Fn&& fn) {
    const std::int64_t n = pred.data.numel();
    const std::uint8_t* pm = pred.mask_ptr();
    const std::uint8_t* gm = gt.mask_ptr();
    for (std::int64_t i = 0; i < n; ++i) {
        if (pm && !pm[i]) continue;
        if (gm && !gm[i]) continue;
        if (extra && !extra[i]) continue;
        fn(pred.data.data()[i], gt.data.data()[i]);
    }
}

}  // namespace

std::optional<double> epe(const DisparityMap& pred, const DisparityMap& gt,
                          const std::uint8_t* extra_mask) {
    check_pair(pred, gt);
    double acc = 0.0;
    std::int64_t count = 0;
    for_valid(pred, gt, extra_mask, [&](double p, double g) {
        acc += std::abs(p - g);
        ++count;
    });
    if (!count) return std::nullopt;
    return acc / double(count);
}

std::optional<double> three_pixel_error(const DisparityMap& pred, const DisparityMap& gt,
                                        const std::uint8_t* extra_mask, ThreePEMode mode) {
    check_pair(pred, gt);
    std::int64_t bad = 0, count = 0;
    for_valid(pred, gt, extra_mask, [&](double p, double g) {
        const double err = std::abs(p - g);
        const bool over = mode == ThreePEMode::Plain
                              ? err > 3.0
                              : (err > 3.0 && err > 0.05 * std::abs(g));
        bad += over ? 1 : 0;
        ++count;
    });
    if (!count) return std::nullopt;
    return 100.0 * double(bad) / double(count);
}

std::int64_t count_valid(const DisparityMap& pred, const DisparityMap& gt,
                         const std::uint8_t* extra_mask) {
    check_pair(pred, gt);
    std::int64_t count = 0;
    for_valid(pred, gt, extra_mask, [&](double, double) { ++count; });
    return count;
}

double disparity_to_depth(double disparity, const CameraGeometry& cam) {
    if (cam.focal_length <= 0.0 || cam.baseline <= 0.0)
        throw UsageError("camera geometry requires f > 0 and baseline > 0");
    if (disparity <= 0.0)
        throw std::domain_error("disparity_to_depth: disparity must be positive");
    return cam.focal_length * cam.baseline / disparity;
}

double depth_to_disparity(double depth, const CameraGeometry& cam) {
    if (cam.focal_length <= 0.0 || cam.baseline <= 0.0)
        throw UsageError("camera geometry requires f > 0 and baseline > 0");
    if (depth <= 0.0) throw std::domain_error("depth_to_disparity: depth must be positive");
    return cam.focal_length * cam.baseline / depth;
}

EvalReport make_report(const std::vector<EvalEntry>& entries) {
    if (entries.empty()) throw UsageError("make_report: no entries");
    EvalReport report;
    report.per_sample = entries;

    std::vector<std::string> order;
    std::map<std::string, EvalAggregate> by_method;
    std::map<std::string, std::int64_t> samples;
    for (const auto& e : entries) {
        if (!by_method.count(e.method)) {
            order.push_back(e.method);
            by_method[e.method].method = e.method;
        }
        auto& agg = by_method[e.method];
        agg.epe += e.epe * double(e.valid_px);
        agg.three_pe += e.three_pe * double(e.valid_px);
        agg.valid_px += e.valid_px;
        agg.wall_ms += e.wall_ms;
        samples[e.method] += 1;
    }
    for (const auto& m : order) {
        auto agg = by_method[m];
        if (agg.valid_px > 0) {
            agg.epe /= double(agg.valid_px);
            agg.three_pe /= double(agg.valid_px);
        }
        agg.wall_ms /= double(samples[m]);
        report.aggregates.push_back(agg);
    }
    return report;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string report_csv(const EvalReport& report) {
    std::string out = "method,id,epe,three_pe,valid_px,wall_ms\n";
    for (const auto& e : report.per_sample)
        out += e.method + "," + e.id + "," + fmt_double(e.epe) + "," + fmt_double(e.three_pe) +
               "," + std::to_string(e.valid_px) + "," + fmt_double(e.wall_ms) + "\n";
    for (const auto& a : report.aggregates)
        out += a.method + ",ALL," + fmt_double(a.epe) + "," + fmt_double(a.three_pe) + "," +
               std::to_string(a.valid_px) + "," + fmt_double(a.wall_ms) + "\n";
    return out;
}

std::vector<EvalEntry> parse_report_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    std::vector<EvalEntry> entries;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("method,", 0) == 0) continue;
        }
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 6) throw FormatError("report CSV: bad row '" + line + "'");
        if (fields[1] == "ALL") continue;  // footer aggregates are derived
        EvalEntry e;
        e.method = fields[0];
        e.id = fields[1];
        try {
            e.epe = std::stod(fields[2]);
            e.three_pe = std::stod(fields[3]);
            e.valid_px = std::stoll(fields[4]);
            e.wall_ms = std::stod(fields[5]);
        } catch (const std::exception&) {
            throw FormatError("report CSV: bad numeric field in '" + line + "'");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

std::string report_table(const EvalReport& report) {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-16s %10s %10s %12s %10s\n", "method", "EPE", "3PE(%)",
                  "valid_px", "ms/sample");
    out += buf;
    for (const auto& a : report.aggregates) {
        std::snprintf(buf, sizeof(buf), "%-16s %10.4f %10.4f %12lld %10.2f\n",
                      a.method.c_str(), a.epe, a.three_pe, (long long)a.valid_px, a.wall_ms);
        out += buf;
    }
    return out;
}

}  // namespace crl
