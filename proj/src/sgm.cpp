#include "crl/sgm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace crl {

Tensor to_grayscale(const Tensor& rgb) {
    const Shape4 s = rgb.shape();
    if (s.c != 3) throw DimensionError("to_grayscale wants 3 channels, got " + s.str());
    Tensor g = Tensor::zeros({s.n, 1, s.h, s.w});
    const std::ptrdiff_t plane = std::ptrdiff_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (std::ptrdiff_t i = 0; i < plane; ++i) {
            const std::ptrdiff_t base = std::ptrdiff_t(n) * 3 * plane;
            g.data()[std::ptrdiff_t(n) * plane + i] =
                (rgb.data()[base + i] + rgb.data()[base + plane + i] +
                 rgb.data()[base + 2 * plane + i]) *
                (255.0 / 3.0);
        }
    return g;
}

CostVolumeT<double> sad_cost_volume(const Tensor& left_gray, const Tensor& right_gray,
                                    int max_disp, int window) {
    const Shape4 s = left_gray.shape();
    if (!(s == right_gray.shape()))
        throw DimensionError("sad_cost_volume: image shapes differ");
    if (s.c != 1 || s.n != 1) throw DimensionError("sad_cost_volume wants 1x1xHxW images");
    if (max_disp >= s.w)
        throw UsageError("sad_cost_volume: max_disp " + std::to_string(max_disp) +
                         " must be < width " + std::to_string(s.w));
    const int H = s.h, W = s.w, D = max_disp, r = window / 2;
    const double area = double(window) * window;
    const double cmax = 255.0 * area;

    CostVolumeT<double> cv;
    cv.max_displacement = D;
    cv.data = Tensor::zeros({1, D + 1, H, W});
    const double* L = left_gray.raw();
    const double* R = right_gray.raw();

#pragma omp parallel for schedule(static)
    for (int y = 0; y < H; ++y)
        for (int k = 0; k <= D; ++k) {
            double* dst = cv.data.raw() + std::ptrdiff_t(k) * H * W + std::ptrdiff_t(y) * W;
            for (int x = 0; x < W; ++x) {
                if (x - k < 0) {
                    dst[x] = cmax;
                    continue;
                }
                double acc = 0.0;
                int taps = 0;
                for (int dy = -r; dy <= r; ++dy) {
                    const int v = y + dy;
                    if (v < 0 || v >= H) continue;
                    const double* lrow = L + std::ptrdiff_t(v) * W;
                    const double* rrow = R + std::ptrdiff_t(v) * W;
                    for (int dx = -r; dx <= r; ++dx) {
                        const int u = x + dx;
                        if (u < 0 || u >= W || u - k < 0 || u - k >= W) continue;
                        acc += std::abs(lrow[u] - rrow[u - k]);
                        ++taps;
                    }
                }
                dst[x] = taps ? acc * (area / taps) : cmax;
            }
        }
    return cv;
}

namespace {

constexpr int kDirs[8][2] = {{1, 0}, {-1, 0}, {0, 1},  {0, -1},
                             {1, 1}, {-1, 1}, {1, -1}, {-1, -1}};  // (dx, dy)

// One scan over the image for direction (dx, dy), adding L_r into out.
void aggregate_direction(const double* cost, int H, int W, int D, double p1, double p2,
                         int dx, int dy, double* out) {
    const int nd = D + 1;
    // L values for the previous processed row (dy != 0) and the current row.
    std::vector<double> prev_row(std::size_t(W) * nd), cur_row(std::size_t(W) * nd);
    std::vector<double> prev_min(std::size_t(W)), cur_min(std::size_t(W));

    const int y_begin = dy >= 0 ? 0 : H - 1;
    const int y_step = dy >= 0 ? 1 : -1;
    const int x_begin = dx >= 0 ? 0 : W - 1;
    const int x_step = dx >= 0 ? 1 : -1;

    for (int row = 0; row < H; ++row) {
        const int y = y_begin + row * y_step;
        for (int col = 0; col < W; ++col) {
            const int x = x_begin + col * x_step;
            const int px = x - dx;
            const int py = y - dy;
            double* Lp = cur_row.data() + std::size_t(x) * nd;

            // Predecessor must be in frame and already processed by this scan.
            const bool has_prev = px >= 0 && px < W && py >= 0 && py < H &&
                                  (dy != 0 ? row > 0 : col > 0);
            if (!has_prev) {
                double mn = std::numeric_limits<double>::infinity();
                for (int d = 0; d <= D; ++d) {
                    const double v = cost[(std::ptrdiff_t(d) * H + y) * W + x];
                    Lp[d] = v;
                    mn = std::min(mn, v);
                }
                cur_min[std::size_t(x)] = mn;
            } else {
                const double* Lq = (dy != 0 ? prev_row.data() : cur_row.data()) +
                                   std::size_t(px) * nd;
                const double qmin = (dy != 0 ? prev_min : cur_min)[std::size_t(px)];
                double mn = std::numeric_limits<double>::infinity();
                for (int d = 0; d <= D; ++d) {
                    double best = Lq[d];
                    if (d > 0) best = std::min(best, Lq[d - 1] + p1);
                    if (d < D) best = std::min(best, Lq[d + 1] + p1);
                    best = std::min(best, qmin + p2);
                    const double v = cost[(std::ptrdiff_t(d) * H + y) * W + x] + best - qmin;
                    Lp[d] = v;
                    mn = std::min(mn, v);
                }
                cur_min[std::size_t(x)] = mn;
            }
        }
        for (int x = 0; x < W; ++x)
            for (int d = 0; d <= D; ++d)
                out[(std::ptrdiff_t(d) * H + y) * W + x] += cur_row[std::size_t(x) * nd + d];
        std::swap(prev_row, cur_row);
        std::swap(prev_min, cur_min);
    }
}

}  // namespace

CostVolumeT<double> sgm_aggregate(const CostVolumeT<double>& cost, const SgmParams& params) {
    params.validate();
    const Shape4 s = cost.data.shape();
    const int D = cost.max_displacement;
    if (s.c != D + 1 || s.n != 1) throw DimensionError("sgm_aggregate: bad cost volume shape");

    CostVolumeT<double> out;
    out.max_displacement = D;
    out.data = Tensor::zeros(s);
    for (int i = 0; i < params.directions; ++i)
        aggregate_direction(cost.data.raw(), s.h, s.w, D, params.p1, params.p2, kDirs[i][0],
                            kDirs[i][1], out.data.raw());
    return out;
}

DisparityMap wta_disparity(const CostVolumeT<double>& cost, bool subpixel, double uniqueness) {
    const Shape4 s = cost.data.shape();
    const int D = cost.max_displacement, H = s.h, W = s.w;
    Tensor disp = Tensor::zeros({1, 1, H, W});
    std::vector<std::uint8_t> valid(std::size_t(H) * W, 1);
    const double* c = cost.data.raw();

#pragma omp parallel for schedule(static)
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int best = 0;
            double best_cost = c[(std::ptrdiff_t(0) * H + y) * W + x];
            for (int d = 1; d <= D; ++d) {
                const double v = c[(std::ptrdiff_t(d) * H + y) * W + x];
                if (v < best_cost) {  // strict: ties go to the smaller index
                    best_cost = v;
                    best = d;
                }
            }
            double out = double(best);
            if (subpixel && best > 0 && best < D) {
                const double cm = c[(std::ptrdiff_t(best - 1) * H + y) * W + x];
                const double cp = c[(std::ptrdiff_t(best + 1) * H + y) * W + x];
                const double denom = 2.0 * (cm + cp - 2.0 * best_cost);
                if (denom > 0.0) {
                    double off = (cm - cp) / denom;
                    off = std::min(0.5, std::max(-0.5, off));
                    out += off;
                }
            }
            if (uniqueness > 0.0) {
                double second = std::numeric_limits<double>::infinity();
                for (int d = 0; d <= D; ++d) {
                    if (std::abs(d - best) <= 1) continue;
                    second = std::min(second, c[(std::ptrdiff_t(d) * H + y) * W + x]);
                }
                if (std::isfinite(second) && !(best_cost <= uniqueness * second))
                    valid[std::size_t(y) * W + x] = 0;
            }
            disp.raw()[std::ptrdiff_t(y) * W + x] = out;
        }
    return DisparityMap{std::move(disp), 0, std::move(valid)};
}

DisparityMap run_sgm(const StereoSample& sample, const SgmParams& params) {
    params.validate();
    const Tensor lg = to_grayscale(sample.left);
    const Tensor rg = to_grayscale(sample.right);
    const CostVolumeT<double> raw = sad_cost_volume(lg, rg, params.max_disp, params.sad_window);
    const CostVolumeT<double> agg = sgm_aggregate(raw, params);
    return wta_disparity(agg, params.subpixel, params.uniqueness);
}

}  // namespace crl
