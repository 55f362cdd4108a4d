#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "crl/ops.hpp"
#include "crl/tensor.hpp"

namespace crl {

// Single-channel disparity tensor in pixel units at its own scale.
// scale s means a spatial factor 2^s below full resolution. An empty
// validity mask means every pixel is valid.
template <typename S>
struct DisparityMapT {
    TensorT<S> data;  // N x 1 x H x W
    int scale = 0;
    std::vector<std::uint8_t> valid;

    bool all_valid() const { return valid.empty(); }
    const std::uint8_t* mask_ptr() const { return valid.empty() ? nullptr : valid.data(); }
};

template <typename S>
struct CostVolumeT {
    TensorT<S> data;  // N x (D+1) x H x W; channel k = correlation at displacement k
    int max_displacement = 0;
};

using DisparityMap = DisparityMapT<double>;

// Horizontal backward warp: out(x,y) = image(x + sign*d(x,y), y), bilinear
// along x, sampling coordinates clamped to the border. Differentiable in the
// image and the disparity.
template <typename S>
TensorT<S> warp(const TensorT<S>& image, const TensorT<S>& disparity, int sign) {
    const Shape4 im = image.shape();
    const Shape4 dm = disparity.shape();
    if (dm.c != 1 || dm.n != im.n || dm.h != im.h || dm.w != im.w)
        throw DimensionError("warp: disparity " + dm.str() + " does not match image " +
                             im.str());

    const int W = im.w, H = im.h, C = im.c, N = im.n;
    typename TensorT<S>::Array out(im.numel());
    const std::ptrdiff_t plane = std::ptrdiff_t(H) * W;

#pragma omp parallel for schedule(static) collapse(2) if (N * H > 8)
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y) {
            const S* drow = disparity.raw() + n * plane + std::ptrdiff_t(y) * W;
            for (int x = 0; x < W; ++x) {
                S xs = S(x) + S(sign) * drow[x];
                xs = std::min(std::max(xs, S(0)), S(W - 1));
                const int x0 = int(std::floor(xs));
                const int x1 = std::min(x0 + 1, W - 1);
                const S fx = xs - S(x0);
                for (int c = 0; c < C; ++c) {
                    const S* src = image.raw() + (std::ptrdiff_t(n) * C + c) * plane +
                                   std::ptrdiff_t(y) * W;
                    out[(std::ptrdiff_t(n) * C + c) * plane + std::ptrdiff_t(y) * W + x] =
                        (S(1) - fx) * src[x0] + fx * src[x1];
                }
            }
        }

    auto backward = [im, sign](typename TensorT<S>::Node& node) {
        auto& img = *node.parents[0];
        auto& disp = *node.parents[1];
        const int W = im.w, H = im.h, C = im.c, N = im.n;
        const std::ptrdiff_t plane = std::ptrdiff_t(H) * W;
        // Rows are independent; image and disparity planes are touched only
        // by their own (n, y), so the scatter is race-free.
#pragma omp parallel for schedule(static) collapse(2) if (N * H > 8)
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y) {
                const S* drow = disp.value.data() + n * plane + std::ptrdiff_t(y) * W;
                for (int x = 0; x < W; ++x) {
                    const S xs_raw = S(x) + S(sign) * drow[x];
                    const S xs = std::min(std::max(xs_raw, S(0)), S(W - 1));
                    const bool clamped = xs != xs_raw;
                    const int x0 = int(std::floor(xs));
                    const int x1 = std::min(x0 + 1, W - 1);
                    const S fx = xs - S(x0);
                    S dd = S(0);
                    for (int c = 0; c < C; ++c) {
                        const std::ptrdiff_t base = (std::ptrdiff_t(n) * C + c) * plane +
                                                    std::ptrdiff_t(y) * W;
                        const S g = node.grad[base + x];
                        if (img.requires_grad) {
                            img.grad[base + x0] += (S(1) - fx) * g;
                            img.grad[base + x1] += fx * g;
                        }
                        if (disp.requires_grad && !clamped)
                            dd += g * (img.value[base + x1] - img.value[base + x0]);
                    }
                    if (disp.requires_grad)
                        disp.grad[n * plane + std::ptrdiff_t(y) * W + x] += S(sign) * dd;
                }
            }
    };
    return TensorT<S>::make_op(im, std::move(out), "warp", {image, disparity},
                               std::move(backward));
}

template <typename S>
TensorT<S> warp(const TensorT<S>& image, const DisparityMapT<S>& disparity, int sign) {
    if (disparity.scale != 0)
        throw UsageError("warp: disparity must be at full resolution (scale 0)");
    return warp(image, disparity.data, sign);
}

// Per-pixel, per-channel absolute difference; subgradient 0 at ties.
template <typename S>
TensorT<S> error_map(const TensorT<S>& a, const TensorT<S>& b) {
    if (!(a.shape() == b.shape()))
        throw DimensionError("error_map: shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
    typename TensorT<S>::Array out = (a.data() - b.data()).abs();
    auto backward = [](typename TensorT<S>::Node& node) {
        auto& a = *node.parents[0];
        auto& b = *node.parents[1];
        for (Eigen::Index i = 0; i < a.value.size(); ++i) {
            const S d = a.value[i] - b.value[i];
            const S s = d > S(0) ? node.grad[i] : (d < S(0) ? -node.grad[i] : S(0));
            if (a.requires_grad) a.grad[i] += s;
            if (b.requires_grad) b.grad[i] -= s;
        }
    };
    return TensorT<S>::make_op(a.shape(), std::move(out), "error_map", {a, b},
                               std::move(backward));
}

// Bilinear downsampling by an integer factor that must divide H and W.
// Output pixel (i,j) samples the input at ((i+0.5)f-0.5, (j+0.5)f-0.5),
// which keeps the stencil interior for every factor and reduces to the
// identity at factor 1. Every output value is multiplied by value_scale.
template <typename S>
TensorT<S> bilinear_downsample(const TensorT<S>& input, int factor, S value_scale = S(1)) {
    const Shape4 in = input.shape();
    if (factor < 1) throw UsageError("bilinear_downsample: factor must be >= 1");
    if (in.h % factor != 0 || in.w % factor != 0)
        throw DimensionError("bilinear_downsample: factor " + std::to_string(factor) +
                             " does not divide " + in.str());
    const int oh = in.h / factor, ow = in.w / factor;
    const Shape4 out_shape{in.n, in.c, oh, ow};
    typename TensorT<S>::Array out(out_shape.numel());

    const std::ptrdiff_t iplane = std::ptrdiff_t(in.h) * in.w;
    const std::ptrdiff_t oplane = std::ptrdiff_t(oh) * ow;
#pragma omp parallel for schedule(static) if (in.n * in.c > 1)
    for (int nc = 0; nc < in.n * in.c; ++nc) {
        const S* src = input.raw() + nc * iplane;
        S* dst = out.data() + nc * oplane;
        for (int i = 0; i < oh; ++i) {
            const S ys = (S(i) + S(0.5)) * factor - S(0.5);
            const int y0 = int(std::floor(ys));
            const S fy = ys - S(y0);
            const int y1 = fy > S(0) ? y0 + 1 : y0;
            for (int j = 0; j < ow; ++j) {
                const S xs = (S(j) + S(0.5)) * factor - S(0.5);
                const int x0 = int(std::floor(xs));
                const S fx = xs - S(x0);
                const int x1 = fx > S(0) ? x0 + 1 : x0;
                dst[std::ptrdiff_t(i) * ow + j] =
                    value_scale *
                    ((S(1) - fy) * ((S(1) - fx) * src[std::ptrdiff_t(y0) * in.w + x0] +
                                    fx * src[std::ptrdiff_t(y0) * in.w + x1]) +
                     fy * ((S(1) - fx) * src[std::ptrdiff_t(y1) * in.w + x0] +
                           fx * src[std::ptrdiff_t(y1) * in.w + x1]));
            }
        }
    }

    auto backward = [in, factor, oh, ow, value_scale, iplane,
                     oplane](typename TensorT<S>::Node& node) {
        auto& x = *node.parents[0];
        if (!x.requires_grad) return;
#pragma omp parallel for schedule(static) if (in.n * in.c > 1)
        for (int nc = 0; nc < in.n * in.c; ++nc) {
            S* dsrc = x.grad.data() + nc * iplane;
            const S* g = node.grad.data() + nc * oplane;
            for (int i = 0; i < oh; ++i) {
                const S ys = (S(i) + S(0.5)) * factor - S(0.5);
                const int y0 = int(std::floor(ys));
                const S fy = ys - S(y0);
                const int y1 = fy > S(0) ? y0 + 1 : y0;
                for (int j = 0; j < ow; ++j) {
                    const S xs = (S(j) + S(0.5)) * factor - S(0.5);
                    const int x0 = int(std::floor(xs));
                    const S fx = xs - S(x0);
                    const int x1 = fx > S(0) ? x0 + 1 : x0;
                    const S gv = value_scale * g[std::ptrdiff_t(i) * ow + j];
                    dsrc[std::ptrdiff_t(y0) * in.w + x0] += (S(1) - fy) * (S(1) - fx) * gv;
                    dsrc[std::ptrdiff_t(y0) * in.w + x1] += (S(1) - fy) * fx * gv;
                    dsrc[std::ptrdiff_t(y1) * in.w + x0] += fy * (S(1) - fx) * gv;
                    dsrc[std::ptrdiff_t(y1) * in.w + x1] += fy * fx * gv;
                }
            }
        }
    };
    return TensorT<S>::make_op(out_shape, std::move(out), "bilinear_downsample", {input},
                               std::move(backward));
}

// Bilinear x2 upsampling (border clamped); used to lift coarse predictions
// into the next-finer decoder level. value_scale rescales disparity units.
template <typename S>
TensorT<S> bilinear_upsample_x2(const TensorT<S>& input, S value_scale = S(1)) {
    const Shape4 in = input.shape();
    const int oh = in.h * 2, ow = in.w * 2;
    const Shape4 out_shape{in.n, in.c, oh, ow};
    typename TensorT<S>::Array out(out_shape.numel());
    const std::ptrdiff_t iplane = std::ptrdiff_t(in.h) * in.w;
    const std::ptrdiff_t oplane = std::ptrdiff_t(oh) * ow;

    auto stencil = [](int o, int limit, int& p0, int& p1, S& f) {
        const S s = S(o) * S(0.5) - S(0.25);
        const S fl = std::floor(s);
        p0 = std::max(0, std::min(int(fl), limit - 1));
        p1 = std::min(p0 + (s >= S(0) ? 1 : 0), limit - 1);
        f = s < S(0) ? S(0) : s - fl;
        if (p1 == p0) f = S(0);
    };

#pragma omp parallel for schedule(static) if (in.n * in.c > 1)
    for (int nc = 0; nc < in.n * in.c; ++nc) {
        const S* src = input.raw() + nc * iplane;
        S* dst = out.data() + nc * oplane;
        for (int i = 0; i < oh; ++i) {
            int y0, y1;
            S fy;
            stencil(i, in.h, y0, y1, fy);
            for (int j = 0; j < ow; ++j) {
                int x0, x1;
                S fx;
                stencil(j, in.w, x0, x1, fx);
                dst[std::ptrdiff_t(i) * ow + j] =
                    value_scale *
                    ((S(1) - fy) * ((S(1) - fx) * src[std::ptrdiff_t(y0) * in.w + x0] +
                                    fx * src[std::ptrdiff_t(y0) * in.w + x1]) +
                     fy * ((S(1) - fx) * src[std::ptrdiff_t(y1) * in.w + x0] +
                           fx * src[std::ptrdiff_t(y1) * in.w + x1]));
            }
        }
    }

    auto backward = [in, oh, ow, value_scale, iplane, oplane,
                     stencil](typename TensorT<S>::Node& node) {
        auto& x = *node.parents[0];
        if (!x.requires_grad) return;
#pragma omp parallel for schedule(static) if (in.n * in.c > 1)
        for (int nc = 0; nc < in.n * in.c; ++nc) {
            S* dsrc = x.grad.data() + nc * iplane;
            const S* g = node.grad.data() + nc * oplane;
            for (int i = 0; i < oh; ++i) {
                int y0, y1;
                S fy;
                stencil(i, in.h, y0, y1, fy);
                for (int j = 0; j < ow; ++j) {
                    int x0, x1;
                    S fx;
                    stencil(j, in.w, x0, x1, fx);
                    const S gv = value_scale * g[std::ptrdiff_t(i) * ow + j];
                    dsrc[std::ptrdiff_t(y0) * in.w + x0] += (S(1) - fy) * (S(1) - fx) * gv;
                    dsrc[std::ptrdiff_t(y0) * in.w + x1] += (S(1) - fy) * fx * gv;
                    dsrc[std::ptrdiff_t(y1) * in.w + x0] += fy * (S(1) - fx) * gv;
                    dsrc[std::ptrdiff_t(y1) * in.w + x1] += fy * fx * gv;
                }
            }
        }
    };
    return TensorT<S>::make_op(out_shape, std::move(out), "bilinear_upsample_x2", {input},
                               std::move(backward));
}

// 1-D correlation cost volume: channel k holds the mean over feature
// channels of left(x,y) * right(x-k,y) for displacements 0..max_disp.
// Out-of-range samples contribute zero.
template <typename S>
CostVolumeT<S> correlation1d(const TensorT<S>& left, const TensorT<S>& right, int max_disp) {
    const Shape4 in = left.shape();
    if (!(in == right.shape()))
        throw DimensionError("correlation1d: feature shapes differ: " + in.str() + " vs " +
                             right.shape().str());
    if (max_disp >= in.w || max_disp < 0)
        throw UsageError("correlation1d: max_disp " + std::to_string(max_disp) +
                         " out of range for width " + std::to_string(in.w));

    const int D = max_disp, C = in.c, H = in.h, W = in.w, N = in.n;
    const Shape4 out_shape{N, D + 1, H, W};
    typename TensorT<S>::Array out(out_shape.numel());
    const std::ptrdiff_t plane = std::ptrdiff_t(H) * W;
    const S inv_c = S(1) / S(C);

#pragma omp parallel for schedule(static) collapse(2) if (N * H > 8)
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int k = 0; k <= D; ++k) {
                S* dst = out.data() + (std::ptrdiff_t(n) * (D + 1) + k) * plane +
                         std::ptrdiff_t(y) * W;
                for (int x = 0; x < W; ++x) {
                    if (x - k < 0) {
                        dst[x] = S(0);
                        continue;
                    }
                    S acc = S(0);
                    for (int c = 0; c < C; ++c) {
                        const std::ptrdiff_t base =
                            (std::ptrdiff_t(n) * C + c) * plane + std::ptrdiff_t(y) * W;
                        acc += left.raw()[base + x] * right.raw()[base + x - k];
                    }
                    dst[x] = acc * inv_c;
                }
            }

    auto backward = [in, D, inv_c, plane](typename TensorT<S>::Node& node) {
        auto& l = *node.parents[0];
        auto& r = *node.parents[1];
        const int C = in.c, H = in.h, W = in.w, N = in.n;
#pragma omp parallel for schedule(static) collapse(2) if (N * H > 8)
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int k = 0; k <= D; ++k) {
                    const S* g = node.grad.data() +
                                 (std::ptrdiff_t(n) * (D + 1) + k) * plane +
                                 std::ptrdiff_t(y) * W;
                    for (int x = k; x < W; ++x) {
                        const S gv = g[x] * inv_c;
                        if (gv == S(0)) continue;
                        for (int c = 0; c < C; ++c) {
                            const std::ptrdiff_t base =
                                (std::ptrdiff_t(n) * C + c) * plane + std::ptrdiff_t(y) * W;
                            if (l.requires_grad) l.grad[base + x] += gv * r.value[base + x - k];
                            if (r.requires_grad) r.grad[base + x - k] += gv * l.value[base + x];
                        }
                    }
                }
    };
    CostVolumeT<S> cv;
    cv.data = TensorT<S>::make_op(out_shape, std::move(out), "correlation1d", {left, right},
                                  std::move(backward));
    cv.max_displacement = D;
    return cv;
}

// Mean of |pred - gt| over valid pixels; returns a scalar tensor. A null
// mask means all pixels are valid; zero valid pixels yield 0 with zero
// gradient. Subgradient at ties is 0.
template <typename S>
TensorT<S> masked_l1(const TensorT<S>& pred, const TensorT<S>& gt,
                     const std::uint8_t* mask = nullptr) {
    if (!(pred.shape() == gt.shape()))
        throw DimensionError("masked_l1: shape mismatch " + pred.shape().str() + " vs " +
                             gt.shape().str());
    const std::ptrdiff_t n = pred.numel();
    std::int64_t count = 0;
    S acc = S(0);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        if (mask && !mask[i]) continue;
        acc += std::abs(pred.raw()[i] - gt.raw()[i]);
        ++count;
    }
    typename TensorT<S>::Array out(1);
    out[0] = count ? acc / S(count) : S(0);

    std::vector<std::uint8_t> mask_copy;
    if (mask) mask_copy.assign(mask, mask + n);
    auto backward = [mask_copy = std::move(mask_copy), count, n](typename TensorT<S>::Node& node) {
        if (!count) return;
        auto& p = *node.parents[0];
        auto& g = *node.parents[1];
        const S w = node.grad[0] / S(count);
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            if (!mask_copy.empty() && !mask_copy[i]) continue;
            const S d = p.value[i] - g.value[i];
            const S s = d > S(0) ? w : (d < S(0) ? -w : S(0));
            if (p.requires_grad) p.grad[i] += s;
            if (g.requires_grad) g.grad[i] -= s;
        }
    };
    return TensorT<S>::make_op(Shape4{1, 1, 1, 1}, std::move(out), "masked_l1", {pred, gt},
                               std::move(backward));
}

template <typename S>
TensorT<S> masked_l1(const DisparityMapT<S>& pred, const DisparityMapT<S>& gt) {
    if (pred.scale != gt.scale)
        throw UsageError("masked_l1: scale mismatch (" + std::to_string(pred.scale) + " vs " +
                         std::to_string(gt.scale) + ")");
    if (pred.all_valid() && gt.all_valid()) return masked_l1(pred.data, gt.data, nullptr);
    std::vector<std::uint8_t> merged(std::size_t(pred.data.numel()), 1);
    auto apply = [&](const std::vector<std::uint8_t>& m) {
        for (std::size_t i = 0; i < merged.size() && i < m.size(); ++i) merged[i] &= m[i];
    };
    if (!pred.all_valid()) apply(pred.valid);
    if (!gt.all_valid()) apply(gt.valid);
    return masked_l1(pred.data, gt.data, merged.data());
}

}  // namespace crl
