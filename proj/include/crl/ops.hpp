#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <string>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

// Convolution geometry. Output spatial size follows
// floor((in + 2*pad - kernel)/stride) + 1 and must stay positive.
struct ConvSpec {
    int kernel = 3;
    int stride = 1;
    int padding = 0;
    int in_channels = 0;
    int out_channels = 0;

    int out_size(int in) const {
        return (in + 2 * padding - kernel) / stride + 1;
    }
    // Output size of the transposed operator (exact inverse of out_size).
    int tconv_out_size(int in) const {
        return (in - 1) * stride + kernel - 2 * padding;
    }
};

namespace detail {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstRowMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Unfold one CHW image into a [C*K*K x oh*ow] column matrix (zero padding).
template <typename S>
void im2col(const S* src, int C, int H, int W, int K, int stride, int pad, int oh, int ow,
            MatX<S>& col) {
    const int rows = C * K * K;
    const int cols = oh * ow;
    col.resize(rows, cols);
#pragma omp parallel for schedule(static) if (cols > 1024)
    for (int p = 0; p < cols; ++p) {
        const int oy = p / ow;
        const int ox = p % ow;
        S* out = col.data() + std::ptrdiff_t(p) * rows;
        int r = 0;
        for (int c = 0; c < C; ++c) {
            const S* plane = src + std::ptrdiff_t(c) * H * W;
            for (int ki = 0; ki < K; ++ki) {
                const int iy = oy * stride - pad + ki;
                if (iy < 0 || iy >= H) {
                    for (int kj = 0; kj < K; ++kj) out[r++] = S(0);
                    continue;
                }
                const S* row = plane + std::ptrdiff_t(iy) * W;
                for (int kj = 0; kj < K; ++kj) {
                    const int ix = ox * stride - pad + kj;
                    out[r++] = (ix < 0 || ix >= W) ? S(0) : row[ix];
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into the CHW image.
// Parallel over channels; each channel's rows write a disjoint plane.
template <typename S>
void col2im_add(const MatX<S>& col, int C, int H, int W, int K, int stride, int pad, int oh,
                int ow, S* dst) {
    const int rows = C * K * K;
    const int cols = oh * ow;
#pragma omp parallel for schedule(static) if (C > 1)
    for (int c = 0; c < C; ++c) {
        S* plane = dst + std::ptrdiff_t(c) * H * W;
        for (int p = 0; p < cols; ++p) {
            const int oy = p / ow;
            const int ox = p % ow;
            const S* in = col.data() + std::ptrdiff_t(p) * rows + std::ptrdiff_t(c) * K * K;
            for (int ki = 0; ki < K; ++ki) {
                const int iy = oy * stride - pad + ki;
                if (iy < 0 || iy >= H) continue;
                S* row = plane + std::ptrdiff_t(iy) * W;
                for (int kj = 0; kj < K; ++kj) {
                    const int ix = ox * stride - pad + kj;
                    if (ix >= 0 && ix < W) row[ix] += in[ki * K + kj];
                }
            }
        }
    }
}

// C = A * B with a fixed column partition, so results are identical for any
// thread count.
template <typename A, typename B, typename CM>
void gemm_cols(const A& a, const B& b, CM&& c) {
    const Eigen::Index cols = b.cols();
    constexpr Eigen::Index kBlock = 512;
    const Eigen::Index nblocks = (cols + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) if (nblocks > 1)
    for (Eigen::Index blk = 0; blk < nblocks; ++blk) {
        const Eigen::Index j0 = blk * kBlock;
        const Eigen::Index nj = std::min(kBlock, cols - j0);
        c.middleCols(j0, nj).noalias() = a * b.middleCols(j0, nj);
    }
}

// C += A * B^T partitioned over row blocks of A.
template <typename A, typename B, typename CM>
void gemm_rows_accum_bt(const A& a, const B& b, CM&& c) {
    const Eigen::Index rows = a.rows();
    constexpr Eigen::Index kBlock = 16;
    const Eigen::Index nblocks = (rows + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) if (nblocks > 1)
    for (Eigen::Index blk = 0; blk < nblocks; ++blk) {
        const Eigen::Index i0 = blk * kBlock;
        const Eigen::Index ni = std::min(kBlock, rows - i0);
        c.middleRows(i0, ni).noalias() += a.middleRows(i0, ni) * b.transpose();
    }
}

// C += A * B partitioned over row blocks of A.
template <typename A, typename B, typename CM>
void gemm_rows_accum(const A& a, const B& b, CM&& c) {
    const Eigen::Index rows = a.rows();
    constexpr Eigen::Index kBlock = 16;
    const Eigen::Index nblocks = (rows + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) if (nblocks > 1)
    for (Eigen::Index blk = 0; blk < nblocks; ++blk) {
        const Eigen::Index i0 = blk * kBlock;
        const Eigen::Index ni = std::min(kBlock, rows - i0);
        c.middleRows(i0, ni).noalias() += a.middleRows(i0, ni) * b;
    }
}

inline void check_conv_args(const Shape4& in, const Shape4& w, const Shape4& b,
                            const ConvSpec& spec, bool transposed, const char* what) {
    const int ci = transposed ? w.n : w.c;
    const int co = transposed ? w.c : w.n;
    if (w.h != spec.kernel || w.w != spec.kernel || ci != spec.in_channels ||
        co != spec.out_channels)
        throw DimensionError(std::string(what) + ": weight shape " + w.str() +
                             " does not match spec (K=" + std::to_string(spec.kernel) +
                             ", " + std::to_string(spec.in_channels) + "->" +
                             std::to_string(spec.out_channels) + ")");
    if (in.c != spec.in_channels)
        throw DimensionError(std::string(what) + ": input has " + std::to_string(in.c) +
                             " channels, spec expects " + std::to_string(spec.in_channels));
    if (b.numel() != spec.out_channels)
        throw DimensionError(std::string(what) + ": bias has " + std::to_string(b.numel()) +
                             " entries for " + std::to_string(spec.out_channels) + " channels");
}

}  // namespace detail

// 2-D convolution, NCHW, zero padding. weight is (out_ch, in_ch, K, K),
// bias is (1, out_ch, 1, 1). Differentiable in input, weight and bias.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& bias,
                  const ConvSpec& spec) {
    using detail::ConstRowMap;
    using detail::RowMap;
    const Shape4 in = input.shape();
    detail::check_conv_args(in, weight.shape(), bias.shape(), spec, false, "conv2d");
    const int oh = spec.out_size(in.h);
    const int ow = spec.out_size(in.w);
    if (oh <= 0 || ow <= 0)
        throw DimensionError("conv2d: non-positive output size for input " + in.str());

    const Shape4 out_shape{in.n, spec.out_channels, oh, ow};
    const int ckk = spec.in_channels * spec.kernel * spec.kernel;
    const int pix = oh * ow;

    typename TensorT<S>::Array out(out_shape.numel());
    ConstRowMap<S> wmat(weight.raw(), spec.out_channels, ckk);
    detail::MatX<S> col;
    for (int n = 0; n < in.n; ++n) {
        detail::im2col(input.raw() + std::ptrdiff_t(n) * in.c * in.h * in.w, in.c, in.h, in.w,
                       spec.kernel, spec.stride, spec.padding, oh, ow, col);
        RowMap<S> omat(out.data() + std::ptrdiff_t(n) * spec.out_channels * pix,
                       spec.out_channels, pix);
        detail::gemm_cols(wmat, col, omat);
        for (int c = 0; c < spec.out_channels; ++c) omat.row(c).array() += bias.raw()[c];
    }

    auto backward = [in, spec, oh, ow, ckk, pix](typename TensorT<S>::Node& node) {
        auto& x = *node.parents[0];
        auto& w = *node.parents[1];
        auto& b = *node.parents[2];
        ConstRowMap<S> wmat(w.value.data(), spec.out_channels, ckk);
        detail::MatX<S> col, dcol(ckk, pix);
        for (int n = 0; n < in.n; ++n) {
            ConstRowMap<S> dy(node.grad.data() + std::ptrdiff_t(n) * spec.out_channels * pix,
                              spec.out_channels, pix);
            if (x.requires_grad) {
                detail::gemm_cols(wmat.transpose(), dy, dcol);
                detail::col2im_add(dcol, in.c, in.h, in.w, spec.kernel, spec.stride,
                                   spec.padding, oh, ow,
                                   x.grad.data() + std::ptrdiff_t(n) * in.c * in.h * in.w);
            }
            if (w.requires_grad || b.requires_grad) {
                if (w.requires_grad) {
                    detail::im2col(x.value.data() + std::ptrdiff_t(n) * in.c * in.h * in.w,
                                   in.c, in.h, in.w, spec.kernel, spec.stride, spec.padding,
                                   oh, ow, col);
                    RowMap<S> dw(w.grad.data(), spec.out_channels, ckk);
                    detail::gemm_rows_accum_bt(dy, col, dw);
                }
                if (b.requires_grad)
                    for (int c = 0; c < spec.out_channels; ++c) b.grad[c] += dy.row(c).sum();
            }
        }
    };
    return TensorT<S>::make_op(out_shape, std::move(out), "conv2d", {input, weight, bias},
                               std::move(backward));
}

// Transposed convolution (fractionally strided). weight is
// (in_ch, out_ch, K, K) so that a conv2d weight buffer used here with swapped
// channel roles yields the exact adjoint operator.
template <typename S>
TensorT<S> transposed_conv2d(const TensorT<S>& input, const TensorT<S>& weight,
                             const TensorT<S>& bias, const ConvSpec& spec) {
    using detail::ConstRowMap;
    using detail::RowMap;
    const Shape4 in = input.shape();
    detail::check_conv_args(in, weight.shape(), bias.shape(), spec, true, "transposed_conv2d");
    const int oh = spec.tconv_out_size(in.h);
    const int ow = spec.tconv_out_size(in.w);
    if (oh <= 0 || ow <= 0)
        throw DimensionError("transposed_conv2d: non-positive output size for input " +
                             in.str());

    const Shape4 out_shape{in.n, spec.out_channels, oh, ow};
    const int ckk = spec.out_channels * spec.kernel * spec.kernel;
    const int pin = in.h * in.w;

    typename TensorT<S>::Array out =
        TensorT<S>::Array::Zero(out_shape.numel());
    ConstRowMap<S> wmat(weight.raw(), spec.in_channels, ckk);
    detail::MatX<S> col(ckk, pin);
    for (int n = 0; n < in.n; ++n) {
        ConstRowMap<S> xmat(input.raw() + std::ptrdiff_t(n) * in.c * pin, in.c, pin);
        detail::gemm_cols(wmat.transpose(), xmat, col);
        S* dst = out.data() + std::ptrdiff_t(n) * spec.out_channels * oh * ow;
        detail::col2im_add(col, spec.out_channels, oh, ow, spec.kernel, spec.stride,
                           spec.padding, in.h, in.w, dst);
        detail::RowMap<S> omat(dst, spec.out_channels, std::ptrdiff_t(oh) * ow);
        for (int c = 0; c < spec.out_channels; ++c) omat.row(c).array() += bias.raw()[c];
    }

    auto backward = [in, spec, oh, ow, ckk, pin](typename TensorT<S>::Node& node) {
        auto& x = *node.parents[0];
        auto& w = *node.parents[1];
        auto& b = *node.parents[2];
        ConstRowMap<S> wmat(w.value.data(), spec.in_channels, ckk);
        detail::MatX<S> col;
        const std::ptrdiff_t opix = std::ptrdiff_t(oh) * ow;
        for (int n = 0; n < in.n; ++n) {
            const S* dy = node.grad.data() + std::ptrdiff_t(n) * spec.out_channels * opix;
            if (x.requires_grad || w.requires_grad) {
                detail::im2col(dy, spec.out_channels, oh, ow, spec.kernel, spec.stride,
                               spec.padding, in.h, in.w, col);
                if (x.requires_grad) {
                    RowMap<S> dx(x.grad.data() + std::ptrdiff_t(n) * in.c * pin, in.c, pin);
                    detail::gemm_rows_accum(wmat, col, dx);
                }
                if (w.requires_grad) {
                    ConstRowMap<S> xmat(x.value.data() + std::ptrdiff_t(n) * in.c * pin, in.c,
                                        pin);
                    RowMap<S> dw(w.grad.data(), spec.in_channels, ckk);
                    detail::gemm_rows_accum_bt(xmat, col, dw);
                }
            }
            if (b.requires_grad) {
                ConstRowMap<S> dymat(dy, spec.out_channels, opix);
                for (int c = 0; c < spec.out_channels; ++c) b.grad[c] += dymat.row(c).sum();
            }
        }
    };
    return TensorT<S>::make_op(out_shape, std::move(out), "transposed_conv2d",
                               {input, weight, bias}, std::move(backward));
}

template <typename S>
TensorT<S> leaky_relu(const TensorT<S>& input, S slope) {
    if (!(slope >= S(0) && slope < S(1)))
        throw UsageError("leaky_relu: slope must be in [0, 1)");
    typename TensorT<S>::Array out =
        (input.data() >= S(0)).select(input.data(), input.data() * slope);
    auto backward = [slope](typename TensorT<S>::Node& node) {
        auto& x = *node.parents[0];
        if (!x.requires_grad) return;
        x.grad += (x.value >= S(0)).select(node.grad, node.grad * slope);
    };
    return TensorT<S>::make_op(input.shape(), std::move(out), "leaky_relu", {input},
                               std::move(backward));
}

template <typename S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& inputs) {
    if (inputs.empty()) throw UsageError("concat_channels: no inputs");
    const Shape4 first = inputs[0].shape();
    int channels = 0;
    for (const auto& t : inputs) {
        const Shape4 s = t.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw DimensionError("concat_channels: mismatched shape " + s.str() + " vs " +
                                 first.str());
        channels += s.c;
    }
    const Shape4 out_shape{first.n, channels, first.h, first.w};
    typename TensorT<S>::Array out(out_shape.numel());
    const std::ptrdiff_t plane = std::ptrdiff_t(first.h) * first.w;
    for (int n = 0; n < first.n; ++n) {
        std::ptrdiff_t dst_c = 0;
        for (const auto& t : inputs) {
            const int ci = t.shape().c;
            std::copy_n(t.raw() + std::ptrdiff_t(n) * ci * plane, ci * plane,
                        out.data() + (std::ptrdiff_t(n) * channels + dst_c) * plane);
            dst_c += ci;
        }
    }
    auto backward = [first, channels, plane](typename TensorT<S>::Node& node) {
        std::ptrdiff_t src_c = 0;
        for (auto& parent : node.parents) {
            const int ci = parent->shape.c;
            if (parent->requires_grad) {
                for (int n = 0; n < first.n; ++n) {
                    const S* g = node.grad.data() + (std::ptrdiff_t(n) * channels + src_c) * plane;
                    S* dst = parent->grad.data() + std::ptrdiff_t(n) * ci * plane;
                    for (std::ptrdiff_t i = 0; i < ci * plane; ++i) dst[i] += g[i];
                }
            }
            src_c += ci;
        }
    };
    return TensorT<S>::make_op(out_shape, std::move(out), "concat", inputs, std::move(backward));
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    if (!(a.shape() == b.shape()))
        throw DimensionError("add: shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
    typename TensorT<S>::Array out = a.data() + b.data();
    auto backward = [](typename TensorT<S>::Node& node) {
        for (auto& p : node.parents)
            if (p->requires_grad) p->grad += node.grad;
    };
    return TensorT<S>::make_op(a.shape(), std::move(out), "add", {a, b}, std::move(backward));
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    if (!(a.shape() == b.shape()))
        throw DimensionError("mul: shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
    typename TensorT<S>::Array out = a.data() * b.data();
    auto backward = [](typename TensorT<S>::Node& node) {
        auto& a = *node.parents[0];
        auto& b = *node.parents[1];
        if (a.requires_grad) a.grad += node.grad * b.value;
        if (b.requires_grad) b.grad += node.grad * a.value;
    };
    return TensorT<S>::make_op(a.shape(), std::move(out), "mul", {a, b}, std::move(backward));
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
    typename TensorT<S>::Array out = a.data() * factor;
    auto backward = [factor](typename TensorT<S>::Node& node) {
        auto& a = *node.parents[0];
        if (a.requires_grad) a.grad += node.grad * factor;
    };
    return TensorT<S>::make_op(a.shape(), std::move(out), "scale", {a}, std::move(backward));
}

// Reduce to a (1,1,1,1) scalar tensor.
template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
    typename TensorT<S>::Array out(1);
    out[0] = a.data().sum();
    auto backward = [](typename TensorT<S>::Node& node) {
        auto& a = *node.parents[0];
        if (a.requires_grad) a.grad += node.grad[0];
    };
    return TensorT<S>::make_op(Shape4{1, 1, 1, 1}, std::move(out), "sum", {a},
                               std::move(backward));
}

}  // namespace crl
