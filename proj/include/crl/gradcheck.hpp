#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crl/ops.hpp"
#include "crl/stereo_ops.hpp"

namespace crl {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int worst_input = -1;
    std::int64_t worst_coord = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Certify one differentiable map against central finite differences.
// fn must be pure. Inputs are expected to be sampled away from
// non-smooth points (integer sampling coordinates, activation kinks).
// Returns max over all input coordinates of |analytic - numeric| / max(1, |numeric|).
template <typename S, typename Fn>
GradCheckReport grad_check(Fn&& fn, std::vector<TensorT<S>>& inputs, S eps, Rng& rng) {
    TensorT<S> out = fn(inputs);
    TensorT<S> projection = TensorT<S>::uniform(out.shape(), rng, S(-1), S(1), false);
    auto loss_of = [&](const TensorT<S>& o) { return sum(mul(o, projection)); };

    loss_of(out).backward();
    std::vector<typename TensorT<S>::Array> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) analytic.push_back(in.grad());

    GradCheckReport report;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& data = inputs[i].data();
        for (Eigen::Index j = 0; j < data.size(); ++j) {
            const S saved = data[j];
            data[j] = saved + eps;
            const double lp = double(loss_of(fn(inputs)).item());
            data[j] = saved - eps;
            const double lm = double(loss_of(fn(inputs)).item());
            data[j] = saved;
            const double numeric = (lp - lm) / (2.0 * double(eps));
            const double a = double(analytic[i][j]);
            const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_input = int(i);
                report.worst_coord = j;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

// Named gradient checks over every differentiable primitive, with inputs
// randomized away from non-smooth points. Double precision throughout.
struct GradCheckCase {
    std::string name;
    std::function<GradCheckReport(std::uint64_t seed, double eps)> run;
};

namespace detail {

inline Tensor rand_t(Shape4 s, Rng& rng, double lo, double hi, bool grad = true) {
    return Tensor::uniform(s, rng, lo, hi, grad);
}

// Disparity with fractional part in (0.1, 0.4) and samples kept strictly
// interior so the warp stays away from clamp boundaries and integer knots.
inline Tensor safe_disparity(Shape4 s, int width, Rng& rng) {
    Tensor d = Tensor::zeros(s, true);
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const int max_int = std::max(0, std::min(2, width - 3 - x));
                const double frac = rng.uniform(0.1, 0.4);
                d.at(n, 0, y, x) = double(rng.uniform_int(0, max_int)) + frac;
            }
    return d;
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_registry() {
    using detail::rand_t;
    std::vector<GradCheckCase> cases;

    cases.push_back({"conv2d", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        ConvSpec spec{3, 2, 1, 2, 3};
        std::vector<Tensor> in = {rand_t({1, 2, 5, 6}, rng, -1, 1),
                                  rand_t({3, 2, 3, 3}, rng, -1, 1),
                                  rand_t({1, 3, 1, 1}, rng, -1, 1)};
        return grad_check([&](std::vector<Tensor>& v) { return conv2d(v[0], v[1], v[2], spec); },
                          in, eps, rng);
    }});
    cases.push_back({"transposed_conv2d", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        ConvSpec spec{4, 2, 1, 3, 2};
        std::vector<Tensor> in = {rand_t({1, 3, 3, 4}, rng, -1, 1),
                                  rand_t({3, 2, 4, 4}, rng, -1, 1),
                                  rand_t({1, 2, 1, 1}, rng, -1, 1)};
        return grad_check(
            [&](std::vector<Tensor>& v) { return transposed_conv2d(v[0], v[1], v[2], spec); },
            in, eps, rng);
    }});
    cases.push_back({"leaky_relu", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        Tensor x = Tensor::zeros({1, 2, 4, 5}, true);
        for (Eigen::Index i = 0; i < x.data().size(); ++i) {
            const double mag = rng.uniform(0.1, 1.0);
            x.data()[i] = rng.uniform() < 0.5 ? -mag : mag;  // keep away from the kink
        }
        std::vector<Tensor> in = {x};
        return grad_check([](std::vector<Tensor>& v) { return leaky_relu(v[0], 0.1); }, in, eps,
                          rng);
    }});
    cases.push_back({"concat", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        std::vector<Tensor> in = {rand_t({1, 1, 3, 4}, rng, -1, 1),
                                  rand_t({1, 2, 3, 4}, rng, -1, 1),
                                  rand_t({1, 3, 3, 4}, rng, -1, 1)};
        return grad_check([](std::vector<Tensor>& v) { return concat_channels(v); }, in, eps,
                          rng);
    }});
    cases.push_back({"add", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        std::vector<Tensor> in = {rand_t({1, 2, 3, 4}, rng, -1, 1),
                                  rand_t({1, 2, 3, 4}, rng, -1, 1)};
        return grad_check([](std::vector<Tensor>& v) { return add(v[0], v[1]); }, in, eps, rng);
    }});
    cases.push_back({"warp", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        std::vector<Tensor> in = {rand_t({1, 2, 5, 8}, rng, -1, 1),
                                  detail::safe_disparity({1, 1, 5, 8}, 8, rng)};
        return grad_check([](std::vector<Tensor>& v) { return warp(v[0], v[1], +1); }, in, eps,
                          rng);
    }});
    cases.push_back({"bilinear_downsample", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        std::vector<Tensor> in = {rand_t({1, 2, 6, 8}, rng, -1, 1)};
        return grad_check(
            [](std::vector<Tensor>& v) { return bilinear_downsample(v[0], 2, 0.5); }, in, eps,
            rng);
    }});
    cases.push_back({"bilinear_upsample_x2", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        std::vector<Tensor> in = {rand_t({1, 2, 3, 4}, rng, -1, 1)};
        return grad_check(
            [](std::vector<Tensor>& v) { return bilinear_upsample_x2(v[0], 2.0); }, in, eps,
            rng);
    }});
    cases.push_back({"correlation1d", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        std::vector<Tensor> in = {rand_t({1, 3, 4, 7}, rng, -1, 1),
                                  rand_t({1, 3, 4, 7}, rng, -1, 1)};
        return grad_check(
            [](std::vector<Tensor>& v) { return correlation1d(v[0], v[1], 3).data; }, in, eps,
            rng);
    }});
    cases.push_back({"error_map", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        Tensor a = rand_t({1, 2, 4, 5}, rng, -1, 1);
        Tensor b = Tensor::zeros({1, 2, 4, 5}, true);
        for (Eigen::Index i = 0; i < b.data().size(); ++i) {
            const double off = rng.uniform(0.2, 1.0);  // margin from the |.| kink
            b.data()[i] = a.data()[i] + (rng.uniform() < 0.5 ? -off : off);
        }
        std::vector<Tensor> in = {a, b};
        return grad_check([](std::vector<Tensor>& v) { return error_map(v[0], v[1]); }, in, eps,
                          rng);
    }});
    cases.push_back({"masked_l1", [](std::uint64_t seed, double eps) {
        Rng rng(seed);
        Tensor gt = rand_t({1, 1, 5, 6}, rng, -1, 1);
        Tensor pred = Tensor::zeros({1, 1, 5, 6}, true);
        for (Eigen::Index i = 0; i < pred.data().size(); ++i) {
            const double off = rng.uniform(0.2, 1.0);
            pred.data()[i] = gt.data()[i] + (rng.uniform() < 0.5 ? -off : off);
        }
        auto mask = std::make_shared<std::vector<std::uint8_t>>(std::size_t(pred.numel()));
        for (auto& m : *mask) m = rng.uniform() < 0.5 ? 1 : 0;
        std::vector<Tensor> in = {pred, gt};
        return grad_check(
            [mask](std::vector<Tensor>& v) { return masked_l1(v[0], v[1], mask->data()); }, in,
            eps, rng);
    }});
    return cases;
}

}  // namespace crl
