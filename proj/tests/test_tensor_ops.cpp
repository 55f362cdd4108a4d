#include <doctest.h>

#include "crl/gradcheck.hpp"
#include "crl/ops.hpp"

using namespace crl;

namespace {

// Direct nested-sum convolution, the independent oracle for conv2d.
Tensor conv2d_brute(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec) {
    const Shape4 in = x.shape();
    const int oh = spec.out_size(in.h), ow = spec.out_size(in.w);
    Tensor out = Tensor::zeros({in.n, spec.out_channels, oh, ow});
    for (int n = 0; n < in.n; ++n)
        for (int co = 0; co < spec.out_channels; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b.at(0, co, 0, 0);
                    for (int ci = 0; ci < spec.in_channels; ++ci)
                        for (int ki = 0; ki < spec.kernel; ++ki)
                            for (int kj = 0; kj < spec.kernel; ++kj) {
                                const int iy = oy * spec.stride - spec.padding + ki;
                                const int ix = ox * spec.stride - spec.padding + kj;
                                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                                acc += w.at(co, ci, ki, kj) * x.at(n, ci, iy, ix);
                            }
                    out.at(n, co, oy, ox) = acc;
                }
    return out;
}

double dot(const Tensor& a, const Tensor& b) { return (a.data() * b.data()).sum(); }

}  // namespace

TEST_CASE("conv2d shape follows the layer table (conv1 row)") {
    Rng rng(0);
    Tensor x = Tensor::uniform({1, 13, 64, 128}, rng, -1, 1);
    Tensor w = Tensor::uniform({64, 13, 5, 5}, rng, -0.1, 0.1);
    Tensor b = Tensor::zeros({1, 64, 1, 1});
    Tensor y = conv2d(x, w, b, ConvSpec{5, 1, 2, 13, 64});
    CHECK(y.shape() == Shape4{1, 64, 64, 128});
}

TEST_CASE("conv2d identity kernel") {
    Rng rng(1);
    Tensor x = Tensor::uniform({1, 1, 6, 7}, rng, -2, 2);
    Tensor w = Tensor::constant({1, 1, 1, 1}, 1.0);
    Tensor b = Tensor::zeros({1, 1, 1, 1});
    Tensor y = conv2d(x, w, b, ConvSpec{1, 1, 0, 1, 1});
    CHECK((y.data() == x.data()).all());
}

TEST_CASE("conv2d matches the nested-sum oracle") {
    Rng rng(2);
    Tensor x = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1);
    Tensor w = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
    Tensor b = Tensor::uniform({1, 3, 1, 1}, rng, -1, 1);
    const ConvSpec spec{3, 2, 1, 2, 3};
    Tensor got = conv2d(x, w, b, spec);
    Tensor want = conv2d_brute(x, w, b, spec);
    CHECK(got.shape() == want.shape());
    CHECK((got.data() - want.data()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("conv2d rejects mismatched shapes") {
    Rng rng(3);
    Tensor x = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1);
    Tensor w = Tensor::uniform({3, 4, 3, 3}, rng, -1, 1);
    Tensor b = Tensor::zeros({1, 3, 1, 1});
    CHECK_THROWS_AS(conv2d(x, w, b, ConvSpec{3, 1, 1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(conv2d(x, w, b, ConvSpec{3, 1, 1, 4, 3}), DimensionError);
}

TEST_CASE("transposed_conv2d doubles spatial dims on the upconv4 row") {
    Rng rng(4);
    Tensor x = Tensor::uniform({1, 1024, 4, 8}, rng, -0.1, 0.1);
    Tensor w = Tensor::uniform({1024, 512, 4, 4}, rng, -0.02, 0.02);
    Tensor b = Tensor::zeros({1, 512, 1, 1});
    Tensor y = transposed_conv2d(x, w, b, ConvSpec{4, 2, 1, 1024, 512});
    CHECK(y.shape() == Shape4{1, 512, 8, 16});
}

TEST_CASE("transposed_conv2d with identity weight is a per-pixel linear map") {
    Rng rng(5);
    Tensor x = Tensor::uniform({1, 1, 4, 5}, rng, -1, 1);
    Tensor w = Tensor::constant({1, 1, 1, 1}, 1.0);
    Tensor b = Tensor::zeros({1, 1, 1, 1});
    Tensor y = transposed_conv2d(x, w, b, ConvSpec{1, 1, 0, 1, 1});
    CHECK((y.data() == x.data()).all());
}

TEST_CASE("conv2d and transposed_conv2d form an adjoint pair") {
    Rng rng(6);
    for (int rep = 0; rep < 5; ++rep) {
        const ConvSpec spec{3, 2, 1, 2, 3};
        Tensor x = Tensor::uniform({1, 2, 6, 6}, rng, -1, 1);
        Tensor w = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
        Tensor zb3 = Tensor::zeros({1, 3, 1, 1});
        Tensor zb2 = Tensor::zeros({1, 2, 1, 1});
        Tensor cx = conv2d(x, w, zb3, spec);
        Tensor y = Tensor::uniform(cx.shape(), rng, -1, 1);
        // Same weight buffer, channel roles swapped.
        Tensor ty = transposed_conv2d(y, w, zb2, ConvSpec{3, 2, 1, 3, 2});
        CHECK(ty.shape() == x.shape());
        CHECK(std::abs(dot(cx, y) - dot(x, ty)) < 1e-10);
    }
}

TEST_CASE("gradient of conv2d w.r.t. input equals the transposed convolution") {
    Rng rng(7);
    const ConvSpec spec{3, 1, 1, 1, 1};
    Tensor x = Tensor::uniform({1, 1, 6, 6}, rng, -1, 1, true);
    Tensor w = Tensor::uniform({1, 1, 3, 3}, rng, -1, 1);
    Tensor b = Tensor::zeros({1, 1, 1, 1});
    Tensor y = conv2d(x, w, b, spec);
    Tensor upstream = Tensor::uniform(y.shape(), rng, -1, 1);
    sum(mul(y, upstream)).backward();
    Tensor want = transposed_conv2d(upstream, w, b, ConvSpec{3, 1, 1, 1, 1});
    CHECK((x.grad() - want.data()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("leaky_relu forward values") {
    Tensor x = Tensor::from_vector({1, 1, 1, 2}, {3.0, -2.0});
    Tensor y = leaky_relu(x, 0.1);
    CHECK(y.data()[0] == doctest::Approx(3.0));
    CHECK(y.data()[1] == doctest::Approx(-0.2));
    CHECK_THROWS_AS(leaky_relu(x, 1.0), UsageError);
}

TEST_CASE("concat_channels counts and duplication") {
    Rng rng(8);
    Tensor a3 = Tensor::uniform({1, 3, 4, 5}, rng, -1, 1);
    Tensor a1 = Tensor::uniform({1, 1, 4, 5}, rng, -1, 1);
    Tensor c = concat_channels<double>({a3, a3, a3, a3, a1});
    CHECK(c.shape() == Shape4{1, 13, 4, 5});

    Tensor dup = concat_channels<double>({a1, a1});
    CHECK(dup.shape().c == 2);
    CHECK((dup.data().head(a1.numel()) == dup.data().tail(a1.numel())).all());

    Tensor bad = Tensor::uniform({1, 1, 5, 5}, rng, -1, 1);
    CHECK_THROWS_AS(concat_channels<double>({a1, bad}), DimensionError);
}

TEST_CASE("concat backward splits gradient per input") {
    Rng rng(9);
    Tensor a = Tensor::uniform({1, 2, 3, 3}, rng, -1, 1, true);
    Tensor b = Tensor::uniform({1, 5, 3, 3}, rng, -1, 1, true);
    sum(concat_channels<double>({a, b})).backward();
    CHECK((a.grad() == 1.0).all());
    CHECK((b.grad() == 1.0).all());
    CHECK(a.grad().size() == a.numel());
    CHECK(b.grad().size() == b.numel());
}

TEST_CASE("add preserves shape and passes gradient through") {
    Rng rng(10);
    Tensor a = Tensor::uniform({2, 1, 4, 8}, rng, -1, 1, true);
    Tensor z = Tensor::zeros(a.shape());
    Tensor y = add(a, z);
    CHECK((y.data() == a.data()).all());
    CHECK(y.shape() == a.shape());
    Tensor other = Tensor::uniform({1, 1, 4, 8}, rng, -1, 1);
    CHECK_THROWS_AS(add(a, other), DimensionError);
}

TEST_CASE("backward: sum loss gives all-ones gradient") {
    Rng rng(11);
    Tensor x = Tensor::uniform({2, 3, 4, 5}, rng, -1, 1, true);
    sum(x).backward();
    CHECK((x.grad() == 1.0).all());
}

TEST_CASE("backward requires a scalar root") {
    Rng rng(12);
    Tensor x = Tensor::uniform({1, 1, 2, 2}, rng, -1, 1, true);
    CHECK_THROWS_AS(x.backward(), UsageError);
}

TEST_CASE("backward: leaf not on the path keeps zero grad") {
    Rng rng(13);
    Tensor x = Tensor::uniform({1, 1, 2, 2}, rng, -1, 1, true);
    Tensor unused = Tensor::uniform({1, 1, 2, 2}, rng, -1, 1, true);
    sum(x).backward();
    CHECK((unused.grad() == 0.0).all());
}

TEST_CASE("backward on a composite conv -> activation -> l1 graph matches finite differences") {
    Rng rng(14);
    const ConvSpec spec{3, 1, 1, 2, 2};
    std::vector<Tensor> inputs = {Tensor::uniform({1, 2, 4, 5}, rng, 0.2, 1.0, true),
                                  Tensor::uniform({2, 2, 3, 3}, rng, 0.1, 0.9, true),
                                  Tensor::uniform({1, 2, 1, 1}, rng, 0.1, 0.5, true)};
    auto report = grad_check(
        [&](std::vector<Tensor>& v) {
            return leaky_relu(conv2d(v[0], v[1], v[2], spec), 0.1);
        },
        inputs, 1e-3, rng);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("backward is deterministic") {
    Rng rng(15);
    const ConvSpec spec{3, 2, 1, 2, 4};
    Tensor x = Tensor::uniform({2, 2, 8, 8}, rng, -1, 1, true);
    Tensor w = Tensor::uniform({4, 2, 3, 3}, rng, -1, 1, true);
    Tensor b = Tensor::uniform({1, 4, 1, 1}, rng, -1, 1, true);
    auto run = [&] {
        sum(conv2d(x, w, b, spec)).backward();
        return std::tuple(x.grad(), w.grad(), b.grad());
    };
    auto [gx1, gw1, gb1] = run();
    auto [gx2, gw2, gb2] = run();
    CHECK((gx1 == gx2).all());
    CHECK((gw1 == gw2).all());
    CHECK((gb1 == gb2).all());
}

TEST_CASE("grad_check is near-exact for a linear map") {
    Rng rng(16);
    std::vector<Tensor> inputs = {Tensor::uniform({1, 2, 3, 4}, rng, -1, 1, true)};
    auto report = grad_check([](std::vector<Tensor>& v) { return scale(v[0], 2.5); }, inputs,
                             1e-3, rng);
    CHECK(report.max_rel_err < 1e-10);
}

TEST_CASE("gradcheck registry certifies every primitive at 1e-4") {
    for (const auto& c : gradcheck_registry()) {
        for (std::uint64_t seed = 0; seed < 2; ++seed) {
            const auto report = c.run(seed, 1e-3);
            INFO(c.name, " seed ", seed);
            CHECK(report.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("conv2d gradcheck is tight") {
    auto registry = gradcheck_registry();
    for (const auto& c : registry)
        if (c.name == "conv2d") CHECK(c.run(3, 1e-3).max_rel_err < 1e-6);
}

TEST_CASE("ConvSpec output size formula covers the layer table") {
    // (kernel, stride, in, out) rows with same-style padding on 64x128 inputs.
    struct Row {
        int k, s, factor_in, factor_out;
    };
    const Row rows[] = {{5, 1, 1, 1}, {5, 2, 1, 2}, {3, 1, 2, 2}, {3, 2, 2, 4},
                        {3, 1, 4, 4}, {3, 2, 4, 8}, {3, 2, 8, 16}, {3, 1, 16, 16}};
    for (const auto& r : rows) {
        const int in_h = 64 / r.factor_in, in_w = 128 / r.factor_in;
        ConvSpec spec{r.k, r.s, 0, 1, 1};
        spec.padding = r.s == 1 ? r.k / 2 : (r.k - 1) / 2;
        CHECK(spec.out_size(in_h) == 64 / r.factor_out);
        CHECK(spec.out_size(in_w) == 128 / r.factor_out);
    }
}
