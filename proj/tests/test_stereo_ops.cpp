#include <doctest.h>

#include "crl/gradcheck.hpp"
#include "crl/stereo_ops.hpp"

using namespace crl;

TEST_CASE("warp with zero disparity is the identity, bit for bit") {
    Rng rng(20);
    Tensor img = Tensor::uniform({2, 3, 6, 9}, rng, -1, 1);
    Tensor d = Tensor::zeros({2, 1, 6, 9});
    for (int sign : {+1, -1}) {
        Tensor out = warp(img, d, sign);
        CHECK((out.data() == img.data()).all());
    }
}

TEST_CASE("warp of a horizontal ramp with d = 0.5 shifts by exactly 0.5") {
    const int H = 4, W = 10;
    Tensor img = Tensor::zeros({1, 1, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) img.at(0, 0, y, x) = double(x);
    Tensor d = Tensor::constant({1, 1, H, W}, 0.5);
    Tensor out = warp(img, d, +1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W - 1; ++x)  // interior: x + 0.5 stays in range
            CHECK(out.at(0, 0, y, x) == doctest::Approx(x + 0.5).epsilon(1e-12));
}

TEST_CASE("warp is exact for integer disparities on interior pixels") {
    Rng rng(21);
    Tensor img = Tensor::uniform({1, 2, 5, 12}, rng, 0, 1);
    Tensor d = Tensor::zeros({1, 1, 5, 12});
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 12; ++x) d.at(0, 0, y, x) = double(rng.uniform_int(0, 3));
    Tensor out = warp(img, d, -1);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 12; ++x) {
                const int xs = x - int(d.at(0, 0, y, x));
                if (xs < 0) continue;
                CHECK(std::abs(out.at(0, c, y, x) - img.at(0, c, y, xs)) < 1e-15);
            }
}

TEST_CASE("warp rejects mismatched shapes") {
    Rng rng(22);
    Tensor img = Tensor::uniform({1, 3, 4, 6}, rng, 0, 1);
    Tensor d = Tensor::zeros({1, 1, 4, 5});
    CHECK_THROWS_AS(warp(img, d, +1), DimensionError);
}

TEST_CASE("error_map is |a-b| and matches the per-pixel oracle") {
    Tensor a = Tensor::constant({1, 1, 1, 1}, 0.7);
    Tensor b = Tensor::constant({1, 1, 1, 1}, 0.2);
    CHECK(error_map(a, b).item() == doctest::Approx(0.5));

    Rng rng(23);
    Tensor u = Tensor::uniform({2, 3, 5, 7}, rng, -2, 2);
    Tensor v = Tensor::uniform({2, 3, 5, 7}, rng, -2, 2);
    Tensor e = error_map(u, v);
    for (Eigen::Index i = 0; i < e.data().size(); ++i)
        CHECK(std::abs(e.data()[i] - std::abs(u.data()[i] - v.data()[i])) < 1e-15);
    CHECK((e.data() == error_map(v, u).data()).all());

    Tensor identical = error_map(u, u);
    CHECK((identical.data() == 0.0).all());
}

TEST_CASE("bilinear_downsample identity, constants and table shape") {
    Rng rng(24);
    Tensor x = Tensor::uniform({1, 2, 8, 12}, rng, -3, 3);
    Tensor same = bilinear_downsample(x, 1, 1.0);
    CHECK((same.data() == x.data()).all());

    Tensor c = Tensor::constant({1, 1, 8, 8}, 0.375);
    for (int f : {2, 4}) {
        Tensor down = bilinear_downsample(c, f, 1.0);
        CHECK((down.data() == 0.375).all());
    }

    Tensor big = Tensor::uniform({1, 1, 64, 128}, rng, 0, 1);
    CHECK(bilinear_downsample(big, 4, 1.0).shape() == Shape4{1, 1, 16, 32});

    CHECK_THROWS_AS(bilinear_downsample(x, 5, 1.0), DimensionError);
}

TEST_CASE("bilinear_downsample preserves the global mean of linear ramps") {
    const int H = 16, W = 32;
    Tensor ramp = Tensor::zeros({1, 1, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) ramp.at(0, 0, y, x) = 2.0 * x - 3.0 * y + 1.0;
    const double mean_in = ramp.data().mean();
    for (int f : {2, 4, 8}) {
        Tensor down = bilinear_downsample(ramp, f, 1.0);
        CHECK(down.data().mean() == doctest::Approx(mean_in).epsilon(1e-12));
    }
}

TEST_CASE("bilinear_downsample applies value_scale") {
    Tensor c = Tensor::constant({1, 1, 4, 4}, 8.0);
    Tensor down = bilinear_downsample(c, 2, 0.5);
    CHECK((down.data() == 4.0).all());
}

TEST_CASE("bilinear_upsample_x2 doubles dims and preserves constants") {
    Tensor c = Tensor::constant({1, 2, 3, 5}, -1.25);
    Tensor up = bilinear_upsample_x2(c, 1.0);
    CHECK(up.shape() == Shape4{1, 2, 6, 10});
    CHECK((up.data() == -1.25).all());
}

TEST_CASE("correlation1d: identical features give mean-square at k=0") {
    Rng rng(25);
    Tensor f = Tensor::uniform({1, 4, 3, 8}, rng, -1, 1);
    CostVolumeT<double> cv = correlation1d(f, f, 2);
    CHECK(cv.data.shape() == Shape4{1, 3, 3, 8});
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 8; ++x) {
            double want = 0.0;
            for (int c = 0; c < 4; ++c) want += f.at(0, c, y, x) * f.at(0, c, y, x);
            want /= 4.0;
            CHECK(cv.data.at(0, 0, y, x) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("correlation1d: shifted features peak at the shift") {
    Rng rng(26);
    const int W = 24, shift = 3;
    Tensor left = Tensor::uniform({1, 6, 4, W}, rng, -1, 1);
    Tensor right = Tensor::zeros({1, 6, 4, W});
    // right(x) = left(x + shift): the left pixel x matches right pixel x - shift.
    for (int c = 0; c < 6; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < W; ++x)
                right.at(0, c, y, x) =
                    x + shift < W ? left.at(0, c, y, x + shift) : rng.uniform(-1, 1);
    CostVolumeT<double> cv = correlation1d(left, right, 6);
    for (int y = 0; y < 4; ++y)
        for (int x = shift + 6; x < W - shift; ++x) {
            int best = 0;
            for (int k = 1; k <= 6; ++k)
                if (cv.data.at(0, k, y, x) > cv.data.at(0, best, y, x)) best = k;
            CHECK(best == shift);
        }
}

TEST_CASE("correlation1d matches a brute-force oracle and zero-fills out of range") {
    Rng rng(27);
    Tensor l = Tensor::uniform({1, 3, 2, 7}, rng, -1, 1);
    Tensor r = Tensor::uniform({1, 3, 2, 7}, rng, -1, 1);
    CostVolumeT<double> cv = correlation1d(l, r, 4);
    for (int k = 0; k <= 4; ++k)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 7; ++x) {
                double want = 0.0;
                if (x - k >= 0) {
                    for (int c = 0; c < 3; ++c) want += l.at(0, c, y, x) * r.at(0, c, y, x - k);
                    want /= 3.0;
                }
                CHECK(cv.data.at(0, k, y, x) == doctest::Approx(want).epsilon(1e-12));
            }
    CHECK_THROWS_AS(correlation1d(l, r, 7), UsageError);
}

TEST_CASE("masked_l1 basics") {
    Rng rng(28);
    Tensor gt = Tensor::uniform({1, 1, 4, 6}, rng, 0, 5);
    CHECK(masked_l1(gt, gt, nullptr).item() == 0.0);

    // Half the pixels invalid; the valid ones off by exactly 2.
    Tensor pred = Tensor::zeros({1, 1, 4, 6});
    std::vector<std::uint8_t> mask(24);
    for (int i = 0; i < 24; ++i) {
        mask[std::size_t(i)] = i % 2;
        pred.data()[i] = gt.data()[i] + (i % 2 ? 2.0 : 1000.0);
    }
    CHECK(masked_l1(pred, gt, mask.data()).item() == doctest::Approx(2.0));
}

TEST_CASE("masked_l1 matches the per-pixel loop oracle") {
    Rng rng(29);
    Tensor pred = Tensor::uniform({2, 1, 5, 5}, rng, -4, 4);
    Tensor gt = Tensor::uniform({2, 1, 5, 5}, rng, -4, 4);
    std::vector<std::uint8_t> mask(std::size_t(pred.numel()));
    for (auto& m : mask) m = rng.uniform() < 0.6 ? 1 : 0;
    double acc = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < pred.numel(); ++i)
        if (mask[std::size_t(i)]) {
            acc += std::abs(pred.data()[i] - gt.data()[i]);
            ++count;
        }
    CHECK(masked_l1(pred, gt, mask.data()).item() ==
          doctest::Approx(acc / count).epsilon(1e-12));
}

TEST_CASE("masked_l1 is invariant to values at invalid pixels") {
    Rng rng(30);
    Tensor pred = Tensor::uniform({1, 1, 6, 6}, rng, 0, 1);
    Tensor gt = Tensor::uniform({1, 1, 6, 6}, rng, 0, 1);
    std::vector<std::uint8_t> mask(36);
    for (auto& m : mask) m = rng.uniform() < 0.5 ? 1 : 0;
    const double before = masked_l1(pred, gt, mask.data()).item();
    for (int i = 0; i < 36; ++i)
        if (!mask[std::size_t(i)]) pred.data()[i] = rng.uniform(-1e6, 1e6);
    CHECK(masked_l1(pred, gt, mask.data()).item() == before);
}

TEST_CASE("masked_l1 with no valid pixel returns 0 with zero gradient") {
    Rng rng(31);
    Tensor pred = Tensor::uniform({1, 1, 3, 3}, rng, 0, 1, true);
    Tensor gt = Tensor::uniform({1, 1, 3, 3}, rng, 0, 1);
    std::vector<std::uint8_t> mask(9, 0);
    Tensor loss = masked_l1(pred, gt, mask.data());
    CHECK(loss.item() == 0.0);
    loss.backward();
    CHECK((pred.grad() == 0.0).all());
}

TEST_CASE("masked_l1 scale mismatch is a usage error") {
    Tensor a = Tensor::zeros({1, 1, 4, 4});
    DisparityMapT<double> pred{a, 1, {}};
    DisparityMapT<double> gt{a, 0, {}};
    CHECK_THROWS_AS(masked_l1(pred, gt), UsageError);
}

TEST_CASE("stereo operators pass grad_check at 1e-4") {
    Rng rng(32);
    // warp w.r.t. image and disparity at fractional disparities
    {
        std::vector<Tensor> in = {Tensor::uniform({1, 2, 4, 8}, rng, -1, 1, true),
                                  detail::safe_disparity({1, 1, 4, 8}, 8, rng)};
        auto rep = grad_check([](std::vector<Tensor>& v) { return warp(v[0], v[1], +1); }, in,
                              1e-3, rng);
        CHECK(rep.max_rel_err < 1e-4);
    }
    // warp with the data-convention sign
    {
        Tensor img = Tensor::uniform({1, 1, 3, 8}, rng, -1, 1, true);
        Tensor d = Tensor::zeros({1, 1, 3, 8}, true);
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 8; ++x)
                d.at(0, 0, y, x) = rng.uniform(0.1, 0.4) + std::min(x, 2);
        std::vector<Tensor> in = {img, d};
        auto rep = grad_check([](std::vector<Tensor>& v) { return warp(v[0], v[1], -1); }, in,
                              1e-3, rng);
        CHECK(rep.max_rel_err < 1e-4);
    }
}
