#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "crl/layers.hpp"
#include "crl/stereo_ops.hpp"

namespace crl {

// Disparity unit convention across scales. PerScale keeps values in pixels
// of the map's own resolution (shrinking a map by f divides values by f);
// FullRes keeps full-resolution pixel units everywhere.
enum class ValueScalePolicy { PerScale, FullRes };

inline const char* value_scale_policy_name(ValueScalePolicy p) {
    return p == ValueScalePolicy::PerScale ? "per_scale" : "full_res";
}
inline ValueScalePolicy value_scale_policy_from_name(const std::string& s) {
    if (s == "per_scale") return ValueScalePolicy::PerScale;
    if (s == "full_res") return ValueScalePolicy::FullRes;
    throw ConfigError("unknown value_scale_policy '" + s + "'");
}

struct CrlConfig {
    double width_stage1 = 0.25;
    double width_stage2 = 0.25;
    int corr_max_disp = 40;
    int warp_sign = -1;
    ValueScalePolicy value_scale = ValueScalePolicy::PerScale;

    double gt_value_scale(int scale) const {
        return value_scale == ValueScalePolicy::PerScale ? 1.0 / double(1 << scale) : 1.0;
    }
};

namespace detail {

inline int scaled(int channels, double w) {
    return std::max(1, int(std::ceil(channels * w)));
}

}  // namespace detail

// Second-stage residual network, reproducing the published layer table
// exactly at width multiplier 1. Inputs: "input13" (left+right+left_s+err+
// pr_s1) and "pr_s1" (the full-resolution first-stage disparity).
// Predictions: pr_s2 (full res), pr_s2_2, pr_s2_4, pr_s2_8, pr_s2_16.
inline std::vector<LayerSpec> dispresnet_layers(double w,
                                                ValueScalePolicy policy =
                                                    ValueScalePolicy::PerScale) {
    using detail::scaled;
    const double up = policy == ValueScalePolicy::PerScale ? 2.0 : 1.0;
    auto ds = [&](int f) { return policy == ValueScalePolicy::PerScale ? 1.0 / f : 1.0; };
    std::vector<LayerSpec> t;
    auto input = [&](std::string name, int c) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Input, .in_channels = c,
                     .out_channels = c});
    };
    auto conv = [&](std::string name, int k, int s, int cin, int cout, int fi, int fo,
                    std::vector<std::string> in, bool linear = false) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Conv, .kernel = k,
                     .stride = s, .in_channels = cin, .out_channels = cout, .in_factor = fi,
                     .out_factor = fo, .inputs = std::move(in), .linear = linear});
    };
    auto upconv = [&](std::string name, int cin, int cout, int fi, int fo,
                      std::vector<std::string> in) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Upconv, .kernel = 4,
                     .stride = 2, .in_channels = cin, .out_channels = cout, .in_factor = fi,
                     .out_factor = fo, .inputs = std::move(in)});
    };
    auto down = [&](std::string name, int f, std::vector<std::string> in) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Downsample, .in_channels = 1,
                     .out_channels = 1, .in_factor = 1, .out_factor = f,
                     .inputs = std::move(in), .down_factor = f, .value_scale = ds(f)});
    };
    auto sum = [&](std::string name, int f, std::vector<std::string> in) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Sum, .in_channels = 1,
                     .out_channels = 1, .in_factor = f, .out_factor = f,
                     .inputs = std::move(in)});
    };
    auto up2 = [&](std::string name, int fi, std::vector<std::string> in) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Upsample2x, .in_channels = 1,
                     .out_channels = 1, .in_factor = fi, .out_factor = fi / 2,
                     .inputs = std::move(in), .value_scale = up});
    };

    input("input13", 13);
    input("pr_s1", 1);

    conv("conv1", 5, 1, 13, scaled(64, w), 1, 1, {"input13"});
    conv("conv2", 5, 2, scaled(64, w), scaled(128, w), 1, 2, {"conv1"});
    conv("conv2_1", 3, 1, scaled(128, w), scaled(128, w), 2, 2, {"conv2"});
    // The published table lists conv3's input as "conv_3_1", which is not
    // defined at that point; conv2_1 is the only shape-consistent predecessor.
    conv("conv3", 3, 2, scaled(128, w), scaled(256, w), 2, 4, {"conv2_1"});
    conv("conv3_1", 3, 1, scaled(256, w), scaled(256, w), 4, 4, {"conv3"});
    conv("conv4", 3, 2, scaled(256, w), scaled(512, w), 4, 8, {"conv3_1"});
    conv("conv4_1", 3, 1, scaled(512, w), scaled(512, w), 8, 8, {"conv4"});
    conv("conv5", 3, 2, scaled(512, w), scaled(1024, w), 8, 16, {"conv4_1"});
    conv("conv5_1", 3, 1, scaled(1024, w), scaled(1024, w), 16, 16, {"conv5"});

    conv("res_16", 3, 1, scaled(1024, w), 1, 16, 16, {"conv5_1"}, true);
    down("pr_s1_16", 16, {"pr_s1"});
    sum("pr_s2_16", 16, {"pr_s1_16", "res_16"});

    upconv("upconv4", scaled(1024, w), scaled(512, w), 16, 8, {"conv5_1"});
    up2("pr_s2_16_x2", 16, {"pr_s2_16"});
    conv("iconv4", 3, 1, scaled(512, w) + scaled(512, w) + 1, scaled(512, w), 8, 8,
         {"upconv4", "conv4_1", "pr_s2_16_x2"});
    conv("res_8", 3, 1, scaled(512, w), 1, 8, 8, {"iconv4"}, true);
    down("pr_s1_8", 8, {"pr_s1"});
    sum("pr_s2_8", 8, {"pr_s1_8", "res_8"});

    upconv("upconv3", scaled(512, w), scaled(256, w), 8, 4, {"iconv4"});
    up2("pr_s2_8_x2", 8, {"pr_s2_8"});
    conv("iconv3", 3, 1, scaled(256, w) + scaled(256, w) + 1, scaled(256, w), 4, 4,
         {"upconv3", "conv3_1", "pr_s2_8_x2"});
    conv("res_4", 3, 1, scaled(256, w), 1, 4, 4, {"iconv3"}, true);
    down("pr_s1_4", 4, {"pr_s1"});
    sum("pr_s2_4", 4, {"pr_s1_4", "res_4"});

    upconv("upconv2", scaled(256, w), scaled(128, w), 4, 2, {"iconv3"});
    up2("pr_s2_4_x2", 4, {"pr_s2_4"});
    conv("iconv2", 3, 1, scaled(128, w) + scaled(128, w) + 1, scaled(128, w), 2, 2,
         {"upconv2", "conv2_1", "pr_s2_4_x2"});
    conv("res_2", 3, 1, scaled(128, w), 1, 2, 2, {"iconv2"}, true);
    down("pr_s1_2", 2, {"pr_s1"});
    sum("pr_s2_2", 2, {"pr_s1_2", "res_2"});

    upconv("upconv1", scaled(128, w), scaled(64, w), 2, 1, {"iconv2"});
    up2("pr_s2_2_x2", 2, {"pr_s2_2"});
    conv("res_1", 5, 1, scaled(64, w) + scaled(64, w) + 1, 1, 1, 1,
         {"upconv1", "conv1", "pr_s2_2_x2"}, true);
    sum("pr_s2", 1, {"pr_s1", "res_1"});
    return t;
}

// First stage: correlation-based hour-glass network extended with two extra
// up-convolution modules from the last two decoder levels, a concatenation
// with the left image, and a final one-channel 5x5 conv, so the prediction
// comes out at full input resolution. Predictions pr0..pr6 cover scales
// 0..6 (pr0 full resolution).
inline std::vector<LayerSpec> dispfulnet_layers(double w, int corr_max_disp,
                                                ValueScalePolicy policy =
                                                    ValueScalePolicy::PerScale) {
    using detail::scaled;
    const double up = policy == ValueScalePolicy::PerScale ? 2.0 : 1.0;
    std::vector<LayerSpec> t;
    auto input = [&](std::string name, int c) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Input, .in_channels = c,
                     .out_channels = c});
    };
    auto conv = [&](std::string name, int k, int s, int cin, int cout, int fi, int fo,
                    std::vector<std::string> in, bool linear = false,
                    std::string tied = "") {
        t.push_back({.name = std::move(name), .kind = LayerKind::Conv, .kernel = k,
                     .stride = s, .in_channels = cin, .out_channels = cout, .in_factor = fi,
                     .out_factor = fo, .inputs = std::move(in), .linear = linear,
                     .tied_to = std::move(tied)});
    };
    auto upconv = [&](std::string name, int k, int s, int cin, int cout, int fi, int fo,
                      std::vector<std::string> in) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Upconv, .kernel = k,
                     .stride = s, .in_channels = cin, .out_channels = cout, .in_factor = fi,
                     .out_factor = fo, .inputs = std::move(in)});
    };
    auto up2 = [&](std::string name, int fi, std::vector<std::string> in) {
        t.push_back({.name = std::move(name), .kind = LayerKind::Upsample2x, .in_channels = 1,
                     .out_channels = 1, .in_factor = fi, .out_factor = fi / 2,
                     .inputs = std::move(in), .value_scale = up});
    };

    const int D = corr_max_disp;
    const int c64 = scaled(64, w), c128 = scaled(128, w), c256 = scaled(256, w),
              c512 = scaled(512, w), c1024 = scaled(1024, w), c32 = scaled(32, w),
              c16 = scaled(16, w);

    input("left", 3);
    input("right", 3);
    // Siamese feature towers; the right tower reuses the left tower weights.
    conv("conv1", 7, 2, 3, c64, 1, 2, {"left"});
    conv("conv1r", 7, 2, 3, c64, 1, 2, {"right"}, false, "conv1");
    conv("conv2", 5, 2, c64, c128, 2, 4, {"conv1"});
    conv("conv2r", 5, 2, c64, c128, 2, 4, {"conv1r"}, false, "conv2");
    t.push_back({.name = "corr", .kind = LayerKind::Corr, .in_channels = 2 * c128,
                 .out_channels = D + 1, .in_factor = 4, .out_factor = 4,
                 .inputs = {"conv2", "conv2r"}, .corr_max_disp = D});
    conv("conv_redir", 1, 1, c128, c64, 4, 4, {"conv2"});
    conv("conv3", 5, 2, D + 1 + c64, c256, 4, 8, {"corr", "conv_redir"});
    conv("conv3_1", 3, 1, c256, c256, 8, 8, {"conv3"});
    conv("conv4", 3, 2, c256, c512, 8, 16, {"conv3_1"});
    conv("conv4_1", 3, 1, c512, c512, 16, 16, {"conv4"});
    conv("conv5", 3, 2, c512, c512, 16, 32, {"conv4_1"});
    conv("conv5_1", 3, 1, c512, c512, 32, 32, {"conv5"});
    conv("conv6", 3, 2, c512, c1024, 32, 64, {"conv5_1"});
    conv("conv6_1", 3, 1, c1024, c1024, 64, 64, {"conv6"});
    conv("pr6", 3, 1, c1024, 1, 64, 64, {"conv6_1"}, true);

    upconv("upconv5", 4, 2, c1024, c512, 64, 32, {"conv6_1"});
    up2("pr6_x2", 64, {"pr6"});
    conv("iconv5", 3, 1, c512 + c512 + 1, c512, 32, 32, {"upconv5", "conv5_1", "pr6_x2"});
    conv("pr5", 3, 1, c512, 1, 32, 32, {"iconv5"}, true);

    upconv("upconv4", 4, 2, c512, c256, 32, 16, {"iconv5"});
    up2("pr5_x2", 32, {"pr5"});
    conv("iconv4", 3, 1, c256 + c512 + 1, c256, 16, 16, {"upconv4", "conv4_1", "pr5_x2"});
    conv("pr4", 3, 1, c256, 1, 16, 16, {"iconv4"}, true);

    upconv("upconv3", 4, 2, c256, c128, 16, 8, {"iconv4"});
    up2("pr4_x2", 16, {"pr4"});
    conv("iconv3", 3, 1, c128 + c256 + 1, c128, 8, 8, {"upconv3", "conv3_1", "pr4_x2"});
    conv("pr3", 3, 1, c128, 1, 8, 8, {"iconv3"}, true);

    upconv("upconv2", 4, 2, c128, c64, 8, 4, {"iconv3"});
    up2("pr3_x2", 8, {"pr3"});
    conv("iconv2", 3, 1, c64 + c128 + 1, c64, 4, 4, {"upconv2", "conv2", "pr3_x2"});
    conv("pr2", 3, 1, c64, 1, 4, 4, {"iconv2"}, true);

    upconv("upconv1", 4, 2, c64, c32, 4, 2, {"iconv2"});
    up2("pr2_x2", 4, {"pr2"});
    conv("iconv1", 3, 1, c32 + c64 + 1, c32, 2, 2, {"upconv1", "conv1", "pr2_x2"});
    conv("pr1", 3, 1, c32, 1, 2, 2, {"iconv1"}, true);

    // Extra up-convolution modules reaching full resolution.
    upconv("upfull1", 4, 2, c32, c16, 2, 1, {"iconv1"});
    upconv("upfull2", 8, 4, c64, c16, 4, 1, {"iconv2"});
    up2("pr1_x2", 2, {"pr1"});
    conv("pr0", 5, 1, c16 + c16 + 3 + 1, 1, 1, 1, {"upfull1", "upfull2", "left", "pr1_x2"},
         true);
    return t;
}

constexpr int kStage1Scales = 7;  // full resolution plus six coarser scales
constexpr int kStage2Scales = 5;

inline std::string stage1_pred_name(int scale) { return "pr" + std::to_string(scale); }
inline std::string stage2_pred_name(int scale) {
    return scale == 0 ? "pr_s2" : "pr_s2_" + std::to_string(1 << scale);
}
inline std::string stage2_residual_name(int scale) { return "res_" + std::to_string(1 << scale); }

template <typename S>
using MultiscalePrediction = std::vector<DisparityMapT<S>>;  // index = scale

template <typename S>
struct CRLModel {
    CrlConfig config;
    LayerNet<S> stage1;
    LayerNet<S> stage2;

    static CRLModel build(const CrlConfig& cfg, std::uint64_t seed) {
        CRLModel m;
        m.config = cfg;
        Rng rng(seed);
        m.stage1 = LayerNet<S>(dispfulnet_layers(cfg.width_stage1, cfg.corr_max_disp,
                                                 cfg.value_scale),
                               rng.stream(1));
        m.stage2 = LayerNet<S>(dispresnet_layers(cfg.width_stage2, cfg.value_scale),
                               rng.stream(2));
        return m;
    }

    std::uint64_t stage1_checksum() const { return stage1.checksum(); }
    std::uint64_t stage2_checksum() const { return stage2.checksum(); }
};

template <typename S>
void check_stage1_input(const TensorT<S>& left, const TensorT<S>& right) {
    if (!(left.shape() == right.shape()))
        throw DimensionError("stereo pair shapes differ: " + left.shape().str() + " vs " +
                             right.shape().str());
    if (left.shape().h % 64 != 0 || left.shape().w % 64 != 0)
        throw DimensionError("input dimensions " + left.shape().str() +
                             " must be multiples of 64 (use pad-and-crop)");
}

// First stage forward; d1 per scale 0..6, scale 0 at full input resolution.
template <typename S>
MultiscalePrediction<S> forward_stage1(const CRLModel<S>& model, const TensorT<S>& left,
                                       const TensorT<S>& right) {
    check_stage1_input(left, right);
    auto values = model.stage1.forward({{"left", left}, {"right", right}});
    MultiscalePrediction<S> preds;
    preds.reserve(kStage1Scales);
    for (int s = 0; s < kStage1Scales; ++s)
        preds.push_back(DisparityMapT<S>{values.at(stage1_pred_name(s)), s, {}});
    return preds;
}

// Stage-2 input tensor: [I_L(3), I_R(3), warped I~_L(3), e_L(3), d1(1)],
// matching the table's "left+right+left_s+err+pr_s1" channel order.
template <typename S>
TensorT<S> assemble_stage2_input(const TensorT<S>& left, const TensorT<S>& right,
                                 const TensorT<S>& d1, int warp_sign) {
    TensorT<S> warped = warp(right, d1, warp_sign);
    TensorT<S> err = error_map(left, warped);
    return concat_channels<S>({left, right, warped, err, d1});
}

template <typename S>
struct Stage2Output {
    MultiscalePrediction<S> d2;        // scale 0..4
    std::vector<TensorT<S>> residual;  // r2 per scale
};

template <typename S>
Stage2Output<S> forward_stage2(const CRLModel<S>& model, const TensorT<S>& input13,
                               const TensorT<S>& d1) {
    auto values = model.stage2.forward({{"input13", input13}, {"pr_s1", d1}});
    Stage2Output<S> out;
    for (int s = 0; s < kStage2Scales; ++s) {
        out.d2.push_back(DisparityMapT<S>{values.at(stage2_pred_name(s)), s, {}});
        out.residual.push_back(values.at("res_" + std::to_string(1 << s)));
    }
    return out;
}

template <typename S>
struct CrlOutput {
    MultiscalePrediction<S> d1;
    MultiscalePrediction<S> d2;
    std::vector<TensorT<S>> residual;
};

// Full cascade: stage 1, warp-based input assembly, stage 2. When
// freeze_stage1 is set the first stage output is detached, so no gradient
// (and no optimizer step) can reach stage-1 parameters.
template <typename S>
CrlOutput<S> forward_crl(const CRLModel<S>& model, const TensorT<S>& left,
                         const TensorT<S>& right, bool freeze_stage1 = false) {
    CrlOutput<S> out;
    out.d1 = forward_stage1(model, left, right);
    TensorT<S> d1 = out.d1[0].data;
    if (freeze_stage1) d1 = d1.detach();
    TensorT<S> input13 = assemble_stage2_input(left, right, d1, model.config.warp_sign);
    auto s2 = forward_stage2(model, input13, d1);
    out.d2 = std::move(s2.d2);
    out.residual = std::move(s2.residual);
    return out;
}

}  // namespace crl
