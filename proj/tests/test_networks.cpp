#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "crl/checkpoint.hpp"
#include "crl/networks.hpp"

using namespace crl;

namespace {

struct TableRow {
    const char* name;
    int k, s, cin, cout, i, o;
};

// The published DispResNet table, frozen as the conformance oracle
// (kernel, stride, in/out channels, input/output downsampling factor).
constexpr TableRow kDispResNetTable[] = {
    {"conv1", 5, 1, 13, 64, 1, 1},
    {"conv2", 5, 2, 64, 128, 1, 2},
    {"conv2_1", 3, 1, 128, 128, 2, 2},
    {"conv3", 3, 2, 128, 256, 2, 4},
    {"conv3_1", 3, 1, 256, 256, 4, 4},
    {"conv4", 3, 2, 256, 512, 4, 8},
    {"conv4_1", 3, 1, 512, 512, 8, 8},
    {"conv5", 3, 2, 512, 1024, 8, 16},
    {"conv5_1", 3, 1, 1024, 1024, 16, 16},
    {"res_16", 3, 1, 1024, 1, 16, 16},
    {"pr_s1_16", 0, 0, 1, 1, 1, 16},
    {"pr_s2_16", 0, 0, 1, 1, 16, 16},
    {"upconv4", 4, 2, 1024, 512, 16, 8},
    {"iconv4", 3, 1, 1025, 512, 8, 8},
    {"res_8", 3, 1, 512, 1, 8, 8},
    {"pr_s1_8", 0, 0, 1, 1, 1, 8},
    {"pr_s2_8", 0, 0, 1, 1, 8, 8},
    {"upconv3", 4, 2, 512, 256, 8, 4},
    {"iconv3", 3, 1, 513, 256, 4, 4},
    {"res_4", 3, 1, 256, 1, 4, 4},
    {"pr_s1_4", 0, 0, 1, 1, 1, 4},
    {"pr_s2_4", 0, 0, 1, 1, 4, 4},
    {"upconv2", 4, 2, 256, 128, 4, 2},
    {"iconv2", 3, 1, 257, 128, 2, 2},
    {"res_2", 3, 1, 128, 1, 2, 2},
    {"pr_s1_2", 0, 0, 1, 1, 1, 2},
    {"pr_s2_2", 0, 0, 1, 1, 2, 2},
    {"upconv1", 4, 2, 128, 64, 2, 1},
    {"res_1", 5, 1, 129, 1, 1, 1},
    {"pr_s2", 0, 0, 1, 1, 1, 1},
};

// Expected wiring of the table's Input Channels column.
const std::map<std::string, std::vector<std::string>> kDispResNetInputs = {
    {"conv1", {"input13"}},
    {"iconv4", {"upconv4", "conv4_1", "pr_s2_16"}},
    {"iconv3", {"upconv3", "conv3_1", "pr_s2_8"}},
    {"iconv2", {"upconv2", "conv2_1", "pr_s2_4"}},
    {"res_1", {"upconv1", "conv1", "pr_s2_2"}},
    {"pr_s2_16", {"pr_s1_16", "res_16"}},
    {"pr_s2_8", {"pr_s1_8", "res_8"}},
    {"pr_s2_4", {"pr_s1_4", "res_4"}},
    {"pr_s2_2", {"pr_s1_2", "res_2"}},
    {"pr_s2", {"pr_s1", "res_1"}},
};

const LayerSpec* find_layer(const std::vector<LayerSpec>& specs, const std::string& name) {
    for (const auto& l : specs)
        if (l.name == name) return &l;
    return nullptr;
}

// Drop the internal "<name>_x2" upsampling hops when comparing wiring
// against the table.
std::vector<std::string> strip_upsample(const std::vector<LayerSpec>& specs,
                                        const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const auto& in : inputs) {
        const LayerSpec* l = find_layer(specs, in);
        if (l && l->kind == LayerKind::Upsample2x)
            out.push_back(l->inputs[0]);
        else
            out.push_back(in);
    }
    return out;
}

CRLModel<double> desk_model(std::uint64_t seed = 5) {
    CrlConfig cfg;
    cfg.corr_max_disp = 6;
    return CRLModel<double>::build(cfg, seed);
}

void zero_residual_layers(CRLModel<double>& model) {
    for (const char* name : {"res_16", "res_8", "res_4", "res_2", "res_1"}) {
        model.stage2.weight(name).data().setZero();
        model.stage2.bias(name).data().setZero();
    }
}

}  // namespace

TEST_CASE("DispResNet at w=1 matches every cell of the published table") {
    const auto specs = dispresnet_layers(1.0);
    for (const auto& row : kDispResNetTable) {
        const LayerSpec* l = find_layer(specs, row.name);
        REQUIRE_MESSAGE(l != nullptr, row.name);
        INFO(row.name);
        if (l->kind == LayerKind::Conv || l->kind == LayerKind::Upconv) {
            CHECK(l->kernel == row.k);
            CHECK(l->stride == row.s);
        }
        CHECK(l->in_channels == row.cin);
        CHECK(l->out_channels == row.cout);
        CHECK(l->in_factor == row.i);
        CHECK(l->out_factor == row.o);
    }
    for (const auto& [name, want] : kDispResNetInputs) {
        const LayerSpec* l = find_layer(specs, name);
        REQUIRE(l != nullptr);
        CHECK(strip_upsample(specs, l->inputs) == want);
    }
    // exactly five prediction (element-wise summation) outputs
    int sums = 0;
    for (const auto& l : specs) sums += l.kind == LayerKind::Sum ? 1 : 0;
    CHECK(sums == 5);
}

TEST_CASE("DispResNet w=1 forward emits the five scales with exact shapes") {
    Rng rng(40);
    LayerNet<double> net(dispresnet_layers(1.0), Rng(7));
    Tensor input13 = Tensor::uniform({1, 13, 64, 128}, rng, -0.5, 0.5);
    Tensor d1 = Tensor::uniform({1, 1, 64, 128}, rng, 0, 10);
    auto values = net.forward({{"input13", input13}, {"pr_s1", d1}});
    CHECK(values.at("pr_s2").shape() == Shape4{1, 1, 64, 128});
    CHECK(values.at("pr_s2_2").shape() == Shape4{1, 1, 32, 64});
    CHECK(values.at("pr_s2_4").shape() == Shape4{1, 1, 16, 32});
    CHECK(values.at("pr_s2_8").shape() == Shape4{1, 1, 8, 16});
    CHECK(values.at("pr_s2_16").shape() == Shape4{1, 1, 4, 8});
}

TEST_CASE("DispResNet width multiplier scales internal channels, conv1 input stays 13") {
    const auto half = dispresnet_layers(0.5);
    const auto full = dispresnet_layers(1.0);
    for (const auto& l : full) {
        const LayerSpec* h = find_layer(half, l.name);
        REQUIRE(h != nullptr);
        if (l.name == "conv1") {
            CHECK(h->in_channels == 13);
            CHECK(h->out_channels == 32);
        }
        if (l.out_channels == 1) CHECK(h->out_channels == 1);  // predictions stay 1-channel
        if (l.name == "conv5_1") CHECK(h->out_channels == 512);
    }
}

TEST_CASE("DispFulNet forward: full-resolution output and 7 supervised scales") {
    CrlConfig cfg;
    cfg.corr_max_disp = 6;
    auto model = CRLModel<double>::build(cfg, 3);
    Rng rng(41);
    Tensor left = Tensor::uniform({2, 3, 64, 128}, rng, 0, 1);
    Tensor right = Tensor::uniform({2, 3, 64, 128}, rng, 0, 1);
    auto d1 = forward_stage1(model, left, right);
    CHECK(d1.size() == 7);
    CHECK(d1[0].data.shape() == Shape4{2, 1, 64, 128});
    for (int s = 0; s < 7; ++s) {
        CHECK(d1[std::size_t(s)].data.shape().c == 1);
        CHECK(d1[std::size_t(s)].data.shape().h == 64 >> s);
        CHECK(d1[std::size_t(s)].data.shape().w == 128 >> s);
    }
}

TEST_CASE("DispFulNet halving the width multiplier halves internal channels") {
    const auto full = dispfulnet_layers(1.0, 6);
    const auto half = dispfulnet_layers(0.5, 6);
    for (const auto& l : full) {
        const LayerSpec* h = find_layer(half, l.name);
        REQUIRE(h != nullptr);
        if (l.kind != LayerKind::Conv && l.kind != LayerKind::Upconv) continue;
        if (l.out_channels == 1)
            CHECK(h->out_channels == 1);
        else
            CHECK(h->out_channels == (l.out_channels + 1) / 2);
    }
}

TEST_CASE("DispFulNet rejects dimensions not divisible by 64") {
    auto model = desk_model();
    Rng rng(42);
    Tensor left = Tensor::uniform({1, 3, 48, 128}, rng, 0, 1);
    Tensor right = Tensor::uniform({1, 3, 48, 128}, rng, 0, 1);
    CHECK_THROWS_AS(forward_stage1(model, left, right), DimensionError);
}

TEST_CASE("assemble_stage2_input: channel order and the zero-disparity case") {
    Rng rng(43);
    Tensor left = Tensor::uniform({1, 3, 8, 16}, rng, 0, 1);
    Tensor right = Tensor::uniform({1, 3, 8, 16}, rng, 0, 1);
    Tensor d0 = Tensor::zeros({1, 1, 8, 16});
    Tensor in13 = assemble_stage2_input(left, right, d0, -1);
    CHECK(in13.shape() == Shape4{1, 13, 8, 16});
    const std::ptrdiff_t plane = 8 * 16;
    // channels: [left(3), right(3), warped(3), err(3), d1(1)]
    for (std::ptrdiff_t i = 0; i < 3 * plane; ++i) {
        CHECK(in13.data()[i] == left.data()[i]);
        CHECK(in13.data()[3 * plane + i] == right.data()[i]);
        CHECK(in13.data()[6 * plane + i] == right.data()[i]);  // warp with d=0
        CHECK(in13.data()[9 * plane + i] ==
              doctest::Approx(std::abs(left.data()[i] - right.data()[i])));
    }
    for (std::ptrdiff_t i = 0; i < plane; ++i) CHECK(in13.data()[12 * plane + i] == 0.0);
}

TEST_CASE("gradient reaches d1 through both the warp and the direct channel") {
    Rng rng(44);
    Tensor left = Tensor::uniform({1, 3, 6, 12}, rng, 0, 1);
    Tensor right = Tensor::uniform({1, 3, 6, 12}, rng, 0, 1);
    Tensor d1 = Tensor::zeros({1, 1, 6, 12}, true);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 12; ++x) d1.at(0, 0, y, x) = rng.uniform(0.1, 0.4) + std::min(x, 2);

    std::vector<Tensor> inputs = {d1};
    auto rep = grad_check(
        [&](std::vector<Tensor>& v) { return assemble_stage2_input(left, right, v[0], -1); },
        inputs, 1e-3, rng);
    CHECK(rep.max_rel_err < 1e-4);

    sum(assemble_stage2_input(left, right, d1, -1)).backward();
    CHECK(d1.grad().abs().maxCoeff() > 0.0);
}

TEST_CASE("zero residuals make d2 the downsampled d1 exactly (all five scales)") {
    auto model = desk_model(11);
    zero_residual_layers(model);
    Rng rng(45);
    Tensor left = Tensor::uniform({1, 3, 64, 128}, rng, 0, 1);
    Tensor right = Tensor::uniform({1, 3, 64, 128}, rng, 0, 1);
    auto out = forward_crl(model, left, right);
    const Tensor d1 = out.d1[0].data;
    for (int s = 0; s < 5; ++s) {
        CHECK((out.residual[std::size_t(s)].data() == 0.0).all());
        Tensor want = s == 0 ? d1 : bilinear_downsample(d1, 1 << s, 1.0 / double(1 << s));
        CHECK((out.d2[std::size_t(s)].data.data() == want.data()).all());
    }
}

TEST_CASE("d2(0) - d1 equals the full-resolution residual") {
    auto model = desk_model(12);
    Rng rng(46);
    Tensor left = Tensor::uniform({1, 3, 64, 128}, rng, 0, 1);
    Tensor right = Tensor::uniform({1, 3, 64, 128}, rng, 0, 1);
    auto out = forward_crl(model, left, right);
    CHECK((out.d2[0].data.data() - out.d1[0].data.data() - out.residual[0].data())
              .abs()
              .maxCoeff() < 1e-12);
    CHECK(out.d2[0].data.shape().h == left.shape().h);
    CHECK(out.d2[0].data.shape().w == left.shape().w);
}

TEST_CASE("two forward passes with identical weights and inputs are identical") {
    auto model = desk_model(13);
    Rng rng(47);
    Tensor left = Tensor::uniform({1, 3, 64, 128}, rng, 0, 1);
    Tensor right = Tensor::uniform({1, 3, 64, 128}, rng, 0, 1);
    auto a = forward_crl(model, left, right);
    auto b = forward_crl(model, left, right);
    CHECK((a.d2[0].data.data() == b.d2[0].data.data()).all());
    CHECK((a.d1[0].data.data() == b.d1[0].data.data()).all());
}

TEST_CASE("loss on d2 reaches stage-1 parameters when unfrozen, not when frozen") {
    auto model = desk_model(14);
    Rng rng(48);
    Tensor left = Tensor::uniform({1, 3, 64, 128}, rng, 0, 1);
    Tensor right = Tensor::uniform({1, 3, 64, 128}, rng, 0, 1);

    auto grad_norm_stage1 = [&](bool freeze) {
        auto out = forward_crl(model, left, right, freeze);
        sum(out.d2[0].data).backward();
        double norm = 0.0;
        for (auto& p : model.stage1.parameters()) norm += double(p.tensor.grad().abs().sum());
        for (auto& p : model.stage1.parameters()) p.tensor.zero_grad();
        return norm;
    };
    CHECK(grad_norm_stage1(false) > 0.0);
    CHECK(grad_norm_stage1(true) == 0.0);
}

TEST_CASE("checkpoint round trip preserves parameters and config") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "crl_test_ckpt.crl").string();
    CrlConfig cfg;
    cfg.corr_max_disp = 5;
    cfg.width_stage1 = 0.125;
    cfg.width_stage2 = 0.25;
    cfg.value_scale = ValueScalePolicy::FullRes;
    auto model = CRLModel<float>::build(cfg, 77);
    save_checkpoint(path, model);
    auto loaded = load_checkpoint<float>(path);
    CHECK(loaded.config.corr_max_disp == 5);
    CHECK(loaded.config.width_stage1 == doctest::Approx(0.125));
    CHECK(loaded.config.value_scale == ValueScalePolicy::FullRes);
    CHECK(loaded.stage1_checksum() == model.stage1_checksum());
    CHECK(loaded.stage2_checksum() == model.stage2_checksum());
    fs::remove(path);
}

TEST_CASE("checkpoint loader rejects bad magic and truncation") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "crl_test_ckpt_bad.crl").string();
    CrlConfig cfg;
    cfg.corr_max_disp = 4;
    auto model = CRLModel<float>::build(cfg, 1);
    save_checkpoint(path, model);

    // truncate
    {
        std::error_code ec;
        const auto size = fs::file_size(path, ec);
        fs::resize_file(path, size / 2, ec);
        CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);
    }
    // bad magic
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTACKPT garbage";
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), FormatError);
    fs::remove(path);
}
