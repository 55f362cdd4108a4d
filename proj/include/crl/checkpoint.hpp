#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crl/networks.hpp"

namespace crl {

// Model checkpoint container.
//
// Layout (all integers and floats little-endian):
//   8 bytes   magic "CRLCKPT\0"
//   u32       version (currently 1)
//   u64       header length, followed by that many bytes of JSON. The JSON
//             carries the model config and both layer tables, so a loader
//             reconstructs the network from the file alone.
//   u32       parameter count; per parameter:
//               u32 name length + name bytes
//               4 x u32 dims (batch, channels, height, width)
//               dims.numel() x f32 values
//
// Loading validates every parameter shape against the stored layer table.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

constexpr char kCkptMagic[8] = {'C', 'R', 'L', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCkptVersion = 1;

inline nlohmann::json layer_to_json(const LayerSpec& l) {
    return nlohmann::json{{"name", l.name},
                          {"kind", layer_kind_name(l.kind)},
                          {"k", l.kernel},
                          {"s", l.stride},
                          {"in", l.in_channels},
                          {"out", l.out_channels},
                          {"i", l.in_factor},
                          {"o", l.out_factor},
                          {"inputs", l.inputs},
                          {"linear", l.linear},
                          {"tied_to", l.tied_to},
                          {"corr_max_disp", l.corr_max_disp},
                          {"down_factor", l.down_factor},
                          {"value_scale", l.value_scale}};
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec l;
    l.name = j.at("name").get<std::string>();
    l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    l.kernel = j.at("k").get<int>();
    l.stride = j.at("s").get<int>();
    l.in_channels = j.at("in").get<int>();
    l.out_channels = j.at("out").get<int>();
    l.in_factor = j.at("i").get<int>();
    l.out_factor = j.at("o").get<int>();
    l.inputs = j.at("inputs").get<std::vector<std::string>>();
    l.linear = j.at("linear").get<bool>();
    l.tied_to = j.at("tied_to").get<std::string>();
    l.corr_max_disp = j.at("corr_max_disp").get<int>();
    l.down_factor = j.at("down_factor").get<int>();
    l.value_scale = j.at("value_scale").get<double>();
    return l;
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is, const char* field) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError(std::string("checkpoint truncated while reading ") + field);
    return v;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const CRLModel<S>& model) {
    nlohmann::json header;
    header["format"] = "crl-checkpoint";
    header["config"] = {{"width_stage1", model.config.width_stage1},
                        {"width_stage2", model.config.width_stage2},
                        {"corr_max_disp", model.config.corr_max_disp},
                        {"warp_sign", model.config.warp_sign},
                        {"value_scale_policy",
                         value_scale_policy_name(model.config.value_scale)}};
    for (const char* stage : {"stage1", "stage2"}) {
        nlohmann::json layers = nlohmann::json::array();
        const auto& net = stage == std::string("stage1") ? model.stage1 : model.stage2;
        for (const auto& l : net.specs()) layers.push_back(detail::layer_to_json(l));
        header[stage] = std::move(layers);
    }
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
    os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    detail::write_pod<std::uint32_t>(os, detail::kCkptVersion);
    detail::write_pod<std::uint64_t>(os, header_str.size());
    os.write(header_str.data(), std::streamsize(header_str.size()));

    std::uint32_t count = 0;
    for (const char* stage : {"stage1", "stage2"})
        count += std::uint32_t((stage == std::string("stage1") ? model.stage1 : model.stage2)
                                   .parameters()
                                   .size());
    detail::write_pod<std::uint32_t>(os, count);

    std::vector<float> buf;
    auto dump_net = [&](const LayerNet<S>& net, const std::string& prefix) {
        for (const auto& p : net.parameters()) {
            const std::string name = prefix + p.name;
            detail::write_pod<std::uint32_t>(os, std::uint32_t(name.size()));
            os.write(name.data(), std::streamsize(name.size()));
            const Shape4 sh = p.tensor.shape();
            for (int d : {sh.n, sh.c, sh.h, sh.w})
                detail::write_pod<std::uint32_t>(os, std::uint32_t(d));
            buf.resize(std::size_t(p.tensor.numel()));
            for (std::size_t i = 0; i < buf.size(); ++i)
                buf[i] = float(p.tensor.raw()[Eigen::Index(i)]);
            os.write(reinterpret_cast<const char*>(buf.data()),
                     std::streamsize(buf.size() * sizeof(float)));
        }
    };
    dump_net(model.stage1, "stage1.");
    dump_net(model.stage2, "stage2.");
    if (!os) throw FormatError("short write while saving checkpoint: " + path);
}

template <typename S>
CRLModel<S> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != detail::kCkptVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = detail::read_pod<std::uint64_t>(is, "header length");
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), std::streamsize(header_len));
    if (!is) throw FormatError("checkpoint truncated while reading header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    CRLModel<S> model;
    const auto& cfg = header.at("config");
    model.config.width_stage1 = cfg.at("width_stage1").get<double>();
    model.config.width_stage2 = cfg.at("width_stage2").get<double>();
    model.config.corr_max_disp = cfg.at("corr_max_disp").get<int>();
    model.config.warp_sign = cfg.at("warp_sign").get<int>();
    model.config.value_scale =
        value_scale_policy_from_name(cfg.at("value_scale_policy").get<std::string>());

    auto load_specs = [&](const char* stage) {
        std::vector<LayerSpec> specs;
        for (const auto& j : header.at(stage)) specs.push_back(detail::layer_from_json(j));
        return specs;
    };
    Rng rng(0);
    model.stage1 = LayerNet<S>(load_specs("stage1"), rng.stream(1));
    model.stage2 = LayerNet<S>(load_specs("stage2"), rng.stream(2));

    std::map<std::string, TensorT<S>*> by_name;
    for (auto& p : model.stage1.parameters()) by_name["stage1." + p.name] = &p.tensor;
    for (auto& p : model.stage2.parameters()) by_name["stage2." + p.name] = &p.tensor;

    const auto count = detail::read_pod<std::uint32_t>(is, "parameter count");
    if (count != by_name.size())
        throw FormatError("checkpoint has " + std::to_string(count) + " parameters, table expects " +
                          std::to_string(by_name.size()));
    std::vector<float> buf;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(is, "parameter name length");
        std::string name(name_len, '\0');
        is.read(name.data(), std::streamsize(name_len));
        std::uint32_t dims[4];
        for (auto& d : dims) d = detail::read_pod<std::uint32_t>(is, "parameter dims");
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError("checkpoint parameter '" + name + "' not in layer table");
        const Shape4 expect = it->second->shape();
        const Shape4 got{int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3])};
        if (!(expect == got))
            throw FormatError("checkpoint parameter '" + name + "' has shape " + got.str() +
                              ", table expects " + expect.str());
        buf.resize(std::size_t(got.numel()));
        is.read(reinterpret_cast<char*>(buf.data()),
                std::streamsize(buf.size() * sizeof(float)));
        if (!is) throw FormatError("checkpoint truncated in parameter '" + name + "'");
        for (std::size_t k = 0; k < buf.size(); ++k)
            it->second->raw()[Eigen::Index(k)] = S(buf[k]);
    }
    return model;
}

}  // namespace crl
