#pragma once

#include <map>
#include <string>
#include <vector>

#include "crl/ops.hpp"
#include "crl/stereo_ops.hpp"

namespace crl {

enum class LayerKind { Input, Conv, Upconv, Corr, Downsample, Sum, Upsample2x };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "input";
        case LayerKind::Conv: return "conv";
        case LayerKind::Upconv: return "upconv";
        case LayerKind::Corr: return "corr";
        case LayerKind::Downsample: return "downsample";
        case LayerKind::Sum: return "sum";
        case LayerKind::Upsample2x: return "upsample2x";
    }
    return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "input") return LayerKind::Input;
    if (s == "conv") return LayerKind::Conv;
    if (s == "upconv") return LayerKind::Upconv;
    if (s == "corr") return LayerKind::Corr;
    if (s == "downsample") return LayerKind::Downsample;
    if (s == "sum") return LayerKind::Sum;
    if (s == "upsample2x") return LayerKind::Upsample2x;
    throw FormatError("unknown layer kind '" + s + "'");
}

// One row of a network table. Multiple inputs to a conv/upconv are
// concatenated along channels; Sum takes exactly two same-shape inputs.
// in_factor/out_factor are spatial downsampling factors relative to the
// full-resolution input (the I / O columns of the architecture table).
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    int kernel = 0;
    int stride = 1;
    int in_channels = 0;
    int out_channels = 0;
    int in_factor = 1;
    int out_factor = 1;
    std::vector<std::string> inputs;
    bool linear = false;       // prediction layers carry no activation
    std::string tied_to;       // reuse another layer's parameters
    int corr_max_disp = 0;
    int down_factor = 1;
    double value_scale = 1.0;  // Downsample / Upsample2x value rescaling

    // Same-style padding: keeps the I/O factor table exact for inputs whose
    // dimensions are multiples of the deepest factor.
    int padding() const {
        if (kind == LayerKind::Upconv) return (kernel - stride) / 2;
        return stride == 1 ? kernel / 2 : (kernel - 1) / 2;
    }
    ConvSpec conv_spec() const {
        return ConvSpec{kernel, stride, padding(), in_channels, out_channels};
    }
};

constexpr double kLeakySlope = 0.1;

// Executes a layer table as a differentiable graph. Parameters are owned by
// the net and persist across forward passes; a forward pass is pure.
template <typename S>
class LayerNet {
public:
    struct Param {
        std::string name;  // "<layer>.weight" / "<layer>.bias"
        TensorT<S> tensor;
    };

    LayerNet() = default;

    LayerNet(std::vector<LayerSpec> specs, const Rng& init_rng) : specs_(std::move(specs)) {
        validate();
        for (const auto& spec : specs_) {
            if ((spec.kind != LayerKind::Conv && spec.kind != LayerKind::Upconv) ||
                !spec.tied_to.empty())
                continue;
            Rng rng = init_rng.stream(fnv1a(spec.name.data(), spec.name.size()));
            const int kk = spec.kernel * spec.kernel;
            double fan_in = double(spec.in_channels) * kk;
            if (spec.kind == LayerKind::Upconv) fan_in /= double(spec.stride) * spec.stride;
            const S bound = S(std::sqrt(1.0 / fan_in));
            const Shape4 wshape = spec.kind == LayerKind::Conv
                                      ? Shape4{spec.out_channels, spec.in_channels, spec.kernel,
                                               spec.kernel}
                                      : Shape4{spec.in_channels, spec.out_channels, spec.kernel,
                                               spec.kernel};
            param_index_[spec.name] = params_.size();
            params_.push_back({spec.name + ".weight",
                               TensorT<S>::uniform(wshape, rng, -bound, bound, true)});
            params_.push_back({spec.name + ".bias",
                               TensorT<S>::zeros({1, spec.out_channels, 1, 1}, true)});
        }
    }

    const std::vector<LayerSpec>& specs() const { return specs_; }
    std::vector<Param>& parameters() { return params_; }
    const std::vector<Param>& parameters() const { return params_; }

    TensorT<S>& weight(const std::string& layer) { return params_.at(index_of(layer)).tensor; }
    TensorT<S>& bias(const std::string& layer) {
        return params_.at(index_of(layer) + 1).tensor;
    }

    bool has_params(const std::string& layer) const { return param_index_.count(layer) > 0; }

    // FNV-1a over all parameter bytes in declaration order.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& p : params_)
            h = fnv1a(p.tensor.raw(), std::size_t(p.tensor.numel()) * sizeof(S), h);
        return h;
    }

    // Runs every layer; returns all named outputs (inputs included).
    std::map<std::string, TensorT<S>> forward(
        std::map<std::string, TensorT<S>> values) const {
        for (const auto& spec : specs_) {
            switch (spec.kind) {
                case LayerKind::Input: {
                    auto it = values.find(spec.name);
                    if (it == values.end())
                        throw UsageError("forward: missing input '" + spec.name + "'");
                    if (it->second.shape().c != spec.in_channels)
                        throw DimensionError("forward: input '" + spec.name + "' has " +
                                             std::to_string(it->second.shape().c) +
                                             " channels, expected " +
                                             std::to_string(spec.in_channels));
                    break;
                }
                case LayerKind::Conv:
                case LayerKind::Upconv: {
                    TensorT<S> x = gather(values, spec);
                    const auto& owner = spec.tied_to.empty() ? spec.name : spec.tied_to;
                    const std::size_t pi = index_of(owner);
                    TensorT<S> out =
                        spec.kind == LayerKind::Conv
                            ? conv2d(x, params_[pi].tensor, params_[pi + 1].tensor,
                                     spec.conv_spec())
                            : transposed_conv2d(x, params_[pi].tensor, params_[pi + 1].tensor,
                                                spec.conv_spec());
                    values[spec.name] = spec.linear ? out : leaky_relu(out, S(kLeakySlope));
                    break;
                }
                case LayerKind::Corr: {
                    values[spec.name] = correlation1d(values.at(spec.inputs[0]),
                                                      values.at(spec.inputs[1]),
                                                      spec.corr_max_disp)
                                            .data;
                    break;
                }
                case LayerKind::Downsample: {
                    values[spec.name] = bilinear_downsample(values.at(spec.inputs[0]),
                                                            spec.down_factor,
                                                            S(spec.value_scale));
                    break;
                }
                case LayerKind::Sum: {
                    values[spec.name] =
                        add(values.at(spec.inputs[0]), values.at(spec.inputs[1]));
                    break;
                }
                case LayerKind::Upsample2x: {
                    values[spec.name] =
                        bilinear_upsample_x2(values.at(spec.inputs[0]), S(spec.value_scale));
                    break;
                }
            }
        }
        return values;
    }

private:
    std::size_t index_of(const std::string& layer) const {
        auto it = param_index_.find(layer);
        if (it == param_index_.end())
            throw UsageError("no parameters for layer '" + layer + "'");
        return it->second;
    }

    TensorT<S> gather(const std::map<std::string, TensorT<S>>& values,
                      const LayerSpec& spec) const {
        std::vector<TensorT<S>> parts;
        parts.reserve(spec.inputs.size());
        for (const auto& name : spec.inputs) {
            auto it = values.find(name);
            if (it == values.end())
                throw UsageError("layer '" + spec.name + "' needs undefined input '" + name +
                                 "'");
            parts.push_back(it->second);
        }
        TensorT<S> x = parts.size() == 1 ? parts[0] : concat_channels(parts);
        if (x.shape().c != spec.in_channels)
            throw DimensionError("layer '" + spec.name + "': input has " +
                                 std::to_string(x.shape().c) + " channels, table expects " +
                                 std::to_string(spec.in_channels));
        return x;
    }

    void validate() const {
        std::map<std::string, const LayerSpec*> seen;
        for (const auto& spec : specs_) {
            if (seen.count(spec.name))
                throw ConfigError("duplicate layer name '" + spec.name + "'");
            for (const auto& in : spec.inputs)
                if (!seen.count(in))
                    throw ConfigError("layer '" + spec.name + "' references '" + in +
                                      "' before definition");
            if (spec.kind == LayerKind::Conv || spec.kind == LayerKind::Upconv) {
                int c = 0;
                for (const auto& in : spec.inputs) c += seen.at(in)->out_channels;
                if (c != spec.in_channels)
                    throw ConfigError("layer '" + spec.name + "': declared in_channels " +
                                      std::to_string(spec.in_channels) +
                                      " but inputs sum to " + std::to_string(c));
                if (!spec.tied_to.empty() && !seen.count(spec.tied_to))
                    throw ConfigError("layer '" + spec.name + "' tied to undefined '" +
                                      spec.tied_to + "'");
            }
            seen[spec.name] = &spec;
        }
    }

    std::vector<LayerSpec> specs_;
    std::vector<Param> params_;
    std::map<std::string, std::size_t> param_index_;
};

}  // namespace crl
