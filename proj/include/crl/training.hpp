#pragma once

#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crl/data_io.hpp"
#include "crl/metrics.hpp"
#include "crl/networks.hpp"

namespace crl {

// One segment of a training schedule string ("1F" = train stage 1 on
// dataset F; stage 0 = whole network).
struct SchedulePhase {
    int stage = 1;
    char dataset = 'F';

    std::string str() const { return std::to_string(stage) + std::string(1, dataset); }
};

// Parses dash-separated two-character segments. Whole-network (stage 0)
// phases may appear only after both stages were trained at least once.
// Malformed input raises ConfigError naming the offset.
std::vector<SchedulePhase> parse_schedule(const std::string& text);

// Keep iff at most threshold_frac of the (valid) disparity values exceed
// threshold_value; the comparison is strict on both ends.
bool screen_sample(const DisparityMap& gt, double threshold_value = 300.0,
                   double threshold_frac = 0.25);

// Deterministic shuffle split; train size = round(train_frac * N).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(
    std::size_t count, double train_frac, std::uint64_t seed);

struct LossConfig {
    std::vector<double> weights;  // per scale; empty = uniform 1.0
    ValueScalePolicy policy = ValueScalePolicy::PerScale;

    double weight(int scale) const {
        if (weights.empty()) return 1.0;
        if (scale >= int(weights.size())) return 0.0;
        return weights[std::size_t(scale)];
    }
};

// Downsample a validity mask with the strict rule: a low-resolution pixel is
// valid only if every contributing full-resolution pixel is valid.
template <typename S>
std::vector<std::uint8_t> downsample_mask_strict(const std::vector<std::uint8_t>& mask,
                                                 Shape4 shape, int factor) {
    if (mask.empty() || factor == 1) return mask;
    typename TensorT<S>::Array m(shape.numel());
    for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = mask[std::size_t(i)] ? S(1) : S(0);
    TensorT<S> t = TensorT<S>::from_array(shape, std::move(m), false);
    TensorT<S> d = bilinear_downsample(t, factor, S(1));
    std::vector<std::uint8_t> out(std::size_t(d.numel()));
    for (Eigen::Index i = 0; i < d.numel(); ++i)
        out[std::size_t(i)] = d.data()[i] >= S(1) - S(1e-6) ? 1 : 0;
    return out;
}

template <typename S>
struct MultiscaleLoss {
    TensorT<S> total;               // scalar
    std::vector<double> per_scale;  // unweighted masked-l1 per scale
};

// Sum over scales of weight_s * masked_l1(pred_s, downsample(gt, 2^s)).
// The ground truth must be at full resolution; its mask is downsampled with
// the strict-validity rule.
template <typename S>
MultiscaleLoss<S> multiscale_loss(const MultiscalePrediction<S>& preds,
                                  const DisparityMapT<S>& gt, const LossConfig& cfg) {
    if (gt.scale != 0) throw UsageError("multiscale_loss: ground truth must be scale 0");
    bool any_positive = false;
    for (std::size_t s = 0; s < preds.size(); ++s) {
        const double w = cfg.weight(int(s));
        if (w < 0.0) throw UsageError("multiscale_loss: negative loss weight");
        any_positive = any_positive || w > 0.0;
    }
    if (!any_positive) throw UsageError("multiscale_loss: no positive loss weight");

    MultiscaleLoss<S> out;
    TensorT<S> total;
    for (std::size_t s = 0; s < preds.size(); ++s) {
        const int scale = preds[s].scale;
        const int factor = 1 << scale;
        const double vs =
            cfg.policy == ValueScalePolicy::PerScale ? 1.0 / double(factor) : 1.0;
        TensorT<S> gt_s =
            factor == 1 ? gt.data : bilinear_downsample(gt.data, factor, S(vs));
        std::vector<std::uint8_t> mask_s =
            downsample_mask_strict<S>(gt.valid, gt.data.shape(), factor);
        TensorT<S> term = masked_l1(preds[s].data, gt_s,
                                    mask_s.empty() ? nullptr : mask_s.data());
        out.per_scale.push_back(double(term.item()));
        const double w = cfg.weight(int(s));
        if (w == 0.0) continue;
        TensorT<S> weighted = w == 1.0 ? term : scale(term, S(w));
        total = total.defined() ? add(total, weighted) : weighted;
    }
    out.total = total;
    return out;
}

// First/second-moment adaptive update with bias correction.
template <typename S>
struct AdamState {
    std::vector<typename TensorT<S>::Array> m, v;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void init(const std::vector<TensorT<S>*>& params) {
        m.clear();
        v.clear();
        for (auto* p : params) {
            m.push_back(TensorT<S>::Array::Zero(p->numel()));
            v.push_back(TensorT<S>::Array::Zero(p->numel()));
        }
        step = 0;
    }
};

// Applies one update from the gradients currently stored on the parameters.
// A non-finite gradient anywhere skips the whole step with a warning.
template <typename S>
bool adam_step(AdamState<S>& state, const std::vector<TensorT<S>*>& params, double lr) {
    if (state.m.size() != params.size()) throw UsageError("adam_step: state not initialized");
    for (auto* p : params)
        if (!p->grad().isFinite().all()) {
            std::cerr << "warning: non-finite gradient, optimizer step skipped\n";
            return false;
        }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto g = params[i]->grad();
        state.m[i] = S(state.beta1) * state.m[i] + S(1.0 - state.beta1) * g;
        state.v[i] = S(state.beta2) * state.v[i] + S(1.0 - state.beta2) * g.square();
        const auto mhat = state.m[i] / S(bc1);
        const auto vhat = state.v[i] / S(bc2);
        params[i]->data() -= S(lr) * mhat / (vhat.sqrt() + S(state.eps));
    }
    return true;
}

template <typename S>
struct TrainBatch {
    TensorT<S> left, right;         // B x 3 x H x W
    DisparityMapT<S> gt;            // B x 1 x H x W with merged mask
};

template <typename S>
TrainBatch<S> assemble_batch(const std::vector<StereoSampleT<S>>& samples,
                             const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw UsageError("assemble_batch: empty batch");
    const Shape4 one = samples[indices[0]].left.shape();
    const int B = int(indices.size());
    TrainBatch<S> b;
    b.left = TensorT<S>::zeros({B, 3, one.h, one.w});
    b.right = TensorT<S>::zeros({B, 3, one.h, one.w});
    b.gt.data = TensorT<S>::zeros({B, 1, one.h, one.w});
    b.gt.scale = 0;
    b.gt.valid.assign(std::size_t(B) * one.h * one.w, 1);
    const std::ptrdiff_t img = std::ptrdiff_t(3) * one.h * one.w;
    const std::ptrdiff_t plane = std::ptrdiff_t(one.h) * one.w;
    for (int k = 0; k < B; ++k) {
        const auto& s = samples[indices[std::size_t(k)]];
        if (!(s.left.shape() == one))
            throw DimensionError("assemble_batch: mixed sample dimensions");
        std::copy_n(s.left.raw(), img, b.left.raw() + k * img);
        std::copy_n(s.right.raw(), img, b.right.raw() + k * img);
        std::copy_n(s.gt.data.raw(), plane, b.gt.data.raw() + k * plane);
        if (!s.gt.all_valid())
            std::copy_n(s.gt.valid.begin(), plane, b.gt.valid.begin() + k * plane);
    }
    return b;
}

struct StepLog {
    int step = 0;
    std::string phase;
    double loss = 0.0;
    std::vector<double> per_scale;
};

template <typename S>
struct PhaseRunConfig {
    int steps = 1000;
    int batch = 4;
    double lr = 1e-4;
    LossConfig loss_cfg;
    std::uint64_t seed = 0;
    std::function<void(const StepLog&)> on_step;
};

struct PhaseResult {
    bool diverged = false;  // three consecutive non-finite losses
    int steps_run = 0;
    double last_loss = 0.0;
};

// Runs one schedule phase. Stage-1 phases update only stage-1 parameters;
// stage-2 phases detach the first stage (its parameters stay byte-identical);
// stage-0 updates everything with supervision on both stages' outputs.
template <typename S>
PhaseResult run_phase(CRLModel<S>& model, const SchedulePhase& phase,
                      const std::vector<StereoSampleT<S>>& train,
                      const PhaseRunConfig<S>& cfg) {
    if (train.empty()) throw ConfigError("run_phase: empty training set");
    if (cfg.batch < 1 || cfg.steps < 0) throw UsageError("run_phase: bad batch/steps");

    std::vector<TensorT<S>*> params;
    auto collect = [&](LayerNet<S>& net) {
        for (auto& p : net.parameters()) params.push_back(&p.tensor);
    };
    if (phase.stage == 1 || phase.stage == 0) collect(model.stage1);
    if (phase.stage == 2 || phase.stage == 0) collect(model.stage2);

    AdamState<S> adam;
    adam.init(params);

    Rng rng = Rng(cfg.seed).stream(17);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto reshuffle = [&] {
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[std::size_t(rng.uniform_int(0, std::int64_t(i)))]);
    };
    reshuffle();

    PhaseResult result;
    std::size_t pos = 0;
    int consecutive_bad = 0;
    const std::size_t batch = std::min<std::size_t>(std::size_t(cfg.batch), train.size());
    for (int step = 0; step < cfg.steps; ++step) {
        if (pos + batch > train.size()) {
            reshuffle();
            pos = 0;
        }
        std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(pos),
                                     order.begin() + std::ptrdiff_t(pos + batch));
        pos += batch;

        TrainBatch<S> b = assemble_batch(train, idx);
        StepLog log;
        log.step = step;
        log.phase = phase.str();
        TensorT<S> loss;
        if (phase.stage == 1) {
            auto d1 = forward_stage1(model, b.left, b.right);
            auto ml = multiscale_loss(d1, b.gt, cfg.loss_cfg);
            loss = ml.total;
            log.per_scale = std::move(ml.per_scale);
        } else if (phase.stage == 2) {
            auto out = forward_crl(model, b.left, b.right, /*freeze_stage1=*/true);
            auto ml = multiscale_loss(out.d2, b.gt, cfg.loss_cfg);
            loss = ml.total;
            log.per_scale = std::move(ml.per_scale);
        } else {
            auto out = forward_crl(model, b.left, b.right, /*freeze_stage1=*/false);
            auto ml2 = multiscale_loss(out.d2, b.gt, cfg.loss_cfg);
            auto ml1 = multiscale_loss(out.d1, b.gt, cfg.loss_cfg);
            loss = add(ml2.total, ml1.total);
            log.per_scale = std::move(ml2.per_scale);
        }

        const double loss_value = double(loss.item());
        log.loss = loss_value;
        result.steps_run = step + 1;
        result.last_loss = loss_value;
        if (!std::isfinite(loss_value)) {
            if (++consecutive_bad >= 3) {
                result.diverged = true;
                if (cfg.on_step) cfg.on_step(log);
                return result;
            }
            if (cfg.on_step) cfg.on_step(log);
            continue;
        }
        consecutive_bad = 0;
        loss.backward();
        adam_step(adam, params, cfg.lr);
        if (cfg.on_step) cfg.on_step(log);
    }
    return result;
}

struct ValidationEpe {
    double stage1 = 0.0;
    double stage2 = 0.0;
    std::int64_t valid_px = 0;
};

// Pixel-weighted EPE of both stage outputs over a sample set.
template <typename S>
ValidationEpe evaluate_epe(const CRLModel<S>& model,
                           const std::vector<StereoSampleT<S>>& samples) {
    ValidationEpe out;
    double acc1 = 0.0, acc2 = 0.0;
    std::int64_t count = 0;
    for (const auto& s : samples) {
        auto res = forward_crl(model, s.left, s.right, /*freeze_stage1=*/true);
        const std::uint8_t* mask = s.gt.mask_ptr();
        const std::int64_t n = s.gt.data.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            if (mask && !mask[i]) continue;
            acc1 += std::abs(double(res.d1[0].data.data()[i]) - double(s.gt.data.data()[i]));
            acc2 += std::abs(double(res.d2[0].data.data()[i]) - double(s.gt.data.data()[i]));
            ++count;
        }
    }
    out.valid_px = count;
    if (count) {
        out.stage1 = acc1 / double(count);
        out.stage2 = acc2 / double(count);
    }
    return out;
}

// Training configuration file: one "key = value" pair per line, '#' comments.
struct TrainConfig {
    std::string schedule = "1F-2F-0F";
    std::map<char, std::string> datasets;
    std::string out_dir = "train_out";
    std::uint64_t seed = 1;
    std::vector<int> steps{1000};      // per phase; last value repeats
    std::vector<double> lr{1e-4};      // per phase; last value repeats
    int batch_stage = 4;
    int batch_overall = 2;
    double width_stage1 = 0.25;
    double width_stage2 = 0.25;
    int corr_max_disp = 40;
    ValueScalePolicy value_scale_policy = ValueScalePolicy::PerScale;
    int warp_sign = -1;
    std::vector<double> loss_weights;  // empty = uniform
    bool screen = false;
    double val_frac = 0.15;
    int log_every = 1;
    DispFormat disp_format = DispFormat::Auto;

    int phase_steps(std::size_t i) const {
        return steps.empty() ? 1000 : steps[std::min(i, steps.size() - 1)];
    }
    double phase_lr(std::size_t i) const {
        return lr.empty() ? 1e-4 : lr[std::min(i, lr.size() - 1)];
    }
    CrlConfig model_config() const {
        CrlConfig c;
        c.width_stage1 = width_stage1;
        c.width_stage2 = width_stage2;
        c.corr_max_disp = corr_max_disp;
        c.warp_sign = warp_sign;
        c.value_scale = value_scale_policy;
        return c;
    }
};

TrainConfig parse_train_config(const std::string& path);

}  // namespace crl
