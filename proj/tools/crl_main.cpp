// crl: cascade residual stereo toolkit.
//
// Subcommands: synth, train, infer, eval, gradcheck, screen, report.
// Exit codes: 0 success, 1 verification failure, 2 usage/format error,
// 3 numerical divergence.

#include <CLI11.hpp>

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "crl/checkpoint.hpp"
#include "crl/data_io.hpp"
#include "crl/gradcheck.hpp"
#include "crl/metrics.hpp"
#include "crl/sgm.hpp"
#include "crl/training.hpp"

#include <json.hpp>

namespace fs = std::filesystem;
using namespace crl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

using TrainScalar = float;  // single precision for training; checks run in double

// ---------------------------------------------------------------- synth ----

SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec spec;
    spec.width = j.at("width").get<int>();
    spec.height = j.at("height").get<int>();
    spec.background_disparity = j.value("background_disparity", 0.0);
    spec.noise_sigma = j.value("noise_sigma", 0.0);
    if (j.contains("rects"))
        for (const auto& r : j.at("rects"))
            spec.rects.push_back({r.at("x").get<int>(), r.at("y").get<int>(),
                                  r.at("w").get<int>(), r.at("h").get<int>(),
                                  r.at("disparity").get<double>()});
    return spec;
}

SceneSpec preset_scene(const std::string& preset, int width, int height, Rng& rng) {
    SceneSpec spec;
    spec.width = width;
    spec.height = height;
    if (preset == "flat") return spec;
    const bool fractional = preset == "desk-frac";
    if (preset != "desk" && !fractional)
        throw UsageError("unknown preset '" + preset + "' (want desk, desk-frac or flat)");
    spec.background_disparity = double(rng.uniform_int(0, 4));
    const int nrects = int(rng.uniform_int(2, 5));
    for (int i = 0; i < nrects; ++i) {
        SceneSpec::Rect r;
        r.w = int(rng.uniform_int(16, std::min(48, width - 1)));
        r.h = int(rng.uniform_int(10, std::min(32, height - 1)));
        r.x = int(rng.uniform_int(0, width - r.w));
        r.y = int(rng.uniform_int(0, height - r.h));
        r.disparity = fractional ? rng.uniform(0.0, 16.0) : double(rng.uniform_int(0, 16));
        spec.rects.push_back(r);
    }
    return spec;
}

int cmd_synth(const std::string& preset, const std::string& spec_path, int count,
              std::uint64_t seed, const std::string& out, const std::string& disp_format) {
    const DispFormat fmt = disp_format == "png" ? DispFormat::KittiPng : DispFormat::Pfm;
    fs::create_directories(out);
    if (!fs::is_directory(out)) throw UsageError("cannot create output directory " + out);

    nlohmann::json scene_json;
    if (!spec_path.empty()) {
        std::ifstream is(spec_path);
        if (!is) throw FormatError("cannot open scene spec " + spec_path);
        try {
            is >> scene_json;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("scene spec is not valid JSON: ") + e.what());
        }
    }

    Rng master(seed);
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "%06d", i);
        Rng scene_rng = master.stream(std::uint64_t(1000 + i));
        SceneSpec spec = spec_path.empty() ? preset_scene(preset, 128, 64, scene_rng)
                                           : scene_from_json(scene_json);
        spec.texture_seed = splitmix64(seed ^ std::uint64_t(7700 + i));
        StereoSample sample = generate_stereogram(spec, spec.texture_seed);
        sample.id = id;
        save_sample(out, sample, fmt);
        ids.push_back(id);
    }
    write_manifest(out, ids, fmt);
    std::printf("synth: wrote %d samples to %s (seed %" PRIu64 ")\n", count, out.c_str(), seed);
    return kExitOk;
}

// ---------------------------------------------------------------- train ----

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
    return buf;
}

int cmd_train(const std::string& config_path) {
    const TrainConfig cfg = parse_train_config(config_path);
    const auto phases = parse_schedule(cfg.schedule);
    fs::create_directories(cfg.out_dir);

    // Load, screen and split every dataset tag the schedule touches.
    struct TagData {
        std::vector<StereoSampleT<TrainScalar>> train, val;
    };
    std::map<char, TagData> data;
    for (const auto& phase : phases) {
        if (data.count(phase.dataset)) continue;
        auto it = cfg.datasets.find(phase.dataset);
        if (it == cfg.datasets.end())
            throw ConfigError(std::string("no dataset path configured for tag '") +
                              phase.dataset + "'");
        std::vector<StereoSample> samples = load_dataset(it->second, cfg.disp_format);
        if (cfg.screen) {
            std::vector<StereoSample> kept;
            for (auto& s : samples)
                if (screen_sample(s.gt)) kept.push_back(std::move(s));
            std::printf("train: tag %c screening kept %zu of %zu samples\n", phase.dataset,
                        kept.size(), samples.size());
            samples = std::move(kept);
        }
        if (samples.size() < 2)
            throw ConfigError(std::string("dataset for tag '") + phase.dataset +
                              "' has fewer than 2 usable samples");
        auto [train_idx, val_idx] = split_dataset(samples.size(), 1.0 - cfg.val_frac, cfg.seed);
        TagData td;
        for (auto i : train_idx) td.train.push_back(convert_sample<TrainScalar>(samples[i]));
        for (auto i : val_idx) td.val.push_back(convert_sample<TrainScalar>(samples[i]));
        std::ofstream ids(fs::path(cfg.out_dir) / (std::string("val_ids_") + phase.dataset +
                                                   ".txt"));
        for (auto i : val_idx) ids << samples[i].id << "\n";
        std::printf("train: tag %c loaded %zu samples -> %zu train / %zu val\n", phase.dataset,
                    samples.size(), td.train.size(), td.val.size());
        data.emplace(phase.dataset, std::move(td));
    }

    auto model = CRLModel<TrainScalar>::build(cfg.model_config(), cfg.seed);

    std::ofstream log(fs::path(cfg.out_dir) / "train_log.csv");
    log << "# seed=" << cfg.seed << "\n";
    log << "step,phase,loss,s0,s1,s2,s3,s4,s5,s6\n";
    std::ofstream phases_csv(fs::path(cfg.out_dir) / "phases.csv");
    phases_csv << "phase_index,phase,steps,last_loss,val_epe_stage1,val_epe_stage2,"
                  "stage1_ck_before,stage1_ck_after,stage2_ck_before,stage2_ck_after\n";

    for (std::size_t i = 0; i < phases.size(); ++i) {
        const auto& phase = phases[i];
        auto& td = data.at(phase.dataset);

        PhaseRunConfig<TrainScalar> run_cfg;
        run_cfg.steps = cfg.phase_steps(i);
        run_cfg.batch = phase.stage == 0 ? cfg.batch_overall : cfg.batch_stage;
        run_cfg.lr = cfg.phase_lr(i);
        run_cfg.loss_cfg.weights = cfg.loss_weights;
        run_cfg.loss_cfg.policy = cfg.value_scale_policy;
        run_cfg.seed = splitmix64(cfg.seed ^ (0xC0FFEEull + i));
        run_cfg.on_step = [&](const StepLog& s) {
            if (s.step % cfg.log_every != 0 && s.step + 1 != run_cfg.steps) return;
            log << s.step << "," << s.phase << "," << s.loss;
            for (std::size_t k = 0; k < 7; ++k)
                log << "," << (k < s.per_scale.size() ? std::to_string(s.per_scale[k]) : "");
            log << "\n";
        };

        const std::uint64_t ck1_before = model.stage1_checksum();
        const std::uint64_t ck2_before = model.stage2_checksum();
        std::printf("train: phase %zu/%zu %s: %d steps, batch %d, lr %g\n", i + 1,
                    phases.size(), phase.str().c_str(), run_cfg.steps, run_cfg.batch,
                    run_cfg.lr);
        const PhaseResult result = run_phase(model, phase, td.train, run_cfg);
        const std::uint64_t ck1_after = model.stage1_checksum();
        const std::uint64_t ck2_after = model.stage2_checksum();

        const ValidationEpe val = evaluate_epe(model, td.val);
        phases_csv << i << "," << phase.str() << "," << result.steps_run << ","
                   << result.last_loss << "," << val.stage1 << "," << val.stage2 << ","
                   << hex64(ck1_before) << "," << hex64(ck1_after) << ","
                   << hex64(ck2_before) << "," << hex64(ck2_after) << "\n";
        phases_csv.flush();
        log.flush();

        const std::string ckpt_name =
            "ckpt_phase" + std::to_string(i) + "_" + phase.str() + ".crl";
        save_checkpoint((fs::path(cfg.out_dir) / ckpt_name).string(), model);
        std::printf("train: phase %s done (loss %.5f, val EPE d1 %.4f d2 %.4f) -> %s\n",
                    phase.str().c_str(), result.last_loss, val.stage1, val.stage2,
                    ckpt_name.c_str());
        if (phase.stage == 2 && ck1_before != ck1_after) {
            std::fprintf(stderr, "train: stage-1 parameters changed during a stage-2 phase\n");
            return kExitVerifyFail;
        }
        if (result.diverged) {
            std::fprintf(stderr, "train: loss non-finite for 3 consecutive steps, aborting\n");
            return kExitDiverged;
        }
    }
    save_checkpoint((fs::path(cfg.out_dir) / "final.crl").string(), model);
    std::printf("train: final checkpoint -> %s\n",
                (fs::path(cfg.out_dir) / "final.crl").string().c_str());
    return kExitOk;
}

// ---------------------------------------------------------------- infer ----

template <typename S>
TensorT<S> pad_replicate(const TensorT<S>& t, int th, int tw) {
    const Shape4 s = t.shape();
    if (s.h == th && s.w == tw) return t;
    TensorT<S> out = TensorT<S>::zeros({s.n, s.c, th, tw});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x)
                    out.at(n, c, y, x) =
                        t.at(n, c, std::min(y, s.h - 1), std::min(x, s.w - 1));
    return out;
}

template <typename S>
DisparityMap crop_to_map(const TensorT<S>& pred, int h, int w) {
    Tensor out = Tensor::zeros({1, 1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(0, 0, y, x) = double(pred.at(0, 0, y, x));
    return DisparityMap{std::move(out), 0, {}};
}

int cmd_infer(const std::string& ckpt, const std::string& left_path,
              const std::string& right_path, const std::string& out_path, int stage,
              const std::string& residual_path) {
    auto model = load_checkpoint<TrainScalar>(ckpt);
    const Tensor left_d = image_to_tensor(read_png8(left_path));
    const Tensor right_d = image_to_tensor(read_png8(right_path));
    if (!(left_d.shape() == right_d.shape()))
        throw DimensionError("left/right dimensions differ: " + left_d.shape().str() + " vs " +
                             right_d.shape().str());
    StereoSample pair;
    pair.left = left_d;
    pair.right = right_d;
    auto sample = convert_sample<TrainScalar>(pair);

    const int H = left_d.shape().h, W = left_d.shape().w;
    const int ph = (H + 63) / 64 * 64, pw = (W + 63) / 64 * 64;
    const auto left = pad_replicate(sample.left, ph, pw);
    const auto right = pad_replicate(sample.right, ph, pw);

    const auto out = forward_crl(model, left, right, /*freeze_stage1=*/true);
    const TensorT<TrainScalar>& pred = stage == 1 ? out.d1[0].data : out.d2[0].data;
    write_disparity_file(out_path, crop_to_map(pred, H, W));
    std::printf("infer: stage %d disparity -> %s\n", stage, out_path.c_str());
    if (!residual_path.empty()) {
        write_disparity_file(residual_path, crop_to_map(out.residual[0], H, W));
        std::printf("infer: full-resolution residual -> %s\n", residual_path.c_str());
    }
    return kExitOk;
}

// ----------------------------------------------------------------- eval ----

std::map<std::string, fs::path> disparity_files(const std::string& dir) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension();
        if (ext == ".pfm" || ext == ".png") out[e.path().stem().string()] = e.path();
    }
    return out;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& mode,
             const std::string& out_file, const std::string& method) {
    const ThreePEMode pe_mode = mode == "kitti" ? ThreePEMode::Kitti : ThreePEMode::Plain;
    auto preds = disparity_files(pred_dir);
    auto gts = disparity_files(gt_dir);

    std::vector<std::string> unmatched;
    for (const auto& [id, p] : preds)
        if (!gts.count(id)) unmatched.push_back(id + " (no ground truth)");
    for (const auto& [id, p] : gts)
        if (!preds.count(id)) unmatched.push_back(id + " (no prediction)");
    if (!unmatched.empty()) {
        std::string msg = "unmatched ids:";
        for (const auto& u : unmatched) msg += " " + u;
        throw UsageError(msg);
    }
    if (preds.empty()) throw UsageError("no disparity files in " + pred_dir);

    std::vector<EvalEntry> entries;
    for (const auto& [id, path] : preds) {
        const auto t0 = std::chrono::steady_clock::now();
        const DisparityMap pred = read_disparity_file(path.string());
        const DisparityMap gt = read_disparity_file(gts.at(id).string());
        const auto e = epe(pred, gt);
        const auto pe = three_pixel_error(pred, gt, nullptr, pe_mode);
        const auto t1 = std::chrono::steady_clock::now();
        if (!e || !pe) {
            std::fprintf(stderr, "eval: sample %s has no valid pixels (undefined metrics)\n",
                         id.c_str());
            continue;
        }
        entries.push_back(EvalEntry{
            method, id, *e, *pe, count_valid(pred, gt),
            std::chrono::duration<double, std::milli>(t1 - t0).count()});
    }
    if (entries.empty()) throw UsageError("no evaluable samples");
    const EvalReport report = make_report(entries);
    const std::string csv = report_csv(report);
    if (out_file.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        std::ofstream os(out_file);
        os << csv;
        std::fputs(report_table(report).c_str(), stdout);
    }
    return kExitOk;
}

// ------------------------------------------------------------ gradcheck ----

int cmd_gradcheck(const std::vector<std::string>& ops, std::uint64_t seed_base, int num_seeds,
                  double eps, double tol) {
    auto registry = gradcheck_registry();
    std::vector<GradCheckCase> selected;
    if (ops.empty()) {
        selected = registry;
    } else {
        for (const auto& name : ops) {
            bool found = false;
            for (const auto& c : registry)
                if (c.name == name) {
                    selected.push_back(c);
                    found = true;
                }
            if (!found) throw UsageError("gradcheck: unknown op '" + name + "'");
        }
    }

    std::printf("%-22s %6s %14s  %s\n", "op", "seed", "max_rel_err", "status");
    bool all_ok = true;
    std::string worst_desc;
    double worst_err = -1.0;
    for (const auto& c : selected) {
        for (int s = 0; s < num_seeds; ++s) {
            const auto report = c.run(seed_base + std::uint64_t(s), eps);
            const bool ok = report.max_rel_err < tol;
            all_ok = all_ok && ok;
            std::printf("%-22s %6d %14.3e  %s\n", c.name.c_str(), int(seed_base) + s,
                        report.max_rel_err, ok ? "pass" : "FAIL");
            if (report.max_rel_err > worst_err) {
                worst_err = report.max_rel_err;
                worst_desc = c.name + " seed " + std::to_string(seed_base + std::uint64_t(s)) +
                             " input " + std::to_string(report.worst_input) + " coord " +
                             std::to_string(report.worst_coord) + " analytic " +
                             std::to_string(report.worst_analytic) + " numeric " +
                             std::to_string(report.worst_numeric);
            }
        }
    }
    std::printf("worst: %s (max_rel_err %.3e, tol %.1e)\n", worst_desc.c_str(), worst_err, tol);
    return all_ok ? kExitOk : kExitVerifyFail;
}

// ---------------------------------------------------------------- screen ----

int cmd_screen(const std::string& gt_dir, double threshold, double frac) {
    auto files = disparity_files(gt_dir);
    if (files.empty()) throw UsageError("no disparity files in " + gt_dir);
    std::vector<std::string> removed;
    for (const auto& [id, path] : files) {
        const DisparityMap gt = read_disparity_file(path.string());
        if (!screen_sample(gt, threshold, frac)) removed.push_back(id);
    }
    std::printf("screen: kept %zu removed %zu (threshold %g, frac %g)\n",
                files.size() - removed.size(), removed.size(), threshold, frac);
    for (const auto& id : removed) std::printf("removed %s\n", id.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------- report ----

int cmd_report(const std::string& in_file) {
    std::string csv;
    if (in_file.empty() || in_file == "-") {
        std::ostringstream ss;
        ss << std::cin.rdbuf();
        csv = ss.str();
    } else {
        std::ifstream is(in_file);
        if (!is) throw UsageError("cannot open " + in_file);
        std::ostringstream ss;
        ss << is.rdbuf();
        csv = ss.str();
    }
    const auto entries = parse_report_csv(csv);
    if (entries.empty()) throw UsageError("report: no per-sample rows found");
    const EvalReport report = make_report(entries);
    std::fputs(report_table(report).c_str(), stdout);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascade residual stereo toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic stereo dataset");
    std::string synth_preset = "desk", synth_spec, synth_out = "data", synth_fmt = "pfm";
    int synth_count = 10;
    std::uint64_t synth_seed = 0;
    synth->add_option("--preset", synth_preset, "scene preset: desk, desk-frac, flat");
    synth->add_option("--spec", synth_spec, "scene spec JSON file (overrides preset)");
    synth->add_option("--count", synth_count, "number of samples");
    synth->add_option("--seed", synth_seed, "master seed");
    synth->add_option("--out", synth_out, "output dataset directory");
    synth->add_option("--disp-format", synth_fmt, "disparity format: pfm or png")
        ->check(CLI::IsMember({"pfm", "png"}));

    // train
    auto* train = app.add_subcommand("train", "train a two-stage model from a config file");
    std::string train_config;
    train->add_option("--config", train_config, "key=value config file")->required();

    // infer
    auto* infer = app.add_subcommand("infer", "run a checkpoint on one stereo pair");
    std::string infer_ckpt, infer_left, infer_right, infer_out, infer_residual;
    int infer_stage = 2;
    infer->add_option("--ckpt", infer_ckpt)->required();
    infer->add_option("--left", infer_left)->required();
    infer->add_option("--right", infer_right)->required();
    infer->add_option("--out", infer_out, "output disparity (.pfm or .png)")->required();
    infer->add_option("--stage", infer_stage, "1 = first-stage output, 2 = refined")
        ->check(CLI::IsMember({1, 2}));
    infer->add_option("--dump-residual", infer_residual,
                      "also write the full-resolution residual");

    // eval
    auto* eval = app.add_subcommand("eval", "EPE/3PE report for prediction vs ground truth");
    std::string eval_pred, eval_gt, eval_mode = "plain", eval_out, eval_method = "method";
    eval->add_option("--pred", eval_pred)->required();
    eval->add_option("--gt", eval_gt)->required();
    eval->add_option("--mode", eval_mode)->check(CLI::IsMember({"plain", "kitti"}));
    eval->add_option("--out", eval_out, "write CSV here instead of stdout");
    eval->add_option("--method", eval_method, "method label for the report");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "certify operator gradients");
    std::vector<std::string> gc_ops;
    std::uint64_t gc_seed = 0;
    int gc_num_seeds = 5;
    double gc_eps = 1e-3, gc_tol = 1e-4;
    gradcheck->add_option("--ops", gc_ops, "subset of operators (default: all)");
    gradcheck->add_option("--seed", gc_seed, "first seed");
    gradcheck->add_option("--seeds", gc_num_seeds, "number of consecutive seeds");
    gradcheck->add_option("--eps", gc_eps, "finite-difference step");
    gradcheck->add_option("--tol", gc_tol, "max relative error tolerance");

    // screen
    auto* screen = app.add_subcommand("screen", "apply the large-disparity screening rule");
    std::string screen_dir;
    double screen_threshold = 300.0, screen_frac = 0.25;
    screen->add_option("--gt", screen_dir, "directory of disparity files")->required();
    screen->add_option("--threshold", screen_threshold);
    screen->add_option("--frac", screen_frac);

    // report
    auto* report = app.add_subcommand("report", "re-render an eval CSV as a table");
    std::string report_in;
    report->add_option("--in", report_in, "eval CSV file ('-' for stdin)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_preset, synth_spec, synth_count, synth_seed, synth_out,
                             synth_fmt);
        if (train->parsed()) return cmd_train(train_config);
        if (infer->parsed())
            return cmd_infer(infer_ckpt, infer_left, infer_right, infer_out, infer_stage,
                             infer_residual);
        if (eval->parsed()) return cmd_eval(eval_pred, eval_gt, eval_mode, eval_out, eval_method);
        if (gradcheck->parsed())
            return cmd_gradcheck(gc_ops, gc_seed, gc_num_seeds, gc_eps, gc_tol);
        if (screen->parsed()) return cmd_screen(screen_dir, screen_threshold, screen_frac);
        if (report->parsed()) return cmd_report(report_in);
    } catch (const std::domain_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::runtime_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
