#include "crl/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace crl {

std::vector<SchedulePhase> parse_schedule(const std::string& text) {
    std::vector<SchedulePhase> phases;
    bool trained1 = false, trained2 = false;
    std::size_t pos = 0;
    while (pos < text.size()) {
        if (pos + 2 > text.size())
            throw ConfigError("schedule parse error at offset " + std::to_string(pos) +
                              ": segment shorter than two characters");
        const char stage_ch = text[pos];
        const char tag = text[pos + 1];
        if (stage_ch < '0' || stage_ch > '2')
            throw ConfigError("schedule parse error at offset " + std::to_string(pos) +
                              ": unknown stage '" + std::string(1, stage_ch) + "'");
        if (!std::isalnum(static_cast<unsigned char>(tag)))
            throw ConfigError("schedule parse error at offset " + std::to_string(pos + 1) +
                              ": bad dataset tag '" + std::string(1, tag) + "'");
        const int stage = stage_ch - '0';
        if (stage == 0 && !(trained1 && trained2))
            throw ConfigError("schedule parse error at offset " + std::to_string(pos) +
                              ": whole-network phase before both stages were trained");
        trained1 = trained1 || stage == 1;
        trained2 = trained2 || stage == 2;
        phases.push_back(SchedulePhase{stage, tag});
        pos += 2;
        if (pos == text.size()) break;
        if (text[pos] != '-')
            throw ConfigError("schedule parse error at offset " + std::to_string(pos) +
                              ": expected '-'");
        ++pos;
        if (pos == text.size())
            throw ConfigError("schedule parse error at offset " + std::to_string(pos) +
                              ": trailing '-'");
    }
    if (phases.empty()) throw ConfigError("schedule parse error at offset 0: empty schedule");
    return phases;
}

bool screen_sample(const DisparityMap& gt, double threshold_value, double threshold_frac) {
    const std::int64_t n = gt.data.numel();
    const std::uint8_t* mask = gt.mask_ptr();
    std::int64_t total = 0, over = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (mask && !mask[i]) continue;
        ++total;
        if (gt.data.data()[i] > threshold_value) ++over;
    }
    if (!total) return true;
    return !(double(over) / double(total) > threshold_frac);  // strict "more than"
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(
    std::size_t count, double train_frac, std::uint64_t seed) {
    if (count < 2) throw UsageError("split_dataset needs at least 2 samples");
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng = Rng(seed).stream(23);
    for (std::size_t i = count - 1; i > 0; --i)
        std::swap(order[i], order[std::size_t(rng.uniform_int(0, std::int64_t(i)))]);
    const auto train_count = std::size_t(std::llround(train_frac * double(count)));
    std::vector<std::size_t> train(order.begin(), order.begin() + std::ptrdiff_t(train_count));
    std::vector<std::size_t> val(order.begin() + std::ptrdiff_t(train_count), order.end());
    return {std::move(train), std::move(val)};
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(trim(item));
    return out;
}

}  // namespace

TrainConfig parse_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& what) {
        throw ConfigError("config parse error at line " + std::to_string(lineno) + ": " + what);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail("expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) fail("empty key or value");
        try {
            if (key == "schedule") {
                cfg.schedule = value;
            } else if (key.rfind("dataset.", 0) == 0 && key.size() == 9) {
                cfg.datasets[key[8]] = value;
            } else if (key == "out") {
                cfg.out_dir = value;
            } else if (key == "seed") {
                cfg.seed = std::stoull(value);
            } else if (key == "steps") {
                cfg.steps.clear();
                for (const auto& v : split_list(value)) cfg.steps.push_back(std::stoi(v));
            } else if (key == "lr") {
                cfg.lr.clear();
                for (const auto& v : split_list(value)) cfg.lr.push_back(std::stod(v));
            } else if (key == "batch.stage") {
                cfg.batch_stage = std::stoi(value);
            } else if (key == "batch.overall") {
                cfg.batch_overall = std::stoi(value);
            } else if (key == "width.stage1") {
                cfg.width_stage1 = std::stod(value);
            } else if (key == "width.stage2") {
                cfg.width_stage2 = std::stod(value);
            } else if (key == "corr_max_disp") {
                cfg.corr_max_disp = std::stoi(value);
            } else if (key == "value_scale_policy") {
                cfg.value_scale_policy = value_scale_policy_from_name(value);
            } else if (key == "warp_sign") {
                cfg.warp_sign = std::stoi(value);
                if (cfg.warp_sign != 1 && cfg.warp_sign != -1) fail("warp_sign must be 1 or -1");
            } else if (key == "loss_weights") {
                cfg.loss_weights.clear();
                for (const auto& v : split_list(value))
                    cfg.loss_weights.push_back(std::stod(v));
            } else if (key == "screen") {
                if (value == "on")
                    cfg.screen = true;
                else if (value == "off")
                    cfg.screen = false;
                else
                    fail("screen must be 'on' or 'off'");
            } else if (key == "val_frac") {
                cfg.val_frac = std::stod(value);
                if (cfg.val_frac <= 0.0 || cfg.val_frac >= 1.0) fail("val_frac out of (0,1)");
            } else if (key == "log_every") {
                cfg.log_every = std::stoi(value);
            } else if (key == "disp_format") {
                if (value == "auto")
                    cfg.disp_format = DispFormat::Auto;
                else if (value == "pfm")
                    cfg.disp_format = DispFormat::Pfm;
                else if (value == "png")
                    cfg.disp_format = DispFormat::KittiPng;
                else
                    fail("disp_format must be auto|pfm|png");
            } else {
                fail("unknown key '" + key + "'");
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            fail(std::string("bad value for '") + key + "': " + e.what());
        }
    }
    try {
        parse_schedule(cfg.schedule);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " (schedule from " + path + ")");
    }
    if (cfg.batch_stage < 1 || cfg.batch_overall < 1)
        throw ConfigError("config: batch sizes must be positive");
    return cfg;
}

}  // namespace crl
