#pragma once

// Training configuration: a flat, diffable "key = value" file. '#' starts a
// comment, unknown keys are rejected, missing keys take the documented
// defaults, and parse(dump(cfg)) is a fixpoint. Every run directory receives
// an echo of the fully resolved config.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "semivox/volume.hpp"

namespace semivox {

struct TrainConfig {
    std::uint64_t seed = 42;
    int num_classes = 0;  // 0 = take the class count from the dataset

    // crops and batches
    int crop_d = 64, crop_h = 128, crop_w = 128;
    int batch_labeled = 2, batch_unlabeled = 2;

    // optimization
    int e_max = 1500;
    int steps_per_epoch = 10;
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 3e-5;
    double lambda_unsup = 0.5;
    double ema_m = 0.99;
    double tau = 0.0;  // pseudo-label confidence threshold; 0 keeps every voxel

    // progressive mixing curriculum
    double gamma = 1.0;
    double eta = 2.0 / 3.0;  // may be inf: stay class-balanced forever
    int patch_d = 0, patch_h = 0, patch_w = 0;  // 0 = half the crop

    // heads and distillation
    bool aux_enabled = true;
    bool fkd_enabled = true;
    std::string fkd_teacher = "fixture";        // fixture | vit
    std::string fkd_weights;                    // weight file for the vit adapter
    std::string fkd_distill_input = "mix";      // mix | unlabeled
    std::string projector = "linear";           // linear | conv
    int fixture_channels = 16;
    int fixture_input = 32;
    int fixture_cell = 4;

    // augmentation
    double gamma_aug_min = 0.7;
    double gamma_aug_max = 1.5;
    bool flip_enabled = true;

    // architecture
    int base_channels = 16;
    int stages = 4;

    // validation / checkpointing
    int val_window_d = 0, val_window_h = 0, val_window_w = 0;  // 0 = crop dims
    int val_stride_d = 32, val_stride_h = 32, val_stride_w = 16;
    int checkpoint_interval = 0;  // epochs between periodic checkpoints; 0 = final only

    Dims3 crop_dims() const { return {crop_d, crop_h, crop_w}; }
    Dims3 patch_dims() const {
        return {patch_d > 0 ? patch_d : std::max(1, crop_d / 2),
                patch_h > 0 ? patch_h : std::max(1, crop_h / 2),
                patch_w > 0 ? patch_w : std::max(1, crop_w / 2)};
    }
    Dims3 val_window() const {
        return {val_window_d > 0 ? val_window_d : crop_d,
                val_window_h > 0 ? val_window_h : crop_h,
                val_window_w > 0 ? val_window_w : crop_w};
    }
    Dims3 val_stride() const { return {val_stride_d, val_stride_h, val_stride_w}; }
};

namespace detail {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string fmt_real(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class ConfigBinder {
  public:
    explicit ConfigBinder(TrainConfig& cfg) { bind(cfg); }

    void set(const std::string& key, const std::string& value, int lineno) {
        auto it = setters_.find(key);
        if (it == setters_.end())
            throw ConfigError("config: unknown key '" + key + "' at line " +
                              std::to_string(lineno));
        it->second(value, lineno);
    }

    std::string dump() const {
        std::string out;
        for (const auto& key : order_) out += key + " = " + getters_.at(key)() + "\n";
        return out;
    }

  private:
    void add(const std::string& key, std::function<void(const std::string&, int)> set,
             std::function<std::string()> get) {
        order_.push_back(key);
        setters_[key] = std::move(set);
        getters_[key] = std::move(get);
    }

    static long long parse_int(const std::string& key, const std::string& v, int lineno) {
        try {
            std::size_t used = 0;
            const long long x = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return x;
        } catch (...) {
            throw ConfigError("config: value for " + key + " is not an integer at line " +
                              std::to_string(lineno));
        }
    }

    static double parse_real(const std::string& key, const std::string& v, int lineno,
                             bool allow_inf) {
        if (allow_inf && v == "inf") return std::numeric_limits<double>::infinity();
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size() || std::isnan(x)) throw std::invalid_argument("trailing");
            if (std::isinf(x) && !allow_inf) throw std::invalid_argument("inf");
            return x;
        } catch (ConfigError&) {
            throw;
        } catch (...) {
            throw ConfigError("config: value for " + key + " is not a real number at line " +
                              std::to_string(lineno));
        }
    }

    static bool parse_bool(const std::string& key, const std::string& v, int lineno) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("config: value for " + key + " must be true/false at line " +
                          std::to_string(lineno));
    }

    void int_key(const std::string& key, int& slot, long long lo, long long hi) {
        add(key,
            [key, &slot, lo, hi](const std::string& v, int lineno) {
                const long long x = parse_int(key, v, lineno);
                if (x < lo || x > hi)
                    throw ConfigError("config: " + key + " out of range [" + std::to_string(lo) +
                                      ", " + std::to_string(hi) + "] at line " +
                                      std::to_string(lineno));
                slot = static_cast<int>(x);
            },
            [&slot]() { return std::to_string(slot); });
    }

    void u64_key(const std::string& key, std::uint64_t& slot) {
        add(key,
            [key, &slot](const std::string& v, int lineno) {
                try {
                    std::size_t used = 0;
                    const std::uint64_t x = std::stoull(v, &used);
                    if (used != v.size()) throw std::invalid_argument("trailing");
                    slot = x;
                } catch (...) {
                    throw ConfigError("config: value for " + key +
                                      " is not an unsigned integer at line " +
                                      std::to_string(lineno));
                }
            },
            [&slot]() { return std::to_string(slot); });
    }

    void real_key(const std::string& key, double& slot, double lo, double hi,
                  bool allow_inf = false) {
        add(key,
            [key, &slot, lo, hi, allow_inf](const std::string& v, int lineno) {
                const double x = parse_real(key, v, lineno, allow_inf);
                const bool ok = std::isinf(x) ? (allow_inf && x > 0) : (x >= lo && x <= hi);
                if (!ok)
                    throw ConfigError("config: " + key + " out of range [" + fmt_real(lo) + ", " +
                                      fmt_real(hi) + (allow_inf ? " or inf" : "") + "] at line " +
                                      std::to_string(lineno));
                slot = x;
            },
            [&slot]() { return fmt_real(slot); });
    }

    void bool_key(const std::string& key, bool& slot) {
        add(key,
            [key, &slot](const std::string& v, int lineno) { slot = parse_bool(key, v, lineno); },
            [&slot]() { return slot ? std::string("true") : std::string("false"); });
    }

    void enum_key(const std::string& key, std::string& slot, std::vector<std::string> allowed) {
        add(key,
            [key, &slot, allowed](const std::string& v, int lineno) {
                for (const auto& a : allowed)
                    if (v == a) {
                        slot = v;
                        return;
                    }
                std::string opts;
                for (const auto& a : allowed) opts += (opts.empty() ? "" : "|") + a;
                throw ConfigError("config: " + key + " must be one of " + opts + " at line " +
                                  std::to_string(lineno));
            },
            [&slot]() { return slot; });
    }

    void string_key(const std::string& key, std::string& slot) {
        add(key, [&slot](const std::string& v, int) { slot = v; }, [&slot]() { return slot; });
    }

    void bind(TrainConfig& c) {
        u64_key("seed", c.seed);
        int_key("num_classes", c.num_classes, 0, 256);
        int_key("crop_d", c.crop_d, 1, 1 << 14);
        int_key("crop_h", c.crop_h, 1, 1 << 14);
        int_key("crop_w", c.crop_w, 1, 1 << 14);
        int_key("batch_labeled", c.batch_labeled, 1, 4096);
        int_key("batch_unlabeled", c.batch_unlabeled, 1, 4096);
        int_key("e_max", c.e_max, 1, 1 << 24);
        int_key("steps_per_epoch", c.steps_per_epoch, 1, 1 << 24);
        real_key("lr0", c.lr0, 0.0, 1e6);
        real_key("momentum", c.momentum, 0.0, 0.999999);
        real_key("weight_decay", c.weight_decay, 0.0, 1.0);
        real_key("lambda_unsup", c.lambda_unsup, 0.0, 1e6);
        real_key("ema_m", c.ema_m, 0.0, 1.0);
        real_key("tau", c.tau, 0.0, 1.0);
        real_key("gamma", c.gamma, 0.0, 1e3);
        real_key("eta", c.eta, 0.0, 1e9, /*allow_inf=*/true);
        int_key("patch_d", c.patch_d, 0, 1 << 14);
        int_key("patch_h", c.patch_h, 0, 1 << 14);
        int_key("patch_w", c.patch_w, 0, 1 << 14);
        bool_key("aux_enabled", c.aux_enabled);
        bool_key("fkd_enabled", c.fkd_enabled);
        enum_key("fkd_teacher", c.fkd_teacher, {"fixture", "vit"});
        string_key("fkd_weights", c.fkd_weights);
        enum_key("fkd_distill_input", c.fkd_distill_input, {"mix", "unlabeled"});
        enum_key("projector", c.projector, {"linear", "conv"});
        int_key("fixture_channels", c.fixture_channels, 1, 4096);
        int_key("fixture_input", c.fixture_input, 1, 4096);
        int_key("fixture_cell", c.fixture_cell, 1, 4096);
        real_key("gamma_aug_min", c.gamma_aug_min, 1e-6, 100.0);
        real_key("gamma_aug_max", c.gamma_aug_max, 1e-6, 100.0);
        bool_key("flip_enabled", c.flip_enabled);
        int_key("base_channels", c.base_channels, 1, 4096);
        int_key("stages", c.stages, 1, 10);
        int_key("val_window_d", c.val_window_d, 0, 1 << 14);
        int_key("val_window_h", c.val_window_h, 0, 1 << 14);
        int_key("val_window_w", c.val_window_w, 0, 1 << 14);
        int_key("val_stride_d", c.val_stride_d, 1, 1 << 14);
        int_key("val_stride_h", c.val_stride_h, 1, 1 << 14);
        int_key("val_stride_w", c.val_stride_w, 1, 1 << 14);
        int_key("checkpoint_interval", c.checkpoint_interval, 0, 1 << 24);
    }

    std::vector<std::string> order_;
    std::map<std::string, std::function<void(const std::string&, int)>> setters_;
    std::map<std::string, std::function<std::string()>> getters_;
};

}  // namespace detail

inline void validate_config(const TrainConfig& c) {
    if (c.gamma_aug_max < c.gamma_aug_min)
        throw detail::ConfigError("config: gamma_aug_max must be >= gamma_aug_min");
    if (c.num_classes == 1)
        throw detail::ConfigError("config: num_classes must be 0 (auto) or >= 2");
    const Dims3 patch = c.patch_dims();
    const Dims3 crop = c.crop_dims();
    for (int ax = 0; ax < 3; ++ax)
        if (patch[ax] > crop[ax])
            throw detail::ConfigError("config: patch exceeds crop on axis " + std::to_string(ax));
    if (c.fixture_input % c.fixture_cell != 0)
        throw detail::ConfigError("config: fixture_input must be a multiple of fixture_cell");
    if (c.fkd_enabled && c.fkd_teacher == "vit" && c.fkd_weights.empty())
        throw detail::ConfigError("config: fkd_teacher = vit requires fkd_weights");
}

inline TrainConfig parse_config_text(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    detail::ConfigBinder binder(cfg);
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw detail::ConfigError("config: malformed line " + std::to_string(lineno) + " in " +
                                      origin + " (expected key = value)");
        const std::string key = detail::trim(body.substr(0, eq));
        const std::string value = detail::trim(body.substr(eq + 1));
        if (key.empty())
            throw detail::ConfigError("config: malformed line " + std::to_string(lineno) + " in " +
                                      origin + " (empty key)");
        binder.set(key, value, lineno);
    }
    validate_config(cfg);
    return cfg;
}

inline TrainConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

inline std::string dump_config(const TrainConfig& cfg) {
    TrainConfig copy = cfg;
    return detail::ConfigBinder(copy).dump();
}

inline std::uint64_t config_digest(const TrainConfig& cfg) {
    const std::string text = dump_config(cfg);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace semivox
