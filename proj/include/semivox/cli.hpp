#pragma once

// Command-line entry point. Subcommands: gen-data, train, eval, schedule,
// info. Every run directory written by `train` contains the resolved config
// echo, the training and validation logs, and the checkpoints, which is
// enough to reproduce the run from the echo alone.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "semivox/config.hpp"
#include "semivox/dataset.hpp"
#include "semivox/metrics.hpp"
#include "semivox/phantom.hpp"
#include "semivox/sampling.hpp"
#include "semivox/trainer.hpp"
#include "semivox/volume_io.hpp"

namespace semivox {

namespace cli_detail {

inline const char* kUsage =
    "usage: semivox <command> [options]\n"
    "commands:\n"
    "  gen-data   generate a synthetic phantom dataset and manifest\n"
    "  train      train from a config file and dataset manifest\n"
    "  eval       evaluate a checkpoint on a dataset split\n"
    "  schedule   dump the per-epoch class-sampling schedule as CSV\n"
    "  info       print the resolved config and an environment digest\n";

inline Dims3 parse_dims(const std::string& s) {
    Dims3 d;
    char sep1 = 0, sep2 = 0;
    std::istringstream is(s);
    if (!(is >> d.d >> sep1 >> d.h >> sep2 >> d.w) || sep1 != 'x' || sep2 != 'x' || !is.eof() ||
        d.d < 1 || d.h < 1 || d.w < 1)
        throw std::runtime_error("expected dims as DxHxW, got '" + s + "'");
    return d;
}

inline std::vector<double> parse_csv_reals(const std::string& s) {
    std::vector<double> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

inline void parse_app(CLI::App& app, std::vector<std::string> args) {
    std::reverse(args.begin(), args.end());  // CLI11 expects a reversed vector
    app.parse(args);
}

inline int cmd_gen_data(const std::vector<std::string>& args) {
    CLI::App app{"generate a synthetic phantom dataset"};
    std::string out_dir;
    std::uint64_t seed = 7;
    std::string dims_str = "32x64x64";
    int classes = 3;
    std::string fractions_str, contrasts_str;
    double noise = 0.05;
    double background = 0.15;
    int n_labeled = 3, n_unlabeled = 12, n_validation = 2, n_test = 4;
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--seed", seed, "master seed");
    app.add_option("--dims", dims_str, "volume dims DxHxW");
    app.add_option("--classes", classes, "foreground class count")->check(CLI::Range(1, 255));
    app.add_option("--fractions", fractions_str, "per-class volume fractions, comma separated");
    app.add_option("--contrasts", contrasts_str, "per-class intensity offsets, comma separated");
    app.add_option("--noise", noise, "additive uniform noise amplitude");
    app.add_option("--background", background, "background intensity");
    app.add_option("--labeled", n_labeled, "labeled case count");
    app.add_option("--unlabeled", n_unlabeled, "unlabeled case count");
    app.add_option("--validation", n_validation, "validation case count");
    app.add_option("--test", n_test, "test case count");
    parse_app(app, args);

    PhantomSpec spec;
    spec.dims = parse_dims(dims_str);
    spec.num_foreground_classes = classes;
    spec.noise_amplitude = noise;
    spec.background_intensity = background;
    if (!fractions_str.empty()) {
        spec.volume_fractions = parse_csv_reals(fractions_str);
    } else {
        // default: a factor-of-roughly-5 cascade starting at 10%
        double f = 0.10;
        for (int k = 0; k < classes; ++k, f /= 5.0) spec.volume_fractions.push_back(f);
    }
    if (!contrasts_str.empty()) {
        spec.contrasts = parse_csv_reals(contrasts_str);
    } else {
        for (int k = 0; k < classes; ++k)
            spec.contrasts.push_back(0.2 + (classes > 1 ? 0.6 * k / (classes - 1) : 0.3));
    }
    validate_phantom_spec(spec);

    std::filesystem::create_directories(out_dir);
    DatasetSplit split;
    int index = 0;
    auto emit = [&](std::vector<CaseRef>& section, int count) {
        for (int i = 0; i < count; ++i, ++index) {
            char vol_name[32], lab_name[32];
            std::snprintf(vol_name, sizeof vol_name, "vol_%03d.dmxv", index);
            std::snprintf(lab_name, sizeof lab_name, "lab_%03d.dmxv", index);
            auto [vol, labels] = generate_phantom(mix_seed(seed) + index, spec);
            store_volume(vol, out_dir + "/" + vol_name);
            store_volume(labels, out_dir + "/" + lab_name);
            section.push_back({vol_name, lab_name});
        }
    };
    emit(split.labeled, n_labeled);
    emit(split.unlabeled, n_unlabeled);
    emit(split.validation, n_validation);
    emit(split.test, n_test);
    write_manifest(out_dir + "/manifest.txt", split);
    std::cout << "wrote " << index << " cases to " << out_dir << "\n";
    return 0;
}

inline int cmd_train(const std::vector<std::string>& args) {
    CLI::App app{"train from a config and dataset manifest"};
    std::string config_path, data_path, run_dir, resume_path;
    app.add_option("--config", config_path, "config file (defaults when omitted)");
    app.add_option("--data", data_path, "dataset manifest")->required();
    app.add_option("--run-dir", run_dir, "output run directory")->required();
    app.add_option("--resume", resume_path, "checkpoint to resume from");
    parse_app(app, args);

    const TrainConfig cfg = config_path.empty() ? TrainConfig{} : parse_config(config_path);
    const Dataset dataset = load_dataset(data_path);
    const std::optional<std::string> resume =
        resume_path.empty() ? std::nullopt : std::optional<std::string>(resume_path);
    RunResult result = run_training(cfg, dataset, run_dir, resume);
    std::cout << "finished at step " << result.state.step << "; final checkpoint "
              << result.final_checkpoint_path << "\n";
    return 0;
}

inline int cmd_eval(const std::vector<std::string>& args) {
    CLI::App app{"evaluate a checkpoint on a dataset split"};
    std::string checkpoint_path, data_path, split_name = "test", out_csv = "metrics.csv";
    app.add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    app.add_option("--data", data_path, "dataset manifest")->required();
    app.add_option("--split", split_name, "labeled|unlabeled|validation|test")
        ->check(CLI::IsMember({"labeled", "unlabeled", "validation", "test"}));
    app.add_option("--out", out_csv, "metrics CSV path");
    parse_app(app, args);

    TrainerState st = load_checkpoint(checkpoint_path);
    const Dataset dataset = load_dataset(data_path);
    const std::vector<Case>* cases = &dataset.test;
    if (split_name == "labeled") cases = &dataset.labeled;
    else if (split_name == "unlabeled") cases = &dataset.unlabeled;
    else if (split_name == "validation") cases = &dataset.validation;
    if (cases->empty()) throw std::runtime_error("eval: split '" + split_name + "' is empty");

    const SlidingWindowSpec spec{st.cfg.val_window(), st.cfg.val_stride()};
    const MetricsReport rep = evaluate(st.student, *cases, spec);
    std::ofstream f(out_csv, std::ios::trunc);
    if (!f) throw std::runtime_error("eval: cannot write " + out_csv);
    write_metrics_csv(rep, f);

    int missing = 0;
    for (int c = 1; c < rep.num_classes; ++c) missing += rep.missing_dice[c];
    std::cout << "evaluated " << rep.num_cases << " cases; mean dice "
              << (rep.avg_dice ? std::to_string(*rep.avg_dice) : std::string("nan"))
              << "; undefined per-case dice entries: " << missing << "; wrote " << out_csv
              << "\n";
    return 0;
}

inline int cmd_schedule(const std::vector<std::string>& args) {
    CLI::App app{"dump the per-epoch class-sampling schedule"};
    std::string config_path, data_path, out_csv;
    app.add_option("--config", config_path, "config file (defaults when omitted)");
    app.add_option("--data", data_path, "dataset manifest (labeled split gives counts)")
        ->required();
    app.add_option("--out", out_csv, "schedule CSV path")->required();
    parse_app(app, args);

    const TrainConfig cfg = config_path.empty() ? TrainConfig{} : parse_config(config_path);
    const Dataset dataset = load_dataset(data_path);
    if (dataset.labeled.empty()) throw std::runtime_error("schedule: labeled split is empty");
    const int num_classes = cfg.num_classes == 0 ? dataset.num_classes : cfg.num_classes;
    std::vector<LabelMap> maps;
    for (const Case& c : dataset.labeled) maps.push_back(c.labels);
    const ClassStats stats = compute_class_stats(std::span<const LabelMap>(maps), num_classes);
    const auto balanced = balanced_distribution(imbalance_ratios(stats), cfg.gamma);

    std::ofstream f(out_csv, std::ios::trunc);
    if (!f) throw std::runtime_error("schedule: cannot write " + out_csv);
    write_schedule_csv(f, balanced, MixSchedule{cfg.gamma, cfg.eta, cfg.e_max});
    std::cout << "wrote " << cfg.e_max << " epochs x " << num_classes << " classes to " << out_csv
              << "\n";
    return 0;
}

inline std::string environment_digest_text() {
    std::ostringstream os;
    os << "compiler = " << __VERSION__ << "\n";
    os << "cxx_standard = " << __cplusplus << "\n";
    os << "pointer_bytes = " << sizeof(void*) << "\n";
    const std::uint16_t probe = 1;
    os << "endian = " << (*reinterpret_cast<const std::uint8_t*>(&probe) ? "little" : "big")
       << "\n";
    os << "float_digits = " << std::numeric_limits<float>::digits << "\n";
    return os.str();
}

inline int cmd_info(const std::vector<std::string>& args) {
    CLI::App app{"print resolved config and environment digest"};
    std::string config_path;
    app.add_option("--config", config_path, "config file (defaults when omitted)");
    parse_app(app, args);

    const TrainConfig cfg = config_path.empty() ? TrainConfig{} : parse_config(config_path);
    std::cout << dump_config(cfg);
    const std::string env = environment_digest_text();
    std::cout << env;
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : env) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    std::cout << "environment_digest = " << buf << "\n";
    std::cout << "config_digest = ";
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(config_digest(cfg)));
    std::cout << buf << "\n";
    return 0;
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args) {
    if (args.empty()) {
        std::cerr << cli_detail::kUsage;
        return 2;
    }
    const std::string cmd = args[0];
    const std::vector<std::string> rest(args.begin() + 1, args.end());
    try {
        if (cmd == "gen-data") return cli_detail::cmd_gen_data(rest);
        if (cmd == "train") return cli_detail::cmd_train(rest);
        if (cmd == "eval") return cli_detail::cmd_eval(rest);
        if (cmd == "schedule") return cli_detail::cmd_schedule(rest);
        if (cmd == "info") return cli_detail::cmd_info(rest);
        std::cerr << "semivox: unknown command '" << cmd << "'\n" << cli_detail::kUsage;
        return 2;
    } catch (const CLI::ParseError& e) {
        std::cerr << "semivox " << cmd << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "semivox " << cmd << ": " << e.what() << "\n";
        return 1;
    }
}

}  // namespace semivox
