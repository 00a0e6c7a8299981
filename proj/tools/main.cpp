#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rowflow/driver.hpp"
#include "rowflow/errors.hpp"
#include "rowflow/prune.hpp"
#include "rowflow/reference.hpp"
#include "rowflow/report.hpp"
#include "rowflow/rng.hpp"

namespace {

using namespace rowflow;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> prune_p;
    std::optional<int> fifo_depth;
};

void apply(ExperimentConfig& cfg, const Overrides& ov) {
    if (ov.seed) cfg.train.seed = *ov.seed;
    if (ov.prune_p) {
        if (*ov.prune_p < 0.0 || *ov.prune_p >= 1.0)
            throw ConfigError("--prune-p must be in [0, 1)");
        if (*ov.prune_p == 0.0) {
            cfg.train.prune.reset();
        } else {
            if (!cfg.train.prune) cfg.train.prune.emplace();
            cfg.train.prune->p = *ov.prune_p;
        }
    }
    if (ov.fifo_depth) {
        if (!cfg.train.prune)
            throw ConfigError("--fifo-depth requires pruning (config or --prune-p)");
        if (*ov.fifo_depth < 1) throw ConfigError("--fifo-depth must be at least 1");
        cfg.train.prune->fifo_depth = *ov.fifo_depth;
    }
}

std::string write_report(const std::string& out_dir, const std::string& command,
                         const std::string& ext, const std::string& content,
                         const ExperimentConfig& cfg) {
    ensure_dir(out_dir);
    const std::string name = timestamped_filename(command, ext);
    const std::string path = out_dir + "/" + name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RunError(path + ": cannot write");
    f << content;
    f.close();
    write_manifest(out_dir, cfg.hash, cfg.train.seed, command, {name});
    return path;
}

void check(bool ok, const std::string& what) {
    if (!ok) throw RunError("selftest: " + what);
    std::printf("ok %s\n", what.c_str());
}

int selftest() {
    Rng a(42), b(42);
    check(a.next_u64() == b.next_u64(), "generator determinism");

    DenseTensor3 x(1, 3, 3);
    for (int i = 0; i < 9; ++i) x.data[static_cast<std::size_t>(i)] = i + 1;
    KernelTensor4 w(1, 1, 1);
    w.data[0] = 2.0;
    const DenseTensor3 y = conv2d_ref(x, w, 1, 0);
    check(y.at(0, 2, 2) == 18.0, "unit kernel convolution");

    check(std::abs(estimate_sigma(4.0, 4) - 1.2533141373155003) < 1e-12, "deviation estimate");

    Rng r(7);
    const double kept = stochastic_prune_value(2.0, 1.0, r);
    check(kept == 2.0, "above-threshold passthrough");

    check(fmt_g17(0.1) == "0.10000000000000001", "numeric formatting");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse training dataflow laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "runs";
    Overrides ov;

    auto add_common = [&](CLI::App* cmd, bool with_prune) {
        cmd->add_option("--config", config_path, "experiment configuration file")->required();
        cmd->add_option("--out", out_dir, "output directory (default: runs)");
        cmd->add_option("--seed", ov.seed, "override the training seed");
        if (with_prune) {
            cmd->add_option("--prune-p", ov.prune_p, "override pruning probability; 0 disables");
            cmd->add_option("--fifo-depth", ov.fifo_depth, "override threshold window depth");
        }
    };

    bool paired = false;
    CLI::App* cmd_train = app.add_subcommand("train", "train and report per-epoch metrics");
    add_common(cmd_train, true);
    cmd_train->add_flag("--paired", paired, "train an unpruned twin on the same data order");

    std::string mode = "both";
    CLI::App* cmd_sim = app.add_subcommand("simulate", "replay captured steps on the array");
    add_common(cmd_sim, true);
    cmd_sim->add_option("--mode", mode, "sparse, dense, or both (default)");

    int dump_layer = -1;
    std::string dump_step = "forward";
    CLI::App* cmd_dump = app.add_subcommand("dump-schedule", "print lowered row instructions");
    add_common(cmd_dump, false);
    cmd_dump->add_option("--layer", dump_layer, "conv layer index (default: first conv)");
    cmd_dump->add_option("--step", dump_step, "forward, gta, or gtw (default: forward)");

    app.add_subcommand("selftest", "run built-in sanity checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Bad invocations share the config-error exit code; --help stays 0.
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand("selftest")) return selftest();

        ExperimentConfig cfg = load_experiment(config_path);
        apply(cfg, ov);

        if (app.got_subcommand(cmd_train)) {
            const std::string csv = run_train_csv(cfg, paired);
            const std::string path = write_report(out_dir, "train", "csv", csv, cfg);
            std::printf("wrote %s\n", path.c_str());
        } else if (app.got_subcommand(cmd_sim)) {
            const std::string csv = run_simulate_csv(cfg, mode);
            const std::string path = write_report(out_dir, "simulate", "csv", csv, cfg);
            std::printf("wrote %s\n", path.c_str());
        } else if (app.got_subcommand(cmd_dump)) {
            if (dump_layer < 0) {
                for (std::size_t i = 0; i < cfg.network.layers.size(); ++i)
                    if (cfg.network.layers[i].kind == LayerKind::Conv) {
                        dump_layer = static_cast<int>(i);
                        break;
                    }
            }
            StepKind step;
            if (dump_step == "forward")
                step = StepKind::Forward;
            else if (dump_step == "gta")
                step = StepKind::Gta;
            else if (dump_step == "gtw")
                step = StepKind::Gtw;
            else
                throw ConfigError("--step must be forward, gta, or gtw");
            const std::string text = run_dump_text(cfg, dump_layer, step);
            const std::string path = write_report(out_dir, "dump-schedule", "txt", text, cfg);
            std::printf("wrote %s\n", path.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const RunError& e) {
        std::fprintf(stderr, "run error: %s\n", e.what());
        return 3;
    }
    return 0;
}
