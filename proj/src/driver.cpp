#include "rowflow/driver.hpp"

#include <algorithm>
#include <map>

#include "rowflow/errors.hpp"
#include "rowflow/report.hpp"
#include "rowflow/rng.hpp"

namespace rowflow {

Dataset build_dataset(const DatasetConfig& cfg) {
    if (cfg.kind == "idx") return load_idx(cfg.images, cfg.labels);
    return make_blob_dataset(cfg.samples, cfg.classes, {1, cfg.height, cfg.width}, cfg.seed,
                             cfg.separation, cfg.noise);
}

Model build_model(const NetworkSpec& net, std::uint64_t seed) {
    Model m;
    m.spec = net;
    m.build(Rng::derive(seed, "init"));
    return m;
}

namespace {

std::vector<int> conv_layers(const NetworkSpec& net) {
    std::vector<int> out;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].kind == LayerKind::Conv) out.push_back(static_cast<int>(i));
    return out;
}

} // namespace

std::string run_train_csv(const ExperimentConfig& cfg, bool paired) {
    const Dataset data = build_dataset(cfg.dataset);

    Model model = build_model(cfg.network, cfg.train.seed);
    TrainSettings settings;
    settings.lr = cfg.train.lr;
    settings.batch_size = cfg.train.batch_size;
    settings.seed = cfg.train.seed;
    settings.prune = cfg.train.prune;
    Trainer trainer(model, settings);

    std::optional<Model> base_model;
    std::optional<Trainer> base_trainer;
    if (paired) {
        base_model.emplace(build_model(cfg.network, cfg.train.seed));
        TrainSettings base = settings;
        base.prune.reset();
        base_trainer.emplace(*base_model, base);
    }

    const std::vector<int> convs = conv_layers(model.spec);
    std::string csv = "epoch,loss,accuracy";
    if (paired) csv += ",base_loss,base_accuracy";
    for (int i : convs) {
        const std::string tag = "conv" + std::to_string(i);
        csv += "," + tag + "_rho," + tag + "_tau";
    }
    csv += '\n';

    for (int e = 1; e <= cfg.train.epochs; ++e) {
        const EpochResult r = trainer.run_epoch(data);
        csv += std::to_string(e) + "," + fmt_g17(r.mean_loss) + "," + fmt_g17(r.accuracy);
        if (paired) {
            const EpochResult b = base_trainer->run_epoch(data);
            csv += "," + fmt_g17(b.mean_loss) + "," + fmt_g17(b.accuracy);
        }
        for (int i : convs) {
            const auto& pl = r.per_layer[static_cast<std::size_t>(i)];
            csv += "," + fmt_g17(pl.rho) + "," + fmt_g17(pl.tau);
        }
        csv += '\n';
    }
    return csv;
}

std::string run_simulate_csv(const ExperimentConfig& cfg, const std::string& mode_filter) {
    if (mode_filter != "sparse" && mode_filter != "dense" && mode_filter != "both")
        throw ConfigError("mode must be sparse, dense, or both");
    const bool want_sparse = mode_filter != "dense";
    const bool want_dense = mode_filter != "sparse";

    const Dataset data = build_dataset(cfg.dataset);
    Model model = build_model(cfg.network, cfg.train.seed);
    TrainSettings settings;
    settings.lr = cfg.train.lr;
    settings.batch_size = cfg.train.batch_size;
    settings.seed = cfg.train.seed;
    settings.prune = cfg.train.prune;
    Trainer trainer(model, settings);

    const int n = static_cast<int>(data.images.size());
    const int warmup = cfg.train.prune ? cfg.train.prune->fifo_depth + 1 : 0;

    struct Agg {
        long long cycles = 0;
        EventTally events;
    };
    std::map<std::tuple<int, int, int>, Agg> agg; // (layer, step, mode)

    const std::vector<int> convs = conv_layers(model.spec);
    std::vector<int> order;
    std::size_t cursor = 0;
    auto next_batch = [&](std::vector<DenseTensor3>& images, std::vector<int>& labels) {
        if (cursor >= order.size()) {
            order = trainer.next_epoch_order(n);
            cursor = 0;
        }
        images.clear();
        labels.clear();
        const std::size_t end =
            std::min(order.size(), cursor + static_cast<std::size_t>(settings.batch_size));
        for (; cursor < end; ++cursor) {
            images.push_back(data.images[static_cast<std::size_t>(order[cursor])]);
            labels.push_back(data.labels[static_cast<std::size_t>(order[cursor])]);
        }
    };

    std::vector<DenseTensor3> images;
    std::vector<int> labels;
    for (int b = 0; b < warmup; ++b) {
        next_batch(images, labels);
        trainer.train_batch(images, labels);
    }

    for (int cb = 0; cb < cfg.simulate.batches; ++cb) {
        next_batch(images, labels);
        BackwardCapture cap;
        trainer.train_batch(images, labels, &cap);
        const int batch_n = static_cast<int>(images.size());

        for (int li : convs) {
            const LayerSpec& spec = model.spec.layers[static_cast<std::size_t>(li)];
            const Shape3 in_shape =
                NetworkSpec::shape_before(model.shapes, model.spec.input, li);
            const Shape3 out_shape = model.shapes[static_cast<std::size_t>(li)];
            const bool masked_below =
                li > 0 && model.spec.layers[static_cast<std::size_t>(li) - 1].kind == LayerKind::Relu;

            for (int s = 0; s < batch_n; ++s) {
                const StepCapture& sc =
                    cap.conv[static_cast<std::size_t>(li)][static_cast<std::size_t>(s)];
                for (StepKind kind : {StepKind::Forward, StepKind::Gta, StepKind::Gtw}) {
                    if (kind == StepKind::Gta && li == 0) continue; // nobody consumes it

                    StepInput in;
                    in.kind = kind;
                    in.layer = li;
                    in.spec = &spec;
                    in.in_shape = in_shape;
                    in.out_shape = out_shape;
                    in.weights = &cap.params.conv[static_cast<std::size_t>(li)];
                    if (kind != StepKind::Gta)
                        in.input = &cap.fwd.acts[static_cast<std::size_t>(li)]
                                                [static_cast<std::size_t>(s)];
                    if (kind != StepKind::Forward) in.d_out = &sc.d_out_consumed;
                    if (kind == StepKind::Forward)
                        in.relu_after = spec.structure == ConvStructure::ConvRelu;
                    if (kind == StepKind::Gta) {
                        if (masked_below)
                            in.gta_masks = &cap.fwd.relu_masks[static_cast<std::size_t>(li) - 1]
                                                              [static_cast<std::size_t>(s)];
                        if (spec.structure == ConvStructure::ConvRelu && trainer.pruner() &&
                            trainer.pruner()->active_for(li)) {
                            in.prune_tau = sc.tau;
                            in.pruner = trainer.pruner();
                            in.prune_batch = cap.batch;
                            in.prune_sample = s;
                        }
                    }

                    for (SimMode mode : {SimMode::Sparse, SimMode::Dense}) {
                        if (mode == SimMode::Sparse && !want_sparse) continue;
                        if (mode == SimMode::Dense && !want_dense) continue;
                        const LayerStepResult r = simulate_layer_step(in, cfg.arch, mode);
                        Agg& a = agg[{li, static_cast<int>(kind), static_cast<int>(mode)}];
                        a.cycles += r.cycles;
                        a.events += r.events;
                    }
                }
            }
        }
    }

    std::string csv =
        "layer,step,mode,cycles,mac_events,buffer_read_bytes,buffer_write_bytes,reg_accesses,"
        "energy_pj\n";
    Agg total_sparse, total_dense;
    auto emit = [&](const std::string& layer, const std::string& step, SimMode mode,
                    const Agg& a) {
        csv += layer + "," + step + "," + mode_name(mode) + "," + std::to_string(a.cycles) + "," +
               std::to_string(a.events.mac) + "," +
               std::to_string(a.events.buffer_read * cfg.arch.bytes_per_value) + "," +
               std::to_string(a.events.buffer_write * cfg.arch.bytes_per_value) + "," +
               std::to_string(a.events.reg_access) + "," +
               fmt_g17(energy_pj(a.events, cfg.arch.costs)) + "\n";
    };

    for (int li : convs) {
        for (StepKind kind : {StepKind::Forward, StepKind::Gta, StepKind::Gtw}) {
            if (kind == StepKind::Gta && li == 0) continue;
            for (SimMode mode : {SimMode::Sparse, SimMode::Dense}) {
                if (mode == SimMode::Sparse && !want_sparse) continue;
                if (mode == SimMode::Dense && !want_dense) continue;
                const auto it = agg.find({li, static_cast<int>(kind), static_cast<int>(mode)});
                if (it == agg.end()) continue;
                emit(std::to_string(li), step_name(kind), mode, it->second);
                if (mode == SimMode::Sparse)
                    total_sparse.cycles += it->second.cycles, total_sparse.events += it->second.events;
                else
                    total_dense.cycles += it->second.cycles, total_dense.events += it->second.events;
            }
        }
    }
    if (want_sparse) emit("total", "all", SimMode::Sparse, total_sparse);
    if (want_dense) emit("total", "all", SimMode::Dense, total_dense);

    if (want_sparse && want_dense && total_sparse.cycles > 0) {
        const double speedup =
            static_cast<double>(total_dense.cycles) / static_cast<double>(total_sparse.cycles);
        const double es = energy_pj(total_sparse.events, cfg.arch.costs);
        const double ed = energy_pj(total_dense.events, cfg.arch.costs);
        csv += "# speedup=" + fmt_g10(speedup) + " energy_ratio=" + fmt_g10(es > 0 ? ed / es : 0) +
               "\n";
    }
    return csv;
}

std::string run_dump_text(const ExperimentConfig& cfg, int layer, StepKind step) {
    NetworkSpec net = cfg.network;
    const std::vector<Shape3> shapes = net.validate();
    if (layer < 0 || layer >= static_cast<int>(net.layers.size()) ||
        net.layers[static_cast<std::size_t>(layer)].kind != LayerKind::Conv)
        throw ConfigError("dump-schedule: layer " + std::to_string(layer) + " is not a conv layer");

    const LayerSpec& spec = net.layers[static_cast<std::size_t>(layer)];
    const Shape3 in_shape = NetworkSpec::shape_before(shapes, net.input, layer);
    const Shape3 out_shape = shapes[static_cast<std::size_t>(layer)];

    std::vector<RowInstruction> instrs;
    switch (step) {
        case StepKind::Forward:
            instrs = lower_forward(layer, spec, in_shape, out_shape);
            break;
        case StepKind::Gta: {
            std::vector<BitMask> masks(static_cast<std::size_t>(in_shape.c) * in_shape.h,
                                       BitMask(in_shape.w));
            for (auto& m : masks)
                for (int x = 0; x < in_shape.w; ++x) m.set(x, true);
            instrs = lower_gta(layer, spec, in_shape, out_shape, &masks);
            break;
        }
        case StepKind::Gtw:
            instrs = lower_gtw(layer, spec, in_shape, out_shape);
            break;
    }

    std::string text;
    for (const auto& ins : instrs) text += format_instruction(ins) + "\n";
    return text;
}

} // namespace rowflow
