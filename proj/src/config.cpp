#include "rowflow/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "rowflow/errors.hpp"

namespace rowflow {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

namespace {

json parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path + ": cannot open");
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key()))
            throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": bad value for \"" + key + "\"");
    }
}

template <typename T>
T get_req(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing key \"" + key + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": bad value for \"" + key + "\"");
    }
}

DatasetConfig parse_dataset(const json& j) {
    check_keys(j,
               {"kind", "samples", "classes", "height", "width", "seed", "separation", "noise",
                "images", "labels"},
               "dataset");
    DatasetConfig d;
    d.kind = get_or<std::string>(j, "kind", d.kind, "dataset");
    if (d.kind != "blobs" && d.kind != "idx")
        throw ConfigError("dataset: kind must be \"blobs\" or \"idx\"");
    d.samples = get_or(j, "samples", d.samples, "dataset");
    d.classes = get_or(j, "classes", d.classes, "dataset");
    d.height = get_or(j, "height", d.height, "dataset");
    d.width = get_or(j, "width", d.width, "dataset");
    d.seed = get_or(j, "seed", d.seed, "dataset");
    d.separation = get_or(j, "separation", d.separation, "dataset");
    d.noise = get_or(j, "noise", d.noise, "dataset");
    if (d.kind == "idx") {
        d.images = get_req<std::string>(j, "images", "dataset");
        d.labels = get_req<std::string>(j, "labels", "dataset");
    }
    return d;
}

NetworkSpec parse_network(const json& j) {
    check_keys(j, {"input", "classes", "layers"}, "network");
    NetworkSpec net;
    const auto input = get_req<std::vector<int>>(j, "input", "network");
    if (input.size() != 3) throw ConfigError("network: input must be [channels, height, width]");
    net.input = {input[0], input[1], input[2]};
    net.classes = get_req<int>(j, "classes", "network");

    if (!j.contains("layers") || !j.at("layers").is_array())
        throw ConfigError("network: layers must be an array");
    int idx = 0;
    for (const auto& lj : j.at("layers")) {
        const std::string where = "network.layers[" + std::to_string(idx) + "]";
        const auto type = get_req<std::string>(lj, "type", where);
        LayerSpec l;
        if (type == "conv") {
            check_keys(lj, {"type", "filters", "kernel", "stride", "pad"}, where);
            l.kind = LayerKind::Conv;
            l.out_channels = get_req<int>(lj, "filters", where);
            l.kernel = get_req<int>(lj, "kernel", where);
            l.stride = get_or(lj, "stride", 1, where);
            l.pad = get_or(lj, "pad", 0, where);
        } else if (type == "relu") {
            check_keys(lj, {"type"}, where);
            l.kind = LayerKind::Relu;
        } else if (type == "maxpool") {
            check_keys(lj, {"type", "pool", "stride"}, where);
            l.kind = LayerKind::MaxPool;
            l.pool = get_req<int>(lj, "pool", where);
            l.pool_stride = get_or(lj, "stride", l.pool, where);
        } else if (type == "batchnorm") {
            check_keys(lj, {"type"}, where);
            l.kind = LayerKind::BatchNorm;
        } else if (type == "flatten") {
            check_keys(lj, {"type"}, where);
            l.kind = LayerKind::Flatten;
        } else if (type == "fc") {
            check_keys(lj, {"type", "out"}, where);
            l.kind = LayerKind::Fc;
            l.fc_out = get_req<int>(lj, "out", where);
        } else {
            throw ConfigError(where + ": unknown layer type \"" + type + "\"");
        }
        net.layers.push_back(l);
        ++idx;
    }
    return net;
}

std::optional<PruneConfig> parse_prune(const json& j) {
    check_keys(j, {"p", "fifo_depth"}, "train.prune");
    PruneConfig p;
    p.p = get_req<double>(j, "p", "train.prune");
    p.fifo_depth = get_or(j, "fifo_depth", p.fifo_depth, "train.prune");
    if (!(p.p >= 0.0 && p.p < 1.0)) throw ConfigError("train.prune: p must lie in [0,1)");
    if (p.fifo_depth < 1) throw ConfigError("train.prune: fifo_depth must be >= 1");
    if (p.p == 0.0) return std::nullopt;
    return p;
}

TrainConfig parse_train(const json& j) {
    check_keys(j, {"epochs", "lr", "batch_size", "seed", "prune"}, "train");
    TrainConfig t;
    t.epochs = get_or(j, "epochs", t.epochs, "train");
    t.lr = get_or(j, "lr", t.lr, "train");
    t.batch_size = get_or(j, "batch_size", t.batch_size, "train");
    t.seed = get_or(j, "seed", t.seed, "train");
    if (j.contains("prune")) t.prune = parse_prune(j.at("prune"));
    return t;
}

ArchConfig parse_arch(const json& j) {
    check_keys(j,
               {"n_groups", "pes_per_group", "buffer_kib", "bytes_per_value",
                "bandwidth_bytes_per_cycle", "energy_pj", "note"},
               "arch");
    ArchConfig a;
    a.n_groups = get_or(j, "n_groups", a.n_groups, "arch");
    a.pes_per_group = get_or(j, "pes_per_group", a.pes_per_group, "arch");
    a.buffer_bytes = 1024LL * get_or(j, "buffer_kib", 386, "arch");
    a.bytes_per_value = get_or(j, "bytes_per_value", a.bytes_per_value, "arch");
    a.bandwidth_bytes_per_cycle =
        get_or(j, "bandwidth_bytes_per_cycle", a.bandwidth_bytes_per_cycle, "arch");
    if (j.contains("energy_pj")) {
        const auto& e = j.at("energy_pj");
        check_keys(e, {"buffer_read", "buffer_write", "mac", "reg_access", "ppu_op"},
                   "arch.energy_pj");
        a.costs.buffer_read = get_or(e, "buffer_read", a.costs.buffer_read, "arch.energy_pj");
        a.costs.buffer_write = get_or(e, "buffer_write", a.costs.buffer_write, "arch.energy_pj");
        a.costs.mac = get_or(e, "mac", a.costs.mac, "arch.energy_pj");
        a.costs.reg_access = get_or(e, "reg_access", a.costs.reg_access, "arch.energy_pj");
        a.costs.ppu_op = get_or(e, "ppu_op", a.costs.ppu_op, "arch.energy_pj");
    }
    if (a.n_groups <= 0 || a.pes_per_group <= 0 || a.bytes_per_value <= 0 ||
        a.bandwidth_bytes_per_cycle <= 0 || a.buffer_bytes <= 0)
        throw ConfigError("arch: sizes must be positive");
    return a;
}

} // namespace

ExperimentConfig load_experiment(const std::string& path) {
    const json root = parse_file(path);
    if (!root.is_object()) throw ConfigError(path + ": top level must be an object");
    check_keys(root, {"dataset", "network", "train", "simulate", "arch"}, path);

    ExperimentConfig cfg;
    if (root.contains("dataset")) cfg.dataset = parse_dataset(root.at("dataset"));
    if (!root.contains("network")) throw ConfigError(path + ": missing \"network\"");
    cfg.network = parse_network(root.at("network"));
    if (root.contains("train")) cfg.train = parse_train(root.at("train"));
    if (root.contains("simulate")) {
        check_keys(root.at("simulate"), {"batches"}, "simulate");
        cfg.simulate.batches = get_or(root.at("simulate"), "batches", 1, "simulate");
    }

    std::string canonical = root.dump();
    if (root.contains("arch")) {
        const auto& aj = root.at("arch");
        if (aj.is_string()) {
            const json arch_root = parse_file(aj.get<std::string>());
            cfg.arch = parse_arch(arch_root);
            canonical += arch_root.dump();
        } else {
            cfg.arch = parse_arch(aj);
        }
    }
    cfg.hash = fnv1a64(canonical);
    return cfg;
}

} // namespace rowflow
