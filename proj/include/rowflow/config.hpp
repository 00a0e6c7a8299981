#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "rowflow/network.hpp"
#include "rowflow/prune.hpp"
#include "rowflow/sim.hpp"

namespace rowflow {

struct DatasetConfig {
    std::string kind = "blobs"; // "blobs" or "idx"
    int samples = 120;
    int classes = 3;
    int height = 8;
    int width = 8;
    std::uint64_t seed = 0xDA7A5EEDULL; // data is fixed by the dataset, not the run seed
    double separation = 1.5;
    double noise = 0.6;
    std::string images; // idx paths
    std::string labels;
};

struct TrainConfig {
    int epochs = 30;
    double lr = 0.05;
    int batch_size = 10;
    std::uint64_t seed = 1;
    std::optional<PruneConfig> prune;
};

struct SimulateConfig {
    int batches = 1; // training batches to capture and replay on the array
};

struct ExperimentConfig {
    DatasetConfig dataset;
    NetworkSpec network;
    TrainConfig train;
    SimulateConfig simulate;
    ArchConfig arch;
    std::uint64_t hash = 0; // over the canonicalized config content
};

/* Strict parse: unknown keys, wrong types, and malformed structure all
 * raise ConfigError with the offending location. The "arch" entry may be
 * an inline object or a path to a separate arch file; the hash covers the
 * resolved content of both. */
ExperimentConfig load_experiment(const std::string& path);

std::uint64_t fnv1a64(std::string_view s);

} // namespace rowflow
