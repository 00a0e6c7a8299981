#pragma once

#include <string>

#include "rowflow/config.hpp"
#include "rowflow/dataset.hpp"
#include "rowflow/sim.hpp"
#include "rowflow/trainer.hpp"

namespace rowflow {

Dataset build_dataset(const DatasetConfig& cfg);

/* Validates the network and initializes parameters from the run seed. */
Model build_model(const NetworkSpec& net, std::uint64_t seed);

/* The run commands produce their whole report as a string, so identical
 * configurations yield identical bytes no matter where they are written. */

/* Per-epoch rows; with paired=true an unpruned twin trains on the same
 * seed and data order and its loss/accuracy columns sit alongside. */
std::string run_train_csv(const ExperimentConfig& cfg, bool paired);

/* Captures training batches, replays every conv step of every sample on
 * the simulated array in both modes, and reports per-step aggregates
 * plus totals and the sparse-vs-dense summary line. mode_filter is
 * "sparse", "dense", or "both" (summary line only with both). */
std::string run_simulate_csv(const ExperimentConfig& cfg, const std::string& mode_filter);

/* Lowered instruction listing for one layer step; gradient-to-activation
 * uses all-true masks. */
std::string run_dump_text(const ExperimentConfig& cfg, int layer, StepKind step);

} // namespace rowflow
