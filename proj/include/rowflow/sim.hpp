#pragma once

#include <vector>

#include "rowflow/lower.hpp"
#include "rowflow/network.hpp"
#include "rowflow/tensor.hpp"
#include "rowflow/trainer.hpp"

namespace rowflow {

/* Event cost table in pJ per event. The absolute numbers are uncalibrated
 * placeholders; only ratios between runs of the same build are meaningful. */
struct EnergyCosts {
    double buffer_read = 6.0;
    double buffer_write = 6.0;
    double mac = 1.0;
    double reg_access = 0.2;
    double ppu_op = 0.5;
};

struct ArchConfig {
    int n_groups = 56;
    int pes_per_group = 3;
    long long buffer_bytes = 386LL * 1024;
    int bytes_per_value = 2;
    int bandwidth_bytes_per_cycle = 16;
    EnergyCosts costs;
};

struct EventTally {
    long long buffer_read = 0;
    long long buffer_write = 0;
    long long reg_access = 0;
    long long mac = 0;
    long long ppu_op = 0;

    EventTally& operator+=(const EventTally& o) {
        buffer_read += o.buffer_read;
        buffer_write += o.buffer_write;
        reg_access += o.reg_access;
        mac += o.mac;
        ppu_op += o.ppu_op;
        return *this;
    }
};

double energy_pj(const EventTally& t, const EnergyCosts& c);

/* Sparse uses the compressed-stream dataflow: zero operands are never
 * streamed, scatter operands contributing nothing are skipped, and
 * compression writes only nonzeros. Dense disables all of it (every
 * logical position is streamed and charged) while computing the same
 * functional result, so the two modes are directly comparable. */
enum class SimMode { Sparse, Dense };

enum class StepKind { Forward, Gta, Gtw };

const char* step_name(StepKind k);
const char* mode_name(SimMode m);

/* One conv layer step for one sample. Pointers reference caller-owned
 * tensors; which are read depends on the kind:
 *   Forward  input + weights          -> produced output (+ masks)
 *   Gta      d_out + weights (+masks) -> produced input gradient
 *   Gtw      input + d_out            -> d_weights
 * The prune fields bind the post-processing stage on the Gta output; tau
 * of zero leaves the stream untouched and draws nothing, matching the
 * trainer's warm-up behaviour. prune_batch addresses the batch the
 * streams were captured from (the trainer's counter at capture time). */
struct StepInput {
    StepKind kind = StepKind::Forward;
    int layer = 0;
    const LayerSpec* spec = nullptr;
    Shape3 in_shape;
    Shape3 out_shape;
    const DenseTensor3* input = nullptr;
    const DenseTensor3* d_out = nullptr;
    const KernelTensor4* weights = nullptr;
    const std::vector<BitMask>* gta_masks = nullptr; // [c * in_shape.h + u]
    bool relu_after = false;

    double prune_tau = 0.0;
    const Pruner* pruner = nullptr;
    long long prune_batch = 0;
    int prune_sample = 0;
};

struct LayerStepResult {
    DenseTensor3 produced;          // Forward: post-processed output; Gta: input gradient
    KernelTensor4 d_weights;        // Gtw only
    std::vector<BitMask> out_masks; // Forward with relu_after, [c * out.h + y]
    std::vector<double> channel_sums;     // Gta: per-channel sums before pruning
    std::vector<double> channel_abs_sums; // Gta: matching absolute sums

    long long cycles = 0;
    EventTally events;
    long long stream_nnz = 0;   // streamed-port density, summed per instruction use
    long long stream_total = 0;
    long long produced_nnz = 0;
    long long produced_total = 0;
};

/* Executes the lowered instructions of one step on the PE group array.
 *
 * Timing: instructions are dealt round-robin by queue position to the
 * PEs of their group; a group finishes at its slowest PE plus its
 * post-processing pass; the step finishes at the slowest group plus the
 * buffer transfer time for all bytes moved. Assignment is static, so
 * zeroing stream values never reorders work onto a slower path.
 *
 * Function: each destination row accumulates in queue order, stream
 * positions ascending, which reproduces the reference results bit for
 * bit; the assignment of instructions to PEs affects timing only.
 *
 * Throws CapacityError when the step's dense working set does not fit
 * the on-chip buffer. */
LayerStepResult simulate_layer_step(const StepInput& in, const ArchConfig& arch, SimMode mode);

} // namespace rowflow
