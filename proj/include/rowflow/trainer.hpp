#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rowflow/network.hpp"
#include "rowflow/prune.hpp"
#include "rowflow/rng.hpp"
#include "rowflow/tensor.hpp"

namespace rowflow {

struct BnParams {
    std::vector<double> gamma, beta;
};

struct FcParams {
    int in = 0, out = 0;
    std::vector<double> w; // [out][in]
    std::vector<double> b; // [out]
};

/* Parameter store parallel to the layer list; only the slot matching each
 * layer's kind is populated. */
struct Params {
    std::vector<KernelTensor4> conv;
    std::vector<BnParams> bn;
    std::vector<FcParams> fc;
};

struct Model {
    NetworkSpec spec;
    std::vector<Shape3> shapes; // output shape of each layer
    Params params;

    /* Validates the network, allocates parameters and He-initializes the
     * weights from the given stream. */
    void build(std::uint64_t init_seed);
};

struct BnBatchStats {
    std::vector<double> mean, var, inv_std; // per channel
};

/* Everything the backward pass and the dataflow binding need from forward:
 * the activation entering every layer for every sample, ReLU masks by row,
 * pool routing and batchnorm batch statistics. acts[L] holds the logits. */
struct ForwardPass {
    int batch = 0;
    std::vector<std::vector<DenseTensor3>> acts;            // [layer 0..L][sample]
    std::vector<std::vector<std::vector<BitMask>>> relu_masks; // [layer][sample][c*h + y]
    std::vector<std::vector<std::vector<int>>> pool_argmax; // [layer][sample][flat out]
    std::vector<BnBatchStats> bn_stats;                     // [layer]

    const DenseTensor3& logits(int sample) const { return acts.back()[static_cast<std::size_t>(sample)]; }
};

ForwardPass forward(const Model& m, const std::vector<DenseTensor3>& batch);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> d_logits;
};

/* Softmax cross-entropy head. */
LossGrad softmax_ce(const DenseTensor3& logits, int label);

struct Grads {
    std::vector<KernelTensor4> conv; // dW, bias field = db
    std::vector<BnParams> bn;        // dgamma / dbeta
    std::vector<FcParams> fc;

    static Grads zeros_like(const Model& m);
};

/* Per-conv-layer, per-sample record of what the backward pass actually
 * streamed, for binding the dataflow simulator and for fidelity tests. */
struct StepCapture {
    DenseTensor3 d_out_arrived;  // gradient entering the conv, before its own pruning
    DenseTensor3 d_out_consumed; // what GTA/GTW actually used
    DenseTensor3 d_in_produced;  // gradient handed upstream (masked/pruned as applicable)
    double tau = 0.0;            // working threshold during this batch (0 = none)
};

struct BackwardCapture {
    std::vector<std::vector<StepCapture>> conv; // [layer][sample]
    ForwardPass fwd;    // activations and masks of the captured batch
    Params params;      // weights as they were when the batch ran
    long long batch = -1; // pruner batch counter at capture time
};

/* Streaming pruning state for one training run: one predictor per conv layer
 * that has a pruning structure, plus the batch counter that keys the per-row
 * RNG substreams shared with the simulator. */
class Pruner {
public:
    Pruner(const Model& m, PruneConfig cfg, std::uint64_t seed);

    bool active_for(int layer) const {
        return pred_[static_cast<std::size_t>(layer)].has_value();
    }
    std::optional<double> tau(int layer) const {
        const auto& p = pred_[static_cast<std::size_t>(layer)];
        if (!p) return std::nullopt;
        return p->predicted();
    }
    ThresholdPredictor& predictor(int layer) { return *pred_[static_cast<std::size_t>(layer)]; }

    /* One pass over a row: accumulate |g| into the layer's predictor and
     * prune in place when a threshold is live. Used by the trainer and by
     * the simulator's post-processing stage with identical substreams. */
    void process_row(int layer, int sample, int row_key, std::span<double> row);

    /* Same substream family, exposed so the simulator can reproduce it.
     * row_rng uses the current batch counter; the _at form addresses an
     * earlier batch when replaying captured streams. */
    Rng row_rng(int layer, int sample, int row_key) const;
    Rng row_rng_at(long long batch, int layer, int sample, int row_key) const;

    void end_batch();
    long long batch_index() const { return batch_; }
    double p() const { return cfg_.p; }

private:
    PruneConfig cfg_;
    std::uint64_t seed_;
    long long batch_ = 0;
    std::vector<std::optional<ThresholdPredictor>> pred_;
};

struct ConvLayerStats {
    long long consumed_nnz = 0;   // nonzeros of the consumed output gradient
    long long consumed_total = 0;
    long long produced_nnz = 0;   // nonzeros of the produced input gradient
    long long produced_total = 0;
};

struct BackwardResult {
    Grads grads; // summed over the batch; sgd_step divides by batch size
    std::vector<ConvLayerStats> conv_stats; // [layer]
};

/* Reverse pass over the batch. d_logits[s] must match the head's output
 * layout. The pruner (optional) is applied at the structure-dictated
 * positions; capture (optional) records per-sample conv streams. */
BackwardResult backward(const Model& m, const ForwardPass& fwd,
                        const std::vector<std::vector<double>>& d_logits, Pruner* pruner,
                        BackwardCapture* capture);

/* Vanilla SGD: w <- w - lr * (sum of gradients) / batch_size. */
void sgd_step(Model& m, const Grads& g, double lr, int batch_size);

struct Dataset {
    std::vector<DenseTensor3> images;
    std::vector<int> labels;
};

struct TrainSettings {
    double lr = 0.05;
    int batch_size = 10;
    std::uint64_t seed = 1;
    std::optional<PruneConfig> prune;
};

struct EpochLayerStats {
    bool prunable = false;
    double rho = 0.0;      // density of the consumed output gradient
    double tau = 0.0;      // last threshold determined this epoch
};

struct EpochResult {
    double mean_loss = 0.0;
    double accuracy = 0.0;
    std::vector<EpochLayerStats> per_layer; // [layer], conv entries meaningful
};

struct BatchStats {
    double loss_sum = 0.0;
    int correct = 0;
    std::vector<ConvLayerStats> conv_stats;
};

class Trainer {
public:
    Trainer(Model& m, const TrainSettings& s);

    /* Forward + backward + SGD on one batch; advances the pruner batch
     * counter. Capture, when given, is filled for the simulator. */
    BatchStats train_batch(const std::vector<DenseTensor3>& images,
                           const std::vector<int>& labels, BackwardCapture* capture = nullptr);

    EpochResult run_epoch(const Dataset& data);

    /* Deterministic per-epoch shuffle; exposed so paired runs can assert
     * they saw identical data order. */
    std::vector<int> next_epoch_order(int n);

    Model& model() { return model_; }
    Pruner* pruner() { return pruner_ ? &*pruner_ : nullptr; }
    double lr() const { return settings_.lr; }
    int batch_size() const { return settings_.batch_size; }

private:
    Model& model_;
    TrainSettings settings_;
    std::optional<Pruner> pruner_;
    Rng shuffle_rng_;
    int epoch_ = 0;
};

} // namespace rowflow
