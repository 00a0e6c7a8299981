#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "rowflow/errors.hpp"
#include "rowflow/rng.hpp"

namespace rowflow {

/* Standard normal quantile function on (0,1).
 *
 * Rational approximation (Acklam's coefficients, split at |u-1/2| <= 0.47575)
 * followed by one Halley refinement against erfc, giving absolute error well
 * below 1e-9 across the open interval. Unit tests validate against a
 * bisection oracle built on std::erfc.
 */
double inverse_normal_cdf(double u);

/* Standard normal CDF, shared by tests and quadrature oracles. */
double normal_cdf(double x);

/* Unbiased sigma estimate from the accumulated absolute sum A over n values:
 *   sigma_hat = sqrt(pi/2) * A / n
 * For zero-mean normals E|g| = sigma*sqrt(2/pi), so E[sigma_hat] = sigma.
 * n == 0 is an undefined input.
 */
double estimate_sigma(double abs_sum, long long n);

/* Threshold magnitude below which a fraction p of a N(0, sigma_hat^2)
 * population falls: tau = Phi^-1((1+p)/2) * sigma_hat. Requires p in [0,1)
 * and sigma_hat >= 0; p = 0 gives tau = 0 (pruning disabled).
 */
double determine_threshold(double sigma_hat, double p);

/* Stochastic pruning of a single value with threshold tau:
 *   |g| >= tau -> g unchanged (boundary kept)
 *   else draw r ~ U[0,1):  |g| > tau*r -> sign(g)*tau, otherwise 0
 * Unbiased: E[out] = g. tau = 0 is the identity and draws nothing.
 * A draw is consumed for every value with |g| < tau, zeros included, so
 * substream positions stay aligned between producer and consumer.
 */
double stochastic_prune_value(double g, double tau, Rng& rng);

/* Whole-sequence form; returns the pruned copy. */
std::vector<double> stochastic_prune(std::span<const double> g, double tau, Rng& rng);

struct PruneConfig {
    double p = 0.0;    // target fraction of gradients below the threshold
    int fifo_depth = 1;

    /* n_batches is the total number of batches the run will execute; a FIFO
     * deeper than a tenth of that spends most of the run warming up, which
     * gets a stderr warning (not an error). */
    void validate(long long n_batches) const;
};

/* Per-layer threshold predictor.
 *
 * Keeps a FIFO of the last `depth` determined thresholds; the working
 * threshold is their mean, defined only once the FIFO has filled. Until then
 * gradients pass through unpruned (warm-up). A and n always accumulate the
 * pre-pruning magnitudes, pruned or not. Each batch ends with: determine tau
 * from A/n, push it (evicting the oldest once full), reset A and n.
 *
 * process() touches each gradient exactly once: accumulate, then prune or
 * pass. That single-pass shape is load-bearing for the streaming hardware
 * model and is asserted by an access-counting test.
 */
class ThresholdPredictor {
public:
    explicit ThresholdPredictor(int depth) : depth_(depth) {
        if (depth < 1) throw ConfigError("predictor FIFO depth must be >= 1");
    }

    std::optional<double> predicted() const {
        if (static_cast<int>(fifo_.size()) < depth_) return std::nullopt;
        double s = 0.0;
        for (double t : fifo_) s += t;
        return s / static_cast<double>(depth_);
    }

    double process(double g, Rng& rng) {
        abs_sum_ += g < 0 ? -g : g;
        ++count_;
        auto tau = predicted();
        if (!tau) return g;
        return stochastic_prune_value(g, *tau, rng);
    }

    /* Accumulate only (used when a batch is observed but pruning output is
     * discarded, e.g. dense-mode instrumentation). */
    void observe(double g) {
        abs_sum_ += g < 0 ? -g : g;
        ++count_;
    }

    void end_batch(double p);

    double abs_sum() const { return abs_sum_; }
    long long count() const { return count_; }
    int depth() const { return depth_; }
    std::span<const double> fifo() const { return {fifo_.data(), fifo_.size()}; }

private:
    int depth_;
    std::vector<double> fifo_; // oldest first
    double abs_sum_ = 0.0;
    long long count_ = 0;
};

/* One whole-batch predictor step over a gradient sequence: stream every value
 * through process(), then close the batch. Generic over the container so an
 * access-counting wrapper can certify the single-pass contract.
 */
template <typename Seq>
std::vector<double> predictor_step(ThresholdPredictor& pred, const Seq& gradients, double p,
                                   Rng& rng) {
    std::vector<double> out;
    out.reserve(gradients.size());
    for (std::size_t idx = 0; idx < gradients.size(); ++idx)
        out.push_back(pred.process(gradients[idx], rng));
    pred.end_batch(p);
    return out;
}

} // namespace rowflow
