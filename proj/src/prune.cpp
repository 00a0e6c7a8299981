#include "rowflow/prune.hpp"

#include <cmath>
#include <cstdio>

namespace rowflow {

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double inverse_normal_cdf(double u) {
    if (!(u > 0.0 && u < 1.0))
        throw ConfigError("inverse_normal_cdf requires u in (0,1), got " + std::to_string(u));

    static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                -2.759285104469687e+02, 1.383577518672690e+02,
                                -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};

    const double p_low = 0.02425;
    double x;
    if (u < p_low) {
        double q = std::sqrt(-2.0 * std::log(u));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (u <= 1.0 - p_low) {
        double q = u - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - u));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // One Halley step against the exact CDF tightens the tails to ~1e-15.
    double e = normal_cdf(x) - u;
    double v = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - v / (1.0 + x * v / 2.0);
    return x;
}

double estimate_sigma(double abs_sum, long long n) {
    if (n <= 0) throw ConfigError("estimate_sigma: sample count must be positive");
    return std::sqrt(M_PI / 2.0) * abs_sum / static_cast<double>(n);
}

double determine_threshold(double sigma_hat, double p) {
    if (!(p >= 0.0 && p < 1.0))
        throw ConfigError("prune fraction p must lie in [0,1), got " + std::to_string(p));
    if (sigma_hat < 0.0)
        throw ConfigError("sigma estimate must be non-negative");
    if (p == 0.0 || sigma_hat == 0.0) return 0.0;
    return inverse_normal_cdf((1.0 + p) / 2.0) * sigma_hat;
}

double stochastic_prune_value(double g, double tau, Rng& rng) {
    const double mag = g < 0 ? -g : g;
    if (mag >= tau) return g;
    const double r = rng.next_unit();
    if (mag > tau * r) return g > 0 ? tau : -tau;
    return 0.0;
}

std::vector<double> stochastic_prune(std::span<const double> g, double tau, Rng& rng) {
    std::vector<double> out;
    out.reserve(g.size());
    for (double v : g) out.push_back(stochastic_prune_value(v, tau, rng));
    return out;
}

void PruneConfig::validate(long long n_batches) const {
    if (!(p >= 0.0 && p < 1.0))
        throw ConfigError("prune fraction p must lie in [0,1), got " + std::to_string(p));
    if (fifo_depth < 1) throw ConfigError("predictor FIFO depth must be >= 1");
    if (n_batches > 0 && fifo_depth > n_batches / 10) {
        std::fprintf(stderr,
                     "warning: FIFO depth %d exceeds a tenth of the %lld scheduled batches; "
                     "most of the run will be threshold warm-up\n",
                     fifo_depth, n_batches);
    }
}

void ThresholdPredictor::end_batch(double p) {
    // A batch that streamed nothing (fully masked layer) determines tau = 0.
    const double tau =
        count_ == 0 ? 0.0 : determine_threshold(estimate_sigma(abs_sum_, count_), p);
    fifo_.push_back(tau);
    if (static_cast<int>(fifo_.size()) > depth_) fifo_.erase(fifo_.begin());
    abs_sum_ = 0.0;
    count_ = 0;
}

} // namespace rowflow
