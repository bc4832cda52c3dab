#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "cosa/rng.hpp"
#include "cosa/tensor.hpp"

namespace cosa {

struct PerplexityParams {
    double xi = 0.5;           // current threshold
    double lambda_alpha = 0.8;
    double lambda_beta = 1.0;
};

// Log-argument clamp: the perplexity formula is singular exactly at the
// threshold, so the normalized distance is clamped to [kPerpDelta, 1].
inline constexpr double kPerpDelta = 1e-6;

double perplexity_value(double nu, const PerplexityParams& p);
double perplexity_max(const PerplexityParams& p);  // value at the clamp floor

// Per-pixel perplexity of a confidence map nu [N,H,W]. Ignored pixels get 0.
TensorF perplexity_map(const TensorF& nu, const PerplexityParams& p,
                       const std::vector<uint8_t>* ignore = nullptr);

// Reliability-based adaptive weights: w = |R| * P^-1 / sum(P^-1) over the
// non-ignored region R (mean-one normalization). `equation_literal` switches
// to the coefficient exactly as typeset, kept for comparison runs.
TensorF raw_weights(const TensorF& perplexity, const std::vector<uint8_t>* ignore = nullptr,
                    bool equation_literal = false);

struct GmmFit {
    double pi_fg = 0, mu_fg = 0, var_fg = 0;
    double pi_bg = 0, mu_bg = 0, var_bg = 0;
    bool valid = false;
};

inline constexpr double kVarFloor = 1e-6;

// Two-sided Gaussian log-likelihood of `samples` split at xi: each side gets
// its closed-form MLE Gaussian, pi = side proportion, every sample scored
// under its own side. Sides with < 2 samples yield -inf.
double gmm_split_likelihood(const std::vector<float>& samples, double xi, GmmFit* fit = nullptr);

struct ThresholdSearchConfig {
    double grid_lo = 0.10;
    double grid_hi = 0.90;
    double grid_step = 0.01;
    double smoothing = 0.9;    // xi_new = smoothing*xi_old + (1-smoothing)*xi_grid
    double warmup_xi = 0.5;
    int min_fill_batches = 10;
};

// Rolling confidence queue + current smoothed threshold.
class ThresholdState {
public:
    ThresholdState() = default;
    ThresholdState(int queue_len_batches, int subsample_per_batch, uint64_t seed);

    // Enqueues a uniform subsample of the batch confidences; values must lie
    // in [0,1]. Oldest batch evicted at capacity.
    void update_queue(const std::vector<float>& nu_batch);

    // Grid search maximizing gmm_split_likelihood, then EMA smoothing.
    // Below min fill returns the warm-up default without searching.
    double search(const ThresholdSearchConfig& cfg = {});

    double xi() const { return xi_; }
    void set_xi(double v) { xi_ = v; }
    const GmmFit& last_fit() const { return last_fit_; }
    double last_grid_xi() const { return last_grid_xi_; }
    int filled_batches() const { return static_cast<int>(queue_.size()); }
    std::vector<float> snapshot() const;

    // checkpoint round-trip
    std::string serialize() const;
    static ThresholdState deserialize(const std::string& blob);

private:
    int queue_len_ = 100;
    int subsample_ = 4096;
    RngStream rng_;
    std::deque<std::vector<float>> queue_;
    double xi_ = 0.5;
    double last_grid_xi_ = 0.5;
    GmmFit last_fit_;
};

}  // namespace cosa
