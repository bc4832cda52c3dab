#include "cosa/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cosa {

namespace {
void check_params(const PerplexityParams& p) {
    if (!(p.lambda_alpha > 0.0 && p.lambda_alpha <= 1.0))
        throw std::invalid_argument("perplexity: lambda_alpha must be in (0,1]");
    if (!(p.lambda_beta > 0.0)) throw std::invalid_argument("perplexity: lambda_beta must be > 0");
    if (!(p.xi > 0.0 && p.xi < 1.0)) throw std::invalid_argument("perplexity: xi must be in (0,1)");
}
}  // namespace

double perplexity_value(double nu, const PerplexityParams& p) {
    const double d_raw = nu >= p.xi ? (nu - p.xi) / (1.0 - p.xi) : (p.xi - nu) / p.xi;
    const double d = std::clamp(d_raw, kPerpDelta, 1.0);
    const double v = std::pow(-std::log(p.lambda_alpha * d), p.lambda_beta);
    return std::clamp(v, 0.0, perplexity_max(p));
}

double perplexity_max(const PerplexityParams& p) {
    return std::pow(-std::log(p.lambda_alpha * kPerpDelta), p.lambda_beta);
}

TensorF perplexity_map(const TensorF& nu, const PerplexityParams& p,
                       const std::vector<uint8_t>* ignore) {
    check_params(p);
    TensorF out = TensorF::zeros(nu.shape());
    for (int64_t i = 0; i < nu.numel(); ++i) {
        if (ignore && (*ignore)[static_cast<size_t>(i)]) continue;
        out.data()[i] = static_cast<float>(perplexity_value(nu.data()[i], p));
    }
    return out;
}

TensorF raw_weights(const TensorF& perplexity, const std::vector<uint8_t>* ignore,
                    bool equation_literal) {
    double inv_sum = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < perplexity.numel(); ++i) {
        if (ignore && (*ignore)[static_cast<size_t>(i)]) continue;
        const double p = perplexity.data()[i];
        if (!(p > 0.0) || !std::isfinite(p))
            throw std::invalid_argument("raw_weights: perplexity must be finite and > 0 on R");
        inv_sum += 1.0 / p;
        ++count;
    }
    if (count == 0) throw std::invalid_argument("raw_weights: empty region R");

    TensorF out = TensorF::zeros(perplexity.shape());
    if (!equation_literal) {
        // prose reading: normalized reciprocal perplexity, mean 1 over R
        for (int64_t i = 0; i < perplexity.numel(); ++i) {
            if (ignore && (*ignore)[static_cast<size_t>(i)]) continue;
            out.data()[i] =
                static_cast<float>(static_cast<double>(count) / (perplexity.data()[i] * inv_sum));
        }
    } else {
        // coefficient exactly as typeset: |R| / sum_ij (P_ij * P_xy)^-1
        for (int64_t i = 0; i < perplexity.numel(); ++i) {
            if (ignore && (*ignore)[static_cast<size_t>(i)]) continue;
            out.data()[i] =
                static_cast<float>(static_cast<double>(count) * perplexity.data()[i] / inv_sum);
        }
    }
    return out;
}

double gmm_split_likelihood(const std::vector<float>& samples, double xi, GmmFit* fit) {
    double sum_lo = 0, sum2_lo = 0, sum_hi = 0, sum2_hi = 0;
    int64_t n_lo = 0, n_hi = 0;
    for (float v : samples) {
        if (v >= xi) {
            sum_hi += v;
            sum2_hi += static_cast<double>(v) * v;
            ++n_hi;
        } else {
            sum_lo += v;
            sum2_lo += static_cast<double>(v) * v;
            ++n_lo;
        }
    }
    if (fit) *fit = GmmFit{};
    if (n_lo < 2 || n_hi < 2) return -std::numeric_limits<double>::infinity();

    const double n = static_cast<double>(samples.size());
    const double mu_hi = sum_hi / n_hi;
    const double mu_lo = sum_lo / n_lo;
    const double var_hi = std::max(sum2_hi / n_hi - mu_hi * mu_hi, kVarFloor);
    const double var_lo = std::max(sum2_lo / n_lo - mu_lo * mu_lo, kVarFloor);
    const double pi_hi = n_hi / n;
    const double pi_lo = n_lo / n;

    // sum over samples of log(pi_side * N(x | mu_side, var_side)); sums of
    // squared deviations reduce to the closed form n_side*var_side.
    auto side_ll = [](int64_t cnt, double pi, double var) {
        return cnt * (std::log(pi) - 0.5 * std::log(2.0 * M_PI * var)) - 0.5 * cnt;
    };
    const double ll = side_ll(n_hi, pi_hi, var_hi) + side_ll(n_lo, pi_lo, var_lo);

    if (fit) {
        fit->pi_fg = pi_hi;
        fit->mu_fg = mu_hi;
        fit->var_fg = var_hi;
        fit->pi_bg = pi_lo;
        fit->mu_bg = mu_lo;
        fit->var_bg = var_lo;
        fit->valid = true;
    }
    return ll;
}

ThresholdState::ThresholdState(int queue_len_batches, int subsample_per_batch, uint64_t seed)
    : queue_len_(queue_len_batches), subsample_(subsample_per_batch), rng_(seed) {}

void ThresholdState::update_queue(const std::vector<float>& nu_batch) {
    for (float v : nu_batch)
        if (!(v >= 0.0f && v <= 1.0f))
            throw std::invalid_argument("update_queue: confidence outside [0,1]");
    std::vector<float> kept;
    if (static_cast<int>(nu_batch.size()) <= subsample_) {
        kept = nu_batch;
    } else {
        kept.reserve(static_cast<size_t>(subsample_));
        for (int i = 0; i < subsample_; ++i) {
            const int64_t j = rng_.uniform_int(0, static_cast<int64_t>(nu_batch.size()) - 1);
            kept.push_back(nu_batch[static_cast<size_t>(j)]);
        }
    }
    queue_.push_back(std::move(kept));
    while (static_cast<int>(queue_.size()) > queue_len_) queue_.pop_front();
}

std::vector<float> ThresholdState::snapshot() const {
    std::vector<float> all;
    for (const auto& b : queue_) all.insert(all.end(), b.begin(), b.end());
    return all;
}

double ThresholdState::search(const ThresholdSearchConfig& cfg) {
    if (filled_batches() < cfg.min_fill_batches) {
        xi_ = cfg.warmup_xi;
        last_grid_xi_ = cfg.warmup_xi;
        return xi_;
    }
    const std::vector<float> samples = snapshot();
    double best_ll = -std::numeric_limits<double>::infinity();
    double best_xi = last_grid_xi_;
    GmmFit best_fit;
    const int steps = static_cast<int>(std::round((cfg.grid_hi - cfg.grid_lo) / cfg.grid_step));
    for (int i = 0; i <= steps; ++i) {
        const double xi = cfg.grid_lo + i * cfg.grid_step;
        GmmFit fit;
        const double ll = gmm_split_likelihood(samples, xi, &fit);
        if (ll > best_ll) {
            best_ll = ll;
            best_xi = xi;
            best_fit = fit;
        }
    }
    if (std::isfinite(best_ll)) {
        last_grid_xi_ = best_xi;
        last_fit_ = best_fit;
        xi_ = cfg.smoothing * xi_ + (1.0 - cfg.smoothing) * best_xi;
    }
    // all candidates -inf: keep previous xi_
    return xi_;
}

std::string ThresholdState::serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << queue_len_ << ' ' << subsample_ << ' ' << xi_ << ' ' << last_grid_xi_ << '\n';
    os << rng_.save_state() << '\n';  // mt19937_64 words, one line
    os << queue_.size() << '\n';
    for (const auto& b : queue_) {
        os << b.size();
        for (float v : b) os << ' ' << v;
        os << '\n';
    }
    return os.str();
}

ThresholdState ThresholdState::deserialize(const std::string& blob) {
    std::istringstream is(blob);
    ThresholdState st;
    is >> st.queue_len_ >> st.subsample_ >> st.xi_ >> st.last_grid_xi_;
    is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    std::string rng_line;
    std::getline(is, rng_line);
    st.rng_.load_state(rng_line);
    size_t nbatches = 0;
    is >> nbatches;
    for (size_t i = 0; i < nbatches; ++i) {
        size_t len = 0;
        is >> len;
        std::vector<float> b(len);
        for (auto& v : b) is >> v;
        st.queue_.push_back(std::move(b));
    }
    if (!is) throw std::runtime_error("ThresholdState::deserialize: malformed blob");
    return st;
}

}  // namespace cosa
