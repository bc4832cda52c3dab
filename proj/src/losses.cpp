#include "cosa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cosa {

namespace {

template <typename S>
void ensure_grad_buf(TensorImpl<S>* p) {
    if (p->grad.empty()) p->grad.assign(p->val.size(), S(0));
}

// numerically stable pieces shared by the BCE losses
template <typename S>
S bce_with_logit(S z, S t) {
    return std::max(z, S(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
}

template <typename S>
S sigmoid_s(S z) {
    return S(1) / (S(1) + std::exp(-z));
}

}  // namespace

template <typename S>
Tensor<S> cls_loss(const Tensor<S>& logits, const std::vector<float>& targets) {
    const auto& sh = logits.shape();
    if (sh.size() != 2) throw std::invalid_argument("cls_loss: logits must be [N,C]");
    const int64_t n = sh[0], c = sh[1];
    if (targets.size() != static_cast<size_t>(n * c))
        throw std::invalid_argument("cls_loss: target size mismatch");
    for (int64_t i = 0; i < logits.numel(); ++i)
        if (!std::isfinite(logits.data()[i]))
            throw std::invalid_argument("cls_loss: non-finite logit");

    const S inv = S(1) / static_cast<S>(n * c);
    S acc = 0;
    for (int64_t i = 0; i < n * c; ++i)
        acc += bce_with_logit(logits.data()[i], static_cast<S>(targets[i]));
    acc *= inv;

    auto li = logits.unsafe_impl();
    auto tgt = std::make_shared<std::vector<float>>(targets);
    return Tensor<S>::make_op({1}, {acc}, {logits}, [li, tgt, inv, n, c](TensorImpl<S>& self) {
        ensure_grad_buf(li);
        const S g = self.grad[0] * inv;
        for (int64_t i = 0; i < n * c; ++i)
            li->grad[i] += g * (sigmoid_s(li->val[i]) - static_cast<S>((*tgt)[i]));
    });
}

template <typename S>
Tensor<S> c2s_loss(const Tensor<S>& seg_logits, const LabelMap& cpl,
                   const std::vector<float>& weights) {
    const auto& sh = seg_logits.shape();
    const int64_t n = sh[0], k = sh[1], h = sh[2], w = sh[3], hw = h * w;
    if (cpl.n != n || cpl.h != h || cpl.w != w)
        throw std::invalid_argument("c2s_loss: label map shape mismatch");
    if (weights.size() != static_cast<size_t>(n * hw))
        throw std::invalid_argument("c2s_loss: weight size mismatch");

    // per-pixel log-softmax CE, weighted, averaged over scored pixels
    int64_t scored = 0;
    S acc = 0;
    std::vector<S> logprob(static_cast<size_t>(n * k * hw));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t p = 0; p < hw; ++p) {
            S mx = seg_logits.data()[(i * k) * hw + p];
            for (int64_t j = 1; j < k; ++j)
                mx = std::max(mx, seg_logits.data()[(i * k + j) * hw + p]);
            S denom = 0;
            for (int64_t j = 0; j < k; ++j)
                denom += std::exp(seg_logits.data()[(i * k + j) * hw + p] - mx);
            const S logz = std::log(denom) + mx;
            for (int64_t j = 0; j < k; ++j)
                logprob[(i * k + j) * hw + p] = seg_logits.data()[(i * k + j) * hw + p] - logz;

            const int32_t lab = cpl.v[i * hw + p];
            if (lab == kIgnoreLabel) continue;
            if (lab < 0 || lab >= k) throw std::invalid_argument("c2s_loss: label out of range");
            ++scored;
            acc -= static_cast<S>(weights[static_cast<size_t>(i * hw + p)]) *
                   logprob[(i * k + lab) * hw + p];
        }
    }
    if (scored == 0) throw std::invalid_argument("c2s_loss: all pixels ignored");
    const S inv = S(1) / static_cast<S>(scored);
    acc *= inv;

    auto si = seg_logits.unsafe_impl();
    auto labs = std::make_shared<std::vector<int32_t>>(cpl.v);
    auto ws = std::make_shared<std::vector<float>>(weights);
    auto lp = std::make_shared<std::vector<S>>(std::move(logprob));
    return Tensor<S>::make_op(
        {1}, {acc}, {seg_logits}, [=](TensorImpl<S>& self) {
            ensure_grad_buf(si);
            const S g = self.grad[0] * inv;
            for (int64_t i = 0; i < n; ++i)
                for (int64_t p = 0; p < hw; ++p) {
                    const int32_t lab = (*labs)[i * hw + p];
                    if (lab == kIgnoreLabel) continue;
                    const S gw = g * static_cast<S>((*ws)[static_cast<size_t>(i * hw + p)]);
                    for (int64_t j = 0; j < k; ++j) {
                        const S soft = std::exp((*lp)[(i * k + j) * hw + p]);
                        si->grad[(i * k + j) * hw + p] +=
                            gw * (soft - (j == lab ? S(1) : S(0)));
                    }
                }
        });
}

template <typename S>
Tensor<S> s2c_loss(const Tensor<S>& cam_raw, const std::vector<float>& spl,
                   const std::vector<uint8_t>* ignore) {
    const auto& sh = cam_raw.shape();
    const int64_t n = sh[0], c = sh[1], h = sh[2], w = sh[3], hw = h * w;
    if (spl.size() != static_cast<size_t>(n * (c + 1) * hw))
        throw std::invalid_argument("s2c_loss: SPL must have C+1 channels");

    int64_t scored = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < hw; ++p)
            if (!(ignore && (*ignore)[static_cast<size_t>(i * hw + p)])) ++scored;
    if (scored == 0) throw std::invalid_argument("s2c_loss: all pixels ignored");
    const S inv = S(1) / static_cast<S>(c * scored);

    S acc = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < hw; ++p) {
            if (ignore && (*ignore)[static_cast<size_t>(i * hw + p)]) continue;
            for (int64_t k = 0; k < c; ++k) {
                const S z = cam_raw.data()[(i * c + k) * hw + p];
                const S t = static_cast<S>(spl[((i * (c + 1)) + k + 1) * hw + p]);
                acc += bce_with_logit(z, t);
            }
        }
    acc *= inv;

    auto mi = cam_raw.unsafe_impl();
    auto tgt = std::make_shared<std::vector<float>>(spl);
    auto ign = std::make_shared<std::vector<uint8_t>>(
        ignore ? *ignore : std::vector<uint8_t>(static_cast<size_t>(n * hw), 0));
    return Tensor<S>::make_op({1}, {acc}, {cam_raw}, [=](TensorImpl<S>& self) {
        ensure_grad_buf(mi);
        const S g = self.grad[0] * inv;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t p = 0; p < hw; ++p) {
                if ((*ign)[static_cast<size_t>(i * hw + p)]) continue;
                for (int64_t k = 0; k < c; ++k) {
                    const S z = mi->val[(i * c + k) * hw + p];
                    const S t = static_cast<S>((*tgt)[((i * (c + 1)) + k + 1) * hw + p]);
                    mi->grad[(i * c + k) * hw + p] += g * (sigmoid_s(z) - t);
                }
            }
    });
}

ContrastRegions contrastive_regions(const TensorF& perp_early, const LabelMap& cpl_early,
                                    double epsilon, int anchor_cap, int pair_cap, RngStream& rng) {
    const auto& sh = perp_early.shape();
    const int64_t n = sh[0], h = sh[1], w = sh[2], hw = h * w;
    if (cpl_early.n != n || cpl_early.h != h || cpl_early.w != w)
        throw std::invalid_argument("contrastive_regions: shape mismatch");

    ContrastRegions out;
    out.h = h;
    out.w = w;

    // Omega per sample, bucketed by CPL label
    struct OmegaPix {
        int32_t idx;
        int32_t label;
    };
    std::vector<std::vector<OmegaPix>> omega(static_cast<size_t>(n));
    std::vector<std::pair<int32_t, int32_t>> all;  // (sample, idx)
    for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < hw; ++p) {
            const int32_t lab = cpl_early.v[i * hw + p];
            if (lab == kIgnoreLabel) continue;
            if (perp_early.data()[i * hw + p] <= static_cast<float>(epsilon)) {
                omega[static_cast<size_t>(i)].push_back(
                    {static_cast<int32_t>(p), lab});
                all.emplace_back(static_cast<int32_t>(i), static_cast<int32_t>(p));
            }
        }
    if (all.empty()) return out;

    // uniform anchor subsample: partial Fisher-Yates
    const size_t n_anchor = std::min<size_t>(all.size(), static_cast<size_t>(anchor_cap));
    for (size_t i = 0; i < n_anchor; ++i) {
        const size_t j =
            i + static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(all.size() - i) - 1));
        std::swap(all[i], all[j]);
    }
    all.resize(n_anchor);

    auto subsample = [&](std::vector<int32_t>& v) {
        if (static_cast<int>(v.size()) <= pair_cap) return;
        for (int i = 0; i < pair_cap; ++i) {
            const size_t j = static_cast<size_t>(i) +
                             static_cast<size_t>(rng.uniform_int(
                                 0, static_cast<int64_t>(v.size()) - i - 1));
            std::swap(v[static_cast<size_t>(i)], v[j]);
        }
        v.resize(static_cast<size_t>(pair_cap));
    };

    for (const auto& [si, pi] : all) {
        const int32_t lab = cpl_early.v[si * hw + pi];
        std::vector<int32_t> pos;
        std::vector<int32_t> neg;
        for (const auto& q : omega[static_cast<size_t>(si)]) {
            if (q.idx == pi) continue;
            if (q.label == lab)
                pos.push_back(q.idx);
            else
                neg.push_back(q.idx);
        }
        subsample(pos);
        subsample(neg);
        out.anchors.push_back(pi);
        out.anchor_sample.push_back(si);
        out.positives.push_back(std::move(pos));
        out.negatives.push_back(std::move(neg));
    }
    return out;
}

template <typename S>
Tensor<S> csc_loss(const Tensor<S>& cam, const ContrastRegions& regions, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("csc_loss: tau must be > 0");
    const auto& sh = cam.shape();
    const int64_t c = sh[1], hw = sh[2] * sh[3];
    if (sh[2] != regions.h || sh[3] != regions.w)
        throw std::invalid_argument("csc_loss: CAM/regions grid mismatch");

    struct AnchorWork {
        int64_t base;                 // offset of the sample's CAM block
        int32_t a;                    // anchor pixel
        std::vector<int32_t> pos, neg;
        std::vector<S> q;             // s(a,x)/tau per positive
        std::vector<S> r;             // s(a,m)/tau per negative
        S lse_r = 0;                  // logsumexp of r
    };

    auto cos_sim = [&](const S* v, int64_t base, int32_t pa, int32_t pb) -> S {
        S dot = 0, na = 0, nb = 0;
        for (int64_t k = 0; k < c; ++k) {
            const S x = v[base + k * hw + pa];
            const S y = v[base + k * hw + pb];
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        const S denom = std::sqrt(na) * std::sqrt(nb);
        return denom > S(1e-12) ? dot / denom : S(0);
    };

    auto work = std::make_shared<std::vector<AnchorWork>>();
    const S* v = cam.data();
    S acc = 0;
    int64_t used = 0;
    for (size_t a = 0; a < regions.anchors.size(); ++a) {
        if (regions.positives[a].empty() || regions.negatives[a].empty()) continue;
        AnchorWork wk;
        wk.base = static_cast<int64_t>(regions.anchor_sample[a]) * c * hw;
        wk.a = regions.anchors[a];
        wk.pos = regions.positives[a];
        wk.neg = regions.negatives[a];
        S mx = -std::numeric_limits<S>::infinity();
        for (int32_t m : wk.neg) {
            const S r = cos_sim(v, wk.base, wk.a, m) / static_cast<S>(tau);
            wk.r.push_back(r);
            mx = std::max(mx, r);
        }
        S z = 0;
        for (S r : wk.r) z += std::exp(r - mx);
        wk.lse_r = mx + std::log(z);
        S local = 0;
        for (int32_t x : wk.pos) {
            const S q = cos_sim(v, wk.base, wk.a, x) / static_cast<S>(tau);
            wk.q.push_back(q);
            // -log(e^q / (e^q + sum e^r)) = softplus(lse_r - q), stable at any tau
            const S t = wk.lse_r - q;
            local += t > S(30) ? t : std::log1p(std::exp(t));
        }
        acc += local / static_cast<S>(wk.pos.size());
        ++used;
        work->push_back(std::move(wk));
    }
    if (used == 0) return Tensor<S>::scalar(S(0), cam.requires_grad());
    const S inv_omega = S(1) / static_cast<S>(used);
    acc *= inv_omega;

    auto mi = cam.unsafe_impl();
    return Tensor<S>::make_op({1}, {acc}, {cam}, [=](TensorImpl<S>& self) {
        ensure_grad_buf(mi);
        const S* val = mi->val.data();
        S* grad = mi->grad.data();
        const S g0 = self.grad[0] * inv_omega;
        const S inv_tau = S(1) / static_cast<S>(tau);

        // d cos(u,v)/du = v/(|u||v|) - cos * u/|u|^2, accumulated scaled by gs
        auto add_cos_grad = [&](int64_t base, int32_t pa, int32_t pb, S gs) {
            S dot = 0, na2 = 0, nb2 = 0;
            for (int64_t k = 0; k < c; ++k) {
                const S x = val[base + k * hw + pa];
                const S y = val[base + k * hw + pb];
                dot += x * y;
                na2 += x * x;
                nb2 += y * y;
            }
            const S na = std::sqrt(na2), nb = std::sqrt(nb2);
            if (!(na * nb > S(1e-12))) return;
            const S inv_ab = S(1) / (na * nb);
            const S cs = dot * inv_ab;
            for (int64_t k = 0; k < c; ++k) {
                const S x = val[base + k * hw + pa];
                const S y = val[base + k * hw + pb];
                grad[base + k * hw + pa] += gs * (y * inv_ab - cs * x / na2);
                grad[base + k * hw + pb] += gs * (x * inv_ab - cs * y / nb2);
            }
        };

        for (const auto& wk : *work) {
            const S ca = g0 / static_cast<S>(wk.pos.size());
            S beta = 0;  // sum over positives of sigmoid(lse_r - q)
            for (size_t x = 0; x < wk.pos.size(); ++x) {
                const S sg = sigmoid_s(wk.lse_r - wk.q[x]);
                beta += sg;
                add_cos_grad(wk.base, wk.a, wk.pos[x], -ca * sg * inv_tau);
            }
            for (size_t m = 0; m < wk.neg.size(); ++m) {
                const S sm = std::exp(wk.r[m] - wk.lse_r);
                add_cos_grad(wk.base, wk.a, wk.neg[m], ca * beta * sm * inv_tau);
            }
        }
    });
}

template <typename S>
Tensor<S> total_loss(const Tensor<S>& l_cls, const Tensor<S>& l_cls_early, const Tensor<S>& l_c2s,
                     const Tensor<S>& l_c2s_early, const Tensor<S>& l_s2c, const Tensor<S>& l_csc,
                     const LossWeights& w, bool warmup) {
    const std::vector<Tensor<S>> parts = {l_cls, l_cls_early, l_c2s, l_c2s_early, l_s2c, l_csc};
    for (const auto& p : parts)
        if (!std::isfinite(p.item())) throw std::runtime_error("total_loss: non-finite component");
    const S zc2s = warmup ? S(0) : static_cast<S>(w.c2s);
    const S zs2c = warmup ? S(0) : static_cast<S>(w.s2c);
    const S zcsc = warmup ? S(0) : static_cast<S>(w.csc);
    return weighted_sum<S>(parts, {S(1), S(1), zc2s, zc2s, zs2c, zcsc});
}

// explicit instantiations: float for training, double for gradient checks
template Tensor<float> cls_loss<float>(const Tensor<float>&, const std::vector<float>&);
template Tensor<double> cls_loss<double>(const Tensor<double>&, const std::vector<float>&);
template Tensor<float> c2s_loss<float>(const Tensor<float>&, const LabelMap&,
                                       const std::vector<float>&);
template Tensor<double> c2s_loss<double>(const Tensor<double>&, const LabelMap&,
                                         const std::vector<float>&);
template Tensor<float> s2c_loss<float>(const Tensor<float>&, const std::vector<float>&,
                                       const std::vector<uint8_t>*);
template Tensor<double> s2c_loss<double>(const Tensor<double>&, const std::vector<float>&,
                                         const std::vector<uint8_t>*);
template Tensor<float> csc_loss<float>(const Tensor<float>&, const ContrastRegions&, double);
template Tensor<double> csc_loss<double>(const Tensor<double>&, const ContrastRegions&, double);
template Tensor<float> total_loss<float>(const Tensor<float>&, const Tensor<float>&,
                                         const Tensor<float>&, const Tensor<float>&,
                                         const Tensor<float>&, const Tensor<float>&,
                                         const LossWeights&, bool);
template Tensor<double> total_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                           const Tensor<double>&, const Tensor<double>&,
                                           const Tensor<double>&, const Tensor<double>&,
                                           const LossWeights&, bool);

}  // namespace cosa
