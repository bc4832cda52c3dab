#include "cosa/assignment.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cosa {

TensorF filter_cam_by_weak_label(const TensorF& cam, const std::vector<WeakLabel>& weak) {
    const auto& s = cam.shape();
    const int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    if (weak.size() != static_cast<size_t>(n))
        throw std::invalid_argument("filter_cam: batch mismatch");
    TensorF out = cam.detach();
    for (int64_t i = 0; i < n; ++i) {
        if (static_cast<int64_t>(weak[i].onehot.size()) != c)
            throw std::invalid_argument("filter_cam: class count mismatch");
        for (int64_t k = 0; k < c; ++k) {
            if (weak[i].onehot[static_cast<size_t>(k)]) continue;
            float* p = out.data() + (i * c + k) * hw;
            std::fill(p, p + hw, 0.0f);
        }
    }
    return out;
}

TensorF filter_seg_by_weak_label(const TensorF& seg, const std::vector<WeakLabel>& weak) {
    const auto& s = seg.shape();
    const int64_t n = s[0], ch = s[1], hw = s[2] * s[3];
    if (weak.size() != static_cast<size_t>(n))
        throw std::invalid_argument("filter_seg: batch mismatch");
    TensorF out = seg.detach();
    const float ninf = -std::numeric_limits<float>::infinity();
    for (int64_t i = 0; i < n; ++i) {
        if (static_cast<int64_t>(weak[i].onehot.size()) != ch - 1)
            throw std::invalid_argument("filter_seg: class count mismatch");
        for (int64_t k = 1; k < ch; ++k) {
            if (weak[i].onehot[static_cast<size_t>(k - 1)]) continue;
            float* p = out.data() + (i * ch + k) * hw;
            std::fill(p, p + hw, ninf);
        }
    }
    return out;
}

CplResult make_cpl(const TensorF& cam_filtered, double xi, const std::vector<uint8_t>* ignore) {
    const auto& s = cam_filtered.shape();
    const int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    const int64_t hw = h * w;
    CplResult r;
    r.labels = LabelMap::zeros(n, h, w);
    r.nu = TensorF::zeros({n, h, w});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t p = 0; p < hw; ++p) {
            if (ignore && (*ignore)[static_cast<size_t>(i * hw + p)]) {
                r.labels.v[i * hw + p] = kIgnoreLabel;
                continue;
            }
            int64_t best = 0;
            float bestv = cam_filtered.data()[(i * c + 0) * hw + p];
            for (int64_t k = 1; k < c; ++k) {
                const float v = cam_filtered.data()[(i * c + k) * hw + p];
                if (v > bestv) {  // strict: ties keep the lowest class index
                    bestv = v;
                    best = k;
                }
            }
            r.nu.data()[i * hw + p] = bestv;
            r.labels.v[i * hw + p] = bestv >= static_cast<float>(xi)
                                         ? static_cast<int32_t>(best + 1)
                                         : 0;
        }
    }
    return r;
}

TensorF make_spl(const TensorF& seg_logits, const std::vector<WeakLabel>& weak, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("make_spl: tau must be > 0");
    TensorF filtered = filter_seg_by_weak_label(seg_logits, weak);
    const auto& s = filtered.shape();
    const int64_t n = s[0], ch = s[1], hw = s[2] * s[3];
    TensorF out = TensorF::zeros(s);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t p = 0; p < hw; ++p) {
            // max-shifted softmax over the scaled logits; -inf channels drop out
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t k = 0; k < ch; ++k) {
                const double z = filtered.data()[(i * ch + k) * hw + p] / tau;
                if (z > mx) mx = z;
            }
            double denom = 0;
            for (int64_t k = 0; k < ch; ++k) {
                const double z = filtered.data()[(i * ch + k) * hw + p] / tau;
                denom += std::isinf(z) ? 0.0 : std::exp(z - mx);
            }
            for (int64_t k = 0; k < ch; ++k) {
                const double z = filtered.data()[(i * ch + k) * hw + p] / tau;
                out.data()[(i * ch + k) * hw + p] =
                    std::isinf(z) ? 0.0f : static_cast<float>(std::exp(z - mx) / denom);
            }
        }
    }
    return out;
}

}  // namespace cosa
