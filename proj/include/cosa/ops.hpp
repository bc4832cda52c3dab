#pragma once

#include <Eigen/Dense>

#include "cosa/tensor.hpp"

namespace cosa {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowMap = Eigen::Map<RowMat<S>>;
template <typename S>
using CRowMap = Eigen::Map<const RowMat<S>>;

namespace detail {

template <typename S>
inline void ensure(TensorImpl<S>* p) {
    if (p->grad.empty()) p->grad.assign(p->val.size(), S(0));
}

// im2col for one sample: out is [Cin*kh*kw, Ho*Wo] row-major.
template <typename S>
void im2col(const S* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t dil, int64_t ho, int64_t wo, S* col) {
    for (int64_t c = 0; c < cin; ++c) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                S* row = col + ((c * kh + ki) * kw + kj) * ho * wo;
                for (int64_t oi = 0; oi < ho; ++oi) {
                    const int64_t ii = oi * stride - pad + ki * dil;
                    if (ii < 0 || ii >= h) {
                        std::fill(row + oi * wo, row + (oi + 1) * wo, S(0));
                        continue;
                    }
                    const S* src = x + (c * h + ii) * w;
                    for (int64_t oj = 0; oj < wo; ++oj) {
                        const int64_t jj = oj * stride - pad + kj * dil;
                        row[oi * wo + oj] = (jj >= 0 && jj < w) ? src[jj] : S(0);
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im_acc(const S* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t dil, int64_t ho, int64_t wo, S* dx) {
    for (int64_t c = 0; c < cin; ++c) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                const S* row = col + ((c * kh + ki) * kw + kj) * ho * wo;
                for (int64_t oi = 0; oi < ho; ++oi) {
                    const int64_t ii = oi * stride - pad + ki * dil;
                    if (ii < 0 || ii >= h) continue;
                    S* dst = dx + (c * h + ii) * w;
                    for (int64_t oj = 0; oj < wo; ++oj) {
                        const int64_t jj = oj * stride - pad + kj * dil;
                        if (jj >= 0 && jj < w) dst[jj] += row[oi * wo + oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// conv2d: x [N,Cin,H,W], w [Cout,Cin,kh,kw], optional bias [Cout].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 int64_t stride, int64_t pad, int64_t dil = 1) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: rank");
    if (xs[1] != ws[1]) throw std::invalid_argument("conv2d: channel mismatch");
    const int64_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
    const int64_t cout = ws[0], kh = ws[2], kw = ws[3];
    const int64_t ho = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
    const int64_t wo = (wd + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
    const int64_t k = cin * kh * kw, hw = ho * wo;

    std::vector<S> out(static_cast<size_t>(n * cout * hw));
    std::vector<S> col(static_cast<size_t>(k * hw));
    CRowMap<S> wm(w.data(), cout, k);
    const bool with_bias = bias.defined();
    for (int64_t i = 0; i < n; ++i) {
        detail::im2col(x.data() + i * cin * h * wd, cin, h, wd, kh, kw, stride, pad, dil, ho, wo,
                       col.data());
        CRowMap<S> cm(col.data(), k, hw);
        RowMap<S> om(out.data() + i * cout * hw, cout, hw);
        om.noalias() = wm * cm;
        if (with_bias)
            for (int64_t c = 0; c < cout; ++c) om.row(c).array() += bias.data()[c];
    }

    auto xi = x.unsafe_impl();
    auto wi = w.unsafe_impl();
    auto bi = with_bias ? bias.unsafe_impl() : nullptr;
    std::vector<Tensor<S>> parents = {x, w};
    if (with_bias) parents.push_back(bias);
    auto back = [=](TensorImpl<S>& self) {
        std::vector<S> colb(static_cast<size_t>(k * hw));
        std::vector<S> dcol(static_cast<size_t>(k * hw));
        CRowMap<S> wm2(wi->val.data(), cout, k);
        if (wi->requires_grad) detail::ensure(wi);
        if (xi->requires_grad) detail::ensure(xi);
        if (bi && bi->requires_grad) detail::ensure(bi);
        for (int64_t i = 0; i < n; ++i) {
            CRowMap<S> dom(self.grad.data() + i * cout * hw, cout, hw);
            if (wi->requires_grad) {
                detail::im2col(xi->val.data() + i * cin * h * wd, cin, h, wd, kh, kw, stride, pad,
                               dil, ho, wo, colb.data());
                CRowMap<S> cm(colb.data(), k, hw);
                RowMap<S>(wi->grad.data(), cout, k).noalias() += dom * cm.transpose();
            }
            if (xi->requires_grad) {
                RowMap<S> dcm(dcol.data(), k, hw);
                dcm.noalias() = wm2.transpose() * dom;
                detail::col2im_acc(dcol.data(), cin, h, wd, kh, kw, stride, pad, dil, ho, wo,
                                   xi->grad.data() + i * cin * h * wd);
            }
            if (bi && bi->requires_grad)
                for (int64_t c = 0; c < cout; ++c) bi->grad[c] += dom.row(c).sum();
        }
    };
    return Tensor<S>::make_op({n, cout, ho, wo}, std::move(out), std::move(parents),
                              std::move(back));
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int64_t stride, int64_t pad,
                 int64_t dil = 1) {
    return conv2d(x, w, Tensor<S>(), stride, pad, dil);
}

// x [N,D] * w [C,D]^T -> [N,C]; bias-free so CAM and classifier share weights.
template <typename S>
Tensor<S> linear_nobias(const Tensor<S>& x, const Tensor<S>& w) {
    const int64_t n = x.shape()[0], d = x.shape()[1], c = w.shape()[0];
    if (w.shape()[1] != d) throw std::invalid_argument("linear_nobias: D mismatch");
    std::vector<S> out(static_cast<size_t>(n * c));
    CRowMap<S> xm(x.data(), n, d), wm(w.data(), c, d);
    RowMap<S>(out.data(), n, c).noalias() = xm * wm.transpose();
    auto xi = x.unsafe_impl();
    auto wi = w.unsafe_impl();
    return Tensor<S>::make_op({n, c}, std::move(out), {x, w}, [=](TensorImpl<S>& self) {
        CRowMap<S> dom(self.grad.data(), n, c);
        if (xi->requires_grad) {
            detail::ensure(xi);
            CRowMap<S> wm2(wi->val.data(), c, d);
            RowMap<S>(xi->grad.data(), n, d).noalias() += dom * wm2;
        }
        if (wi->requires_grad) {
            detail::ensure(wi);
            CRowMap<S> xm2(xi->val.data(), n, d);
            RowMap<S>(wi->grad.data(), c, d).noalias() += dom.transpose() * xm2;
        }
    });
}

// CAM projection: feat [N,D,h,w] x w [C,D] -> [N,C,h,w]. detach_* implements
// the stop-gradient ablation on either input.
template <typename S>
Tensor<S> cam_project(const Tensor<S>& feat, const Tensor<S>& w, bool detach_feat = false,
                      bool detach_weight = false) {
    const int64_t n = feat.shape()[0], d = feat.shape()[1], h = feat.shape()[2],
                  wd = feat.shape()[3];
    const int64_t c = w.shape()[0];
    if (w.shape()[1] != d) throw std::invalid_argument("cam_project: D mismatch");
    const int64_t hw = h * wd;
    std::vector<S> out(static_cast<size_t>(n * c * hw));
    CRowMap<S> wm(w.data(), c, d);
    for (int64_t i = 0; i < n; ++i) {
        CRowMap<S> fm(feat.data() + i * d * hw, d, hw);
        RowMap<S>(out.data() + i * c * hw, c, hw).noalias() = wm * fm;
    }
    auto fi = feat.unsafe_impl();
    auto wi = w.unsafe_impl();
    const bool fgrad = feat.requires_grad() && !detach_feat;
    const bool wgrad = w.requires_grad() && !detach_weight;
    std::vector<Tensor<S>> parents;
    if (fgrad) parents.push_back(feat);
    if (wgrad) parents.push_back(w);
    if (parents.empty()) return Tensor<S>::from({n, c, h, wd}, std::move(out));
    auto back = [=](TensorImpl<S>& self) {
        if (fgrad) detail::ensure(fi);
        if (wgrad) detail::ensure(wi);
        CRowMap<S> wm2(wi->val.data(), c, d);
        for (int64_t i = 0; i < n; ++i) {
            CRowMap<S> dom(self.grad.data() + i * c * hw, c, hw);
            if (fgrad)
                RowMap<S>(fi->grad.data() + i * d * hw, d, hw).noalias() += wm2.transpose() * dom;
            if (wgrad) {
                CRowMap<S> fm(fi->val.data() + i * d * hw, d, hw);
                RowMap<S>(wi->grad.data(), c, d).noalias() += dom * fm.transpose();
            }
        }
    };
    return Tensor<S>::make_op({n, c, h, wd}, std::move(out), std::move(parents), std::move(back));
}

// Global max pooling over spatial dims: [N,C,H,W] -> [N,C].
template <typename S>
Tensor<S> global_max_pool(const Tensor<S>& x) {
    const int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    std::vector<S> out(static_cast<size_t>(n * c));
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c));
    for (int64_t i = 0; i < n * c; ++i) {
        const S* p = x.data() + i * hw;
        int64_t best = 0;
        for (int64_t j = 1; j < hw; ++j)
            if (p[j] > p[best]) best = j;
        out[i] = p[best];
        (*argmax)[i] = best;
    }
    auto xi = x.unsafe_impl();
    return Tensor<S>::make_op({n, c}, std::move(out), {x}, [=](TensorImpl<S>& self) {
        detail::ensure(xi);
        for (int64_t i = 0; i < n * c; ++i) xi->grad[i * hw + (*argmax)[i]] += self.grad[i];
    });
}

// Non-overlapping average pooling, kernel k (spatial dims must divide by k).
template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, int64_t k) {
    const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    if (h % k || w % k) throw std::invalid_argument("avg_pool2d: size not divisible");
    const int64_t ho = h / k, wo = w / k;
    std::vector<S> out(static_cast<size_t>(n * c * ho * wo), S(0));
    const S inv = S(1) / static_cast<S>(k * k);
    for (int64_t ic = 0; ic < n * c; ++ic) {
        const S* src = x.data() + ic * h * w;
        S* dst = out.data() + ic * ho * wo;
        for (int64_t oi = 0; oi < ho; ++oi)
            for (int64_t oj = 0; oj < wo; ++oj) {
                S acc = 0;
                for (int64_t di = 0; di < k; ++di)
                    for (int64_t dj = 0; dj < k; ++dj) acc += src[(oi * k + di) * w + oj * k + dj];
                dst[oi * wo + oj] = acc * inv;
            }
    }
    auto xi = x.unsafe_impl();
    return Tensor<S>::make_op({n, c, ho, wo}, std::move(out), {x}, [=](TensorImpl<S>& self) {
        detail::ensure(xi);
        for (int64_t ic = 0; ic < n * c; ++ic) {
            const S* g = self.grad.data() + ic * ho * wo;
            S* dx = xi->grad.data() + ic * h * w;
            for (int64_t oi = 0; oi < ho; ++oi)
                for (int64_t oj = 0; oj < wo; ++oj) {
                    const S gv = g[oi * wo + oj] * inv;
                    for (int64_t di = 0; di < k; ++di)
                        for (int64_t dj = 0; dj < k; ++dj)
                            dx[(oi * k + di) * w + oj * k + dj] += gv;
                }
        }
    });
}

// Per-(sample,class) min-max normalization over spatial positions to [0,1].
// Constant maps (max==min) normalize to 0: no spatial contrast means no
// activation evidence.
template <typename S>
Tensor<S> minmax_norm_spatial(const Tensor<S>& x) {
    const int64_t nc = x.shape()[0] * x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    std::vector<S> out(x.numel());
    auto lohi = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(nc * 2));
    for (int64_t i = 0; i < nc; ++i) {
        const S* p = x.data() + i * hw;
        int64_t lo = 0, hi = 0;
        for (int64_t j = 1; j < hw; ++j) {
            if (p[j] < p[lo]) lo = j;
            if (p[j] > p[hi]) hi = j;
        }
        (*lohi)[2 * i] = lo;
        (*lohi)[2 * i + 1] = hi;
        const S range = p[hi] - p[lo];
        S* q = out.data() + i * hw;
        if (range <= S(0)) {
            std::fill(q, q + hw, S(0));
        } else {
            for (int64_t j = 0; j < hw; ++j) q[j] = (p[j] - p[lo]) / range;
        }
    }
    auto xi = x.unsafe_impl();
    return Tensor<S>::make_op(x.shape(), std::move(out), {x}, [=](TensorImpl<S>& self) {
        detail::ensure(xi);
        for (int64_t i = 0; i < nc; ++i) {
            const int64_t lo = (*lohi)[2 * i], hi = (*lohi)[2 * i + 1];
            const S* p = xi->val.data() + i * hw;
            const S range = p[hi] - p[lo];
            if (range <= S(0)) continue;  // constant map: zero everywhere, zero grad
            const S* g = self.grad.data() + i * hw;
            const S* y = self.val.data() + i * hw;
            S gsum = 0, gysum = 0;
            for (int64_t j = 0; j < hw; ++j) {
                gsum += g[j];
                gysum += g[j] * y[j];
            }
            S* dx = xi->grad.data() + i * hw;
            const S inv = S(1) / range;
            for (int64_t j = 0; j < hw; ++j) dx[j] += g[j] * inv;
            dx[lo] += (gysum - gsum) * inv;
            dx[hi] -= gysum * inv;
        }
    });
}

// ---- grad-free spatial resampling (assignment-side / eval only) ------------

// Bilinear resize of [C,H,W] planes, half-pixel centers.
template <typename S>
std::vector<S> resize_bilinear_chw(const S* src, int64_t c, int64_t h, int64_t w, int64_t ho,
                                   int64_t wo) {
    std::vector<S> dst(static_cast<size_t>(c * ho * wo));
    const double sy = static_cast<double>(h) / ho, sx = static_cast<double>(w) / wo;
    for (int64_t oi = 0; oi < ho; ++oi) {
        double fy = (oi + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const int64_t y0 = static_cast<int64_t>(fy);
        const int64_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int64_t oj = 0; oj < wo; ++oj) {
            double fx = (oj + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const int64_t x0 = static_cast<int64_t>(fx);
            const int64_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int64_t ch = 0; ch < c; ++ch) {
                const S* p = src + ch * h * w;
                const double v = (1 - wy) * ((1 - wx) * p[y0 * w + x0] + wx * p[y0 * w + x1]) +
                                 wy * ((1 - wx) * p[y1 * w + x0] + wx * p[y1 * w + x1]);
                dst[(ch * ho + oi) * wo + oj] = static_cast<S>(v);
            }
        }
    }
    return dst;
}

template <typename T>
std::vector<T> resize_nearest_hw(const T* src, int64_t h, int64_t w, int64_t ho, int64_t wo) {
    std::vector<T> dst(static_cast<size_t>(ho * wo));
    for (int64_t oi = 0; oi < ho; ++oi) {
        int64_t si = std::min<int64_t>(h - 1, oi * h / ho);
        for (int64_t oj = 0; oj < wo; ++oj) {
            int64_t sj = std::min<int64_t>(w - 1, oj * w / wo);
            dst[oi * wo + oj] = src[si * w + sj];
        }
    }
    return dst;
}

}  // namespace cosa
