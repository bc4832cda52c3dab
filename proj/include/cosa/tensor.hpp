#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace cosa {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

template <typename S>
struct TensorImpl;

// Reverse-mode autodiff tensor. Value semantics on the handle, shared storage
// underneath. Ops record a backward closure only when some parent requires
// grad, so graphs built from frozen parameters (the assignment network) cost
// nothing and cannot leak gradients.
template <typename S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<S>>();
        t.impl_->shape = std::move(shape);
        t.impl_->val.assign(shape_numel(t.impl_->shape), S(0));
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.impl_->val.begin(), t.impl_->val.end(), v);
        return t;
    }

    static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<S>>();
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from: shape/data size mismatch");
        t.impl_->shape = std::move(shape);
        t.impl_->val = std::move(data);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->val.size()); }

    S* data() { return impl_->val.data(); }
    const S* data() const { return impl_->val.data(); }
    std::vector<S>& values() { return impl_->val; }
    const std::vector<S>& values() const { return impl_->val; }

    S item() const {
        if (numel() != 1) throw std::logic_error("item() on non-scalar");
        return impl_->val[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    std::vector<S>& grad() {
        ensure_grad();
        return impl_->grad;
    }
    const std::vector<S>& grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }

    void ensure_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->val.size(), S(0));
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
    }

    // Shares value storage, drops graph and grad tracking.
    Tensor detach() const {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<S>>();
        t.impl_->shape = impl_->shape;
        t.impl_->val = impl_->val;  // copy: detached views outlive training-step graphs
        t.impl_->requires_grad = false;
        return t;
    }

    Tensor clone_values() const { return detach(); }

    // Backprop from a scalar root. Seeds d(root)/d(root)=1 and walks the graph
    // in reverse topological order, accumulating into leaf .grad buffers.
    void backward() {
        if (numel() != 1) throw std::logic_error("backward() requires scalar root");
        if (!impl_->requires_grad) throw std::logic_error("backward() on non-grad tensor");
        std::vector<TensorImpl<S>*> order;
        std::unordered_set<TensorImpl<S>*> seen;
        topo(impl_.get(), seen, order);
        ensure_grad();
        impl_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorImpl<S>* node = *it;
            if (!node->backfn) continue;
            if (node->grad.empty()) node->grad.assign(node->val.size(), S(0));
            node->backfn(*node);
        }
    }

    TensorImpl<S>* unsafe_impl() const { return impl_.get(); }

    // Graph-building constructor used by every op.
    static Tensor make_op(Shape shape, std::vector<S> val, std::vector<Tensor> parents,
                          std::function<void(TensorImpl<S>&)> backfn) {
        bool rg = false;
        for (const auto& p : parents) rg = rg || p.requires_grad();
        Tensor t = from(std::move(shape), std::move(val), rg);
        if (rg) {
            t.impl_->parents = std::move(parents);
            t.impl_->backfn = std::move(backfn);
        }
        return t;
    }

private:
    static void topo(TensorImpl<S>* node, std::unordered_set<TensorImpl<S>*>& seen,
                     std::vector<TensorImpl<S>*>& order) {
        // iterative DFS; graphs from long loss chains overflow recursion
        struct Frame {
            TensorImpl<S>* n;
            size_t next_parent;
        };
        std::vector<Frame> stack;
        if (seen.count(node)) return;
        seen.insert(node);
        stack.push_back({node, 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.n->parents.size()) {
                TensorImpl<S>* p = f.n->parents[f.next_parent++].unsafe_impl();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorImpl<S>> impl_;
};

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> val;
    std::vector<S> grad;
    bool requires_grad = false;
    std::vector<Tensor<S>> parents;
    std::function<void(TensorImpl<S>&)> backfn;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---- elementwise ops -------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    std::vector<S> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto ai = a.unsafe_impl();
    auto bi = b.unsafe_impl();
    return Tensor<S>::make_op(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl<S>& self) {
        if (ai->requires_grad) {
            if (ai->grad.empty()) ai->grad.assign(ai->val.size(), S(0));
            for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
        }
        if (bi->requires_grad) {
            if (bi->grad.empty()) bi->grad.assign(bi->val.size(), S(0));
            for (size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i];
        }
    });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    std::vector<S> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto ai = a.unsafe_impl();
    auto bi = b.unsafe_impl();
    return Tensor<S>::make_op(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl<S>& self) {
        if (ai->requires_grad) {
            if (ai->grad.empty()) ai->grad.assign(ai->val.size(), S(0));
            for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * bi->val[i];
        }
        if (bi->requires_grad) {
            if (bi->grad.empty()) bi->grad.assign(bi->val.size(), S(0));
            for (size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i] * ai->val[i];
        }
    });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
    std::vector<S> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * k;
    auto ai = a.unsafe_impl();
    return Tensor<S>::make_op(a.shape(), std::move(out), {a}, [ai, k](TensorImpl<S>& self) {
        if (ai->grad.empty()) ai->grad.assign(ai->val.size(), S(0));
        for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * k;
    });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    std::vector<S> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
    auto ai = a.unsafe_impl();
    return Tensor<S>::make_op(a.shape(), std::move(out), {a}, [ai](TensorImpl<S>& self) {
        if (ai->grad.empty()) ai->grad.assign(ai->val.size(), S(0));
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (ai->val[i] > S(0)) ai->grad[i] += self.grad[i];
    });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    std::vector<S> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = S(1) / (S(1) + std::exp(-a.data()[i]));
    auto ai = a.unsafe_impl();
    return Tensor<S>::make_op(a.shape(), std::move(out), {a}, [ai](TensorImpl<S>& self) {
        if (ai->grad.empty()) ai->grad.assign(ai->val.size(), S(0));
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const S y = self.val[i];
            ai->grad[i] += self.grad[i] * y * (S(1) - y);
        }
    });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
    S acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    auto ai = a.unsafe_impl();
    return Tensor<S>::make_op({1}, {acc}, {a}, [ai](TensorImpl<S>& self) {
        if (ai->grad.empty()) ai->grad.assign(ai->val.size(), S(0));
        for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += self.grad[0];
    });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
    const S inv = S(1) / static_cast<S>(a.numel());
    S acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    acc *= inv;
    auto ai = a.unsafe_impl();
    return Tensor<S>::make_op({1}, {acc}, {a}, [ai, inv](TensorImpl<S>& self) {
        if (ai->grad.empty()) ai->grad.assign(ai->val.size(), S(0));
        for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += self.grad[0] * inv;
    });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) throw std::invalid_argument("reshape: numel mismatch");
    std::vector<S> out(a.data(), a.data() + a.numel());
    auto ai = a.unsafe_impl();
    return Tensor<S>::make_op(std::move(shape), std::move(out), {a}, [ai](TensorImpl<S>& self) {
        if (ai->grad.empty()) ai->grad.assign(ai->val.size(), S(0));
        for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
    });
}

// Weighted sum of scalars: the Eq.-11 style combiner.
template <typename S>
Tensor<S> weighted_sum(const std::vector<Tensor<S>>& parts, const std::vector<S>& lambdas) {
    if (parts.size() != lambdas.size()) throw std::invalid_argument("weighted_sum: size mismatch");
    S acc = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].numel() != 1) throw std::invalid_argument("weighted_sum: non-scalar part");
        acc += lambdas[i] * parts[i].item();
    }
    std::vector<Tensor<S>> parents = parts;
    std::vector<TensorImpl<S>*> impls;
    impls.reserve(parts.size());
    for (auto& p : parts) impls.push_back(p.unsafe_impl());
    auto ls = lambdas;
    return Tensor<S>::make_op({1}, {acc}, std::move(parents), [impls, ls](TensorImpl<S>& self) {
        for (size_t i = 0; i < impls.size(); ++i) {
            if (!impls[i]->requires_grad) continue;
            if (impls[i]->grad.empty()) impls[i]->grad.assign(1, S(0));
            impls[i]->grad[0] += self.grad[0] * ls[i];
        }
    });
}

}  // namespace cosa
