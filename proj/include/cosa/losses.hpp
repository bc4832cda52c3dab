#pragma once

#include <cstdint>
#include <vector>

#include "cosa/domain.hpp"
#include "cosa/rng.hpp"
#include "cosa/tensor.hpp"

namespace cosa {

// Eq. 1: mean over batch and classes of sigmoid binary cross-entropy.
// logits [N,C], targets [N,C] in {0,1}.
template <typename S>
Tensor<S> cls_loss(const Tensor<S>& logits, const std::vector<float>& targets);

// Eq. 5 without the RAW coefficient baked in: per-pixel softmax cross-entropy
// of seg logits [N,K,h,w] against hard labels [N,h,w], scaled by the given
// per-pixel weights (mean-one over the scored region), averaged over pixels
// that are neither ignore-labeled nor weight-zeroed.
template <typename S>
Tensor<S> c2s_loss(const Tensor<S>& seg_logits, const LabelMap& cpl,
                   const std::vector<float>& weights);

// Eq. 8: soft-target BCE between sigmoid(cam_raw) and the SPL foreground
// channels. cam_raw [N,C,h,w] is the pre-normalization CAM response; spl is
// [N,C+1,h,w] (background channel 0 unused here). Ignored pixels skipped.
template <typename S>
Tensor<S> s2c_loss(const Tensor<S>& cam_raw, const std::vector<float>& spl,
                   const std::vector<uint8_t>* ignore = nullptr);

struct ContrastRegions {
    int64_t h = 0, w = 0;
    std::vector<int32_t> anchors;               // flat pixel index per sample slot
    std::vector<int32_t> anchor_sample;         // owning sample of each anchor
    std::vector<std::vector<int32_t>> positives;  // same-sample flat indices
    std::vector<std::vector<int32_t>> negatives;
};

// Eq. 9: the low-perplexity region Omega on the early assignment CAM defines
// anchors; same-CPL-label pixels are positives, different-label negatives.
// Anchors and pairs are uniformly subsampled to the caps.
ContrastRegions contrastive_regions(const TensorF& perp_early, const LabelMap& cpl_early,
                                    double epsilon, int anchor_cap, int pair_cap, RngStream& rng);

// Eq. 10: InfoNCE over pixel class-vectors of the online CAM [N,C,h,w] with
// cosine similarity and temperature tau. Anchors lacking positives or
// negatives are skipped; empty regions give a zero loss.
template <typename S>
Tensor<S> csc_loss(const Tensor<S>& cam, const ContrastRegions& regions, double tau);

// Eq. 11 weighted total. Warm-up forces the three lambdas to zero.
template <typename S>
Tensor<S> total_loss(const Tensor<S>& l_cls, const Tensor<S>& l_cls_early, const Tensor<S>& l_c2s,
                     const Tensor<S>& l_c2s_early, const Tensor<S>& l_s2c, const Tensor<S>& l_csc,
                     const LossWeights& w, bool warmup);

}  // namespace cosa
