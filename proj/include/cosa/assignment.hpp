#pragma once

#include <vector>

#include "cosa/domain.hpp"
#include "cosa/tensor.hpp"

namespace cosa {

// Zeroes CAM channels of classes absent from the weak label. cam: [N,C,h,w].
TensorF filter_cam_by_weak_label(const TensorF& cam, const std::vector<WeakLabel>& weak);

// Sets segmentation logits of absent foreground classes to -inf; background
// channel 0 is never filtered. seg: [N,C+1,h,w].
TensorF filter_seg_by_weak_label(const TensorF& seg, const std::vector<WeakLabel>& weak);

struct CplResult {
    LabelMap labels;  // {0..C}, plus kIgnoreLabel where `ignore` was set
    TensorF nu;       // [N,h,w] max filtered activation per pixel
};

// Eq.-2 hard pseudo-label: label = argmax+1 where max activation >= xi, else
// background. Argmax ties break toward the lowest class index. Pixels flagged
// in `ignore` come out as kIgnoreLabel with nu = 0.
CplResult make_cpl(const TensorF& cam_filtered, double xi,
                   const std::vector<uint8_t>* ignore = nullptr);

// Eq.-7 soft pseudo-label: weak-label filter then per-pixel softmax of
// logits/tau. Absent classes keep exactly zero probability.
TensorF make_spl(const TensorF& seg_logits, const std::vector<WeakLabel>& weak, double tau);

}  // namespace cosa
