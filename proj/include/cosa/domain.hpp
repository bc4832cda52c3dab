#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cosa/tensor.hpp"

namespace cosa {

// Label conventions used across the codebase: background is always index 0,
// foreground class c occupies label c+1, and 255 marks ignored (padded)
// pixels that every spatial loss and metric must skip.
inline constexpr int32_t kIgnoreLabel = 255;

struct WeakLabel {
    std::vector<uint8_t> onehot;  // length C, foreground classes only

    int num_present() const {
        int n = 0;
        for (uint8_t v : onehot) n += v ? 1 : 0;
        return n;
    }
    bool valid() const { return num_present() >= 1; }
};

// Integer label map: values in {0..C} plus kIgnoreLabel.
struct LabelMap {
    int64_t n = 0, h = 0, w = 0;
    std::vector<int32_t> v;

    static LabelMap zeros(int64_t n, int64_t h, int64_t w) {
        LabelMap m;
        m.n = n;
        m.h = h;
        m.w = w;
        m.v.assign(static_cast<size_t>(n * h * w), 0);
        return m;
    }
    int32_t& at(int64_t i, int64_t y, int64_t x) { return v[(i * h + y) * w + x]; }
    int32_t at(int64_t i, int64_t y, int64_t x) const { return v[(i * h + y) * w + x]; }
};

enum class LayerTag { final_layer, early_layer };

struct ModelSpec {
    std::string kind = "tiny_conv";  // tiny_conv | tiny_vit
    int depth = 4;
    int width = 64;
    int early_tap_index = 2;
    int stride = 8;
};

struct DatasetSpec {
    std::string root;           // VOC-style directory
    std::string train_split = "train";
    std::string val_split = "val";
    int num_classes = 3;
};

struct LossWeights {
    double c2s = 0.1;
    double s2c = 0.05;
    double csc = 0.1;
};

struct Config {
    double lambda_alpha = 0.8;
    double lambda_beta = 1.0;
    double epsilon_perp = 1.0;
    double tau = 0.01;
    double tau_csc = 0.01;
    LossWeights loss_weights;
    double momentum = 0.9994;
    int queue_len = 100;           // batches
    int queue_min_fill = 10;       // batches before threshold search engages
    int queue_subsample = 4096;    // confidence values kept per batch
    double lr = 6e-5;
    double lr_power = 0.9;
    double weight_decay = 1e-2;
    int total_iters = 5000;
    int warmup_iters = 500;
    int batch_size = 8;
    int crop = 64;
    std::vector<double> scales = {0.5, 1.0};
    uint64_t seed = 0;
    int checkpoint_every = 1000;
    int anchor_cap = 256;
    int pair_cap = 128;
    bool raw_equation_literal = false;  // Eq.-literal RAW coefficient variant
    bool ns_resample = false;           // oracle NS: redraw noise every step
    std::string eval_branch = "an";     // an | on
    DatasetSpec dataset;
    ModelSpec model;
    std::vector<int> coexist_classes;  // classes scored by C-mIoU
};

struct ConfigError {
    std::string field;
    std::string reason;
};

// Parses, fills defaults, and checks every Config invariant. Unknown keys are
// rejected. Returns either the normalized config or the full violation list.
struct ValidationResult {
    std::optional<Config> config;
    std::vector<ConfigError> errors;
    bool ok() const { return config.has_value(); }
};

ValidationResult validate_config_json(const std::string& json_text);
ValidationResult validate_config(const Config& cfg);
std::string config_to_json(const Config& cfg);
std::string config_hash(const Config& cfg);
Config load_config_file(const std::string& path);  // throws on invalid

// ---- pure invariant predicates ---------------------------------------------

// ActivationMap: all entries in [0,1].
bool activation_in_unit_range(const TensorF& m, float tol = 0.0f);
// SoftPseudoMask: per-pixel channel sums are 1 within tol.
bool row_stochastic(const TensorF& probs, float tol = 1e-5f);
// HardPseudoMask labels only reference present classes.
bool labels_respect_weak(const LabelMap& m, const std::vector<WeakLabel>& weak);
// Absent-class channels carry zero mass/activation.
bool absent_channels_zero(const TensorF& m, const std::vector<WeakLabel>& weak, float tol,
                          bool has_background_channel);

}  // namespace cosa
