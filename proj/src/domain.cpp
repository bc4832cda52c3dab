#include "cosa/domain.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cosa {

using nlohmann::json;

namespace {

const std::set<std::string> kTopKeys = {
    "lambda_alpha",  "lambda_beta",     "epsilon_perp",  "tau",
    "tau_csc",       "loss_weights",    "momentum",      "queue_len",
    "queue_min_fill", "queue_subsample", "lr",            "lr_power",
    "weight_decay",  "total_iters",     "warmup_iters",  "batch_size",
    "crop",          "scales",          "seed",          "checkpoint_every",
    "anchor_cap",    "pair_cap",        "raw_equation_literal", "ns_resample",
    "eval_branch",   "dataset",         "model",         "coexist_classes"};

void check(std::vector<ConfigError>& errs, bool ok, const std::string& field,
           const std::string& reason) {
    if (!ok) errs.push_back({field, reason});
}

}  // namespace

ValidationResult validate_config(const Config& cfg) {
    std::vector<ConfigError> errs;
    check(errs, cfg.momentum >= 0.0 && cfg.momentum < 1.0, "momentum",
          cfg.momentum == 1.0 ? "degenerate EMA: m=1 freezes the assignment network and "
                                "collapses co-training"
                              : "must be in [0,1)");
    check(errs, cfg.lambda_alpha > 0.0 && cfg.lambda_alpha <= 1.0, "lambda_alpha",
          cfg.lambda_alpha <= 0.0 ? "log argument degenerate: lambda_alpha must be > 0"
                                  : "must be in (0,1]");
    check(errs, cfg.lambda_beta > 0.0, "lambda_beta", "must be > 0");
    check(errs, cfg.tau > 0.0, "tau", "must be > 0");
    check(errs, cfg.tau_csc > 0.0, "tau_csc", "must be > 0");
    check(errs, cfg.epsilon_perp > 0.0, "epsilon_perp", "must be > 0");
    check(errs, cfg.loss_weights.c2s >= 0.0, "loss_weights.c2s", "must be >= 0");
    check(errs, cfg.loss_weights.s2c >= 0.0, "loss_weights.s2c", "must be >= 0");
    check(errs, cfg.loss_weights.csc >= 0.0, "loss_weights.csc", "must be >= 0");
    check(errs, cfg.queue_len >= 1, "queue_len", "must be >= 1");
    check(errs, cfg.queue_min_fill >= 1, "queue_min_fill", "must be >= 1");
    check(errs, cfg.queue_subsample >= 1, "queue_subsample", "must be >= 1");
    check(errs, cfg.lr > 0.0, "lr", "must be > 0");
    check(errs, cfg.lr_power > 0.0, "lr_power", "must be > 0");
    check(errs, cfg.weight_decay >= 0.0, "weight_decay", "must be >= 0");
    check(errs, cfg.total_iters >= 1, "total_iters", "must be >= 1");
    check(errs, cfg.warmup_iters >= 0 && cfg.warmup_iters <= cfg.total_iters, "warmup_iters",
          "must be in [0, total_iters]");
    check(errs, cfg.batch_size >= 1, "batch_size", "must be >= 1");
    check(errs, cfg.crop >= cfg.model.stride && cfg.crop % cfg.model.stride == 0, "crop",
          "must be a positive multiple of model.stride");
    check(errs, !cfg.scales.empty(), "scales", "must be nonempty");
    for (double s : cfg.scales) check(errs, s > 0.0, "scales", "scale factors must be > 0");
    check(errs, cfg.anchor_cap >= 1, "anchor_cap", "must be >= 1");
    check(errs, cfg.pair_cap >= 1, "pair_cap", "must be >= 1");
    check(errs, cfg.eval_branch == "an" || cfg.eval_branch == "on", "eval_branch",
          "must be 'an' or 'on'");
    check(errs, cfg.dataset.num_classes >= 1, "dataset.num_classes", "must be >= 1");
    check(errs, cfg.model.kind == "tiny_conv" || cfg.model.kind == "tiny_vit", "model.kind",
          "must be tiny_conv or tiny_vit");
    check(errs, cfg.model.depth >= 2, "model.depth", "must be >= 2");
    check(errs, cfg.model.width >= 4 && cfg.model.width % 2 == 0, "model.width",
          "must be an even value >= 4");
    check(errs,
          cfg.model.early_tap_index > 0 && cfg.model.early_tap_index < cfg.model.depth,
          "model.early_tap_index", "must satisfy 0 < early_tap_index < depth");
    check(errs, cfg.model.stride >= 1, "model.stride", "must be >= 1");
    for (int c : cfg.coexist_classes)
        check(errs, c >= 0 && c < cfg.dataset.num_classes, "coexist_classes",
              "class index out of range");
    if (!errs.empty()) return {std::nullopt, errs};
    return {cfg, {}};
}

ValidationResult validate_config_json(const std::string& json_text) {
    std::vector<ConfigError> errs;
    json j;
    try {
        j = json::parse(json_text);
    } catch (const std::exception& e) {
        return {std::nullopt, {{"<root>", std::string("JSON parse error: ") + e.what()}}};
    }
    if (!j.is_object()) return {std::nullopt, {{"<root>", "config must be a JSON object"}}};

    for (auto it = j.begin(); it != j.end(); ++it)
        if (!kTopKeys.count(it.key())) errs.push_back({it.key(), "unknown key"});

    Config cfg;
    try {
        if (j.contains("lambda_alpha")) cfg.lambda_alpha = j["lambda_alpha"].get<double>();
        if (j.contains("lambda_beta")) cfg.lambda_beta = j["lambda_beta"].get<double>();
        if (j.contains("epsilon_perp")) cfg.epsilon_perp = j["epsilon_perp"].get<double>();
        if (j.contains("tau")) cfg.tau = j["tau"].get<double>();
        if (j.contains("tau_csc")) cfg.tau_csc = j["tau_csc"].get<double>();
        if (j.contains("loss_weights")) {
            const auto& lw = j["loss_weights"];
            for (auto it = lw.begin(); it != lw.end(); ++it)
                if (it.key() != "c2s" && it.key() != "s2c" && it.key() != "csc")
                    errs.push_back({"loss_weights." + it.key(), "unknown key"});
            if (lw.contains("c2s")) cfg.loss_weights.c2s = lw["c2s"].get<double>();
            if (lw.contains("s2c")) cfg.loss_weights.s2c = lw["s2c"].get<double>();
            if (lw.contains("csc")) cfg.loss_weights.csc = lw["csc"].get<double>();
        }
        if (j.contains("momentum")) cfg.momentum = j["momentum"].get<double>();
        if (j.contains("queue_len")) cfg.queue_len = j["queue_len"].get<int>();
        if (j.contains("queue_min_fill")) cfg.queue_min_fill = j["queue_min_fill"].get<int>();
        if (j.contains("queue_subsample")) cfg.queue_subsample = j["queue_subsample"].get<int>();
        if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
        if (j.contains("lr_power")) cfg.lr_power = j["lr_power"].get<double>();
        if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"].get<double>();
        if (j.contains("total_iters")) cfg.total_iters = j["total_iters"].get<int>();
        if (j.contains("warmup_iters")) cfg.warmup_iters = j["warmup_iters"].get<int>();
        if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
        if (j.contains("crop")) cfg.crop = j["crop"].get<int>();
        if (j.contains("scales")) cfg.scales = j["scales"].get<std::vector<double>>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
        if (j.contains("checkpoint_every"))
            cfg.checkpoint_every = j["checkpoint_every"].get<int>();
        if (j.contains("anchor_cap")) cfg.anchor_cap = j["anchor_cap"].get<int>();
        if (j.contains("pair_cap")) cfg.pair_cap = j["pair_cap"].get<int>();
        if (j.contains("raw_equation_literal"))
            cfg.raw_equation_literal = j["raw_equation_literal"].get<bool>();
        if (j.contains("ns_resample")) cfg.ns_resample = j["ns_resample"].get<bool>();
        if (j.contains("eval_branch")) cfg.eval_branch = j["eval_branch"].get<std::string>();
        if (j.contains("dataset")) {
            const auto& d = j["dataset"];
            for (auto it = d.begin(); it != d.end(); ++it)
                if (it.key() != "root" && it.key() != "train_split" && it.key() != "val_split" &&
                    it.key() != "num_classes")
                    errs.push_back({"dataset." + it.key(), "unknown key"});
            if (d.contains("root")) cfg.dataset.root = d["root"].get<std::string>();
            if (d.contains("train_split"))
                cfg.dataset.train_split = d["train_split"].get<std::string>();
            if (d.contains("val_split")) cfg.dataset.val_split = d["val_split"].get<std::string>();
            if (d.contains("num_classes")) cfg.dataset.num_classes = d["num_classes"].get<int>();
        }
        if (j.contains("model")) {
            const auto& m = j["model"];
            for (auto it = m.begin(); it != m.end(); ++it)
                if (it.key() != "kind" && it.key() != "depth" && it.key() != "width" &&
                    it.key() != "early_tap_index" && it.key() != "stride")
                    errs.push_back({"model." + it.key(), "unknown key"});
            if (m.contains("kind")) cfg.model.kind = m["kind"].get<std::string>();
            if (m.contains("depth")) cfg.model.depth = m["depth"].get<int>();
            if (m.contains("width")) cfg.model.width = m["width"].get<int>();
            if (m.contains("early_tap_index"))
                cfg.model.early_tap_index = m["early_tap_index"].get<int>();
            if (m.contains("stride")) cfg.model.stride = m["stride"].get<int>();
        }
        if (j.contains("coexist_classes"))
            cfg.coexist_classes = j["coexist_classes"].get<std::vector<int>>();
    } catch (const std::exception& e) {
        errs.push_back({"<parse>", e.what()});
    }
    if (!errs.empty()) return {std::nullopt, errs};
    return validate_config(cfg);
}

std::string config_to_json(const Config& cfg) {
    json j;
    j["lambda_alpha"] = cfg.lambda_alpha;
    j["lambda_beta"] = cfg.lambda_beta;
    j["epsilon_perp"] = cfg.epsilon_perp;
    j["tau"] = cfg.tau;
    j["tau_csc"] = cfg.tau_csc;
    j["loss_weights"] = {{"c2s", cfg.loss_weights.c2s},
                         {"s2c", cfg.loss_weights.s2c},
                         {"csc", cfg.loss_weights.csc}};
    j["momentum"] = cfg.momentum;
    j["queue_len"] = cfg.queue_len;
    j["queue_min_fill"] = cfg.queue_min_fill;
    j["queue_subsample"] = cfg.queue_subsample;
    j["lr"] = cfg.lr;
    j["lr_power"] = cfg.lr_power;
    j["weight_decay"] = cfg.weight_decay;
    j["total_iters"] = cfg.total_iters;
    j["warmup_iters"] = cfg.warmup_iters;
    j["batch_size"] = cfg.batch_size;
    j["crop"] = cfg.crop;
    j["scales"] = cfg.scales;
    j["seed"] = cfg.seed;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["anchor_cap"] = cfg.anchor_cap;
    j["pair_cap"] = cfg.pair_cap;
    j["raw_equation_literal"] = cfg.raw_equation_literal;
    j["ns_resample"] = cfg.ns_resample;
    j["eval_branch"] = cfg.eval_branch;
    j["dataset"] = {{"root", cfg.dataset.root},
                    {"train_split", cfg.dataset.train_split},
                    {"val_split", cfg.dataset.val_split},
                    {"num_classes", cfg.dataset.num_classes}};
    j["model"] = {{"kind", cfg.model.kind},
                  {"depth", cfg.model.depth},
                  {"width", cfg.model.width},
                  {"early_tap_index", cfg.model.early_tap_index},
                  {"stride", cfg.model.stride}};
    j["coexist_classes"] = cfg.coexist_classes;
    return j.dump(2);
}

std::string config_hash(const Config& cfg) {
    // FNV-1a over the normalized serialization
    const std::string s = config_to_json(cfg);
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto res = validate_config_json(ss.str());
    if (!res.ok()) {
        std::ostringstream os;
        os << "invalid config " << path << ":";
        for (const auto& e : res.errors) os << "\n  " << e.field << ": " << e.reason;
        throw std::runtime_error(os.str());
    }
    return *res.config;
}

bool activation_in_unit_range(const TensorF& m, float tol) {
    for (int64_t i = 0; i < m.numel(); ++i)
        if (!(m.data()[i] >= -tol && m.data()[i] <= 1.0f + tol)) return false;
    return true;
}

bool row_stochastic(const TensorF& probs, float tol) {
    const auto& s = probs.shape();
    const int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < hw; ++p) {
            float acc = 0;
            for (int64_t k = 0; k < c; ++k) acc += probs.data()[(i * c + k) * hw + p];
            if (std::fabs(acc - 1.0f) > tol) return false;
        }
    return true;
}

bool labels_respect_weak(const LabelMap& m, const std::vector<WeakLabel>& weak) {
    for (int64_t i = 0; i < m.n; ++i)
        for (int64_t p = 0; p < m.h * m.w; ++p) {
            const int32_t lab = m.v[i * m.h * m.w + p];
            if (lab == 0 || lab == kIgnoreLabel) continue;
            const size_t c = static_cast<size_t>(lab - 1);
            if (c >= weak[i].onehot.size() || !weak[i].onehot[c]) return false;
        }
    return true;
}

bool absent_channels_zero(const TensorF& m, const std::vector<WeakLabel>& weak, float tol,
                          bool has_background_channel) {
    const auto& s = m.shape();
    const int64_t n = s[0], ch = s[1], hw = s[2] * s[3];
    const int64_t off = has_background_channel ? 1 : 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = off; c < ch; ++c) {
            if (weak[i].onehot[static_cast<size_t>(c - off)]) continue;
            for (int64_t p = 0; p < hw; ++p)
                if (std::fabs(m.data()[(i * ch + c) * hw + p]) > tol) return false;
        }
    return true;
}

}  // namespace cosa
