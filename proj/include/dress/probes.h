#pragma once

#include "dress/corpus.h"
#include "dress/numerics.h"
#include "dress/store.h"

#include <optional>
#include <vector>

namespace dress {

struct probe_sample {
    std::vector<double> features;
    int label = 0;  // 1 target style, 0 ordinary
};

// 2 x N_eff samples, pair-major: (pair 0 neg, pair 0 pos, pair 1 neg, ...)
std::vector<probe_sample> build_probe_dataset(const activation_store & store, hook_point hook);

struct head_score {
    hook_point hook;
    double val_accuracy = 0.0;
    linear_probe probe;
};

struct head_selection {
    std::vector<head_score> ranked;  // every head, best first
    std::vector<hook_point> selected;

    const head_score * find(hook_point h) const;
};

struct probe_options {
    split_spec split;
    probe_fit_config fit;
    size_t workers = 1;
};

// Fits one probe per head on a shared per-pair split; result in (layer, head) order.
std::vector<head_score> score_heads(const activation_store & store, const probe_options & opts);

// Global ranking by accuracy, ties by (layer, head). With per_layer set, the
// H picks are spread over layers (H / L each, remainder to the lowest layers).
head_selection rank_heads(std::vector<head_score> scores, size_t H, uint32_t n_layers = 0, bool per_layer = false);

head_selection select_heads(const activation_store & store, const probe_options & opts, size_t H, bool per_layer = false);

}  // namespace dress
