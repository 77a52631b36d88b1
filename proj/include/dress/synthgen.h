#pragma once

#include "dress/corpus.h"
#include "dress/model.h"
#include "dress/numerics.h"
#include "dress/store.h"

#include <optional>
#include <string>
#include <vector>

namespace dress {

struct planted_config {
    uint32_t n_layers = 8;
    uint32_t n_heads = 8;
    uint32_t head_dim = 64;
    uint32_t n_pairs = 500;
    std::vector<hook_point> style_heads;
    uint32_t k = 3;
    // per-pair coefficient c_ij ~ N(coef_mean[j], coef_sd^2)
    std::vector<double> coef_mean{3.0, 2.0, 1.0};
    double coef_sd = 0.5;
    double noise_sigma = 0.05;
    double base_sigma = 1.0;
    uint64_t seed = 0;
    // k x d orthonormal rows; drawn from the seed when absent
    std::optional<mat> basis;
};

struct planted_truth {
    mat basis;                               // W, k x d
    std::vector<std::vector<double>> coefficients;  // n_pairs x k, shared by the style heads
    std::vector<hook_point> style_heads;
    uint64_t seed = 0;

    std::string to_json() const;
    static planted_truth from_json(std::string_view text);
};

struct planted_result {
    activation_store store;
    planted_truth truth;
};

// Negatives ~ N(0, base^2 I). Style heads: positives = negatives + sum_j c_ij w_j
// + N(0, sigma^2 I). Other heads: positives = negatives + N(0, sigma^2 I), so the
// two classes share one distribution.
planted_result planted_store(const planted_config & cfg);

// k x d with orthonormal rows, from a seeded Gaussian draw
mat random_orthonormal(size_t k, size_t d, uint64_t seed);

// Largest principal angle (degrees) between the row spaces of a and b.
double max_principal_angle_deg(const mat & a, const mat & b);

struct tiny_config {
    uint32_t n_layers = 4;
    uint32_t n_heads = 4;
    uint32_t head_dim = 16;
    uint32_t mlp_dim = 128;
    uint32_t max_context = 256;
    double init_scale = 0.3;
    positional_kind positional = positional_kind::rope;
    norm_kind norm = norm_kind::rms_norm;
};

// Deterministic random-weight byte-level bundle.
model_bundle tiny_model(uint64_t seed, const tiny_config & cfg = {});

// ---- mechanical style task ----
// Target style = upper-case letters. Head (0, 0) of the styled model averages
// an "upper-case" flag over the context and writes it to a residual channel
// that raises every upper-case letter's logit.

struct styled_layout {
    static constexpr uint32_t n_layers = 2;
    static constexpr uint32_t n_heads = 8;
    static constexpr uint32_t head_dim = 8;
    static constexpr uint32_t hidden = 64;
    static constexpr uint32_t space_dim = 26;
    static constexpr uint32_t flag_dim = 27;
    static constexpr uint32_t style_dim = 28;
    static constexpr uint32_t colon_dim = 29;
    static constexpr uint32_t newline_dim = 30;
    static constexpr uint32_t other_dim = 31;
    static constexpr uint32_t bias_dim = 32;
    static inline const hook_point style_head{0, 0};
    // the designated direction: component 0 of the style head
    static constexpr uint32_t style_component = 0;
};

struct styled_config {
    uint64_t seed = 0;
    double flag_read = 1.0;    // V weight from the flag channel
    double style_write = 1.0;  // W^o weight into the style channel
    double style_boost = 1.0;  // lm_head weight of the style channel on upper-case rows
    double case_penalty = 2.5; // lm_head penalty on upper-case rows via the bias channel
    uint32_t max_context = 512;
};

// Bigram statistics come from `training_text` (case-folded).
model_bundle styled_model(const styled_config & cfg, std::string_view training_text);

// Lower-case question/answer pairs; a+ is the answer in upper case.
style_corpus mechanical_corpus(size_t n, uint64_t seed);
// text the styled model's bigram table is built from
std::string mechanical_training_text(const style_corpus & corpus);
// held-out questions for generation
std::vector<std::string> mechanical_questions(size_t n, uint64_t seed);

bool is_marked(int32_t token);
size_t count_marked(std::string_view text);

}  // namespace dress
