#pragma once

#include "dress/model.h"
#include "dress/subspace.h"

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace dress {

enum class steer_method { none, dress, dress_fixed, iti, mean_centring, repe };

std::string_view to_string(steer_method m);
steer_method parse_method(std::string_view s);

struct steer_config {
    steer_method method = steer_method::dress;
    double lambda = 3.0;
    // Mean-Centring / RepE layer set; empty means the middle 30% of layers
    std::vector<uint32_t> layers;
    bool trace = false;
    // test hook: DRESS with every gamma forced to zero
    bool force_gamma_zero = false;

    void validate() const;
};

// The middle 30% of layers (at least one), centred.
std::vector<uint32_t> default_layers(uint32_t n_layers);

// gamma_i = cos(u+ - u, v_i), alpha_i = lambda (1 + gamma_i) beta_i,
// delta = sum alpha_i v_i. gamma/alpha may be null.
void dress_delta(const head_subspace & head, std::span<const double> u, double lambda, std::span<double> delta,
                 std::span<double> gamma = {}, std::span<double> alpha = {}, bool force_gamma_zero = false);
std::vector<double> dress_delta(const head_subspace & head, std::span<const double> u, double lambda);

// alpha_i = lambda beta_i, independent of u
std::vector<double> dress_fixed_delta(const head_subspace & head, double lambda);

// lambda s theta / |theta|; throws on a zero probe
std::vector<double> iti_delta(std::span<const double> theta, double s, double lambda);

// lambda beta_1 v_1
std::vector<double> repe_delta(const repe_entry & e, double lambda);

// lambda times the layer-level mean difference
std::vector<double> mean_centring_delta(std::span<const double> layer_diff, double lambda);

struct trace_row {
    uint32_t token_index;
    uint32_t layer;
    uint32_t head;
    uint32_t i;
    double gamma;
    double alpha;
    double delta_norm;
};

std::string trace_csv(const std::vector<trace_row> & rows);

class steering_callback : public edit_callback {
public:
    steering_callback(steer_config config, const style_artifact & artifact);

    bool wants(hook_point hook) const override;
    bool head_delta(hook_point hook, uint32_t position, std::span<const double> u, std::span<double> delta) override;
    bool block_delta(uint32_t layer, uint32_t position, std::span<double> delta) override;

    const steer_config & config() const { return config_; }
    // token_index in the trace is position - origin
    void set_origin(uint32_t origin) { origin_ = origin; }
    const std::vector<trace_row> & trace() const { return trace_; }
    void clear_trace() { trace_.clear(); }

private:
    steer_config config_;
    const style_artifact & artifact_;
    std::vector<const artifact_head *> head_at_;  // indexed layer * n_heads + head
    std::vector<bool> layer_on_;
    uint32_t origin_ = 0;
    std::vector<trace_row> trace_;
    std::vector<double> gamma_, alpha_;
};

// Refuses an artifact built for a different model (model_error).
std::unique_ptr<steering_callback> make_callback(const steer_config & config, const style_artifact & artifact,
                                                 const model_bundle & bundle);

}  // namespace dress
