#pragma once

#include "dress/binio.h"
#include "dress/numerics.h"
#include "dress/probes.h"
#include "dress/store.h"

#include <optional>
#include <string>
#include <vector>

namespace dress {

// row i = u_i+ - u_i- over the effective pairs
mat build_diff_matrix(const activation_store & store, hook_point hook);

// arithmetic mean of one polarity's activations (compensated summation)
std::vector<double> polarity_mean(const activation_store & store, hook_point hook, polarity pol);

struct head_subspace {
    hook_point hook;
    mat basis;                         // K x d, orthonormal rows v_i
    std::vector<double> betas;         // <mean diff, v_i>, >= 0 when oriented
    std::vector<double> u_plus_mean;   // d
    std::vector<double> sigma;         // K singular values
    std::optional<mat> irrelevant;     // v_{K+1}, v_{K+2}, when d >= K + 2

    size_t rank() const { return basis.rows; }
    bool operator==(const head_subspace &) const = default;
};

struct subspace_options {
    size_t rank = 16;
    bool orient = true;
    bool irrelevant_probe = true;
};

// Top-K right singular vectors of diff. Throws data_error("no style signal")
// on an all-zero diff; K above the numerical rank yields zero-sigma
// completions and a warning.
head_subspace extract_subspace(const mat & diff, std::span<const double> u_plus_mean, hook_point hook,
                               const subspace_options & opts, std::vector<std::string> * warnings = nullptr);

head_subspace extract_subspace(const activation_store & store, hook_point hook, const subspace_options & opts,
                               std::vector<std::string> * warnings = nullptr);

struct artifact_head {
    head_subspace subspace;
    double val_accuracy = 0.0;
    linear_probe probe;  // ITI direction
    double iti_scale = 0.0;

    bool operator==(const artifact_head &) const = default;
};

// First oriented singular direction of a head, kept for every head so RepE
// can edit whole layers.
struct repe_entry {
    hook_point hook;
    double beta1 = 0.0;
    std::vector<double> v1;

    bool operator==(const repe_entry &) const = default;
};

struct artifact_provenance {
    std::string corpus_digest;
    std::string store_digest;
    uint64_t split_seed = 0;
    double train_fraction = 0.8;
    bool oriented = true;

    bool operator==(const artifact_provenance &) const = default;
};

struct style_artifact {
    sha256_digest model_hash{};
    double lambda = 3.0;
    uint32_t rank = 0;
    uint32_t n_selected = 0;
    uint32_t n_layers = 0;
    uint32_t n_heads = 0;
    uint32_t head_dim = 0;
    uint32_t hidden_dim = 0;
    std::vector<artifact_head> heads;        // selection order (best first)
    std::vector<std::pair<hook_point, double>> all_scores;  // (layer, head) order
    std::vector<repe_entry> repe;            // (layer, head) order
    std::vector<std::vector<double>> layer_mean_diff;  // L x hidden: W^o times the concatenated head mean diffs
    artifact_provenance provenance;

    const artifact_head * find(hook_point h) const;
    const repe_entry & repe_at(hook_point h) const { return repe[size_t(h.layer) * n_heads + h.head]; }

    // checks the invariants listed on the type; throws invariant_error
    void validate() const;

    std::vector<uint8_t> serialize() const;
    static style_artifact parse(std::span<const uint8_t> bytes);

    bool operator==(const style_artifact &) const = default;
};

style_artifact load_artifact(const std::filesystem::path & path);
void save_artifact(const style_artifact & artifact, const std::filesystem::path & path);

struct artifact_defaults {
    double lambda = 3.0;
    size_t rank = 16;
};

// Builds every selected head's subspace plus the baseline tables.
// The bundle supplies W^o for the layer-level (Mean-Centring) statistic.
style_artifact build_artifact(const model_bundle & bundle, const activation_store & store, const head_selection & selection,
                              const artifact_defaults & defaults, const subspace_options & opts,
                              const artifact_provenance & provenance, size_t workers = 1,
                              std::vector<std::string> * warnings = nullptr);

// Assembly from parts (used by tests and by build_artifact). Validates one
// subspace per selected head, no duplicates, uniform K.
style_artifact assemble_artifact(const head_selection & selection, std::vector<head_subspace> subspaces,
                                 const artifact_defaults & defaults, const artifact_provenance & provenance);

}  // namespace dress
