#pragma once

#include "dress/corpus.h"
#include "dress/model.h"

#include <span>
#include <string>
#include <vector>

namespace dress {

enum polarity : uint32_t { negative = 0, positive = 1 };

// Last-token head activations for every effective pair and both polarities,
// laid out [layer][head][pair][polarity][d].
class activation_store {
public:
    activation_store() = default;
    activation_store(uint32_t n_layers, uint32_t n_heads, uint32_t head_dim, std::vector<std::string> pair_ids,
                     std::vector<std::string> skipped_ids = {});

    uint32_t n_layers() const { return n_layers_; }
    uint32_t n_heads() const { return n_heads_; }
    uint32_t head_dim() const { return head_dim_; }
    size_t n_pairs() const { return pair_ids_.size(); }
    const std::vector<std::string> & pair_ids() const { return pair_ids_; }
    const std::vector<std::string> & skipped_ids() const { return skipped_ids_; }
    bool has_hook(hook_point h) const { return h.layer < n_layers_ && h.head < n_heads_; }

    std::span<const double> at(hook_point h, size_t pair, polarity pol) const;
    std::span<double> at(hook_point h, size_t pair, polarity pol);

    std::vector<uint8_t> serialize() const;
    static activation_store parse(std::span<const uint8_t> bytes);

    bool operator==(const activation_store &) const = default;

private:
    size_t offset(hook_point h, size_t pair, polarity pol) const;

    uint32_t n_layers_ = 0;
    uint32_t n_heads_ = 0;
    uint32_t head_dim_ = 0;
    std::vector<std::string> pair_ids_;
    std::vector<std::string> skipped_ids_;
    std::vector<double> data_;
};

activation_store load_store(const std::filesystem::path & path);
void save_store(const activation_store & store, const std::filesystem::path & path);

struct extract_report {
    std::vector<std::string> warnings;
};

// One forward pass per (pair, polarity) over format_pair(q, a); overlong pairs
// are skipped for both polarities and listed in the store.
activation_store extract_last_token_activations(const model_bundle & bundle, const style_corpus & corpus, size_t workers = 1,
                                                extract_report * report = nullptr);

}  // namespace dress
