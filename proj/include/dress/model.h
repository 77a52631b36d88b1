#pragma once

#include "dress/binio.h"
#include "dress/tokenizer.h"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dress {

enum class norm_kind : uint8_t { layer_norm = 0, rms_norm = 1 };
enum class activation_kind : uint8_t { gelu = 0, relu = 1 };
enum class positional_kind : uint8_t { rope = 0, learned = 1 };

struct model_config {
    uint32_t n_layers = 1;
    uint32_t n_heads = 1;
    uint32_t head_dim = 1;
    uint32_t hidden_dim = 1;
    uint32_t mlp_dim = 1;
    uint32_t vocab_size = 257;
    uint32_t max_context = 1;
    tokenizer_kind tokenizer = tokenizer_kind::byte;
    norm_kind norm = norm_kind::rms_norm;
    activation_kind activation = activation_kind::gelu;
    positional_kind positional = positional_kind::rope;
    bool tie_embeddings = false;
    float norm_eps = 1e-5f;
    float rope_theta = 10000.0f;
    int32_t eos_id = -1;
    // relative to the model file's directory; bpe only
    std::string vocab_path;
    std::string merges_path;
    // "{q}" and "{a}" placeholders; empty means the default "Q: {q}\nA: {a}"
    std::string chat_template;

    // throws model_error("config invariant violated: ...")
    void validate() const;
    // (name, dims) of every tensor the layer plan requires
    std::vector<std::pair<std::string, std::vector<uint32_t>>> layer_plan() const;

    bool operator==(const model_config &) const = default;
};

struct tensor {
    std::vector<uint32_t> dims;
    std::vector<float> data;
};

struct hook_point {
    uint32_t layer = 0;
    uint32_t head = 0;

    auto operator<=>(const hook_point &) const = default;
};

struct activation_record {
    hook_point hook;
    uint32_t position = 0;
    std::vector<double> vector;
};

// Additive edits at the per-head attention output, before W^o (and, for
// whole-stream baselines, at the attention block output before the residual add).
class edit_callback {
public:
    virtual ~edit_callback() = default;

    // true when head_delta should be consulted for this head at all
    virtual bool wants(hook_point hook) const = 0;
    // writes the delta for activation u; returns false for "no edit"
    virtual bool head_delta(hook_point hook, uint32_t position, std::span<const double> u, std::span<double> delta) = 0;
    // delta added to the attention block output of `layer` (hidden_dim wide)
    virtual bool block_delta(uint32_t /*layer*/, uint32_t /*position*/, std::span<double> /*delta*/) { return false; }
};

class model_bundle {
public:
    model_bundle() = default;
    // layer views point into tensors_, so copies are not allowed
    model_bundle(const model_bundle &) = delete;
    model_bundle & operator=(const model_bundle &) = delete;
    model_bundle(model_bundle &&) = default;
    model_bundle & operator=(model_bundle &&) = default;
    // validates shapes and finiteness; the hash is SHA-256 of the canonical DRSW bytes
    model_bundle(model_config config, std::map<std::string, tensor> tensors, std::filesystem::path asset_dir = {});

    const model_config & config() const { return config_; }
    const std::map<std::string, tensor> & tensors() const { return tensors_; }
    const tensor & get(const std::string & name) const;
    const tokenizer & tok() const { return *tokenizer_; }
    const sha256_digest & hash() const { return hash_; }
    std::string hash_hex() const { return to_hex(hash_); }

    std::vector<uint8_t> serialize() const;

    // "Q: {q}\nA: {a}" or the bundle's chat template
    std::string format_pair(std::string_view question, std::string_view answer) const;
    // the formatted pair with an empty answer, i.e. the generation prompt
    std::string format_prompt(std::string_view question) const;

    struct layer_view {
        const float * attn_norm_w;
        const float * attn_norm_b;
        const float * wq;
        const float * bq;
        const float * wk;
        const float * bk;
        const float * wv;
        const float * bv;
        const float * wo;
        const float * bo;
        const float * mlp_norm_w;
        const float * mlp_norm_b;
        const float * up_w;
        const float * up_b;
        const float * down_w;
        const float * down_b;
    };
    const layer_view & layer(size_t l) const { return layers_[l]; }
    const float * tok_emb() const { return tok_emb_; }
    const float * pos_emb() const { return pos_emb_; }
    const float * out_norm_w() const { return out_norm_w_; }
    const float * out_norm_b() const { return out_norm_b_; }
    const float * lm_head() const { return lm_head_; }

private:
    void bind();

    model_config config_;
    std::map<std::string, tensor> tensors_;
    std::shared_ptr<const tokenizer> tokenizer_;
    sha256_digest hash_{};
    std::vector<layer_view> layers_;
    const float * tok_emb_ = nullptr;
    const float * pos_emb_ = nullptr;
    const float * out_norm_w_ = nullptr;
    const float * out_norm_b_ = nullptr;
    const float * lm_head_ = nullptr;
};

model_bundle load_model(const std::filesystem::path & path);
void save_model(const model_bundle & bundle, const std::filesystem::path & path);
model_bundle parse_model(std::span<const uint8_t> bytes, const std::filesystem::path & asset_dir);

std::vector<int32_t> tokenize(const model_bundle & bundle, std::string_view text);
std::string detokenize(const model_bundle & bundle, std::span<const int32_t> ids);

struct forward_result {
    uint32_t n_positions = 0;
    uint32_t vocab = 0;
    uint32_t hidden = 0;
    std::vector<float> logits;        // n_positions x vocab
    std::vector<float> final_hidden;  // n_positions x hidden, after the output norm
    std::vector<activation_record> records;

    std::span<const float> logits_at(size_t pos) const { return {logits.data() + pos * vocab, vocab}; }
    std::span<const float> hidden_at(size_t pos) const { return {final_hidden.data() + pos * hidden, hidden}; }
};

struct capture_options {
    std::vector<hook_point> hooks;
    bool last_position_only = false;
};

// Full-sequence forward pass (no KV cache, no edits). Records hold the
// per-head attention outputs before W^o.
forward_result forward_capture(const model_bundle & bundle, std::span<const int32_t> tokens, const capture_options & capture = {});

std::vector<hook_point> all_hooks(const model_config & config);

// Incremental decoder with a KV cache. Single owner; many sessions may share a bundle.
class decode_session {
public:
    using observer = std::function<void(hook_point, uint32_t position, std::span<const float> pre, std::span<const float> post)>;

    // edits are applied to positions >= edit_from
    decode_session(const model_bundle & bundle, edit_callback * edit = nullptr, uint32_t edit_from = 0);

    // feeds one token, returns the logits at its position
    std::span<const float> step(int32_t token);
    uint32_t position() const { return pos_; }
    void set_observer(observer obs) { observer_ = std::move(obs); }

private:
    const model_bundle & bundle_;
    edit_callback * edit_;
    uint32_t edit_from_;
    uint32_t pos_ = 0;
    observer observer_;
    std::vector<std::vector<float>> k_cache_;  // per layer: max_context x hidden
    std::vector<std::vector<float>> v_cache_;
    std::vector<float> x_, h_, q_, attn_, mix_, up_, logits_;
    std::vector<double> u64_, delta64_, block64_;
    std::vector<float> pre_;
};

struct generate_options {
    uint32_t max_new = 32;
    bool stop_at_eos = true;
};

// Greedy decoding (temperature 0, lowest id wins ties). The prompt prefill is
// never edited; `edit` applies from the first generated token onwards.
std::vector<int32_t> generate(const model_bundle & bundle, std::span<const int32_t> prompt, edit_callback * edit,
                              const generate_options & opts);

int32_t argmax(std::span<const float> logits);

}  // namespace dress
