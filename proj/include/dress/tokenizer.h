#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dress {

enum class tokenizer_kind : uint8_t { byte = 0, bpe = 1 };

// Byte mode: ids 0..255 are raw bytes, 256 is the end-of-text special.
// BPE mode: GPT-2 style byte-level BPE from vocab.json + merges.txt.
class tokenizer {
public:
    static constexpr int32_t byte_eos_id = 256;

    static tokenizer byte_level();
    static tokenizer from_bpe_files(const std::filesystem::path & vocab_json, const std::filesystem::path & merges_txt);

    tokenizer_kind kind() const { return kind_; }
    size_t vocab_size() const;
    int32_t eos_id() const { return eos_id_; }

    std::vector<int32_t> encode(std::string_view text) const;
    // throws data_error on an id outside the vocabulary
    std::string decode(std::span<const int32_t> ids) const;

    // GPT-2 regex pre-tokenization; exposed for tests
    static std::vector<std::string> pretokenize(std::string_view text);

private:
    std::vector<int32_t> bpe_piece(std::string_view piece) const;

    tokenizer_kind kind_ = tokenizer_kind::byte;
    int32_t eos_id_ = byte_eos_id;
    std::unordered_map<std::string, int32_t> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int32_t> merge_rank_;  // "left right" -> rank
};

}  // namespace dress
