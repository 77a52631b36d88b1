#include "dress/tokenizer.h"

#include "dress/binio.h"
#include "dress/errors.h"

#include <json.hpp>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <array>
#include <limits>
#include <sstream>

namespace dress {

namespace {

void append_utf8(std::string & out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(char(cp));
    } else if (cp < 0x800) {
        out.push_back(char(0xC0 | (cp >> 6)));
        out.push_back(char(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(char(0xE0 | (cp >> 12)));
        out.push_back(char(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(char(0x80 | (cp & 0x3F)));
    }
}

// GPT-2's reversible byte -> printable codepoint table.
struct byte_table {
    std::array<std::string, 256> encoded;
    std::unordered_map<uint32_t, uint8_t> decoded;

    byte_table() {
        std::array<uint32_t, 256> cp{};
        std::array<bool, 256> direct{};
        for (int b = '!'; b <= '~'; ++b) direct[b] = true;
        for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
        for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
        uint32_t extra = 0;
        for (int b = 0; b < 256; ++b) {
            cp[b] = direct[b] ? uint32_t(b) : 256 + extra++;
        }
        for (int b = 0; b < 256; ++b) {
            append_utf8(encoded[b], cp[b]);
            decoded[cp[b]] = uint8_t(b);
        }
    }
};

const byte_table & bytes_to_unicode() {
    static const byte_table t;
    return t;
}

enum class char_class { space, letter, number, other };

struct code_point {
    size_t begin;
    size_t end;
    char_class cls;
    UChar32 cp;
};

std::vector<code_point> decode_code_points(std::string_view text) {
    std::vector<code_point> cps;
    const auto * s = reinterpret_cast<const uint8_t *>(text.data());
    const int32_t n = int32_t(text.size());
    int32_t i = 0;
    while (i < n) {
        const int32_t start = i;
        UChar32 c;
        U8_NEXT(s, i, n, c);
        char_class cls = char_class::other;
        if (c >= 0) {
            const uint32_t mask = U_GET_GC_MASK(c);
            if (u_isUWhiteSpace(c)) {
                cls = char_class::space;
            } else if (mask & U_GC_L_MASK) {
                cls = char_class::letter;
            } else if (mask & U_GC_N_MASK) {
                cls = char_class::number;
            }
        }
        cps.push_back({size_t(start), size_t(i), cls, c});
    }
    return cps;
}

}  // namespace

tokenizer tokenizer::byte_level() {
    tokenizer t;
    t.kind_ = tokenizer_kind::byte;
    t.eos_id_ = byte_eos_id;
    return t;
}

tokenizer tokenizer::from_bpe_files(const std::filesystem::path & vocab_json, const std::filesystem::path & merges_txt) {
    tokenizer t;
    t.kind_ = tokenizer_kind::bpe;

    nlohmann::json vocab;
    try {
        vocab = nlohmann::json::parse(read_file_text(vocab_json));
    } catch (const nlohmann::json::exception & e) {
        throw data_error("bpe vocab " + vocab_json.string() + ": " + e.what());
    }
    if (!vocab.is_object()) {
        throw data_error("bpe vocab " + vocab_json.string() + ": expected a JSON object");
    }
    int32_t max_id = -1;
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
        const int32_t id = it.value().get<int32_t>();
        if (id < 0) {
            throw data_error("bpe vocab: negative id for " + it.key());
        }
        t.token_to_id_[it.key()] = id;
        max_id = std::max(max_id, id);
    }
    t.id_to_token_.assign(size_t(max_id + 1), std::string());
    for (const auto & [tok, id] : t.token_to_id_) {
        t.id_to_token_[size_t(id)] = tok;
    }
    auto eos = t.token_to_id_.find("<|endoftext|>");
    t.eos_id_ = eos == t.token_to_id_.end() ? -1 : eos->second;

    std::istringstream merges(read_file_text(merges_txt));
    std::string line;
    int32_t rank = 0;
    while (std::getline(merges, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line.rfind("#version", 0) == 0) {
            continue;
        }
        if (line.find(' ') == std::string::npos) {
            throw data_error("bpe merges: malformed line " + std::to_string(rank + 1));
        }
        t.merge_rank_.emplace(line, rank++);
    }
    return t;
}

size_t tokenizer::vocab_size() const {
    return kind_ == tokenizer_kind::byte ? 257 : id_to_token_.size();
}

std::vector<std::string> tokenizer::pretokenize(std::string_view text) {
    // 's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
    const auto cps = decode_code_points(text);
    const size_t n = cps.size();
    std::vector<std::string> out;
    auto emit = [&](size_t a, size_t b) {
        out.emplace_back(text.substr(cps[a].begin, cps[b - 1].end - cps[a].begin));
    };
    auto run_end = [&](size_t j, char_class cls) {
        while (j < n && cps[j].cls == cls) ++j;
        return j;
    };
    size_t i = 0;
    while (i < n) {
        if (cps[i].cp == '\'' && i + 1 < n) {
            const UChar32 c1 = cps[i + 1].cp;
            if (c1 == 's' || c1 == 't' || c1 == 'm' || c1 == 'd') {
                emit(i, i + 2);
                i += 2;
                continue;
            }
            if (i + 2 < n) {
                const UChar32 c2 = cps[i + 2].cp;
                if ((c1 == 'r' && c2 == 'e') || (c1 == 'v' && c2 == 'e') || (c1 == 'l' && c2 == 'l')) {
                    emit(i, i + 3);
                    i += 3;
                    continue;
                }
            }
        }
        size_t start = i;
        size_t j = i;
        if (cps[j].cp == ' ' && j + 1 < n && cps[j + 1].cls != char_class::space) {
            ++j;
        }
        if (cps[j].cls != char_class::space) {
            const char_class cls = cps[j].cls;
            const size_t end = run_end(j, cls);
            emit(start, end);
            i = end;
            continue;
        }
        const size_t end = run_end(i, char_class::space);
        if (end < n && end - i > 1) {
            emit(i, end - 1);
            i = end - 1;
        } else {
            emit(i, end);
            i = end;
        }
    }
    return out;
}

std::vector<int32_t> tokenizer::bpe_piece(std::string_view piece) const {
    const auto & table = bytes_to_unicode();
    std::vector<std::string> symbols;
    symbols.reserve(piece.size());
    for (unsigned char b : piece) {
        symbols.push_back(table.encoded[b]);
    }
    std::string key;
    while (symbols.size() > 1) {
        int32_t best = std::numeric_limits<int32_t>::max();
        size_t best_at = 0;
        for (size_t i = 0; i + 1 < symbols.size(); ++i) {
            key.assign(symbols[i]).append(" ").append(symbols[i + 1]);
            auto it = merge_rank_.find(key);
            if (it != merge_rank_.end() && it->second < best) {
                best = it->second;
                best_at = i;
            }
        }
        if (best == std::numeric_limits<int32_t>::max()) {
            break;
        }
        const std::string left = symbols[best_at];
        const std::string right = symbols[best_at + 1];
        std::vector<std::string> merged;
        merged.reserve(symbols.size());
        for (size_t i = 0; i < symbols.size();) {
            if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                merged.push_back(left + right);
                i += 2;
            } else {
                merged.push_back(std::move(symbols[i]));
                ++i;
            }
        }
        symbols = std::move(merged);
    }
    std::vector<int32_t> ids;
    ids.reserve(symbols.size());
    for (const auto & s : symbols) {
        auto it = token_to_id_.find(s);
        if (it == token_to_id_.end()) {
            throw data_error("bpe: symbol missing from vocab: " + s);
        }
        ids.push_back(it->second);
    }
    return ids;
}

std::vector<int32_t> tokenizer::encode(std::string_view text) const {
    std::vector<int32_t> ids;
    if (kind_ == tokenizer_kind::byte) {
        ids.reserve(text.size());
        for (unsigned char b : text) {
            ids.push_back(int32_t(b));
        }
        return ids;
    }
    for (const auto & piece : pretokenize(text)) {
        const auto part = bpe_piece(piece);
        ids.insert(ids.end(), part.begin(), part.end());
    }
    return ids;
}

std::string tokenizer::decode(std::span<const int32_t> ids) const {
    std::string out;
    if (kind_ == tokenizer_kind::byte) {
        for (int32_t id : ids) {
            if (id < 0 || id > byte_eos_id) {
                throw data_error("unknown token id " + std::to_string(id));
            }
            if (id < 256) {
                out.push_back(char(id));
            }
        }
        return out;
    }
    std::string joined;
    for (int32_t id : ids) {
        if (id < 0 || size_t(id) >= id_to_token_.size() || id_to_token_[size_t(id)].empty()) {
            throw data_error("unknown token id " + std::to_string(id));
        }
        joined += id_to_token_[size_t(id)];
    }
    const auto & table = bytes_to_unicode();
    const auto * s = reinterpret_cast<const uint8_t *>(joined.data());
    const int32_t n = int32_t(joined.size());
    int32_t i = 0;
    while (i < n) {
        UChar32 c;
        U8_NEXT(s, i, n, c);
        auto it = table.decoded.find(uint32_t(c));
        if (it == table.decoded.end()) {
            throw data_error("bpe decode: codepoint outside the byte table");
        }
        out.push_back(char(it->second));
    }
    return out;
}

}  // namespace dress
