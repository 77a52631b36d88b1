#include "dress/synthgen.h"

#include "dress/errors.h"
#include "dress/rng.h"
#include "dress/tokenizer.h"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace dress {

using json = nlohmann::json;

mat random_orthonormal(size_t k, size_t d, uint64_t seed) {
    if (k == 0 || k > d) throw std::invalid_argument("random_orthonormal: need 1 <= k <= d");
    rng r(seed);
    mat m(k, d);
    for (double & v : m.data) v = r.gaussian();
    // modified Gram-Schmidt, two passes
    for (int pass = 0; pass < 2; ++pass) {
        for (size_t i = 0; i < k; ++i) {
            auto ri = m.row(i);
            for (size_t j = 0; j < i; ++j) {
                const double p = dot(ri, m.row(j));
                auto rj = m.row(j);
                for (size_t c = 0; c < d; ++c) ri[c] -= p * rj[c];
            }
            const double n = norm2(ri);
            for (double & v : ri) v /= n;
        }
    }
    return m;
}

double max_principal_angle_deg(const mat & a, const mat & b) {
    if (a.cols != b.cols) throw std::invalid_argument("principal angles: dimension mismatch");
    mat m(a.rows, b.rows);
    for (size_t i = 0; i < a.rows; ++i)
        for (size_t j = 0; j < b.rows; ++j) m(i, j) = dot(a.row(i), b.row(j));
    const size_t k = std::min(a.rows, b.rows);
    auto svd = svd_topk(m, k);
    const double smallest = std::clamp(svd.singular_values.back(), 0.0, 1.0);
    return std::acos(smallest) * 180.0 / M_PI;
}

std::string planted_truth::to_json() const {
    json w = json::array();
    for (size_t i = 0; i < basis.rows; ++i) w.push_back(std::vector<double>(basis.row(i).begin(), basis.row(i).end()));
    json heads = json::array();
    for (const auto & h : style_heads) heads.push_back({h.layer, h.head});
    json j = {{"W", w}, {"coefficients", coefficients}, {"style_heads", heads}, {"seeds", {{"store", seed}}}};
    return j.dump();
}

planted_truth planted_truth::from_json(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw data_error("ground truth: malformed JSON");
    planted_truth t;
    const auto rows = j.at("W").get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
        t.basis = mat(rows.size(), rows[0].size());
        for (size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), t.basis.row(i).begin());
    }
    t.coefficients = j.at("coefficients").get<std::vector<std::vector<double>>>();
    for (const auto & h : j.at("style_heads")) t.style_heads.push_back({h[0].get<uint32_t>(), h[1].get<uint32_t>()});
    t.seed = j.at("seeds").at("store").get<uint64_t>();
    return t;
}

planted_result planted_store(const planted_config & cfg) {
    const size_t d = cfg.head_dim;
    if (cfg.k == 0 || cfg.k > d) throw std::invalid_argument("planted_store: k out of range");
    if (cfg.coef_mean.size() < cfg.k) throw std::invalid_argument("planted_store: need k coefficient means");
    mat w = cfg.basis ? *cfg.basis : random_orthonormal(cfg.k, d, cfg.seed ^ 0x5eedba5e5ull);
    if (w.rows != cfg.k || w.cols != d) throw std::invalid_argument("planted_store: W must be k x d");
    for (size_t i = 0; i < w.rows; ++i)
        for (size_t j = 0; j < w.rows; ++j)
            if (std::abs(dot(w.row(i), w.row(j)) - (i == j ? 1.0 : 0.0)) > 1e-9) {
                throw std::invalid_argument("planted_store: W is not orthonormal");
            }
    std::set<hook_point> style(cfg.style_heads.begin(), cfg.style_heads.end());
    for (const auto & h : style) {
        if (h.layer >= cfg.n_layers || h.head >= cfg.n_heads) throw std::invalid_argument("planted_store: style head out of range");
    }

    rng r(cfg.seed);
    planted_truth truth;
    truth.basis = w;
    truth.style_heads.assign(style.begin(), style.end());
    truth.seed = cfg.seed;
    truth.coefficients.assign(cfg.n_pairs, std::vector<double>(cfg.k));
    for (auto & row : truth.coefficients)
        for (size_t j = 0; j < cfg.k; ++j) row[j] = cfg.coef_mean[j] + cfg.coef_sd * r.gaussian();

    std::vector<std::string> ids;
    for (uint32_t i = 0; i < cfg.n_pairs; ++i) ids.push_back("p" + std::to_string(i));
    activation_store store(cfg.n_layers, cfg.n_heads, cfg.head_dim, std::move(ids));
    std::vector<double> shift(d);
    for (uint32_t l = 0; l < cfg.n_layers; ++l) {
        for (uint32_t h = 0; h < cfg.n_heads; ++h) {
            const hook_point hook{l, h};
            const bool planted = style.count(hook) > 0;
            for (uint32_t i = 0; i < cfg.n_pairs; ++i) {
                auto neg = store.at(hook, i, negative);
                auto pos = store.at(hook, i, positive);
                for (double & v : neg) v = cfg.base_sigma * r.gaussian();
                std::fill(shift.begin(), shift.end(), 0.0);
                if (planted) {
                    for (size_t j = 0; j < cfg.k; ++j)
                        for (size_t c = 0; c < d; ++c) shift[c] += truth.coefficients[i][j] * w(j, c);
                }
                for (size_t c = 0; c < d; ++c) {
                    const double noise = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * r.gaussian() : 0.0;
                    pos[c] = neg[c] + shift[c] + noise;
                }
            }
        }
    }
    return {std::move(store), std::move(truth)};
}

model_bundle tiny_model(uint64_t seed, const tiny_config & cfg) {
    model_config mc;
    mc.n_layers = cfg.n_layers;
    mc.n_heads = cfg.n_heads;
    mc.head_dim = cfg.head_dim;
    mc.hidden_dim = cfg.n_heads * cfg.head_dim;
    mc.mlp_dim = cfg.mlp_dim;
    mc.vocab_size = 257;
    mc.max_context = cfg.max_context;
    mc.tokenizer = tokenizer_kind::byte;
    mc.norm = cfg.norm;
    mc.activation = activation_kind::gelu;
    mc.positional = cfg.positional;
    mc.eos_id = tokenizer::byte_eos_id;
    mc.validate();

    rng r(seed);
    std::map<std::string, tensor> tensors;
    for (const auto & [name, dims] : mc.layer_plan()) {
        tensor t;
        t.dims = dims;
        size_t n = 1;
        for (uint32_t v : dims) n *= v;
        t.data.resize(n);
        const bool is_norm = name.find("norm") != std::string::npos;
        const bool is_bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
        if (is_norm && !is_bias) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (is_norm) {
            std::fill(t.data.begin(), t.data.end(), 0.0f);
        } else {
            const double fan_in = dims.back();
            const double sd = is_bias ? 0.02 : cfg.init_scale * 3.0 / std::sqrt(fan_in);
            for (float & v : t.data) v = float(sd * r.gaussian());
        }
        tensors.emplace(name, std::move(t));
    }
    return model_bundle(std::move(mc), std::move(tensors));
}

namespace {

constexpr uint32_t n_classes = 32;  // identity dims 0..31

uint32_t char_class(unsigned char c) {
    if (c >= 'a' && c <= 'z') return c - 'a';
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c == ' ') return styled_layout::space_dim;
    if (c == ':') return styled_layout::colon_dim;
    if (c == '\n') return styled_layout::newline_dim;
    return styled_layout::other_dim;
}

}  // namespace

model_bundle styled_model(const styled_config & sc, std::string_view training_text) {
    using S = styled_layout;
    model_config mc;
    mc.n_layers = S::n_layers;
    mc.n_heads = S::n_heads;
    mc.head_dim = S::head_dim;
    mc.hidden_dim = S::hidden;
    mc.mlp_dim = 16;
    mc.vocab_size = 257;
    mc.max_context = sc.max_context;
    mc.tokenizer = tokenizer_kind::byte;
    mc.norm = norm_kind::rms_norm;
    mc.activation = activation_kind::relu;
    mc.positional = positional_kind::rope;
    mc.eos_id = tokenizer::byte_eos_id;
    mc.chat_template = "q: {q}\na: {a}";
    mc.validate();

    std::map<std::string, tensor> t;
    for (const auto & [name, dims] : mc.layer_plan()) {
        size_t n = 1;
        for (uint32_t v : dims) n *= v;
        const bool unit = name.find("norm.weight") != std::string::npos;
        t.emplace(name, tensor{dims, std::vector<float>(n, unit ? 1.0f : 0.0f)});
    }
    auto at = [&](const std::string & name, size_t r, size_t c) -> float & {
        auto & x = t.at(name);
        return x.data[r * x.dims.back() + c];
    };
    const uint32_t H = S::hidden;

    // embeddings: case-folded identity + flag + bias
    for (int tok = 0; tok < 257; ++tok) {
        const uint32_t cls = tok < 256 ? char_class(static_cast<unsigned char>(tok)) : S::other_dim;
        at("tok_emb", tok, cls) = 1.0f;
        at("tok_emb", tok, S::bias_dim) = 1.0f;
        if (tok >= 'A' && tok <= 'Z') at("tok_emb", tok, S::flag_dim) = 1.0f;
    }

    rng r(sc.seed);
    for (uint32_t l = 0; l < S::n_layers; ++l) {
        const std::string p = "blk." + std::to_string(l) + ".attn.";
        for (uint32_t h = 0; h < S::n_heads; ++h) {
            const bool style = l == S::style_head.layer && h == S::style_head.head;
            for (uint32_t j = 0; j < S::head_dim; ++j) {
                const size_t row = h * S::head_dim + j;
                for (uint32_t c = 0; c <= S::bias_dim; ++c) {
                    if (style) {
                        // uniform attention; u[0] reads the flag, the rest carries letter content
                        if (j == S::style_component) {
                            at(p + "v.weight", row, c) = c == S::flag_dim ? float(sc.flag_read) : 0.0f;
                        } else if (c < 26) {
                            at(p + "v.weight", row, c) = float(0.5 * r.gaussian());
                        }
                    } else {
                        at(p + "q.weight", row, c) = float(0.3 * r.gaussian());
                        at(p + "k.weight", row, c) = float(0.3 * r.gaussian());
                        at(p + "v.weight", row, c) = float(0.3 * r.gaussian());
                    }
                }
            }
        }
    }
    at("blk.0.attn.o.weight", S::style_dim, S::style_head.head * S::head_dim + S::style_component) = float(sc.style_write);

    // bigram table over case-folded classes
    std::vector<std::vector<double>> counts(n_classes, std::vector<double>(256, 0.0));
    for (size_t i = 0; i + 1 < training_text.size(); ++i) {
        const auto a = static_cast<unsigned char>(training_text[i]);
        auto b = static_cast<unsigned char>(training_text[i + 1]);
        b = static_cast<unsigned char>(std::tolower(b));
        counts[char_class(a)][b] += 1.0;
    }
    std::vector<bool> seen(256, false);
    for (unsigned char c : training_text) seen[std::tolower(c)] = true;
    for (int tok = 0; tok < 257; ++tok) {
        const bool upper = tok >= 'A' && tok <= 'Z';
        const int base = upper ? tok - 'A' + 'a' : tok;
        if (tok == 256 || !seen[base]) {
            at("lm_head", tok, S::bias_dim) = -20.0f;
            continue;
        }
        for (uint32_t k = 0; k < n_classes; ++k) {
            if (k == S::flag_dim || k == S::style_dim) continue;
            at("lm_head", tok, k) = float(std::log1p(counts[k][base]));
        }
        if (upper) {
            at("lm_head", tok, S::style_dim) = float(sc.style_boost);
            at("lm_head", tok, S::bias_dim) = float(-sc.case_penalty);
        }
    }
    (void)H;
    return model_bundle(std::move(mc), std::move(t));
}

namespace {

const char * const subjects[] = {"sky", "sea", "grass", "sun", "moon", "river", "forest", "stone", "night", "rose",
                                 "king", "queen", "storm", "winter", "garden", "candle"};
const char * const attributes[] = {"color", "mood", "sound", "size", "age", "shape", "smell", "name"};
const char * const values[] = {"blue", "calm", "green", "bright", "pale", "quiet", "dark", "gray", "red", "old",
                               "proud", "wild", "cold", "sweet", "warm", "soft"};

}  // namespace

style_corpus mechanical_corpus(size_t n, uint64_t seed) {
    rng r(seed);
    style_corpus c;
    std::set<std::string> used;
    while (c.size() < n) {
        const std::string subj = subjects[r.below(std::size(subjects))];
        const std::string attr = attributes[r.below(std::size(attributes))];
        const std::string val = values[r.below(std::size(values))];
        const std::string val2 = values[r.below(std::size(values))];
        style_pair p;
        p.id = "m" + std::to_string(c.size());
        p.question = "what is the " + attr + " of the " + subj + "?";
        p.answer_neg = "the " + attr + " of the " + subj + " is " + val + " and " + val2;
        p.answer_pos = p.answer_neg;
        for (char & ch : p.answer_pos) ch = char(std::toupper(static_cast<unsigned char>(ch)));
        p.source = c.size() % 4 == 3 ? pair_source::general_qa : pair_source::target_style;
        c.pairs.push_back(std::move(p));
    }
    return c;
}

std::string mechanical_training_text(const style_corpus & corpus) {
    std::string text;
    for (const auto & p : corpus.pairs) text += "q: " + p.question + "\na: " + p.answer_neg + "\n";
    return text;
}

std::vector<std::string> mechanical_questions(size_t n, uint64_t seed) {
    rng r(seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::string> out;
    for (size_t i = 0; i < n; ++i) {
        out.push_back(std::string("tell me the ") + attributes[r.below(std::size(attributes))] + " of the " +
                      subjects[r.below(std::size(subjects))]);
    }
    return out;
}

bool is_marked(int32_t token) { return token >= 'A' && token <= 'Z'; }

size_t count_marked(std::string_view text) {
    return size_t(std::count_if(text.begin(), text.end(), [](char c) { return c >= 'A' && c <= 'Z'; }));
}

}  // namespace dress
