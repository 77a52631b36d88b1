#include "dress/model.h"

#include "dress/errors.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace dress {

namespace {

constexpr uint32_t drsw_version = 1;

std::string layer_name(uint32_t l, const char * rest) {
    return "blk." + std::to_string(l) + "." + rest;
}

// out[r] = sum_c w[r, c] * x[c] (+ b[r])
void matvec(const float * w, const float * b, const float * x, float * out, size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) {
        const float * wr = w + r * cols;
        float acc = 0.0f;
        for (size_t c = 0; c < cols; ++c) {
            acc += wr[c] * x[c];
        }
        out[r] = b ? acc + b[r] : acc;
    }
}

void apply_norm(const model_config & cfg, const float * w, const float * b, const float * x, float * out) {
    const size_t n = cfg.hidden_dim;
    if (cfg.norm == norm_kind::layer_norm) {
        double mean = 0.0;
        for (size_t i = 0; i < n; ++i) mean += x[i];
        mean /= double(n);
        double var = 0.0;
        for (size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= double(n);
        const double inv = 1.0 / std::sqrt(var + double(cfg.norm_eps));
        for (size_t i = 0; i < n; ++i) {
            out[i] = float((x[i] - mean) * inv) * w[i] + b[i];
        }
    } else {
        double ms = 0.0;
        for (size_t i = 0; i < n; ++i) ms += double(x[i]) * x[i];
        ms /= double(n);
        const double inv = 1.0 / std::sqrt(ms + double(cfg.norm_eps));
        for (size_t i = 0; i < n; ++i) {
            out[i] = float(x[i] * inv) * w[i];
        }
    }
}

float activate(activation_kind k, float v) {
    if (k == activation_kind::relu) {
        return v > 0.0f ? v : 0.0f;
    }
    // tanh approximation, as in GPT-2
    const float c = 0.7978845608028654f;
    return 0.5f * v * (1.0f + std::tanh(c * (v + 0.044715f * v * v * v)));
}

// rotate-half RoPE on one head vector
void apply_rope(float * v, uint32_t d, uint32_t pos, float theta) {
    const uint32_t half = d / 2;
    for (uint32_t i = 0; i < half; ++i) {
        const double freq = std::pow(double(theta), -2.0 * double(i) / double(d));
        const double ang = double(pos) * freq;
        const float c = float(std::cos(ang));
        const float s = float(std::sin(ang));
        const float a = v[i];
        const float b = v[i + half];
        v[i] = a * c - b * s;
        v[i + half] = a * s + b * c;
    }
}

void embed(const model_bundle & m, int32_t token, uint32_t pos, float * x) {
    const auto & cfg = m.config();
    if (token < 0 || uint32_t(token) >= cfg.vocab_size) {
        throw data_error("token id " + std::to_string(token) + " outside vocabulary");
    }
    const float * e = m.tok_emb() + size_t(token) * cfg.hidden_dim;
    for (uint32_t i = 0; i < cfg.hidden_dim; ++i) {
        x[i] = e[i];
    }
    if (cfg.positional == positional_kind::learned) {
        const float * p = m.pos_emb() + size_t(pos) * cfg.hidden_dim;
        for (uint32_t i = 0; i < cfg.hidden_dim; ++i) {
            x[i] += p[i];
        }
    }
}

void mlp_residual(const model_bundle & m, const model_bundle::layer_view & lw, float * x, float * h, float * up) {
    const auto & cfg = m.config();
    apply_norm(cfg, lw.mlp_norm_w, lw.mlp_norm_b, x, h);
    matvec(lw.up_w, lw.up_b, h, up, cfg.mlp_dim, cfg.hidden_dim);
    for (uint32_t i = 0; i < cfg.mlp_dim; ++i) {
        up[i] = activate(cfg.activation, up[i]);
    }
    matvec(lw.down_w, lw.down_b, up, h, cfg.hidden_dim, cfg.mlp_dim);
    for (uint32_t i = 0; i < cfg.hidden_dim; ++i) {
        x[i] += h[i];
    }
}

void output_head(const model_bundle & m, const float * x, float * normed, float * logits) {
    const auto & cfg = m.config();
    apply_norm(cfg, m.out_norm_w(), m.out_norm_b(), x, normed);
    matvec(m.lm_head(), nullptr, normed, logits, cfg.vocab_size, cfg.hidden_dim);
}

}  // namespace

void model_config::validate() const {
    auto fail = [](const std::string & why) { throw model_error("config invariant violated: " + why); };
    if (n_layers == 0 || n_heads == 0 || head_dim == 0 || hidden_dim == 0 || mlp_dim == 0 || vocab_size == 0 ||
        max_context == 0) {
        fail("all counts must be >= 1");
    }
    if (uint64_t(n_heads) * head_dim != hidden_dim) {
        fail("hidden_dim (" + std::to_string(hidden_dim) + ") != n_heads x head_dim (" + std::to_string(n_heads) + "x" +
             std::to_string(head_dim) + ")");
    }
    if (positional == positional_kind::rope && head_dim % 2 != 0) {
        fail("rope needs an even head_dim");
    }
    if (uint8_t(tokenizer) > 1 || uint8_t(norm) > 1 || uint8_t(activation) > 1 || uint8_t(positional) > 1) {
        fail("unsupported architecture variant");
    }
    if (tokenizer == tokenizer_kind::byte && vocab_size < 257) {
        fail("byte tokenizer needs vocab_size >= 257");
    }
    if (tokenizer == tokenizer_kind::bpe && (vocab_path.empty() || merges_path.empty())) {
        fail("bpe tokenizer needs vocab and merges paths");
    }
    if (eos_id >= int64_t(vocab_size)) {
        fail("eos id outside vocabulary");
    }
    if (!(norm_eps > 0.0f) || !std::isfinite(rope_theta)) {
        fail("bad norm_eps / rope_theta");
    }
    if (!chat_template.empty() &&
        (chat_template.find("{q}") == std::string::npos || chat_template.find("{a}") == std::string::npos)) {
        fail("chat template must contain {q} and {a}");
    }
}

std::vector<std::pair<std::string, std::vector<uint32_t>>> model_config::layer_plan() const {
    std::vector<std::pair<std::string, std::vector<uint32_t>>> plan;
    const bool ln = norm == norm_kind::layer_norm;
    plan.push_back({"tok_emb", {vocab_size, hidden_dim}});
    if (positional == positional_kind::learned) {
        plan.push_back({"pos_emb", {max_context, hidden_dim}});
    }
    for (uint32_t l = 0; l < n_layers; ++l) {
        plan.push_back({layer_name(l, "attn_norm.weight"), {hidden_dim}});
        if (ln) plan.push_back({layer_name(l, "attn_norm.bias"), {hidden_dim}});
        for (const char * p : {"q", "k", "v"}) {
            plan.push_back({layer_name(l, (std::string("attn.") + p + ".weight").c_str()), {n_heads, head_dim, hidden_dim}});
            plan.push_back({layer_name(l, (std::string("attn.") + p + ".bias").c_str()), {n_heads, head_dim}});
        }
        plan.push_back({layer_name(l, "attn.o.weight"), {hidden_dim, hidden_dim}});
        plan.push_back({layer_name(l, "attn.o.bias"), {hidden_dim}});
        plan.push_back({layer_name(l, "mlp_norm.weight"), {hidden_dim}});
        if (ln) plan.push_back({layer_name(l, "mlp_norm.bias"), {hidden_dim}});
        plan.push_back({layer_name(l, "mlp.up.weight"), {mlp_dim, hidden_dim}});
        plan.push_back({layer_name(l, "mlp.up.bias"), {mlp_dim}});
        plan.push_back({layer_name(l, "mlp.down.weight"), {hidden_dim, mlp_dim}});
        plan.push_back({layer_name(l, "mlp.down.bias"), {hidden_dim}});
    }
    plan.push_back({"out_norm.weight", {hidden_dim}});
    if (ln) plan.push_back({"out_norm.bias", {hidden_dim}});
    if (!tie_embeddings) {
        plan.push_back({"lm_head", {vocab_size, hidden_dim}});
    }
    return plan;
}

model_bundle::model_bundle(model_config config, std::map<std::string, tensor> tensors, std::filesystem::path asset_dir)
    : config_(std::move(config)), tensors_(std::move(tensors)) {
    config_.validate();
    const auto plan = config_.layer_plan();
    for (const auto & [name, dims] : plan) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) {
            throw model_error("missing tensor " + name);
        }
        if (it->second.dims != dims) {
            throw model_error("shape mismatch for tensor " + name);
        }
        size_t count = 1;
        for (uint32_t d : dims) count *= d;
        if (it->second.data.size() != count) {
            throw model_error("data length mismatch for tensor " + name);
        }
        for (float v : it->second.data) {
            if (!std::isfinite(v)) {
                throw model_error("non-finite weight in " + name);
            }
        }
    }
    if (tensors_.size() != plan.size()) {
        for (const auto & [name, t] : tensors_) {
            if (std::none_of(plan.begin(), plan.end(), [&](const auto & p) { return p.first == name; })) {
                throw model_error("unexpected tensor " + name);
            }
        }
    }
    if (config_.tokenizer == tokenizer_kind::byte) {
        tokenizer_ = std::make_shared<tokenizer>(tokenizer::byte_level());
    } else {
        tokenizer_ = std::make_shared<tokenizer>(
            tokenizer::from_bpe_files(asset_dir / config_.vocab_path, asset_dir / config_.merges_path));
    }
    if (tokenizer_->vocab_size() > config_.vocab_size) {
        throw model_error("tokenizer vocabulary larger than the model's");
    }
    bind();
    hash_ = sha256_of(serialize());
}

void model_bundle::bind() {
    auto ptr = [&](const std::string & name) -> const float * {
        auto it = tensors_.find(name);
        return it == tensors_.end() ? nullptr : it->second.data.data();
    };
    tok_emb_ = ptr("tok_emb");
    pos_emb_ = ptr("pos_emb");
    out_norm_w_ = ptr("out_norm.weight");
    out_norm_b_ = ptr("out_norm.bias");
    lm_head_ = config_.tie_embeddings ? tok_emb_ : ptr("lm_head");
    layers_.clear();
    for (uint32_t l = 0; l < config_.n_layers; ++l) {
        layers_.push_back(layer_view{
            ptr(layer_name(l, "attn_norm.weight")), ptr(layer_name(l, "attn_norm.bias")),
            ptr(layer_name(l, "attn.q.weight")),    ptr(layer_name(l, "attn.q.bias")),
            ptr(layer_name(l, "attn.k.weight")),    ptr(layer_name(l, "attn.k.bias")),
            ptr(layer_name(l, "attn.v.weight")),    ptr(layer_name(l, "attn.v.bias")),
            ptr(layer_name(l, "attn.o.weight")),    ptr(layer_name(l, "attn.o.bias")),
            ptr(layer_name(l, "mlp_norm.weight")),  ptr(layer_name(l, "mlp_norm.bias")),
            ptr(layer_name(l, "mlp.up.weight")),    ptr(layer_name(l, "mlp.up.bias")),
            ptr(layer_name(l, "mlp.down.weight")),  ptr(layer_name(l, "mlp.down.bias")),
        });
    }
}

const tensor & model_bundle::get(const std::string & name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw model_error("missing tensor " + name);
    }
    return it->second;
}

std::vector<uint8_t> model_bundle::serialize() const {
    byte_writer w;
    w.put_magic("DRSW");
    w.put_u32(drsw_version);
    const auto & c = config_;
    for (uint32_t v : {c.n_layers, c.n_heads, c.head_dim, c.hidden_dim, c.mlp_dim, c.vocab_size, c.max_context}) {
        w.put_u32(v);
    }
    w.put_u8(uint8_t(c.tokenizer));
    w.put_u8(uint8_t(c.norm));
    w.put_u8(uint8_t(c.activation));
    w.put_u8(uint8_t(c.positional));
    w.put_u8(c.tie_embeddings ? 1 : 0);
    w.put_f32(c.norm_eps);
    w.put_f32(c.rope_theta);
    w.put_i32(c.eos_id);
    w.put_string(c.vocab_path);
    w.put_string(c.merges_path);
    w.put_string(c.chat_template);
    w.put_u32(uint32_t(tensors_.size()));
    for (const auto & [name, t] : tensors_) {
        w.put_string(name);
        w.put_u32(uint32_t(t.dims.size()));
        for (uint32_t d : t.dims) w.put_u32(d);
        w.put_bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t *>(t.data.data()), t.data.size() * 4));
    }
    w.finish_with_crc();
    return w.take();
}

std::string model_bundle::format_pair(std::string_view question, std::string_view answer) const {
    std::string tpl = config_.chat_template.empty() ? std::string("Q: {q}\nA: {a}") : config_.chat_template;
    const size_t qp = tpl.find("{q}");
    tpl.replace(qp, 3, question);
    const size_t ap = tpl.find("{a}", qp + question.size());
    tpl.replace(ap, 3, answer);
    return tpl;
}

std::string model_bundle::format_prompt(std::string_view question) const {
    std::string full = format_pair(question, "");
    return full;
}

model_bundle parse_model(std::span<const uint8_t> bytes, const std::filesystem::path & asset_dir) try {
    byte_reader r(bytes);
    r.expect_magic("DRSW", "model");
    const uint32_t version = r.get_u32();
    if (version != drsw_version) {
        throw model_error("model: unsupported DRSW version " + std::to_string(version));
    }
    model_config c;
    c.n_layers = r.get_u32();
    c.n_heads = r.get_u32();
    c.head_dim = r.get_u32();
    c.hidden_dim = r.get_u32();
    c.mlp_dim = r.get_u32();
    c.vocab_size = r.get_u32();
    c.max_context = r.get_u32();
    c.tokenizer = tokenizer_kind(r.get_u8());
    c.norm = norm_kind(r.get_u8());
    c.activation = activation_kind(r.get_u8());
    c.positional = positional_kind(r.get_u8());
    c.tie_embeddings = r.get_u8() != 0;
    c.norm_eps = r.get_f32();
    c.rope_theta = r.get_f32();
    c.eos_id = r.get_i32();
    c.vocab_path = r.get_string();
    c.merges_path = r.get_string();
    c.chat_template = r.get_string();
    c.validate();

    std::map<std::string, tensor> tensors;
    const uint32_t count = r.get_u32();
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_string();
        tensor t;
        const uint32_t rank = r.get_u32();
        if (rank > 8) {
            throw model_error("model: tensor " + name + " has rank " + std::to_string(rank));
        }
        size_t n = 1;
        for (uint32_t k = 0; k < rank; ++k) {
            t.dims.push_back(r.get_u32());
            n *= t.dims.back();
        }
        if (n > r.remaining() / 4) {
            throw data_error("unexpected EOF");
        }
        t.data.resize(n);
        r.get_bytes(std::span<uint8_t>(reinterpret_cast<uint8_t *>(t.data.data()), n * 4));
        if (!tensors.emplace(std::move(name), std::move(t)).second) {
            throw model_error("model: duplicate tensor");
        }
    }
    r.finish_crc("model");
    return model_bundle(std::move(c), std::move(tensors), asset_dir);
} catch (const data_error & e) {
    // a damaged model file is a model error, whatever layer noticed it
    throw model_error(e.what());
}

model_bundle load_model(const std::filesystem::path & path) {
    const auto bytes = read_file_bytes(path);
    return parse_model(bytes, path.parent_path());
}

void save_model(const model_bundle & bundle, const std::filesystem::path & path) {
    write_file_bytes(path, bundle.serialize());
}

std::vector<int32_t> tokenize(const model_bundle & bundle, std::string_view text) { return bundle.tok().encode(text); }

std::string detokenize(const model_bundle & bundle, std::span<const int32_t> ids) { return bundle.tok().decode(ids); }

std::vector<hook_point> all_hooks(const model_config & config) {
    std::vector<hook_point> hooks;
    for (uint32_t l = 0; l < config.n_layers; ++l) {
        for (uint32_t h = 0; h < config.n_heads; ++h) {
            hooks.push_back({l, h});
        }
    }
    return hooks;
}

int32_t argmax(std::span<const float> logits) {
    int32_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[size_t(best)]) {
            best = int32_t(i);
        }
    }
    return best;
}

forward_result forward_capture(const model_bundle & bundle, std::span<const int32_t> tokens, const capture_options & capture) {
    const auto & cfg = bundle.config();
    const uint32_t T = uint32_t(tokens.size());
    if (T > cfg.max_context) {
        throw data_error("context overflow: " + std::to_string(T) + " tokens > max_context " + std::to_string(cfg.max_context));
    }
    for (const auto & h : capture.hooks) {
        if (h.layer >= cfg.n_layers || h.head >= cfg.n_heads) {
            throw std::invalid_argument("hook (" + std::to_string(h.layer) + "," + std::to_string(h.head) + ") out of range");
        }
    }
    const uint32_t H = cfg.hidden_dim;
    const uint32_t d = cfg.head_dim;
    const float scale = 1.0f / std::sqrt(float(d));

    // per-layer capture mask
    std::vector<std::vector<bool>> wanted(cfg.n_layers, std::vector<bool>(cfg.n_heads, false));
    for (const auto & h : capture.hooks) wanted[h.layer][h.head] = true;

    forward_result res;
    res.n_positions = T;
    res.vocab = cfg.vocab_size;
    res.hidden = H;

    std::vector<float> x(size_t(T) * H), hn(size_t(T) * H), q(size_t(T) * H), k(size_t(T) * H), v(size_t(T) * H),
        u(size_t(T) * H), attn(H), up(cfg.mlp_dim), scores(T);
    for (uint32_t t = 0; t < T; ++t) {
        embed(bundle, tokens[t], t, &x[size_t(t) * H]);
    }
    for (uint32_t l = 0; l < cfg.n_layers; ++l) {
        const auto & lw = bundle.layer(l);
        for (uint32_t t = 0; t < T; ++t) {
            apply_norm(cfg, lw.attn_norm_w, lw.attn_norm_b, &x[size_t(t) * H], &hn[size_t(t) * H]);
            matvec(lw.wq, lw.bq, &hn[size_t(t) * H], &q[size_t(t) * H], H, H);
            matvec(lw.wk, lw.bk, &hn[size_t(t) * H], &k[size_t(t) * H], H, H);
            matvec(lw.wv, lw.bv, &hn[size_t(t) * H], &v[size_t(t) * H], H, H);
            if (cfg.positional == positional_kind::rope) {
                for (uint32_t h = 0; h < cfg.n_heads; ++h) {
                    apply_rope(&q[size_t(t) * H + h * d], d, t, cfg.rope_theta);
                    apply_rope(&k[size_t(t) * H + h * d], d, t, cfg.rope_theta);
                }
            }
        }
        // causal attention, all positions
        for (uint32_t h = 0; h < cfg.n_heads; ++h) {
            for (uint32_t t = 0; t < T; ++t) {
                const float * qt = &q[size_t(t) * H + h * d];
                float mx = -std::numeric_limits<float>::infinity();
                for (uint32_t s = 0; s <= t; ++s) {
                    const float * ks = &k[size_t(s) * H + h * d];
                    float acc = 0.0f;
                    for (uint32_t j = 0; j < d; ++j) acc += qt[j] * ks[j];
                    scores[s] = acc * scale;
                    mx = std::max(mx, scores[s]);
                }
                float denom = 0.0f;
                for (uint32_t s = 0; s <= t; ++s) {
                    scores[s] = std::exp(scores[s] - mx);
                    denom += scores[s];
                }
                float * ut = &u[size_t(t) * H + h * d];
                std::fill(ut, ut + d, 0.0f);
                for (uint32_t s = 0; s <= t; ++s) {
                    const float p = scores[s] / denom;
                    const float * vs = &v[size_t(s) * H + h * d];
                    for (uint32_t j = 0; j < d; ++j) ut[j] += p * vs[j];
                }
                if (wanted[l][h] && (!capture.last_position_only || t + 1 == T)) {
                    res.records.push_back({{l, h}, t, std::vector<double>(ut, ut + d)});
                }
            }
        }
        for (uint32_t t = 0; t < T; ++t) {
            float * xt = &x[size_t(t) * H];
            matvec(lw.wo, lw.bo, &u[size_t(t) * H], attn.data(), H, H);
            for (uint32_t i = 0; i < H; ++i) xt[i] += attn[i];
            mlp_residual(bundle, lw, xt, &hn[size_t(t) * H], up.data());
        }
    }
    res.logits.resize(size_t(T) * cfg.vocab_size);
    res.final_hidden.resize(size_t(T) * H);
    for (uint32_t t = 0; t < T; ++t) {
        output_head(bundle, &x[size_t(t) * H], &res.final_hidden[size_t(t) * H], &res.logits[size_t(t) * cfg.vocab_size]);
    }
    // records come out layer-major; order them (position, layer, head) for callers
    std::stable_sort(res.records.begin(), res.records.end(), [](const activation_record & a, const activation_record & b) {
        return std::tie(a.position, a.hook) < std::tie(b.position, b.hook);
    });
    return res;
}

decode_session::decode_session(const model_bundle & bundle, edit_callback * edit, uint32_t edit_from)
    : bundle_(bundle), edit_(edit), edit_from_(edit_from) {
    const auto & cfg = bundle.config();
    const size_t H = cfg.hidden_dim;
    k_cache_.assign(cfg.n_layers, std::vector<float>(size_t(cfg.max_context) * H));
    v_cache_.assign(cfg.n_layers, std::vector<float>(size_t(cfg.max_context) * H));
    x_.resize(H);
    h_.resize(H);
    q_.resize(H);
    attn_.resize(size_t(cfg.max_context));
    mix_.resize(H);
    up_.resize(cfg.mlp_dim);
    logits_.resize(cfg.vocab_size);
    u64_.resize(cfg.head_dim);
    delta64_.resize(cfg.head_dim);
    block64_.resize(H);
    pre_.resize(cfg.head_dim);
}

std::span<const float> decode_session::step(int32_t token) {
    const auto & cfg = bundle_.config();
    if (pos_ >= cfg.max_context) {
        throw data_error("context overflow: position " + std::to_string(pos_) + " >= max_context");
    }
    const uint32_t H = cfg.hidden_dim;
    const uint32_t d = cfg.head_dim;
    const float scale = 1.0f / std::sqrt(float(d));
    const bool editing = edit_ && pos_ >= edit_from_;

    embed(bundle_, token, pos_, x_.data());
    std::vector<float> head_out(H);
    for (uint32_t l = 0; l < cfg.n_layers; ++l) {
        const auto & lw = bundle_.layer(l);
        float * kc = &k_cache_[l][size_t(pos_) * H];
        float * vc = &v_cache_[l][size_t(pos_) * H];
        apply_norm(cfg, lw.attn_norm_w, lw.attn_norm_b, x_.data(), h_.data());
        matvec(lw.wq, lw.bq, h_.data(), q_.data(), H, H);
        matvec(lw.wk, lw.bk, h_.data(), kc, H, H);
        matvec(lw.wv, lw.bv, h_.data(), vc, H, H);
        if (cfg.positional == positional_kind::rope) {
            for (uint32_t h = 0; h < cfg.n_heads; ++h) {
                apply_rope(&q_[h * d], d, pos_, cfg.rope_theta);
                apply_rope(&kc[h * d], d, pos_, cfg.rope_theta);
            }
        }
        for (uint32_t h = 0; h < cfg.n_heads; ++h) {
            float mx = -std::numeric_limits<float>::infinity();
            for (uint32_t s = 0; s <= pos_; ++s) {
                const float * ks = &k_cache_[l][size_t(s) * H + h * d];
                float acc = 0.0f;
                for (uint32_t j = 0; j < d; ++j) acc += q_[h * d + j] * ks[j];
                attn_[s] = acc * scale;
                mx = std::max(mx, attn_[s]);
            }
            float denom = 0.0f;
            for (uint32_t s = 0; s <= pos_; ++s) {
                attn_[s] = std::exp(attn_[s] - mx);
                denom += attn_[s];
            }
            float * u = &head_out[h * d];
            std::fill(u, u + d, 0.0f);
            for (uint32_t s = 0; s <= pos_; ++s) {
                const float p = attn_[s] / denom;
                const float * vs = &v_cache_[l][size_t(s) * H + h * d];
                for (uint32_t j = 0; j < d; ++j) u[j] += p * vs[j];
            }
            const hook_point hook{l, h};
            if (observer_) {
                std::copy(u, u + d, pre_.begin());
            }
            if (editing && edit_->wants(hook)) {
                for (uint32_t j = 0; j < d; ++j) u64_[j] = u[j];
                std::fill(delta64_.begin(), delta64_.end(), 0.0);
                if (edit_->head_delta(hook, pos_, u64_, delta64_)) {
                    for (uint32_t j = 0; j < d; ++j) {
                        u[j] = float(u64_[j] + delta64_[j]);
                    }
                }
            }
            if (observer_) {
                observer_(hook, pos_, pre_, std::span<const float>(u, d));
            }
        }
        matvec(lw.wo, lw.bo, head_out.data(), mix_.data(), H, H);
        if (editing) {
            std::fill(block64_.begin(), block64_.end(), 0.0);
            if (edit_->block_delta(l, pos_, block64_)) {
                for (uint32_t i = 0; i < H; ++i) mix_[i] = float(mix_[i] + block64_[i]);
            }
        }
        for (uint32_t i = 0; i < H; ++i) x_[i] += mix_[i];
        mlp_residual(bundle_, lw, x_.data(), h_.data(), up_.data());
    }
    output_head(bundle_, x_.data(), h_.data(), logits_.data());
    ++pos_;
    return logits_;
}

std::vector<int32_t> generate(const model_bundle & bundle, std::span<const int32_t> prompt, edit_callback * edit,
                              const generate_options & opts) {
    const auto & cfg = bundle.config();
    if (prompt.empty()) {
        throw std::invalid_argument("generate: empty prompt");
    }
    if (prompt.size() + opts.max_new > cfg.max_context) {
        throw data_error("context overflow: prompt " + std::to_string(prompt.size()) + " + max_new " +
                         std::to_string(opts.max_new) + " > max_context " + std::to_string(cfg.max_context));
    }
    std::vector<int32_t> out;
    if (opts.max_new == 0) {
        return out;
    }
    decode_session session(bundle, edit, uint32_t(prompt.size()));
    std::span<const float> logits;
    for (int32_t t : prompt) {
        logits = session.step(t);
    }
    for (uint32_t i = 0; i < opts.max_new; ++i) {
        const int32_t next = argmax(logits);
        if (opts.stop_at_eos && cfg.eos_id >= 0 && next == cfg.eos_id) {
            break;
        }
        out.push_back(next);
        if (i + 1 < opts.max_new) {
            logits = session.step(next);
        }
    }
    return out;
}

}  // namespace dress
