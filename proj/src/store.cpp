#include "dress/store.h"

#include "dress/errors.h"
#include "dress/parallel.h"

namespace dress {

namespace {
constexpr uint32_t drsa_version = 1;
}

activation_store::activation_store(uint32_t n_layers, uint32_t n_heads, uint32_t head_dim, std::vector<std::string> pair_ids,
                                   std::vector<std::string> skipped_ids)
    : n_layers_(n_layers),
      n_heads_(n_heads),
      head_dim_(head_dim),
      pair_ids_(std::move(pair_ids)),
      skipped_ids_(std::move(skipped_ids)),
      data_(size_t(n_layers) * n_heads * pair_ids_.size() * 2 * head_dim, 0.0) {}

size_t activation_store::offset(hook_point h, size_t pair, polarity pol) const {
    if (!has_hook(h)) {
        throw std::out_of_range("store has no hook (" + std::to_string(h.layer) + "," + std::to_string(h.head) + ")");
    }
    if (pair >= pair_ids_.size()) throw std::out_of_range("store pair index out of range");
    return ((((size_t(h.layer) * n_heads_ + h.head) * pair_ids_.size() + pair) * 2) + pol) * head_dim_;
}

std::span<const double> activation_store::at(hook_point h, size_t pair, polarity pol) const {
    return {data_.data() + offset(h, pair, pol), head_dim_};
}

std::span<double> activation_store::at(hook_point h, size_t pair, polarity pol) {
    return {data_.data() + offset(h, pair, pol), head_dim_};
}

std::vector<uint8_t> activation_store::serialize() const {
    byte_writer w;
    w.put_magic("DRSA");
    w.put_u32(drsa_version);
    w.put_u32(n_layers_);
    w.put_u32(n_heads_);
    w.put_u32(head_dim_);
    w.put_u32(uint32_t(pair_ids_.size()));
    for (const auto & id : pair_ids_) w.put_string(id);
    w.put_u32(uint32_t(skipped_ids_.size()));
    for (const auto & id : skipped_ids_) w.put_string(id);
    for (double v : data_) w.put_f64(v);
    w.finish_with_crc();
    return w.take();
}

activation_store activation_store::parse(std::span<const uint8_t> bytes) {
    byte_reader r(bytes);
    r.expect_magic("DRSA", "activation store");
    if (r.get_u32() != drsa_version) throw data_error("activation store: unsupported version");
    const uint32_t L = r.get_u32(), H = r.get_u32(), d = r.get_u32();
    std::vector<std::string> ids(r.get_u32());
    for (auto & id : ids) id = r.get_string();
    std::vector<std::string> skipped(r.get_u32());
    for (auto & id : skipped) id = r.get_string();
    const size_t n = size_t(L) * H * ids.size() * 2 * d;
    if (n > r.remaining() / 8) throw data_error("unexpected EOF");
    activation_store s(L, H, d, std::move(ids), std::move(skipped));
    for (double & v : s.data_) v = r.get_f64();
    r.finish_crc("activation store");
    return s;
}

activation_store load_store(const std::filesystem::path & path) { return activation_store::parse(read_file_bytes(path)); }

void save_store(const activation_store & store, const std::filesystem::path & path) { write_file_bytes(path, store.serialize()); }

activation_store extract_last_token_activations(const model_bundle & bundle, const style_corpus & corpus, size_t workers,
                                                extract_report * report) {
    const auto & cfg = bundle.config();
    struct item {
        size_t pair;
        std::vector<int32_t> tokens[2];
    };
    std::vector<item> items;
    std::vector<std::string> ids, skipped;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const auto & p = corpus.pairs[i];
        if (p.answer_neg.empty() || p.answer_pos.empty()) {
            throw data_error("pair '" + p.id + "' is missing an answer; run augmentation first");
        }
        item it{i, {tokenize(bundle, bundle.format_pair(p.question, p.answer_neg)),
                    tokenize(bundle, bundle.format_pair(p.question, p.answer_pos))}};
        const size_t longest = std::max(it.tokens[0].size(), it.tokens[1].size());
        if (longest > cfg.max_context) {
            skipped.push_back(p.id);
            if (report) {
                report->warnings.push_back("pair '" + p.id + "' skipped: " + std::to_string(longest) + " tokens > max_context " +
                                           std::to_string(cfg.max_context));
            }
            continue;
        }
        ids.push_back(p.id);
        items.push_back(std::move(it));
    }
    activation_store store(cfg.n_layers, cfg.n_heads, cfg.head_dim, std::move(ids), std::move(skipped));
    capture_options cap{all_hooks(cfg), true};
    // each task owns a disjoint slice of the store, so no merging step is needed
    parallel_for(items.size() * 2, workers, [&](size_t job) {
        const size_t e = job / 2;
        const polarity pol = polarity(job % 2);
        auto res = forward_capture(bundle, items[e].tokens[pol], cap);
        for (const auto & rec : res.records) {
            auto dst = store.at(rec.hook, e, pol);
            std::copy(rec.vector.begin(), rec.vector.end(), dst.begin());
        }
    });
    return store;
}

}  // namespace dress
