#include "dress/probes.h"

#include "dress/errors.h"
#include "dress/parallel.h"

#include <algorithm>
#include <tuple>

namespace dress {

std::vector<probe_sample> build_probe_dataset(const activation_store & store, hook_point hook) {
    if (!store.has_hook(hook)) {
        throw data_error("store has no hook (" + std::to_string(hook.layer) + "," + std::to_string(hook.head) + ")");
    }
    std::vector<probe_sample> out;
    out.reserve(store.n_pairs() * 2);
    for (size_t i = 0; i < store.n_pairs(); ++i) {
        for (polarity pol : {negative, positive}) {
            auto v = store.at(hook, i, pol);
            out.push_back({{v.begin(), v.end()}, pol == positive ? 1 : 0});
        }
    }
    return out;
}

const head_score * head_selection::find(hook_point h) const {
    for (const auto & s : ranked)
        if (s.hook == h) return &s;
    return nullptr;
}

namespace {

void fill_rows(const activation_store & store, hook_point hook, const std::vector<size_t> & pairs, mat & xs, std::vector<int> & ys) {
    const size_t d = store.head_dim();
    xs = mat(pairs.size() * 2, d);
    ys.assign(pairs.size() * 2, 0);
    size_t r = 0;
    for (size_t p : pairs) {
        for (polarity pol : {negative, positive}) {
            auto v = store.at(hook, p, pol);
            std::copy(v.begin(), v.end(), xs.row(r).begin());
            ys[r] = pol == positive ? 1 : 0;
            ++r;
        }
    }
}

}  // namespace

std::vector<head_score> score_heads(const activation_store & store, const probe_options & opts) {
    if (store.n_pairs() < 5) {
        throw data_error("degenerate store: " + std::to_string(store.n_pairs()) + " effective pairs, need >= 5");
    }
    const auto part = make_split(store.n_pairs(), opts.split);
    const size_t n_heads = size_t(store.n_layers()) * store.n_heads();
    std::vector<head_score> scores(n_heads);
    parallel_for(n_heads, opts.workers, [&](size_t k) {
        const hook_point hook{uint32_t(k / store.n_heads()), uint32_t(k % store.n_heads())};
        mat xtr, xva;
        std::vector<int> ytr, yva;
        fill_rows(store, hook, part.train, xtr, ytr);
        fill_rows(store, hook, part.val, xva, yva);
        auto probe = fit_logistic(xtr, ytr, opts.fit);
        scores[k] = {hook, probe_accuracy(probe, xva, yva), std::move(probe)};
    });
    return scores;
}

head_selection rank_heads(std::vector<head_score> scores, size_t H, uint32_t n_layers, bool per_layer) {
    if (H == 0 || H > scores.size()) {
        throw config_error("probe.heads = " + std::to_string(H) + " out of range [1, " + std::to_string(scores.size()) + "]");
    }
    std::stable_sort(scores.begin(), scores.end(), [](const head_score & a, const head_score & b) {
        if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
        return std::tie(a.hook.layer, a.hook.head) < std::tie(b.hook.layer, b.hook.head);
    });
    head_selection sel;
    sel.ranked = std::move(scores);
    if (!per_layer) {
        for (size_t i = 0; i < H; ++i) sel.selected.push_back(sel.ranked[i].hook);
        return sel;
    }
    if (n_layers == 0) throw config_error("per-layer selection needs the layer count");
    std::vector<size_t> quota(n_layers, H / n_layers);
    for (size_t l = 0; l < H % n_layers; ++l) ++quota[l];
    for (const auto & s : sel.ranked) {
        if (s.hook.layer < n_layers && quota[s.hook.layer] > 0) {
            --quota[s.hook.layer];
            sel.selected.push_back(s.hook);
        }
    }
    if (sel.selected.size() != H) throw config_error("per-layer quota exceeds the heads available in some layer");
    return sel;
}

head_selection select_heads(const activation_store & store, const probe_options & opts, size_t H, bool per_layer) {
    const size_t total = size_t(store.n_layers()) * store.n_heads();
    if (H == 0 || H > total) {
        throw config_error("probe.heads = " + std::to_string(H) + " out of range [1, " + std::to_string(total) + "]");
    }
    return rank_heads(score_heads(store, opts), H, store.n_layers(), per_layer);
}

}  // namespace dress
