#include "dress/subspace.h"

#include "dress/errors.h"
#include "dress/parallel.h"

#include <cmath>
#include <set>

namespace dress {

namespace {
constexpr uint32_t drss_version = 1;

std::string hook_str(hook_point h) { return "(" + std::to_string(h.layer) + "," + std::to_string(h.head) + ")"; }

void require_hook(const activation_store & store, hook_point hook) {
    if (!store.has_hook(hook)) throw data_error("store has no hook " + hook_str(hook));
}

// flips v so that <target, v> >= 0; exact zeros fall back to the first nonzero component
bool orient_row(std::span<double> v, double projection) {
    bool flip = projection < 0.0;
    if (projection == 0.0) {
        for (double c : v) {
            if (c != 0.0) {
                flip = c < 0.0;
                break;
            }
        }
    }
    if (flip)
        for (double & c : v) c = -c;
    return flip;
}

void put_vec(byte_writer & w, std::span<const double> v) {
    for (double x : v) w.put_f64(x);
}

std::vector<double> get_vec(byte_reader & r, size_t n) {
    std::vector<double> v(n);
    for (double & x : v) x = r.get_f64();
    return v;
}

void put_mat(byte_writer & w, const mat & m) {
    w.put_u32(uint32_t(m.rows));
    w.put_u32(uint32_t(m.cols));
    put_vec(w, m.data);
}

mat get_mat(byte_reader & r) {
    const uint32_t rows = r.get_u32(), cols = r.get_u32();
    if (size_t(rows) * cols > r.remaining() / 8) throw data_error("unexpected EOF");
    return mat(rows, cols, get_vec(r, size_t(rows) * cols));
}

}  // namespace

mat build_diff_matrix(const activation_store & store, hook_point hook) {
    require_hook(store, hook);
    mat m(store.n_pairs(), store.head_dim());
    for (size_t i = 0; i < store.n_pairs(); ++i) {
        auto p = store.at(hook, i, positive);
        auto n = store.at(hook, i, negative);
        auto row = m.row(i);
        for (size_t j = 0; j < row.size(); ++j) row[j] = p[j] - n[j];
    }
    return m;
}

std::vector<double> polarity_mean(const activation_store & store, hook_point hook, polarity pol) {
    require_hook(store, hook);
    const size_t d = store.head_dim();
    std::vector<compensated_sum> acc(d);
    for (size_t i = 0; i < store.n_pairs(); ++i) {
        auto v = store.at(hook, i, pol);
        for (size_t j = 0; j < d; ++j) acc[j].add(v[j]);
    }
    std::vector<double> out(d, 0.0);
    if (store.n_pairs() == 0) return out;
    for (size_t j = 0; j < d; ++j) out[j] = acc[j].value() / double(store.n_pairs());
    return out;
}

head_subspace extract_subspace(const mat & diff, std::span<const double> u_plus_mean, hook_point hook,
                               const subspace_options & opts, std::vector<std::string> * warnings) {
    const size_t d = diff.cols;
    const size_t K = opts.rank;
    if (diff.rows == 0) throw data_error("head " + hook_str(hook) + ": no effective pairs");
    if (K == 0 || K > d) {
        throw config_error("subspace.rank = " + std::to_string(K) + " out of range [1, " + std::to_string(d) + "]");
    }
    if (u_plus_mean.size() != d) throw std::invalid_argument("u_plus_mean has the wrong length");
    if (std::all_of(diff.data.begin(), diff.data.end(), [](double v) { return v == 0.0; })) {
        throw data_error("head " + hook_str(hook) + ": no style signal (all-zero difference matrix)");
    }

    // mean difference
    std::vector<compensated_sum> acc(d);
    for (size_t i = 0; i < diff.rows; ++i)
        for (size_t j = 0; j < d; ++j) acc[j].add(diff(i, j));
    std::vector<double> mean_diff(d);
    for (size_t j = 0; j < d; ++j) mean_diff[j] = acc[j].value() / double(diff.rows);

    const bool want_irrelevant = opts.irrelevant_probe && K + 2 <= d;
    // all d directions: covers K above the rank and the two directions past K
    svd_result svd = svd_full(diff);

    head_subspace hs;
    hs.hook = hook;
    hs.basis = mat(K, d);
    hs.betas.resize(K);
    hs.sigma.assign(svd.singular_values.begin(), svd.singular_values.begin() + long(K));
    hs.u_plus_mean.assign(u_plus_mean.begin(), u_plus_mean.end());
    const double tiny = 1e-12 * std::max(1.0, svd.singular_values.front());
    size_t completed = 0;
    for (size_t i = 0; i < K; ++i) {
        auto row = hs.basis.row(i);
        std::copy(svd.right_vectors.row(i).begin(), svd.right_vectors.row(i).end(), row.begin());
        double b = dot(mean_diff, row);
        if (opts.orient && orient_row(row, b)) b = -b;
        hs.betas[i] = b;
        if (hs.sigma[i] <= tiny) ++completed;
    }
    if (completed && warnings) {
        warnings->push_back("head " + hook_str(hook) + ": rank " + std::to_string(K) + " exceeds the numerical rank; " +
                            std::to_string(completed) + " zero-sigma completion direction(s)");
    }
    if (want_irrelevant) {
        mat irr(2, d);
        for (size_t i = 0; i < 2; ++i) {
            auto src = svd.right_vectors.row(K + i);
            std::copy(src.begin(), src.end(), irr.row(i).begin());
        }
        hs.irrelevant = std::move(irr);
    }
    return hs;
}

head_subspace extract_subspace(const activation_store & store, hook_point hook, const subspace_options & opts,
                               std::vector<std::string> * warnings) {
    return extract_subspace(build_diff_matrix(store, hook), polarity_mean(store, hook, positive), hook, opts, warnings);
}

const artifact_head * style_artifact::find(hook_point h) const {
    for (const auto & e : heads)
        if (e.subspace.hook == h) return &e;
    return nullptr;
}

void style_artifact::validate() const {
    auto fail = [](const std::string & why) { throw invariant_error("artifact: " + why); };
    if (heads.empty()) fail("no heads");
    if (heads.size() != n_selected) fail("head count does not match H");
    if (!std::isfinite(lambda) || lambda < 0.0) fail("lambda must be finite and >= 0");
    std::set<hook_point> seen;
    for (const auto & e : heads) {
        const auto & s = e.subspace;
        if (!seen.insert(s.hook).second) fail("duplicate head " + hook_str(s.hook));
        if (n_layers && (s.hook.layer >= n_layers || s.hook.head >= n_heads)) fail("head " + hook_str(s.hook) + " out of range");
        if (s.basis.rows != rank || s.betas.size() != rank || s.sigma.size() != rank) fail("K mismatch at " + hook_str(s.hook));
        if (s.basis.cols != head_dim || s.u_plus_mean.size() != head_dim) fail("d mismatch at " + hook_str(s.hook));
        for (size_t i = 0; i < rank; ++i) {
            for (size_t j = 0; j < rank; ++j) {
                const double g = dot(s.basis.row(i), s.basis.row(j));
                if (std::abs(g - (i == j ? 1.0 : 0.0)) > 1e-8) fail("basis not orthonormal at " + hook_str(s.hook));
            }
            if (provenance.oriented && s.betas[i] < 0.0) fail("negative beta at " + hook_str(s.hook));
        }
    }
    if (!repe.empty() && repe.size() != size_t(n_layers) * n_heads) fail("RepE table size");
    if (!layer_mean_diff.empty() && layer_mean_diff.size() != n_layers) fail("layer mean table size");
}

std::vector<uint8_t> style_artifact::serialize() const {
    byte_writer w;
    w.put_magic("DRSS");
    w.put_u32(drss_version);
    w.put_bytes(model_hash);
    w.put_f64(lambda);
    w.put_u32(rank);
    w.put_u32(n_selected);
    w.put_u32(n_layers);
    w.put_u32(n_heads);
    w.put_u32(head_dim);
    w.put_u32(hidden_dim);
    w.put_u32(uint32_t(heads.size()));
    for (const auto & e : heads) {
        const auto & s = e.subspace;
        w.put_u32(s.hook.layer);
        w.put_u32(s.hook.head);
        put_mat(w, s.basis);
        put_vec(w, s.betas);
        put_vec(w, s.u_plus_mean);
        put_vec(w, s.sigma);
        w.put_u8(s.irrelevant ? 1 : 0);
        if (s.irrelevant) put_mat(w, *s.irrelevant);
        w.put_f64(e.val_accuracy);
        w.put_u32(uint32_t(e.probe.weights.size()));
        put_vec(w, e.probe.weights);
        w.put_f64(e.probe.bias);
        w.put_f64(e.iti_scale);
    }
    w.put_u32(uint32_t(all_scores.size()));
    for (const auto & [h, acc] : all_scores) {
        w.put_u32(h.layer);
        w.put_u32(h.head);
        w.put_f64(acc);
    }
    w.put_u32(uint32_t(repe.size()));
    for (const auto & e : repe) {
        w.put_u32(e.hook.layer);
        w.put_u32(e.hook.head);
        w.put_f64(e.beta1);
        w.put_u32(uint32_t(e.v1.size()));
        put_vec(w, e.v1);
    }
    w.put_u32(uint32_t(layer_mean_diff.size()));
    for (const auto & v : layer_mean_diff) {
        w.put_u32(uint32_t(v.size()));
        put_vec(w, v);
    }
    w.put_string(provenance.corpus_digest);
    w.put_string(provenance.store_digest);
    w.put_u64(provenance.split_seed);
    w.put_f64(provenance.train_fraction);
    w.put_u8(provenance.oriented ? 1 : 0);
    w.finish_with_crc();
    return w.take();
}

style_artifact style_artifact::parse(std::span<const uint8_t> bytes) {
    byte_reader r(bytes);
    r.expect_magic("DRSS", "style artifact");
    if (r.get_u32() != drss_version) throw data_error("style artifact: unsupported version");
    style_artifact a;
    r.get_bytes(a.model_hash);
    a.lambda = r.get_f64();
    a.rank = r.get_u32();
    a.n_selected = r.get_u32();
    a.n_layers = r.get_u32();
    a.n_heads = r.get_u32();
    a.head_dim = r.get_u32();
    a.hidden_dim = r.get_u32();
    const uint32_t n = r.get_u32();
    for (uint32_t k = 0; k < n; ++k) {
        artifact_head e;
        auto & s = e.subspace;
        s.hook.layer = r.get_u32();
        s.hook.head = r.get_u32();
        s.basis = get_mat(r);
        s.betas = get_vec(r, s.basis.rows);
        s.u_plus_mean = get_vec(r, s.basis.cols);
        s.sigma = get_vec(r, s.basis.rows);
        if (r.get_u8()) s.irrelevant = get_mat(r);
        e.val_accuracy = r.get_f64();
        e.probe.weights = get_vec(r, r.get_u32());
        e.probe.bias = r.get_f64();
        e.iti_scale = r.get_f64();
        a.heads.push_back(std::move(e));
    }
    const uint32_t ns = r.get_u32();
    for (uint32_t k = 0; k < ns; ++k) {
        hook_point h{r.get_u32(), r.get_u32()};
        a.all_scores.push_back({h, r.get_f64()});
    }
    const uint32_t nr = r.get_u32();
    for (uint32_t k = 0; k < nr; ++k) {
        repe_entry e;
        e.hook.layer = r.get_u32();
        e.hook.head = r.get_u32();
        e.beta1 = r.get_f64();
        e.v1 = get_vec(r, r.get_u32());
        a.repe.push_back(std::move(e));
    }
    const uint32_t nl = r.get_u32();
    for (uint32_t k = 0; k < nl; ++k) a.layer_mean_diff.push_back(get_vec(r, r.get_u32()));
    a.provenance.corpus_digest = r.get_string();
    a.provenance.store_digest = r.get_string();
    a.provenance.split_seed = r.get_u64();
    a.provenance.train_fraction = r.get_f64();
    a.provenance.oriented = r.get_u8() != 0;
    r.finish_crc("style artifact");
    a.validate();
    return a;
}

style_artifact load_artifact(const std::filesystem::path & path) { return style_artifact::parse(read_file_bytes(path)); }

void save_artifact(const style_artifact & artifact, const std::filesystem::path & path) {
    write_file_bytes(path, artifact.serialize());
}

style_artifact assemble_artifact(const head_selection & selection, std::vector<head_subspace> subspaces,
                                 const artifact_defaults & defaults, const artifact_provenance & provenance) {
    std::set<hook_point> seen;
    for (const auto & s : subspaces) {
        if (!seen.insert(s.hook).second) throw invariant_error("artifact: duplicate head " + hook_str(s.hook));
    }
    style_artifact a;
    a.lambda = defaults.lambda;
    a.rank = uint32_t(defaults.rank);
    a.n_selected = uint32_t(selection.selected.size());
    a.provenance = provenance;
    for (const auto & h : selection.selected) {
        auto it = std::find_if(subspaces.begin(), subspaces.end(), [&](const head_subspace & s) { return s.hook == h; });
        if (it == subspaces.end()) throw invariant_error("artifact: missing subspace for head " + hook_str(h));
        if (it->rank() != defaults.rank) throw invariant_error("artifact: K mismatch at head " + hook_str(h));
        artifact_head e;
        e.subspace = std::move(*it);
        if (const auto * sc = selection.find(h)) {
            e.val_accuracy = sc->val_accuracy;
            e.probe = sc->probe;
        }
        a.heads.push_back(std::move(e));
    }
    if (subspaces.size() != selection.selected.size()) throw invariant_error("artifact: subspace for an unselected head");
    a.head_dim = a.heads.empty() ? 0 : uint32_t(a.heads.front().subspace.basis.cols);
    for (const auto & s : selection.ranked) a.all_scores.push_back({s.hook, s.val_accuracy});
    std::sort(a.all_scores.begin(), a.all_scores.end());
    a.validate();
    return a;
}

style_artifact build_artifact(const model_bundle & bundle, const activation_store & store, const head_selection & selection,
                              const artifact_defaults & defaults, const subspace_options & opts,
                              const artifact_provenance & provenance, size_t workers, std::vector<std::string> * warnings) {
    const auto & cfg = bundle.config();
    if (store.n_layers() != cfg.n_layers || store.n_heads() != cfg.n_heads || store.head_dim() != cfg.head_dim) {
        throw data_error("activation store shape does not match the model");
    }
    subspace_options sopts = opts;
    sopts.rank = defaults.rank;

    const size_t n_sel = selection.selected.size();
    std::vector<head_subspace> subs(n_sel);
    std::vector<std::vector<std::string>> warn(n_sel);
    parallel_for(n_sel, workers, [&](size_t i) { subs[i] = extract_subspace(store, selection.selected[i], sopts, &warn[i]); });
    if (warnings)
        for (auto & w : warn) warnings->insert(warnings->end(), w.begin(), w.end());

    style_artifact a = assemble_artifact(selection, std::move(subs), defaults, provenance);
    a.model_hash = bundle.hash();
    a.n_layers = cfg.n_layers;
    a.n_heads = cfg.n_heads;
    a.head_dim = cfg.head_dim;
    a.hidden_dim = cfg.hidden_dim;

    // ITI scale: spread of target-class activations along the unit probe direction
    for (auto & e : a.heads) {
        const double nrm = norm2(e.probe.weights);
        if (nrm <= 0.0) continue;
        std::vector<double> proj;
        for (size_t i = 0; i < store.n_pairs(); ++i) proj.push_back(dot(store.at(e.subspace.hook, i, positive), e.probe.weights) / nrm);
        compensated_sum m;
        for (double p : proj) m.add(p);
        const double mean = m.value() / double(proj.size());
        compensated_sum v;
        for (double p : proj) v.add((p - mean) * (p - mean));
        e.iti_scale = std::sqrt(v.value() / double(proj.size()));
    }

    // RepE first directions for every head; selected heads reuse their subspace row
    const size_t total = size_t(cfg.n_layers) * cfg.n_heads;
    a.repe.resize(total);
    parallel_for(total, workers, [&](size_t k) {
        const hook_point h{uint32_t(k / cfg.n_heads), uint32_t(k % cfg.n_heads)};
        repe_entry & e = a.repe[k];
        e.hook = h;
        if (const auto * sel = a.find(h)) {
            auto v = sel->subspace.basis.row(0);
            e.v1.assign(v.begin(), v.end());
            e.beta1 = sel->subspace.betas[0];
            return;
        }
        const mat diff = build_diff_matrix(store, h);
        e.v1.assign(cfg.head_dim, 0.0);
        if (std::all_of(diff.data.begin(), diff.data.end(), [](double x) { return x == 0.0; })) return;
        subspace_options one = sopts;
        one.rank = 1;
        one.irrelevant_probe = false;
        auto hs = extract_subspace(diff, polarity_mean(store, h, positive), h, one);
        e.v1.assign(hs.basis.row(0).begin(), hs.basis.row(0).end());
        e.beta1 = hs.betas[0];
    });

    // Mean-Centring: W^o applied to the concatenated per-head mean differences
    a.layer_mean_diff.assign(cfg.n_layers, std::vector<double>(cfg.hidden_dim, 0.0));
    for (uint32_t l = 0; l < cfg.n_layers; ++l) {
        std::vector<double> cat(cfg.hidden_dim);
        for (uint32_t h = 0; h < cfg.n_heads; ++h) {
            auto p = polarity_mean(store, {l, h}, positive);
            auto n = polarity_mean(store, {l, h}, negative);
            for (uint32_t j = 0; j < cfg.head_dim; ++j) cat[h * cfg.head_dim + j] = p[j] - n[j];
        }
        const float * wo = bundle.layer(l).wo;
        for (uint32_t r = 0; r < cfg.hidden_dim; ++r) {
            double acc = 0.0;
            for (uint32_t c = 0; c < cfg.hidden_dim; ++c) acc += double(wo[size_t(r) * cfg.hidden_dim + c]) * cat[c];
            a.layer_mean_diff[l][r] = acc;
        }
    }
    a.validate();
    return a;
}

}  // namespace dress
