#include "dress/eval.h"

#include "dress/errors.h"
#include "dress/parallel.h"
#include "dress/rng.h"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace dress {

using json = nlohmann::json;

std::string serialize_responses(const response_set & set) {
    std::string out;
    for (const auto & r : set.records) {
        json j = {{"id", r.id},
                  {"question", r.question},
                  {"response", r.response},
                  {"method", set.method},
                  {"manifest_digest", set.manifest_digest}};
        out += j.dump() + "\n";
    }
    return out;
}

response_set parse_responses(std::string_view text) {
    response_set set;
    std::set<std::string> seen;
    size_t line_no = 0, start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        json j = json::parse(line, nullptr, false);
        const std::string where = "responses line " + std::to_string(line_no);
        if (j.is_discarded() || !j.is_object()) throw data_error(where + ": malformed JSON");
        for (const char * k : {"id", "question", "response"}) {
            if (!j.contains(k) || !j[k].is_string()) throw data_error(where + ": missing string field '" + k + "'");
        }
        response_record r{j["id"], j["question"], j["response"]};
        if (!seen.insert(r.id).second) throw data_error(where + ": duplicate id '" + r.id + "'");
        set.method = j.value("method", set.method);
        set.manifest_digest = j.value("manifest_digest", set.manifest_digest);
        set.records.push_back(std::move(r));
    }
    return set;
}

response_set load_responses(const std::filesystem::path & path) { return parse_responses(read_file_text(path)); }

namespace {

// code points as (start, length) byte ranges; invalid bytes stand alone
std::vector<std::string_view> code_points(std::string_view s) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        size_t len = c < 0x80 ? 1 : (c >> 5) == 6 ? 2 : (c >> 4) == 14 ? 3 : (c >> 3) == 30 ? 4 : 1;
        if (i + len > s.size()) len = 1;
        for (size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

uint64_t fnv1a(std::string_view bytes, uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::vector<double> style_classifier::features(const ngram_spec & spec, std::string_view text) {
    if (spec.buckets == 0 || spec.min_n == 0 || spec.max_n < spec.min_n) throw config_error("bad n-gram spec");
    std::vector<double> f(spec.buckets, 0.0);
    const auto cps = code_points(text);
    for (uint32_t n = spec.min_n; n <= spec.max_n; ++n) {
        for (size_t i = 0; i + n <= cps.size(); ++i) {
            uint64_t h = 0xcbf29ce484222325ull ^ (spec.seed * 0x9e3779b97f4a7c15ull);
            h = fnv1a(std::string_view(reinterpret_cast<const char *>(&n), sizeof n), h);
            const char * begin = cps[i].data();
            const char * end = cps[i + n - 1].data() + cps[i + n - 1].size();
            h = fnv1a(std::string_view(begin, size_t(end - begin)), h);
            f[h % spec.buckets] += 1.0;
        }
    }
    // sublinear counts keep spaces and common letters from swamping rarer n-grams
    for (double & v : f) v = std::sqrt(v);
    const double nrm = norm2(f);
    if (nrm > 0.0)
        for (double & v : f) v /= nrm;
    return f;
}

// an empty text carries no style, whatever the bias says
int style_classifier::predict(std::string_view text) const {
    return text.empty() ? 0 : probe_.predict(features(spec_, text));
}

std::string style_classifier::to_json() const {
    json j = {{"buckets", spec_.buckets}, {"min_n", spec_.min_n},     {"max_n", spec_.max_n},
              {"seed", spec_.seed},       {"bias", probe_.bias},      {"weights", probe_.weights},
              {"heldout_accuracy", heldout_accuracy_}};
    return j.dump();
}

style_classifier style_classifier::from_json(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw data_error("classifier: malformed JSON");
    ngram_spec spec{j.at("buckets"), j.at("min_n"), j.at("max_n"), j.at("seed")};
    linear_probe p{j.at("weights").get<std::vector<double>>(), j.at("bias")};
    if (p.weights.size() != spec.buckets) throw data_error("classifier: weight count does not match buckets");
    return style_classifier(spec, std::move(p), j.at("heldout_accuracy"));
}

style_classifier train_style_classifier(const std::vector<std::string> & pos, const std::vector<std::string> & neg,
                                        const ngram_spec & spec, const split_spec & split, const probe_fit_config & fit) {
    if (pos.empty() || neg.empty()) throw data_error("style classifier needs both classes");
    std::vector<std::pair<const std::string *, int>> all;
    for (const auto & s : pos) all.push_back({&s, 1});
    for (const auto & s : neg) all.push_back({&s, 0});
    std::vector<size_t> tr, va;
    if (pos.size() == neg.size() && pos.size() >= 5) {
        // aligned pairs stay together, so a paraphrase never leaks across the split
        auto part = make_split(pos.size(), split);
        for (size_t i : part.train) tr.insert(tr.end(), {i, pos.size() + i});
        for (size_t i : part.val) va.insert(va.end(), {i, pos.size() + i});
    } else if (all.size() >= 5) {
        auto part = make_split(all.size(), split);
        tr = part.train;
        va = part.val;
    } else {
        for (size_t i = 0; i < all.size(); ++i) tr.push_back(i);
        va = tr;
    }
    auto build = [&](const std::vector<size_t> & idx, mat & xs, std::vector<int> & ys) {
        xs = mat(idx.size(), spec.buckets);
        ys.clear();
        for (size_t r = 0; r < idx.size(); ++r) {
            auto f = style_classifier::features(spec, *all[idx[r]].first);
            std::copy(f.begin(), f.end(), xs.row(r).begin());
            ys.push_back(all[idx[r]].second);
        }
    };
    mat xtr, xva;
    std::vector<int> ytr, yva;
    build(tr, xtr, ytr);
    build(va, xva, yva);
    if (std::all_of(ytr.begin(), ytr.end(), [&](int y) { return y == ytr[0]; })) {
        // a tiny set can land one class entirely in validation; fall back to all samples
        for (size_t i = 0; i < all.size(); ++i) tr.push_back(i);
        build(tr, xtr, ytr);
    }
    auto probe = fit_logistic(xtr, ytr, fit);
    const double acc = probe_accuracy(probe, xva, yva);
    return style_classifier(spec, std::move(probe), acc);
}

double style_intensity(const style_classifier & clf, const std::vector<std::string> & responses) {
    if (responses.empty()) throw data_error("style intensity of an empty response set");
    size_t hits = 0;
    for (const auto & r : responses) hits += clf.predict(r) == 1;
    return double(hits) / double(responses.size());
}

std::vector<double> embed_text(const model_bundle & bundle, std::string_view text) {
    const auto & cfg = bundle.config();
    std::vector<double> out(cfg.hidden_dim, 0.0);
    auto tokens = tokenize(bundle, text);
    if (tokens.empty()) return out;
    if (tokens.size() > cfg.max_context) tokens.resize(cfg.max_context);
    auto res = forward_capture(bundle, tokens);
    std::vector<compensated_sum> acc(cfg.hidden_dim);
    for (size_t t = 0; t < tokens.size(); ++t) {
        auto h = res.hidden_at(t);
        for (size_t j = 0; j < h.size(); ++j) acc[j].add(h[j]);
    }
    for (size_t j = 0; j < out.size(); ++j) out[j] = acc[j].value() / double(tokens.size());
    return out;
}

double semantic_preservation(const std::vector<std::vector<double>> & a, const std::vector<std::vector<double>> & b,
                             std::vector<double> * per_sample) {
    if (a.size() != b.size() || a.empty()) throw data_error("semantic preservation needs equal, non-empty sets");
    compensated_sum s;
    for (size_t i = 0; i < a.size(); ++i) {
        const double c = std::max(cosine(a[i], b[i]), 0.0);
        if (per_sample) per_sample->push_back(c);
        s.add(c);
    }
    return s.value() / double(a.size());
}

namespace {

// reference reordered to follow edited's ids
response_set align_to(const response_set & edited, const response_set & reference) {
    if (edited.records.size() != reference.records.size()) throw data_error("response sets differ in size");
    std::map<std::string_view, const response_record *> by_id;
    for (const auto & r : reference.records) by_id[r.id] = &r;
    response_set out;
    out.method = reference.method;
    out.manifest_digest = reference.manifest_digest;
    for (const auto & r : edited.records) {
        auto it = by_id.find(r.id);
        if (it == by_id.end()) throw data_error("response id '" + r.id + "' missing from the reference set");
        out.records.push_back(*it->second);
    }
    return out;
}

std::vector<std::vector<double>> embed_all(const model_bundle & bundle, const response_set & set, size_t workers) {
    std::vector<std::vector<double>> out(set.records.size());
    parallel_for(out.size(), workers, [&](size_t i) { out[i] = embed_text(bundle, set.records[i].response); });
    return out;
}

}  // namespace

double semantic_preservation(const model_bundle & bundle, const response_set & edited, const response_set & reference,
                             std::vector<double> * per_sample, size_t workers) {
    const auto ref = align_to(edited, reference);
    return semantic_preservation(embed_all(bundle, edited, workers), embed_all(bundle, ref, workers), per_sample);
}

double response_perplexity(const model_bundle & bundle, std::string_view question, std::string_view response) {
    const auto & cfg = bundle.config();
    auto prompt = tokenize(bundle, bundle.format_prompt(question));
    auto resp = tokenize(bundle, response);
    if (resp.empty()) throw data_error("fluency: response tokenizes to nothing");
    if (prompt.empty()) throw data_error("fluency: empty prompt");
    if (prompt.size() + resp.size() > cfg.max_context) {
        if (prompt.size() >= cfg.max_context) throw data_error("fluency: prompt exceeds max_context");
        resp.resize(cfg.max_context - prompt.size());
    }
    std::vector<int32_t> seq = prompt;
    seq.insert(seq.end(), resp.begin(), resp.end());
    auto res = forward_capture(bundle, seq);
    compensated_sum nll;
    for (size_t j = 0; j < resp.size(); ++j) {
        auto logits = res.logits_at(prompt.size() - 1 + j);
        double mx = -std::numeric_limits<double>::infinity();
        for (float v : logits) mx = std::max(mx, double(v));
        double z = 0.0;
        for (float v : logits) z += std::exp(double(v) - mx);
        nll.add(-(double(logits[size_t(resp[j])]) - mx - std::log(z)));
    }
    return std::exp(nll.value() / double(resp.size()));
}

double fluency_from_ppl(double ppl) {
    if (!(ppl >= 1.0)) throw std::invalid_argument("perplexity must be >= 1");
    return 1.0 / (1.0 + std::log(ppl));
}

double fluency_score(const model_bundle & bundle, const response_set & responses, std::vector<double> * ppl, size_t workers) {
    if (responses.records.empty()) throw data_error("fluency of an empty response set");
    std::vector<double> p(responses.records.size());
    parallel_for(p.size(), workers, [&](size_t i) {
        p[i] = response_perplexity(bundle, responses.records[i].question, responses.records[i].response);
    });
    compensated_sum s;
    for (double v : p) s.add(fluency_from_ppl(v));
    if (ppl) *ppl = p;
    return s.value() / double(p.size());
}

double overall(double si, double sp, double fs) {
    for (double v : {si, sp, fs}) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("overall: inputs must lie in [0, 1]");
    }
    return si * sp * fs;
}

sp_permutation_result sp_permutation_test(const std::vector<std::vector<double>> & a, const std::vector<std::vector<double>> & b,
                                          size_t shuffles, uint64_t seed) {
    sp_permutation_result out;
    out.observed = semantic_preservation(a, b);
    out.shuffles = shuffles;
    rng r(seed);
    std::vector<size_t> perm(b.size());
    compensated_sum total;
    for (size_t s = 0; s < shuffles; ++s) {
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        r.shuffle(std::span<size_t>(perm));
        std::vector<std::vector<double>> pb;
        for (size_t i : perm) pb.push_back(b[i]);
        const double v = semantic_preservation(a, pb);
        total.add(v);
        out.shuffles_at_or_above += v >= out.observed;
    }
    out.shuffled_mean = shuffles ? total.value() / double(shuffles) : 0.0;
    return out;
}

std::string eval_report::to_json() const {
    json samples_j = json::array();
    for (const auto & s : samples) {
        json row = {{"id", s.id}, {"class", s.cls}, {"cosine", s.cosine}, {"fs", s.fs}};
        row["ppl"] = std::isfinite(s.ppl) ? json(s.ppl) : json(nullptr);
        samples_j.push_back(row);
    }
    json j = {{"method", method}, {"substitutions", substitutions}, {"si", si}, {"sp", sp}, {"fs", fs}, {"oa", oa},
              {"samples", samples_j}};
    return j.dump(2);
}

eval_report evaluate(const model_bundle & bundle, const style_classifier & clf, const response_set & edited,
                     const response_set & reference, size_t workers) {
    const auto ref = align_to(edited, reference);
    if (edited.records.empty()) throw data_error("evaluate: empty response set");
    eval_report rep;
    rep.method = edited.method;
    rep.substitutions = {
        "SI: hashed character n-gram logistic classifier in place of a fine-tuned BERT classifier",
        "SP: mean final hidden state of the unedited model in place of BGE embeddings",
        "FS: natural-log perplexity under the unedited model, conditioned on the question; empty responses score 0",
    };
    const size_t n = edited.records.size();
    auto ea = embed_all(bundle, edited, workers);
    auto eb = embed_all(bundle, ref, workers);
    rep.samples.resize(n);
    parallel_for(n, workers, [&](size_t i) {
        const auto & r = edited.records[i];
        auto & s = rep.samples[i];
        s.id = r.id;
        s.cls = clf.predict(r.response);
        s.cosine = std::max(cosine(ea[i], eb[i]), 0.0);
        if (tokenize(bundle, r.response).empty()) {
            s.ppl = std::numeric_limits<double>::infinity();
            s.fs = 0.0;
        } else {
            s.ppl = response_perplexity(bundle, r.question, r.response);
            s.fs = fluency_from_ppl(s.ppl);
        }
    });
    std::stable_sort(rep.samples.begin(), rep.samples.end(), [](const eval_sample & a, const eval_sample & b) { return a.id < b.id; });
    compensated_sum si, sp, fs;
    for (const auto & s : rep.samples) {
        si.add(s.cls);
        sp.add(s.cosine);
        fs.add(s.fs);
    }
    rep.si = si.value() / double(n);
    rep.sp = sp.value() / double(n);
    rep.fs = fs.value() / double(n);
    rep.oa = overall(rep.si, rep.sp, rep.fs);
    return rep;
}

}  // namespace dress
