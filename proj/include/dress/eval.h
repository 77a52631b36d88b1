#pragma once

#include "dress/corpus.h"
#include "dress/model.h"
#include "dress/numerics.h"

#include <filesystem>
#include <string>
#include <vector>

namespace dress {

struct response_record {
    std::string id;
    std::string question;
    std::string response;

    bool operator==(const response_record &) const = default;
};

struct response_set {
    std::string method;
    std::string manifest_digest;
    std::vector<response_record> records;

    bool operator==(const response_set &) const = default;
};

// JSONL {id, question, response, method, manifest_digest}; duplicate ids rejected
std::string serialize_responses(const response_set & set);
response_set parse_responses(std::string_view text);
response_set load_responses(const std::filesystem::path & path);

// ---- style classifier: hashed character n-grams + logistic probe ----

struct ngram_spec {
    uint32_t buckets = 2048;
    uint32_t min_n = 1;
    uint32_t max_n = 3;
    uint64_t seed = 0;

    bool operator==(const ngram_spec &) const = default;
};

class style_classifier {
public:
    style_classifier() = default;
    style_classifier(ngram_spec spec, linear_probe probe, double heldout_accuracy)
        : spec_(spec), probe_(std::move(probe)), heldout_accuracy_(heldout_accuracy) {}

    // square-rooted bucket counts over code-point n-grams, L2-normalized
    static std::vector<double> features(const ngram_spec & spec, std::string_view text);

    int predict(std::string_view text) const;
    double heldout_accuracy() const { return heldout_accuracy_; }
    const ngram_spec & spec() const { return spec_; }
    const linear_probe & probe() const { return probe_; }

    std::string to_json() const;
    static style_classifier from_json(std::string_view text);

private:
    ngram_spec spec_;
    linear_probe probe_;
    double heldout_accuracy_ = 0.0;
};

// Trains on a seeded 4:1 split and reports held-out accuracy. Equal-sized
// inputs are treated as aligned pairs and split pair by pair.
style_classifier train_style_classifier(const std::vector<std::string> & pos, const std::vector<std::string> & neg,
                                        const ngram_spec & spec = {}, const split_spec & split = {},
                                        const probe_fit_config & fit = {0.0, 4.0, 1000});

double style_intensity(const style_classifier & clf, const std::vector<std::string> & responses);

// Mean final hidden state of the unedited model; the empty text maps to zero.
std::vector<double> embed_text(const model_bundle & bundle, std::string_view text);

// Mean over id-aligned pairs of max(cos, 0). Throws data_error on misalignment.
double semantic_preservation(const model_bundle & bundle, const response_set & edited, const response_set & reference,
                             std::vector<double> * per_sample = nullptr, size_t workers = 1);
double semantic_preservation(const std::vector<std::vector<double>> & a, const std::vector<std::vector<double>> & b,
                             std::vector<double> * per_sample = nullptr);

// PPL of the response tokens given the formatted question, natural log.
double response_perplexity(const model_bundle & bundle, std::string_view question, std::string_view response);
double fluency_from_ppl(double ppl);
double fluency_score(const model_bundle & bundle, const response_set & responses, std::vector<double> * ppl = nullptr,
                     size_t workers = 1);

// si * sp * fs; each input must lie in [0, 1]
double overall(double si, double sp, double fs);

struct sp_permutation_result {
    double observed = 0.0;
    double shuffled_mean = 0.0;
    size_t shuffles_at_or_above = 0;
    size_t shuffles = 0;
};

// Compares aligned SP against randomly re-paired SP (embeddings precomputed).
sp_permutation_result sp_permutation_test(const std::vector<std::vector<double>> & a, const std::vector<std::vector<double>> & b,
                                          size_t shuffles = 100, uint64_t seed = 0);

struct eval_sample {
    std::string id;
    int cls = 0;
    double cosine = 0.0;
    double ppl = 0.0;
    double fs = 0.0;
};

struct eval_report {
    std::string method;
    std::vector<std::string> substitutions;
    double si = 0.0, sp = 0.0, fs = 0.0, oa = 0.0;
    std::vector<eval_sample> samples;

    std::string to_json() const;
};

eval_report evaluate(const model_bundle & bundle, const style_classifier & clf, const response_set & edited,
                     const response_set & reference, size_t workers = 1);

}  // namespace dress
