#include "doctest.h"

#include "dress/errors.h"
#include "dress/eval.h"
#include "dress/synthgen.h"

#include <json.hpp>

#include <cmath>

using namespace dress;

namespace {

const std::filesystem::path demo = std::filesystem::path(DRESS_ASSET_DIR) / "demo" / "shakespeare_pairs.jsonl";

std::vector<std::string> repeat(const std::string & unit, size_t n) {
    std::vector<std::string> out;
    for (size_t i = 0; i < n; ++i) out.push_back(std::string(3 + i % 5, unit[0]) + " " + unit);
    return out;
}

response_set responses(std::vector<std::string> texts, const std::string & method = "none") {
    response_set s;
    s.method = method;
    for (size_t i = 0; i < texts.size(); ++i) s.records.push_back({"r" + std::to_string(i), "question " + std::to_string(i), texts[i]});
    return s;
}

// step-by-step decode; shares no code with the batched forward used by the library
double oracle_ppl(const model_bundle & m, const std::string & q, const std::string & a) {
    auto prompt = tokenize(m, m.format_prompt(q));
    auto resp = tokenize(m, a);
    decode_session s(m);
    std::vector<float> last;
    for (auto t : prompt) {
        auto lg = s.step(t);
        last.assign(lg.begin(), lg.end());
    }
    double nll = 0.0;
    for (auto t : resp) {
        double mx = *std::max_element(last.begin(), last.end());
        double z = 0.0;
        for (float v : last) z += std::exp(double(v) - mx);
        nll -= double(last[size_t(t)]) - mx - std::log(z);
        auto lg = s.step(t);
        last.assign(lg.begin(), lg.end());
    }
    return std::exp(nll / double(resp.size()));
}

}  // namespace

TEST_CASE("response file round trip") {
    auto s = responses({"a", "b, \"quoted\"\nline"}, "dress");
    s.manifest_digest = "abc";
    CHECK(parse_responses(serialize_responses(s)) == s);
    auto line = nlohmann::json::parse(serialize_responses(s).substr(0, serialize_responses(s).find('\n')));
    for (auto k : {"id", "question", "response", "method", "manifest_digest"}) CHECK(line.contains(k));
    auto dup = s;
    dup.records[1].id = "r0";
    CHECK_THROWS_AS(parse_responses(serialize_responses(dup)), data_error);
}

TEST_CASE("style classifier separability") {
    auto clf = train_style_classifier(repeat("x", 40), repeat("y", 40));
    CHECK(clf.heldout_accuracy() == 1.0);
    CHECK(style_intensity(clf, repeat("x", 10)) == 1.0);
    CHECK(style_intensity(clf, {"xxxx", "xxx x", "xx", "yyyy"}) == 0.75);

    std::vector<std::string> same;
    for (int i = 0; i < 60; ++i) same.push_back("text number " + std::to_string(i));
    auto blind = train_style_classifier(same, same);
    CHECK(blind.heldout_accuracy() == doctest::Approx(0.5).epsilon(0.3));  // 0.5 +- 0.15

    auto back = style_classifier::from_json(clf.to_json());
    CHECK(back.predict("xxxxx") == clf.predict("xxxxx"));
    CHECK(back.predict("yy") == clf.predict("yy"));
    CHECK(back.heldout_accuracy() == clf.heldout_accuracy());
}

TEST_CASE("demo corpus classifier") {
    auto c = load_corpus(demo);
    std::vector<std::string> pos, neg;
    for (const auto & p : c.pairs) {
        pos.push_back(p.answer_pos);
        neg.push_back(p.answer_neg);
    }
    auto clf = train_style_classifier(pos, neg);
    MESSAGE("demo classifier held-out accuracy " << clf.heldout_accuracy());
    CHECK(clf.heldout_accuracy() >= 0.8);
    // measured once on the shipped asset: all 8 held-out pairs
    CHECK(std::abs(clf.heldout_accuracy() - 1.0) <= 0.05);
    CHECK(style_intensity(clf, neg) <= 0.2);
}

TEST_CASE("fluency formula") {
    CHECK(fluency_from_ppl(1.0) == 1.0);
    CHECK(fluency_from_ppl(std::exp(3.0)) == doctest::Approx(0.25));
    double prev = 2.0;
    for (double p = 1.0; p < 500.0; p *= 1.3) {
        const double f = fluency_from_ppl(p);
        CHECK(f < prev);
        prev = f;
    }
    CHECK_THROWS(fluency_from_ppl(0.5));
}

TEST_CASE("perplexity agrees with a step-by-step oracle") {
    auto m = tiny_model(51);
    for (auto [q, a] : std::vector<std::pair<std::string, std::string>>{{"why?", "because it is"}, {"hm", "x"}}) {
        CHECK(response_perplexity(m, q, a) == doctest::Approx(oracle_ppl(m, q, a)).epsilon(1e-4));
    }
}

TEST_CASE("overall score") {
    CHECK(overall(0.970, 0.708, 0.424) == doctest::Approx(0.2912).epsilon(5e-4));
    CHECK(overall(0.847, 0.703, 0.367) == doctest::Approx(0.2185).epsilon(5e-4));
    CHECK(overall(0.0, 0.7, 0.4) == 0.0);
    CHECK(overall(0.9, 0.0, 0.4) == 0.0);
    CHECK_THROWS(overall(1.2, 0.5, 0.5));
    CHECK_THROWS(overall(0.5, -0.1, 0.5));
}

TEST_CASE("semantic preservation conventions") {
    auto m = tiny_model(52);
    auto ref = responses({"the river is wide", "a stone", "a song of rain"});
    CHECK(semantic_preservation(m, ref, ref) == doctest::Approx(1.0));
    CHECK(embed_text(m, "") == std::vector<double>(64, 0.0));

    auto edited = ref;
    edited.records[1].response = "";
    std::vector<double> per;
    const double sp = semantic_preservation(m, edited, ref, &per);
    CHECK(per[1] == 0.0);
    CHECK(sp == doctest::Approx((per[0] + per[2]) / 3.0));

    // alignment is by id, not position
    auto shuffled = ref;
    std::swap(shuffled.records[0], shuffled.records[2]);
    CHECK(semantic_preservation(m, shuffled, ref) == doctest::Approx(1.0));
    auto missing = ref;
    missing.records.pop_back();
    CHECK_THROWS_AS(semantic_preservation(m, missing, ref), data_error);

    CHECK(semantic_preservation({{1, 0}}, {{-1, 0}}) == 0.0);
}

TEST_CASE("paraphrase pairs beat random re-pairing") {
    auto m = tiny_model(53);
    auto c = load_corpus(demo);
    std::vector<std::vector<double>> a, b;
    for (const auto & p : c.pairs) {
        a.push_back(embed_text(m, p.answer_neg));
        b.push_back(embed_text(m, p.answer_pos));
    }
    auto res = sp_permutation_test(a, b, 100, 7);
    MESSAGE("aligned SP " << res.observed << ", shuffled mean " << res.shuffled_mean);
    CHECK(res.shuffles == 100);
    CHECK(res.observed > res.shuffled_mean);
}

TEST_CASE("evaluate report") {
    auto m = tiny_model(54);
    auto clf = train_style_classifier(repeat("x", 40), repeat("y", 40));
    auto ref = responses({"yyy y", "yyyy y", "yy y"});
    auto edited = responses({"xxx x", "", "xxxx x"}, "dress");
    auto rep = evaluate(m, clf, edited, ref);
    CHECK(rep.method == "dress");
    CHECK(rep.samples.size() == 3);
    CHECK(rep.samples[1].fs == 0.0);
    CHECK(rep.samples[1].cosine == 0.0);
    CHECK(rep.si == doctest::Approx(2.0 / 3.0));
    CHECK(rep.oa == doctest::Approx(rep.si * rep.sp * rep.fs));
    auto j = nlohmann::json::parse(rep.to_json());
    CHECK(j["samples"][1]["ppl"].is_null());
    CHECK(j.contains("substitutions"));

    auto same = evaluate(m, clf, ref, ref);
    CHECK(same.sp == doctest::Approx(1.0));
    CHECK(same.si == 0.0);
}
