#include "doctest.h"

#include "dress/probes.h"
#include "dress/synthgen.h"

#include <algorithm>
#include <cctype>
#include <cmath>

using namespace dress;

namespace {

// adds `amount` along the designated component of the style head
struct push_edit : edit_callback {
    double amount;
    explicit push_edit(double a) : amount(a) {}
    bool wants(hook_point h) const override { return h == styled_layout::style_head; }
    bool head_delta(hook_point, uint32_t, std::span<const double>, std::span<double> delta) override {
        std::fill(delta.begin(), delta.end(), 0.0);
        delta[styled_layout::style_component] = amount;
        return true;
    }
};

}  // namespace

TEST_CASE("orthonormal draws and principal angles") {
    auto w = random_orthonormal(3, 12, 5);
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 3; ++j) CHECK(dot(w.row(i), w.row(j)) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    CHECK(max_principal_angle_deg(w, w) == doctest::Approx(0.0).epsilon(1e-6));

    mat e1(1, 3, {1, 0, 0}), e2(1, 3, {0, 1, 0}), diag(1, 3, {std::sqrt(0.5), std::sqrt(0.5), 0});
    CHECK(max_principal_angle_deg(e1, e2) == doctest::Approx(90.0));
    CHECK(max_principal_angle_deg(e1, diag) == doctest::Approx(45.0));
    CHECK(random_orthonormal(3, 12, 5) == w);
}

TEST_CASE("planted store ground truth") {
    planted_config pc;
    pc.n_layers = 2;
    pc.n_heads = 3;
    pc.head_dim = 8;
    pc.n_pairs = 12;
    pc.style_heads = {{1, 2}};
    pc.seed = 8;
    auto a = planted_store(pc);
    auto b = planted_store(pc);
    CHECK(a.store == b.store);
    CHECK(a.truth.coefficients.size() == 12);
    auto back = planted_truth::from_json(a.truth.to_json());
    CHECK(back.basis == a.truth.basis);
    CHECK(back.coefficients == a.truth.coefficients);
    CHECK(back.style_heads == a.truth.style_heads);
    CHECK(back.seed == 8);

    pc.style_heads = {{2, 0}};
    CHECK_THROWS(planted_store(pc));
}

TEST_CASE("no planted heads gives chance-level probes") {
    planted_config pc;
    pc.n_layers = 2;
    pc.n_heads = 4;
    pc.head_dim = 16;
    pc.n_pairs = 200;
    pc.seed = 12;
    auto pr = planted_store(pc);
    for (const auto & s : score_heads(pr.store, {{}, {}, 4})) {
        CHECK(s.val_accuracy >= 0.35);
        CHECK(s.val_accuracy <= 0.65);
    }
}

TEST_CASE("tiny models are deterministic per seed") {
    CHECK(tiny_model(3).serialize() == tiny_model(3).serialize());
    CHECK(tiny_model(3).serialize() != tiny_model(4).serialize());
    tiny_config tc;
    tc.positional = positional_kind::learned;
    tc.norm = norm_kind::layer_norm;
    auto m = tiny_model(3, tc);
    CHECK(m.config().positional == positional_kind::learned);
    CHECK(generate(m, tokenize(m, "hi"), nullptr, {4, false}).size() == 4);
}

TEST_CASE("mechanical corpus") {
    auto c = mechanical_corpus(40, 2);
    CHECK(c.size() == 40);
    CHECK(c.n_general() == 10);
    for (const auto & p : c.pairs) {
        CHECK(count_marked(p.answer_neg) == 0);
        std::string up = p.answer_neg;
        for (char & ch : up) ch = char(std::toupper(static_cast<unsigned char>(ch)));
        CHECK(p.answer_pos == up);
    }
    CHECK(mechanical_corpus(40, 2) == c);
    CHECK(mechanical_questions(5, 1).size() == 5);
    CHECK(is_marked('Q'));
    CHECK_FALSE(is_marked('q'));
    CHECK(count_marked("aBc DE") == 3);
}

TEST_CASE("pushing the styled head along its designated direction raises marked logits") {
    auto corpus = mechanical_corpus(60, 1);
    auto m = styled_model({}, mechanical_training_text(corpus));
    CHECK(m.config().n_heads == styled_layout::n_heads);
    const auto prompt = tokenize(m, m.format_prompt("tell me the color of the river"));

    auto last_logits = [&](edit_callback * e) {
        decode_session s(m, e, uint32_t(prompt.size() - 1));
        std::vector<float> out;
        for (auto t : prompt) {
            auto lg = s.step(t);
            out.assign(lg.begin(), lg.end());
        }
        return out;
    };
    auto base = last_logits(nullptr);
    push_edit push(2.0);
    auto pushed = last_logits(&push);
    auto log_softmax = [](std::vector<float> lg) {
        const double mx = *std::max_element(lg.begin(), lg.end());
        double z = 0.0;
        for (float v : lg) z += std::exp(double(v) - mx);
        std::vector<double> out;
        for (float v : lg) out.push_back(double(v) - mx - std::log(z));
        return out;
    };
    const auto lb = log_softmax(base), lp = log_softmax(pushed);
    for (int c = 'A'; c <= 'Z'; ++c) {
        if (base[size_t(c)] < -10.0f) continue;  // letters the bigram table never saw
        // normalized logit: the output norm rescales raw logits as the residual grows
        CHECK(lp[size_t(c)] > lb[size_t(c)]);
        CHECK(pushed[size_t(c)] - pushed[size_t(c + 32)] > base[size_t(c)] - base[size_t(c + 32)]);
    }
}
