// Acceptance runner: one line per criterion, non-zero exit when any fails.

#include "dress/binio.h"
#include "dress/eval.h"
#include "dress/numerics.h"
#include "dress/pipeline.h"
#include "dress/probes.h"
#include "dress/rng.h"
#include "dress/steering.h"
#include "dress/store.h"
#include "dress/subspace.h"
#include "dress/synthgen.h"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace dress;
namespace fs = std::filesystem;

namespace {

struct outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void run(const std::string & name, double budget_s, const std::function<outcome()> & body) {
    const auto t0 = std::chrono::steady_clock::now();
    outcome o;
    try {
        o = body();
    } catch (const std::exception & e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > budget_s) {
        o.pass = false;
        o.detail += " (over the " + std::to_string(int(budget_s)) + " s budget)";
    }
    if (!o.pass) ++failures;
    std::printf("[%s] %-28s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char * f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

std::string slurp(const fs::path & p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string & name) {
    auto dir = fs::temp_directory_path() / "dress_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// ---- OA arithmetic ----

struct table_row {
    const char * method;
    const char * task;
    double si, sp, fs, oa;
};

// (SI, SP, FS, OA) in percent, as printed
const table_row table1[] = {
    {"Prompt", "red-chamber", 93.0, 66.2, 36.8, 22.7},  {"Prompt", "shakespeare", 98.0, 69.9, 37.8, 25.9},
    {"SFT", "red-chamber", 85.3, 69.0, 40.0, 23.5},     {"SFT", "shakespeare", 95.5, 69.8, 36.8, 24.5},
    {"Mean-Centring", "red-chamber", 77.5, 63.6, 31.4, 15.5}, {"Mean-Centring", "shakespeare", 94.5, 71.5, 35.3, 23.9},
    {"RepE", "red-chamber", 58.5, 67.7, 42.2, 16.7},    {"RepE", "shakespeare", 94.5, 65.2, 34.3, 21.1},
    {"TrFr", "red-chamber", 99.0, 69.7, 33.9, 23.4},    {"TrFr", "shakespeare", 99.3, 70.8, 38.2, 26.8},
    {"ITI", "red-chamber", 84.7, 70.3, 36.7, 21.8},     {"ITI", "shakespeare", 99.5, 70.5, 36.3, 25.5},
    {"DRESS*", "red-chamber", 89.0, 70.9, 37.8, 23.8},  {"DRESS*", "shakespeare", 99.0, 71.2, 38.2, 26.9},
    {"DRESS", "red-chamber", 97.0, 70.8, 42.4, 29.1},   {"DRESS", "shakespeare", 99.5, 73.3, 39.6, 28.9},
};

outcome oa_arithmetic() {
    double worst = 0.0;
    std::string bad;
    for (const auto & r : table1) {
        const double oa = 100.0 * overall(r.si / 100.0, r.sp / 100.0, r.fs / 100.0);
        const double err = std::abs(oa - r.oa);
        worst = std::max(worst, err);
        if (err > 0.15) bad += std::string(" ") + r.method + "/" + r.task;
    }
    return {bad.empty(), fmt("16 rows, worst |diff| %.3f pp", worst) + bad};
}

// ---- SVD oracle ----

outcome svd_oracle() {
    rng r(2024);
    double worst_sv = 0.0, worst_orth = 0.0;
    for (int t = 0; t < 50; ++t) {
        const size_t n = 1 + r.below(64), d = 1 + r.below(32);
        mat m(n, d);
        for (double & x : m.data) x = r.gaussian();
        const size_t k = std::min(n, d);
        auto res = svd_topk(m, k);

        Eigen::MatrixXd a(n, d);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j) a(long(i), long(j)) = m(i, j);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a.transpose() * a);
        std::vector<double> ev(eig.eigenvalues().data(), eig.eigenvalues().data() + d);
        std::sort(ev.rbegin(), ev.rend());
        for (size_t i = 0; i < k; ++i) {
            const double oracle = std::sqrt(std::max(ev[i], 0.0));
            worst_sv = std::max(worst_sv, std::abs(res.singular_values[i] - oracle));
        }
        for (size_t i = 0; i < k; ++i)
            for (size_t j = 0; j < k; ++j) {
                const double g = dot(res.right_vectors.row(i), res.right_vectors.row(j));
                worst_orth = std::max(worst_orth, std::abs(g - (i == j ? 1.0 : 0.0)));
            }
    }
    return {worst_sv <= 1e-8 && worst_orth <= 1e-8, fmt("50 matrices, sv err %.2e, orth err %.2e", worst_sv, worst_orth)};
}

// ---- planted subspace recovery ----

outcome planted_recovery() {
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        planted_config pc;
        pc.n_layers = 1;
        pc.n_heads = 1;
        pc.style_heads = {{0, 0}};
        pc.seed = seed;
        auto pr = planted_store(pc);
        subspace_options o;
        o.rank = pc.k;
        auto hs = extract_subspace(pr.store, {0, 0}, o);
        worst = std::max(worst, max_principal_angle_deg(hs.basis, pr.truth.basis));
    }
    return {worst < 5.0, fmt("k=3 N=500 d=64 sigma=0.05, worst angle %.3f deg over 10 seeds", worst)};
}

// ---- head selection ----

outcome head_selection_recovery() {
    size_t exact = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        planted_config pc;
        pc.n_pairs = 200;
        pc.head_dim = 16;
        pc.seed = 100 + seed;
        rng r(seed);
        std::set<hook_point> want;
        while (want.size() < 8) want.insert({uint32_t(r.below(8)), uint32_t(r.below(8))});
        pc.style_heads.assign(want.begin(), want.end());
        auto pr = planted_store(pc);
        auto sel = select_heads(pr.store, {{}, {}, 4}, 8);
        if (std::set<hook_point>(sel.selected.begin(), sel.selected.end()) == want) ++exact;
    }
    double lo = 1.0, hi = 0.0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        planted_config pc;
        pc.n_pairs = 200;
        pc.seed = 500 + seed;
        auto pr = planted_store(pc);
        for (const auto & s : score_heads(pr.store, {{}, {}, 4})) {
            lo = std::min(lo, s.val_accuracy);
            hi = std::max(hi, s.val_accuracy);
        }
    }
    const bool ok = exact == 10 && lo >= 0.35 && hi <= 0.65;
    return {ok, fmt("exact top-8 in %.0f/10 seeds; null accuracies in [%.3f, %.3f]", double(exact), lo, hi)};
}

// ---- steering identities ----

outcome steering_identities() {
    const auto model = tiny_model(41);
    style_corpus corpus;
    const char * words[] = {"river", "stone", "candle", "window", "garden", "letter", "harbor", "violin"};
    for (size_t i = 0; i < 16; ++i) {
        std::string w = words[i % 8], up = w;
        for (char & c : up) c = char(std::toupper(static_cast<unsigned char>(c)));
        corpus.pairs.push_back({"v" + std::to_string(i), "tell me of the " + w + " " + std::to_string(i), "the " + w + " is near",
                                "THE " + up + " IS NEAR", pair_source::target_style});
    }
    const auto store = extract_last_token_activations(model, corpus);
    const auto sel = select_heads(store, {}, 4);
    const auto art = build_artifact(model, store, sel, {3.0, 4}, {}, {});
    const auto art1 = build_artifact(model, store, sel, {3.0, 1}, {}, {});
    std::vector<std::string> broken;

    // lambda = 0 is the unedited model, for every method
    for (const char * q : {"tell me of the river", "what is a harbor", "sing of stone"}) {
        const auto prompt = tokenize(model, model.format_prompt(q));
        const auto plain = generate(model, prompt, nullptr, {24, false});
        for (auto m : {steer_method::dress, steer_method::dress_fixed, steer_method::iti, steer_method::repe,
                       steer_method::mean_centring}) {
            auto cb = make_callback({m, 0.0, {}, false, false}, art, model);
            cb->set_origin(uint32_t(prompt.size()));
            if (generate(model, prompt, cb.get(), {24, false}) != plain) broken.push_back("lambda0/" + std::string(to_string(m)));
        }
    }

    // span(V), gamma bounds and the forced-gamma identity on random inputs
    rng r(77);
    double span_resid = 0.0, fixed_diff = 0.0;
    for (const auto & e : art.heads) {
        const auto & hs = e.subspace;
        const size_t d = hs.basis.cols, k = hs.rank();
        for (int t = 0; t < 50; ++t) {
            std::vector<double> u(d), delta(d), g(k), a(k);
            for (double & x : u) x = 2.0 * r.gaussian();
            dress_delta(hs, u, 3.0, delta, g, a);
            for (double x : g)
                if (!(x >= -1.0 && x <= 1.0)) broken.push_back("gamma-range");
            const auto c = project(delta, hs.basis);
            for (size_t j = 0; j < d; ++j) {
                double p = 0.0;
                for (size_t i = 0; i < k; ++i) p += c[i] * hs.basis(i, j);
                span_resid = std::max(span_resid, std::abs(delta[j] - p));
            }
            dress_delta(hs, u, 3.0, delta, g, a, true);
            const auto fixed = dress_fixed_delta(hs, 3.0);
            for (size_t j = 0; j < d; ++j) fixed_diff = std::max(fixed_diff, std::abs(delta[j] - fixed[j]));
        }
    }
    if (span_resid > 1e-9) broken.push_back("span");
    if (fixed_diff != 0.0) broken.push_back("gamma0-vs-fixed");

    // gamma on every traced token of a real generation
    const auto prompt = tokenize(model, model.format_prompt("tell me of the river"));
    auto traced = make_callback({steer_method::dress, 3.0, {}, true, false}, art, model);
    traced->set_origin(uint32_t(prompt.size()));
    generate(model, prompt, traced.get(), {24, false});
    size_t rows = traced->trace().size();
    for (const auto & t : traced->trace())
        if (!(t.gamma >= -1.0 && t.gamma <= 1.0)) broken.push_back("trace-gamma");
    if (rows == 0) broken.push_back("empty-trace");

    // forced gamma generation equals DRESS* generation
    auto forced = make_callback({steer_method::dress, 3.0, {}, false, true}, art, model);
    auto star = make_callback({steer_method::dress_fixed, 3.0, {}, false, false}, art, model);
    if (generate(model, prompt, forced.get(), {24, false}) != generate(model, prompt, star.get(), {24, false}))
        broken.push_back("gamma0-generation");

    // DRESS* at K = 1 against the RepE per-head edit
    steering_callback fixed1({steer_method::dress_fixed, 3.0, {}, false, false}, art1);
    steering_callback repe({steer_method::repe, 3.0, {0, 1, 2, 3}, false, false}, art1);
    for (const auto & e : art1.heads) {
        std::vector<double> u(e.subspace.basis.cols), da(u.size()), db(u.size());
        for (double & x : u) x = r.gaussian();
        fixed1.head_delta(e.subspace.hook, 5, u, da);
        repe.head_delta(e.subspace.hook, 5, u, db);
        if (da != db) broken.push_back("repe-k1");
    }

    std::string detail = fmt("span resid %.1e, %.0f traced gammas", span_resid, double(rows));
    for (const auto & b : broken) detail += " " + b;
    return {broken.empty(), detail};
}

// ---- adaptive correction ----

// Mean over negatives of |V (u + delta - u+ mean)|, for both DRESS and DRESS*.
std::pair<double, double> correction_distances(const planted_result & pr, const head_subspace & hs, double lambda) {
    const size_t d = hs.basis.cols;
    compensated_sum dd, ds;
    std::vector<double> u(d), delta(d), x(d);
    const auto fixed = dress_fixed_delta(hs, lambda);
    const size_t n = pr.store.n_pairs();
    for (size_t p = 0; p < n; ++p) {
        const auto neg = pr.store.at({0, 0}, p, negative);
        std::copy(neg.begin(), neg.end(), u.begin());
        dress_delta(hs, u, lambda, delta);
        for (size_t j = 0; j < d; ++j) x[j] = u[j] + delta[j] - hs.u_plus_mean[j];
        dd.add(norm2(project(x, hs.basis)));
        for (size_t j = 0; j < d; ++j) x[j] = u[j] + fixed[j] - hs.u_plus_mean[j];
        ds.add(norm2(project(x, hs.basis)));
    }
    return {dd.value() / double(n), ds.value() / double(n)};
}

outcome adaptive_correction() {
    size_t held = 0;
    double margin = 1e300;
    std::string info;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        planted_config pc;
        pc.n_layers = 1;
        pc.n_heads = 1;
        pc.style_heads = {{0, 0}};
        pc.seed = 900 + seed;
        auto pr = planted_store(pc);
        subspace_options o;
        o.rank = pc.k;
        const auto hs = extract_subspace(pr.store, {0, 0}, o);
        const auto [dress_d, fixed_d] = correction_distances(pr, hs, 0.5);
        if (dress_d <= fixed_d) ++held;
        margin = std::min(margin, fixed_d - dress_d);
        if (seed == 0) {
            const auto [a3, f3] = correction_distances(pr, hs, 3.0);
            info = fmt("; lambda=3 seed 0 (info): dress %.3f vs dress* %.3f", a3, f3);
        }
    }
    return {held == 10, fmt("lambda=0.5, 500 negatives: dress <= dress* in %.0f/10 seeds, min margin %.4f", double(held), margin) + info};
}

// ---- end-to-end styled task ----

double read_si(const fs::path & report) { return nlohmann::json::parse(slurp(report)).at("si").get<double>(); }

size_t marked_in(const fs::path & responses) {
    size_t n = 0;
    for (const auto & r : load_responses(responses).records) n += count_marked(r.response);
    return n;
}

outcome end_to_end() {
    const auto dir = scratch("styled");
    write_styled_demo(dir, 7);
    const auto cfg = run_config::load(dir / "config.yaml");
    std::ostringstream log;

    stage_options plain_opts;
    plain_opts.method = steer_method::none;
    pipeline_runner plain(cfg, plain_opts, log);
    plain.pipeline();
    plain.generate();
    plain.evaluate();
    const size_t base_marked = marked_in(plain.out("responses.none.jsonl"));
    const double base_si = read_si(plain.out("eval.none.json"));

    pipeline_runner steered(cfg, {}, log);
    steered.generate();
    steered.evaluate();
    const size_t steer_marked = marked_in(steered.out("responses.dress.jsonl"));
    const double steer_si = read_si(steered.out("eval.dress.json"));

    steered.sweep();
    std::vector<double> sis;
    std::istringstream csv(slurp(steered.out("sweep.csv")));
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() >= 4 && f[1] == "lambda") sis.push_back(std::stod(f[3]));
    }
    bool monotone = sis.size() == 5;
    for (size_t i = 1; i < sis.size(); ++i) monotone = monotone && sis[i] >= sis[i - 1];

    const bool ok = steer_marked >= 2 * base_marked && steer_marked > 0 && steer_si > base_si && monotone;
    std::string sweep_txt = " sweep SI:";
    for (double s : sis) sweep_txt += fmt(" %.2f", s);
    return {ok, fmt("marked %.0f vs %.0f unedited, SI %.2f", double(steer_marked), double(base_marked), steer_si) +
                    fmt(" vs %.2f;", base_si) + sweep_txt};
}

// ---- determinism ----

outcome determinism() {
    std::vector<std::map<std::string, std::string>> runs;
    for (const char * name : {"det_a", "det_b"}) {
        const auto dir = scratch(name);
        write_styled_demo(dir, 7);
        std::ostringstream log;
        pipeline_runner r(run_config::load(dir / "config.yaml"), {}, log);
        r.pipeline();
        std::map<std::string, std::string> files;
        for (const auto & e : fs::directory_iterator(dir / "out")) files[e.path().filename().string()] = slurp(e.path());
        runs.push_back(std::move(files));
    }
    size_t manifests = 0;
    for (const auto & [name, body] : runs[0])
        if (name.find(".manifest.json") != std::string::npos) ++manifests;
    const bool ok = runs[0] == runs[1] && runs[0].count("styled.artifact.drss") && manifests == 4;
    return {ok, fmt("%.0f files compared, %.0f manifests", double(runs[0].size()), double(manifests))};
}

}  // namespace

int main() {
    run("oa-arithmetic", 1, oa_arithmetic);
    run("svd-oracle", 5, svd_oracle);
    run("planted-subspace-recovery", 30, planted_recovery);
    run("head-selection-recovery", 60, head_selection_recovery);
    run("steering-identities", 30, steering_identities);
    run("adaptive-correction", 30, adaptive_correction);
    run("end-to-end-styled-task", 300, end_to_end);
    run("determinism", 300, determinism);
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
