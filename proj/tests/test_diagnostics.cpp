#include "doctest.h"

#include "dress/diagnostics.h"
#include "dress/errors.h"
#include "dress/subspace.h"
#include "dress/synthgen.h"

#include <cmath>
#include <sstream>

using namespace dress;

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string & text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(cells);
    }
    return rows;
}

planted_result planted_k1(uint64_t seed) {
    planted_config pc;
    pc.n_layers = 1;
    pc.n_heads = 1;
    pc.head_dim = 16;
    pc.n_pairs = 200;
    pc.k = 1;
    pc.coef_mean = {2.0};
    pc.coef_sd = 0.1;
    pc.style_heads = {{0, 0}};
    pc.seed = seed;
    return planted_store(pc);
}

eval_report fake_report(double si, double sp, double fs) {
    eval_report r;
    r.si = si;
    r.sp = sp;
    r.fs = fs;
    r.oa = overall(si, sp, fs);
    return r;
}

}  // namespace

TEST_CASE("csv quoting") {
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_field("two\nlines") == "\"two\nlines\"");
}

TEST_CASE("projection export separates style from irrelevant directions") {
    auto pr = planted_k1(4);
    subspace_options o;
    o.rank = 2;
    auto hs = extract_subspace(pr.store, {0, 0}, o);
    auto rows = parse_csv(projection_export(pr.store, hs));
    REQUIRE(rows.size() == 1 + 2 * 200);
    CHECK(rows[0] == std::vector<std::string>{"pair_id", "polarity", "p1", "p2", "q1", "q2"});
    double p1[2] = {0, 0}, q1[2] = {0, 0};
    for (size_t i = 1; i < rows.size(); ++i) {
        const int pos = rows[i][1] == "pos" ? 1 : 0;
        CHECK(rows[i][1] == (i % 2 ? "pos" : "neg"));
        p1[pos] += std::stod(rows[i][2]) / 200.0;
        q1[pos] += std::stod(rows[i][4]) / 200.0;
    }
    const double sigma = 0.05;
    CHECK(std::abs(p1[1] - p1[0]) >= 5 * sigma);
    CHECK(std::abs(q1[1] - q1[0]) <= 0.5 * sigma);

    o.rank = 1;
    CHECK_THROWS_AS(projection_export(pr.store, extract_subspace(pr.store, {0, 0}, o)), data_error);
}

TEST_CASE("projection export of a style-free head has identical rows") {
    auto pr = planted_k1(5);
    subspace_options o;
    o.rank = 2;
    auto hs = extract_subspace(pr.store, {0, 0}, o);
    activation_store flat(1, 1, 16, {"a", "b", "c"});
    for (size_t i = 0; i < 3; ++i) {
        auto n = flat.at({0, 0}, i, negative);
        auto p = flat.at({0, 0}, i, positive);
        for (size_t j = 0; j < 16; ++j) n[j] = p[j] = std::sin(double(i * 16 + j));
    }
    auto rows = parse_csv(projection_export(flat, hs));
    REQUIRE(rows.size() == 7);
    for (size_t i = 1; i < rows.size(); i += 2) {
        CHECK(std::vector<std::string>(rows[i].begin() + 2, rows[i].end()) ==
              std::vector<std::string>(rows[i + 1].begin() + 2, rows[i + 1].end()));
    }
}

TEST_CASE("probe heatmap") {
    std::vector<std::pair<hook_point, double>> uniform;
    for (uint32_t l = 0; l < 3; ++l)
        for (uint32_t h = 0; h < 4; ++h) uniform.push_back({{l, h}, 0.5});
    auto rows = parse_csv(probe_heatmap_export(uniform, 3, 4));
    CHECK(rows.size() == 1 + 3 * 4 + 3);
    CHECK(rows[0] == std::vector<std::string>{"row_kind", "layer", "head_rank", "accuracy", "std"});
    for (size_t i = 13; i < rows.size(); ++i) {
        CHECK(rows[i][0] == "layer_mean");
        CHECK(std::stod(rows[i][3]) == 0.5);
        CHECK(std::stod(rows[i][4]) == 0.0);
    }

    auto planted = uniform;
    planted[6].second = 1.0;  // layer 1, head 2
    rows = parse_csv(probe_heatmap_export(planted, 3, 4));
    double layer1_max = 0.0;
    for (const auto & r : rows)
        if (r[0] == "head" && r[1] == "1") layer1_max = std::max(layer1_max, std::stod(r[3]));
    CHECK(layer1_max == 1.0);
    CHECK(rows[5][0] == "head");
    CHECK(rows[5][1] == "1");
    CHECK(rows[5][2] == "0");
    CHECK(std::stod(rows[5][3]) == 1.0);
}

TEST_CASE("sweep keeps grid order and records failures") {
    std::vector<sweep_point> grid;
    for (double l : {0.0, 1.0, 2.0, 3.0, 4.0}) grid.push_back({"lambda", l});
    grid.push_back({"heads", 2});
    auto run = [](const sweep_point & p) {
        if (p.value == 3.0) throw data_error("boom at 3");
        return fake_report(p.value / 4.0, 1.0 - p.value / 8.0, 0.5);
    };
    auto serial = sweep(grid, run, 1);
    auto parallel = sweep(grid, run, 4);
    REQUIRE(serial.size() == 6);
    CHECK(sweep_csv(serial) == sweep_csv(parallel));
    CHECK(serial[3].error == "boom at 3");
    CHECK_FALSE(serial[3].report);
    auto rows = parse_csv(sweep_csv(serial));
    CHECK(rows[0] == std::vector<std::string>{"grid_index", "parameter", "value", "si", "sp", "fs", "oa", "error"});
    CHECK(rows[4][7] == "boom at 3");
    CHECK(rows[6][1] == "heads");
    CHECK(std::stod(rows[3][3]) == 0.5);
}

TEST_CASE("a one-point sweep equals a single evaluation") {
    auto m = tiny_model(61);
    std::vector<std::string> pos{"xxxx x", "xxx xx", "xx x x", "x xxx", "xxxxx", "xx xx"};
    std::vector<std::string> neg{"yyyy y", "yyy yy", "yy y y", "y yyy", "yyyyy", "yy yy"};
    auto clf = train_style_classifier(pos, neg);
    response_set ref{"none", "", {{"a", "q1", "yyy"}, {"b", "q2", "yy yy"}}};
    response_set edited{"dress", "", {{"a", "q1", "xxx"}, {"b", "q2", "yy yy"}}};
    auto direct = evaluate(m, clf, edited, ref);
    auto rows = sweep({{"lambda", 3.0}}, [&](const sweep_point &) { return evaluate(m, clf, edited, ref); });
    REQUIRE(rows[0].report);
    CHECK(rows[0].report->to_json() == direct.to_json());

    // lambda 0 reproduces the reference, so the row is the unedited baseline
    auto zero = sweep({{"lambda", 0.0}}, [&](const sweep_point &) { return evaluate(m, clf, ref, ref); });
    CHECK(zero[0].report->sp == doctest::Approx(1.0));
    CHECK(zero[0].report->si == 0.0);
}
