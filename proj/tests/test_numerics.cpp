#include "doctest.h"

#include "dress/numerics.h"
#include "dress/rng.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace dress;

namespace {

mat random_mat(rng & r, size_t rows, size_t cols) {
    mat m(rows, cols);
    for (double & v : m.data) v = r.gaussian();
    return m;
}

std::vector<double> gram_singular_values(const mat & m) {
    Eigen::MatrixXd a(m.rows, m.cols);
    for (size_t i = 0; i < m.rows; ++i)
        for (size_t j = 0; j < m.cols; ++j) a(i, j) = m(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.transpose() * a);
    std::vector<double> out;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
    std::sort(out.rbegin(), out.rend());
    return out;
}

double max_orthonormality_error(const mat & v) {
    double worst = 0.0;
    for (size_t i = 0; i < v.rows; ++i)
        for (size_t j = 0; j < v.rows; ++j)
            worst = std::max(worst, std::abs(dot(v.row(i), v.row(j)) - (i == j ? 1.0 : 0.0)));
    return worst;
}

}  // namespace

TEST_CASE("svd rank-1 analytic") {
    mat m(3, 2, {2, 0, 0, 0, 2, 0});
    auto r = svd_topk(m, 1);
    CHECK(r.singular_values[0] == doctest::Approx(std::sqrt(8.0)).epsilon(1e-14));
    CHECK(std::abs(r.right_vectors(0, 0)) == doctest::Approx(1.0));
    CHECK(r.right_vectors(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("svd identity") {
    auto r = svd_topk(mat::identity(3), 3);
    for (double s : r.singular_values) CHECK(s == doctest::Approx(1.0));
    CHECK(max_orthonormality_error(r.right_vectors) < 1e-12);
}

TEST_CASE("svd 12x6 matches Gram eigen oracle") {
    rng r(7);
    mat m = random_mat(r, 12, 6);
    auto got = svd_topk(m, 6, true);
    auto want = gram_singular_values(m);
    for (size_t i = 0; i < 6; ++i) CHECK(std::abs(got.singular_values[i] - want[i]) < 1e-8);
    CHECK(max_orthonormality_error(got.right_vectors) < 1e-8);
    // reconstruction at full rank
    const mat & s = *got.left_vectors;
    double err = 0.0;
    for (size_t i = 0; i < 12; ++i)
        for (size_t j = 0; j < 6; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < 6; ++k) acc += s(i, k) * got.singular_values[k] * got.right_vectors(k, j);
            err = std::max(err, std::abs(acc - m(i, j)));
        }
    CHECK(err < 1e-10);
}

TEST_CASE("svd wide and rank-deficient inputs") {
    rng r(11);
    mat wide = random_mat(r, 4, 9);
    auto got = svd_topk(wide, 4);
    auto want = gram_singular_values(wide);
    for (size_t i = 0; i < 4; ++i) CHECK(std::abs(got.singular_values[i] - want[i]) < 1e-8);

    // rank 2, 10x5
    mat a = random_mat(r, 10, 2), b = random_mat(r, 2, 5), low(10, 5);
    for (size_t i = 0; i < 10; ++i)
        for (size_t j = 0; j < 5; ++j) low(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j);
    auto full = svd_full(low);
    CHECK(full.right_vectors.rows == 5);
    CHECK(max_orthonormality_error(full.right_vectors) < 1e-8);
    CHECK(full.singular_values[2] < 1e-10);
    double frob = 0.0, ss = 0.0;
    for (double v : low.data) frob += v * v;
    for (double s : full.singular_values) ss += s * s;
    CHECK(std::abs(frob - ss) < 1e-8 * std::max(1.0, frob));
}

TEST_CASE("svd errors") {
    mat m(2, 2, {1, 2, 3, 4});
    CHECK_THROWS_AS(svd_topk(m, 0), std::invalid_argument);
    CHECK_THROWS_AS(svd_topk(m, 3), std::invalid_argument);
    m(0, 0) = std::nan("");
    CHECK_THROWS_AS(svd_topk(m, 1), std::invalid_argument);
}

TEST_CASE("svd is deterministic") {
    rng r(3);
    mat m = random_mat(r, 20, 8);
    auto a = svd_topk(m, 5), b = svd_topk(m, 5);
    CHECK(a.singular_values == b.singular_values);
    CHECK(a.right_vectors == b.right_vectors);
}

TEST_CASE("logistic fit: separable, degenerate, Gaussian") {
    {
        mat xs(16, 2);
        std::vector<int> ys(16);
        for (size_t i = 0; i < 16; ++i) {
            xs(i, 0) = i % 2 ? 1.0 : -1.0;
            ys[i] = int(i % 2);
        }
        auto p = fit_logistic(xs, ys);
        CHECK(probe_accuracy(p, xs, ys) == 1.0);
    }
    {
        mat xs(10, 3);
        for (double & v : xs.data) v = 0.25;
        std::vector<int> ys{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
        auto p = fit_logistic(xs, ys);
        CHECK(probe_accuracy(p, xs, ys) == 0.5);
    }
    {
        rng r(42);
        const size_t d = 16;
        auto draw = [&](size_t n, mat & xs, std::vector<int> & ys) {
            xs = mat(n, d);
            ys.assign(n, 0);
            for (size_t i = 0; i < n; ++i) {
                ys[i] = int(i % 2);
                for (size_t j = 0; j < d; ++j) xs(i, j) = r.gaussian() + (j == 0 ? (ys[i] ? 2.0 : -2.0) : 0.0);
            }
        };
        mat tr, te;
        std::vector<int> ytr, yte;
        draw(200, tr, ytr);
        draw(2000, te, yte);
        auto p = fit_logistic(tr, ytr);
        // Bayes accuracy is Phi(2) ~ 0.977
        CHECK(probe_accuracy(p, te, yte) >= 0.95);
    }
}

TEST_CASE("logistic fit errors and permutation invariance") {
    mat xs(4, 1, {1, 2, 3, 4});
    std::vector<int> one{1, 1, 1, 1};
    CHECK_THROWS(fit_logistic(xs, one));
    mat one_row(1, 1, {1});
    std::vector<int> y1{1};
    CHECK_THROWS(fit_logistic(one_row, y1));

    rng r(5);
    mat a = random_mat(r, 30, 4);
    std::vector<int> ys(30);
    for (size_t i = 0; i < 30; ++i) ys[i] = a(i, 0) + 0.3 * r.gaussian() > 0 ? 1 : 0;
    std::vector<size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    r.shuffle(std::span<size_t>(perm));
    mat b(30, 4);
    std::vector<int> yb(30);
    for (size_t i = 0; i < 30; ++i) {
        std::copy(a.row(perm[i]).begin(), a.row(perm[i]).end(), b.row(i).begin());
        yb[i] = ys[perm[i]];
    }
    auto pa = fit_logistic(a, ys), pb = fit_logistic(b, yb);
    for (size_t j = 0; j < 4; ++j) CHECK(std::abs(pa.weights[j] - pb.weights[j]) < 1e-9);
    CHECK(std::abs(pa.bias - pb.bias) < 1e-9);
}

TEST_CASE("project and cosine") {
    std::vector<double> v{3, 4};
    CHECK(project(v, mat::identity(2)) == std::vector<double>{3, 4});
    CHECK(project(std::vector<double>{0, 0}, mat::identity(2)) == std::vector<double>{0, 0});
    CHECK(project(v, mat(1, 2, {0.6, 0.8}))[0] == doctest::Approx(5.0));
    CHECK_THROWS(project(std::vector<double>{1, 2, 3}, mat::identity(2)));

    std::vector<double> a{1, 2, 3};
    CHECK(cosine(a, a) == doctest::Approx(1.0));
    CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
    CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 0}) == 0.0);

    // projection residual is orthogonal to the basis
    rng r(9);
    auto svd = svd_topk(random_mat(r, 8, 6), 3);
    std::vector<double> x(6);
    for (double & e : x) e = r.gaussian();
    auto c = project(x, svd.right_vectors);
    std::vector<double> res = x;
    for (size_t i = 0; i < 3; ++i)
        for (size_t j = 0; j < 6; ++j) res[j] -= c[i] * svd.right_vectors(i, j);
    for (size_t i = 0; i < 3; ++i) CHECK(std::abs(dot(res, svd.right_vectors.row(i))) < 1e-8);
}

TEST_CASE("compensated sum") {
    compensated_sum s;
    s.add(1e16);
    s.add(1.0);
    s.add(-1e16);
    CHECK(s.value() == 1.0);
}

TEST_CASE("rng streams are pinned") {
    rng r(1234);
    CHECK(r.next_u64() == 17473339210090333472ull);
    rng g(99);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    g.shuffle(std::span<int>(v));
    const double x = g.gaussian();
    rng g2(99);
    std::vector<int> w{0, 1, 2, 3, 4, 5, 6, 7};
    g2.shuffle(std::span<int>(w));
    CHECK(v == w);
    CHECK(g2.gaussian() == x);
}
