#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dress {

// Dense row-major matrix of doubles.
struct mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    mat() = default;
    mat(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    mat(size_t r, size_t c, std::vector<double> values);

    double & operator()(size_t r, size_t c) { return data[r * cols + c]; }
    double operator()(size_t r, size_t c) const { return data[r * cols + c]; }

    std::span<double> row(size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(size_t r) const { return {data.data() + r * cols, cols}; }

    bool all_finite() const;
    static mat identity(size_t n);

    bool operator==(const mat &) const = default;
};

struct svd_result {
    std::vector<double> singular_values;  // descending
    mat right_vectors;                    // k x cols, rows are v_i
    std::optional<mat> left_vectors;      // rows x k, columns are s_i
};

// Top-k singular triplets of m via one-sided Jacobi (after a Householder QR
// when rows > cols). Deterministic for a fixed input. Signs are not normalized.
svd_result svd_topk(const mat & m, size_t k, bool want_left = false);

// All cols right singular vectors, including an orthonormal completion of the
// null space with zero singular values. Used when more directions than the
// rank are needed (subspace diagnostics).
svd_result svd_full(const mat & m);

struct linear_probe {
    std::vector<double> weights;
    double bias = 0.0;

    double logit(std::span<const double> x) const;
    double probability(std::span<const double> x) const;
    int predict(std::span<const double> x) const { return logit(x) >= 0.0 ? 1 : 0; }
    bool operator==(const linear_probe &) const = default;
};

struct probe_fit_config {
    double l2 = 1e-3;
    double learning_rate = 0.1;
    int iterations = 500;
};

// L2-regularized logistic regression, full-batch gradient descent from zero.
linear_probe fit_logistic(const mat & xs, std::span<const int> ys, const probe_fit_config & cfg = {});

double probe_accuracy(const linear_probe & probe, const mat & xs, std::span<const int> ys);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// coefficients of v on each basis row
std::vector<double> project(std::span<const double> v, const mat & basis);

// cosine similarity; exactly 0 when either norm is below 1e-12
double cosine(std::span<const double> a, std::span<const double> b);

// Neumaier-compensated running sum, used for means that must be exact to the last bits.
class compensated_sum {
public:
    void add(double x);
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace dress
