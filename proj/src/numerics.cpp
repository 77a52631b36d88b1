#include "dress/numerics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dress {

mat::mat(size_t r, size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) {
        throw std::invalid_argument("mat: data length " + std::to_string(data.size()) + " != rows*cols");
    }
}

bool mat::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

mat mat::identity(size_t n) {
    mat m(n, n);
    for (size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

namespace {

// Householder QR, returns the upper-triangular R (cols x cols). Only valid for rows >= cols.
mat householder_r(const mat & a) {
    const size_t m = a.rows;
    const size_t n = a.cols;
    mat w = a;
    std::vector<double> v(m);
    for (size_t j = 0; j < n; ++j) {
        double norm = 0.0;
        for (size_t i = j; i < m; ++i) {
            norm += w(i, j) * w(i, j);
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            continue;
        }
        const double alpha = w(j, j) > 0 ? -norm : norm;
        for (size_t i = j; i < m; ++i) {
            v[i] = w(i, j);
        }
        v[j] -= alpha;
        double vnorm2 = 0.0;
        for (size_t i = j; i < m; ++i) {
            vnorm2 += v[i] * v[i];
        }
        if (vnorm2 == 0.0) {
            continue;
        }
        for (size_t c = j; c < n; ++c) {
            double s = 0.0;
            for (size_t i = j; i < m; ++i) {
                s += v[i] * w(i, c);
            }
            const double f = 2.0 * s / vnorm2;
            for (size_t i = j; i < m; ++i) {
                w(i, c) -= f * v[i];
            }
        }
    }
    mat r(n, n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t c = i; c < n; ++c) {
            r(i, c) = w(i, c);
        }
    }
    return r;
}

struct jacobi_out {
    std::vector<double> sigma;  // unsorted, one per column
    mat v;                      // cols x cols, columns are right vectors
};

// One-sided Jacobi (Hestenes): orthogonalize the columns of w by plane rotations
// accumulated into v. The column norms of the converged w are the singular values.
jacobi_out one_sided_jacobi(mat w) {
    const size_t n = w.cols;
    const size_t m = w.rows;
    mat v = mat::identity(n);
    constexpr double tol = 1e-15;
    constexpr int max_sweeps = 80;
    double frob2 = 0.0;
    for (double x : w.data) {
        frob2 += x * x;
    }
    // columns this small are numerically zero; rotating them only chases rounding noise
    const double negligible2 = 1e-30 * frob2;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (size_t p = 0; p + 1 < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p);
                    const double wq = w(i, q);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if (alpha <= negligible2 || beta <= negligible2) {
                    continue;
                }
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p);
                    const double wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p);
                    const double vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) {
            break;
        }
    }

    jacobi_out out{std::vector<double>(n), std::move(v)};
    for (size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (size_t i = 0; i < m; ++i) {
            s += w(i, j) * w(i, j);
        }
        out.sigma[j] = std::sqrt(s);
    }
    return out;
}

svd_result svd_impl(const mat & m, size_t k, bool want_left) {
    if (!m.all_finite()) {
        throw std::invalid_argument("svd: non-finite input");
    }
    const size_t n = m.cols;
    jacobi_out jo = m.rows > n ? one_sided_jacobi(householder_r(m)) : one_sided_jacobi(m);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return jo.sigma[a] > jo.sigma[b]; });

    svd_result res;
    res.singular_values.resize(k);
    res.right_vectors = mat(k, n);
    for (size_t i = 0; i < k; ++i) {
        const size_t j = order[i];
        res.singular_values[i] = jo.sigma[j];
        for (size_t c = 0; c < n; ++c) {
            res.right_vectors(i, c) = jo.v(c, j);
        }
    }
    if (want_left) {
        mat u(m.rows, k);
        for (size_t i = 0; i < k; ++i) {
            const double s = res.singular_values[i];
            if (s == 0.0) {
                continue;
            }
            const auto vi = res.right_vectors.row(i);
            for (size_t r = 0; r < m.rows; ++r) {
                u(r, i) = dot(m.row(r), vi) / s;
            }
        }
        res.left_vectors = std::move(u);
    }
    return res;
}

}  // namespace

svd_result svd_topk(const mat & m, size_t k, bool want_left) {
    if (k == 0 || k > std::min(m.rows, m.cols)) {
        throw std::invalid_argument("svd_topk: k=" + std::to_string(k) + " out of range for " +
                                    std::to_string(m.rows) + "x" + std::to_string(m.cols));
    }
    return svd_impl(m, k, want_left);
}

svd_result svd_full(const mat & m) {
    if (m.cols == 0) {
        throw std::invalid_argument("svd_full: empty matrix");
    }
    return svd_impl(m, m.cols, false);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> project(std::span<const double> v, const mat & basis) {
    if (v.size() != basis.cols) {
        throw std::invalid_argument("project: dimension mismatch (" + std::to_string(v.size()) + " vs " +
                                    std::to_string(basis.cols) + ")");
    }
    std::vector<double> out(basis.rows);
    for (size_t i = 0; i < basis.rows; ++i) {
        out[i] = dot(v, basis.row(i));
    }
    return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na < 1e-12 || nb < 1e-12) {
        return 0.0;
    }
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

void compensated_sum::add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
        comp_ += (sum_ - t) + x;
    } else {
        comp_ += (x - t) + sum_;
    }
    sum_ = t;
}

double linear_probe::logit(std::span<const double> x) const { return dot(weights, x) + bias; }

double linear_probe::probability(std::span<const double> x) const {
    const double z = logit(x);
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

linear_probe fit_logistic(const mat & xs, std::span<const int> ys, const probe_fit_config & cfg) {
    const size_t n = xs.rows;
    const size_t d = xs.cols;
    if (ys.size() != n) {
        throw std::invalid_argument("fit_logistic: label count mismatch");
    }
    if (n < 2) {
        throw std::invalid_argument("fit_logistic: need at least 2 samples");
    }
    size_t positives = 0;
    for (int y : ys) {
        if (y != 0 && y != 1) {
            throw std::invalid_argument("fit_logistic: labels must be 0/1");
        }
        positives += size_t(y);
    }
    if (positives == 0 || positives == n) {
        throw std::invalid_argument("fit_logistic: single-class input");
    }
    if (!xs.all_finite()) {
        throw std::invalid_argument("fit_logistic: non-finite features");
    }

    linear_probe p{std::vector<double>(d, 0.0), 0.0};
    std::vector<double> grad(d);
    const double inv_n = 1.0 / double(n);
    for (int it = 0; it < cfg.iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_b = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const auto x = xs.row(i);
            const double r = p.probability(x) - double(ys[i]);
            for (size_t j = 0; j < d; ++j) {
                grad[j] += r * x[j];
            }
            grad_b += r;
        }
        for (size_t j = 0; j < d; ++j) {
            p.weights[j] -= cfg.learning_rate * (grad[j] * inv_n + cfg.l2 * p.weights[j]);
        }
        p.bias -= cfg.learning_rate * grad_b * inv_n;
    }
    return p;
}

double probe_accuracy(const linear_probe & probe, const mat & xs, std::span<const int> ys) {
    if (xs.rows == 0) {
        throw std::invalid_argument("probe_accuracy: empty set");
    }
    size_t correct = 0;
    for (size_t i = 0; i < xs.rows; ++i) {
        correct += probe.predict(xs.row(i)) == ys[i] ? 1 : 0;
    }
    return double(correct) / double(xs.rows);
}

}  // namespace dress
