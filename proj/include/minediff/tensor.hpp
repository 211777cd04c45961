#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace minediff {

using Point = std::vector<double>;

// Dense row-major 64-bit float tensor. Rank 1 and 2 cover everything in this
// project; rank 0 is represented as shape {1}.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;

    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        v.assign(numel_of(shape), fill);
    }

    Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != numel_of(shape)) {
            throw std::invalid_argument("tensor: value count does not match shape");
        }
    }

    static size_t numel_of(const std::vector<int>& s) {
        if (s.empty()) throw std::invalid_argument("tensor: empty shape");
        size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return v.size(); }
    int rows() const { return shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(int r, int c) { return v[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * static_cast<size_t>(cols()) + static_cast<size_t>(c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool finite() const {
        for (double x : v) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }
};

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

// C = A * B, A:[m x k], B:[k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(a) + " vs " + shape_str(b));
    Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            if (aip == 0.0) continue;
            const double* brow = &b.v[static_cast<size_t>(p) * n];
            double* crow = &c.v[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

// C = A * B^T, A:[m x k], B:[n x k]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const int m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) throw std::invalid_argument("matmul_nt: inner dimensions differ " + shape_str(a) + " vs " + shape_str(b));
    Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = &a.v[static_cast<size_t>(i) * k];
        for (int j = 0; j < n; ++j) {
            const double* brow = &b.v[static_cast<size_t>(j) * k];
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            c.at(i, j) = s;
        }
    }
    return c;
}

// C = A^T * B, A:[k x m], B:[k x n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const int k = a.rows(), m = a.cols(), n = b.cols();
    if (b.rows() != k) throw std::invalid_argument("matmul_tn: inner dimensions differ " + shape_str(a) + " vs " + shape_str(b));
    Tensor c({m, n});
    for (int p = 0; p < k; ++p) {
        const double* arow = &a.v[static_cast<size_t>(p) * m];
        const double* brow = &b.v[static_cast<size_t>(p) * n];
        for (int i = 0; i < m; ++i) {
            const double api = arow[i];
            if (api == 0.0) continue;
            double* crow = &c.v[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
    return c;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor c = a;
    for (size_t i = 0; i < c.v.size(); ++i) c.v[i] += b.v[i];
    return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor c = a;
    for (size_t i = 0; i < c.v.size(); ++i) c.v[i] -= b.v[i];
    return c;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor c = a;
    for (size_t i = 0; i < c.v.size(); ++i) c.v[i] *= b.v[i];
    return c;
}

inline Tensor scaled(const Tensor& a, double k) {
    Tensor c = a;
    for (double& x : c.v) x *= k;
    return c;
}

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace minediff
