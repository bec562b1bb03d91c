#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "hazeclip/errors.hpp"

namespace hazeclip::linalg {

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw DimensionError("dot: dimension mismatch");
    T s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
T norm(std::span<const T> a) {
    return std::sqrt(dot(a, a));
}

template <typename T>
std::vector<T> normalized(std::span<const T> a) {
    const T n = norm(a);
    if (!(n > T(0))) throw ContractError("cannot normalize a zero vector");
    std::vector<T> out(a.begin(), a.end());
    for (T& v : out) v /= n;
    return out;
}

// Gradient of x / ‖x‖ pulled back to x, given the normalised vector `unit`,
// the original norm and the upstream gradient.
template <typename T>
std::vector<T> normalize_vjp(std::span<const T> unit, T norm_value, std::span<const T> grad_unit) {
    const T proj = dot(unit, grad_unit);
    std::vector<T> g(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i) g[i] = (grad_unit[i] - unit[i] * proj) / norm_value;
    return g;
}

// Row-major dense matrix.
template <typename T>
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}

    T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> m(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = static_cast<U>(data[i]);
        return m;
    }
};

// y = M x
template <typename T>
void matvec(const Matrix<T>& m, std::span<const T> x, std::span<T> y) {
    for (int r = 0; r < m.rows; ++r) {
        T s = 0;
        const T* row = &m.data[static_cast<std::size_t>(r) * m.cols];
        for (int c = 0; c < m.cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
}

// x += Mᵀ y
template <typename T>
void matvec_transpose_add(const Matrix<T>& m, std::span<const T> y, std::span<T> x) {
    for (int r = 0; r < m.rows; ++r) {
        const T* row = &m.data[static_cast<std::size_t>(r) * m.cols];
        for (int c = 0; c < m.cols; ++c) x[c] += row[c] * y[r];
    }
}

inline Matrix<double> gaussian_matrix(int rows, int cols, std::mt19937_64& rng, double stddev) {
    Matrix<double> m(rows, cols);
    std::normal_distribution<double> nd(0.0, stddev);
    for (double& v : m.data) v = nd(rng);
    return m;
}

// Random orthogonal n×n matrix (modified Gram-Schmidt on Gaussian columns).
inline Matrix<double> random_orthogonal(int n, std::mt19937_64& rng) {
    Matrix<double> a = gaussian_matrix(n, n, rng, 1.0);
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < j; ++k) {
            double p = 0;
            for (int i = 0; i < n; ++i) p += a(i, j) * a(i, k);
            for (int i = 0; i < n; ++i) a(i, j) -= p * a(i, k);
        }
        double nn = 0;
        for (int i = 0; i < n; ++i) nn += a(i, j) * a(i, j);
        nn = std::sqrt(nn);
        for (int i = 0; i < n; ++i) a(i, j) /= nn;
    }
    return a;
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename T>
std::uint64_t fnv1a_values(std::span<const T> values, std::uint64_t h = 1469598103934665603ULL) {
    return fnv1a(std::string_view(reinterpret_cast<const char*>(values.data()), values.size_bytes()), h);
}

}  // namespace hazeclip::linalg
