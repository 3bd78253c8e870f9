#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "dgode/matrix.hpp"

namespace dgode {

/// Real eigendecomposition M = vectors * diag(values) * inverse.
/// Columns of `vectors` are eigenvectors; for the symmetric path the basis is
/// orthonormal and `inverse` is just the transpose.
struct EigenSystem {
    DenseMatrix vectors;
    std::vector<double> values;
    DenseMatrix inverse;

    DenseMatrix reconstruct() const {
        DenseMatrix scaled = vectors;
        for (std::size_t i = 0; i < scaled.rows(); ++i)
            for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= values[j];
        return scaled * inverse;
    }

    /// vectors * diag(f(values)) * inverse.
    DenseMatrix apply(const std::function<double(double)>& f) const {
        DenseMatrix scaled = vectors;
        for (std::size_t i = 0; i < scaled.rows(); ++i)
            for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) *= f(values[j]);
        return scaled * inverse;
    }
};

namespace detail {

// Sort eigenpairs ascending by value and fix each eigenvector's sign so the
// entry of largest magnitude is positive. Keeps results reproducible.
inline void sort_and_normalize(std::vector<double>& values, DenseMatrix& vectors) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    std::vector<double> sorted_vals(n);
    DenseMatrix sorted_vecs(vectors.rows(), n);
    for (std::size_t j = 0; j < n; ++j) {
        sorted_vals[j] = values[order[j]];
        std::size_t peak = 0;
        for (std::size_t i = 1; i < vectors.rows(); ++i)
            if (std::fabs(vectors(i, order[j])) > std::fabs(vectors(peak, order[j]))) peak = i;
        const double sign = vectors(peak, order[j]) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < vectors.rows(); ++i)
            sorted_vecs(i, j) = sign * vectors(i, order[j]);
    }
    values = std::move(sorted_vals);
    vectors = std::move(sorted_vecs);
}

inline double off_diagonal_norm(const DenseMatrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

}  // namespace detail

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues come back sorted ascending; inverse equals vectors^T.
inline EigenSystem sym_eig(const DenseMatrix& m) {
    if (!m.is_square()) throw ShapeError("sym_eig: matrix is not square");
    const double sym_tol = 1e-10 * std::max(1.0, m.max_abs());
    if (!m.is_symmetric(sym_tol)) throw ShapeError("sym_eig: matrix is not symmetric");

    const std::size_t n = m.rows();
    DenseMatrix a = m;
    DenseMatrix v = DenseMatrix::identity(n);
    const double stop = 1e-15 * std::max(1.0, a.frobenius_norm());

    for (int sweep = 0; sweep < 100; ++sweep) {
        if (detail::off_diagonal_norm(a) <= stop) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::fabs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {  // A <- A G
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {  // A <- G^T A
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {  // V <- V G
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (detail::off_diagonal_norm(a) > 1e-8 * std::max(1.0, a.frobenius_norm()))
        throw Error("sym_eig: Jacobi iteration failed to converge");

    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a(i, i);
    detail::sort_and_normalize(values, v);
    v.assert_finite("sym_eig vectors");
    return EigenSystem{v, values, v.transpose()};
}

/// Eigendecomposition for a square matrix expected to be diagonalizable with
/// real spectrum. Symmetric inputs take the Jacobi path directly; anything
/// else is decomposed through its symmetric part and gated by a
/// reconstruction check, so matrices with complex or defective spectra are
/// rejected rather than silently mangled.
inline EigenSystem general_eig(const DenseMatrix& m) {
    if (!m.is_square()) throw ShapeError("general_eig: matrix is not square");
    const double sym_tol = 1e-10 * std::max(1.0, m.max_abs());
    EigenSystem es;
    if (m.is_symmetric(sym_tol)) {
        es = sym_eig(m);
    } else {
        DenseMatrix sym_part = m;
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j)
                sym_part(i, j) = 0.5 * (m(i, j) + m(j, i));
        es = sym_eig(sym_part);
    }
    if (relative_frobenius_error(es.reconstruct(), m, 1.0) > 1e-6)
        throw DiagonalizabilityError(
            "general_eig: no real eigendecomposition within tolerance "
            "(complex or defective spectrum)");
    return es;
}

/// m^k by binary exponentiation; k = 0 gives the identity.
inline DenseMatrix mat_pow_int(const DenseMatrix& m, std::size_t k) {
    if (!m.is_square()) throw ShapeError("mat_pow_int: matrix is not square");
    DenseMatrix result = DenseMatrix::identity(m.rows());
    DenseMatrix base = m;
    while (k > 0) {
        if (k & 1u) result = result * base;
        base = base * base;
        k >>= 1u;
    }
    return result;
}

/// e^{m t} through the eigendecomposition of m.
inline DenseMatrix mat_exp(const DenseMatrix& m, double t) {
    const EigenSystem es = general_eig(m);
    DenseMatrix r = es.apply([t](double lambda) { return std::exp(t * lambda); });
    r.assert_finite("mat_exp");
    return r;
}

/// Matrix logarithm with eigenvalues clamped from below at eps before the
/// scalar log. Keeps ln defined when the spectrum touches zero.
inline DenseMatrix mat_log_clamped(const DenseMatrix& m, double eps) {
    if (!(eps > 0.0)) throw ConfigError("mat_log_clamped: eps must be positive");
    const EigenSystem es = general_eig(m);
    DenseMatrix r = es.apply([eps](double lambda) { return std::log(std::max(lambda, eps)); });
    r.assert_finite("mat_log_clamped");
    return r;
}

}  // namespace dgode
