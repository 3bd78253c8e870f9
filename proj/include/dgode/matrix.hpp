#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

#include "dgode/errors.hpp"

namespace dgode {

/// Row-major dense matrix of doubles. The single value carrier for node
/// features, adjacencies, learnable weights and everything in between.
class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    DenseMatrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_)
                throw ShapeError("ragged initializer for DenseMatrix");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }
    bool is_square() const { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    std::vector<double> row(std::size_t i) const {
        return std::vector<double>(data_.begin() + static_cast<long>(i * cols_),
                                   data_.begin() + static_cast<long>((i + 1) * cols_));
    }

    void set_row(std::size_t i, const std::vector<double>& v) {
        if (v.size() != cols_) throw DimensionError("set_row: width mismatch");
        for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) = v[j];
    }

    DenseMatrix transpose() const {
        DenseMatrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    DenseMatrix& operator+=(const DenseMatrix& o) {
        require_same_shape(o, "operator+=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }

    DenseMatrix& operator-=(const DenseMatrix& o) {
        require_same_shape(o, "operator-=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }

    DenseMatrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
    friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
    friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
    friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

    friend DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
        if (a.cols_ != b.rows_)
            throw DimensionError("matmul: " + shape_str(a) + " x " + shape_str(b));
        DenseMatrix c(a.rows_, b.cols_);
        for (std::size_t i = 0; i < a.rows_; ++i) {
            for (std::size_t k = 0; k < a.cols_; ++k) {
                const double aik = a(i, k);
                if (aik == 0.0) continue;
                for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
            }
        }
        return c;
    }

    DenseMatrix hadamard(const DenseMatrix& o) const {
        require_same_shape(o, "hadamard");
        DenseMatrix r = *this;
        for (std::size_t k = 0; k < data_.size(); ++k) r.data_[k] *= o.data_[k];
        return r;
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return std::sqrt(s);
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::fabs(v));
        return m;
    }

    bool is_symmetric(double tol) const {
        if (!is_square()) return false;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = i + 1; j < cols_; ++j)
                if (std::fabs((*this)(i, j) - (*this)(j, i)) > tol) return false;
        return true;
    }

    bool is_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void assert_finite(const char* what) const {
        if (!is_finite()) throw Error(std::string(what) + ": non-finite entries");
    }

    void fill_uniform(std::mt19937_64& rng, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        for (double& v : data_) v = d(rng);
    }

    void fill_gaussian(std::mt19937_64& rng, double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        for (double& v : data_) v = d(rng);
    }

private:
    static std::string shape_str(const DenseMatrix& m) {
        return std::to_string(m.rows_) + "x" + std::to_string(m.cols_);
    }

    void require_same_shape(const DenseMatrix& o, const char* op) const {
        if (rows_ != o.rows_ || cols_ != o.cols_)
            throw DimensionError(std::string(op) + ": " + shape_str(*this) + " vs " + shape_str(o));
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// ||a - b||_F / max(||b||_F, floor). The workhorse of every numeric check.
inline double relative_frobenius_error(const DenseMatrix& a, const DenseMatrix& b,
                                       double floor = 1e-300) {
    return (a - b).frobenius_norm() / std::max(b.frobenius_norm(), floor);
}

}  // namespace dgode
