#pragma once

// Dense row-major double matrix plus the handful of kernels everything else
// is built from. Loops are written in a fixed order on purpose: results must
// be bit-reproducible across runs on the same platform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "attnlab/errors.hpp"

namespace attnlab {

class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionMismatch("from_rows: ragged rows");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    Matrix& operator+=(const Matrix& o) {
        require_same_shape(o, "operator+=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }
    Matrix& operator-=(const Matrix& o) {
        require_same_shape(o, "operator-=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }
    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { a += b; return a; }
    friend Matrix operator-(Matrix a, const Matrix& b) { a -= b; return a; }
    friend Matrix operator*(Matrix a, double s) { a *= s; return a; }
    friend Matrix operator*(double s, Matrix a) { a *= s; return a; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    // axpy: *this += s * o
    void add_scaled(const Matrix& o, double s) {
        require_same_shape(o, "add_scaled");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += s * o.data_[k];
    }

    Matrix col(std::size_t j) const {
        Matrix c(rows_, 1);
        for (std::size_t i = 0; i < rows_; ++i) c(i, 0) = (*this)(i, j);
        return c;
    }

    void set_col(std::size_t j, const Matrix& c) {
        if (c.rows_ != rows_ || c.cols_ != 1)
            throw DimensionMismatch("set_col: column shape " + shape_str(c) + " into " + shape_str(*this));
        for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = c(i, 0);
    }

    static std::string shape_str(const Matrix& m) {
        return std::to_string(m.rows_) + "x" + std::to_string(m.cols_);
    }

private:
    void require_same_shape(const Matrix& o, const char* op) const {
        if (!same_shape(o))
            throw DimensionMismatch(std::string(op) + ": " + shape_str(*this) + " vs " + shape_str(o));
    }

    std::size_t rows_, cols_;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionMismatch("matmul: " + Matrix::shape_str(a) + " * " + Matrix::shape_str(b));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

// a^T * b without forming the transpose.
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw DimensionMismatch("matmul_at_b: " + Matrix::shape_str(a) + "^T * " + Matrix::shape_str(b));
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k)
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
        }
    return c;
}

// a * b^T without forming the transpose.
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw DimensionMismatch("matmul_a_bt: " + Matrix::shape_str(a) + " * " + Matrix::shape_str(b) + "^T");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    return c;
}

// Columnwise softmax with max subtraction. Each output column sums to 1 up to
// rounding; shifting a column by a constant leaves it unchanged.
inline Matrix softmax_columns(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double mx = m(0, j);
        for (std::size_t i = 1; i < m.rows(); ++i) mx = std::max(mx, m(i, j));
        double sum = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const double e = std::exp(m(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) /= sum;
    }
    return out;
}

// Entrywise log with a positivity floor; entries below the floor are clamped
// before taking the log so the result stays finite.
inline Matrix elementwise_log(const Matrix& m, double floor = 1e-300) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out(i, j) = std::log(std::max(m(i, j), floor));
    return out;
}

struct Norms {
    double frobenius;
    double max_abs;
};

inline Norms norms(const Matrix& m) {
    double sq = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            sq += v * v;
            mx = std::max(mx, std::abs(v));
        }
    return {std::sqrt(sq), mx};
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw DimensionMismatch("max_abs_diff: " + Matrix::shape_str(a) + " vs " + Matrix::shape_str(b));
    double mx = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) mx = std::max(mx, std::abs(a(i, j) - b(i, j)));
    return mx;
}

inline double frobenius_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw DimensionMismatch("frobenius_diff: " + Matrix::shape_str(a) + " vs " + Matrix::shape_str(b));
    double sq = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double d = a(i, j) - b(i, j);
            sq += d * d;
        }
    return std::sqrt(sq);
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw DimensionMismatch("hadamard: " + Matrix::shape_str(a) + " vs " + Matrix::shape_str(b));
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) * b(i, j);
    return c;
}

inline Matrix sym_part(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("sym_part: " + Matrix::shape_str(a));
    Matrix s(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
    return s;
}

inline Matrix skew_part(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("skew_part: " + Matrix::shape_str(a));
    Matrix s(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) s(i, j) = 0.5 * (a(i, j) - a(j, i));
    return s;
}

} // namespace attnlab
