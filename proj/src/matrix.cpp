#include "ddn/matrix.hpp"

#include <cmath>
#include <string>

namespace ddn {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

}  // namespace

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("Matrix initializer: ragged rows");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix& Matrix::operator+=(const Matrix& o) {
    check_same_shape(*this, o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    check_same_shape(*this, o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
}

std::vector<double> Matrix::col(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
}

std::vector<double> Matrix::row(std::size_t r) const {
    return std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_),
                               data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols_));
}

void Matrix::set_col(std::size_t c, const std::vector<double>& v) {
    if (v.size() != rows_) throw ShapeError("set_col: length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

double trace(const Matrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("trace: non-square matrix");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
    return s;
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double x : a.data()) m = std::max(m, std::fabs(x));
    return m;
}

double frobenius_sq(const Matrix& a) {
    double s = 0.0;
    for (double x : a.data()) s += x * x;
    return s;
}

bool all_finite(const Matrix& a) {
    for (double x : a.data())
        if (!std::isfinite(x)) return false;
    return true;
}

std::vector<double> matvec(const Matrix& a, const std::vector<double>& v) {
    if (v.size() != a.cols()) throw ShapeError("matvec: length mismatch");
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) s += a(r, c) * v[c];
        out[r] = s;
    }
    return out;
}

std::vector<double> matvec_t(const Matrix& a, const std::vector<double>& v) {
    if (v.size() != a.rows()) throw ShapeError("matvec_t: length mismatch");
    std::vector<double> out(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double vr = v[r];
        for (std::size_t c = 0; c < a.cols(); ++c) out[c] += a(r, c) * vr;
    }
    return out;
}

}  // namespace ddn
