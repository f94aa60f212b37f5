// matrix.hpp - dense row-major f64 matrix used throughout the library.

#ifndef DDN_MATRIX_HPP_
#define DDN_MATRIX_HPP_

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "ddn/errors.hpp"

namespace ddn {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    // Row-major nested initializer, e.g. Matrix{{1,2},{3,4}}.
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s);

    std::vector<double> col(std::size_t c) const;
    std::vector<double> row(std::size_t r) const;
    void set_col(std::size_t c, const std::vector<double>& v);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

Matrix transpose(const Matrix& a);
double trace(const Matrix& a);
double max_abs(const Matrix& a);
double frobenius_sq(const Matrix& a);
bool all_finite(const Matrix& a);

// a * v for a vector v of length a.cols().
std::vector<double> matvec(const Matrix& a, const std::vector<double>& v);
// a^T * v for a vector v of length a.rows().
std::vector<double> matvec_t(const Matrix& a, const std::vector<double>& v);

}  // namespace ddn

#endif  // DDN_MATRIX_HPP_
