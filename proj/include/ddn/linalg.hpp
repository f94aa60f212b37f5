// linalg.hpp - symmetric eigendecomposition and dense linear solve.

#ifndef DDN_LINALG_HPP_
#define DDN_LINALG_HPP_

#include <vector>

#include "ddn/matrix.hpp"

namespace ddn {

struct EigResult {
    std::vector<double> values;  // descending
    Matrix vectors;              // column i pairs with values[i]
};

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Input must be square and symmetric within 1e-9 relative; eigenvalues are
// returned in descending order with orthonormal column eigenvectors.
EigResult eig_sym(const Matrix& a);

// Solve a x = b by LU with partial pivoting; b may carry several columns.
// Throws SingularSystemError (with the estimated rank) when a pivot falls
// below tolerance.
Matrix solve_linear(const Matrix& a, const Matrix& b);

std::vector<double> solve_linear(const Matrix& a, const std::vector<double>& b);

}  // namespace ddn

#endif  // DDN_LINALG_HPP_
