// gradcheck.hpp - central finite-difference gradient oracle.

#ifndef DDN_GRADCHECK_HPP_
#define DDN_GRADCHECK_HPP_

#include <functional>
#include <vector>

namespace ddn {

using ScalarFn = std::function<double(const std::vector<double>&)>;

// Central finite differences: component i is (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
// Throws DomainError on eps <= 0 or when f returns a non-finite value (the
// message names the offending component).
std::vector<double> finite_diff_grad(const ScalarFn& f, const std::vector<double>& x, double eps);

// Relative disagreement between an analytic and a numeric gradient block:
// max_i |a_i - b_i| / (max_norm(a) + max_norm(b) + 1e-12). Zero blocks agree.
double grad_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric);

}  // namespace ddn

#endif  // DDN_GRADCHECK_HPP_
