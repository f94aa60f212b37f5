#include "ddn/gradcheck.hpp"

#include <cmath>
#include <string>

#include "ddn/errors.hpp"

namespace ddn {

std::vector<double> finite_diff_grad(const ScalarFn& f, const std::vector<double>& x, double eps) {
    if (!(eps > 0.0)) throw DomainError("finite_diff_grad: eps must be > 0");
    std::vector<double> grad(x.size());
    std::vector<double> p = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[i] = x[i] + eps;
        const double fp = f(p);
        p[i] = x[i] - eps;
        const double fm = f(p);
        p[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw DomainError("finite_diff_grad: non-finite value at index " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

double grad_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    if (analytic.size() != numeric.size()) return 1.0;
    double max_diff = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(analytic[i] - numeric[i]));
        na = std::max(na, std::fabs(analytic[i]));
        nb = std::max(nb, std::fabs(numeric[i]));
    }
    return max_diff / (na + nb + 1e-12);
}

}  // namespace ddn
