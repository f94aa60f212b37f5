#include "ddn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace ddn {

namespace {

void check_symmetric(const Matrix& a) {
    if (a.rows() != a.cols()) {
        throw ShapeError("eig_sym: matrix is " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ", expected square");
    }
    const double scale = 1.0 + max_abs(a);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = i + 1; j < a.cols(); ++j) {
            if (std::fabs(a(i, j) - a(j, i)) > 1e-9 * scale) {
                throw ShapeError("eig_sym: matrix not symmetric at (" + std::to_string(i) + "," +
                                 std::to_string(j) + ")");
            }
        }
    }
}

double offdiag_sq(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) s += 2.0 * a(i, j) * a(i, j);
    return s;
}

}  // namespace

EigResult eig_sym(const Matrix& input) {
    check_symmetric(input);
    const std::size_t n = input.rows();

    // Work on the symmetrized copy so tiny input asymmetry cannot accumulate.
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));

    Matrix v = Matrix::identity(n);
    const double norm_sq = frobenius_sq(a) + std::numeric_limits<double>::min();

    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (offdiag_sq(a) <= 1e-30 * norm_sq) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::fabs(apq) <= 1e-300) continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                const double theta = 0.5 * (aqq - app) / apq;
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);

                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r != p && r != q) {
                        const double arp = a(r, p);
                        const double arq = a(r, q);
                        a(r, p) = arp - s * (arq + tau * arp);
                        a(p, r) = a(r, p);
                        a(r, q) = arq + s * (arp - tau * arq);
                        a(q, r) = a(r, q);
                    }
                    const double vrp = v(r, p);
                    const double vrq = v(r, q);
                    v(r, p) = vrp - s * (vrq + tau * vrp);
                    v(r, q) = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    EigResult out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
    }
    return out;
}

Matrix solve_linear(const Matrix& a, const Matrix& b) {
    if (a.rows() != a.cols()) {
        throw ShapeError("solve_linear: matrix is " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ", expected square");
    }
    if (b.rows() != a.rows()) {
        throw ShapeError("solve_linear: rhs has " + std::to_string(b.rows()) + " rows, expected " +
                         std::to_string(a.rows()));
    }
    const std::size_t n = a.rows();
    Matrix lu = a;
    Matrix x = b;

    const double tol =
        std::numeric_limits<double>::epsilon() * static_cast<double>(n) * max_abs(a);

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t pivot = k;
        double pmax = std::fabs(lu(k, k));
        for (std::size_t r = k + 1; r < n; ++r) {
            const double m = std::fabs(lu(r, k));
            if (m > pmax) {
                pmax = m;
                pivot = r;
            }
        }
        if (!(pmax > tol)) {
            // Rank estimate: pivots completed so far.
            throw SingularSystemError("solve_linear: singular system, estimated rank " +
                                          std::to_string(k) + " of " + std::to_string(n),
                                      k);
        }
        if (pivot != k) {
            for (std::size_t c = 0; c < n; ++c) std::swap(lu(k, c), lu(pivot, c));
            for (std::size_t c = 0; c < x.cols(); ++c) std::swap(x(k, c), x(pivot, c));
        }
        const double inv = 1.0 / lu(k, k);
        for (std::size_t r = k + 1; r < n; ++r) {
            const double f = lu(r, k) * inv;
            if (f == 0.0) continue;
            lu(r, k) = f;
            for (std::size_t c = k + 1; c < n; ++c) lu(r, c) -= f * lu(k, c);
            for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) -= f * x(k, c);
        }
    }

    for (std::size_t ri = n; ri-- > 0;) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            double s = x(ri, c);
            for (std::size_t j = ri + 1; j < n; ++j) s -= lu(ri, j) * x(j, c);
            x(ri, c) = s / lu(ri, ri);
        }
    }
    return x;
}

std::vector<double> solve_linear(const Matrix& a, const std::vector<double>& b) {
    Matrix rhs(b.size(), 1);
    for (std::size_t i = 0; i < b.size(); ++i) rhs(i, 0) = b[i];
    Matrix x = solve_linear(a, rhs);
    return x.col(0);
}

}  // namespace ddn
