#include "ddn/shape_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddn/linalg.hpp"

namespace ddn {

ShapeBasis build_shape_basis(const std::vector<LandmarkSet>& shapes, double energy_fraction) {
    if (shapes.size() < 2) throw ShapeError("build_shape_basis: need at least 2 shapes");
    if (!(energy_fraction > 0.0) || energy_fraction > 1.0) {
        throw DomainError("build_shape_basis: energy_fraction must be in (0, 1]");
    }
    const std::size_t n = shapes.front().size();
    if (n == 0) throw ShapeError("build_shape_basis: empty shapes");
    for (const auto& s : shapes) {
        if (s.size() != n) {
            throw ShapeError("build_shape_basis: landmark count mismatch (" +
                             std::to_string(s.size()) + " vs " + std::to_string(n) + ")");
        }
        if (!s.all_finite()) throw DomainError("build_shape_basis: non-finite landmark");
    }

    const std::size_t d = 2 * n;
    std::vector<double> mean(d, 0.0);
    for (const auto& s : shapes) {
        const auto y = s.stacked();
        for (std::size_t i = 0; i < d; ++i) mean[i] += y[i];
    }
    for (double& m : mean) m /= static_cast<double>(shapes.size());

    // Unnormalized scatter sum over samples.
    Matrix scatter(d, d);
    for (const auto& s : shapes) {
        auto y = s.stacked();
        for (std::size_t i = 0; i < d; ++i) y[i] -= mean[i];
        for (std::size_t i = 0; i < d; ++i) {
            if (y[i] == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) scatter(i, j) += y[i] * y[j];
        }
    }

    EigResult eig = eig_sym(scatter);

    double total = 0.0;
    for (double& lambda : eig.values) {
        lambda = std::max(lambda, 0.0);  // scatter is PSD; clip rounding noise
        total += lambda;
    }

    ShapeBasis out;
    out.mean = std::move(mean);
    if (total <= 1e-12 * static_cast<double>(shapes.size())) {
        // All shapes identical: empty basis.
        out.basis = Matrix(d, 0);
        out.energy_fraction = 1.0;
        return out;
    }

    const std::size_t max_rank = std::min(d, shapes.size() - 1);
    std::size_t k = 0;
    double kept = 0.0;
    while (k < max_rank && kept < energy_fraction * total) {
        kept += eig.values[k];
        ++k;
    }

    out.basis = Matrix(d, k);
    out.eigenvalues.assign(eig.values.begin(), eig.values.begin() + static_cast<long>(k));
    for (std::size_t c = 0; c < k; ++c) {
        // Sign convention: largest-magnitude entry positive.
        std::size_t arg = 0;
        double best = 0.0;
        for (std::size_t r = 0; r < d; ++r) {
            const double m = std::fabs(eig.vectors(r, c));
            if (m > best) {
                best = m;
                arg = r;
            }
        }
        const double sign = eig.vectors(arg, c) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < d; ++r) out.basis(r, c) = sign * eig.vectors(r, c);
    }
    out.energy_fraction = kept / total;
    return out;
}

LandmarkSet decode_shape(const ShapeBasis& basis, const BasisCoeffs& coeffs) {
    if (coeffs.size() != basis.rank()) {
        throw ShapeError("decode_shape: " + std::to_string(coeffs.size()) + " coeffs for rank " +
                         std::to_string(basis.rank()) + " basis");
    }
    std::vector<double> y = basis.mean;
    for (std::size_t c = 0; c < coeffs.size(); ++c) {
        const double xc = coeffs[c];
        for (std::size_t r = 0; r < y.size(); ++r) y[r] += basis.basis(r, c) * xc;
    }
    return LandmarkSet::from_stacked(y);
}

BasisCoeffs project_shape(const ShapeBasis& basis, const LandmarkSet& shape) {
    if (2 * shape.size() != basis.mean.size()) {
        throw ShapeError("project_shape: landmark count mismatch");
    }
    auto y = shape.stacked();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= basis.mean[i];
    return matvec_t(basis.basis, y);
}

namespace {

std::vector<double> sbn_residual(const ShapeBasis& basis, const BasisCoeffs& coeffs,
                                 const LandmarkSet& truth) {
    if (coeffs.size() != basis.rank()) throw ShapeError("sbn_loss: coeff length mismatch");
    if (2 * truth.size() != basis.mean.size()) throw ShapeError("sbn_loss: truth size mismatch");
    auto decoded = decode_shape(basis, coeffs).stacked();
    auto y = truth.stacked();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= decoded[i];
    return y;  // y - (mean + Q x_s)
}

}  // namespace

double sbn_loss(const ShapeBasis& basis, const BasisCoeffs& coeffs, const LandmarkSet& truth,
                double lambda) {
    if (lambda < 0.0) throw DomainError("sbn_loss: lambda must be >= 0");
    const auto r = sbn_residual(basis, coeffs, truth);
    double loss = 0.0;
    for (double x : r) loss += x * x;
    for (double x : coeffs) loss += lambda * x * x;
    return loss;
}

BasisCoeffs sbn_loss_grad(const ShapeBasis& basis, const BasisCoeffs& coeffs,
                          const LandmarkSet& truth, double lambda) {
    if (lambda < 0.0) throw DomainError("sbn_loss_grad: lambda must be >= 0");
    const auto r = sbn_residual(basis, coeffs, truth);
    BasisCoeffs g = matvec_t(basis.basis, r);  // Q^T r
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * lambda * coeffs[i] - 2.0 * g[i];
    return g;
}

}  // namespace ddn
