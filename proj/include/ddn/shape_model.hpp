// shape_model.hpp - PCA shape space: basis construction, decode, and the
// coefficient-space loss with its analytic gradient.

#ifndef DDN_SHAPE_MODEL_HPP_
#define DDN_SHAPE_MODEL_HPP_

#include <vector>

#include "ddn/landmarks.hpp"
#include "ddn/matrix.hpp"

namespace ddn {

// Basis weights x_s; length equals the basis rank.
using BasisCoeffs = std::vector<double>;

struct ShapeBasis {
    std::vector<double> mean;        // stacked 2n-vector
    Matrix basis;                    // 2n x k, orthonormal columns
    std::vector<double> eigenvalues; // k retained scatter eigenvalues
    double energy_fraction = 1.0;    // retained / total scatter energy

    std::size_t rank() const { return basis.cols(); }
    std::size_t landmark_count() const { return mean.size() / 2; }
};

// PCA of the unnormalized scatter sum (y - mean)(y - mean)^T over the given
// shapes. k is the smallest rank whose eigenvalue sum reaches
// energy_fraction of the total; identical shapes yield k = 0. Eigenvector
// signs are fixed so each column's largest-magnitude entry is positive.
ShapeBasis build_shape_basis(const std::vector<LandmarkSet>& shapes, double energy_fraction);

// mean + basis * coeffs, reshaped to n points.
LandmarkSet decode_shape(const ShapeBasis& basis, const BasisCoeffs& coeffs);

// basis^T (y - mean); the left inverse of decode_shape on the span.
BasisCoeffs project_shape(const ShapeBasis& basis, const LandmarkSet& shape);

// ||y - (mean + Q x_s)||^2 + lambda ||x_s||^2
double sbn_loss(const ShapeBasis& basis, const BasisCoeffs& coeffs, const LandmarkSet& truth,
                double lambda);

// 2 lambda x_s - 2 Q^T (y - (mean + Q x_s))
BasisCoeffs sbn_loss_grad(const ShapeBasis& basis, const BasisCoeffs& coeffs,
                          const LandmarkSet& truth, double lambda);

}  // namespace ddn

#endif  // DDN_SHAPE_MODEL_HPP_
