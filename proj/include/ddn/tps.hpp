// tps.hpp - thin-plate-spline machinery: RBF kernel, point warping, loss
// terms with analytic gradients, closed-form fitting, and synthesis of
// control-point targets.

#ifndef DDN_TPS_HPP_
#define DDN_TPS_HPP_

#include <vector>

#include "ddn/landmarks.hpp"
#include "ddn/matrix.hpp"

namespace ddn {

struct ControlGrid {
    std::vector<Vec2> points;
    int rows = 0;
    int cols = 0;

    // Regular rows x cols grid spanning [0,width] x [0,height] with a
    // half-cell margin, so frame-boundary landmarks stay interior.
    static ControlGrid regular(int rows, int cols, double width, double height);

    std::size_t count() const { return points.size(); }
};

struct TpsParams {
    Matrix affine;  // 2x3, maps homogeneous (u, v, 1)
    Matrix coeffs;  // 2xm, one column per control point
    ControlGrid grid;

    static TpsParams identity(ControlGrid grid);
};

struct TpsLossWeights {
    double gamma = 1.0;   // bending weight on the landmark term
    double varphi = 0.4;  // control-point data weight
    double psi = 0.4;     // control-point bending weight
};

// phi(d) = d^2 ln d, extended continuously with phi(0) = 0. Natural log.
double rbf(double d);

// d phi(||z - c||) / dz = rbf_grad_factor(d) * (z - c); the factor is
// 2 ln d + 1, extended continuously with 0 at d = 0.
double rbf_grad_factor(double d);

// m x n kernel: entry (j, i) = rbf(dist(points[i], grid[j])).
Matrix tps_kernel(const LandmarkSet& points, const ControlGrid& grid);

// Warp each point z to affine * (z,1) + coeffs * kernel column of z.
LandmarkSet tps_apply(const TpsParams& params, const LandmarkSet& points);

// Closed-form fit of the warp src -> dst over the given control grid.
// gamma > 0 trades data fit against the classical bending energy
// tr(U Kc U^T) under the side conditions sum_j u_j = 0, sum_j u_j c_j = 0;
// gamma = 0 returns the minimum-bending interpolant. Throws
// SingularSystemError for collinear or otherwise degenerate sources.
TpsParams tps_fit_closed_form(const LandmarkSet& src, const LandmarkSet& dst,
                              const ControlGrid& grid, double gamma);

// ||Y - D Ys~ - U Phi||_F^2 + gamma tr(U Phi Phi^T U^T), Phi = tps_kernel(src, grid).
double tps_loss(const TpsParams& params, const LandmarkSet& src, const LandmarkSet& dst,
                double gamma);

// tps_loss plus the control-point terms:
//   varphi ||Yc - Dc C~ - Uc Phi_c||_F^2 + psi tr(Uc Phi_c Phi_c^T Uc^T)
// with Phi_c the grid-to-grid kernel.
double tps_regularized_loss(const TpsParams& params, const LandmarkSet& src,
                            const LandmarkSet& dst, const TpsParams& control_params,
                            const LandmarkSet& control_targets, const TpsLossWeights& weights);

// Classical bending energy tr(U Kc U^T) of a fitted warp (side-condition form).
double tps_classical_bending(const TpsParams& params);

// Fit mean_shape -> truth (gamma defaults to 1) and warp the grid points.
LandmarkSet synthesize_control_targets(const LandmarkSet& mean_shape, const LandmarkSet& truth,
                                       const ControlGrid& grid, double gamma = 1.0);

struct TpsGrads {
    Matrix d;         // 2x3
    Matrix u;         // 2xm
    Matrix dc;        // 2x3
    Matrix uc;        // 2xm
    LandmarkSet src;  // gradient with respect to each source point
};

// All partial derivatives of tps_regularized_loss. The source-point block
// includes the dependence of Phi on the source points.
TpsGrads tps_loss_grad(const TpsParams& params, const LandmarkSet& src, const LandmarkSet& dst,
                       const TpsParams& control_params, const LandmarkSet& control_targets,
                       const TpsLossWeights& weights);

// 2 x n / 3 x n matrix views of a landmark set (columns are points).
Matrix points_matrix(const LandmarkSet& pts);
Matrix homogeneous_matrix(const LandmarkSet& pts);

}  // namespace ddn

#endif  // DDN_TPS_HPP_
