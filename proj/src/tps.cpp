#include "ddn/tps.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddn/linalg.hpp"

namespace ddn {

ControlGrid ControlGrid::regular(int rows, int cols, double width, double height) {
    if (rows < 1 || cols < 1) throw DomainError("ControlGrid: rows/cols must be >= 1");
    if (!(width > 0.0) || !(height > 0.0)) throw DomainError("ControlGrid: frame must be positive");
    ControlGrid g;
    g.rows = rows;
    g.cols = cols;
    g.points.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            g.points.push_back({(c + 0.5) * width / cols, (r + 0.5) * height / rows});
        }
    }
    return g;
}

TpsParams TpsParams::identity(ControlGrid grid) {
    TpsParams p;
    p.affine = Matrix{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    p.coeffs = Matrix(2, grid.count());
    p.grid = std::move(grid);
    return p;
}

double rbf(double d) {
    if (d < 0.0) throw DomainError("rbf: negative distance");
    if (d == 0.0) return 0.0;
    return d * d * std::log(d);
}

double rbf_grad_factor(double d) {
    if (d < 0.0) throw DomainError("rbf_grad_factor: negative distance");
    if (d == 0.0) return 0.0;
    return 2.0 * std::log(d) + 1.0;
}

Matrix tps_kernel(const LandmarkSet& points, const ControlGrid& grid) {
    if (points.empty() || grid.points.empty()) throw ShapeError("tps_kernel: empty input");
    Matrix k(grid.count(), points.size());
    for (std::size_t j = 0; j < grid.count(); ++j) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            k(j, i) = rbf(dist(points[i], grid.points[j]));
        }
    }
    return k;
}

LandmarkSet tps_apply(const TpsParams& params, const LandmarkSet& points) {
    const std::size_t m = params.grid.count();
    if (params.affine.rows() != 2 || params.affine.cols() != 3) {
        throw ShapeError("tps_apply: affine block must be 2x3");
    }
    if (params.coeffs.rows() != 2 || params.coeffs.cols() != m) {
        throw ShapeError("tps_apply: coeff block must be 2x" + std::to_string(m));
    }
    LandmarkSet out;
    out.points.reserve(points.size());
    const Matrix& d = params.affine;
    const Matrix& u = params.coeffs;
    for (const Vec2& z : points.points) {
        Vec2 w{d(0, 0) * z.u + d(0, 1) * z.v + d(0, 2),
               d(1, 0) * z.u + d(1, 1) * z.v + d(1, 2)};
        for (std::size_t j = 0; j < m; ++j) {
            const double phi = rbf(dist(z, params.grid.points[j]));
            w.u += u(0, j) * phi;
            w.v += u(1, j) * phi;
        }
        out.points.push_back(w);
    }
    return out;
}

Matrix points_matrix(const LandmarkSet& pts) {
    Matrix y(2, pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        y(0, i) = pts[i].u;
        y(1, i) = pts[i].v;
    }
    return y;
}

Matrix homogeneous_matrix(const LandmarkSet& pts) {
    Matrix y(3, pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        y(0, i) = pts[i].u;
        y(1, i) = pts[i].v;
        y(2, i) = 1.0;
    }
    return y;
}

namespace {

// Grid-to-grid kernel Kc (symmetric m x m).
Matrix control_kernel(const ControlGrid& grid) {
    const std::size_t m = grid.count();
    Matrix k(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const double phi = rbf(dist(grid.points[i], grid.points[j]));
            k(i, j) = phi;
            k(j, i) = phi;
        }
    }
    return k;
}

void check_not_collinear(const std::vector<Vec2>& pts) {
    // Smallest eigenvalue of the 2x2 point covariance.
    double mu = 0.0, mv = 0.0;
    for (const Vec2& p : pts) {
        mu += p.u;
        mv += p.v;
    }
    mu /= static_cast<double>(pts.size());
    mv /= static_cast<double>(pts.size());
    double suu = 0.0, svv = 0.0, suv = 0.0;
    for (const Vec2& p : pts) {
        suu += (p.u - mu) * (p.u - mu);
        svv += (p.v - mv) * (p.v - mv);
        suv += (p.u - mu) * (p.v - mv);
    }
    const double tr2 = 0.5 * (suu + svv);
    const double det = suu * svv - suv * suv;
    const double lmin = tr2 - std::sqrt(std::max(tr2 * tr2 - det, 0.0));
    if (lmin <= 1e-12 * (suu + svv + 1e-300)) {
        throw SingularSystemError("tps_fit_closed_form: source points collinear, estimated rank 2",
                                  2);
    }
}

Matrix solve_with_ridge_fallback(Matrix a, const Matrix& b) {
    try {
        return solve_linear(a, b);
    } catch (const SingularSystemError&) {
        // Degenerate system: nudge the diagonal once before giving up.
        for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += 1e-9;
        return solve_linear(a, b);
    }
}

}  // namespace

TpsParams tps_fit_closed_form(const LandmarkSet& src, const LandmarkSet& dst,
                              const ControlGrid& grid, double gamma) {
    const std::size_t n = src.size();
    const std::size_t m = grid.count();
    if (n != dst.size()) throw ShapeError("tps_fit_closed_form: src/dst length mismatch");
    if (n < 3) throw ShapeError("tps_fit_closed_form: need at least 3 points");
    if (gamma < 0.0) throw DomainError("tps_fit_closed_form: gamma must be >= 0");
    check_not_collinear(src.points);

    // Solve in grid-normalized coordinates so kernel entries are O(1) and the
    // ridge fallback acts at a sensible scale; parameters are mapped back to
    // pixel units exactly afterwards.
    double lo_u = grid.points[0].u, hi_u = lo_u, lo_v = grid.points[0].v, hi_v = lo_v;
    for (const Vec2& c : grid.points) {
        lo_u = std::min(lo_u, c.u);
        hi_u = std::max(hi_u, c.u);
        lo_v = std::min(lo_v, c.v);
        hi_v = std::max(hi_v, c.v);
    }
    const double scale = std::max({hi_u - lo_u, hi_v - lo_v, 1e-300});

    ControlGrid grid_n = grid;
    for (Vec2& c : grid_n.points) c = (1.0 / scale) * c;
    LandmarkSet src_n, dst_n;
    for (const Vec2& p : src.points) src_n.points.push_back((1.0 / scale) * p);
    for (const Vec2& p : dst.points) dst_n.points.push_back((1.0 / scale) * p);

    const Matrix phi = tps_kernel(src_n, grid_n);       // m x n
    const Matrix xh = homogeneous_matrix(src_n);        // 3 x n
    const Matrix y = points_matrix(dst_n);              // 2 x n
    const Matrix kc = control_kernel(grid_n);           // m x m
    const double gamma_n = gamma / (scale * scale);

    // Side-condition matrix P (m x 3): rows (1, cu, cv).
    Matrix p(m, 3);
    for (std::size_t j = 0; j < m; ++j) {
        p(j, 0) = 1.0;
        p(j, 1) = grid_n.points[j].u;
        p(j, 2) = grid_n.points[j].v;
    }

    Matrix sol;  // rows: u (m), d (3), multipliers; 2 columns (u/v coordinates)
    const bool interpolate = (gamma == 0.0) && (n <= m);
    if (interpolate) {
        // Minimum-bending interpolant:
        //   min u^T Kc u  s.t.  Phi^T u + Xh^T d = y,  P^T u = 0.
        const std::size_t dim = m + 3 + n + 3;
        Matrix a(dim, dim);
        Matrix rhs(dim, 2);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) a(i, j) = 2.0 * kc(i, j);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t c = 0; c < n; ++c) {
                a(i, m + 3 + c) = phi(i, c);
                a(m + 3 + c, i) = phi(i, c);
            }
            for (std::size_t c = 0; c < 3; ++c) {
                a(i, m + 3 + n + c) = p(i, c);
                a(m + 3 + n + c, i) = p(i, c);
            }
        }
        for (std::size_t r = 0; r < 3; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                a(m + r, m + 3 + c) = xh(r, c);
                a(m + 3 + c, m + r) = xh(r, c);
            }
        }
        for (std::size_t c = 0; c < n; ++c) {
            rhs(m + 3 + c, 0) = y(0, c);
            rhs(m + 3 + c, 1) = y(1, c);
        }
        sol = solve_with_ridge_fallback(std::move(a), rhs);
    } else {
        // Penalized least squares:
        //   min ||y - Phi^T u - Xh^T d||^2 + gamma_n u^T Kc u  s.t.  P^T u = 0.
        const std::size_t dim = m + 3 + 3;
        Matrix a(dim, dim);
        Matrix rhs(dim, 2);
        const Matrix phi_phi_t = phi * transpose(phi);  // m x m
        const Matrix phi_xh_t = phi * transpose(xh);    // m x 3
        const Matrix xh_xh_t = xh * transpose(xh);      // 3 x 3
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) a(i, j) = phi_phi_t(i, j) + gamma_n * kc(i, j);
            for (std::size_t j = 0; j < 3; ++j) {
                a(i, m + j) = phi_xh_t(i, j);
                a(m + j, i) = phi_xh_t(i, j);
                a(i, m + 3 + j) = p(i, j);
                a(m + 3 + j, i) = p(i, j);
            }
        }
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) a(m + i, m + j) = xh_xh_t(i, j);
        const Matrix phi_y = phi * transpose(y);  // m x 2
        const Matrix xh_y = xh * transpose(y);    // 3 x 2
        for (std::size_t i = 0; i < m; ++i) {
            rhs(i, 0) = phi_y(i, 0);
            rhs(i, 1) = phi_y(i, 1);
        }
        for (std::size_t i = 0; i < 3; ++i) {
            rhs(m + i, 0) = xh_y(i, 0);
            rhs(m + i, 1) = xh_y(i, 1);
        }
        sol = solve_with_ridge_fallback(std::move(a), rhs);
    }

    // Map back to pixel units. With the side conditions, rescaling the frame
    // changes the warp by a constant that the affine translation absorbs:
    //   U = U' / s,  L = L',  t = s t' - s ln(s) sum_j u'_j ||c'_j||^2.
    TpsParams params;
    params.grid = grid;
    params.coeffs = Matrix(2, m);
    double wu = 0.0, wv = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double cn = grid_n.points[j].u * grid_n.points[j].u +
                          grid_n.points[j].v * grid_n.points[j].v;
        wu += sol(j, 0) * cn;
        wv += sol(j, 1) * cn;
        params.coeffs(0, j) = sol(j, 0) / scale;
        params.coeffs(1, j) = sol(j, 1) / scale;
    }
    const double log_s = std::log(scale);
    params.affine = Matrix(2, 3);
    params.affine(0, 0) = sol(m, 0);
    params.affine(0, 1) = sol(m + 1, 0);
    params.affine(1, 0) = sol(m, 1);
    params.affine(1, 1) = sol(m + 1, 1);
    params.affine(0, 2) = scale * (sol(m + 2, 0) - log_s * wu);
    params.affine(1, 2) = scale * (sol(m + 2, 1) - log_s * wv);
    return params;
}

double tps_loss(const TpsParams& params, const LandmarkSet& src, const LandmarkSet& dst,
                double gamma) {
    if (src.size() != dst.size()) throw ShapeError("tps_loss: src/dst length mismatch");
    if (gamma < 0.0) throw DomainError("tps_loss: gamma must be >= 0");
    const Matrix phi = tps_kernel(src, params.grid);
    const Matrix pred = params.affine * homogeneous_matrix(src) + params.coeffs * phi;
    const Matrix resid = points_matrix(dst) - pred;
    const Matrix uphi = params.coeffs * phi;  // 2 x n
    return frobenius_sq(resid) + gamma * frobenius_sq(uphi);
}

double tps_regularized_loss(const TpsParams& params, const LandmarkSet& src,
                            const LandmarkSet& dst, const TpsParams& control_params,
                            const LandmarkSet& control_targets, const TpsLossWeights& weights) {
    if (weights.gamma < 0.0 || weights.varphi < 0.0 || weights.psi < 0.0) {
        throw DomainError("tps_regularized_loss: weights must be >= 0");
    }
    if (control_targets.size() != params.grid.count()) {
        throw ShapeError("tps_regularized_loss: need one control target per grid point");
    }
    double loss = tps_loss(params, src, dst, weights.gamma);
    if (weights.varphi == 0.0 && weights.psi == 0.0) return loss;

    LandmarkSet grid_pts(params.grid.points);
    const Matrix phi_c = tps_kernel(grid_pts, control_params.grid);
    const Matrix pred = control_params.affine * homogeneous_matrix(grid_pts) +
                        control_params.coeffs * phi_c;
    const Matrix resid = points_matrix(control_targets) - pred;
    const Matrix uphi = control_params.coeffs * phi_c;
    return loss + weights.varphi * frobenius_sq(resid) + weights.psi * frobenius_sq(uphi);
}

double tps_classical_bending(const TpsParams& params) {
    const Matrix kc = control_kernel(params.grid);
    const Matrix uk = params.coeffs * kc;  // 2 x m
    double s = 0.0;
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < params.grid.count(); ++j) s += uk(r, j) * params.coeffs(r, j);
    return s;
}

LandmarkSet synthesize_control_targets(const LandmarkSet& mean_shape, const LandmarkSet& truth,
                                       const ControlGrid& grid, double gamma) {
    if (mean_shape.size() != truth.size()) {
        throw ShapeError("synthesize_control_targets: shape length mismatch");
    }
    const TpsParams warp = tps_fit_closed_form(mean_shape, truth, grid, gamma);
    return tps_apply(warp, LandmarkSet(grid.points));
}

TpsGrads tps_loss_grad(const TpsParams& params, const LandmarkSet& src, const LandmarkSet& dst,
                       const TpsParams& control_params, const LandmarkSet& control_targets,
                       const TpsLossWeights& weights) {
    if (src.size() != dst.size()) throw ShapeError("tps_loss_grad: src/dst length mismatch");
    if (control_targets.size() != params.grid.count()) {
        throw ShapeError("tps_loss_grad: need one control target per grid point");
    }
    const std::size_t n = src.size();
    const std::size_t m = params.grid.count();

    const Matrix phi = tps_kernel(src, params.grid);  // m x n
    const Matrix yh = homogeneous_matrix(src);        // 3 x n
    const Matrix resid = points_matrix(dst) - (params.affine * yh + params.coeffs * phi);

    TpsGrads g;
    g.d = -2.0 * (resid * transpose(yh));
    g.u = -2.0 * (resid * transpose(phi)) +
          2.0 * weights.gamma * (params.coeffs * (phi * transpose(phi)));

    // dE/dPhi feeds the source-point gradient below.
    Matrix g_phi = -2.0 * (transpose(params.coeffs) * resid) +
                   2.0 * weights.gamma * (transpose(params.coeffs) * params.coeffs * phi);

    g.src.points.assign(n, Vec2{});
    const Matrix& d = params.affine;
    for (std::size_t i = 0; i < n; ++i) {
        // Affine channel: -2 L^T r_i.
        Vec2 gi{-2.0 * (d(0, 0) * resid(0, i) + d(1, 0) * resid(1, i)),
                -2.0 * (d(0, 1) * resid(0, i) + d(1, 1) * resid(1, i))};
        // Kernel channel: dPhi(j,i)/dz = (2 ln d + 1)(z - c_j).
        for (std::size_t j = 0; j < m; ++j) {
            const Vec2 delta = src[i] - params.grid.points[j];
            const double f = rbf_grad_factor(norm(delta));
            gi.u += g_phi(j, i) * f * delta.u;
            gi.v += g_phi(j, i) * f * delta.v;
        }
        g.src.points[i] = gi;
    }

    LandmarkSet grid_pts(params.grid.points);
    const Matrix phi_c = tps_kernel(grid_pts, control_params.grid);
    const Matrix ch = homogeneous_matrix(grid_pts);
    const Matrix resid_c = points_matrix(control_targets) -
                           (control_params.affine * ch + control_params.coeffs * phi_c);
    g.dc = -2.0 * weights.varphi * (resid_c * transpose(ch));
    g.uc = -2.0 * weights.varphi * (resid_c * transpose(phi_c)) +
           2.0 * weights.psi * (control_params.coeffs * (phi_c * transpose(phi_c)));
    return g;
}

}  // namespace ddn
