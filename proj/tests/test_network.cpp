#include <doctest.h>

#include <cmath>

#include "ddn/gradcheck.hpp"
#include "ddn/network.hpp"
#include "ddn/rng.hpp"
#include "oracles.hpp"

using namespace ddn;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.input_size = 8;
    cfg.in_channels = 1;
    cfg.stages = {{2, 3, 2}, {4, 3, 2}};
    cfg.hidden_width = 6;
    return cfg;
}

Image random_image(Rng& rng, int channels, int size) {
    Image img(channels, size, size);
    for (double& v : img.data) v = rng.uniform(0.0, 1.0);
    return img;
}

ShapeBasis tiny_basis(Rng& rng, std::size_t n) {
    std::vector<LandmarkSet> shapes;
    for (int s = 0; s < 12; ++s) shapes.push_back(oracle::random_landmarks(rng, n, 1.0, 7.0));
    return build_shape_basis(shapes, 0.9);
}

// Smallest |pre-activation| over every rectifier; gradient checks are only
// valid away from the kinks.
double min_kink_distance(const ForwardTrace& trace) {
    double m = 1e300;
    for (const auto& stage : trace.conv)
        for (double v : stage.pre) m = std::min(m, std::fabs(v));
    for (double v : trace.sbn_h_pre) m = std::min(m, std::fabs(v));
    for (double v : trace.ptn_h_pre) m = std::min(m, std::fabs(v));
    return m;
}

}  // namespace

TEST_CASE("forward_features zero weights and identity conv") {
    Rng rng(1);
    const NetworkConfig cfg = tiny_config();
    const ShapeBasis basis = tiny_basis(rng, 4);
    NetworkParams p = init_network(cfg, basis.rank(), 9, false, rng);
    for (auto& layer : p.conv) std::fill(layer.w.begin(), layer.w.end(), 0.0);

    ForwardTrace trace;
    const auto features = forward_features(p, random_image(rng, 1, 8), trace);
    for (double f : features) CHECK(f == 0.0);

    // Single 1x1 stride-1 stage with unit weight passes the rectified input.
    NetworkConfig idc;
    idc.input_size = 4;
    idc.stages = {{1, 1, 1}};
    idc.hidden_width = 3;
    Rng rng2(2);
    NetworkParams idp = init_network(idc, 1, 4, false, rng2);
    idp.conv[0].w = {1.0};
    Image input(1, 4, 4);
    for (int i = 0; i < 16; ++i) input.data[i] = (i % 3 == 0 ? -1.0 : 1.0) * (i + 1) * 0.1;
    ForwardTrace t2;
    const auto f2 = forward_features(idp, input, t2);
    REQUIRE(f2.size() == 16);
    for (int i = 0; i < 16; ++i) CHECK(f2[i] == std::max(input.data[i], 0.0));

    Image wrong(1, 5, 5);
    CHECK_THROWS_AS(forward_features(idp, wrong, t2), ShapeError);
}

TEST_CASE("forward_features matches the padded-copy convolution oracle") {
    Rng rng(3);
    const NetworkConfig cfg = tiny_config();
    const ShapeBasis basis = tiny_basis(rng, 4);
    const NetworkParams p = init_network(cfg, basis.rank(), 9, false, rng);
    const Image img = random_image(rng, 1, 8);

    ForwardTrace trace;
    const auto features = forward_features(p, img, trace);

    std::vector<double> cur = img.data;
    int h = 8, w = 8;
    for (const auto& layer : p.conv) {
        int oh = 0, ow = 0;
        cur = oracle::conv_forward_direct(layer, cur, h, w, oh, ow);
        for (double& v : cur) v = std::max(v, 0.0);
        h = oh;
        w = ow;
    }
    REQUIRE(cur.size() == features.size());
    for (std::size_t i = 0; i < cur.size(); ++i) {
        CHECK(std::fabs(features[i] - cur[i]) <= 1e-10);
    }
}

TEST_CASE("forward_sbn zero head gives the mean shape") {
    Rng rng(4);
    const NetworkConfig cfg = tiny_config();
    const ShapeBasis basis = tiny_basis(rng, 4);
    NetworkParams p = init_network(cfg, basis.rank(), 9, false, rng);

    ForwardTrace trace;
    const auto features = forward_features(p, random_image(rng, 1, 8), trace);
    const LandmarkSet ys = forward_sbn(p, features, basis, trace);
    for (std::size_t i = 0; i < ys.size(); ++i) {
        CHECK(ys[i].u == basis.mean[2 * i]);
        CHECK(ys[i].v == basis.mean[2 * i + 1]);
    }

    // Constant-coefficient head: y_s = mean + 0.7 * first column.
    REQUIRE(basis.rank() >= 1);
    p.sbn.b2[0] = 0.7;
    ForwardTrace t2;
    const auto f2 = forward_features(p, random_image(rng, 1, 8), t2);
    const LandmarkSet ys2 = forward_sbn(p, f2, basis, t2);
    for (std::size_t i = 0; i < ys2.size(); ++i) {
        CHECK(ys2[i].u ==
              doctest::Approx(basis.mean[2 * i] + 0.7 * basis.basis(2 * i, 0)).epsilon(1e-15));
    }
}

TEST_CASE("forward_ptn identity at init and translation head") {
    Rng rng(5);
    const NetworkConfig cfg = tiny_config();
    const ShapeBasis basis = tiny_basis(rng, 4);
    const ControlGrid grid = ControlGrid::regular(3, 3, 8.0, 8.0);
    NetworkParams p = init_network(cfg, basis.rank(), grid.count(), false, rng);

    ForwardTrace trace;
    const auto features = forward_features(p, random_image(rng, 1, 8), trace);
    const LandmarkSet ys = forward_sbn(p, features, basis, trace);
    const LandmarkSet yp = forward_ptn(p, features, ys, grid, trace);
    for (std::size_t i = 0; i < ys.size(); ++i) {
        CHECK(yp[i].u == ys[i].u);  // identity warp at initialization, exactly
        CHECK(yp[i].v == ys[i].v);
    }

    p.ptn.b2[2] = 1.5;   // affine translation slots
    p.ptn.b2[5] = -2.0;
    ForwardTrace t2;
    const auto f2 = forward_features(p, random_image(rng, 1, 8), t2);
    const LandmarkSet ys2 = forward_sbn(p, f2, basis, t2);
    const LandmarkSet yp2 = forward_ptn(p, f2, ys2, grid, t2);
    for (std::size_t i = 0; i < ys2.size(); ++i) {
        CHECK(yp2[i].u == doctest::Approx(ys2[i].u + 1.5).epsilon(1e-15));
        CHECK(yp2[i].v == doctest::Approx(ys2[i].v - 2.0).epsilon(1e-15));
    }
}

TEST_CASE("forward_ptn equals tps_apply of the decoded parameters") {
    Rng rng(6);
    const NetworkConfig cfg = tiny_config();
    const ShapeBasis basis = tiny_basis(rng, 4);
    const ControlGrid grid = ControlGrid::regular(3, 3, 8.0, 8.0);
    NetworkParams p = init_network(cfg, basis.rank(), grid.count(), false, rng);
    for (double& v : p.ptn.w2.data()) v = rng.uniform(-0.05, 0.05);
    for (double& v : p.ptn.b2) v = rng.uniform(-0.05, 0.05);

    ForwardTrace trace;
    const auto features = forward_features(p, random_image(rng, 1, 8), trace);
    const LandmarkSet ys = forward_sbn(p, features, basis, trace);
    const LandmarkSet yp = forward_ptn(p, features, ys, grid, trace);

    // Recompute the head outside the library path.
    std::vector<double> h = matvec(p.ptn.w1, features);
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double pre = h[i] + p.ptn.b1[i];
        h[i] = pre > 0.0 ? pre : 0.01 * pre;
    }
    std::vector<double> out = matvec(p.ptn.w2, h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p.ptn.b2[i];
    TpsParams warp = TpsParams::identity(grid);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 3; ++c)
            warp.affine(r, c) += out[r * 3 + c] * (c < 2 ? ptn_linear_scale(p) : 1.0);
        for (std::size_t j = 0; j < grid.count(); ++j)
            warp.coeffs(r, j) += out[6 + r * grid.count() + j] * ptn_coeff_scale(p);
    }
    const LandmarkSet expect = tps_apply(warp, ys);
    for (std::size_t i = 0; i < yp.size(); ++i) {
        CHECK(yp[i].u == doctest::Approx(expect[i].u).epsilon(1e-12));
        CHECK(yp[i].v == doctest::Approx(expect[i].v).epsilon(1e-12));
    }
}

TEST_CASE("network forward is deterministic") {
    Rng rng(7);
    const NetworkConfig cfg = tiny_config();
    const ShapeBasis basis = tiny_basis(rng, 4);
    const ControlGrid grid = ControlGrid::regular(3, 3, 8.0, 8.0);
    const NetworkParams p = init_network(cfg, basis.rank(), grid.count(), false, rng);
    const Image img = random_image(rng, 1, 8);

    ForwardTrace t1, t2;
    const auto f1 = forward_features(p, img, t1);
    const auto f2 = forward_features(p, img, t2);
    CHECK(f1 == f2);
    const LandmarkSet a = forward_ptn(p, f1, forward_sbn(p, f1, basis, t1), grid, t1);
    const LandmarkSet b = forward_ptn(p, f2, forward_sbn(p, f2, basis, t2), grid, t2);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].u == b[i].u);
        CHECK(a[i].v == b[i].v);
    }
}

TEST_CASE("backward zero upstream gives zero gradients and consumes the trace") {
    Rng rng(8);
    const NetworkConfig cfg = tiny_config();
    const ShapeBasis basis = tiny_basis(rng, 4);
    const ControlGrid grid = ControlGrid::regular(3, 3, 8.0, 8.0);
    const NetworkParams p = init_network(cfg, basis.rank(), grid.count(), false, rng);

    ForwardTrace trace;
    const auto features = forward_features(p, random_image(rng, 1, 8), trace);
    forward_sbn(p, features, basis, trace);
    forward_ptn(p, features, trace.ys, grid, trace);

    UpstreamGrads up;
    up.d = Matrix(2, 3);
    up.u = Matrix(2, grid.count());
    up.xs.assign(basis.rank(), 0.0);
    const NetworkParams grads = backward(p, trace, up, &basis);
    for (const auto& view : param_views(grads)) {
        for (double v : *view.values) CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(backward(p, trace, up, &basis), ContractError);

    ForwardTrace empty;
    CHECK_THROWS_AS(backward(p, empty, up, &basis), ContractError);
}

TEST_CASE("backward second head layer follows the hand formula") {
    // Quadratic loss on x_s: f = ||xs - target||^2, so dW2 = 2 (xs - t) h^T.
    Rng rng(9);
    const NetworkConfig cfg = tiny_config();
    const ShapeBasis basis = tiny_basis(rng, 4);
    NetworkParams p = init_network(cfg, basis.rank(), 9, false, rng);
    for (double& v : p.sbn.w2.data()) v = rng.uniform(-0.5, 0.5);

    ForwardTrace trace;
    const auto features = forward_features(p, random_image(rng, 1, 8), trace);
    forward_sbn(p, features, basis, trace);

    std::vector<double> target(basis.rank());
    for (double& t : target) t = rng.uniform(-1.0, 1.0);
    UpstreamGrads up;
    up.xs.resize(basis.rank());
    for (std::size_t i = 0; i < up.xs.size(); ++i) up.xs[i] = 2.0 * (trace.xs[i] - target[i]);

    const std::vector<double> h = trace.sbn_h;
    const std::vector<double> xs = trace.xs;
    const NetworkParams grads = backward(p, trace, up, &basis);
    for (std::size_t r = 0; r < grads.sbn.w2.rows(); ++r) {
        for (std::size_t c = 0; c < grads.sbn.w2.cols(); ++c) {
            CHECK(grads.sbn.w2(r, c) ==
                  doctest::Approx(2.0 * (xs[r] - target[r]) * h[c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("full cascade gradients match finite differences") {
    const NetworkConfig cfg = tiny_config();
    const ControlGrid grid = ControlGrid::regular(3, 3, 8.0, 8.0);
    const TpsLossWeights weights{1.0, 0.4, 0.4};

    int checked = 0;
    for (std::uint64_t seed = 100; checked < 3 && seed < 160; ++seed) {
        Rng rng(seed);
        const ShapeBasis basis = tiny_basis(rng, 4);
        if (basis.rank() < 2) continue;
        NetworkParams params = init_network(cfg, basis.rank(), grid.count(), false, rng);
        for (double& v : params.sbn.w2.data()) v = rng.uniform(-0.3, 0.3);
        for (double& v : params.ptn.w2.data()) v = rng.uniform(-0.02, 0.02);
        for (double& v : params.sbn.b2) v = rng.uniform(-0.3, 0.3);
        for (double& v : params.ptn.b2) v = rng.uniform(-0.02, 0.02);
        const Image img = random_image(rng, 1, 8);
        const LandmarkSet truth = oracle::random_landmarks(rng, 4, 1.0, 7.0);
        const LandmarkSet targets = oracle::random_landmarks(rng, grid.count(), 0.0, 8.0);

        const auto loss_of = [&](const NetworkParams& p) {
            ForwardTrace t;
            const auto f = forward_features(p, img, t);
            const LandmarkSet ys = forward_sbn(p, f, basis, t);
            forward_ptn(p, f, ys, grid, t);
            return tps_regularized_loss(t.warp, ys, truth, t.warp, targets, weights);
        };

        // Skip draws that land a rectifier too close to its kink.
        ForwardTrace probe;
        const auto f = forward_features(params, img, probe);
        const LandmarkSet ys = forward_sbn(params, f, basis, probe);
        forward_ptn(params, f, ys, grid, probe);
        if (min_kink_distance(probe) < 1e-3) continue;

        const TpsGrads g =
            tps_loss_grad(probe.warp, ys, truth, probe.warp, targets, weights);
        UpstreamGrads up;
        up.d = g.d + g.dc;
        up.u = g.u + g.uc;
        up.ys = g.src.stacked();
        NetworkParams analytic = backward(params, probe, up, &basis);

        auto pv = param_views(params);
        auto av = param_views(analytic);
        for (std::size_t a = 0; a < pv.size(); ++a) {
            const auto numeric = finite_diff_grad(
                [&](const std::vector<double>& v) {
                    NetworkParams p2 = params;
                    *param_views(p2)[a].values = v;
                    return loss_of(p2);
                },
                *pv[a].values, 1e-5);
            const double err = grad_rel_err(*av[a].values, numeric);
            INFO("block ", pv[a].name);
            CHECK(err <= 1e-4);
        }
        ++checked;
    }
    CHECK(checked == 3);
}
