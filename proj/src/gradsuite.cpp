#include "ddn/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ddn/gradcheck.hpp"
#include "ddn/network.hpp"
#include "ddn/rng.hpp"
#include "ddn/shape_model.hpp"
#include "ddn/tps.hpp"

namespace ddn {

namespace {

constexpr double kEps = 1e-5;

LandmarkSet random_points(Rng& rng, std::size_t n, double lo, double hi) {
    LandmarkSet out;
    for (std::size_t i = 0; i < n; ++i) out.points.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
    return out;
}

ShapeBasis random_basis(Rng& rng, std::size_t n) {
    std::vector<LandmarkSet> shapes;
    for (int s = 0; s < 10; ++s) shapes.push_back(random_points(rng, n, 1.0, 7.0));
    return build_shape_basis(shapes, 0.9);
}

double min_kink_distance(const ForwardTrace& trace) {
    double m = 1e300;
    for (const auto& stage : trace.conv)
        for (double v : stage.pre) m = std::min(m, std::fabs(v));
    for (double v : trace.sbn_h_pre) m = std::min(m, std::fabs(v));
    for (double v : trace.ptn_h_pre) m = std::min(m, std::fabs(v));
    return m;
}

struct Recorder {
    std::map<std::string, double>& worst;
    const std::string& corrupt;

    void note(const std::string& block, std::vector<double> analytic,
              const std::vector<double>& numeric) {
        if (block == corrupt && !analytic.empty()) analytic[0] += 1e-2;
        double& w = worst[block];
        w = std::max(w, grad_rel_err(analytic, numeric));
    }
};

void check_sbn_loss(Rng rng, Recorder& rec) {
    const std::size_t n = 4 + rng.below(3);
    const ShapeBasis basis = random_basis(rng, n);
    if (basis.rank() == 0) return;
    BasisCoeffs coeffs(basis.rank());
    for (double& c : coeffs) c = rng.uniform(-3.0, 3.0);
    const LandmarkSet truth = random_points(rng, n, 0.0, 8.0);
    const double lambda = rng.uniform(0.0, 0.5);
    const auto numeric = finite_diff_grad(
        [&](const std::vector<double>& x) { return sbn_loss(basis, x, truth, lambda); }, coeffs,
        kEps);
    rec.note("sbn_loss", sbn_loss_grad(basis, coeffs, truth, lambda), numeric);
}

void check_tps_blocks(Rng rng, Recorder& rec) {
    const ControlGrid grid = ControlGrid::regular(3, 3, 8.0, 8.0);
    const std::size_t n = 4 + rng.below(3);
    const LandmarkSet src = random_points(rng, n, 1.0, 7.0);
    const LandmarkSet dst = random_points(rng, n, 1.0, 7.0);
    const LandmarkSet targets = random_points(rng, grid.count(), 0.0, 8.0);
    TpsParams params = TpsParams::identity(grid);
    TpsParams cparams = TpsParams::identity(grid);
    for (double& v : params.affine.data()) v += rng.uniform(-0.3, 0.3);
    for (double& v : params.coeffs.data()) v = rng.uniform(-0.02, 0.02);
    for (double& v : cparams.affine.data()) v += rng.uniform(-0.3, 0.3);
    for (double& v : cparams.coeffs.data()) v = rng.uniform(-0.02, 0.02);
    const TpsLossWeights w{rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};

    const TpsGrads g = tps_loss_grad(params, src, dst, cparams, targets, w);
    auto loss_with = [&](const TpsParams& pp, const LandmarkSet& ss, const TpsParams& cc) {
        return tps_regularized_loss(pp, ss, dst, cc, targets, w);
    };

    rec.note("tps.d",
             g.d.data(),
             finite_diff_grad(
                 [&](const std::vector<double>& v) {
                     TpsParams pp = params;
                     pp.affine.data() = v;
                     return loss_with(pp, src, cparams);
                 },
                 params.affine.data(), kEps));
    rec.note("tps.u",
             g.u.data(),
             finite_diff_grad(
                 [&](const std::vector<double>& v) {
                     TpsParams pp = params;
                     pp.coeffs.data() = v;
                     return loss_with(pp, src, cparams);
                 },
                 params.coeffs.data(), kEps));
    rec.note("tps.dc",
             g.dc.data(),
             finite_diff_grad(
                 [&](const std::vector<double>& v) {
                     TpsParams cc = cparams;
                     cc.affine.data() = v;
                     return loss_with(params, src, cc);
                 },
                 cparams.affine.data(), kEps));
    rec.note("tps.uc",
             g.uc.data(),
             finite_diff_grad(
                 [&](const std::vector<double>& v) {
                     TpsParams cc = cparams;
                     cc.coeffs.data() = v;
                     return loss_with(params, src, cc);
                 },
                 cparams.coeffs.data(), kEps));
    rec.note("tps.src",
             g.src.stacked(),
             finite_diff_grad(
                 [&](const std::vector<double>& v) {
                     return loss_with(params, LandmarkSet::from_stacked(v), cparams);
                 },
                 src.stacked(), kEps));
}

bool check_network(Rng rng, Recorder& rec) {
    NetworkConfig cfg;
    cfg.input_size = 8;
    cfg.hidden_width = 4 + static_cast<int>(rng.below(4));
    cfg.stages.clear();
    const int n_stages = 1 + static_cast<int>(rng.below(2));
    for (int s = 0; s < n_stages; ++s) {
        cfg.stages.push_back({2 + static_cast<int>(rng.below(3)), 3, 2});
    }
    const ControlGrid grid = ControlGrid::regular(3, 3, 8.0, 8.0);
    const std::size_t n = 4;
    const ShapeBasis basis = random_basis(rng, n);
    if (basis.rank() == 0) return false;

    NetworkParams params = init_network(cfg, basis.rank(), grid.count(), false, rng);
    for (double& v : params.sbn.w2.data()) v = rng.uniform(-0.3, 0.3);
    for (double& v : params.sbn.b2) v = rng.uniform(-0.3, 0.3);
    for (double& v : params.ptn.w2.data()) v = rng.uniform(-0.1, 0.1);
    for (double& v : params.ptn.b2) v = rng.uniform(-0.1, 0.1);

    Image img(1, 8, 8);
    for (double& v : img.data) v = rng.uniform(0.0, 1.0);
    const LandmarkSet truth = random_points(rng, n, 1.0, 7.0);
    const LandmarkSet targets = random_points(rng, grid.count(), 0.0, 8.0);
    const TpsLossWeights w{1.0, 0.4, 0.4};

    ForwardTrace probe;
    const auto feats = forward_features(params, img, probe);
    const LandmarkSet ys = forward_sbn(params, feats, basis, probe);
    forward_ptn(params, feats, ys, grid, probe);
    if (min_kink_distance(probe) < 1e-3) return false;  // too close to a rectifier kink

    const TpsGrads g = tps_loss_grad(probe.warp, ys, truth, probe.warp, targets, w);
    UpstreamGrads up;
    up.d = g.d + g.dc;
    up.u = g.u + g.uc;
    up.ys = g.src.stacked();
    NetworkParams analytic = backward(params, probe, up, &basis);

    const auto loss_of = [&](const NetworkParams& p) {
        ForwardTrace t;
        const auto f = forward_features(p, img, t);
        const LandmarkSet y = forward_sbn(p, f, basis, t);
        forward_ptn(p, f, y, grid, t);
        return tps_regularized_loss(t.warp, y, truth, t.warp, targets, w);
    };

    auto pv = param_views(params);
    auto av = param_views(analytic);
    for (std::size_t a = 0; a < pv.size(); ++a) {
        const auto numeric = finite_diff_grad(
            [&](const std::vector<double>& v) {
                NetworkParams p2 = params;
                *param_views(p2)[a].values = v;
                return loss_of(p2);
            },
            *pv[a].values, kEps);
        // Aggregate per group plus a whole-network block.
        rec.note(std::string("net.") + to_string(pv[a].group), *av[a].values, numeric);
        rec.note("net.full", *av[a].values, numeric);
    }
    return true;
}

}  // namespace

double GradSuiteReport::worst() const {
    double w = 0.0;
    for (const auto& b : blocks) w = std::max(w, b.worst_rel);
    return w;
}

std::vector<std::string> GradSuiteReport::failures(double tol) const {
    std::vector<const Block*> bad;
    for (const auto& b : blocks)
        if (b.worst_rel > tol) bad.push_back(&b);
    std::sort(bad.begin(), bad.end(),
              [](const Block* a, const Block* b) { return a->worst_rel > b->worst_rel; });
    std::vector<std::string> names;
    for (const Block* b : bad) names.push_back(b->name);
    return names;
}

GradSuiteReport run_gradient_suite(std::uint64_t seed, int instances,
                                   const std::string& corrupt_block) {
    std::map<std::string, double> worst;
    Recorder rec{worst, corrupt_block};
    const Rng root(seed);

    int done = 0;
    for (std::uint64_t k = 0; done < instances && k < static_cast<std::uint64_t>(instances) * 8;
         ++k) {
        check_sbn_loss(root.derive(3 * k), rec);
        check_tps_blocks(root.derive(3 * k + 1), rec);
        if (check_network(root.derive(3 * k + 2), rec)) ++done;
    }

    GradSuiteReport report;
    report.instances = done;
    for (const auto& [name, rel] : worst) report.blocks.push_back({name, rel});
    return report;
}

}  // namespace ddn
