#include <doctest.h>

#include <cmath>

#include "ddn/dataset.hpp"
#include "ddn/trainer.hpp"
#include "oracles.hpp"

using namespace ddn;

namespace {

struct TinyTask {
    std::vector<Sample> train;
    std::vector<Sample> heldout;
    ShapeBasis basis;
    ControlGrid grid;
    NetworkConfig net;
    SyntheticSpec spec;
};

SyntheticSpec tiny_spec() {
    SyntheticSpec spec;
    spec.landmark_count = 6;
    spec.basis_rank = 1;
    spec.mode_amplitudes = {3.0};
    spec.tps_jitter = 0.0;
    spec.image_size = 16;
    spec.train_count = 48;
    spec.test_count = 8;
    spec.seed = 5;
    spec.blob_sigma = 1.0;
    return spec;
}

NetworkConfig tiny_net() {
    NetworkConfig net;
    net.input_size = 16;
    net.stages = {{4, 3, 2}, {8, 3, 2}};
    net.hidden_width = 16;
    return net;
}

TinyTask make_task() {
    TinyTask task;
    task.spec = tiny_spec();
    const SyntheticData data = generate_synthetic(task.spec);
    task.train = data.train;
    task.heldout = data.test;
    std::vector<LandmarkSet> shapes;
    for (const Sample& s : task.train) shapes.push_back(s.truth);
    task.basis = build_shape_basis(shapes, 0.99);
    task.grid = ControlGrid::regular(4, 4, 16.0, 16.0);
    task.net = tiny_net();
    return task;
}

TrainerConfig fast_cfg() {
    TrainerConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs_per_phase = 2;
    cfg.threads = 1;
    return cfg;
}

NetworkParams fresh_params(const TinyTask& task, std::uint64_t seed) {
    Rng rng(seed);
    return init_network(task.net, task.basis.rank(), task.grid.count(), false, rng);
}

bool same_values(const NetworkParams& a, const NetworkParams& b, ParamGroup only) {
    auto av = param_views(const_cast<NetworkParams&>(a));
    auto bv = param_views(const_cast<NetworkParams&>(b));
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i].group != only) continue;
        if (*av[i].values != *bv[i].values) return false;
    }
    return true;
}

bool all_same(const NetworkParams& a, const NetworkParams& b) {
    return same_values(a, b, ParamGroup::Conv) && same_values(a, b, ParamGroup::SbnHead) &&
           same_values(a, b, ParamGroup::PtnHead);
}

}  // namespace

TEST_CASE("sgd_step fixed cases") {
    TinyTask task = make_task();
    NetworkParams p = fresh_params(task, 1);

    OptimizerState opt;
    opt.learning_rate = 0.1;
    opt.momentum = 0.0;
    opt.weight_decay = 0.0;
    opt.velocity = zeros_like(p);

    // Zero gradient, zero velocity, zero decay: parameters unchanged.
    const NetworkParams before = p;
    sgd_step(opt, p, zeros_like(p));
    CHECK(all_same(p, before));

    // mu = 0, wd = 0 reduces to plain descent.
    NetworkParams g = zeros_like(p);
    g.conv[0].w[0] = 2.0;
    sgd_step(opt, p, g);
    CHECK(p.conv[0].w[0] == before.conv[0].w[0] - 0.2);
}

TEST_CASE("sgd_step two-step momentum recurrence") {
    // theta = 1, f = theta^2, lr = 0.1, mu = 0.9:
    //   v1 = -0.2, theta1 = 0.8; v2 = 0.9(-0.2) - 0.1(1.6) = -0.34, theta2 = 0.46.
    TinyTask task = make_task();
    NetworkParams p = fresh_params(task, 2);
    p.conv[0].w[0] = 1.0;
    OptimizerState opt;
    opt.learning_rate = 0.1;
    opt.momentum = 0.9;
    opt.weight_decay = 0.0;
    opt.velocity = zeros_like(p);

    NetworkParams g = zeros_like(p);
    g.conv[0].w[0] = 2.0 * p.conv[0].w[0];
    sgd_step(opt, p, g);
    CHECK(p.conv[0].w[0] == doctest::Approx(0.8).epsilon(1e-15));
    g.conv[0].w[0] = 2.0 * p.conv[0].w[0];
    sgd_step(opt, p, g);
    CHECK(p.conv[0].w[0] == doctest::Approx(0.46).epsilon(1e-15));
}

TEST_CASE("sgd_step weight decay shrinks parameters at zero gradient") {
    TinyTask task = make_task();
    NetworkParams p = fresh_params(task, 3);
    OptimizerState opt;
    opt.learning_rate = 0.1;
    opt.momentum = 0.0;
    opt.weight_decay = 0.05;
    opt.velocity = zeros_like(p);

    double norm_before = 0.0;
    for (const auto& v : param_views(p))
        for (double x : *v.values) norm_before += x * x;
    sgd_step(opt, p, zeros_like(p));
    double norm_after = 0.0;
    for (const auto& v : param_views(p))
        for (double x : *v.values) norm_after += x * x;
    CHECK(norm_after < norm_before);
}

TEST_CASE("sgd_step honors freeze flags and flags divergence") {
    TinyTask task = make_task();
    NetworkParams p = fresh_params(task, 4);
    const NetworkParams before = p;
    OptimizerState opt;
    opt.velocity = zeros_like(p);

    NetworkParams g = zeros_like(p);
    for (auto& view : param_views(g))
        for (double& x : *view.values) x = 0.5;
    sgd_step(opt, p, g, FreezeFlags{true, false, true});
    CHECK(same_values(p, before, ParamGroup::Conv));
    CHECK(same_values(p, before, ParamGroup::PtnHead));
    CHECK_FALSE(same_values(p, before, ParamGroup::SbnHead));

    NetworkParams bad = zeros_like(p);
    bad.sbn.b1[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        sgd_step(opt, p, bad);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("sbn_head") != std::string::npos);
    }
}

TEST_CASE("augment_sample identity and flip involution") {
    TinyTask task = make_task();
    const Sample& s = task.train[0];

    AugmentConfig none;
    Rng rng(10);
    auto out = augment_sample(none, s.image, s.truth, rng);
    REQUIRE(out.has_value());
    CHECK(out->first.data == s.image.data);
    CHECK(out->second.stacked() == s.truth.stacked());

    // Exactly representable coordinates (eighths) make the mirrored
    // subtraction lossless, so the double flip is bitwise.
    LandmarkSet pts({{2.125, 3.5}, {4.25, 5.0}, {6.625, 7.875}, {8.0, 9.5}, {10.375, 11.0},
                     {12.75, 13.125}});
    AugmentConfig flip;
    flip.flip_prob = 1.0;
    flip.mirror_permutation = {0, 5, 4, 3, 2, 1};  // involution for the 6-ring
    auto once = augment_sample(flip, s.image, pts, rng);
    REQUIRE(once.has_value());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec2 expect = pts[flip.mirror_permutation[i]];
        CHECK(once->second[i].u == 16 - 1 - expect.u);
        CHECK(once->second[i].v == expect.v);
    }
    auto twice = augment_sample(flip, once->first, once->second, rng);
    REQUIRE(twice.has_value());
    CHECK(twice->first.data == s.image.data);
    CHECK(twice->second.stacked() == pts.stacked());

    AugmentConfig bad = flip;
    bad.mirror_permutation = {0, 0, 4, 3, 2, 1};
    CHECK_THROWS_AS(augment_sample(bad, s.image, pts, rng), ShapeError);
}

TEST_CASE("augment_sample rotation matches the closed-form oracle") {
    TinyTask task = make_task();
    const Sample& s = task.train[2];
    AugmentConfig cfg;
    cfg.rotation_deg = 30.0;

    Rng rng(77);
    Rng replay(77);
    const double deg = replay.uniform(-30.0, 30.0);  // first draw in the augment stream
    auto out = augment_sample(cfg, s.image, s.truth, rng);
    REQUIRE(out.has_value());

    const double rad = deg * M_PI / 180.0;
    const double c = 0.5 * (16 - 1);
    for (std::size_t i = 0; i < s.truth.size(); ++i) {
        const double ru = s.truth[i].u - c;
        const double rv = s.truth[i].v - c;
        const double eu = std::cos(rad) * ru - std::sin(rad) * rv + c;
        const double ev = std::sin(rad) * ru + std::cos(rad) * rv + c;
        CHECK(std::fabs(out->second[i].u - eu) <= 1e-12);
        CHECK(std::fabs(out->second[i].v - ev) <= 1e-12);
    }
}

TEST_CASE("augment_sample signals skip when landmarks cannot stay in frame") {
    Image img(1, 16, 16);
    LandmarkSet corner({{0.5, 0.5}, {15.5, 15.5}, {0.5, 15.5}, {15.5, 0.5}});
    AugmentConfig cfg;
    cfg.crop_jitter = 12.0;  // any draw moves a corner landmark outside
    Rng rng(5);
    bool skipped = false;
    for (int i = 0; i < 20 && !skipped; ++i) {
        skipped = !augment_sample(cfg, img, corner, rng).has_value();
    }
    CHECK(skipped);
}

TEST_CASE("pretrain_sbn learning-rate zero keeps everything constant") {
    TinyTask task = make_task();
    TrainerConfig cfg = fast_cfg();
    cfg.lr_sbn = 0.0;
    cfg.lr_ptn = 0.0;
    TrainState init;
    init.params = fresh_params(task, 20);
    const NetworkParams snapshot = init.params;

    const StageResult r = pretrain_sbn(task.train, task.heldout, task.basis, cfg, 9, init);
    CHECK(all_same(r.state.params, snapshot));
    for (std::size_t i = 1; i < r.curve.size(); ++i) {
        CHECK(r.curve[i].train_loss == r.curve[0].train_loss);
    }
}

TEST_CASE("pretrain_sbn freezes conv in phase 1 and never touches the PTN head") {
    TinyTask task = make_task();
    TrainerConfig cfg = fast_cfg();
    TrainState init;
    init.params = fresh_params(task, 21);
    const NetworkParams snapshot = init.params;

    std::vector<NetworkParams> phase1_states;
    const StageResult r = pretrain_sbn(task.train, task.heldout, task.basis, cfg, 9, init,
                                       [&](const TrainState& st, const TrainCurvePoint& pt) {
                                           if (pt.phase == 1) phase1_states.push_back(st.params);
                                       });
    REQUIRE(phase1_states.size() == 2);
    for (const NetworkParams& st : phase1_states) {
        CHECK(same_values(st, snapshot, ParamGroup::Conv));
    }
    // Phase 2 must have updated conv; SBN head moves in both phases.
    CHECK_FALSE(same_values(r.state.params, snapshot, ParamGroup::Conv));
    CHECK_FALSE(same_values(r.state.params, snapshot, ParamGroup::SbnHead));
    CHECK(same_values(r.state.params, snapshot, ParamGroup::PtnHead));
}

TEST_CASE("pretrain_sbn fits a rank-1 family") {
    TinyTask task = make_task();
    TrainerConfig cfg = fast_cfg();
    cfg.epochs_per_phase = 15;
    cfg.lr_sbn = 5e-3;
    cfg.lambda = 0.01;  // the default penalty floor sits at ~9% of the initial loss
    TrainState init;
    init.params = fresh_params(task, 22);

    const StageResult r = pretrain_sbn(task.train, task.heldout, task.basis, cfg, 31, init);
    CHECK(r.curve.back().train_loss < 0.1 * r.curve.front().train_loss);
}

TEST_CASE("pretrain_ptn trivial dataset stays near zero at identity init") {
    TinyTask task = make_task();
    const LandmarkSet mean = LandmarkSet::from_stacked(task.basis.mean);
    // Every truth equals the mean shape.
    std::vector<Sample> train;
    for (int i = 0; i < 16; ++i) {
        Sample s;
        s.truth = mean;
        s.image = render_shape(mean, task.spec);
        s.normalizer = sample_normalizer(mean, task.spec);
        train.push_back(s);
    }
    const auto targets = synthesize_targets(train, mean, task.grid, 1);

    TrainerConfig cfg = fast_cfg();
    cfg.lr_ptn = 0.0;
    TrainState init;
    init.params = fresh_params(task, 23);
    const StageResult r =
        pretrain_ptn(train, {}, task.basis, task.grid, targets, {}, cfg, 3, init);
    CHECK(r.curve.front().train_loss <= 1e-10);
}

TEST_CASE("pretrain_ptn learns per-sample translations") {
    TinyTask task = make_task();
    const LandmarkSet mean = LandmarkSet::from_stacked(task.basis.mean);

    Rng rng(40);
    std::vector<Sample> train;
    for (int i = 0; i < 48; ++i) {
        const double tx = rng.uniform(-2.0, 2.0);
        const double ty = rng.uniform(-2.0, 2.0);
        LandmarkSet truth = mean;
        for (Vec2& p : truth.points) {
            p.u += tx;
            p.v += ty;
        }
        Sample s;
        s.truth = truth;
        s.image = render_shape(truth, task.spec);
        s.normalizer = sample_normalizer(truth, task.spec);
        train.push_back(s);
    }
    const auto targets = synthesize_targets(train, mean, task.grid, 1);

    TrainerConfig cfg = fast_cfg();
    cfg.epochs_per_phase = 10;
    cfg.lr_ptn = 1e-3;
    TrainState init;
    init.params = fresh_params(task, 24);
    const StageResult r =
        pretrain_ptn(train, {}, task.basis, task.grid, targets, {}, cfg, 41, init);

    double err_before = 0.0, err_after = 0.0;
    for (const Sample& s : train) {
        ForwardTrace t;
        const auto f = forward_features(r.state.params, s.image, t);
        const LandmarkSet yp = forward_ptn(r.state.params, f, mean, task.grid, t);
        for (std::size_t i = 0; i < s.truth.size(); ++i) {
            err_before += dist(mean[i], s.truth[i]);
            err_after += dist(yp[i], s.truth[i]);
        }
    }
    CHECK(err_after < 0.5 * err_before);
}

TEST_CASE("train_joint learning-rate zero leaves the cascade untouched") {
    TinyTask task = make_task();
    const LandmarkSet mean = LandmarkSet::from_stacked(task.basis.mean);
    const auto train_targets = synthesize_targets(task.train, mean, task.grid, 1);
    const auto held_targets = synthesize_targets(task.heldout, mean, task.grid, 1);

    TrainerConfig cfg = fast_cfg();
    cfg.lr_joint = 0.0;
    TrainState init;
    init.params = fresh_params(task, 25);
    const NetworkParams snapshot = init.params;
    const StageResult r = train_joint(task.train, task.heldout, task.basis, task.grid,
                                      train_targets, held_targets, cfg, 51, init);
    CHECK(all_same(r.state.params, snapshot));
}

TEST_CASE("interrupted training resumes bit-exactly") {
    TinyTask task = make_task();
    const LandmarkSet mean = LandmarkSet::from_stacked(task.basis.mean);
    const auto train_targets = synthesize_targets(task.train, mean, task.grid, 1);
    const auto held_targets = synthesize_targets(task.heldout, mean, task.grid, 1);

    TrainerConfig cfg = fast_cfg();
    TrainState init;
    init.params = fresh_params(task, 26);

    const StageResult full = train_joint(task.train, task.heldout, task.basis, task.grid,
                                         train_targets, held_targets, cfg, 61, init);

    TrainState mid;
    TrainState init2;
    init2.params = fresh_params(task, 26);
    train_joint(task.train, task.heldout, task.basis, task.grid, train_targets, held_targets,
                cfg, 61, init2, [&](const TrainState& st, const TrainCurvePoint& pt) {
                    if (pt.epoch == 1) mid = st;  // capture after two epochs
                });
    const StageResult resumed = train_joint(task.train, task.heldout, task.basis, task.grid,
                                            train_targets, held_targets, cfg, 61, mid);

    CHECK(all_same(resumed.state.params, full.state.params));
    REQUIRE(full.curve.size() == 4);
    REQUIRE(resumed.curve.size() == 2);
    CHECK(resumed.curve[0].train_loss == full.curve[2].train_loss);
    CHECK(resumed.curve[1].train_loss == full.curve[3].train_loss);
    CHECK(resumed.curve[1].heldout_loss == full.curve[3].heldout_loss);
}

TEST_CASE("same seed and config give identical loss curves") {
    TinyTask task = make_task();
    TrainerConfig cfg = fast_cfg();
    TrainState a, b;
    a.params = fresh_params(task, 27);
    b.params = fresh_params(task, 27);
    const StageResult ra = pretrain_sbn(task.train, task.heldout, task.basis, cfg, 71, a);
    const StageResult rb = pretrain_sbn(task.train, task.heldout, task.basis, cfg, 71, b);
    REQUIRE(ra.curve.size() == rb.curve.size());
    for (std::size_t i = 0; i < ra.curve.size(); ++i) {
        CHECK(ra.curve[i].train_loss == rb.curve[i].train_loss);
        CHECK(ra.curve[i].heldout_loss == rb.curve[i].heldout_loss);
    }
    CHECK(all_same(ra.state.params, rb.state.params));
}
