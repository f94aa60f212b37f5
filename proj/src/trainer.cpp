#include "ddn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <thread>

namespace ddn {

const char* to_string(Stage s) {
    switch (s) {
        case Stage::SbnPretrain: return "sbn";
        case Stage::PtnPretrain: return "ptn";
        case Stage::Joint: return "joint";
    }
    return "?";
}

void sgd_step(OptimizerState& state, NetworkParams& params, const NetworkParams& grads,
              const FreezeFlags& freeze) {
    auto pv = param_views(params);
    auto gv = param_views(const_cast<NetworkParams&>(grads));
    auto vv = param_views(state.velocity);
    if (pv.size() != gv.size() || pv.size() != vv.size()) {
        throw ShapeError("sgd_step: parameter/gradient/velocity structure mismatch");
    }
    for (std::size_t a = 0; a < pv.size(); ++a) {
        if (pv[a].values->size() != gv[a].values->size()) {
            throw ShapeError("sgd_step: size mismatch in " + pv[a].name);
        }
        if (freeze.frozen(pv[a].group)) continue;
        auto& theta = *pv[a].values;
        const auto& g = *gv[a].values;
        auto& vel = *vv[a].values;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw DivergenceError("sgd_step: non-finite gradient in group " +
                                      std::string(to_string(pv[a].group)) + " (" + pv[a].name +
                                      ")");
            }
            vel[i] = state.momentum * vel[i] -
                     state.learning_rate * (g[i] + state.weight_decay * theta[i]);
            theta[i] += vel[i];
        }
    }
}

std::optional<std::pair<Image, LandmarkSet>> augment_sample(const AugmentConfig& config,
                                                            const Image& image,
                                                            const LandmarkSet& landmarks,
                                                            Rng& rng) {
    if (config.flip_prob > 0.0) {
        if (config.mirror_permutation.size() != landmarks.size()) {
            throw ShapeError("augment_sample: mirror permutation must cover all landmarks");
        }
        std::vector<bool> seen(landmarks.size(), false);
        for (int idx : config.mirror_permutation) {
            if (idx < 0 || static_cast<std::size_t>(idx) >= landmarks.size() || seen[idx]) {
                throw ShapeError("augment_sample: invalid mirror permutation");
            }
            seen[idx] = true;
        }
    }

    const int max_tries = 8;
    for (int attempt = 0; attempt < max_tries; ++attempt) {
        const double dx = config.crop_jitter > 0.0
                              ? rng.uniform(-config.crop_jitter, config.crop_jitter)
                              : 0.0;
        const double dy = config.crop_jitter > 0.0
                              ? rng.uniform(-config.crop_jitter, config.crop_jitter)
                              : 0.0;
        const double deg = config.rotation_deg > 0.0
                               ? rng.uniform(-config.rotation_deg, config.rotation_deg)
                               : 0.0;
        const bool flip = config.flip_prob > 0.0 && rng.uniform() < config.flip_prob;

        // Flip is applied first (exact pixel mirror), then the similarity warp.
        Image base = image;
        LandmarkSet pts = landmarks;
        if (flip) {
            for (int c = 0; c < image.channels; ++c)
                for (int y = 0; y < image.height; ++y)
                    for (int x = 0; x < image.width; ++x)
                        base.at(c, y, x) = image.at(c, y, image.width - 1 - x);
            for (std::size_t i = 0; i < landmarks.size(); ++i) {
                const Vec2 p = landmarks[config.mirror_permutation[i]];
                pts.points[i] = {image.width - 1 - p.u, p.v};
            }
        }

        if (dx == 0.0 && dy == 0.0 && deg == 0.0) {
            // Pure flip (or identity) stays resampling-free.
            for (const Vec2& p : pts.points) {
                if (p.u < 0.0 || p.u > image.width - 1 || p.v < 0.0 || p.v > image.height - 1) {
                    return std::nullopt;
                }
            }
            return std::make_pair(std::move(base), std::move(pts));
        }

        const double rad = deg * M_PI / 180.0;
        const double cs = std::cos(rad);
        const double sn = std::sin(rad);
        const double cu = 0.5 * (image.width - 1);
        const double cv = 0.5 * (image.height - 1);

        LandmarkSet moved = pts;
        bool inside = true;
        for (Vec2& p : moved.points) {
            const double ru = p.u - cu;
            const double rv = p.v - cv;
            p = {cs * ru - sn * rv + cu + dx, sn * ru + cs * rv + cv + dy};
            if (p.u < 0.0 || p.u > image.width - 1 || p.v < 0.0 || p.v > image.height - 1) {
                inside = false;
            }
        }
        if (!inside) continue;

        Image warped(image.channels, image.height, image.width);
        for (int c = 0; c < image.channels; ++c) {
            for (int y = 0; y < image.height; ++y) {
                for (int x = 0; x < image.width; ++x) {
                    // Inverse map: rotate back about the center, undo the shift.
                    const double ru = x - cu - dx;
                    const double rv = y - cv - dy;
                    warped.at(c, y, x) =
                        base.sample_bilinear(c, -sn * ru + cs * rv + cv, cs * ru + sn * rv + cu);
                }
            }
        }
        return std::make_pair(std::move(warped), std::move(moved));
    }
    return std::nullopt;
}

namespace {

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const int t = std::min<std::size_t>(threads, count);
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (int w = 0; w < t; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < count; i += t) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// Per-sample loss and parameter gradient for one stage.
struct SamplePass {
    double loss = 0.0;
    NetworkParams grads;
};

struct StageOps {
    Stage stage;
    // loss only (for held-out curves)
    std::function<double(const NetworkParams&, const Sample&, std::size_t sample_idx)> loss;
    // loss + gradient; `augmented` tells the stage the truth differs from the
    // stored sample (cached per-sample data must not be used then)
    std::function<SamplePass(const NetworkParams&, const Sample&, std::size_t sample_idx,
                             bool augmented)>
        pass;
    FreezeFlags phase1;
    FreezeFlags phase2;
    double learning_rate = 1e-2;
};

std::uint64_t stage_stream(Stage stage, int epoch) {
    const std::uint64_t sid = stage == Stage::SbnPretrain ? 1 : stage == Stage::PtnPretrain ? 2 : 3;
    return (sid << 32) + static_cast<std::uint64_t>(epoch);
}

StageResult run_stage(const StageOps& ops, const std::vector<Sample>& train,
                      const std::vector<Sample>& heldout, const TrainerConfig& cfg,
                      std::uint64_t seed, TrainState init, const EpochCallback& on_epoch) {
    if (train.empty()) throw ShapeError("train: empty dataset");
    if (cfg.batch_size < 1 || cfg.epochs_per_phase < 1) {
        throw ConfigError("train: batch size and epochs must be >= 1");
    }

    StageResult result;
    result.state = std::move(init);
    OptimizerState opt;
    opt.learning_rate = ops.learning_rate;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    if (result.state.velocity.conv.size() != result.state.params.conv.size()) {
        result.state.velocity = zeros_like(result.state.params);  // fresh stage
    }
    opt.velocity = std::move(result.state.velocity);

    const int total_epochs = 2 * cfg.epochs_per_phase;
    const Rng root(seed);
    std::vector<double> phase1_history;

    for (int epoch = result.state.epochs_done; epoch < total_epochs; ++epoch) {
        bool phase2 = result.state.phase2_start >= 0 && epoch >= result.state.phase2_start;
        if (!phase2 && epoch >= cfg.epochs_per_phase) {
            result.state.phase2_start = epoch;
            phase2 = true;
        }
        const FreezeFlags freeze = phase2 ? ops.phase2 : ops.phase1;

        Rng rng = root.derive(stage_stream(ops.stage, epoch));
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);

        // Per-sample losses keyed by original index, so the epoch mean does
        // not depend on the shuffle order.
        std::vector<double> sample_loss(train.size(), 0.0);
        std::vector<bool> sample_seen(train.size(), false);
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));

            // Augmentation draws happen serially so the stream is stable; the
            // forward/backward fan-out is order-independent by construction.
            std::vector<const Sample*> batch;
            std::vector<std::size_t> batch_idx;
            std::vector<bool> batch_aug;
            std::vector<Sample> augmented;
            augmented.reserve(stop - start);
            const bool augmenting = cfg.augment.crop_jitter > 0.0 ||
                                    cfg.augment.rotation_deg > 0.0 || cfg.augment.flip_prob > 0.0;
            for (std::size_t bi = start; bi < stop; ++bi) {
                const Sample& s = train[order[bi]];
                if (augmenting) {
                    auto aug = augment_sample(cfg.augment, s.image, s.truth, rng);
                    if (!aug) continue;  // skip-sample
                    Sample a;
                    a.image = std::move(aug->first);
                    a.truth = std::move(aug->second);
                    a.normalizer = s.normalizer;
                    augmented.push_back(std::move(a));
                    batch.push_back(&augmented.back());
                } else {
                    batch.push_back(&s);
                }
                batch_idx.push_back(order[bi]);
                batch_aug.push_back(augmenting);
            }
            if (batch.empty()) continue;

            std::vector<SamplePass> slots(batch.size());
            parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
                slots[i] = ops.pass(result.state.params, *batch[i], batch_idx[i], batch_aug[i]);
            });

            NetworkParams grads = zeros_like(result.state.params);
            auto acc = param_views(grads);
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < slots.size(); ++i) {
                batch_loss += slots[i].loss;
                sample_loss[batch_idx[i]] = slots[i].loss;
                sample_seen[batch_idx[i]] = true;
                auto gv = param_views(const_cast<NetworkParams&>(slots[i].grads));
                for (std::size_t a = 0; a < acc.size(); ++a) {
                    const auto& src = *gv[a].values;
                    auto& dst = *acc[a].values;
                    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
                }
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            double norm_sq = 0.0;
            for (auto& view : acc) {
                for (double& g : *view.values) {
                    g *= inv;
                    norm_sq += g * g;
                }
            }
            if (cfg.grad_clip > 0.0 && norm_sq > cfg.grad_clip * cfg.grad_clip) {
                const double scale = cfg.grad_clip / std::sqrt(norm_sq);
                for (auto& view : acc)
                    for (double& g : *view.values) g *= scale;
            }
            seen += batch.size();
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("train: loss diverged at epoch " + std::to_string(epoch));
            }
            sgd_step(opt, result.state.params, grads, freeze);
        }

        double epoch_loss = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (sample_seen[i]) epoch_loss += sample_loss[i];
        }

        TrainCurvePoint point;
        point.epoch = epoch;
        point.phase = phase2 ? 2 : 1;
        point.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
        double ho = 0.0;
        if (!heldout.empty()) {
            std::vector<double> losses(heldout.size());
            parallel_for(heldout.size(), cfg.threads, [&](std::size_t i) {
                losses[i] = ops.loss(result.state.params, heldout[i], i);
            });
            for (double l : losses) ho += l;
            ho /= static_cast<double>(heldout.size());
        }
        point.heldout_loss = ho;
        result.curve.push_back(point);
        result.state.epochs_done = epoch + 1;
        if (on_epoch) {
            result.state.velocity = opt.velocity;
            on_epoch(result.state, point);
        }

        // Optional plateau switch to phase 2 ahead of the fixed budget.
        if (!phase2 && cfg.plateau_enabled &&
            static_cast<int>(phase1_history.size()) >= cfg.plateau_window) {
            const double prev =
                phase1_history[phase1_history.size() - static_cast<std::size_t>(cfg.plateau_window)];
            const double rel = (prev - point.train_loss) / std::max(std::fabs(prev), 1e-12);
            if (rel < cfg.plateau_rel_improve) result.state.phase2_start = epoch + 1;
        }
        if (!phase2) phase1_history.push_back(point.train_loss);
    }

    result.state.velocity = std::move(opt.velocity);
    return result;
}

Matrix add_matrices(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    out += b;
    return out;
}

}  // namespace

std::vector<LandmarkSet> synthesize_targets(const std::vector<Sample>& samples,
                                            const LandmarkSet& mean_shape, const ControlGrid& grid,
                                            int threads) {
    std::vector<LandmarkSet> targets(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        targets[i] = synthesize_control_targets(mean_shape, samples[i].truth, grid);
    });
    return targets;
}

StageResult pretrain_sbn(const std::vector<Sample>& train, const std::vector<Sample>& heldout,
                         const ShapeBasis& basis, const TrainerConfig& cfg, std::uint64_t seed,
                         TrainState init, const EpochCallback& on_epoch) {
    StageOps ops;
    ops.stage = Stage::SbnPretrain;
    ops.learning_rate = cfg.lr_sbn;
    ops.phase1 = FreezeFlags{true, false, true};   // conv and PTN frozen
    ops.phase2 = FreezeFlags{false, false, true};  // PTN stays untouched
    ops.loss = [&basis, &cfg](const NetworkParams& p, const Sample& s, std::size_t) {
        ForwardTrace trace;
        const auto features = forward_features(p, s.image, trace);
        forward_sbn(p, features, basis, trace);
        return sbn_loss(basis, trace.xs, s.truth, cfg.lambda);
    };
    ops.pass = [&basis, &cfg](const NetworkParams& p, const Sample& s, std::size_t, bool) {
        ForwardTrace trace;
        const auto features = forward_features(p, s.image, trace);
        forward_sbn(p, features, basis, trace);
        SamplePass out;
        out.loss = sbn_loss(basis, trace.xs, s.truth, cfg.lambda);
        UpstreamGrads up;
        up.xs = sbn_loss_grad(basis, trace.xs, s.truth, cfg.lambda);
        out.grads = backward(p, trace, up, &basis);
        return out;
    };
    return run_stage(ops, train, heldout, cfg, seed, std::move(init), on_epoch);
}

StageResult pretrain_ptn(const std::vector<Sample>& train, const std::vector<Sample>& heldout,
                         const ShapeBasis& basis, const ControlGrid& grid,
                         const std::vector<LandmarkSet>& train_targets,
                         const std::vector<LandmarkSet>& heldout_targets,
                         const TrainerConfig& cfg, std::uint64_t seed, TrainState init,
                         const EpochCallback& on_epoch) {
    if (train_targets.size() != train.size() || heldout_targets.size() != heldout.size()) {
        throw ShapeError("pretrain_ptn: control targets must pair with samples");
    }
    const LandmarkSet mean_shape = LandmarkSet::from_stacked(basis.mean);
    StageOps ops;
    ops.stage = Stage::PtnPretrain;
    ops.learning_rate = cfg.lr_ptn;
    ops.phase1 = FreezeFlags{true, true, false};
    ops.phase2 = FreezeFlags{false, true, false};

    auto eval_loss = [&, mean_shape](const NetworkParams& p, const Sample& s, std::size_t idx,
                                     const std::vector<LandmarkSet>& targets) {
        ForwardTrace trace;
        const auto features = forward_features(p, s.image, trace);
        forward_ptn(p, features, mean_shape, grid, trace);
        return tps_regularized_loss(trace.warp, mean_shape, s.truth, trace.warp, targets[idx],
                                    cfg.tps);
    };
    ops.loss = [eval_loss, &heldout_targets](const NetworkParams& p, const Sample& s,
                                             std::size_t idx) {
        return eval_loss(p, s, idx, heldout_targets);
    };
    ops.pass = [&, mean_shape](const NetworkParams& p, const Sample& s, std::size_t idx,
                               bool augmented) {
        ForwardTrace trace;
        const auto features = forward_features(p, s.image, trace);
        forward_ptn(p, features, mean_shape, grid, trace);
        const LandmarkSet targets = augmented
                                        ? synthesize_control_targets(mean_shape, s.truth, grid)
                                        : train_targets[idx];
        SamplePass out;
        out.loss =
            tps_regularized_loss(trace.warp, mean_shape, s.truth, trace.warp, targets, cfg.tps);
        const TpsGrads g =
            tps_loss_grad(trace.warp, mean_shape, s.truth, trace.warp, targets, cfg.tps);
        UpstreamGrads up;
        up.d = add_matrices(g.d, g.dc);
        up.u = add_matrices(g.u, g.uc);
        out.grads = backward(p, trace, up, nullptr);
        return out;
    };
    return run_stage(ops, train, heldout, cfg, seed, std::move(init), on_epoch);
}

StageResult train_joint(const std::vector<Sample>& train, const std::vector<Sample>& heldout,
                        const ShapeBasis& basis, const ControlGrid& grid,
                        const std::vector<LandmarkSet>& train_targets,
                        const std::vector<LandmarkSet>& heldout_targets, const TrainerConfig& cfg,
                        std::uint64_t seed, TrainState init, const EpochCallback& on_epoch) {
    if (train_targets.size() != train.size() || heldout_targets.size() != heldout.size()) {
        throw ShapeError("train_joint: control targets must pair with samples");
    }
    StageOps ops;
    ops.stage = Stage::Joint;
    ops.learning_rate = cfg.lr_joint;
    ops.phase1 = FreezeFlags{true, true, false};   // PTN adapts to SBN output first
    ops.phase2 = FreezeFlags{false, false, false};

    auto eval_loss = [&](const NetworkParams& p, const Sample& s, std::size_t idx,
                         const std::vector<LandmarkSet>& targets) {
        ForwardTrace trace;
        const auto features = forward_features(p, s.image, trace);
        const LandmarkSet ys = forward_sbn(p, features, basis, trace);
        forward_ptn(p, features, ys, grid, trace);
        return tps_regularized_loss(trace.warp, ys, s.truth, trace.warp, targets[idx], cfg.tps);
    };
    ops.loss = [eval_loss, &heldout_targets](const NetworkParams& p, const Sample& s,
                                             std::size_t idx) {
        return eval_loss(p, s, idx, heldout_targets);
    };
    const LandmarkSet mean_shape = LandmarkSet::from_stacked(basis.mean);
    ops.pass = [&, mean_shape](const NetworkParams& p, const Sample& s, std::size_t idx,
                               bool augmented) {
        ForwardTrace trace;
        const auto features = forward_features(p, s.image, trace);
        const LandmarkSet ys = forward_sbn(p, features, basis, trace);
        forward_ptn(p, features, ys, grid, trace);
        const LandmarkSet targets = augmented
                                        ? synthesize_control_targets(mean_shape, s.truth, grid)
                                        : train_targets[idx];
        SamplePass out;
        out.loss = tps_regularized_loss(trace.warp, ys, s.truth, trace.warp, targets, cfg.tps);
        const TpsGrads g = tps_loss_grad(trace.warp, ys, s.truth, trace.warp, targets, cfg.tps);
        UpstreamGrads up;
        up.d = add_matrices(g.d, g.dc);
        up.u = add_matrices(g.u, g.uc);
        up.ys = g.src.stacked();
        out.grads = backward(p, trace, up, &basis);
        return out;
    };
    return run_stage(ops, train, heldout, cfg, seed, std::move(init), on_epoch);
}

}  // namespace ddn
