// main.cpp - the ddn command line: gen-data, train, eval, warp, gradcheck.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ddn/config.hpp"
#include "ddn/eval.hpp"
#include "ddn/gradsuite.hpp"
#include "ddn/persist.hpp"

namespace fs = std::filesystem;
using namespace ddn;

namespace {

// Exit codes: 0 success, 2 config/parse, 3 I/O, 4 contract (shape, domain,
// singular system, stage prerequisites), 5 divergence, 1 anything else.
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitContract = 4;
constexpr int kExitDivergence = 5;

RunConfig load_config(const std::string& path, std::int64_t seed_override) {
    RunConfig cfg = path.empty() ? RunConfig::from_json_text("{}") : RunConfig::from_file(path);
    if (seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed_override);
        cfg.dataset.seed = cfg.seed;
    }
    return cfg;
}

int effective_threads(const RunConfig& cfg) {
    int threads = std::max(1, cfg.trainer.threads);
    if (const char* env = std::getenv("DDN_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) threads = std::min(threads, cap);
    }
    return threads;
}

void log_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
    const std::string text = cfg.resolved_json();
    std::cout << "resolved config:\n" << text << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "config.resolved.json");
        if (!out) throw IoError("cannot write resolved config in " + out_dir);
        out << text << "\n";
    }
}

int stage_rank(const std::string& stage) {
    if (stage == "sbn") return 1;
    if (stage == "ptn") return 2;
    if (stage == "joint") return 3;
    return 0;
}

Stage stage_from_name(const std::string& name) {
    if (name == "sbn") return Stage::SbnPretrain;
    if (name == "ptn") return Stage::PtnPretrain;
    return Stage::Joint;
}

// Fresh PTN head sized for the requested transform; the second layer stays
// zero so the stage starts from the identity warp.
void rebuild_ptn_head(NetworkParams& params, const RunConfig& cfg, std::size_t grid_count,
                      bool affine) {
    Rng rng = Rng(cfg.seed).derive(affine ? 0xA44EULL : 0x795ULL);
    const std::size_t outputs = affine ? 6 : 6 + 2 * grid_count;
    const std::size_t feat = params.feature_length();
    params.ptn_affine_only = affine;
    params.ptn.w1 = Matrix(params.hidden_width, feat);
    const double bound = 1.0 / std::sqrt(static_cast<double>(feat));
    for (double& w : params.ptn.w1.data()) w = rng.uniform(-bound, bound);
    params.ptn.b1.assign(params.hidden_width, 0.0);
    params.ptn.w2 = Matrix(outputs, params.hidden_width);
    params.ptn.b2.assign(outputs, 0.0);
}

int run_gen_data(const std::string& config_path, const std::string& out,
                 std::int64_t seed_override) {
    const RunConfig cfg = load_config(config_path, seed_override);
    log_resolved_config(cfg, out);
    const SyntheticData data = generate_synthetic(cfg.dataset);
    write_dataset_dir(out, data, cfg);
    std::cout << "wrote " << data.train.size() << " train / " << data.test.size()
              << " test samples to " << out << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& stage,
              const std::string& transform, const std::string& data_dir, const std::string& out,
              const std::string& resume, std::int64_t seed_override) {
    RunConfig cfg = load_config(config_path, seed_override);
    cfg.trainer.threads = effective_threads(cfg);
    log_resolved_config(cfg, out);

    const LoadedDataset data = read_dataset_dir(data_dir, cfg);
    const bool want_affine = transform == "affine";

    TrainState state;
    ShapeBasis basis;
    ControlGrid grid;
    bool affine = want_affine;

    if (!resume.empty()) {
        const LoadedCheckpoint lck = load_train_checkpoint(resume);
        if (lck.config_hash != cfg.hash()) {
            throw ContractError("resume checkpoint was produced with a different config");
        }
        basis = lck.basis;
        grid = lck.grid;
        if (lck.stage == stage && !lck.complete) {
            // Continue an interrupted stage.
            if (!transform.empty() && lck.affine_transform != want_affine) {
                throw ContractError("transform flag conflicts with the checkpoint");
            }
            state = lck.state;
            affine = lck.affine_transform;
        } else if (stage_rank(lck.stage) == stage_rank(stage) - 1 && lck.complete) {
            state.params = lck.state.params;
            if (stage == "ptn") {
                rebuild_ptn_head(state.params, cfg, grid.count(), want_affine);
                affine = want_affine;
            } else if (stage == "joint") {
                if (!transform.empty() && lck.affine_transform != want_affine) {
                    throw ContractError("transform flag conflicts with the checkpoint");
                }
                affine = lck.affine_transform;
            }
        } else {
            throw ContractError("stage " + stage + " cannot start from a '" + lck.stage +
                                "' checkpoint (complete=" + (lck.complete ? "1" : "0") + ")");
        }
    } else {
        if (stage != "sbn") {
            const std::string prereq = stage == "ptn" ? "sbn" : "ptn";
            throw ContractError("stage " + stage + " requires --resume with a completed '" +
                                prereq + "' checkpoint");
        }
        std::vector<LandmarkSet> shapes;
        for (const Sample& s : data.train) shapes.push_back(s.truth);
        basis = build_shape_basis(shapes, cfg.energy_fraction);
        grid = cfg.make_grid();
        Rng rng = Rng(cfg.seed).derive(0x1217ULL);
        state.params = init_network(cfg.network, basis.rank(), grid.count(), want_affine, rng);
    }

    if (2 * static_cast<std::size_t>(cfg.dataset.landmark_count) != basis.mean.size()) {
        throw ContractError("basis landmark count does not match the dataset");
    }

    fs::create_directories(out);
    const Stage st = stage_from_name(stage);
    const std::string progress_path = (fs::path(out) / (stage + "_inprogress.ddn")).string();
    const EpochCallback on_epoch = [&](const TrainState& s, const TrainCurvePoint& pt) {
        write_train_checkpoint(progress_path, s, st, basis, grid, cfg, affine, false);
        std::printf("epoch %3d phase %d  train %.6f  heldout %.6f\n", pt.epoch, pt.phase,
                    pt.train_loss, pt.heldout_loss);
        std::fflush(stdout);
    };

    StageResult result;
    if (st == Stage::SbnPretrain) {
        result = pretrain_sbn(data.train, data.test, basis, cfg.trainer, cfg.seed,
                              std::move(state), on_epoch);
    } else {
        const LandmarkSet mean_shape = LandmarkSet::from_stacked(basis.mean);
        const auto train_targets =
            synthesize_targets(data.train, mean_shape, grid, cfg.trainer.threads);
        const auto test_targets =
            synthesize_targets(data.test, mean_shape, grid, cfg.trainer.threads);
        if (st == Stage::PtnPretrain) {
            result = pretrain_ptn(data.train, data.test, basis, grid, train_targets,
                                  test_targets, cfg.trainer, cfg.seed, std::move(state), on_epoch);
        } else {
            result = train_joint(data.train, data.test, basis, grid, train_targets, test_targets,
                                 cfg.trainer, cfg.seed, std::move(state), on_epoch);
        }
    }

    const std::string final_path = (fs::path(out) / (stage + ".ddn")).string();
    write_train_checkpoint(final_path, result.state, st, basis, grid, cfg, affine, true);
    write_curve_csv((fs::path(out) / (stage + "_curve.csv")).string(), result.curve);
    std::cout << "stage " << stage << " done after " << result.state.epochs_done
              << " epochs; checkpoint " << final_path << "\n";
    return 0;
}

int run_eval(const std::string& config_path, const std::string& ck_path,
             const std::string& data_dir, const std::string& head, const std::string& out,
             bool predict_truth, std::int64_t seed_override) {
    RunConfig cfg = load_config(config_path, seed_override);
    log_resolved_config(cfg, out);
    const LoadedCheckpoint lck = load_train_checkpoint(ck_path);

    const int need = head == "sbn" ? 1 : head == "ptn" ? 2 : 3;
    if (stage_rank(lck.stage) < need) {
        throw ContractError("--head " + head + " needs a checkpoint of stage '" +
                            (need == 1 ? "sbn" : need == 2 ? "ptn" : "joint") +
                            "' or later, got '" + lck.stage + "'");
    }

    const LoadedDataset data = read_dataset_dir(data_dir, cfg);
    if (data.test.empty()) throw ContractError("eval: empty test split");
    if (2 * data.test.front().truth.size() != lck.basis.mean.size()) {
        throw ContractError("eval: checkpoint basis landmark count does not match the dataset");
    }

    const LandmarkSet mean_shape = LandmarkSet::from_stacked(lck.basis.mean);
    std::vector<LandmarkSet> predictions, truths;
    std::vector<double> normalizers;
    for (const Sample& s : data.test) {
        truths.push_back(s.truth);
        normalizers.push_back(s.normalizer);
        if (predict_truth) {
            predictions.push_back(s.truth);
            continue;
        }
        ForwardTrace trace;
        const auto features = forward_features(lck.state.params, s.image, trace);
        if (head == "sbn") {
            predictions.push_back(forward_sbn(lck.state.params, features, lck.basis, trace));
        } else if (head == "ptn") {
            predictions.push_back(
                forward_ptn(lck.state.params, features, mean_shape, lck.grid, trace));
        } else {
            const LandmarkSet ys = forward_sbn(lck.state.params, features, lck.basis, trace);
            predictions.push_back(forward_ptn(lck.state.params, features, ys, lck.grid, trace));
        }
    }

    const PckReport report = pck(predictions, truths, normalizers, cfg.alphas);
    const double mne = mean_normalized_error(predictions, truths, normalizers);
    const std::string table = format_pck_table(report);
    std::cout << "head: " << head << "\n" << table;
    std::printf("mean normalized error: %.4f\n", mne);

    if (!out.empty()) {
        fs::create_directories(out);
        write_pck_csv((fs::path(out) / ("pck_" + head + ".csv")).string(), report);
        std::ofstream rep(fs::path(out) / ("report_" + head + ".txt"));
        if (!rep) throw IoError("cannot write report in " + out);
        rep << "head: " << head << "\n" << table;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "mean normalized error: %.6f\n", mne);
        rep << buf;
    }
    return 0;
}

int run_warp(const std::string& src_path, const std::string& dst_path,
             const std::string& query_path, const std::string& out_path, double gamma) {
    const LandmarkSet src = load_points_text(src_path);
    const LandmarkSet dst = load_points_text(dst_path);
    const LandmarkSet query = load_points_text(query_path);

    // Grid spans the source/target extent with a small pad.
    double lo_u = 1e300, hi_u = -1e300, lo_v = 1e300, hi_v = -1e300;
    for (const LandmarkSet* set : {&src, &dst}) {
        for (const Vec2& p : set->points) {
            lo_u = std::min(lo_u, p.u);
            hi_u = std::max(hi_u, p.u);
            lo_v = std::min(lo_v, p.v);
            hi_v = std::max(hi_v, p.v);
        }
    }
    const double pad = 0.05 * std::max({hi_u - lo_u, hi_v - lo_v, 1.0});
    ControlGrid grid = ControlGrid::regular(10, 10, hi_u - lo_u + 2 * pad, hi_v - lo_v + 2 * pad);
    for (Vec2& p : grid.points) {
        p.u += lo_u - pad;
        p.v += lo_v - pad;
    }

    const TpsParams warp = tps_fit_closed_form(src, dst, grid, gamma);
    save_points_text(out_path, tps_apply(warp, query));
    std::cout << "warped " << query.size() << " points to " << out_path << "\n";
    return 0;
}

int run_gradcheck(std::int64_t seed, const std::string& corrupt) {
    const std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : 7;
    const GradSuiteReport report = run_gradient_suite(s, 50, corrupt);
    for (const auto& block : report.blocks) {
        std::printf("%-12s worst relative error %.3e\n", block.name.c_str(), block.worst_rel);
    }
    const auto failures = report.failures(1e-4);
    if (!failures.empty()) {
        std::string names;
        for (const auto& f : failures) names += (names.empty() ? "" : ", ") + f;
        std::fprintf(stderr, "gradcheck FAILED: %s\n", names.c_str());
        return kExitContract;
    }
    std::printf("gradcheck passed: %d instances, worst %.3e\n", report.instances, report.worst());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep deformation network toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, resume, transform, head = "full";
    std::string stage, src_path, dst_path, query_path, out_path, corrupt;
    std::int64_t seed = -1;
    double gamma = 0.0;
    bool predict_truth = false;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    gen->add_option("--config", config_path, "config JSON path");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "seed override");

    auto* train = app.add_subcommand("train", "run one training stage");
    train->add_option("--config", config_path, "config JSON path");
    train->add_option("--stage", stage, "sbn | ptn | joint")
        ->required()
        ->check(CLI::IsMember({"sbn", "ptn", "joint"}));
    train->add_option("--transform", transform, "tps | affine")
        ->check(CLI::IsMember({"tps", "affine"}));
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--resume", resume, "checkpoint to resume or build on");
    train->add_option("--seed", seed, "seed override");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--config", config_path, "config JSON path");
    ev->add_option("--checkpoint", resume, "checkpoint path")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--head", head, "sbn | ptn | full")
        ->check(CLI::IsMember({"sbn", "ptn", "full"}));
    ev->add_option("--out", out_dir, "output directory");
    ev->add_option("--seed", seed, "seed override");
    ev->add_flag("--predict-truth", predict_truth)->group("");  // test hook

    auto* warp = app.add_subcommand("warp", "fit src->dst and warp query points");
    warp->add_option("--src", src_path, "source points file")->required();
    warp->add_option("--dst", dst_path, "target points file")->required();
    warp->add_option("--query", query_path, "points to warp")->required();
    warp->add_option("--out", out_path, "output points file")->required();
    warp->add_option("--gamma", gamma, "bending weight (0 interpolates)");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gc->add_option("--seed", seed, "suite seed");
    gc->add_option("--corrupt", corrupt, "perturb a block (negative control)")->group("");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_data(config_path, out_dir, seed);
        if (train->parsed()) {
            return run_train(config_path, stage, transform, data_dir, out_dir, resume, seed);
        }
        if (ev->parsed()) {
            return run_eval(config_path, resume, data_dir, head, out_dir, predict_truth, seed);
        }
        if (warp->parsed()) return run_warp(src_path, dst_path, query_path, out_path, gamma);
        if (gc->parsed()) return run_gradcheck(seed, corrupt);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return kExitConfig;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kExitIo;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return kExitDivergence;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "contract error: %s\n", e.what());
        return kExitContract;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "shape error: %s\n", e.what());
        return kExitContract;
    } catch (const DomainError& e) {
        std::fprintf(stderr, "domain error: %s\n", e.what());
        return kExitContract;
    } catch (const SingularSystemError& e) {
        std::fprintf(stderr, "singular system: %s\n", e.what());
        return kExitContract;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
