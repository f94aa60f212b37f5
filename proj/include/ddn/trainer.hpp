// trainer.hpp - staged optimization: SGD with momentum and weight decay,
// landmark-consistent augmentation, and the three training stages.

#ifndef DDN_TRAINER_HPP_
#define DDN_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ddn/dataset.hpp"
#include "ddn/network.hpp"
#include "ddn/rng.hpp"
#include "ddn/shape_model.hpp"
#include "ddn/tps.hpp"

namespace ddn {

enum class Stage { SbnPretrain, PtnPretrain, Joint };
const char* to_string(Stage s);

struct OptimizerState {
    double learning_rate = 1e-2;
    double momentum = 0.9;
    double weight_decay = 0.004;
    NetworkParams velocity;
};

struct FreezeFlags {
    bool conv = false;
    bool sbn_head = false;
    bool ptn_head = false;

    bool frozen(ParamGroup g) const {
        switch (g) {
            case ParamGroup::Conv: return conv;
            case ParamGroup::SbnHead: return sbn_head;
            case ParamGroup::PtnHead: return ptn_head;
        }
        return false;
    }
};

// v <- mu v - lr (g + wd theta); theta <- theta + v. Frozen groups are left
// untouched (values and velocity). Throws DivergenceError on non-finite
// gradients, naming the parameter group.
void sgd_step(OptimizerState& state, NetworkParams& params, const NetworkParams& grads,
              const FreezeFlags& freeze = {});

struct AugmentConfig {
    double crop_jitter = 0.0;    // max |translation| in pixels
    double rotation_deg = 0.0;   // max |rotation| about the frame center
    double flip_prob = 0.0;
    std::vector<int> mirror_permutation;  // required when flip_prob > 0
};

// Same geometric transform applied to pixels and landmarks; a flip also
// applies the mirror permutation. Transforms that push a landmark out of
// frame are redrawn a bounded number of times; nullopt signals skip-sample.
std::optional<std::pair<Image, LandmarkSet>> augment_sample(const AugmentConfig& config,
                                                            const Image& image,
                                                            const LandmarkSet& landmarks,
                                                            Rng& rng);

struct TrainerConfig {
    double momentum = 0.9;
    double weight_decay = 0.004;
    double lr_sbn = 1e-2;    // SBN pre-training
    double lr_ptn = 1e-3;    // PTN pre-training (warp-loss scale)
    double lr_joint = 1e-3;  // joint stage
    int batch_size = 16;
    int epochs_per_phase = 10;
    double grad_clip = 10.0;  // global-norm cap on the batch gradient; 0 disables
    bool plateau_enabled = false;
    double plateau_rel_improve = 1e-3;
    int plateau_window = 3;
    double lambda = 0.1;  // coefficient penalty of the SBN loss
    TpsLossWeights tps;
    AugmentConfig augment;
    int threads = 1;
};

struct TrainCurvePoint {
    int epoch = 0;
    int phase = 1;
    double train_loss = 0.0;
    double heldout_loss = 0.0;
};

// Everything a resumed run needs, beyond the dataset and config.
struct TrainState {
    NetworkParams params;
    NetworkParams velocity;
    int epochs_done = 0;
    int phase2_start = -1;  // epoch index where phase 2 began; -1 if not yet
};

struct StageResult {
    TrainState state;
    std::vector<TrainCurvePoint> curve;
};

// Invoked after every epoch with the up-to-date state (periodic checkpoints,
// mid-run inspection).
using EpochCallback = std::function<void(const TrainState&, const TrainCurvePoint&)>;

// Per-sample control-point targets for the Eq.-style regularized warp loss.
std::vector<LandmarkSet> synthesize_targets(const std::vector<Sample>& samples,
                                            const LandmarkSet& mean_shape,
                                            const ControlGrid& grid, int threads);

// Phase 1 updates the SBN head only; phase 2 also updates the conv stack.
StageResult pretrain_sbn(const std::vector<Sample>& train, const std::vector<Sample>& heldout,
                         const ShapeBasis& basis, const TrainerConfig& cfg, std::uint64_t seed,
                         TrainState init, const EpochCallback& on_epoch = {});

// PTN trained with the mean shape as warp input; phase 1 head-only.
StageResult pretrain_ptn(const std::vector<Sample>& train, const std::vector<Sample>& heldout,
                         const ShapeBasis& basis, const ControlGrid& grid,
                         const std::vector<LandmarkSet>& train_targets,
                         const std::vector<LandmarkSet>& heldout_targets,
                         const TrainerConfig& cfg, std::uint64_t seed, TrainState init,
                         const EpochCallback& on_epoch = {});

// Joint cascade training; phase 1 updates the PTN head with SBN and conv
// fixed, phase 2 updates everything.
StageResult train_joint(const std::vector<Sample>& train, const std::vector<Sample>& heldout,
                        const ShapeBasis& basis, const ControlGrid& grid,
                        const std::vector<LandmarkSet>& train_targets,
                        const std::vector<LandmarkSet>& heldout_targets, const TrainerConfig& cfg,
                        std::uint64_t seed, TrainState init,
                        const EpochCallback& on_epoch = {});

}  // namespace ddn

#endif  // DDN_TRAINER_HPP_
