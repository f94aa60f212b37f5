// persist.hpp - bridges between in-memory state and on-disk artifacts:
// checkpoint blocks for network/basis/grid/optimizer, dataset directories,
// and loss-curve CSVs.

#ifndef DDN_PERSIST_HPP_
#define DDN_PERSIST_HPP_

#include <string>
#include <vector>

#include "ddn/checkpoint.hpp"
#include "ddn/config.hpp"
#include "ddn/dataset.hpp"
#include "ddn/network.hpp"
#include "ddn/shape_model.hpp"
#include "ddn/tps.hpp"
#include "ddn/trainer.hpp"

namespace ddn {

void write_network(Checkpoint& ck, const NetworkParams& params, const std::string& prefix = "");
NetworkParams read_network(const Checkpoint& ck, const std::string& prefix = "");

void write_basis(Checkpoint& ck, const ShapeBasis& basis);
ShapeBasis read_basis(const Checkpoint& ck);

void write_grid(Checkpoint& ck, const ControlGrid& grid);
ControlGrid read_grid(const Checkpoint& ck);

// Full training snapshot: parameters, velocity, stage bookkeeping.
void write_train_checkpoint(const std::string& path, const TrainState& state, Stage stage,
                            const ShapeBasis& basis, const ControlGrid& grid,
                            const RunConfig& cfg, bool affine_transform, bool complete);
struct LoadedCheckpoint {
    TrainState state;
    ShapeBasis basis;
    ControlGrid grid;
    std::string stage;
    bool affine_transform = false;
    bool complete = false;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
};
LoadedCheckpoint load_train_checkpoint(const std::string& path);

// Dataset directory: train/ and test/ splits with PGM images plus a
// delimited annotation table, and a manifest carrying the config hash.
void write_dataset_dir(const std::string& dir, const SyntheticData& data, const RunConfig& cfg);
struct LoadedDataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};
LoadedDataset read_dataset_dir(const std::string& dir, const RunConfig& cfg);

void write_curve_csv(const std::string& path, const std::vector<TrainCurvePoint>& curve);

}  // namespace ddn

#endif  // DDN_PERSIST_HPP_
