#include "ddn/persist.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace ddn {

namespace fs = std::filesystem;

void write_network(Checkpoint& ck, const NetworkParams& params, const std::string& prefix) {
    ck.set_meta(prefix + "net.input_size", std::to_string(params.input_size));
    ck.set_meta(prefix + "net.in_channels", std::to_string(params.in_channels));
    ck.set_meta(prefix + "net.hidden_width", std::to_string(params.hidden_width));
    ck.set_meta(prefix + "net.affine_only", params.ptn_affine_only ? "1" : "0");
    ck.set_meta(prefix + "net.conv_stages", std::to_string(params.conv.size()));
    for (std::size_t i = 0; i < params.conv.size(); ++i) {
        ck.set_meta(prefix + "net.conv" + std::to_string(i) + ".stride",
                    std::to_string(params.conv[i].stride));
    }
    for (const auto& view : param_views(const_cast<NetworkParams&>(params))) {
        ck.add(prefix + view.name, view.shape, *view.values);
    }
}

NetworkParams read_network(const Checkpoint& ck, const std::string& prefix) {
    NetworkParams p;
    p.input_size = static_cast<int>(ck.meta_u64(prefix + "net.input_size"));
    p.in_channels = static_cast<int>(ck.meta_u64(prefix + "net.in_channels"));
    p.hidden_width = static_cast<int>(ck.meta_u64(prefix + "net.hidden_width"));
    p.ptn_affine_only = ck.meta(prefix + "net.affine_only") == "1";
    const std::size_t stages = ck.meta_u64(prefix + "net.conv_stages");
    for (std::size_t i = 0; i < stages; ++i) {
        const auto& w = ck.get(prefix + "conv" + std::to_string(i) + ".w");
        const auto& b = ck.get(prefix + "conv" + std::to_string(i) + ".b");
        if (w.shape.size() != 4) throw ContractError("checkpoint: bad conv weight shape");
        ConvLayerParams layer;
        layer.out_channels = static_cast<int>(w.shape[0]);
        layer.in_channels = static_cast<int>(w.shape[1]);
        layer.kernel = static_cast<int>(w.shape[2]);
        layer.stride = static_cast<int>(
            ck.meta_u64(prefix + "net.conv" + std::to_string(i) + ".stride"));
        layer.w = w.data;
        layer.b = b.data;
        p.conv.push_back(std::move(layer));
    }
    auto read_head = [&](const std::string& name) {
        HeadParams h;
        const auto& w1 = ck.get(prefix + name + ".fc1.w");
        h.w1 = Matrix(w1.shape[0], w1.shape[1]);
        h.w1.data() = w1.data;
        h.b1 = ck.get(prefix + name + ".fc1.b").data;
        const auto& w2 = ck.get(prefix + name + ".fc2.w");
        h.w2 = Matrix(w2.shape[0], w2.shape[1]);
        h.w2.data() = w2.data;
        h.b2 = ck.get(prefix + name + ".fc2.b").data;
        return h;
    };
    p.sbn = read_head("sbn");
    p.ptn = read_head("ptn");
    return p;
}

void write_basis(Checkpoint& ck, const ShapeBasis& basis) {
    ck.add("basis.mean", {basis.mean.size()}, basis.mean);
    ck.add("basis.q", {basis.basis.rows(), basis.basis.cols()}, basis.basis.data());
    ck.add("basis.eigenvalues", {basis.eigenvalues.size()}, basis.eigenvalues);
    ck.add("basis.energy_fraction", {1}, {basis.energy_fraction});
}

ShapeBasis read_basis(const Checkpoint& ck) {
    ShapeBasis basis;
    basis.mean = ck.get("basis.mean").data;
    const auto& q = ck.get("basis.q");
    basis.basis = Matrix(q.shape[0], q.shape[1]);
    basis.basis.data() = q.data;
    basis.eigenvalues = ck.get("basis.eigenvalues").data;
    basis.energy_fraction = ck.get("basis.energy_fraction").data[0];
    return basis;
}

void write_grid(Checkpoint& ck, const ControlGrid& grid) {
    std::vector<double> flat;
    flat.reserve(2 * grid.count());
    for (const Vec2& p : grid.points) {
        flat.push_back(p.u);
        flat.push_back(p.v);
    }
    ck.add("grid.points", {grid.count(), 2}, flat);
    ck.set_meta("grid.rows", std::to_string(grid.rows));
    ck.set_meta("grid.cols", std::to_string(grid.cols));
}

ControlGrid read_grid(const Checkpoint& ck) {
    ControlGrid grid;
    grid.rows = static_cast<int>(ck.meta_u64("grid.rows"));
    grid.cols = static_cast<int>(ck.meta_u64("grid.cols"));
    const auto& pts = ck.get("grid.points");
    for (std::size_t i = 0; i + 1 < pts.data.size(); i += 2) {
        grid.points.push_back({pts.data[i], pts.data[i + 1]});
    }
    return grid;
}

void write_train_checkpoint(const std::string& path, const TrainState& state, Stage stage,
                            const ShapeBasis& basis, const ControlGrid& grid,
                            const RunConfig& cfg, bool affine_transform, bool complete) {
    Checkpoint ck;
    ck.set_meta("stage", to_string(stage));
    ck.set_meta("transform", affine_transform ? "affine" : "tps");
    ck.set_meta("complete", complete ? "1" : "0");
    ck.set_meta_u64("epochs_done", static_cast<std::uint64_t>(state.epochs_done));
    ck.set_meta("phase2_start", std::to_string(state.phase2_start));
    ck.set_meta_u64("seed", cfg.seed);
    ck.set_meta_u64("config_hash", cfg.hash());
    write_network(ck, state.params);
    write_network(ck, state.velocity, "vel.");
    write_basis(ck, basis);
    write_grid(ck, grid);
    ck.save(path);
}

LoadedCheckpoint load_train_checkpoint(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    LoadedCheckpoint out;
    out.state.params = read_network(ck);
    out.state.velocity = read_network(ck, "vel.");
    out.state.epochs_done = static_cast<int>(ck.meta_u64("epochs_done"));
    out.state.phase2_start = std::stoi(ck.meta("phase2_start"));
    out.basis = read_basis(ck);
    out.grid = read_grid(ck);
    out.stage = ck.meta("stage");
    out.affine_transform = ck.meta("transform") == "affine";
    out.complete = ck.meta("complete") == "1";
    out.config_hash = ck.meta_u64("config_hash");
    out.seed = ck.meta_u64("seed");
    return out;
}

namespace {

void write_split(const fs::path& dir, const std::vector<Sample>& samples) {
    fs::create_directories(dir);
    std::vector<AnnotationRecord> records;
    char name[32];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%05zu.pgm", i);
        save_pgm((dir / name).string(), samples[i].image);
        records.push_back({name, samples[i].truth});
    }
    save_annotation_table((dir / "annotations.csv").string(), records);
}

std::vector<Sample> read_split(const fs::path& dir, const RunConfig& cfg) {
    const auto records =
        load_annotations((dir / "annotations.csv").string(), AnnotationFormat::DelimitedTable);
    std::vector<Sample> samples;
    samples.reserve(records.size());
    for (const auto& rec : records) {
        Sample s;
        s.image = load_pgm((dir / rec.image_path).string());
        s.truth = rec.landmarks;
        s.normalizer = sample_normalizer(s.truth, cfg.dataset);
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

void write_dataset_dir(const std::string& dir, const SyntheticData& data, const RunConfig& cfg) {
    const fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    write_split(root / "train", data.train);
    write_split(root / "test", data.test);

    nlohmann::json manifest;
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(cfg.hash()));
    manifest["config_hash"] = hash;
    manifest["seed"] = cfg.dataset.seed;
    manifest["train_count"] = data.train.size();
    manifest["test_count"] = data.test.size();
    manifest["image_size"] = cfg.dataset.image_size;
    manifest["landmark_count"] = cfg.dataset.landmark_count;
    std::ofstream out(root / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

LoadedDataset read_dataset_dir(const std::string& dir, const RunConfig& cfg) {
    const fs::path root(dir);
    if (!fs::exists(root / "manifest.json")) {
        throw IoError("no dataset manifest in " + dir + " (run gen-data first)");
    }
    LoadedDataset out;
    out.train = read_split(root / "train", cfg);
    out.test = read_split(root / "test", cfg);
    return out;
}

void write_curve_csv(const std::string& path, const std::vector<TrainCurvePoint>& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "epoch,phase,train_loss,heldout_loss\n";
    char buf[128];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", p.epoch, p.phase, p.train_loss,
                      p.heldout_loss);
        out << buf;
    }
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace ddn
