#include "ddn/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace ddn {

namespace {

using nlohmann::json;

// Strict section reader: every key consumed explicitly, leftovers rejected.
class SectionReader {
public:
    SectionReader(const json& j, std::string name) : name_(std::move(name)) {
        if (!j.is_object()) throw ConfigError("config: section '" + name_ + "' must be an object");
        obj_ = &j;
    }

    template <typename T>
    void read(const char* key, T& out) {
        auto it = obj_->find(key);
        if (it == obj_->end()) return;
        seen_.insert(key);
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for " + name_ + "." + key);
        }
    }

    const json* sub(const char* key) {
        auto it = obj_->find(key);
        if (it == obj_->end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    void finish() const {
        for (auto it = obj_->begin(); it != obj_->end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError("config: unknown key '" + name_ + "." + it.key() + "'");
            }
        }
    }

private:
    const json* obj_;
    std::string name_;
    std::set<std::string> seen_;
};

void parse_network(const json& j, NetworkConfig& out) {
    SectionReader r(j, "network");
    r.read("input_size", out.input_size);
    r.read("in_channels", out.in_channels);
    r.read("hidden_width", out.hidden_width);
    if (const json* stages = r.sub("stages")) {
        if (!stages->is_array()) throw ConfigError("config: network.stages must be an array");
        out.stages.clear();
        for (const auto& s : *stages) {
            if (!s.is_array() || s.size() != 3) {
                throw ConfigError("config: each network stage is [channels, kernel, stride]");
            }
            out.stages.push_back({s[0].get<int>(), s[1].get<int>(), s[2].get<int>()});
        }
    }
    r.finish();
}

void parse_augment(const json& j, AugmentConfig& out) {
    SectionReader r(j, "trainer.augment");
    r.read("crop_jitter", out.crop_jitter);
    r.read("rotation_deg", out.rotation_deg);
    r.read("flip_prob", out.flip_prob);
    r.read("mirror_permutation", out.mirror_permutation);
    r.finish();
}

void parse_trainer(const json& j, TrainerConfig& out) {
    SectionReader r(j, "trainer");
    r.read("momentum", out.momentum);
    r.read("weight_decay", out.weight_decay);
    r.read("lr_sbn", out.lr_sbn);
    r.read("lr_ptn", out.lr_ptn);
    r.read("lr_joint", out.lr_joint);
    r.read("batch_size", out.batch_size);
    r.read("epochs_per_phase", out.epochs_per_phase);
    r.read("grad_clip", out.grad_clip);
    r.read("plateau_enabled", out.plateau_enabled);
    r.read("plateau_rel_improve", out.plateau_rel_improve);
    r.read("plateau_window", out.plateau_window);
    r.read("threads", out.threads);
    if (const json* aug = r.sub("augment")) parse_augment(*aug, out.augment);
    r.finish();
}

void parse_tps(const json& j, RunConfig& cfg) {
    SectionReader r(j, "tps");
    r.read("grid_rows", cfg.grid_rows);
    r.read("grid_cols", cfg.grid_cols);
    r.read("gamma", cfg.trainer.tps.gamma);
    r.read("varphi", cfg.trainer.tps.varphi);
    r.read("psi", cfg.trainer.tps.psi);
    r.finish();
}

void parse_shape(const json& j, RunConfig& cfg) {
    SectionReader r(j, "shape");
    r.read("energy_fraction", cfg.energy_fraction);
    r.read("lambda", cfg.trainer.lambda);
    r.finish();
}

void parse_dataset(const json& j, SyntheticSpec& out, bool& seed_set, bool& size_set) {
    SectionReader r(j, "dataset");
    r.read("landmark_count", out.landmark_count);
    r.read("basis_rank", out.basis_rank);
    r.read("mode_amplitudes", out.mode_amplitudes);
    r.read("tps_jitter", out.tps_jitter);
    r.read("blob_sigma", out.blob_sigma);
    r.read("segment_sigma", out.segment_sigma);
    if (const json* v = r.sub("image_size")) {
        out.image_size = v->get<int>();
        size_set = true;
    }
    r.read("train_count", out.train_count);
    r.read("test_count", out.test_count);
    if (const json* v = r.sub("seed")) {
        out.seed = v->get<std::uint64_t>();
        seed_set = true;
    }
    if (const json* v = r.sub("normalizer")) {
        const std::string kind = v->get<std::string>();
        if (kind == "bbox") {
            out.normalizer = NormalizerKind::BboxMaxSide;
        } else if (kind == "pair") {
            out.normalizer = NormalizerKind::LandmarkPair;
        } else {
            throw ConfigError("config: dataset.normalizer must be 'bbox' or 'pair'");
        }
    }
    if (const json* v = r.sub("normalizer_pair")) {
        if (!v->is_array() || v->size() != 2) {
            throw ConfigError("config: dataset.normalizer_pair must be [a, b]");
        }
        out.normalizer_a = (*v)[0].get<int>();
        out.normalizer_b = (*v)[1].get<int>();
    }
    r.finish();
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    RunConfig cfg;
    SectionReader r(j, "");
    bool dataset_seed_set = false;
    bool input_size_set = false;
    bool dataset_size_set = false;
    r.read("seed", cfg.seed);
    if (const json* s = r.sub("network")) {
        input_size_set = s->contains("input_size");
        parse_network(*s, cfg.network);
    }
    if (const json* s = r.sub("trainer")) parse_trainer(*s, cfg.trainer);
    if (const json* s = r.sub("tps")) parse_tps(*s, cfg);
    if (const json* s = r.sub("shape")) parse_shape(*s, cfg);
    if (const json* s = r.sub("dataset")) {
        parse_dataset(*s, cfg.dataset, dataset_seed_set, dataset_size_set);
    }
    if (const json* s = r.sub("eval")) {
        SectionReader er(*s, "eval");
        er.read("alphas", cfg.alphas);
        er.finish();
    }
    r.finish();

    if (!dataset_seed_set) cfg.dataset.seed = cfg.seed;
    if (!input_size_set && dataset_size_set) cfg.network.input_size = cfg.dataset.image_size;
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

void RunConfig::validate() const {
    dataset.validate();
    if (!(energy_fraction > 0.0) || energy_fraction > 1.0) {
        throw ConfigError("config: shape.energy_fraction must be in (0, 1]");
    }
    if (trainer.lambda < 0.0) throw ConfigError("config: shape.lambda must be >= 0");
    if (trainer.momentum < 0.0 || trainer.momentum >= 1.0) {
        throw ConfigError("config: trainer.momentum must be in [0, 1)");
    }
    if (trainer.weight_decay < 0.0) throw ConfigError("config: trainer.weight_decay must be >= 0");
    if (trainer.grad_clip < 0.0) throw ConfigError("config: trainer.grad_clip must be >= 0");
    if (trainer.batch_size < 1) throw ConfigError("config: trainer.batch_size must be >= 1");
    if (trainer.epochs_per_phase < 1) {
        throw ConfigError("config: trainer.epochs_per_phase must be >= 1");
    }
    if (trainer.tps.gamma < 0.0 || trainer.tps.varphi < 0.0 || trainer.tps.psi < 0.0) {
        throw ConfigError("config: tps weights must be >= 0");
    }
    if (grid_rows < 2 || grid_cols < 2) throw ConfigError("config: tps grid must be at least 2x2");
    if (network.input_size != dataset.image_size) {
        throw ConfigError("config: network.input_size must match dataset.image_size");
    }
    if (alphas.empty()) throw ConfigError("config: eval.alphas must be nonempty");
    for (double a : alphas) {
        if (!(a > 0.0)) throw ConfigError("config: eval.alphas must be > 0");
    }
    if (trainer.augment.flip_prob > 0.0 &&
        static_cast<int>(trainer.augment.mirror_permutation.size()) != dataset.landmark_count) {
        throw ConfigError("config: flipping needs a mirror permutation covering all landmarks");
    }
}

std::string RunConfig::resolved_json() const {
    json j;
    j["seed"] = seed;
    j["network"]["input_size"] = network.input_size;
    j["network"]["in_channels"] = network.in_channels;
    j["network"]["hidden_width"] = network.hidden_width;
    json stages = json::array();
    for (const auto& s : network.stages) {
        stages.push_back(json::array({s.out_channels, s.kernel, s.stride}));
    }
    j["network"]["stages"] = stages;
    j["trainer"]["momentum"] = trainer.momentum;
    j["trainer"]["weight_decay"] = trainer.weight_decay;
    j["trainer"]["lr_sbn"] = trainer.lr_sbn;
    j["trainer"]["lr_ptn"] = trainer.lr_ptn;
    j["trainer"]["lr_joint"] = trainer.lr_joint;
    j["trainer"]["batch_size"] = trainer.batch_size;
    j["trainer"]["epochs_per_phase"] = trainer.epochs_per_phase;
    j["trainer"]["grad_clip"] = trainer.grad_clip;
    j["trainer"]["plateau_enabled"] = trainer.plateau_enabled;
    j["trainer"]["plateau_rel_improve"] = trainer.plateau_rel_improve;
    j["trainer"]["plateau_window"] = trainer.plateau_window;
    j["trainer"]["threads"] = trainer.threads;
    j["trainer"]["augment"]["crop_jitter"] = trainer.augment.crop_jitter;
    j["trainer"]["augment"]["rotation_deg"] = trainer.augment.rotation_deg;
    j["trainer"]["augment"]["flip_prob"] = trainer.augment.flip_prob;
    j["trainer"]["augment"]["mirror_permutation"] = trainer.augment.mirror_permutation;
    j["tps"]["grid_rows"] = grid_rows;
    j["tps"]["grid_cols"] = grid_cols;
    j["tps"]["gamma"] = trainer.tps.gamma;
    j["tps"]["varphi"] = trainer.tps.varphi;
    j["tps"]["psi"] = trainer.tps.psi;
    j["shape"]["energy_fraction"] = energy_fraction;
    j["shape"]["lambda"] = trainer.lambda;
    j["dataset"]["landmark_count"] = dataset.landmark_count;
    j["dataset"]["basis_rank"] = dataset.basis_rank;
    j["dataset"]["mode_amplitudes"] = dataset.mode_amplitudes;
    j["dataset"]["tps_jitter"] = dataset.tps_jitter;
    j["dataset"]["blob_sigma"] = dataset.blob_sigma;
    j["dataset"]["segment_sigma"] = dataset.segment_sigma;
    j["dataset"]["image_size"] = dataset.image_size;
    j["dataset"]["train_count"] = dataset.train_count;
    j["dataset"]["test_count"] = dataset.test_count;
    j["dataset"]["seed"] = dataset.seed;
    j["dataset"]["normalizer"] =
        dataset.normalizer == NormalizerKind::BboxMaxSide ? "bbox" : "pair";
    j["dataset"]["normalizer_pair"] = json::array({dataset.normalizer_a, dataset.normalizer_b});
    j["eval"]["alphas"] = alphas;
    return j.dump(2);
}

std::uint64_t RunConfig::hash() const {
    const std::string text = resolved_json();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

ControlGrid RunConfig::make_grid() const {
    return ControlGrid::regular(grid_rows, grid_cols, dataset.image_size, dataset.image_size);
}

}  // namespace ddn
