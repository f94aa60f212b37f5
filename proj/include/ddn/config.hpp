// config.hpp - run configuration: JSON document with sections mirroring the
// module configs. Unknown keys are rejected; every field has a documented
// default.

#ifndef DDN_CONFIG_HPP_
#define DDN_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "ddn/dataset.hpp"
#include "ddn/network.hpp"
#include "ddn/trainer.hpp"

namespace ddn {

struct RunConfig {
    std::uint64_t seed = 7;
    double energy_fraction = 0.99;  // shape basis retention rule
    NetworkConfig network;
    TrainerConfig trainer;
    int grid_rows = 10;
    int grid_cols = 10;
    SyntheticSpec dataset;
    std::vector<double> alphas = {0.05, 0.10};

    // Parse a JSON document; missing keys take defaults, unknown keys throw
    // ConfigError. The dataset seed and network input size follow the
    // top-level seed / dataset image_size unless set explicitly.
    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_file(const std::string& path);

    // Canonical dump of the fully resolved configuration (sorted keys).
    std::string resolved_json() const;

    // FNV-1a over the resolved dump.
    std::uint64_t hash() const;

    ControlGrid make_grid() const;
    void validate() const;
};

}  // namespace ddn

#endif  // DDN_CONFIG_HPP_
