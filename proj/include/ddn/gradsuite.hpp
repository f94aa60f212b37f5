// gradsuite.hpp - the finite-difference verification suite covering the
// coefficient-loss gradient, every warp-loss block (including the
// source-point path), and the full network backward pass.

#ifndef DDN_GRADSUITE_HPP_
#define DDN_GRADSUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace ddn {

struct GradSuiteReport {
    struct Block {
        std::string name;
        double worst_rel = 0.0;
    };
    std::vector<Block> blocks;
    int instances = 0;

    double worst() const;
    // Blocks above tolerance, most severe first.
    std::vector<std::string> failures(double tol) const;
};

// Runs `instances` seeded random instances through every gradient block and
// records the worst relative disagreement with central finite differences
// (eps = 1e-5). `corrupt_block`, when nonempty, perturbs that block's
// analytic gradient (negative-control hook for tests).
GradSuiteReport run_gradient_suite(std::uint64_t seed, int instances,
                                   const std::string& corrupt_block = "");

}  // namespace ddn

#endif  // DDN_GRADSUITE_HPP_
