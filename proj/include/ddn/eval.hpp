// eval.hpp - localization metrics: PCK and mean normalized error.

#ifndef DDN_EVAL_HPP_
#define DDN_EVAL_HPP_

#include <string>
#include <vector>

#include "ddn/landmarks.hpp"
#include "ddn/matrix.hpp"

namespace ddn {

struct PckReport {
    std::vector<double> alphas;
    Matrix per_landmark;        // landmark x alpha correctness fractions
    std::vector<double> mean;   // per alpha, averaged over landmarks
    std::size_t sample_count = 0;
};

// Landmark i of sample j counts correct iff ||pred - truth||_2 <= alpha * D_j
// (boundary inclusive).
PckReport pck(const std::vector<LandmarkSet>& predictions, const std::vector<LandmarkSet>& truths,
              const std::vector<double>& normalizers, const std::vector<double>& alphas);

// 100 * mean over samples and landmarks of ||pred - truth||_2 / D_j.
double mean_normalized_error(const std::vector<LandmarkSet>& predictions,
                             const std::vector<LandmarkSet>& truths,
                             const std::vector<double>& normalizers);

// CSV rows landmark,alpha,fraction with a final mean row per alpha.
void write_pck_csv(const std::string& path, const PckReport& report);

std::string format_pck_table(const PckReport& report);

}  // namespace ddn

#endif  // DDN_EVAL_HPP_
