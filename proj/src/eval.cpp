#include "ddn/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ddn {

namespace {

void check_inputs(const std::vector<LandmarkSet>& predictions,
                  const std::vector<LandmarkSet>& truths,
                  const std::vector<double>& normalizers) {
    if (predictions.size() != truths.size() || predictions.size() != normalizers.size()) {
        throw ShapeError("eval: predictions/truths/normalizers length mismatch");
    }
    if (predictions.empty()) throw ShapeError("eval: empty input");
    const std::size_t n = predictions.front().size();
    for (std::size_t j = 0; j < predictions.size(); ++j) {
        if (predictions[j].size() != n || truths[j].size() != n) {
            throw ShapeError("eval: landmark count mismatch at sample " + std::to_string(j));
        }
        if (!(normalizers[j] > 0.0)) {
            throw DomainError("eval: normalizer must be > 0 at sample " + std::to_string(j));
        }
    }
}

}  // namespace

PckReport pck(const std::vector<LandmarkSet>& predictions, const std::vector<LandmarkSet>& truths,
              const std::vector<double>& normalizers, const std::vector<double>& alphas) {
    check_inputs(predictions, truths, normalizers);
    if (alphas.empty()) throw ShapeError("pck: no alpha thresholds");
    const std::size_t n = predictions.front().size();

    PckReport report;
    report.alphas = alphas;
    report.per_landmark = Matrix(n, alphas.size());
    report.mean.assign(alphas.size(), 0.0);
    report.sample_count = predictions.size();

    for (std::size_t j = 0; j < predictions.size(); ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const double err = dist(predictions[j][i], truths[j][i]);
            for (std::size_t a = 0; a < alphas.size(); ++a) {
                if (err <= alphas[a] * normalizers[j]) report.per_landmark(i, a) += 1.0;
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < alphas.size(); ++a) {
            report.per_landmark(i, a) /= static_cast<double>(predictions.size());
            report.mean[a] += report.per_landmark(i, a);
        }
    }
    for (double& m : report.mean) m /= static_cast<double>(n);
    return report;
}

double mean_normalized_error(const std::vector<LandmarkSet>& predictions,
                             const std::vector<LandmarkSet>& truths,
                             const std::vector<double>& normalizers) {
    check_inputs(predictions, truths, normalizers);
    const std::size_t n = predictions.front().size();
    double sum = 0.0;
    for (std::size_t j = 0; j < predictions.size(); ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            sum += dist(predictions[j][i], truths[j][i]) / normalizers[j];
        }
    }
    return 100.0 * sum / static_cast<double>(predictions.size() * n);
}

void write_pck_csv(const std::string& path, const PckReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "landmark,alpha,fraction\n";
    char buf[96];
    for (std::size_t i = 0; i < report.per_landmark.rows(); ++i) {
        for (std::size_t a = 0; a < report.alphas.size(); ++a) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i, report.alphas[a],
                          report.per_landmark(i, a));
            out << buf;
        }
    }
    for (std::size_t a = 0; a < report.alphas.size(); ++a) {
        std::snprintf(buf, sizeof(buf), "mean,%.17g,%.17g\n", report.alphas[a], report.mean[a]);
        out << buf;
    }
    if (!out) throw IoError("write failed for " + path);
}

std::string format_pck_table(const PckReport& report) {
    std::ostringstream os;
    char buf[64];
    os << "landmark";
    for (double a : report.alphas) {
        std::snprintf(buf, sizeof(buf), "  PCK@%.3g", a);
        os << buf;
    }
    os << "\n";
    for (std::size_t i = 0; i < report.per_landmark.rows(); ++i) {
        std::snprintf(buf, sizeof(buf), "%8zu", i);
        os << buf;
        for (std::size_t a = 0; a < report.alphas.size(); ++a) {
            std::snprintf(buf, sizeof(buf), "  %7.1f", 100.0 * report.per_landmark(i, a));
            os << buf;
        }
        os << "\n";
    }
    os << "    mean";
    for (std::size_t a = 0; a < report.alphas.size(); ++a) {
        std::snprintf(buf, sizeof(buf), "  %7.1f", 100.0 * report.mean[a]);
        os << buf;
    }
    os << "\n";
    return os.str();
}

}  // namespace ddn
