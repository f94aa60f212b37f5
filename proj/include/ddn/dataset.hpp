// dataset.hpp - synthetic deformable-shape data and annotation file I/O.

#ifndef DDN_DATASET_HPP_
#define DDN_DATASET_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ddn/image.hpp"
#include "ddn/landmarks.hpp"

namespace ddn {

enum class NormalizerKind {
    BboxMaxSide,   // max(truth bounding-box height, width)
    LandmarkPair,  // distance between two designated landmarks
};

struct SyntheticSpec {
    int landmark_count = 12;
    int basis_rank = 3;
    std::vector<double> mode_amplitudes = {18.0, 13.0, 9.0};
    double tps_jitter = 1.0;    // pixels of control-anchor displacement
    double blob_sigma = 1.5;    // landmark splat width
    double segment_sigma = 0.8; // connecting-segment width
    int image_size = 64;
    int train_count = 800;
    int test_count = 200;
    std::uint64_t seed = 7;
    NormalizerKind normalizer = NormalizerKind::LandmarkPair;
    int normalizer_a = 0;
    int normalizer_b = 1;

    void validate() const;
};

struct Sample {
    Image image;
    LandmarkSet truth;
    double normalizer = 1.0;
};

struct SyntheticData {
    std::vector<Sample> train;
    std::vector<Sample> test;
    LandmarkSet template_shape;
    std::vector<std::vector<double>> modes;  // orthonormal stacked directions
};

// Deterministic function of the spec: template + weighted modes + a small TPS
// warp, rendered as Gaussian blobs joined by a polyline. Train and test draw
// from disjoint derived seeds.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

double sample_normalizer(const LandmarkSet& truth, const SyntheticSpec& spec);

// Render the appearance for a given landmark configuration (pure function).
Image render_shape(const LandmarkSet& truth, const SyntheticSpec& spec);

enum class AnnotationFormat { PointsText, DelimitedTable };

struct AnnotationRecord {
    std::string image_path;
    LandmarkSet landmarks;
};

// points-text holds a single landmark set (empty image path); the delimited
// table holds one record per line: image_path,u1,v1,...,un,vn.
std::vector<AnnotationRecord> load_annotations(const std::string& path, AnnotationFormat format);
void save_annotation_table(const std::string& path, const std::vector<AnnotationRecord>& records);

LandmarkSet load_points_text(const std::string& path);
void save_points_text(const std::string& path, const LandmarkSet& points);

// 8-bit single-channel PGM (P5).
void save_pgm(const std::string& path, const Image& image);
Image load_pgm(const std::string& path);

struct CropBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
};

// Bilinear crop/resize; landmarks and the normalizer follow the same scale
// (the normalizer uses the horizontal factor; PCK is preserved exactly for
// aspect-preserving crops).
Sample crop_and_resize(const Sample& sample, const CropBox& box, int target_w, int target_h);

}  // namespace ddn

#endif  // DDN_DATASET_HPP_
