// network.hpp - the learnable cascade: strided conv feature extractor, the
// shape-basis head, the point-transformer head, and the full backward pass.

#ifndef DDN_NETWORK_HPP_
#define DDN_NETWORK_HPP_

#include <string>
#include <vector>

#include "ddn/image.hpp"
#include "ddn/matrix.hpp"
#include "ddn/rng.hpp"
#include "ddn/shape_model.hpp"
#include "ddn/tps.hpp"

namespace ddn {

struct ConvStageSpec {
    int out_channels = 0;
    int kernel = 3;
    int stride = 2;
};

struct NetworkConfig {
    int input_size = 64;
    int in_channels = 1;
    std::vector<ConvStageSpec> stages{{8, 3, 2}, {16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
    int hidden_width = 128;
};

struct ConvLayerParams {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    std::vector<double> w;  // (out, in, ky, kx)
    std::vector<double> b;  // (out)
};

struct HeadParams {
    Matrix w1;               // hidden x in
    std::vector<double> b1;  // hidden
    Matrix w2;               // out x hidden
    std::vector<double> b2;  // out
};

// All learnable weights. The PTN head emits offsets from the identity warp:
// the first 6 outputs perturb the 2x3 affine block (row-major), the remaining
// 2m perturb the coefficient block (row-major); affine-only nets emit just 6.
// Offsets are rescaled (see ptn_linear_scale / ptn_coeff_scale) so a unit
// output moves warped points by roughly one pixel regardless of slot.
struct NetworkParams {
    int input_size = 0;
    int in_channels = 1;
    int hidden_width = 0;
    bool ptn_affine_only = false;
    std::vector<ConvLayerParams> conv;
    HeadParams sbn;
    HeadParams ptn;

    std::size_t feature_length() const;
    std::size_t sbn_rank() const { return sbn.w2.rows(); }
};

enum class ParamGroup { Conv, SbnHead, PtnHead };
const char* to_string(ParamGroup g);

struct ParamView {
    std::string name;
    ParamGroup group;
    std::vector<double>* values;
    std::vector<std::size_t> shape;
};

// Stable, ordered list of every parameter array (used by the optimizer,
// checkpointing, and gradient checks).
std::vector<ParamView> param_views(NetworkParams& p);
std::vector<ParamView> param_views(const NetworkParams& p);

// Fresh parameters: conv and first head layers drawn uniform scaled by
// fan-in, second head layers zero (so the SBN starts at the mean shape and
// the PTN starts at the identity warp).
NetworkParams init_network(const NetworkConfig& cfg, std::size_t basis_rank,
                           std::size_t grid_count, bool affine_only, Rng& rng);

NetworkParams zeros_like(const NetworkParams& p);

// Per-layer activation caches for one input; consumed by one backward pass.
struct ConvTrace {
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;
    std::vector<double> input;
    std::vector<double> pre;  // pre-activation
};

struct ForwardTrace {
    std::vector<ConvTrace> conv;
    std::vector<double> features;
    std::vector<double> sbn_h_pre, sbn_h;
    BasisCoeffs xs;
    LandmarkSet ys;
    std::vector<double> ptn_h_pre, ptn_h, ptn_out;
    TpsParams warp;
    LandmarkSet yp;
    bool has_features = false, has_sbn = false, has_ptn = false;
    bool consumed = false;
};

// Conv stages with rectifier, flattened channel-major.
std::vector<double> forward_features(const NetworkParams& params, const Image& image,
                                     ForwardTrace& trace);

// x_s = head(features); y_s = decode_shape(basis, x_s).
LandmarkSet forward_sbn(const NetworkParams& params, const std::vector<double>& features,
                        const ShapeBasis& basis, ForwardTrace& trace);

// (D, U) = identity warp + scaled head offsets; y_p = tps_apply({D, U}, y_s).
LandmarkSet forward_ptn(const NetworkParams& params, const std::vector<double>& features,
                        const LandmarkSet& ys, const ControlGrid& grid, ForwardTrace& trace);

// Offset scale of the linear 2x2 affine slots (the translation slots are
// unscaled) and of the TPS coefficient slots.
double ptn_linear_scale(const NetworkParams& params);
double ptn_coeff_scale(const NetworkParams& params);

// Upstream loss gradients; empty members are treated as zero. grad_ys is the
// stacked 2n gradient at the SBN output; it flows into the SBN head as
// Q^T grad_ys and therefore needs the basis.
struct UpstreamGrads {
    Matrix d;                     // 2x3
    Matrix u;                     // 2xm
    std::vector<double> ys;       // 2n
    std::vector<double> xs;       // k
};

// Gradients for every weight; the trace is consumed.
NetworkParams backward(const NetworkParams& params, ForwardTrace& trace,
                       const UpstreamGrads& upstream, const ShapeBasis* basis);

}  // namespace ddn

#endif  // DDN_NETWORK_HPP_
