#include "ddn/network.hpp"

#include <cmath>
#include <string>

namespace ddn {

namespace {

int conv_out_size(int in, int kernel, int stride) {
    const int pad = kernel / 2;
    return (in + 2 * pad - kernel) / stride + 1;
}

// Head hidden units use a leaky rectifier: during head-only pre-training the
// convolutional features are uninformative and exact rectifiers can die,
// cutting the gradient path needed when the conv stack unfreezes.
constexpr double kHeadLeak = 0.01;

void head_forward(const HeadParams& head, const std::vector<double>& x,
                  std::vector<double>& h_pre, std::vector<double>& h, std::vector<double>& out) {
    if (x.size() != head.w1.cols()) {
        throw ShapeError("head_forward: feature length " + std::to_string(x.size()) +
                         " does not match head input " + std::to_string(head.w1.cols()));
    }
    h_pre = matvec(head.w1, x);
    for (std::size_t i = 0; i < h_pre.size(); ++i) h_pre[i] += head.b1[i];
    h = h_pre;
    for (double& v : h) v = v > 0.0 ? v : kHeadLeak * v;
    out = matvec(head.w2, h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += head.b2[i];
}

void head_backward(const HeadParams& head, const std::vector<double>& x,
                   const std::vector<double>& h_pre, const std::vector<double>& h,
                   const std::vector<double>& g_out, HeadParams& grad,
                   std::vector<double>& x_grad) {
    for (std::size_t r = 0; r < head.w2.rows(); ++r) {
        const double g = g_out[r];
        grad.b2[r] += g;
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < head.w2.cols(); ++c) grad.w2(r, c) += g * h[c];
    }
    std::vector<double> gh = matvec_t(head.w2, g_out);
    for (std::size_t i = 0; i < gh.size(); ++i) {
        if (h_pre[i] <= 0.0) gh[i] *= kHeadLeak;
    }
    for (std::size_t r = 0; r < head.w1.rows(); ++r) {
        const double g = gh[r];
        grad.b1[r] += g;
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < head.w1.cols(); ++c) grad.w1(r, c) += g * x[c];
    }
    const std::vector<double> gx = matvec_t(head.w1, gh);
    for (std::size_t i = 0; i < x_grad.size(); ++i) x_grad[i] += gx[i];
}

}  // namespace

std::size_t NetworkParams::feature_length() const {
    int c = in_channels;
    int s = input_size;
    for (const auto& layer : conv) {
        c = layer.out_channels;
        s = conv_out_size(s, layer.kernel, layer.stride);
    }
    return static_cast<std::size_t>(c) * s * s;
}

const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::Conv: return "conv";
        case ParamGroup::SbnHead: return "sbn_head";
        case ParamGroup::PtnHead: return "ptn_head";
    }
    return "?";
}

std::vector<ParamView> param_views(NetworkParams& p) {
    std::vector<ParamView> v;
    for (std::size_t i = 0; i < p.conv.size(); ++i) {
        auto& l = p.conv[i];
        v.push_back({"conv" + std::to_string(i) + ".w", ParamGroup::Conv, &l.w,
                     {static_cast<std::size_t>(l.out_channels), static_cast<std::size_t>(l.in_channels),
                      static_cast<std::size_t>(l.kernel), static_cast<std::size_t>(l.kernel)}});
        v.push_back({"conv" + std::to_string(i) + ".b", ParamGroup::Conv, &l.b,
                     {static_cast<std::size_t>(l.out_channels)}});
    }
    auto add_head = [&v](const char* prefix, ParamGroup g, HeadParams& h) {
        v.push_back({std::string(prefix) + ".fc1.w", g, &h.w1.data(), {h.w1.rows(), h.w1.cols()}});
        v.push_back({std::string(prefix) + ".fc1.b", g, &h.b1, {h.b1.size()}});
        v.push_back({std::string(prefix) + ".fc2.w", g, &h.w2.data(), {h.w2.rows(), h.w2.cols()}});
        v.push_back({std::string(prefix) + ".fc2.b", g, &h.b2, {h.b2.size()}});
    };
    add_head("sbn", ParamGroup::SbnHead, p.sbn);
    add_head("ptn", ParamGroup::PtnHead, p.ptn);
    return v;
}

std::vector<ParamView> param_views(const NetworkParams& p) {
    return param_views(const_cast<NetworkParams&>(p));
}

NetworkParams init_network(const NetworkConfig& cfg, std::size_t basis_rank,
                           std::size_t grid_count, bool affine_only, Rng& rng) {
    if (cfg.input_size < 1 || cfg.in_channels < 1 || cfg.hidden_width < 1 || cfg.stages.empty()) {
        throw ConfigError("init_network: invalid network config");
    }
    NetworkParams p;
    p.input_size = cfg.input_size;
    p.in_channels = cfg.in_channels;
    p.hidden_width = cfg.hidden_width;
    p.ptn_affine_only = affine_only;

    int in_c = cfg.in_channels;
    int spatial = cfg.input_size;
    for (const auto& stage : cfg.stages) {
        if (stage.out_channels < 1 || stage.kernel < 1 || stage.stride < 1) {
            throw ConfigError("init_network: invalid conv stage");
        }
        ConvLayerParams layer;
        layer.in_channels = in_c;
        layer.out_channels = stage.out_channels;
        layer.kernel = stage.kernel;
        layer.stride = stage.stride;
        const std::size_t fan_in =
            static_cast<std::size_t>(in_c) * stage.kernel * stage.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        layer.w.resize(static_cast<std::size_t>(stage.out_channels) * fan_in);
        for (double& w : layer.w) w = rng.uniform(-bound, bound);
        layer.b.assign(static_cast<std::size_t>(stage.out_channels), 0.0);
        spatial = conv_out_size(spatial, stage.kernel, stage.stride);
        if (spatial < 1) throw ConfigError("init_network: conv stage collapses below 1 pixel");
        in_c = stage.out_channels;
        p.conv.push_back(std::move(layer));
    }

    const std::size_t feat = static_cast<std::size_t>(in_c) * spatial * spatial;
    auto make_head = [&](std::size_t outputs) {
        HeadParams h;
        h.w1 = Matrix(cfg.hidden_width, feat);
        const double bound = 1.0 / std::sqrt(static_cast<double>(feat));
        for (double& w : h.w1.data()) w = rng.uniform(-bound, bound);
        h.b1.assign(cfg.hidden_width, 0.0);
        // Second layer zero: SBN starts at the mean shape, PTN at identity.
        h.w2 = Matrix(outputs, cfg.hidden_width);
        h.b2.assign(outputs, 0.0);
        return h;
    };
    p.sbn = make_head(basis_rank);
    p.ptn = make_head(affine_only ? 6 : 6 + 2 * grid_count);
    return p;
}

NetworkParams zeros_like(const NetworkParams& p) {
    NetworkParams z = p;
    for (auto& view : param_views(z)) {
        std::fill(view.values->begin(), view.values->end(), 0.0);
    }
    return z;
}

std::vector<double> forward_features(const NetworkParams& params, const Image& image,
                                     ForwardTrace& trace) {
    if (image.height != params.input_size || image.width != params.input_size ||
        image.channels != params.in_channels) {
        throw ShapeError("forward_features: image is " + std::to_string(image.channels) + "x" +
                         std::to_string(image.height) + "x" + std::to_string(image.width) +
                         ", network expects " + std::to_string(params.in_channels) + "x" +
                         std::to_string(params.input_size) + "x" +
                         std::to_string(params.input_size));
    }
    trace.conv.clear();
    std::vector<double> cur = image.data;
    int in_c = params.in_channels;
    int in_s = params.input_size;
    for (const auto& layer : params.conv) {
        const int out_s = conv_out_size(in_s, layer.kernel, layer.stride);
        const int pad = layer.kernel / 2;
        ConvTrace t;
        t.in_c = in_c;
        t.in_h = in_s;
        t.in_w = in_s;
        t.out_c = layer.out_channels;
        t.out_h = out_s;
        t.out_w = out_s;
        t.input = std::move(cur);
        t.pre.assign(static_cast<std::size_t>(layer.out_channels) * out_s * out_s, 0.0);

        for (int o = 0; o < layer.out_channels; ++o) {
            for (int y = 0; y < out_s; ++y) {
                for (int x = 0; x < out_s; ++x) {
                    double acc = layer.b[o];
                    for (int i = 0; i < in_c; ++i) {
                        for (int ky = 0; ky < layer.kernel; ++ky) {
                            const int iy = y * layer.stride - pad + ky;
                            if (iy < 0 || iy >= in_s) continue;
                            const double* in_row =
                                &t.input[(static_cast<std::size_t>(i) * in_s + iy) * in_s];
                            const double* w_row =
                                &layer.w[((static_cast<std::size_t>(o) * in_c + i) * layer.kernel +
                                          ky) *
                                         layer.kernel];
                            for (int kx = 0; kx < layer.kernel; ++kx) {
                                const int ix = x * layer.stride - pad + kx;
                                if (ix < 0 || ix >= in_s) continue;
                                acc += w_row[kx] * in_row[ix];
                            }
                        }
                    }
                    t.pre[(static_cast<std::size_t>(o) * out_s + y) * out_s + x] = acc;
                }
            }
        }
        cur = t.pre;
        for (double& v : cur) v = v > 0.0 ? v : 0.0;
        trace.conv.push_back(std::move(t));
        in_c = layer.out_channels;
        in_s = out_s;
    }
    trace.features = cur;
    trace.has_features = true;
    return cur;
}

LandmarkSet forward_sbn(const NetworkParams& params, const std::vector<double>& features,
                        const ShapeBasis& basis, ForwardTrace& trace) {
    if (params.sbn.w2.rows() != basis.rank()) {
        throw ShapeError("forward_sbn: head emits " + std::to_string(params.sbn.w2.rows()) +
                         " coeffs, basis rank is " + std::to_string(basis.rank()));
    }
    head_forward(params.sbn, features, trace.sbn_h_pre, trace.sbn_h, trace.xs);
    trace.ys = decode_shape(basis, trace.xs);
    trace.has_sbn = true;
    return trace.ys;
}

double ptn_linear_scale(const NetworkParams& params) {
    return 1.0 / std::max(1.0, static_cast<double>(params.input_size));
}

double ptn_coeff_scale(const NetworkParams& params) {
    // Largest in-frame kernel magnitude; keeps coefficient slots at the same
    // per-unit point displacement as the affine slots.
    return 1.0 / std::max(1.0, rbf(M_SQRT2 * params.input_size));
}

LandmarkSet forward_ptn(const NetworkParams& params, const std::vector<double>& features,
                        const LandmarkSet& ys, const ControlGrid& grid, ForwardTrace& trace) {
    const std::size_t m = grid.count();
    const std::size_t expected = params.ptn_affine_only ? 6 : 6 + 2 * m;
    if (params.ptn.w2.rows() != expected) {
        throw ShapeError("forward_ptn: head emits " + std::to_string(params.ptn.w2.rows()) +
                         " outputs, expected " + std::to_string(expected));
    }
    head_forward(params.ptn, features, trace.ptn_h_pre, trace.ptn_h, trace.ptn_out);

    const double lin = ptn_linear_scale(params);
    const double cs = ptn_coeff_scale(params);
    TpsParams warp = TpsParams::identity(grid);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            warp.affine(r, c) += trace.ptn_out[r * 3 + c] * (c < 2 ? lin : 1.0);
    if (!params.ptn_affine_only) {
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t j = 0; j < m; ++j)
                warp.coeffs(r, j) += trace.ptn_out[6 + r * m + j] * cs;
    }
    trace.warp = warp;
    trace.yp = tps_apply(warp, ys);
    trace.has_ptn = true;
    return trace.yp;
}

NetworkParams backward(const NetworkParams& params, ForwardTrace& trace,
                       const UpstreamGrads& upstream, const ShapeBasis* basis) {
    if (trace.consumed) throw ContractError("backward: trace already consumed");
    if (!trace.has_features) throw ContractError("backward: trace has no forward pass");
    trace.consumed = true;

    NetworkParams grads = zeros_like(params);
    std::vector<double> feat_grad(trace.features.size(), 0.0);

    const bool want_sbn = !upstream.xs.empty() || !upstream.ys.empty();
    if (want_sbn) {
        if (!trace.has_sbn) throw ContractError("backward: SBN gradient without SBN forward");
        std::vector<double> gxs(params.sbn_rank(), 0.0);
        if (!upstream.xs.empty()) {
            if (upstream.xs.size() != gxs.size()) throw ShapeError("backward: xs grad length");
            gxs = upstream.xs;
        }
        if (!upstream.ys.empty()) {
            if (basis == nullptr) throw ContractError("backward: ys gradient needs the basis");
            if (upstream.ys.size() != basis->mean.size()) {
                throw ShapeError("backward: ys grad length");
            }
            const std::vector<double> via_q = matvec_t(basis->basis, upstream.ys);
            for (std::size_t i = 0; i < gxs.size(); ++i) gxs[i] += via_q[i];
        }
        head_backward(params.sbn, trace.features, trace.sbn_h_pre, trace.sbn_h, gxs, grads.sbn,
                      feat_grad);
    }

    const bool want_ptn = !upstream.d.empty() || !upstream.u.empty();
    if (want_ptn) {
        if (!trace.has_ptn) throw ContractError("backward: PTN gradient without PTN forward");
        std::vector<double> g_out(params.ptn.w2.rows(), 0.0);
        const double lin = ptn_linear_scale(params);
        const double cs = ptn_coeff_scale(params);
        if (!upstream.d.empty()) {
            if (upstream.d.rows() != 2 || upstream.d.cols() != 3) {
                throw ShapeError("backward: affine grad must be 2x3");
            }
            for (std::size_t r = 0; r < 2; ++r)
                for (std::size_t c = 0; c < 3; ++c)
                    g_out[r * 3 + c] = upstream.d(r, c) * (c < 2 ? lin : 1.0);
        }
        if (!upstream.u.empty() && !params.ptn_affine_only) {
            const std::size_t m = (params.ptn.w2.rows() - 6) / 2;
            if (upstream.u.rows() != 2 || upstream.u.cols() != m) {
                throw ShapeError("backward: coeff grad must be 2x" + std::to_string(m));
            }
            for (std::size_t r = 0; r < 2; ++r)
                for (std::size_t j = 0; j < m; ++j) g_out[6 + r * m + j] = upstream.u(r, j) * cs;
        }
        head_backward(params.ptn, trace.features, trace.ptn_h_pre, trace.ptn_h, g_out, grads.ptn,
                      feat_grad);
    }

    // Conv stages in reverse; feat_grad is the gradient on the last stage's
    // rectified output.
    std::vector<double> d_out = std::move(feat_grad);
    for (std::size_t si = params.conv.size(); si-- > 0;) {
        const auto& layer = params.conv[si];
        const ConvTrace& t = trace.conv[si];
        const int pad = layer.kernel / 2;
        std::vector<double> d_in(t.input.size(), 0.0);
        auto& gw = grads.conv[si].w;
        auto& gb = grads.conv[si].b;
        for (int o = 0; o < t.out_c; ++o) {
            for (int y = 0; y < t.out_h; ++y) {
                for (int x = 0; x < t.out_w; ++x) {
                    const std::size_t oi = (static_cast<std::size_t>(o) * t.out_h + y) * t.out_w + x;
                    if (t.pre[oi] <= 0.0) continue;  // rectifier gate
                    const double g = d_out[oi];
                    if (g == 0.0) continue;
                    gb[o] += g;
                    for (int i = 0; i < t.in_c; ++i) {
                        for (int ky = 0; ky < layer.kernel; ++ky) {
                            const int iy = y * layer.stride - pad + ky;
                            if (iy < 0 || iy >= t.in_h) continue;
                            const std::size_t in_base =
                                (static_cast<std::size_t>(i) * t.in_h + iy) * t.in_w;
                            const std::size_t w_base =
                                ((static_cast<std::size_t>(o) * t.in_c + i) * layer.kernel + ky) *
                                layer.kernel;
                            for (int kx = 0; kx < layer.kernel; ++kx) {
                                const int ix = x * layer.stride - pad + kx;
                                if (ix < 0 || ix >= t.in_w) continue;
                                gw[w_base + kx] += g * t.input[in_base + ix];
                                d_in[in_base + ix] += g * layer.w[w_base + kx];
                            }
                        }
                    }
                }
            }
        }
        // Gate through the previous stage's rectifier happens in that stage's
        // own iteration (its pre-activations are cached there).
        d_out = std::move(d_in);
    }
    return grads;
}

}  // namespace ddn
