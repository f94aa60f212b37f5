#include "ddn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ddn/rng.hpp"
#include "ddn/tps.hpp"

namespace ddn {

void SyntheticSpec::validate() const {
    if (landmark_count < 4) throw ConfigError("dataset: landmark_count must be >= 4");
    if (basis_rank < 0 || basis_rank > 2 * landmark_count) {
        throw ConfigError("dataset: basis_rank out of range");
    }
    if (static_cast<int>(mode_amplitudes.size()) != basis_rank) {
        throw ConfigError("dataset: need one mode amplitude per basis rank");
    }
    for (double a : mode_amplitudes) {
        if (a < 0.0) throw ConfigError("dataset: mode amplitudes must be >= 0");
    }
    if (tps_jitter < 0.0) throw ConfigError("dataset: tps_jitter must be >= 0");
    if (image_size < 16) throw ConfigError("dataset: image_size must be >= 16");
    if (train_count < 1 || test_count < 1) throw ConfigError("dataset: counts must be >= 1");
    if (normalizer == NormalizerKind::LandmarkPair) {
        if (normalizer_a < 0 || normalizer_a >= landmark_count || normalizer_b < 0 ||
            normalizer_b >= landmark_count || normalizer_a == normalizer_b) {
            throw ConfigError("dataset: invalid normalizer landmark pair");
        }
    }
}

namespace {

LandmarkSet make_template(const SyntheticSpec& spec) {
    // Ellipse of landmarks around the frame center; slight anisotropy keeps
    // the bounding box well defined.
    const double cx = 0.5 * spec.image_size;
    const double cy = 0.5 * spec.image_size;
    const double ru = 0.28 * spec.image_size;
    const double rv = 0.24 * spec.image_size;
    LandmarkSet t;
    t.points.resize(spec.landmark_count);
    for (int i = 0; i < spec.landmark_count; ++i) {
        const double a = 2.0 * M_PI * i / spec.landmark_count;
        t.points[i] = {cx + ru * std::cos(a), cy + rv * std::sin(a)};
    }
    return t;
}

std::vector<std::vector<double>> make_modes(const SyntheticSpec& spec, const Rng& base) {
    const std::size_t d = 2 * static_cast<std::size_t>(spec.landmark_count);
    std::vector<std::vector<double>> modes;
    Rng rng = base.derive(0xB0DE5);
    for (int l = 0; l < spec.basis_rank; ++l) {
        std::vector<double> m(d);
        for (double& x : m) x = rng.normal();
        // Gram-Schmidt against previous modes.
        for (const auto& prev : modes) {
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += m[i] * prev[i];
            for (std::size_t i = 0; i < d; ++i) m[i] -= dot * prev[i];
        }
        double nrm = 0.0;
        for (double x : m) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm < 1e-9) throw DomainError("generate_synthetic: degenerate mode draw");
        for (double& x : m) x /= nrm;
        modes.push_back(std::move(m));
    }
    return modes;
}

// One draw of a deformed shape; returns false if any landmark leaves the
// safe region of the frame.
bool draw_shape(const SyntheticSpec& spec, const LandmarkSet& tmpl,
                const std::vector<std::vector<double>>& modes, Rng& rng, LandmarkSet& out) {
    std::vector<double> y = tmpl.stacked();
    for (std::size_t l = 0; l < modes.size(); ++l) {
        const double c = rng.uniform(-spec.mode_amplitudes[l], spec.mode_amplitudes[l]);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * modes[l][i];
    }
    LandmarkSet shape = LandmarkSet::from_stacked(y);

    if (spec.tps_jitter > 0.0) {
        // Small smooth warp: displace a coarse 3x3 anchor grid and interpolate.
        const ControlGrid anchors =
            ControlGrid::regular(3, 3, spec.image_size, spec.image_size);
        LandmarkSet src(anchors.points);
        LandmarkSet dst = src;
        for (Vec2& p : dst.points) {
            p.u += rng.uniform(-spec.tps_jitter, spec.tps_jitter);
            p.v += rng.uniform(-spec.tps_jitter, spec.tps_jitter);
        }
        const TpsParams warp = tps_fit_closed_form(src, dst, anchors, 0.0);
        shape = tps_apply(warp, shape);
    }

    const double margin = std::clamp(spec.image_size / 24.0, 1.5, 3.0);
    for (const Vec2& p : shape.points) {
        if (p.u < margin || p.u > spec.image_size - 1 - margin || p.v < margin ||
            p.v > spec.image_size - 1 - margin) {
            return false;
        }
    }
    out = std::move(shape);
    return true;
}

Sample make_sample(const SyntheticSpec& spec, const LandmarkSet& tmpl,
                   const std::vector<std::vector<double>>& modes, Rng rng) {
    LandmarkSet truth;
    bool ok = false;
    for (int attempt = 0; attempt < 128 && !ok; ++attempt) {
        ok = draw_shape(spec, tmpl, modes, rng, truth);
    }
    if (!ok) throw DomainError("generate_synthetic: could not place landmarks in frame");
    Sample s;
    s.truth = truth;
    s.image = render_shape(truth, spec);
    s.normalizer = sample_normalizer(truth, spec);
    return s;
}

}  // namespace

double sample_normalizer(const LandmarkSet& truth, const SyntheticSpec& spec) {
    if (spec.normalizer == NormalizerKind::LandmarkPair) {
        return dist(truth[spec.normalizer_a], truth[spec.normalizer_b]);
    }
    double lo_u = truth[0].u, hi_u = lo_u, lo_v = truth[0].v, hi_v = lo_v;
    for (const Vec2& p : truth.points) {
        lo_u = std::min(lo_u, p.u);
        hi_u = std::max(hi_u, p.u);
        lo_v = std::min(lo_v, p.v);
        hi_v = std::max(hi_v, p.v);
    }
    return std::max(hi_u - lo_u, hi_v - lo_v);
}

Image render_shape(const LandmarkSet& truth, const SyntheticSpec& spec) {
    Image img(1, spec.image_size, spec.image_size);
    const double two_sb2 = 2.0 * spec.blob_sigma * spec.blob_sigma;
    const double two_ss2 = 2.0 * spec.segment_sigma * spec.segment_sigma;

    auto splat = [&](double cu, double cv, double two_s2, double reach) {
        const int x0 = std::max(0, static_cast<int>(std::floor(cu - reach)));
        const int x1 = std::min(spec.image_size - 1, static_cast<int>(std::ceil(cu + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cv - reach)));
        const int y1 = std::min(spec.image_size - 1, static_cast<int>(std::ceil(cv + reach)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d2 = (x - cu) * (x - cu) + (y - cv) * (y - cv);
                img.at(0, y, x) += std::exp(-d2 / two_s2);
            }
        }
    };

    for (const Vec2& p : truth.points) splat(p.u, p.v, two_sb2, 4.0 * spec.blob_sigma);

    // Polyline segments between consecutive landmarks.
    for (std::size_t i = 0; i + 1 < truth.size(); ++i) {
        const Vec2 a = truth[i];
        const Vec2 b = truth[i + 1];
        const double reach = 4.0 * spec.segment_sigma;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.u, b.u) - reach)));
        const int x1 = std::min(spec.image_size - 1,
                                static_cast<int>(std::ceil(std::max(a.u, b.u) + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.v, b.v) - reach)));
        const int y1 = std::min(spec.image_size - 1,
                                static_cast<int>(std::ceil(std::max(a.v, b.v) + reach)));
        const Vec2 ab = b - a;
        const double len2 = ab.u * ab.u + ab.v * ab.v;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                double t = len2 > 0.0 ? ((x - a.u) * ab.u + (y - a.v) * ab.v) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double du = x - (a.u + t * ab.u);
                const double dv = y - (a.v + t * ab.v);
                const double d2 = du * du + dv * dv;
                img.at(0, y, x) += 0.6 * std::exp(-d2 / two_ss2);
            }
        }
    }

    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const Rng base(spec.seed);
    SyntheticData data;
    data.template_shape = make_template(spec);
    data.modes = make_modes(spec, base);

    data.train.reserve(spec.train_count);
    for (int i = 0; i < spec.train_count; ++i) {
        data.train.push_back(
            make_sample(spec, data.template_shape, data.modes, base.derive(0x1000000ULL + i)));
    }
    data.test.reserve(spec.test_count);
    for (int i = 0; i < spec.test_count; ++i) {
        data.test.push_back(
            make_sample(spec, data.template_shape, data.modes, base.derive(0x2000000ULL + i)));
    }
    return data;
}

namespace {

double parse_double(const std::string& tok, const std::string& path, std::size_t line_no) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
    }
}

}  // namespace

LandmarkSet load_points_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::size_t line_no = 0;

    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return true;
        }
        return false;
    };

    if (!next_line() || line != "version 1") {
        throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'version 1'");
    }
    if (!next_line() || line.rfind("n_points ", 0) != 0) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'n_points K'");
    }
    const long k = std::strtol(line.c_str() + 9, nullptr, 10);
    if (k < 0) throw ParseError(path + ":" + std::to_string(line_no) + ": bad point count");

    LandmarkSet pts;
    for (long i = 0; i < k; ++i) {
        if (!next_line()) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": missing point " +
                             std::to_string(i + 1));
        }
        std::istringstream ss(line);
        std::string tu, tv, extra;
        if (!(ss >> tu >> tv) || (ss >> extra)) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'u v'");
        }
        pts.points.push_back({parse_double(tu, path, line_no), parse_double(tv, path, line_no)});
    }
    return pts;
}

void save_points_text(const std::string& path, const LandmarkSet& points) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "version 1\n";
    out << "n_points " << points.size() << "\n";
    char buf[64];
    for (const Vec2& p : points.points) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", p.u, p.v);
        out << buf;
    }
    if (!out) throw IoError("write failed for " + path);
}

std::vector<AnnotationRecord> load_annotations(const std::string& path, AnnotationFormat format) {
    if (format == AnnotationFormat::PointsText) {
        return {AnnotationRecord{"", load_points_text(path)}};
    }
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<AnnotationRecord> records;
    std::string line;
    std::size_t line_no = 0;
    std::size_t n_points = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> tokens;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            tokens.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (tokens.size() < 3 || tokens.size() % 2 == 0) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected image_path,u1,v1,...");
        }
        AnnotationRecord rec;
        rec.image_path = tokens[0];
        for (std::size_t i = 1; i + 1 < tokens.size(); i += 2) {
            rec.landmarks.points.push_back({parse_double(tokens[i], path, line_no),
                                            parse_double(tokens[i + 1], path, line_no)});
        }
        if (records.empty()) {
            n_points = rec.landmarks.size();
        } else if (rec.landmarks.size() != n_points) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": record has " +
                             std::to_string(rec.landmarks.size()) + " points, expected " +
                             std::to_string(n_points));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void save_annotation_table(const std::string& path, const std::vector<AnnotationRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    char buf[64];
    for (const auto& rec : records) {
        out << rec.image_path;
        for (const Vec2& p : rec.landmarks.points) {
            std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", p.u, p.v);
            out << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

void save_pgm(const std::string& path, const Image& image) {
    if (image.channels != 1) throw ShapeError("save_pgm: single-channel images only");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> row(image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double v = std::clamp(image.at(0, y, x), 0.0, 1.0);
            row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw IoError("write failed for " + path);
}

Image load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w < 1 || h < 1 || maxval != 255) {
        throw ParseError(path + ": not an 8-bit P5 PGM");
    }
    in.get();  // single whitespace after header
    Image img(1, h, w);
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw ParseError(path + ": truncated pixel data");
    }
    for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0;
    return img;
}

Sample crop_and_resize(const Sample& sample, const CropBox& box, int target_w, int target_h) {
    if (!(box.w > 0.0) || !(box.h > 0.0)) throw DomainError("crop_and_resize: degenerate box");
    if (target_w < 1 || target_h < 1) throw DomainError("crop_and_resize: bad target size");
    if (box.x + box.w <= 0.0 || box.y + box.h <= 0.0 || box.x >= sample.image.width ||
        box.y >= sample.image.height) {
        throw DomainError("crop_and_resize: box does not overlap image");
    }
    const double sx = target_w / box.w;
    const double sy = target_h / box.h;

    Sample out;
    out.image = Image(sample.image.channels, target_h, target_w);
    for (int c = 0; c < sample.image.channels; ++c) {
        for (int y = 0; y < target_h; ++y) {
            for (int x = 0; x < target_w; ++x) {
                out.image.at(c, y, x) = sample.image.sample_bilinear(c, box.y + y / sy,
                                                                     box.x + x / sx);
            }
        }
    }
    out.truth.points.reserve(sample.truth.size());
    for (const Vec2& p : sample.truth.points) {
        out.truth.points.push_back({(p.u - box.x) * sx, (p.v - box.y) * sy});
    }
    out.normalizer = sample.normalizer * sx;
    return out;
}

}  // namespace ddn
