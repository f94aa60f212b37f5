#include "ddn/landmarks.hpp"

#include <cmath>

namespace ddn {

double norm(Vec2 a) { return std::sqrt(a.u * a.u + a.v * a.v); }
double dist(Vec2 a, Vec2 b) { return norm(a - b); }

std::vector<double> LandmarkSet::stacked() const {
    std::vector<double> y(2 * points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        y[2 * i] = points[i].u;
        y[2 * i + 1] = points[i].v;
    }
    return y;
}

LandmarkSet LandmarkSet::from_stacked(const std::vector<double>& y) {
    if (y.size() % 2 != 0) throw ShapeError("from_stacked: odd length");
    LandmarkSet out;
    out.points.resize(y.size() / 2);
    for (std::size_t i = 0; i < out.points.size(); ++i) {
        out.points[i] = {y[2 * i], y[2 * i + 1]};
    }
    return out;
}

bool LandmarkSet::all_finite() const {
    for (const Vec2& p : points) {
        if (!std::isfinite(p.u) || !std::isfinite(p.v)) return false;
    }
    return true;
}

}  // namespace ddn
