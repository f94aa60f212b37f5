// landmarks.hpp - ordered 2-D landmark configurations.

#ifndef DDN_LANDMARKS_HPP_
#define DDN_LANDMARKS_HPP_

#include <cstddef>
#include <vector>

#include "ddn/errors.hpp"

namespace ddn {

struct Vec2 {
    double u = 0.0;
    double v = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.u + b.u, a.v + b.v}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.u - b.u, a.v - b.v}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.u, s * a.v}; }
double norm(Vec2 a);
double dist(Vec2 a, Vec2 b);

// An ordered configuration of n semantic landmarks, in pixels of the network
// input frame. The stacked form interleaves coordinates: (u1, v1, ..., un, vn).
struct LandmarkSet {
    std::vector<Vec2> points;

    LandmarkSet() = default;
    explicit LandmarkSet(std::vector<Vec2> pts) : points(std::move(pts)) {}

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    Vec2& operator[](std::size_t i) { return points[i]; }
    const Vec2& operator[](std::size_t i) const { return points[i]; }

    std::vector<double> stacked() const;
    static LandmarkSet from_stacked(const std::vector<double>& y);

    bool all_finite() const;
};

}  // namespace ddn

#endif  // DDN_LANDMARKS_HPP_
