#include "ddn/image.hpp"

#include <cmath>

namespace ddn {

double Image::sample_bilinear(int c, double y, double x) const {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0;
    const double fx = x - x0;
    auto pixel = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= height || xx < 0 || xx >= width) return 0.0;
        return at(c, yy, xx);
    };
    return (1.0 - fy) * ((1.0 - fx) * pixel(y0, x0) + fx * pixel(y0, x0 + 1)) +
           fy * ((1.0 - fx) * pixel(y0 + 1, x0) + fx * pixel(y0 + 1, x0 + 1));
}

}  // namespace ddn
