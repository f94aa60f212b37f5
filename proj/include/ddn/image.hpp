// image.hpp - channel-major float image grid.

#ifndef DDN_IMAGE_HPP_
#define DDN_IMAGE_HPP_

#include <vector>

#include "ddn/errors.hpp"

namespace ddn {

// Pixel values in [0,1], stored channel-major: index (c * height + y) * width + x.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int c, int h, int w)
        : channels(c), height(h), width(w),
          data(static_cast<std::size_t>(c) * h * w, 0.0) {}

    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    // Bilinear sample with zero fill outside the frame (single channel c).
    double sample_bilinear(int c, double y, double x) const;
};

}  // namespace ddn

#endif  // DDN_IMAGE_HPP_
