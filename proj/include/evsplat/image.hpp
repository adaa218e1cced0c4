#pragma once

#include <span>
#include <vector>

#include "evsplat/types.hpp"

namespace evsplat {

inline constexpr double kGamma = 2.2;
inline constexpr double kLumaR = 0.2126;
inline constexpr double kLumaG = 0.7152;
inline constexpr double kLumaB = 0.0722;

/// Interleaved row-major image, rows top-down.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c = 3, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    size_t index(int x, int y, int c = 0) const {
        return (static_cast<size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

void require_same_shape(const Image& a, const Image& b, const char* what);

double srgb_to_linear(double v);
double linear_to_srgb(double v);
Image srgb_to_linear(const Image& srgb);
Image linear_to_srgb(const Image& linear);

/// 0.2126 R + 0.7152 G + 0.0722 B per pixel (single channel result).
Image luma(const Image& linear_rgb);

}  // namespace evsplat
