#include "evsplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace evsplat {

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": image dimensions differ (" + std::to_string(a.width) +
                                    "x" + std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                                    std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                                    std::to_string(b.channels) + ")");
}

double srgb_to_linear(double v) { return std::pow(std::max(v, 0.0), kGamma); }
double linear_to_srgb(double v) { return std::pow(std::max(v, 0.0), 1.0 / kGamma); }

Image srgb_to_linear(const Image& srgb) {
    Image out = srgb;
    for (double& v : out.data) v = srgb_to_linear(v);
    return out;
}

Image linear_to_srgb(const Image& linear) {
    Image out = linear;
    for (double& v : out.data) v = linear_to_srgb(v);
    return out;
}

Image luma(const Image& rgb) {
    if (rgb.channels != 3) throw std::invalid_argument("luma needs a 3-channel image");
    Image out(rgb.width, rgb.height, 1);
    for (size_t p = 0; p < rgb.pixel_count(); ++p)
        out.data[p] = kLumaR * rgb.data[3 * p] + kLumaG * rgb.data[3 * p + 1] + kLumaB * rgb.data[3 * p + 2];
    return out;
}

}  // namespace evsplat
