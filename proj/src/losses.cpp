#include "evsplat/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace evsplat {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        w[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable "same" Gaussian filter with zero padding on a single-channel plane.
std::vector<double> blur_plane(const std::vector<double>& in, int width, int height) {
    static const std::array<double, kWindow> w = gaussian_window();
    constexpr int r = kWindow / 2;
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int k = -r; k <= r; ++k) {
                const int xx = x + k;
                if (xx >= 0 && xx < width) acc += w[k + r] * in[static_cast<size_t>(y) * width + xx];
            }
            tmp[static_cast<size_t>(y) * width + x] = acc;
        }
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int k = -r; k <= r; ++k) {
                const int yy = y + k;
                if (yy >= 0 && yy < height) acc += w[k + r] * tmp[static_cast<size_t>(yy) * width + x];
            }
            out[static_cast<size_t>(y) * width + x] = acc;
        }
    return out;
}

std::vector<double> channel_plane(const Image& img, int c) {
    std::vector<double> p(img.pixel_count());
    for (size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + c];
    return p;
}

}  // namespace

Image delta_log_luma(const Image& a, const Image& b, double eps) {
    require_same_shape(a, b, "delta_log_luma");
    if (a.channels != 3) throw std::invalid_argument("delta_log_luma needs RGB frames");
    Image out(a.width, a.height, 1);
    for (size_t p = 0; p < a.pixel_count(); ++p) {
        double ya = 0.0, yb = 0.0;
        const double w[3] = {kLumaR, kLumaG, kLumaB};
        for (int c = 0; c < 3; ++c) {
            ya += w[c] * srgb_to_linear(a.data[3 * p + c]);
            yb += w[c] * srgb_to_linear(b.data[3 * p + c]);
        }
        out.data[p] = std::log(yb + eps) - std::log(ya + eps);
    }
    return out;
}

void delta_log_luma_backward(const Image& a, const Image& b, double eps, const Image& grad_delta, Image& grad_a,
                             Image& grad_b) {
    require_same_shape(a, b, "delta_log_luma_backward");
    if (grad_delta.width != a.width || grad_delta.height != a.height || grad_delta.channels != 1)
        throw std::invalid_argument("delta_log_luma_backward: gradient shape mismatch");
    if (!grad_a.same_shape(a)) grad_a = Image(a.width, a.height, 3);
    if (!grad_b.same_shape(b)) grad_b = Image(b.width, b.height, 3);
    const double w[3] = {kLumaR, kLumaG, kLumaB};
    for (size_t p = 0; p < a.pixel_count(); ++p) {
        const double g = grad_delta.data[p];
        if (g == 0.0) continue;
        double ya = 0.0, yb = 0.0;
        for (int c = 0; c < 3; ++c) {
            ya += w[c] * srgb_to_linear(a.data[3 * p + c]);
            yb += w[c] * srgb_to_linear(b.data[3 * p + c]);
        }
        for (int c = 0; c < 3; ++c) {
            const double va = std::max(a.data[3 * p + c], 0.0), vb = std::max(b.data[3 * p + c], 0.0);
            grad_b.data[3 * p + c] += g * w[c] * kGamma * std::pow(vb, kGamma - 1.0) / (yb + eps);
            grad_a.data[3 * p + c] -= g * w[c] * kGamma * std::pow(va, kGamma - 1.0) / (ya + eps);
        }
    }
}

double event_loss(std::span<const double> delta, std::span<const double> target, double weight,
                  std::span<double> grad_delta) {
    if (delta.size() != target.size()) throw std::invalid_argument("event_loss: map sizes differ");
    if (delta.empty()) return 0.0;
    const size_t n = delta.size();
    double nd = 0.0, nt = 0.0;
    for (size_t i = 0; i < n; ++i) {
        nd += delta[i] * delta[i];
        nt += target[i] * target[i];
    }
    nd = std::sqrt(nd);
    nt = std::sqrt(nt);
    const double sd = nd < kFrobeniusFloor ? 0.0 : 1.0 / nd;
    const double st = nt < kFrobeniusFloor ? 0.0 : 1.0 / nt;

    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) loss += std::abs(delta[i] * sd - target[i] * st);
    loss *= weight / static_cast<double>(n);

    if (!grad_delta.empty()) {
        if (grad_delta.size() != n) throw std::invalid_argument("event_loss: gradient size mismatch");
        std::fill(grad_delta.begin(), grad_delta.end(), 0.0);
        if (sd > 0.0) {
            // d/dD of |D/|D| - e|: project the sign vector off the normalized direction.
            const double scale = weight / static_cast<double>(n);
            double dot = 0.0;
            for (size_t i = 0; i < n; ++i) {
                const double diff = delta[i] * sd - target[i] * st;
                const double r = diff > 0.0 ? scale : (diff < 0.0 ? -scale : 0.0);
                grad_delta[i] = r;
                dot += r * delta[i] * sd;
            }
            for (size_t i = 0; i < n; ++i) grad_delta[i] = (grad_delta[i] - dot * delta[i] * sd) * sd;
        }
    }
    return loss;
}

double event_loss(const Image& delta, const EventMap& target, double weight, Image* grad_delta) {
    if (delta.channels != 1 || delta.width != target.width || delta.height != target.height)
        throw std::invalid_argument("event_loss: map dimensions differ");
    if (grad_delta) {
        *grad_delta = Image(delta.width, delta.height, 1);
        return event_loss(delta.data, target.values, weight, grad_delta->data);
    }
    return event_loss(delta.data, target.values, weight);
}

double ssim_with_grad(const Image& a, const Image& b, Image* grad_a) {
    require_same_shape(a, b, "ssim");
    const int width = a.width, height = a.height;
    const size_t npix = a.pixel_count();
    if (grad_a) *grad_a = Image(width, height, a.channels);
    const double norm = 1.0 / static_cast<double>(npix * a.channels);
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const std::vector<double> x = channel_plane(a, c), y = channel_plane(b, c);
        std::vector<double> xx(npix), yy(npix), xy(npix);
        for (size_t i = 0; i < npix; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const std::vector<double> mx = blur_plane(x, width, height), my = blur_plane(y, width, height);
        const std::vector<double> exx = blur_plane(xx, width, height), eyy = blur_plane(yy, width, height),
                                  exy = blur_plane(xy, width, height);
        std::vector<double> d_mx, d_exx, d_exy;
        if (grad_a) {
            d_mx.resize(npix);
            d_exx.resize(npix);
            d_exy.resize(npix);
        }
        for (size_t i = 0; i < npix; ++i) {
            const double sxx = exx[i] - mx[i] * mx[i];
            const double syy = eyy[i] - my[i] * my[i];
            const double sxy = exy[i] - mx[i] * my[i];
            const double ta = 2.0 * mx[i] * my[i] + kC1;
            const double tb = 2.0 * sxy + kC2;
            const double tc = mx[i] * mx[i] + my[i] * my[i] + kC1;
            const double td = sxx + syy + kC2;
            const double s = (ta * tb) / (tc * td);
            total += s;
            if (grad_a) {
                d_mx[i] = s * (2.0 * my[i] / ta - 2.0 * my[i] / tb - 2.0 * mx[i] / tc + 2.0 * mx[i] / td);
                d_exx[i] = -s / td;
                d_exy[i] = 2.0 * s / tb;
            }
        }
        if (grad_a) {
            const std::vector<double> g1 = blur_plane(d_mx, width, height);
            const std::vector<double> g2 = blur_plane(d_exx, width, height);
            const std::vector<double> g3 = blur_plane(d_exy, width, height);
            for (size_t i = 0; i < npix; ++i)
                grad_a->data[i * a.channels + c] = norm * (g1[i] + 2.0 * x[i] * g2[i] + y[i] * g3[i]);
        }
    }
    return total * norm;
}

double ssim(const Image& a, const Image& b) { return ssim_with_grad(a, b, nullptr); }

PhotometricTerms photometric_loss(const Image& render, const Image& target, double ssim_weight, Image* grad) {
    require_same_shape(render, target, "photometric_loss");
    PhotometricTerms terms;
    const double inv_n = 1.0 / static_cast<double>(render.data.size());
    for (size_t i = 0; i < render.data.size(); ++i) terms.l1 += std::abs(render.data[i] - target.data[i]);
    terms.l1 *= inv_n;
    if (ssim_weight > 0.0) {
        terms.ssim = ssim_with_grad(render, target, grad);
        if (grad)
            for (double& g : grad->data) g *= -ssim_weight;
    } else if (grad) {
        *grad = Image(render.width, render.height, render.channels);
    }
    terms.total = (1.0 - ssim_weight) * terms.l1 + ssim_weight * (1.0 - terms.ssim);
    if (grad) {
        for (size_t i = 0; i < render.data.size(); ++i) {
            const double d = render.data[i] - target.data[i];
            grad->data[i] += (1.0 - ssim_weight) * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
    }
    return terms;
}

double mse(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double psnr_in_box(const Image& a, const Image& b, int x0, int y0, int x1, int y1) {
    require_same_shape(a, b, "psnr_in_box");
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, a.width - 1);
    y1 = std::min(y1, a.height - 1);
    if (x1 < x0 || y1 < y0) throw std::invalid_argument("psnr_in_box: empty box");
    double acc = 0.0;
    size_t n = 0;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            for (int c = 0; c < a.channels; ++c) {
                const double d = a.at(x, y, c) - b.at(x, y, c);
                acc += d * d;
                ++n;
            }
    const double m = acc / static_cast<double>(n);
    if (m < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

}  // namespace evsplat
