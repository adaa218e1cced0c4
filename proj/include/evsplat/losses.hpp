#pragma once

#include <span>

#include "evsplat/image.hpp"
#include "evsplat/types.hpp"

namespace evsplat {

inline constexpr double kDefaultLogEps = 1e-5;
inline constexpr double kDefaultEventWeight = 0.1;
inline constexpr double kDefaultSsimWeight = 0.2;
inline constexpr double kFrobeniusFloor = 1e-12;
inline constexpr double kPsnrCap = 100.0;

/// Per-pixel ln(Y(b^2.2) + eps) - ln(Y(a^2.2) + eps), Y the linear luma. Single channel result.
Image delta_log_luma(const Image& a, const Image& b, double eps = kDefaultLogEps);
/// Accumulates dL/da and dL/db (3 channels each) given dL/d(delta).
void delta_log_luma_backward(const Image& a, const Image& b, double eps, const Image& grad_delta, Image& grad_a,
                             Image& grad_b);

/// w * mean |D/|D|_F - E/|E|_F|; an operand with norm < 1e-12 counts as the zero map.
/// grad_delta, when non-empty, receives dL/dD (same length as delta).
double event_loss(std::span<const double> delta, std::span<const double> target, double weight,
                  std::span<double> grad_delta = {});
double event_loss(const Image& delta, const EventMap& target, double weight, Image* grad_delta = nullptr);

struct PhotometricTerms {
    double l1 = 0.0;
    double ssim = 1.0;
    double total = 0.0;
};

/// (1 - lambda) L1 + lambda (1 - SSIM); grad (if given) receives dL/drender.
PhotometricTerms photometric_loss(const Image& render, const Image& target, double ssim_weight = kDefaultSsimWeight,
                                  Image* grad = nullptr);

double mse(const Image& a, const Image& b);
/// 10 log10(1 / MSE), capped at 100 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);
/// PSNR over the pixel box [x0, x1] x [y0, y1] (inclusive).
double psnr_in_box(const Image& a, const Image& b, int x0, int y0, int x1, int y1);
/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, zero padding), averaged over pixels and channels.
double ssim(const Image& a, const Image& b);
/// SSIM plus dSSIM/da.
double ssim_with_grad(const Image& a, const Image& b, Image* grad_a);

}  // namespace evsplat
