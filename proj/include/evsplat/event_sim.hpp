#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evsplat/image.hpp"
#include "evsplat/types.hpp"

namespace evsplat {

inline constexpr double kDefaultContrast = 0.2;
inline constexpr double kLumaFloor = 1e-4;

struct TimedFrame {
    std::uint64_t t = 0;  // microseconds
    Image linear_rgb;
};

/// ln(max(luma, 1e-4)) of a linear RGB image, one value per pixel.
std::vector<double> log_luma(const Image& linear_rgb);

/// Idealized per-pixel event camera. Keeps the reference log-luma between push() calls,
/// so feeding a sequence in pieces yields the same events as feeding it whole.
class EventSimulator {
public:
    explicit EventSimulator(double contrast = kDefaultContrast);

    void reset(const TimedFrame& first);
    /// Events for the interval (previous frame, frame], ordered by time then pixel.
    std::vector<EventRecord> push(const TimedFrame& frame);

    bool initialized() const { return initialized_; }
    double contrast() const { return contrast_; }
    std::span<const double> reference() const { return reference_; }

private:
    double contrast_;
    bool initialized_ = false;
    int width_ = 0, height_ = 0;
    std::uint64_t last_t_ = 0;
    std::vector<double> last_log_;
    std::vector<double> reference_;
};

/// Whole-sequence convenience wrapper. Needs >= 2 frames with strictly increasing timestamps.
std::vector<EventRecord> simulate_events(std::span<const TimedFrame> frames, double contrast = kDefaultContrast);

/// E(u) = C * sum of polarities at u over [t_start, t_end).
EventMap accumulate(std::span<const EventRecord> events, std::uint64_t t_start, std::uint64_t t_end, double contrast,
                    int width, int height);

/// Mean of linear frames, encoded with gamma 1/2.2.
Image synthesize_blur(std::span<const Image> sharp_linear);

}  // namespace evsplat
