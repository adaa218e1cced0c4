#include "evsplat/event_sim.hpp"

#include <algorithm>
#include <cmath>

namespace evsplat {

std::vector<double> log_luma(const Image& linear_rgb) {
    const Image y = luma(linear_rgb);
    std::vector<double> out(y.data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(y.data[i], kLumaFloor));
    return out;
}

EventSimulator::EventSimulator(double contrast) : contrast_(contrast) {
    if (!(contrast > 0.0)) throw std::invalid_argument("contrast threshold must be positive");
}

void EventSimulator::reset(const TimedFrame& first) {
    width_ = first.linear_rgb.width;
    height_ = first.linear_rgb.height;
    last_t_ = first.t;
    last_log_ = log_luma(first.linear_rgb);
    reference_ = last_log_;
    initialized_ = true;
}

std::vector<EventRecord> EventSimulator::push(const TimedFrame& frame) {
    if (!initialized_) throw std::logic_error("EventSimulator::push before reset");
    if (frame.linear_rgb.width != width_ || frame.linear_rgb.height != height_)
        throw std::invalid_argument("EventSimulator: frame dimensions changed");
    if (frame.t <= last_t_) throw std::invalid_argument("EventSimulator: timestamps must strictly increase");

    const std::vector<double> next = log_luma(frame.linear_rgb);
    const double dt = static_cast<double>(frame.t - last_t_);
    std::vector<EventRecord> events;
    for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
            const size_t p = static_cast<size_t>(y) * width_ + x;
            const double from = last_log_[p], to = next[p];
            const double diff = to - reference_[p];
            const auto count = static_cast<long>(std::floor(std::abs(diff) / contrast_));
            if (count > 0) {
                const double sign = diff > 0.0 ? 1.0 : -1.0;
                for (long k = 1; k <= count; ++k) {
                    // Log-luma changes linearly over the interval; find where it crosses this level.
                    const double level = reference_[p] + sign * static_cast<double>(k) * contrast_;
                    double frac = (to != from) ? (level - from) / (to - from) : 1.0;
                    frac = std::clamp(frac, 0.0, 1.0);
                    EventRecord e;
                    e.t = last_t_ + static_cast<std::uint64_t>(std::llround(frac * dt));
                    e.x = static_cast<std::uint16_t>(x);
                    e.y = static_cast<std::uint16_t>(y);
                    e.p = sign > 0 ? 1 : -1;
                    events.push_back(e);
                }
                reference_[p] += sign * static_cast<double>(count) * contrast_;
            }
        }
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
    last_log_ = next;
    last_t_ = frame.t;
    return events;
}

std::vector<EventRecord> simulate_events(std::span<const TimedFrame> frames, double contrast) {
    if (frames.size() < 2) throw std::invalid_argument("simulate_events needs at least two frames");
    for (size_t i = 1; i < frames.size(); ++i)
        if (frames[i].t <= frames[i - 1].t)
            throw std::invalid_argument("simulate_events: timestamps must strictly increase");
    EventSimulator sim(contrast);
    sim.reset(frames[0]);
    std::vector<EventRecord> all;
    for (size_t i = 1; i < frames.size(); ++i) {
        std::vector<EventRecord> chunk = sim.push(frames[i]);
        all.insert(all.end(), chunk.begin(), chunk.end());
    }
    return all;
}

EventMap accumulate(std::span<const EventRecord> events, std::uint64_t t_start, std::uint64_t t_end, double contrast,
                    int width, int height) {
    if (!(t_start < t_end)) throw std::invalid_argument("accumulate: t_start must precede t_end");
    EventMap map(width, height, t_start, t_end);
    for (const EventRecord& e : events) {
        if (e.t < t_start || e.t >= t_end) continue;
        if (e.x >= width || e.y >= height) throw std::invalid_argument("accumulate: event outside the sensor");
        map.at(e.x, e.y) += static_cast<double>(e.p);
    }
    for (double& v : map.values) v *= contrast;
    return map;
}

Image synthesize_blur(std::span<const Image> sharp_linear) {
    if (sharp_linear.empty()) throw std::invalid_argument("synthesize_blur needs at least one frame");
    Image mean(sharp_linear[0].width, sharp_linear[0].height, sharp_linear[0].channels);
    for (const Image& f : sharp_linear) {
        require_same_shape(f, mean, "synthesize_blur");
        for (size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += f.data[i];
    }
    const double inv = 1.0 / static_cast<double>(sharp_linear.size());
    for (double& v : mean.data) v *= inv;
    return linear_to_srgb(mean);
}

}  // namespace evsplat
