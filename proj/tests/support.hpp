#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "evsplat/event_sim.hpp"
#include "evsplat/image.hpp"
#include "evsplat/renderer.hpp"
#include "evsplat/types.hpp"

namespace testing {

using namespace evsplat;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Quat random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return normalized(Quat(n(rng), n(rng), n(rng), n(rng)));
}

inline Mat3 random_rotation(std::mt19937_64& rng) { return quat_to_rot(random_quat(rng)); }

inline Mat4 rigid(const Mat3& r, const Vec3& t) {
    Mat4 m = Mat4::Identity();
    m.block<3, 3>(0, 0) = r;
    m.block<3, 1>(0, 3) = t;
    return m;
}

inline PinholeCamera small_camera(int w, int h, double focal) {
    PinholeCamera cam;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * (w - 1);
    cam.cy = 0.5 * (h - 1);
    cam.width = w;
    cam.height = h;
    return cam;
}

/// Gaussians a couple of meters in front of the camera, sized to cover a few pixels each.
inline std::vector<RenderGaussian> random_render_scene(std::mt19937_64& rng, int n, double spread = 0.4) {
    std::vector<RenderGaussian> out(n);
    for (RenderGaussian& g : out) {
        g.position = Vec3(uniform(rng, -spread, spread), uniform(rng, -spread, spread), uniform(rng, 1.5, 3.0));
        g.rotation = random_rotation(rng);
        g.log_scale = Vec3(std::log(uniform(rng, 0.05, 0.2)), std::log(uniform(rng, 0.05, 0.2)),
                           std::log(uniform(rng, 0.05, 0.2)));
        g.opacity_logit = uniform(rng, -1.0, 2.0);
        g.color = Vec3(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0));
    }
    return out;
}

inline Image random_image(std::mt19937_64& rng, int w, int h, int c = 3, double lo = 0.0, double hi = 1.0) {
    Image img(w, h, c);
    for (double& v : img.data) v = uniform(rng, lo, hi);
    return img;
}

/// Central difference of f at x along one coordinate.
inline double central_difference(const std::function<double()>& f, double& x, double h) {
    const double x0 = x;
    x = x0 + h;
    const double fp = f();
    x = x0 - h;
    const double fm = f();
    x = x0;
    return (fp - fm) / (2.0 * h);
}

/// Relative error with an absolute floor so near-zero gradients compare sensibly.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Weighted sum of every render output, so one scalar probes every pixel and channel.
inline double probe_loss(const RenderedFrame& f, const Image& weights) {
    double s = 0.0;
    for (size_t i = 0; i < f.rgb.data.size(); ++i) s += weights.data[i] * f.rgb.data[i];
    return s;
}

/// One pixel's log-luma samples with timestamps.
struct PixelTrace {
    std::vector<std::uint64_t> t;
    std::vector<double> log_luma;
};

struct OracleEvent {
    double t;
    int p;
};

/// Straightforward scalar event camera: walk each segment, step the reference by C until it is
/// within C of the sample, time-stamping crossings along the linear log-luma path.
inline std::vector<OracleEvent> oracle_pixel_events(const PixelTrace& tr, double contrast) {
    std::vector<OracleEvent> out;
    double ref = tr.log_luma[0];
    for (size_t k = 1; k < tr.t.size(); ++k) {
        const double a = tr.log_luma[k - 1], b = tr.log_luma[k];
        const double t0 = static_cast<double>(tr.t[k - 1]), t1 = static_cast<double>(tr.t[k]);
        while (b - ref >= contrast) {
            ref += contrast;
            const double frac = (b == a) ? 1.0 : (ref - a) / (b - a);
            out.push_back({t0 + std::clamp(frac, 0.0, 1.0) * (t1 - t0), +1});
        }
        while (ref - b >= contrast) {
            ref -= contrast;
            const double frac = (b == a) ? 1.0 : (ref - a) / (b - a);
            out.push_back({t0 + std::clamp(frac, 0.0, 1.0) * (t1 - t0), -1});
        }
    }
    return out;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("evsplat_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
