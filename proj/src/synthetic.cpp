#include "evsplat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "evsplat/event_sim.hpp"
#include "evsplat/io.hpp"

namespace evsplat {

namespace {

constexpr double kBackdropDepth = 5.0;
constexpr double kFigureDepth = 3.0;
const Vec3 kHip(0.0, 0.45, kFigureDepth);
const Vec3 kShoulder(0.0, -0.3, kFigureDepth);
const Vec3 kHand(0.45, -0.3, kFigureDepth);
constexpr double kTorsoSwing = 0.2;
constexpr double kArmSwing = 1.0;
constexpr double kArmPhase = 0.5;
constexpr double kCameraSway = 0.05;

Mat4 rotation_about(const Vec3& pivot, double angle) {
    Mat4 rot = Mat4::Identity();
    rot.block<3, 3>(0, 0) = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
    Mat4 to = Mat4::Identity(), from = Mat4::Identity();
    to.block<3, 1>(0, 3) = pivot;
    from.block<3, 1>(0, 3) = -pivot;
    return to * rot * from;
}

double total_duration(const SyntheticConfig& c) {
    return static_cast<double>(c.frame_period_us) * static_cast<double>(c.frames);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

SyntheticConfig synthetic_config_from_json(const std::string& text) {
    using nlohmann::json;
    SyntheticConfig c;
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw std::invalid_argument("synthetic config: expected a JSON object");
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const json& v = it.value();
            if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "frames") c.frames = v.get<int>();
            else if (k == "motion_speed") c.motion_speed = v.get<double>();
            else if (k == "width") c.width = v.get<int>();
            else if (k == "height") c.height = v.get<int>();
            else if (k == "focal") c.focal = v.get<double>();
            else if (k == "subsamples") c.subsamples = v.get<int>();
            else if (k == "frame_period_us") c.frame_period_us = v.get<std::uint64_t>();
            else if (k == "contrast") c.contrast = v.get<double>();
            else if (k == "test_every") c.test_every = v.get<int>();
            else if (k == "test_per_block") c.test_per_block = v.get<int>();
            else if (k == "backdrop_grid") c.backdrop_grid = v.get<int>();
            else if (k == "gaussians_per_bone") c.gaussians_per_bone = v.get<int>();
            else if (k == "point_jitter") c.point_jitter = v.get<double>();
            else throw std::invalid_argument("synthetic config: unknown key '" + k + "'");
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("synthetic config: ") + e.what());
    }
    return c;
}

void SyntheticConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("invalid synthetic config: ") + what);
    };
    require(frames >= 1, "frames must be positive");
    require(std::isfinite(motion_speed) && motion_speed >= 0.0, "motion speed must be non-negative");
    require(width >= 8 && height >= 8 && width <= 4096 && height <= 4096, "image size out of range");
    require(focal > 0.0, "focal length must be positive");
    require(subsamples >= 1, "subsamples must be positive");
    require(frame_period_us >= static_cast<std::uint64_t>(subsamples), "frame period too short for the subsamples");
    require(contrast > 0.0, "contrast must be positive");
    require(test_every >= 1 && test_per_block >= 0 && test_per_block < test_every, "bad train/test split");
    require(backdrop_grid >= 2, "backdrop grid too small");
    require(gaussians_per_bone >= 1, "gaussians_per_bone must be positive");
    require(point_jitter >= 0.0, "point_jitter must be non-negative");
}

SyntheticScene make_synthetic_scene(const SyntheticConfig& c) {
    c.validate();
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SyntheticScene scene;

    // Backdrop: a plane of flat Gaussians wide enough to fill the view under the camera sway.
    const double half_w = (0.5 * c.width / c.focal) * kBackdropDepth + 0.3;
    const double half_h = (0.5 * c.height / c.focal) * kBackdropDepth + 0.3;
    const int g = c.backdrop_grid;
    const double sx = 2.0 * half_w / (g - 1), sy = 2.0 * half_h / (g - 1);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    for (int iy = 0; iy < g; ++iy)
        for (int ix = 0; ix < g; ++ix) {
            RenderGaussian b;
            const double x = -half_w + ix * sx, y = -half_h + iy * sy;
            b.position = Vec3(x, y, kBackdropDepth);
            b.log_scale = Vec3(std::log(0.7 * sx), std::log(0.7 * sy), std::log(0.01));
            b.opacity_logit = logit(0.98);
            const double checker = ((ix / 4 + iy / 4) % 2 == 0) ? 1.0 : 0.7;
            b.color = Vec3(0.45 + 0.3 * std::sin(2.1 * x + phase), 0.45 + 0.3 * std::sin(1.7 * y + 0.5 * phase),
                           0.45 + 0.3 * std::cos(1.3 * (x + y)));
            b.color *= checker;
            scene.backdrop.push_back(b);
        }

    scene.rest_bones = {{kHip, kShoulder}, {kShoulder, kHand}};
    const Vec3 stripes[2][2] = {{Vec3(0.9, 0.2, 0.15), Vec3(0.95, 0.85, 0.2)},
                                {Vec3(0.15, 0.3, 0.9), Vec3(0.92, 0.92, 0.92)}};
    std::normal_distribution<double> radial(0.0, 0.03);
    for (int bone = 0; bone < 2; ++bone) {
        const BoneSegment& seg = scene.rest_bones[bone];
        for (int k = 0; k < c.gaussians_per_bone; ++k) {
            const double t = (k + 0.5) / c.gaussians_per_bone;
            RenderGaussian h;
            h.position = seg.head + t * (seg.tail - seg.head) + Vec3(radial(rng), radial(rng), radial(rng));
            h.log_scale = Vec3::Constant(std::log(0.028));
            h.opacity_logit = logit(0.95);
            h.color = stripes[bone][static_cast<int>(t * 6.0) % 2];
            scene.human.push_back(h);
            scene.human_bone.push_back(bone);
        }
    }
    return scene;
}

SkeletonPose synthetic_pose(const SyntheticConfig& c, std::uint64_t t_us) {
    // Two swing cycles over the sequence at unit speed.
    const double omega = c.motion_speed * 4.0 * std::numbers::pi / total_duration(c);
    const double t = static_cast<double>(t_us);
    const double a0 = c.motion_speed > 0.0 ? kTorsoSwing * std::sin(omega * t) : 0.0;
    const double a1 = c.motion_speed > 0.0 ? kArmSwing * (std::sin(omega * t + kArmPhase) - std::sin(kArmPhase)) : 0.0;
    const Mat4 b0 = rotation_about(kHip, a0);
    const Mat4 b1 = b0 * rotation_about(kShoulder, a1);
    return SkeletonPose::from_bones({b0, b1});
}

PinholeCamera synthetic_camera(const SyntheticConfig& c, std::uint64_t t_us) {
    PinholeCamera cam;
    cam.fx = cam.fy = c.focal;
    cam.cx = 0.5 * (c.width - 1);
    cam.cy = 0.5 * (c.height - 1);
    cam.width = c.width;
    cam.height = c.height;
    const double sway = kCameraSway * c.motion_speed *
                        std::sin(2.0 * std::numbers::pi * static_cast<double>(t_us) / total_duration(c));
    cam.world_to_camera(0, 3) = -sway;
    return cam;
}

RenderedFrame render_synthetic(const SyntheticScene& scene, const PinholeCamera& cam, const SkeletonPose& pose,
                               bool human_only) {
    std::vector<RenderGaussian> all;
    if (!human_only) all = scene.backdrop;
    for (size_t k = 0; k < scene.human.size(); ++k) {
        const Mat4& b = pose.bone_transforms.at(static_cast<size_t>(scene.human_bone[k]));
        RenderGaussian h = scene.human[k];
        h.position = b.block<3, 3>(0, 0) * h.position + b.block<3, 1>(0, 3);
        h.rotation = b.block<3, 3>(0, 0) * h.rotation;
        all.push_back(h);
    }
    Renderer r;
    return r.forward(all, cam, constant_background(cam.width, cam.height, Vec3::Zero()));
}

SceneBundle make_synthetic(const SyntheticConfig& c) {
    const SyntheticScene scene = make_synthetic_scene(c);
    SceneBundle b;
    b.width = c.width;
    b.height = c.height;
    b.contrast = c.contrast;
    b.rest_bones = scene.rest_bones;

    std::mt19937_64 rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> jitter(0.0, c.point_jitter);
    auto add_point = [&](const Vec3& p, std::uint8_t label) {
        const Vec3 q = c.point_jitter > 0.0 ? Vec3(p + Vec3(jitter(rng), jitter(rng), jitter(rng))) : p;
        b.points.positions.push_back(q.cast<float>());
        b.points.labels.push_back(label);
    };
    for (const RenderGaussian& g : scene.backdrop) add_point(g.position, 0);
    for (const RenderGaussian& g : scene.human) add_point(g.position, 1);

    const int s = c.subsamples;
    const std::uint64_t dt = c.frame_period_us / static_cast<std::uint64_t>(s);
    const int total = c.frames * s + 1;
    std::vector<std::uint64_t> times(total);
    for (int n = 0; n < total; ++n) times[n] = static_cast<std::uint64_t>(n) * dt;

    EventSimulator sim(c.contrast);
    std::vector<Image> window;  // linear sharp frames of the current exposure
    for (int n = 0; n < total; ++n) {
        const PinholeCamera cam = synthetic_camera(c, times[n]);
        const SkeletonPose pose = synthetic_pose(c, times[n]);
        const Image linear = srgb_to_linear(render_synthetic(scene, cam, pose).rgb);
        if (n == 0) {
            sim.reset({times[n], linear});
        } else {
            const std::vector<EventRecord> ev = sim.push({times[n], linear});
            b.events.insert(b.events.end(), ev.begin(), ev.end());
        }
        window.push_back(linear);
        if (static_cast<int>(window.size()) < s + 1) continue;

        const int k = static_cast<int>(b.frames.size());
        BundleFrame f;
        const int first = k * s;
        for (int j = 0; j <= s; ++j) {
            f.sample_times.push_back(times[first + j]);
            f.cameras.push_back(synthetic_camera(c, times[first + j]));
            f.poses.push_back(synthetic_pose(c, times[first + j]));
        }
        f.t_start = f.sample_times.front();
        f.t_end = f.sample_times.back();
        f.is_test = (k % c.test_every) >= c.test_every - c.test_per_block;

        const size_t mid = f.mid_index();
        b.sharp_mid.push_back(quantize_float(window[mid]));
        b.blurry.push_back(quantize_8bit(synthesize_blur(window)));
        const RenderedFrame human = render_synthetic(scene, f.cameras[mid], f.poses[mid], true);
        int x0 = c.width, y0 = c.height, x1 = -1, y1 = -1;
        for (int y = 0; y < c.height; ++y)
            for (int x = 0; x < c.width; ++x)
                if (human.accumulated_weight[static_cast<size_t>(y) * c.width + x] > 0.05) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    x1 = std::max(x1, x);
                    y1 = std::max(y1, y);
                }
        if (x1 >= 0) {
            constexpr int pad = 4;
            f.human_box = {std::max(0, x0 - pad), std::max(0, y0 - pad), std::min(c.width - 1, x1 + pad),
                           std::min(c.height - 1, y1 + pad)};
        }
        b.frames.push_back(std::move(f));
        // The last sample of this exposure is the first of the next one.
        window.erase(window.begin(), window.end() - 1);
    }
    return b;
}

}  // namespace evsplat
