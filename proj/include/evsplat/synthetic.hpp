#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evsplat/renderer.hpp"
#include "evsplat/scene.hpp"

namespace evsplat {

struct SyntheticConfig {
    std::uint64_t seed = 0;
    int frames = 30;
    /// Scales both the limb swing frequency and the camera sway; 0 freezes everything.
    double motion_speed = 1.0;
    int width = 256;
    int height = 256;
    double focal = 300.0;
    /// Sharp renders per exposure interval (each blurry frame averages subsamples + 1 of them).
    int subsamples = 8;
    std::uint64_t frame_period_us = 40000;
    double contrast = 0.2;
    /// Within every block of test_every frames, the last test_per_block are held out.
    int test_every = 10;
    int test_per_block = 3;
    int backdrop_grid = 40;
    int gaussians_per_bone = 100;
    /// Standard deviation of the noise added to the initial point cloud (meters).
    double point_jitter = 0.005;

    void validate() const;
};

/// Parses a JSON object of SyntheticConfig fields over the defaults. Throws std::invalid_argument on
/// malformed JSON, unknown keys or wrongly typed values; does not validate ranges.
SyntheticConfig synthetic_config_from_json(const std::string& text);

/// Ground-truth scene: a textured backdrop plane and a two-bone striped figure in front of it.
struct SyntheticScene {
    std::vector<RenderGaussian> backdrop;
    /// Canonical (rest pose) human Gaussians and the bone each one is rigidly attached to.
    std::vector<RenderGaussian> human;
    std::vector<int> human_bone;
    std::vector<BoneSegment> rest_bones;
};

SyntheticScene make_synthetic_scene(const SyntheticConfig& config);

/// Bone transforms of the figure at time t (microseconds) and the camera at that time.
SkeletonPose synthetic_pose(const SyntheticConfig& config, std::uint64_t t_us);
PinholeCamera synthetic_camera(const SyntheticConfig& config, std::uint64_t t_us);

/// Renders the ground truth at one instant (sRGB). human_only drops the backdrop.
RenderedFrame render_synthetic(const SyntheticScene& scene, const PinholeCamera& cam, const SkeletonPose& pose,
                               bool human_only = false);

/// Full bundle: point cloud, cameras, poses, blurry frames (8-bit), sharp mid-exposure
/// frames (float), and the event stream of the dense sharp sequence. Deterministic in the seed.
SceneBundle make_synthetic(const SyntheticConfig& config);

}  // namespace evsplat
