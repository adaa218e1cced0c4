#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evsplat/appearance.hpp"
#include "evsplat/deformation.hpp"
#include "evsplat/image.hpp"
#include "evsplat/renderer.hpp"
#include "evsplat/scene.hpp"
#include "evsplat/types.hpp"

namespace evsplat {

struct LearningRates {
    double position = 1.6e-4;
    double rotation = 1e-3;
    double scale = 5e-3;
    double opacity = 5e-2;
    double feature = 2.5e-3;
    double semantic = 2.5e-5;
    double mlp = 1e-3;
};

struct TrainConfig {
    LearningRates lr;
    int iterations = 5000;
    int densify_interval = 200;
    int densify_from = 500;
    int densify_until = 3000;
    /// Mean |dL/d mean2d| (pixels) that triggers clone/split.
    double densify_grad_threshold = 2e-5;
    /// Clone below this fraction of the scene extent, split above.
    double percent_dense = 0.01;
    double prune_opacity = 0.005;
    int max_gaussians = 20000;
    double contrast = 0.2;
    double log_eps = 1e-5;
    double event_weight = 0.1;
    double ssim_weight = 0.2;
    /// Renders averaged per blurry frame; the endpoints are always among them.
    int subframes = 2;
    bool use_event_loss = true;
    bool use_semantic = true;
    double mlp_grad_clip = 10.0;
    std::uint64_t seed = 0;
    int feature_dim = kDefaultFeatureDim;
    int sh_degree = kDefaultShDegree;
    int nonrigid_hidden = 128;
    int skinning_hidden = 64;
    int color_hidden = 64;
    int skinning_init_iterations = 300;
    double initial_opacity = 0.1;
    Vec3 background = Vec3::Zero();
    RenderOptions render;

    void validate() const;
};

/// JSON text with one key per field; parsing starts from the defaults, so partial documents are fine.
std::string config_to_json(const TrainConfig& c);
/// Throws std::invalid_argument on malformed JSON, unknown keys or wrongly typed values.
TrainConfig config_from_json(const std::string& text);

struct AdamBuffer {
    std::vector<double> m;
    std::vector<double> v;
    void resize(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

/// Adam moments for every per-Gaussian field, kept parallel to TrainState::gaussians.
struct GaussianMoments {
    AdamBuffer position, rotation, scale, opacity, feature, semantic;
    void resize(std::size_t n, int feature_dim);
    void erase_and_append(const std::vector<char>& keep, std::size_t appended, int feature_dim);
};

struct DensifyRecord {
    std::int64_t iteration = 0;
    std::size_t before = 0;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
    std::size_t after = 0;
    std::size_t human = 0;
    bool partition_ok = true;
};

struct TrainState {
    TrainConfig config;
    std::vector<SemanticGaussian> gaussians;
    NonRigidNet nonrigid;
    SkinningNet skinning;
    ColorNet scene_color;
    ColorNet human_color;
    GaussianMoments moments;
    AdamBuffer nonrigid_moments, skinning_moments, scene_color_moments, human_color_moments;
    std::int64_t iteration = 0;
    std::vector<double> grad_accum;
    std::vector<int> grad_count;
    /// Hard class (1 = human) each Gaussian, or the ancestor it was split or cloned from, started with.
    std::vector<std::uint8_t> origin_class;
    double scene_extent = 1.0;
    std::vector<DensifyRecord> densify_log;

    /// Throws std::logic_error when parallel arrays disagree with the Gaussian count.
    void check_consistency() const;
};

/// Camera, pose and timestamps of one training interval.
struct FrameSample {
    std::vector<PinholeCamera> cameras;
    std::vector<SkeletonPose> poses;
    std::vector<std::uint64_t> times;
};

/// Picks `subframes` evenly spaced samples of the exposure, always including both endpoints.
FrameSample frame_sample(const BundleFrame& f, int subframes);

struct ForwardResult {
    std::vector<RenderedFrame> renders;  // the M sub-frame renders, first and last are the endpoints
    Image blurred;                       // linear-space mean of the renders, sRGB encoded
    Image delta_log;                     // delta_log_luma(first, last)
};

struct LossBreakdown {
    double photometric = 0.0;
    double l1 = 0.0;
    double ssim = 0.0;
    double event = 0.0;
    double total = 0.0;
};

/// Builds the initial state: Gaussians from the labelled cloud, nets from the seed,
/// skinning weights pre-fit to nearest-bone assignment of the human points.
TrainState initialize_state(const PointCloud& points, const std::vector<BoneSegment>& rest_bones,
                            const TrainConfig& config);

/// Which Gaussians take the human route this step (hard mask, or none without semantics).
std::vector<char> human_route(const TrainState& state);

/// Renders the state under one camera and pose.
RenderedFrame render_state(const TrainState& state, const PinholeCamera& cam, const SkeletonPose& pose);

ForwardResult forward(const TrainState& state, const FrameSample& frame);

/// One optimizer step against a blurry frame and its event map. Densifies on schedule.
LossBreakdown step(TrainState& state, const FrameSample& frame, const Image& blurry_target,
                   const EventMap& event_target);

/// dLoss for every trainable quantity, parallel to TrainState.
struct Gradients {
    std::vector<Vec3> position;
    std::vector<Quat> rotation;
    std::vector<Vec3> log_scale;
    std::vector<double> opacity_logit;
    std::vector<VecX> feature;
    std::vector<double> semantic_logit;
    MlpGradients nonrigid, skinning, scene_color, human_color;
    std::vector<double> mean2d_grad_norm;
    std::vector<int> visible_count;
};

/// Loss and full gradient for one frame; the state is not modified. grads may be null.
LossBreakdown compute_gradients(const TrainState& state, const FrameSample& frame, const Image& blurry_target,
                                const EventMap& event_target, Gradients* grads);

void apply_adam(TrainState& state, const Gradients& grads);
void densify_and_prune(TrainState& state);

struct TrainLogEntry {
    std::int64_t iteration;
    LossBreakdown loss;
    std::size_t gaussians;
};

/// Runs from state.iteration up to config.iterations over the bundle's training frames and
/// returns the loss of every step. on_log fires every log_every steps when set.
std::vector<TrainLogEntry> train(TrainState& state, const SceneBundle& bundle,
                                 const std::function<void(const TrainLogEntry&)>& on_log = {}, int log_every = 100);

struct FrameMetrics {
    std::size_t frame = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double human_psnr = 0.0;
};

struct EvalReport {
    std::vector<FrameMetrics> frames;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_human_psnr = 0.0;
};

/// Sharp mid-exposure renders of the held-out frames against ground truth (both sRGB).
EvalReport evaluate(const TrainState& state, const SceneBundle& bundle);
std::string report_to_json(const EvalReport& r);

}  // namespace evsplat
