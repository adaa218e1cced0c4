#include "evsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "evsplat/event_sim.hpp"
#include "evsplat/losses.hpp"
#include "evsplat/semantics.hpp"

namespace evsplat {

using nlohmann::json;

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;
constexpr double kBlurFloor = 1e-8;
constexpr double kSplitShrink = 1.6;
const double kMinLogScale = std::log(kMinScale) + 1e-6;
const double kMaxLogScale = std::log(kMaxScale) - 1e-6;

std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b)};
    return std::mt19937_64(seq);
}

// ---------------------------------------------------------------- config json

void set_int(const json& v, const std::string& key, int& out) {
    if (!v.is_number_integer()) throw std::invalid_argument("config: '" + key + "' must be an integer");
    out = v.get<int>();
}

void set_double(const json& v, const std::string& key, double& out) {
    if (!v.is_number()) throw std::invalid_argument("config: '" + key + "' must be a number");
    out = v.get<double>();
}

void set_bool(const json& v, const std::string& key, bool& out) {
    if (!v.is_boolean()) throw std::invalid_argument("config: '" + key + "' must be true or false");
    out = v.get<bool>();
}

using Setter = std::function<void(const json&)>;

void apply_object(const json& obj, const std::string& where, const std::map<std::string, Setter>& setters) {
    if (!obj.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const auto s = setters.find(it.key());
        if (s == setters.end()) throw std::invalid_argument("config: unknown key '" + where + it.key() + "'");
        s->second(it.value());
    }
}

// ---------------------------------------------------------------- posing

// Render inputs for every Gaussian under one camera and pose, with what backward needs.
struct PosedScene {
    std::vector<std::size_t> human, scene;
    DeformationBatch deform;
    ColorBatch human_color, scene_color;
    std::vector<RenderGaussian> render;
    // The route each Gaussian did not take; only filled when asked for.
    std::vector<RenderGaussian> alternate;
};

std::vector<const VecX*> features_of(const TrainState& s, const std::vector<std::size_t>& idx) {
    std::vector<const VecX*> f(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) f[k] = &s.gaussians[idx[k]].color_feature;
    return f;
}

// Scene route values for the given Gaussians: canonical geometry, scene color net.
void scene_route(const TrainState& s, const std::vector<std::size_t>& idx, const Vec3& center, bool record,
                 ColorBatch& colors, std::vector<RenderGaussian>& out) {
    if (idx.empty()) return;
    std::vector<Vec3> pos(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) pos[k] = s.gaussians[idx[k]].position;
    const MatX& c = colors.forward(features_of(s, idx), pos, center, s.scene_color, record);
    for (size_t k = 0; k < idx.size(); ++k) {
        const SemanticGaussian& g = s.gaussians[idx[k]];
        RenderGaussian& r = out[idx[k]];
        r.position = g.position;
        r.rotation = quat_to_rot(normalized(g.rotation));
        r.log_scale = g.log_scale;
        r.opacity_logit = g.opacity_logit;
        r.color = c.row(static_cast<Eigen::Index>(k)).transpose();
    }
}

// Human route: non-rigid offsets, skinning, human color net at the posed position.
void human_route_values(const TrainState& s, const std::vector<std::size_t>& idx, const Vec3& center,
                        const SkeletonPose& pose, bool record, DeformationBatch& deform, ColorBatch& colors,
                        std::vector<RenderGaussian>& out) {
    if (idx.empty()) return;
    std::vector<const SemanticGaussian*> canon(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) canon[k] = &s.gaussians[idx[k]];
    const DeformationBatch::Output& d = deform.forward(canon, pose, s.nonrigid, s.skinning, record);
    const MatX& c = colors.forward(features_of(s, idx), d.position, center, s.human_color, record);
    for (size_t k = 0; k < idx.size(); ++k) {
        RenderGaussian& r = out[idx[k]];
        r.position = d.position[k];
        r.rotation = d.rotation[k];
        r.log_scale = d.log_scale[k];
        r.opacity_logit = canon[k]->opacity_logit;
        r.color = c.row(static_cast<Eigen::Index>(k)).transpose();
    }
}

void pose_scene(const TrainState& s, const std::vector<char>& route, const PinholeCamera& cam,
                const SkeletonPose& pose, bool record, bool with_alternate, PosedScene& out) {
    const size_t n = s.gaussians.size();
    out.human.clear();
    out.scene.clear();
    for (size_t i = 0; i < n; ++i) (route[i] ? out.human : out.scene).push_back(i);
    out.render.assign(n, RenderGaussian{});
    const Vec3 center = cam.center();
    human_route_values(s, out.human, center, pose, record, out.deform, out.human_color, out.render);
    scene_route(s, out.scene, center, record, out.scene_color, out.render);
    if (with_alternate) {
        out.alternate.assign(n, RenderGaussian{});
        DeformationBatch d;
        ColorBatch hc, sc;
        human_route_values(s, out.scene, center, pose, false, d, hc, out.alternate);
        scene_route(s, out.human, center, false, sc, out.alternate);
    }
}

// (mean_j R_j^2.2)^(1/2.2): blur formed in linear light, re-encoded.
Image blur_composite(const std::vector<RenderedFrame>& renders) {
    const Image& first = renders.front().rgb;
    Image out(first.width, first.height, first.channels);
    const double inv = 1.0 / static_cast<double>(renders.size());
    for (size_t i = 0; i < out.data.size(); ++i) {
        double acc = 0.0;
        for (const RenderedFrame& r : renders) acc += std::pow(std::max(r.rgb.data[i], 0.0), kGamma);
        out.data[i] = std::pow(std::max(acc * inv, kBlurFloor), 1.0 / kGamma);
    }
    return out;
}

void blur_composite_backward(const std::vector<RenderedFrame>& renders, const Image& grad_blur,
                             std::vector<Image>& grad_renders) {
    const double inv = 1.0 / static_cast<double>(renders.size());
    for (size_t i = 0; i < grad_blur.data.size(); ++i) {
        double acc = 0.0;
        for (const RenderedFrame& r : renders) acc += std::pow(std::max(r.rgb.data[i], 0.0), kGamma);
        const double mean = acc * inv;
        if (mean < kBlurFloor) continue;
        const double outer = grad_blur.data[i] * std::pow(mean, 1.0 / kGamma - 1.0) * inv;
        for (size_t j = 0; j < renders.size(); ++j)
            grad_renders[j].data[i] += outer * std::pow(std::max(renders[j].rgb.data[i], 0.0), kGamma - 1.0);
    }
}

void check_frame(const TrainState& s, const FrameSample& frame) {
    const size_t m = frame.cameras.size();
    if (m < 2 || frame.poses.size() != m || frame.times.size() != m)
        throw std::invalid_argument("frame needs matching cameras, poses and times (at least two)");
    for (const PinholeCamera& c : frame.cameras) c.validate();
    for (const SkeletonPose& p : frame.poses)
        if (p.bone_count() != s.skinning.bones)
            throw std::invalid_argument("frame pose bone count does not match the skinning net");
}

// ---------------------------------------------------------------- adam

void adam_update(double& p, double g, double& m, double& v, double lr, double bc1, double bc2) {
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g * g;
    p -= lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
}

void adam_mlp(Mlp& net, const MlpGradients& g, AdamBuffer& buf, double lr, double gscale, double bc1,
              double bc2) {
    size_t offset = 0;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        DenseLayer& layer = net.layers[l];
        double* w = layer.weight.data();
        const double* gw = g.weight[l].data();
        for (Eigen::Index k = 0; k < layer.weight.size(); ++k, ++offset)
            adam_update(w[k], gw[k] * gscale, buf.m[offset], buf.v[offset], lr, bc1, bc2);
        double* b = layer.bias.data();
        const double* gb = g.bias[l].data();
        for (Eigen::Index k = 0; k < layer.bias.size(); ++k, ++offset)
            adam_update(b[k], gb[k] * gscale, buf.m[offset], buf.v[offset], lr, bc1, bc2);
    }
}

template <typename T>
void compact(std::vector<T>& values, const std::vector<char>& keep, size_t stride) {
    size_t out = 0;
    for (size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        for (size_t k = 0; k < stride; ++k) values[out * stride + k] = values[i * stride + k];
        ++out;
    }
    values.resize(out * stride);
}

void compact_buffer(AdamBuffer& b, const std::vector<char>& keep, size_t stride, size_t appended) {
    compact(b.m, keep, stride);
    compact(b.v, keep, stride);
    b.m.resize(b.m.size() + appended * stride, 0.0);
    b.v.resize(b.v.size() + appended * stride, 0.0);
}

// Cross-entropy fit of the skinning field to nearest-bone labels of the human points.
void pretrain_skinning(SkinningNet& net, const std::vector<Vec3>& points, const std::vector<BoneSegment>& bones,
                       int iterations) {
    if (points.empty() || iterations <= 0 || bones.size() < 2) return;
    const Eigen::Index n = static_cast<Eigen::Index>(points.size());
    MatX x(n, 3);
    std::vector<int> label(points.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = points[i].transpose();
        double best = std::numeric_limits<double>::infinity();
        for (size_t b = 0; b < bones.size(); ++b) {
            const Vec3 seg = bones[b].tail - bones[b].head;
            const double len2 = seg.squaredNorm();
            const double t = len2 > 0.0 ? std::clamp((points[i] - bones[b].head).dot(seg) / len2, 0.0, 1.0) : 0.0;
            const double d = (points[i] - (bones[b].head + t * seg)).squaredNorm();
            if (d < best) {
                best = d;
                label[i] = static_cast<int>(b);
            }
        }
    }
    AdamBuffer buf;
    buf.resize(net.mlp.parameter_count());
    constexpr double lr = 1e-2;
    for (int it = 1; it <= iterations; ++it) {
        Mlp::Cache cache;
        const MatX logits = net.mlp.forward(x, &cache);
        MatX g(n, logits.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            const VecX row = logits.row(i).transpose();
            const VecX e = (row.array() - row.maxCoeff()).exp();
            g.row(i) = (e / e.sum()).transpose();
            g(i, label[i]) -= 1.0;
        }
        g /= static_cast<double>(n);
        MlpGradients grads = net.mlp.zero_gradients();
        net.mlp.backward(cache, g, grads);
        adam_mlp(net.mlp, grads, buf, lr, 1.0, 1.0 - std::pow(kBeta1, it), 1.0 - std::pow(kBeta2, it));
    }
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("invalid train config: ") + what);
    };
    require(lr.position >= 0 && lr.rotation >= 0 && lr.scale >= 0 && lr.opacity >= 0 && lr.feature >= 0 &&
                lr.semantic >= 0 && lr.mlp >= 0,
            "learning rates must be non-negative");
    require(iterations >= 0, "iterations must be non-negative");
    require(densify_interval > 0, "densify_interval must be positive");
    require(densify_from >= 0 && densify_until >= densify_from, "densify window is empty");
    require(densify_grad_threshold > 0, "densify_grad_threshold must be positive");
    require(percent_dense > 0, "percent_dense must be positive");
    require(prune_opacity >= 0 && prune_opacity < 1, "prune_opacity must lie in [0, 1)");
    require(max_gaussians > 0, "max_gaussians must be positive");
    require(contrast > 0, "contrast must be positive");
    require(log_eps > 0, "log_eps must be positive");
    require(event_weight >= 0, "event_weight must be non-negative");
    require(ssim_weight >= 0 && ssim_weight <= 1, "ssim_weight must lie in [0, 1]");
    require(subframes >= 2, "subframes must be at least 2");
    require(mlp_grad_clip > 0, "mlp_grad_clip must be positive");
    require(feature_dim > 0, "feature_dim must be positive");
    require(sh_degree >= 0 && sh_degree <= 3, "sh_degree must be 0..3");
    require(nonrigid_hidden > 0 && skinning_hidden > 0 && color_hidden > 0, "hidden sizes must be positive");
    require(skinning_init_iterations >= 0, "skinning_init_iterations must be non-negative");
    require(initial_opacity > 0 && initial_opacity < 1, "initial_opacity must lie in (0, 1)");
    require(background.allFinite() && background.minCoeff() >= 0 && background.maxCoeff() <= 1,
            "background must lie in [0, 1]");
    require(render.near_plane > 0 && render.dilation >= 0 && render.max_alpha > 0 && render.max_alpha < 1 &&
                render.sigma_extent > 0 && render.row_chunk > 0,
            "render options out of range");
}

std::string config_to_json(const TrainConfig& c) {
    json j;
    j["lr"] = {{"position", c.lr.position}, {"rotation", c.lr.rotation}, {"scale", c.lr.scale},
               {"opacity", c.lr.opacity},   {"feature", c.lr.feature},   {"semantic", c.lr.semantic},
               {"mlp", c.lr.mlp}};
    j["iterations"] = c.iterations;
    j["densify_interval"] = c.densify_interval;
    j["densify_from"] = c.densify_from;
    j["densify_until"] = c.densify_until;
    j["densify_grad_threshold"] = c.densify_grad_threshold;
    j["percent_dense"] = c.percent_dense;
    j["prune_opacity"] = c.prune_opacity;
    j["max_gaussians"] = c.max_gaussians;
    j["contrast"] = c.contrast;
    j["log_eps"] = c.log_eps;
    j["event_weight"] = c.event_weight;
    j["ssim_weight"] = c.ssim_weight;
    j["subframes"] = c.subframes;
    j["use_event_loss"] = c.use_event_loss;
    j["use_semantic"] = c.use_semantic;
    j["mlp_grad_clip"] = c.mlp_grad_clip;
    j["seed"] = c.seed;
    j["feature_dim"] = c.feature_dim;
    j["sh_degree"] = c.sh_degree;
    j["nonrigid_hidden"] = c.nonrigid_hidden;
    j["skinning_hidden"] = c.skinning_hidden;
    j["color_hidden"] = c.color_hidden;
    j["skinning_init_iterations"] = c.skinning_init_iterations;
    j["initial_opacity"] = c.initial_opacity;
    j["background"] = {c.background.x(), c.background.y(), c.background.z()};
    j["render"] = {{"near_plane", c.render.near_plane},     {"dilation", c.render.dilation},
                   {"max_alpha", c.render.max_alpha},       {"sigma_extent", c.render.sigma_extent},
                   {"row_chunk", c.render.row_chunk}};
    return j.dump(2);
}

TrainConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
    }
    TrainConfig c;
    auto d = [](double& field, const char* key) {
        return std::pair<std::string, Setter>(key, [&field, key](const json& v) { set_double(v, key, field); });
    };
    auto i = [](int& field, const char* key) {
        return std::pair<std::string, Setter>(key, [&field, key](const json& v) { set_int(v, key, field); });
    };
    auto b = [](bool& field, const char* key) {
        return std::pair<std::string, Setter>(key, [&field, key](const json& v) { set_bool(v, key, field); });
    };
    const std::map<std::string, Setter> lr_keys{
        d(c.lr.position, "position"), d(c.lr.rotation, "rotation"), d(c.lr.scale, "scale"),
        d(c.lr.opacity, "opacity"),   d(c.lr.feature, "feature"),   d(c.lr.semantic, "semantic"),
        d(c.lr.mlp, "mlp")};
    const std::map<std::string, Setter> render_keys{
        d(c.render.near_plane, "near_plane"), d(c.render.dilation, "dilation"), d(c.render.max_alpha, "max_alpha"),
        d(c.render.sigma_extent, "sigma_extent"), i(c.render.row_chunk, "row_chunk")};
    const std::map<std::string, Setter> top{
        {"lr", [&](const json& v) { apply_object(v, "lr.", lr_keys); }},
        {"render", [&](const json& v) { apply_object(v, "render.", render_keys); }},
        i(c.iterations, "iterations"),
        i(c.densify_interval, "densify_interval"),
        i(c.densify_from, "densify_from"),
        i(c.densify_until, "densify_until"),
        d(c.densify_grad_threshold, "densify_grad_threshold"),
        d(c.percent_dense, "percent_dense"),
        d(c.prune_opacity, "prune_opacity"),
        i(c.max_gaussians, "max_gaussians"),
        d(c.contrast, "contrast"),
        d(c.log_eps, "log_eps"),
        d(c.event_weight, "event_weight"),
        d(c.ssim_weight, "ssim_weight"),
        i(c.subframes, "subframes"),
        b(c.use_event_loss, "use_event_loss"),
        b(c.use_semantic, "use_semantic"),
        d(c.mlp_grad_clip, "mlp_grad_clip"),
        {"seed",
         [&](const json& v) {
             if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
                 throw std::invalid_argument("config: 'seed' must be a non-negative integer");
             c.seed = v.get<std::uint64_t>();
         }},
        i(c.feature_dim, "feature_dim"),
        i(c.sh_degree, "sh_degree"),
        i(c.nonrigid_hidden, "nonrigid_hidden"),
        i(c.skinning_hidden, "skinning_hidden"),
        i(c.color_hidden, "color_hidden"),
        i(c.skinning_init_iterations, "skinning_init_iterations"),
        d(c.initial_opacity, "initial_opacity"),
        {"background",
         [&](const json& v) {
             if (!v.is_array() || v.size() != 3)
                 throw std::invalid_argument("config: 'background' must be an array of 3 numbers");
             for (int k = 0; k < 3; ++k) set_double(v[k], "background", c.background[k]);
         }},
    };
    apply_object(j, "", top);
    c.validate();
    return c;
}

// ---------------------------------------------------------------- state

void GaussianMoments::resize(std::size_t n, int feature_dim) {
    position.resize(3 * n);
    rotation.resize(4 * n);
    scale.resize(3 * n);
    opacity.resize(n);
    feature.resize(static_cast<size_t>(feature_dim) * n);
    semantic.resize(n);
}

void GaussianMoments::erase_and_append(const std::vector<char>& keep, std::size_t appended, int feature_dim) {
    compact_buffer(position, keep, 3, appended);
    compact_buffer(rotation, keep, 4, appended);
    compact_buffer(scale, keep, 3, appended);
    compact_buffer(opacity, keep, 1, appended);
    compact_buffer(feature, keep, static_cast<size_t>(feature_dim), appended);
    compact_buffer(semantic, keep, 1, appended);
}

void TrainState::check_consistency() const {
    const size_t n = gaussians.size();
    const size_t f = static_cast<size_t>(config.feature_dim);
    auto ok = [](const AdamBuffer& b, size_t len) { return b.m.size() == len && b.v.size() == len; };
    if (!ok(moments.position, 3 * n) || !ok(moments.rotation, 4 * n) || !ok(moments.scale, 3 * n) ||
        !ok(moments.opacity, n) || !ok(moments.feature, f * n) || !ok(moments.semantic, n))
        throw std::logic_error("optimizer moments out of sync with the Gaussian list");
    if (grad_accum.size() != n || grad_count.size() != n || origin_class.size() != n)
        throw std::logic_error("densification statistics out of sync with the Gaussian list");
    if (!ok(nonrigid_moments, nonrigid.mlp.parameter_count()) ||
        !ok(skinning_moments, skinning.mlp.parameter_count()) ||
        !ok(scene_color_moments, scene_color.mlp.parameter_count()) ||
        !ok(human_color_moments, human_color.mlp.parameter_count()))
        throw std::logic_error("network moments out of sync with the network sizes");
}

TrainState initialize_state(const PointCloud& points, const std::vector<BoneSegment>& rest_bones,
                            const TrainConfig& config) {
    config.validate();
    if (rest_bones.empty()) throw std::invalid_argument("initialize_state: at least one bone is required");
    if (points.labels.size() != points.positions.size())
        throw std::invalid_argument("initialize_state: every point needs a label");
    TrainState s;
    s.config = config;
    std::mt19937_64 rng = seeded_rng(config.seed, 0x5eed);
    const int bones = static_cast<int>(rest_bones.size());
    s.nonrigid = NonRigidNet::create(6 * bones, rng, config.nonrigid_hidden);
    s.skinning = SkinningNet::create(bones, rng, config.skinning_hidden);
    s.scene_color = ColorNet::create(config.feature_dim, config.sh_degree, rng, config.color_hidden);
    s.human_color = ColorNet::create(config.feature_dim, config.sh_degree, rng, config.color_hidden);

    const size_t n = points.size();
    std::vector<Vec3> pos(n);
    for (size_t i = 0; i < n; ++i) pos[i] = points.positions[i].cast<double>();

    // Initial scale: mean distance to the three nearest neighbours.
    std::vector<double> knn(n, 0.01);
    for (size_t i = 0; i < n; ++i) {
        double best[3] = {1e30, 1e30, 1e30};
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = (pos[i] - pos[j]).squaredNorm();
            if (d < best[2]) {
                best[2] = d;
                std::sort(best, best + 3);
            }
        }
        double acc = 0.0;
        int cnt = 0;
        for (double d : best)
            if (d < 1e29) {
                acc += std::sqrt(d);
                ++cnt;
            }
        if (cnt > 0 && acc > 0.0) knn[i] = acc / cnt;
    }

    std::normal_distribution<double> feat(0.0, 0.1);
    const double opacity_logit = std::log(config.initial_opacity / (1.0 - config.initial_opacity));
    s.gaussians.resize(n);
    std::vector<Vec3> human_points;
    Vec3 centroid = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
        SemanticGaussian& g = s.gaussians[i];
        g.position = pos[i];
        g.rotation = identity_quat();
        g.log_scale = Vec3::Constant(std::clamp(std::log(knn[i]), kMinLogScale, kMaxLogScale));
        g.opacity_logit = opacity_logit;
        g.color_feature = VecX(config.feature_dim);
        for (Eigen::Index k = 0; k < g.color_feature.size(); ++k) g.color_feature[k] = feat(rng);
        const double logit = init_semantic(points.labels[i]);
        g.semantic_logit = config.use_semantic ? logit : -kSemanticInitLogit;
        if (config.use_semantic && points.labels[i] == 1) human_points.push_back(pos[i]);
        centroid += pos[i];
    }
    if (n > 0) {
        centroid /= static_cast<double>(n);
        double radius = 0.0;
        for (const Vec3& p : pos) radius = std::max(radius, (p - centroid).norm());
        s.scene_extent = radius > 0.0 ? 1.1 * radius : 1.0;
    }
    pretrain_skinning(s.skinning, human_points, rest_bones, config.skinning_init_iterations);

    s.moments.resize(n, config.feature_dim);
    s.nonrigid_moments.resize(s.nonrigid.mlp.parameter_count());
    s.skinning_moments.resize(s.skinning.mlp.parameter_count());
    s.scene_color_moments.resize(s.scene_color.mlp.parameter_count());
    s.human_color_moments.resize(s.human_color.mlp.parameter_count());
    s.grad_accum.assign(n, 0.0);
    s.grad_count.assign(n, 0);
    s.origin_class.resize(n);
    for (size_t i = 0; i < n; ++i) s.origin_class[i] = hard_mask(s.gaussians[i].semantic_logit) ? 1 : 0;
    return s;
}

FrameSample frame_sample(const BundleFrame& f, int subframes) {
    const int samples = static_cast<int>(f.sample_times.size());
    if (samples < 2 || static_cast<int>(f.cameras.size()) != samples || static_cast<int>(f.poses.size()) != samples)
        throw std::invalid_argument("frame_sample: frame needs matching samples (at least two)");
    if (subframes < 2 || subframes > samples)
        throw std::invalid_argument("frame_sample: subframes must lie in [2, samples per frame]");
    FrameSample out;
    const int last = samples - 1;
    for (int j = 0; j < subframes; ++j) {
        const auto k = static_cast<size_t>(std::llround(static_cast<double>(j) * last / (subframes - 1)));
        out.cameras.push_back(f.cameras[k]);
        out.poses.push_back(f.poses[k]);
        out.times.push_back(f.sample_times[k]);
    }
    return out;
}

std::vector<char> human_route(const TrainState& state) {
    std::vector<char> route(state.gaussians.size(), 0);
    if (!state.config.use_semantic) return route;
    for (size_t i = 0; i < route.size(); ++i) route[i] = hard_mask(state.gaussians[i].semantic_logit) ? 1 : 0;
    return route;
}

RenderedFrame render_state(const TrainState& state, const PinholeCamera& cam, const SkeletonPose& pose) {
    cam.validate();
    PosedScene posed;
    pose_scene(state, human_route(state), cam, pose, false, false, posed);
    Renderer r(state.config.render);
    return r.forward(posed.render, cam, constant_background(cam.width, cam.height, state.config.background));
}

ForwardResult forward(const TrainState& state, const FrameSample& frame) {
    check_frame(state, frame);
    ForwardResult out;
    for (size_t j = 0; j < frame.cameras.size(); ++j)
        out.renders.push_back(render_state(state, frame.cameras[j], frame.poses[j]));
    out.blurred = blur_composite(out.renders);
    out.delta_log = delta_log_luma(out.renders.front().rgb, out.renders.back().rgb, state.config.log_eps);
    return out;
}

LossBreakdown compute_gradients(const TrainState& state, const FrameSample& frame, const Image& blurry_target,
                                const EventMap& event_target, Gradients* grads) {
    check_frame(state, frame);
    const TrainConfig& cfg = state.config;
    const size_t n = state.gaussians.size();
    const size_t m = frame.cameras.size();
    const int width = frame.cameras[0].width, height = frame.cameras[0].height;
    if (blurry_target.width != width || blurry_target.height != height || blurry_target.channels != 3)
        throw std::invalid_argument("blurry target does not match the camera resolution");
    const bool use_events = cfg.use_event_loss && cfg.event_weight > 0.0;
    if (use_events && (event_target.width != width || event_target.height != height))
        throw std::invalid_argument("event map does not match the camera resolution");

    const std::vector<char> route = human_route(state);
    const bool semantic_grad = grads && cfg.use_semantic;
    const Image background = constant_background(width, height, cfg.background);

    std::vector<PosedScene> posed(m);
    std::vector<Renderer> renderers(m, Renderer(cfg.render));
    std::vector<RenderedFrame> renders(m);
    for (size_t j = 0; j < m; ++j) {
        pose_scene(state, route, frame.cameras[j], frame.poses[j], grads != nullptr, semantic_grad, posed[j]);
        renders[j] = renderers[j].forward(posed[j].render, frame.cameras[j], background);
    }

    LossBreakdown loss;
    const Image blurred = blur_composite(renders);
    Image grad_blur;
    const PhotometricTerms photo = photometric_loss(blurred, blurry_target, cfg.ssim_weight, grads ? &grad_blur : nullptr);
    loss.photometric = photo.total;
    loss.l1 = photo.l1;
    loss.ssim = photo.ssim;

    std::vector<Image> grad_render;
    if (grads) grad_render.assign(m, Image(width, height, 3));
    if (use_events) {
        const Image delta = delta_log_luma(renders.front().rgb, renders.back().rgb, cfg.log_eps);
        Image grad_delta;
        loss.event = event_loss(delta, event_target, cfg.event_weight, grads ? &grad_delta : nullptr);
        if (grads)
            delta_log_luma_backward(renders.front().rgb, renders.back().rgb, cfg.log_eps, grad_delta,
                                    grad_render.front(), grad_render.back());
    }
    loss.total = loss.photometric + loss.event;
    if (!grads) return loss;

    blur_composite_backward(renders, grad_blur, grad_render);

    Gradients& g = *grads;
    g.position.assign(n, Vec3::Zero());
    g.rotation.assign(n, Quat::Zero());
    g.log_scale.assign(n, Vec3::Zero());
    g.opacity_logit.assign(n, 0.0);
    g.feature.assign(n, VecX::Zero(cfg.feature_dim));
    g.semantic_logit.assign(n, 0.0);
    g.mean2d_grad_norm.assign(n, 0.0);
    g.visible_count.assign(n, 0);
    g.nonrigid = state.nonrigid.mlp.zero_gradients();
    g.skinning = state.skinning.mlp.zero_gradients();
    g.scene_color = state.scene_color.mlp.zero_gradients();
    g.human_color = state.human_color.mlp.zero_gradients();

    std::vector<VecX> g_feat;
    std::vector<Vec3> g_pos;
    for (size_t j = 0; j < m; ++j) {
        const RenderGradients rg = renderers[j].backward(grad_render[j]);
        const PosedScene& p = posed[j];
        for (size_t i = 0; i < n; ++i) {
            g.opacity_logit[i] += rg.opacity_logit[i];
            g.mean2d_grad_norm[i] += rg.mean2d_grad_norm[i];
            g.visible_count[i] += rg.visible[i] ? 1 : 0;
        }

        if (!p.scene.empty()) {
            MatX gc(static_cast<Eigen::Index>(p.scene.size()), 3);
            for (size_t k = 0; k < p.scene.size(); ++k) {
                const size_t i = p.scene[k];
                const Quat& q = state.gaussians[i].rotation;
                g.position[i] += rg.position[i];
                g.rotation[i] += normalize_backward(q, quat_to_rot_backward(normalized(q), rg.rotation[i]));
                g.log_scale[i] += rg.log_scale[i];
                gc.row(static_cast<Eigen::Index>(k)) = rg.color[i].transpose();
            }
            p.scene_color.backward(gc, g.scene_color, g_feat, g_pos);
            for (size_t k = 0; k < p.scene.size(); ++k) {
                g.feature[p.scene[k]] += g_feat[k];
                g.position[p.scene[k]] += g_pos[k];
            }
        }

        if (!p.human.empty()) {
            const size_t h = p.human.size();
            MatX gc(static_cast<Eigen::Index>(h), 3);
            for (size_t k = 0; k < h; ++k) gc.row(static_cast<Eigen::Index>(k)) = rg.color[p.human[k]].transpose();
            p.human_color.backward(gc, g.human_color, g_feat, g_pos);
            std::vector<Vec3> gp(h), gs(h);
            std::vector<Mat3> gr(h);
            for (size_t k = 0; k < h; ++k) {
                const size_t i = p.human[k];
                gp[k] = rg.position[i] + g_pos[k];
                gr[k] = rg.rotation[i];
                gs[k] = rg.log_scale[i];
                g.feature[i] += g_feat[k];
            }
            const DeformationBatch::CanonicalGrads cg = p.deform.backward(gp, gr, gs, g.nonrigid, g.skinning);
            for (size_t k = 0; k < h; ++k) {
                const size_t i = p.human[k];
                g.position[i] += cg.position[k];
                g.rotation[i] += cg.rotation[k];
                g.log_scale[i] += cg.log_scale[k];
            }
        }

        if (semantic_grad) {
            // Straight-through: dL/d(hard mask) is the render-input gradient dotted with
            // (human route - scene route), then scaled by the soft mask slope.
            for (size_t i = 0; i < n; ++i) {
                const RenderGaussian& a = p.render[i];
                const RenderGaussian& b = p.alternate[i];
                const double sign = route[i] ? 1.0 : -1.0;
                const double d = rg.position[i].dot(a.position - b.position) +
                                 (rg.rotation[i].array() * (a.rotation - b.rotation).array()).sum() +
                                 rg.log_scale[i].dot(a.log_scale - b.log_scale) +
                                 rg.color[i].dot(a.color - b.color);
                g.semantic_logit[i] += sign * d * hard_mask_surrogate_grad(state.gaussians[i].semantic_logit);
            }
        }
    }
    return loss;
}

void apply_adam(TrainState& s, const Gradients& g) {
    const TrainConfig& cfg = s.config;
    const size_t n = s.gaussians.size();
    if (g.position.size() != n) throw std::invalid_argument("apply_adam: gradient count mismatch");
    const double t = static_cast<double>(s.iteration + 1);
    const double bc1 = 1.0 - std::pow(kBeta1, t), bc2 = 1.0 - std::pow(kBeta2, t);
    const size_t f = static_cast<size_t>(cfg.feature_dim);
    GaussianMoments& mo = s.moments;

    for (size_t i = 0; i < n; ++i) {
        SemanticGaussian& gs = s.gaussians[i];
        for (int k = 0; k < 3; ++k) {
            adam_update(gs.position[k], g.position[i][k], mo.position.m[3 * i + k], mo.position.v[3 * i + k],
                        cfg.lr.position, bc1, bc2);
            adam_update(gs.log_scale[k], g.log_scale[i][k], mo.scale.m[3 * i + k], mo.scale.v[3 * i + k],
                        cfg.lr.scale, bc1, bc2);
        }
        for (int k = 0; k < 4; ++k)
            adam_update(gs.rotation[k], g.rotation[i][k], mo.rotation.m[4 * i + k], mo.rotation.v[4 * i + k],
                        cfg.lr.rotation, bc1, bc2);
        adam_update(gs.opacity_logit, g.opacity_logit[i], mo.opacity.m[i], mo.opacity.v[i], cfg.lr.opacity, bc1,
                    bc2);
        for (size_t k = 0; k < f; ++k)
            adam_update(gs.color_feature[static_cast<Eigen::Index>(k)], g.feature[i][static_cast<Eigen::Index>(k)],
                        mo.feature.m[f * i + k], mo.feature.v[f * i + k], cfg.lr.feature, bc1, bc2);
        if (cfg.use_semantic)
            adam_update(gs.semantic_logit, g.semantic_logit[i], mo.semantic.m[i], mo.semantic.v[i], cfg.lr.semantic,
                        bc1, bc2);

        const double qn = gs.rotation.norm();
        gs.rotation = qn > 0.0 ? Quat(gs.rotation / qn) : identity_quat();
        for (int k = 0; k < 3; ++k) gs.log_scale[k] = std::clamp(gs.log_scale[k], kMinLogScale, kMaxLogScale);
    }

    const double norm = std::sqrt(g.nonrigid.squared_norm() + g.skinning.squared_norm() +
                                  g.scene_color.squared_norm() + g.human_color.squared_norm());
    const double gscale = norm > cfg.mlp_grad_clip ? cfg.mlp_grad_clip / norm : 1.0;
    adam_mlp(s.nonrigid.mlp, g.nonrigid, s.nonrigid_moments, cfg.lr.mlp, gscale, bc1, bc2);
    adam_mlp(s.skinning.mlp, g.skinning, s.skinning_moments, cfg.lr.mlp, gscale, bc1, bc2);
    adam_mlp(s.scene_color.mlp, g.scene_color, s.scene_color_moments, cfg.lr.mlp, gscale, bc1, bc2);
    adam_mlp(s.human_color.mlp, g.human_color, s.human_color_moments, cfg.lr.mlp, gscale, bc1, bc2);
}

LossBreakdown step(TrainState& state, const FrameSample& frame, const Image& blurry_target,
                   const EventMap& event_target) {
    Gradients g;
    const LossBreakdown loss = compute_gradients(state, frame, blurry_target, event_target, &g);
    if (!std::isfinite(loss.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at iteration " << state.iteration << " (photometric " << loss.photometric
            << ", event " << loss.event << ")";
        throw std::runtime_error(msg.str());
    }
    for (size_t i = 0; i < state.gaussians.size(); ++i) {
        state.grad_accum[i] += g.mean2d_grad_norm[i];
        state.grad_count[i] += g.visible_count[i];
    }
    apply_adam(state, g);
    ++state.iteration;
    const TrainConfig& cfg = state.config;
    if (state.iteration % cfg.densify_interval == 0 && state.iteration >= cfg.densify_from &&
        state.iteration <= cfg.densify_until)
        densify_and_prune(state);
    return loss;
}

void densify_and_prune(TrainState& s) {
    const TrainConfig& cfg = s.config;
    const size_t n = s.gaussians.size();
    DensifyRecord rec;
    rec.iteration = s.iteration;
    rec.before = n;

    std::mt19937_64 rng = seeded_rng(cfg.seed, static_cast<std::uint64_t>(s.iteration), 0xde5);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double dense = cfg.percent_dense * s.scene_extent;
    long budget = static_cast<long>(cfg.max_gaussians) - static_cast<long>(n);

    std::vector<char> keep(n, 1);
    std::vector<SemanticGaussian> added;
    std::vector<size_t> parent_of;
    for (size_t i = 0; i < n && budget > 0; ++i) {
        if (s.grad_count[i] == 0) continue;
        const double avg = s.grad_accum[i] / s.grad_count[i];
        if (avg < cfg.densify_grad_threshold) continue;
        const SemanticGaussian& parent = s.gaussians[i];
        if (std::exp(parent.log_scale.maxCoeff()) <= dense) {
            SemanticGaussian child = parent;
            inherit_on_split(parent, std::span<SemanticGaussian>(&child, 1));
            added.push_back(child);
            parent_of.push_back(i);
            ++rec.cloned;
            --budget;
        } else {
            const Mat3 r = quat_to_rot(normalized(parent.rotation));
            const Vec3 sigma = parent.log_scale.array().exp();
            SemanticGaussian kids[2] = {parent, parent};
            for (SemanticGaussian& c : kids) {
                const Vec3 z(normal(rng), normal(rng), normal(rng));
                c.position = parent.position + r * sigma.cwiseProduct(z);
                c.log_scale = (parent.log_scale.array() - std::log(kSplitShrink)).max(kMinLogScale);
            }
            inherit_on_split(parent, kids);
            for (const SemanticGaussian& c : kids) {
                added.push_back(c);
                parent_of.push_back(i);
            }
            keep[i] = 0;
            ++rec.split;
            --budget;
        }
    }

    bool inherited = true;
    for (size_t k = 0; k < added.size(); ++k)
        inherited = inherited && added[k].semantic_logit == s.gaussians[parent_of[k]].semantic_logit &&
                    hard_mask(added[k].semantic_logit) == hard_mask(s.gaussians[parent_of[k]].semantic_logit);

    std::vector<SemanticGaussian> next;
    next.reserve(n + added.size());
    for (size_t i = 0; i < n; ++i)
        if (keep[i]) next.push_back(std::move(s.gaussians[i]));
    const size_t appended = added.size();
    for (SemanticGaussian& c : added) next.push_back(std::move(c));
    s.gaussians = std::move(next);
    std::vector<std::uint8_t> origin;
    origin.reserve(s.gaussians.size());
    for (size_t i = 0; i < n; ++i)
        if (keep[i]) origin.push_back(s.origin_class[i]);
    for (size_t p : parent_of) origin.push_back(s.origin_class[p]);
    s.origin_class = std::move(origin);
    s.moments.erase_and_append(keep, appended, cfg.feature_dim);

    std::vector<char> alive(s.gaussians.size(), 1);
    for (size_t i = 0; i < s.gaussians.size(); ++i)
        if (opacity_of(s.gaussians[i]) < cfg.prune_opacity) {
            alive[i] = 0;
            ++rec.pruned;
        }
    if (rec.pruned > 0) {
        compact(s.gaussians, alive, 1);
        compact(s.origin_class, alive, 1);
        s.moments.erase_and_append(alive, 0, cfg.feature_dim);
    }

    s.grad_accum.assign(s.gaussians.size(), 0.0);
    s.grad_count.assign(s.gaussians.size(), 0);
    rec.after = s.gaussians.size();

    const GatePartition part = gate(s.gaussians);
    std::vector<int> seen(s.gaussians.size(), 0);
    for (size_t i : part.human) ++seen[i];
    for (size_t i : part.scene) ++seen[i];
    rec.human = part.human.size();
    rec.partition_ok = inherited && part.human.size() + part.scene.size() == s.gaussians.size() &&
                       std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
    s.densify_log.push_back(rec);
    s.check_consistency();
}

std::vector<TrainLogEntry> train(TrainState& state, const SceneBundle& bundle,
                                 const std::function<void(const TrainLogEntry&)>& on_log, int log_every) {
    std::vector<size_t> train_frames;
    for (size_t k = 0; k < bundle.frames.size(); ++k)
        if (!bundle.frames[k].is_test) train_frames.push_back(k);
    if (train_frames.empty()) throw std::invalid_argument("train: the bundle has no training frames");
    if (bundle.blurry.size() != bundle.frames.size())
        throw std::invalid_argument("train: one blurry image per frame is required");

    std::vector<FrameSample> samples;
    std::vector<EventMap> targets;
    for (size_t k : train_frames) {
        const BundleFrame& f = bundle.frames[k];
        samples.push_back(frame_sample(f, state.config.subframes));
        targets.push_back(accumulate(bundle.events, f.t_start, f.t_end, state.config.contrast, bundle.width,
                                     bundle.height));
    }

    std::vector<TrainLogEntry> log;
    while (state.iteration < state.config.iterations) {
        std::mt19937_64 rng = seeded_rng(state.config.seed, static_cast<std::uint64_t>(state.iteration), 0xf7a);
        const size_t pick = std::uniform_int_distribution<size_t>(0, train_frames.size() - 1)(rng);
        const LossBreakdown loss =
            step(state, samples[pick], bundle.blurry[train_frames[pick]], targets[pick]);
        log.push_back({state.iteration, loss, state.gaussians.size()});
        if (on_log && log_every > 0 && state.iteration % log_every == 0) on_log(log.back());
    }
    return log;
}

EvalReport evaluate(const TrainState& state, const SceneBundle& bundle) {
    EvalReport report;
    for (size_t k = 0; k < bundle.frames.size(); ++k) {
        const BundleFrame& f = bundle.frames[k];
        if (!f.is_test) continue;
        if (k >= bundle.sharp_mid.size()) throw std::invalid_argument("evaluate: missing ground-truth frame");
        const size_t mid = f.mid_index();
        const RenderedFrame r = render_state(state, f.cameras.at(mid), f.poses.at(mid));
        const Image truth = linear_to_srgb(bundle.sharp_mid[k]);
        FrameMetrics fm;
        fm.frame = k;
        fm.psnr = psnr(r.rgb, truth);
        fm.ssim = ssim(r.rgb, truth);
        const auto& b = f.human_box;
        fm.human_psnr = (b[2] >= b[0] && b[3] >= b[1]) ? psnr_in_box(r.rgb, truth, b[0], b[1], b[2], b[3]) : fm.psnr;
        report.frames.push_back(fm);
    }
    if (report.frames.empty()) throw std::invalid_argument("evaluate: the bundle has no held-out frames");
    for (const FrameMetrics& fm : report.frames) {
        report.mean_psnr += fm.psnr;
        report.mean_ssim += fm.ssim;
        report.mean_human_psnr += fm.human_psnr;
    }
    const double inv = 1.0 / static_cast<double>(report.frames.size());
    report.mean_psnr *= inv;
    report.mean_ssim *= inv;
    report.mean_human_psnr *= inv;
    return report;
}

std::string report_to_json(const EvalReport& r) {
    json j;
    j["frames"] = json::array();
    for (const FrameMetrics& f : r.frames)
        j["frames"].push_back({{"frame", f.frame}, {"psnr", f.psnr}, {"ssim", f.ssim}, {"human_psnr", f.human_psnr}});
    j["mean_psnr"] = r.mean_psnr;
    j["mean_ssim"] = r.mean_ssim;
    j["mean_human_psnr"] = r.mean_human_psnr;
    return j.dump(2);
}

}  // namespace evsplat
