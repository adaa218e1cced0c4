#include "evsplat/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace evsplat {

namespace {

struct Footprint {
    int x0, x1, y0, y1;
    bool empty() const { return x1 < x0 || y1 < y0; }
};

Footprint footprint_of(const Vec2& mean, const Mat2& cov, int width, int height, double sigma_extent) {
    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = sigma_extent * std::sqrt(lambda_max);
    Footprint f;
    f.x0 = std::max(0, static_cast<int>(std::ceil(mean.x() - radius)));
    f.x1 = std::min(width - 1, static_cast<int>(std::floor(mean.x() + radius)));
    f.y0 = std::max(0, static_cast<int>(std::ceil(mean.y() - radius)));
    f.y1 = std::min(height - 1, static_cast<int>(std::floor(mean.y() + radius)));
    if (!std::isfinite(radius) || mean.x() + radius < 0 || mean.y() + radius < 0 ||
        mean.x() - radius > width - 1 || mean.y() - radius > height - 1)
        f.x1 = f.x0 - 1;
    return f;
}

struct Projection {
    Vec3 cam_pos;
    Mat3 cov_cam;
    Eigen::Matrix<double, 2, 3> jacobian;
    Vec2 mean2d;
    Mat2 cov2d;
};

Projection project_raw(const RenderGaussian& g, const PinholeCamera& cam, double dilation) {
    Projection p;
    const Mat3 w = cam.rotation();
    p.cam_pos = w * g.position + cam.translation();
    const double x = p.cam_pos.x(), y = p.cam_pos.y(), z = p.cam_pos.z();
    p.mean2d = Vec2(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);
    p.jacobian << cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z);
    const Vec3 var = (2.0 * g.log_scale).array().exp();
    const Mat3 cov_world = g.rotation * var.asDiagonal() * g.rotation.transpose();
    p.cov_cam = w * cov_world * w.transpose();
    p.cov2d = p.jacobian * p.cov_cam * p.jacobian.transpose();
    p.cov2d(0, 0) += dilation;
    p.cov2d(1, 1) += dilation;
    p.cov2d(1, 0) = p.cov2d(0, 1);
    return p;
}

// Squared Mahalanobis distance of a pixel offset under the conic (a, b; b, c).
inline double mahalanobis2(double dx, double dy, double a, double b, double c) {
    return a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
}

struct PixelTerm {
    double alpha;
    bool clamped;
};

// q is the squared Mahalanobis distance; a splat touches a pixel only when q <= sigma_extent^2.
inline PixelTerm pixel_alpha(double q, double opacity, double max_alpha) {
    const double gauss = std::exp(-0.5 * std::max(q, 0.0));
    const double raw = opacity * gauss;
    if (raw > max_alpha) return {max_alpha, true};
    return {raw, false};
}

}  // namespace

RenderGaussian to_render_gaussian(const SemanticGaussian& g, const Vec3& color) {
    RenderGaussian r;
    r.position = g.position;
    r.rotation = quat_to_rot(normalized(g.rotation));
    r.log_scale = g.log_scale;
    r.opacity_logit = g.opacity_logit;
    r.color = color;
    return r;
}

std::optional<Splat2D> project(const RenderGaussian& g, const PinholeCamera& cam, std::size_t source_index,
                               const RenderOptions& opts) {
    const Vec3 cam_pos = cam.rotation() * g.position + cam.translation();
    if (!(cam_pos.z() > opts.near_plane)) return std::nullopt;
    const Projection p = project_raw(g, cam, opts.dilation);
    if (footprint_of(p.mean2d, p.cov2d, cam.width, cam.height, opts.sigma_extent).empty()) return std::nullopt;
    Splat2D s;
    s.mean2d = p.mean2d;
    s.cov2d = p.cov2d;
    s.depth = p.cam_pos.z();
    s.color = g.color;
    s.alpha = sigmoid(g.opacity_logit);
    s.source_index = source_index;
    return s;
}

Image constant_background(int width, int height, const Vec3& color) {
    Image bg(width, height, 3);
    for (size_t p = 0; p < bg.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c) bg.data[3 * p + c] = color[c];
    return bg;
}

void RenderGradients::resize(std::size_t n) {
    position.assign(n, Vec3::Zero());
    rotation.assign(n, Mat3::Zero());
    log_scale.assign(n, Vec3::Zero());
    opacity_logit.assign(n, 0.0);
    color.assign(n, Vec3::Zero());
    mean2d_grad_norm.assign(n, 0.0);
    visible.assign(n, 0);
}

RenderedFrame composite(std::span<const Splat2D> splats, const Image& background, const RenderOptions& opts) {
    if (background.channels != 3) throw std::invalid_argument("composite: background must be RGB");
    const int width = background.width, height = background.height;

    std::vector<size_t> order(splats.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return splats[a].source_index < splats[b].source_index;
    });

    RenderedFrame frame;
    frame.rgb = Image(width, height, 3);
    frame.residual_transmittance.assign(static_cast<size_t>(width) * height, 1.0);
    frame.accumulated_weight.assign(static_cast<size_t>(width) * height, 0.0);
    std::vector<Vec3> accum(static_cast<size_t>(width) * height, Vec3::Zero());

    // Splats are visited in depth order, so per-pixel accumulation is front to back.
    for (size_t idx : order) {
        const Splat2D& s = splats[idx];
        const Footprint f = footprint_of(s.mean2d, s.cov2d, width, height, opts.sigma_extent);
        if (f.empty()) continue;
        const Mat2 conic = s.cov2d.inverse();
        const double e2 = opts.sigma_extent * opts.sigma_extent;
        for (int y = f.y0; y <= f.y1; ++y) {
            for (int x = f.x0; x <= f.x1; ++x) {
                const double q = mahalanobis2(x - s.mean2d.x(), y - s.mean2d.y(), conic(0, 0), conic(0, 1), conic(1, 1));
                if (q > e2) continue;
                const size_t p = static_cast<size_t>(y) * width + x;
                const PixelTerm term = pixel_alpha(q, s.alpha, opts.max_alpha);
                double& t = frame.residual_transmittance[p];
                const double w = term.alpha * t;
                accum[p] += w * s.color;
                frame.accumulated_weight[p] += w;
                t *= 1.0 - term.alpha;
            }
        }
    }
    for (size_t p = 0; p < accum.size(); ++p) {
        const double t = frame.residual_transmittance[p];
        for (int c = 0; c < 3; ++c) frame.rgb.data[3 * p + c] = accum[p][c] + t * background.data[3 * p + c];
    }
    return frame;
}

void Renderer::build_tile_lists() {
    std::vector<size_t> order(splats_.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const Splat2D& sa = splats_[a].splat;
        const Splat2D& sb = splats_[b].splat;
        if (sa.depth != sb.depth) return sa.depth < sb.depth;
        return sa.source_index < sb.source_index;
    });

    tiles_x_ = (cam_.width + kTile - 1) / kTile;
    const int tiles_y = (cam_.height + kTile - 1) / kTile;
    tile_offsets_.assign(static_cast<size_t>(tiles_x_) * tiles_y + 1, 0);
    for (const ProjectedSplat& s : splats_)
        for (int ty = s.y0 / kTile; ty <= s.y1 / kTile; ++ty)
            for (int tx = s.x0 / kTile; tx <= s.x1 / kTile; ++tx) ++tile_offsets_[ty * tiles_x_ + tx + 1];
    std::partial_sum(tile_offsets_.begin(), tile_offsets_.end(), tile_offsets_.begin());
    tile_entries_.assign(tile_offsets_.back(), 0);
    std::vector<size_t> cursor(tile_offsets_.begin(), tile_offsets_.end() - 1);
    for (size_t idx : order) {
        const ProjectedSplat& s = splats_[idx];
        for (int ty = s.y0 / kTile; ty <= s.y1 / kTile; ++ty)
            for (int tx = s.x0 / kTile; tx <= s.x1 / kTile; ++tx)
                tile_entries_[cursor[ty * tiles_x_ + tx]++] = static_cast<int>(idx);
    }
}

RenderedFrame Renderer::forward(std::span<const RenderGaussian> gaussians, const PinholeCamera& cam,
                                const Image& background) {
    cam.validate();
    if (background.width != cam.width || background.height != cam.height || background.channels != 3)
        throw std::invalid_argument("Renderer: background must match the camera resolution");
    recorded_ = false;
    cam_ = cam;
    background_ = background;
    gaussians_.assign(gaussians.begin(), gaussians.end());
    gaussian_count_ = gaussians.size();

    splats_.clear();
    raster_.clear();
    for (size_t i = 0; i < gaussians.size(); ++i) {
        const RenderGaussian& g = gaussians[i];
        const Vec3 cam_pos = cam.rotation() * g.position + cam.translation();
        if (!(cam_pos.z() > opts_.near_plane)) continue;
        const Projection p = project_raw(g, cam, opts_.dilation);
        const Footprint f = footprint_of(p.mean2d, p.cov2d, cam.width, cam.height, opts_.sigma_extent);
        if (f.empty()) continue;
        ProjectedSplat s;
        s.splat.mean2d = p.mean2d;
        s.splat.cov2d = p.cov2d;
        s.splat.depth = p.cam_pos.z();
        s.splat.color = g.color;
        s.splat.alpha = sigmoid(g.opacity_logit);
        s.splat.source_index = i;
        const Mat2 conic = p.cov2d.inverse();
        s.conic_a = conic(0, 0);
        s.conic_b = conic(0, 1);
        s.conic_c = conic(1, 1);
        s.opacity = s.splat.alpha;
        s.x0 = f.x0;
        s.x1 = f.x1;
        s.y0 = f.y0;
        s.y1 = f.y1;
        s.cam_pos = p.cam_pos;
        s.cov_cam = p.cov_cam;
        s.jacobian = p.jacobian;
        splats_.push_back(s);
        raster_.push_back({p.mean2d.x(), p.mean2d.y(), s.conic_a, s.conic_b, s.conic_c, s.opacity, g.color.x(),
                           g.color.y(), g.color.z()});
    }
    build_tile_lists();

    const int width = cam.width, height = cam.height;
    const double e2 = opts_.sigma_extent * opts_.sigma_extent;
    RenderedFrame frame;
    frame.rgb = Image(width, height, 3);
    frame.residual_transmittance.assign(static_cast<size_t>(width) * height, 1.0);
    frame.accumulated_weight.assign(static_cast<size_t>(width) * height, 0.0);
    row_hits_.resize(height);
    pixel_hit_end_.assign(static_cast<size_t>(width) * height, 0);

#pragma omp parallel for schedule(static)
    for (int y = 0; y < height; ++y) {
        std::vector<Hit>& hits = row_hits_[y];
        hits.clear();
        for (int x = 0; x < width; ++x) {
            const size_t p = static_cast<size_t>(y) * width + x;
            const size_t tile = static_cast<size_t>(y / kTile) * tiles_x_ + x / kTile;
            double t = 1.0, wsum = 0.0, cr = 0.0, cg = 0.0, cb = 0.0;
            for (size_t e = tile_offsets_[tile]; e < tile_offsets_[tile + 1]; ++e) {
                const RasterSplat& s = raster_[tile_entries_[e]];
                const double q = mahalanobis2(x - s.mx, y - s.my, s.a, s.b, s.c);
                if (q > e2) continue;
                const PixelTerm term = pixel_alpha(q, s.opacity, opts_.max_alpha);
                hits.push_back({tile_entries_[e], term.clamped, term.alpha});
                const double w = term.alpha * t;
                cr += w * s.r;
                cg += w * s.g;
                cb += w * s.bl;
                wsum += w;
                t *= 1.0 - term.alpha;
            }
            frame.rgb.data[3 * p] = cr + t * background.data[3 * p];
            frame.rgb.data[3 * p + 1] = cg + t * background.data[3 * p + 1];
            frame.rgb.data[3 * p + 2] = cb + t * background.data[3 * p + 2];
            frame.residual_transmittance[p] = t;
            frame.accumulated_weight[p] = wsum;
            pixel_hit_end_[p] = static_cast<std::uint32_t>(hits.size());
        }
    }
    recorded_ = true;
    return frame;
}

RenderGradients Renderer::backward(const Image& grad_rgb) const {
    if (!recorded_) throw std::logic_error("Renderer::backward called before forward");
    if (grad_rgb.width != cam_.width || grad_rgb.height != cam_.height || grad_rgb.channels != 3)
        throw std::invalid_argument("Renderer::backward: gradient image has the wrong shape");

    const int width = cam_.width, height = cam_.height;
    const size_t nsplat = splats_.size();
    constexpr int kSlots = 9;  // mean(2) conic(3) logit(1) color(3)
    const int chunk_rows = std::max(1, opts_.row_chunk);
    const int nchunks = (height + chunk_rows - 1) / chunk_rows;
    std::vector<double> partial(static_cast<size_t>(nchunks) * nsplat * kSlots, 0.0);

#pragma omp parallel for schedule(static)
    for (int chunk = 0; chunk < nchunks; ++chunk) {
        double* acc = partial.data() + static_cast<size_t>(chunk) * nsplat * kSlots;
        std::vector<double> ts;
        const int y_end = std::min(height, (chunk + 1) * chunk_rows);
        for (int y = chunk * chunk_rows; y < y_end; ++y) {
            const std::vector<Hit>& row = row_hits_[y];
            for (int x = 0; x < width; ++x) {
                const size_t p = static_cast<size_t>(y) * width + x;
                const Vec3 g(grad_rgb.data[3 * p], grad_rgb.data[3 * p + 1], grad_rgb.data[3 * p + 2]);
                if (g.isZero(0.0)) continue;
                const size_t begin = x == 0 ? 0 : pixel_hit_end_[p - 1], end = pixel_hit_end_[p];
                const Hit* hits = row.data() + begin;
                const size_t n = end - begin;
                ts.resize(n);
                double t = 1.0;
                for (size_t k = 0; k < n; ++k) {
                    ts[k] = t;
                    t *= 1.0 - hits[k].alpha;
                }
                // behind = g . (color contributed by everything after entry k, background included).
                double behind = t * (g[0] * background_.data[3 * p] + g[1] * background_.data[3 * p + 1] +
                                     g[2] * background_.data[3 * p + 2]);
                for (size_t k = n; k-- > 0;) {
                    const Hit& h = hits[k];
                    const RasterSplat& s = raster_[h.splat];
                    double* slot = acc + static_cast<size_t>(h.splat) * kSlots;
                    const double w = h.alpha * ts[k];
                    slot[6] += w * g[0];
                    slot[7] += w * g[1];
                    slot[8] += w * g[2];
                    const double gc = g[0] * s.r + g[1] * s.g + g[2] * s.bl;
                    const double d_alpha = gc * ts[k] - behind / (1.0 - h.alpha);
                    behind += w * gc;
                    if (h.clamped) continue;
                    const double dx = x - s.mx, dy = y - s.my;
                    const double d_power = d_alpha * h.alpha;
                    slot[0] += d_power * (s.a * dx + s.b * dy);
                    slot[1] += d_power * (s.b * dx + s.c * dy);
                    slot[2] += d_power * (-0.5 * dx * dx);
                    slot[3] += d_power * (-dx * dy);
                    slot[4] += d_power * (-0.5 * dy * dy);
                    // alpha = opacity * gauss, so d alpha / d logit = alpha * (1 - opacity).
                    slot[5] += d_alpha * h.alpha * (1.0 - s.opacity);
                }
            }
        }
    }

    RenderGradients grads;
    grads.resize(gaussian_count_);
    const Mat3 w = cam_.rotation();
    const double fx = cam_.fx, fy = cam_.fy;

#pragma omp parallel for schedule(static)
    for (size_t si = 0; si < nsplat; ++si) {
        double slot[kSlots] = {};
        for (int chunk = 0; chunk < nchunks; ++chunk) {
            const double* src = partial.data() + (static_cast<size_t>(chunk) * nsplat + si) * kSlots;
            for (int k = 0; k < kSlots; ++k) slot[k] += src[k];
        }
        const ProjectedSplat& s = splats_[si];
        const size_t gi = s.splat.source_index;
        const RenderGaussian& src = gaussians_[gi];
        grads.visible[gi] = 1;
        grads.color[gi] = Vec3(slot[6], slot[7], slot[8]);
        grads.opacity_logit[gi] = slot[5];
        grads.mean2d_grad_norm[gi] = std::hypot(slot[0], slot[1]);

        // conic -> cov2d
        Mat2 conic;
        conic << s.conic_a, s.conic_b, s.conic_b, s.conic_c;
        Mat2 g_conic;
        g_conic << slot[2], 0.5 * slot[3], 0.5 * slot[3], slot[4];
        const Mat2 g_cov2d = -conic * g_conic * conic;

        // cov2d = J Sc J^T
        const Mat3 g_cov_cam = s.jacobian.transpose() * g_cov2d * s.jacobian;
        const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov2d * s.jacobian * s.cov_cam;
        const Mat3 g_cov_world = w.transpose() * g_cov_cam * w;

        // cov_world = R D R^T
        const Vec3 var = (2.0 * src.log_scale).array().exp();
        grads.rotation[gi] = 2.0 * g_cov_world * src.rotation * var.asDiagonal();
        const Mat3 rt_g_r = src.rotation.transpose() * g_cov_world * src.rotation;
        for (int k = 0; k < 3; ++k) grads.log_scale[gi][k] = 2.0 * var[k] * rt_g_r(k, k);

        // mean2d and J both depend on the camera-space position.
        const double cx = s.cam_pos.x(), cy = s.cam_pos.y(), cz = s.cam_pos.z();
        const double iz = 1.0 / cz, iz2 = iz * iz, iz3 = iz2 * iz;
        Vec3 g_cam(fx * iz * slot[0], fy * iz * slot[1], -fx * cx * iz2 * slot[0] - fy * cy * iz2 * slot[1]);
        g_cam.z() += g_jac(0, 0) * (-fx * iz2) + g_jac(1, 1) * (-fy * iz2) + g_jac(0, 2) * (2.0 * fx * cx * iz3) +
                     g_jac(1, 2) * (2.0 * fy * cy * iz3);
        g_cam.x() += g_jac(0, 2) * (-fx * iz2);
        g_cam.y() += g_jac(1, 2) * (-fy * iz2);
        grads.position[gi] = w.transpose() * g_cam;
    }
    return grads;
}

}  // namespace evsplat
