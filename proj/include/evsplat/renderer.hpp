#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "evsplat/image.hpp"
#include "evsplat/types.hpp"

namespace evsplat {

struct RenderOptions {
    double near_plane = 0.01;
    /// Added to cov2d (px^2) before inversion.
    double dilation = 0.3;
    double max_alpha = 0.999;
    double sigma_extent = 3.0;
    /// Rows per work chunk. Gradient reduction order depends on this, never on thread count.
    int row_chunk = 16;
};

/// A Gaussian already placed in world space, with its color resolved.
struct RenderGaussian {
    Vec3 position = Vec3::Zero();
    Mat3 rotation = Mat3::Identity();
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Zero();
};

RenderGaussian to_render_gaussian(const SemanticGaussian& g, const Vec3& color);

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    double alpha = 0.0;
    std::size_t source_index = 0;
};

/// EWA projection. Returns nullopt when culled (behind the near plane or off-screen).
std::optional<Splat2D> project(const RenderGaussian& g, const PinholeCamera& cam, std::size_t source_index = 0,
                               const RenderOptions& opts = {});

struct RenderedFrame {
    Image rgb;
    /// T_final per pixel.
    std::vector<double> residual_transmittance;
    /// Sum of compositing weights alpha_i * T_i per pixel.
    std::vector<double> accumulated_weight;
};

/// Front-to-back compositing of already projected splats over a per-pixel background.
RenderedFrame composite(std::span<const Splat2D> splats, const Image& background, const RenderOptions& opts = {});

Image constant_background(int width, int height, const Vec3& color);

struct RenderGradients {
    std::vector<Vec3> position;
    std::vector<Mat3> rotation;
    std::vector<Vec3> log_scale;
    std::vector<double> opacity_logit;
    std::vector<Vec3> color;
    /// |dL/d mean2d| in pixels; zero for culled Gaussians.
    std::vector<double> mean2d_grad_norm;
    std::vector<char> visible;

    void resize(std::size_t n);
};

/// Differentiable splatting renderer. forward() records what backward() needs.
class Renderer {
public:
    explicit Renderer(RenderOptions opts = {}) : opts_(opts) {}

    RenderedFrame forward(std::span<const RenderGaussian> gaussians, const PinholeCamera& cam,
                          const Image& background);
    /// Reverse-mode gradients for the last forward(); throws std::logic_error if none happened.
    RenderGradients backward(const Image& grad_rgb) const;

    bool has_forward() const { return recorded_; }
    const RenderOptions& options() const { return opts_; }

private:
    struct ProjectedSplat {
        Splat2D splat;
        double conic_a = 0, conic_b = 0, conic_c = 0;
        double opacity = 0;
        int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
        Vec3 cam_pos = Vec3::Zero();
        Mat3 cov_cam = Mat3::Zero();
        Eigen::Matrix<double, 2, 3> jacobian = Eigen::Matrix<double, 2, 3>::Zero();
    };

    // Hot data read per pixel, kept apart from the per-splat chain-rule state.
    struct RasterSplat {
        double mx, my, a, b, c, opacity, r, g, bl;
    };

    RenderOptions opts_;
    bool recorded_ = false;
    std::size_t gaussian_count_ = 0;
    PinholeCamera cam_;
    Image background_;
    std::vector<RenderGaussian> gaussians_;
    std::vector<ProjectedSplat> splats_;
    std::vector<RasterSplat> raster_;
    // Depth-ordered splat lists per kTile x kTile pixel tile.
    static constexpr int kTile = 8;
    int tiles_x_ = 0;
    std::vector<std::size_t> tile_offsets_;
    std::vector<int> tile_entries_;
    // Forward records every (pixel, splat) hit in compositing order so backward can replay it.
    struct Hit {
        std::int32_t splat;
        std::int32_t clamped;
        double alpha;
    };
    std::vector<std::vector<Hit>> row_hits_;
    std::vector<std::uint32_t> pixel_hit_end_;

    void build_tile_lists();
};

}  // namespace evsplat
