#pragma once

#include <random>
#include <span>
#include <vector>

#include "evsplat/mlp.hpp"
#include "evsplat/types.hpp"

namespace evsplat {

inline constexpr int kDefaultShDegree = 3;

constexpr int sh_basis_size(int degree) { return (degree + 1) * (degree + 1); }

/// Real spherical harmonics (orthonormal, no Condon-Shortley phase), band-major, m = -l..l.
/// Throws std::invalid_argument unless |d| = 1 within 1e-6 and 0 <= degree <= 3.
VecX sh_basis(const Vec3& d, int degree = kDefaultShDegree);

/// Basis values plus their derivatives wrt the direction components (K x 3), without the unit check.
void sh_basis_with_jacobian(const Vec3& d, int degree, VecX& values, Eigen::Matrix<double, Eigen::Dynamic, 3>& jac);

/// Color MLP over [feature, SH(view direction)] with a sigmoid head.
struct ColorNet {
    Mlp mlp;
    int feature_dim = kDefaultFeatureDim;
    int sh_degree = kDefaultShDegree;

    static ColorNet create(int feature_dim, int sh_degree, std::mt19937_64& rng, int hidden = 64);
    Vec3 evaluate(const VecX& feature, const Vec3& view_dir) const;
};

/// Routes through human_net when the hard mask is 1, scene_net otherwise.
Vec3 color_of(const SemanticGaussian& g, const PinholeCamera& cam, const ColorNet& scene_net,
              const ColorNet& human_net);

/// Differentiable color evaluation for many Gaussians sharing one net and one camera center.
class ColorBatch {
public:
    const MatX& forward(const std::vector<const VecX*>& features, std::span<const Vec3> positions,
                        const Vec3& camera_center, const ColorNet& net, bool record = true);
    /// Accumulates net gradients; fills dL/dfeature and dL/dposition per row.
    void backward(const MatX& grad_color, MlpGradients& net_grads, std::vector<VecX>& grad_feature,
                  std::vector<Vec3>& grad_position) const;
    const MatX& colors() const { return colors_; }

private:
    const ColorNet* net_ = nullptr;
    bool recorded_ = false;
    Mlp::Cache cache_;
    std::vector<Vec3> offsets_;
    std::vector<Eigen::Matrix<double, Eigen::Dynamic, 3>> jacobians_;
    MatX colors_;
};

}  // namespace evsplat
