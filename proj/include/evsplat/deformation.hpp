#pragma once

#include <random>
#include <span>
#include <vector>

#include "evsplat/mlp.hpp"
#include "evsplat/types.hpp"

namespace evsplat {

/// Pose-conditioned offsets: [xyz, pose code] -> [dx(3), dq(4), ds(3)].
/// The last layer starts at zero so the initial deformation is the identity.
struct NonRigidNet {
    Mlp mlp;
    int pose_dim = 0;

    static NonRigidNet create(int pose_dim, std::mt19937_64& rng, int hidden = 128);
};

/// Skinning weight field: xyz -> softmax over bones.
struct SkinningNet {
    Mlp mlp;
    int bones = 0;

    static SkinningNet create(int bones, std::mt19937_64& rng, int hidden = 64);
    VecX weights(const Vec3& x) const;
};

SemanticGaussian deform_nonrigid(const SemanticGaussian& g, const VecX& pose_code, const NonRigidNet& net);
SemanticGaussian skin_rigid(const SemanticGaussian& g_d, const SkeletonPose& pose, const SkinningNet& net);
/// LBS with explicit per-bone weights (skips the skinning net).
SemanticGaussian skin_with_weights(const SemanticGaussian& g_d, const SkeletonPose& pose, const VecX& weights);

/// Sum_b w_b B_b.
Mat4 blend_transforms(const VecX& weights, const SkeletonPose& pose);

/// Rotation factor R of A = R S (S symmetric positive semi-definite), det(R) = +1.
Mat3 polar_rotation(const Mat3& a);
/// dL/dA given dL/dR for R = polar_rotation(A).
Mat3 polar_rotation_backward(const Mat3& a, const Mat3& r, const Mat3& grad_r);

/// Differentiable non-rigid + rigid deformation for a batch of human Gaussians under one pose.
class DeformationBatch {
public:
    struct Output {
        std::vector<Vec3> position;
        std::vector<Mat3> rotation;
        std::vector<Vec3> log_scale;
    };

    /// Canonical inputs are copied; record=false skips everything backward() needs.
    const Output& forward(std::span<const SemanticGaussian* const> canonical, const SkeletonPose& pose,
                          const NonRigidNet& nonrigid, const SkinningNet& skinning, bool record = true);

    struct CanonicalGrads {
        std::vector<Vec3> position;
        std::vector<Quat> rotation;
        std::vector<Vec3> log_scale;
    };

    /// Gradients wrt the canonical parameters; net gradients are accumulated into the given buffers.
    CanonicalGrads backward(std::span<const Vec3> grad_position, std::span<const Mat3> grad_rotation,
                            std::span<const Vec3> grad_log_scale, MlpGradients& nonrigid_grads,
                            MlpGradients& skinning_grads) const;

    const Output& output() const { return out_; }
    std::size_t size() const { return out_.position.size(); }

private:
    const NonRigidNet* nonrigid_ = nullptr;
    const SkinningNet* skinning_ = nullptr;
    SkeletonPose pose_;
    bool recorded_ = false;
    Mlp::Cache nr_cache_, sk_cache_;
    std::vector<Quat> q_canon_, dq_, q_raw_;
    std::vector<Vec3> x_d_;
    MatX weights_;
    std::vector<Mat3> blend_a_, polar_r_, rot_d_;
    Output out_;
};

}  // namespace evsplat
