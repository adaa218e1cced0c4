#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace evsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Quaternions are stored (w, x, y, z).
using Quat = Vec4;

inline constexpr int kDefaultFeatureDim = 16;
inline constexpr double kMinScale = 1e-7;
inline constexpr double kMaxScale = 1e3;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Quat identity_quat();
Quat quat_mul(const Quat& a, const Quat& b);
Quat normalized(const Quat& q);
/// Backward of q -> q/|q|: maps the gradient wrt the unit quaternion to the raw one.
Quat normalize_backward(const Quat& q, const Quat& grad_unit);
/// Rotation matrix of a unit quaternion.
Mat3 quat_to_rot(const Quat& q);
/// Gradient wrt the (unit) quaternion components given dL/dR.
Quat quat_to_rot_backward(const Quat& q, const Mat3& grad_rot);
Quat rot_to_quat(const Mat3& r);
/// Gradients of quat_mul(a, b) wrt a and b given dL/d(a*b).
void quat_mul_backward(const Quat& a, const Quat& b, const Quat& grad_out, Quat& grad_a, Quat& grad_b);

bool is_orthonormal(const Mat3& r, double tol = 1e-6);

/// One 3D Gaussian primitive with a learnable human/scene logit.
struct SemanticGaussian {
    Vec3 position = Vec3::Zero();
    Quat rotation = identity_quat();
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    VecX color_feature = VecX::Zero(kDefaultFeatureDim);
    double semantic_logit = 0.0;

    /// Throws std::invalid_argument when a field breaks its invariant.
    void validate() const;
};

/// R diag(exp(2 s)) R^T.
Mat3 covariance_of(const SemanticGaussian& g);
Mat3 covariance_from(const Quat& rotation, const Vec3& log_scale);
double opacity_of(const SemanticGaussian& g);

struct PinholeCamera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 1, height = 1;
    Mat4 world_to_camera = Mat4::Identity();

    Mat3 rotation() const { return world_to_camera.block<3, 3>(0, 0); }
    Vec3 translation() const { return world_to_camera.block<3, 1>(0, 3); }
    /// Camera center in world coordinates.
    Vec3 center() const { return -rotation().transpose() * translation(); }
    void validate() const;
};

/// Per-frame bone transforms plus the pose code fed to the non-rigid net.
struct SkeletonPose {
    std::vector<Mat4> bone_transforms;
    VecX pose_vector;

    /// Builds a pose whose code is the 6D rotation encoding of each bone.
    static SkeletonPose from_bones(std::vector<Mat4> bones);
    static SkeletonPose identity(int bones);
    int bone_count() const { return static_cast<int>(bone_transforms.size()); }
    void validate() const;
};

/// First two rotation columns of every bone, concatenated (6 values per bone).
VecX encode_pose(const std::vector<Mat4>& bones);

struct EventRecord {
    std::uint64_t t = 0;  // microseconds
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t p = 1;

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

/// Polarity-signed accumulation of events over [t_start, t_end).
struct EventMap {
    int width = 0;
    int height = 0;
    std::vector<double> values;
    std::uint64_t t_start = 0;
    std::uint64_t t_end = 0;

    EventMap() = default;
    EventMap(int w, int h, std::uint64_t t0, std::uint64_t t1)
        : width(w), height(h), values(static_cast<size_t>(w) * h, 0.0), t_start(t0), t_end(t1) {}
    double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
};

}  // namespace evsplat
