#include "evsplat/types.hpp"

#include <cmath>
#include <string>

namespace evsplat {

Quat identity_quat() { return Quat(1.0, 0.0, 0.0, 0.0); }

Quat quat_mul(const Quat& a, const Quat& b) {
    return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

void quat_mul_backward(const Quat& a, const Quat& b, const Quat& g, Quat& grad_a, Quat& grad_b) {
    // Each output is bilinear; transpose the coefficient tables.
    grad_a = Quat(g[0] * b[0] + g[1] * b[1] + g[2] * b[2] + g[3] * b[3],
                  -g[0] * b[1] + g[1] * b[0] - g[2] * b[3] + g[3] * b[2],
                  -g[0] * b[2] + g[1] * b[3] + g[2] * b[0] - g[3] * b[1],
                  -g[0] * b[3] - g[1] * b[2] + g[2] * b[1] + g[3] * b[0]);
    grad_b = Quat(g[0] * a[0] + g[1] * a[1] + g[2] * a[2] + g[3] * a[3],
                  -g[0] * a[1] + g[1] * a[0] + g[2] * a[3] - g[3] * a[2],
                  -g[0] * a[2] - g[1] * a[3] + g[2] * a[0] + g[3] * a[1],
                  -g[0] * a[3] + g[1] * a[2] - g[2] * a[1] + g[3] * a[0]);
}

Quat normalized(const Quat& q) {
    const double n = q.norm();
    if (!(n > 0.0)) throw std::invalid_argument("cannot normalize a zero quaternion");
    return q / n;
}

Quat normalize_backward(const Quat& q, const Quat& grad_unit) {
    const double n = q.norm();
    const Quat u = q / n;
    return (grad_unit - u * u.dot(grad_unit)) / n;
}

Mat3 quat_to_rot(const Quat& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Quat quat_to_rot_backward(const Quat& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Quat d;
    d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                w * g(2, 1) - 2 * x * g(2, 2));
    d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                z * g(2, 1) - 2 * y * g(2, 2));
    d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
                x * g(2, 0) + y * g(2, 1));
    return d;
}

Quat rot_to_quat(const Mat3& r) {
    Eigen::Quaterniond q(r);
    Quat out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0.0) out = -out;
    return normalized(out);
}

bool is_orthonormal(const Mat3& r, double tol) {
    return ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol);
}

void SemanticGaussian::validate() const {
    if (!position.allFinite() || !rotation.allFinite() || !log_scale.allFinite() ||
        !std::isfinite(opacity_logit) || !color_feature.allFinite() || !std::isfinite(semantic_logit))
        throw std::invalid_argument("SemanticGaussian has non-finite fields");
    if (std::abs(rotation.norm() - 1.0) > 1e-6)
        throw std::invalid_argument("SemanticGaussian rotation is not a unit quaternion");
    for (int k = 0; k < 3; ++k) {
        const double s = std::exp(log_scale[k]);
        if (!(s > kMinScale && s < kMaxScale))
            throw std::invalid_argument("SemanticGaussian scale out of range");
    }
}

Mat3 covariance_from(const Quat& rotation, const Vec3& log_scale) {
    const Mat3 r = quat_to_rot(normalized(rotation));
    const Vec3 var = (2.0 * log_scale).array().exp();
    return r * var.asDiagonal() * r.transpose();
}

Mat3 covariance_of(const SemanticGaussian& g) { return covariance_from(g.rotation, g.log_scale); }

double opacity_of(const SemanticGaussian& g) { return sigmoid(g.opacity_logit); }

void PinholeCamera::validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera dimensions must be positive");
    if (!world_to_camera.allFinite() || !is_orthonormal(rotation()))
        throw std::invalid_argument("camera rotation is not orthonormal");
}

VecX encode_pose(const std::vector<Mat4>& bones) {
    VecX z(6 * bones.size());
    for (size_t b = 0; b < bones.size(); ++b) {
        const Mat3 r = bones[b].block<3, 3>(0, 0);
        z.segment<3>(6 * b) = r.col(0);
        z.segment<3>(6 * b + 3) = r.col(1);
    }
    return z;
}

SkeletonPose SkeletonPose::from_bones(std::vector<Mat4> bones) {
    SkeletonPose pose;
    pose.pose_vector = encode_pose(bones);
    pose.bone_transforms = std::move(bones);
    return pose;
}

SkeletonPose SkeletonPose::identity(int bones) {
    return from_bones(std::vector<Mat4>(static_cast<size_t>(bones), Mat4::Identity()));
}

void SkeletonPose::validate() const {
    if (bone_transforms.empty()) throw std::invalid_argument("pose needs at least one bone");
    for (size_t b = 0; b < bone_transforms.size(); ++b) {
        const Mat4& t = bone_transforms[b];
        if (!t.allFinite() || !is_orthonormal(t.block<3, 3>(0, 0)))
            throw std::invalid_argument("bone " + std::to_string(b) + " rotation is not orthonormal");
    }
}

}  // namespace evsplat
