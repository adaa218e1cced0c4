#include "evsplat/deformation.hpp"

#include <cmath>

namespace evsplat {

namespace {

MatX softmax_rows(const MatX& logits) {
    MatX out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
        out.row(r) = e / e.sum();
    }
    return out;
}

Mat3 skew(const Vec3& a) {
    Mat3 m;
    m << 0.0, -a.z(), a.y(), a.z(), 0.0, -a.x(), -a.y(), a.x(), 0.0;
    return m;
}

}  // namespace

NonRigidNet NonRigidNet::create(int pose_dim, std::mt19937_64& rng, int hidden) {
    NonRigidNet net;
    net.pose_dim = pose_dim;
    net.mlp = Mlp({3 + pose_dim, hidden, hidden, 10}, Activation::Elu, Activation::Linear, rng, true);
    return net;
}

SkinningNet SkinningNet::create(int bones, std::mt19937_64& rng, int hidden) {
    SkinningNet net;
    net.bones = bones;
    net.mlp = Mlp({3, hidden, bones}, Activation::Elu, Activation::Linear, rng);
    return net;
}

VecX SkinningNet::weights(const Vec3& x) const {
    MatX in(1, 3);
    in.row(0) = x.transpose();
    return softmax_rows(mlp.forward(in)).row(0).transpose();
}

SemanticGaussian deform_nonrigid(const SemanticGaussian& g, const VecX& pose_code, const NonRigidNet& net) {
    if (pose_code.size() != net.pose_dim) throw std::invalid_argument("deform_nonrigid: pose code length mismatch");
    MatX in(1, 3 + net.pose_dim);
    in.block(0, 0, 1, 3) = g.position.transpose();
    in.block(0, 3, 1, net.pose_dim) = pose_code.transpose();
    const VecX out = net.mlp.forward(in).row(0).transpose();
    SemanticGaussian d = g;
    d.position = g.position + out.segment<3>(0);
    const Quat dq = identity_quat() + out.segment<4>(3);
    d.rotation = normalized(quat_mul(dq, g.rotation));
    d.log_scale = g.log_scale + out.segment<3>(7);
    return d;
}

Mat4 blend_transforms(const VecX& weights, const SkeletonPose& pose) {
    if (weights.size() != pose.bone_count()) throw std::invalid_argument("blend_transforms: bone count mismatch");
    // Relative to the first bone, so identical bones blend exactly to themselves.
    const Mat4& base = pose.bone_transforms[0];
    Mat4 t = base;
    for (int b = 1; b < pose.bone_count(); ++b) t += weights[b] * (pose.bone_transforms[b] - base);
    return t;
}

Mat3 polar_rotation(const Mat3& a) {
    Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    const Mat3 v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    return u * v.transpose();
}

Mat3 polar_rotation_backward(const Mat3& a, const Mat3& r, const Mat3& grad_r) {
    // dR = R [w]x with (tr(S) I - S) w = vee(R^T dA - dA^T R).
    Mat3 s = r.transpose() * a;
    s = 0.5 * (s + s.transpose());
    const Mat3 m = r.transpose() * grad_r;
    const Vec3 h(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
    const Mat3 k = s.trace() * Mat3::Identity() - s;
    const Vec3 w = k.ldlt().solve(h);
    return r * skew(w);
}

SemanticGaussian skin_with_weights(const SemanticGaussian& g_d, const SkeletonPose& pose, const VecX& weights) {
    const Mat4 t = blend_transforms(weights, pose);
    const Mat3 a = t.block<3, 3>(0, 0);
    SemanticGaussian o = g_d;
    o.position = a * g_d.position + t.block<3, 1>(0, 3);
    const Mat3 r = polar_rotation(a);
    if (r != Mat3::Identity()) o.rotation = rot_to_quat(r * quat_to_rot(normalized(g_d.rotation)));
    return o;
}

SemanticGaussian skin_rigid(const SemanticGaussian& g_d, const SkeletonPose& pose, const SkinningNet& net) {
    if (net.bones != pose.bone_count()) throw std::invalid_argument("skin_rigid: bone count mismatch");
    return skin_with_weights(g_d, pose, net.weights(g_d.position));
}

const DeformationBatch::Output& DeformationBatch::forward(std::span<const SemanticGaussian* const> canonical,
                                                          const SkeletonPose& pose, const NonRigidNet& nonrigid,
                                                          const SkinningNet& skinning, bool record) {
    if (nonrigid.pose_dim != pose.pose_vector.size())
        throw std::invalid_argument("DeformationBatch: pose code length mismatch");
    if (skinning.bones != pose.bone_count()) throw std::invalid_argument("DeformationBatch: bone count mismatch");
    nonrigid_ = &nonrigid;
    skinning_ = &skinning;
    pose_ = pose;
    recorded_ = record;
    const Eigen::Index n = static_cast<Eigen::Index>(canonical.size());
    const int pdim = nonrigid.pose_dim;

    MatX nr_in(n, 3 + pdim);
    for (Eigen::Index i = 0; i < n; ++i) {
        nr_in.block(i, 0, 1, 3) = canonical[i]->position.transpose();
        nr_in.block(i, 3, 1, pdim) = pose.pose_vector.transpose();
    }
    const MatX nr_out = nonrigid.mlp.forward(nr_in, record ? &nr_cache_ : nullptr);

    q_canon_.resize(n);
    dq_.resize(n);
    q_raw_.resize(n);
    x_d_.resize(n);
    rot_d_.resize(n);
    out_.position.resize(n);
    out_.rotation.resize(n);
    out_.log_scale.resize(n);
    MatX sk_in(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const SemanticGaussian& g = *canonical[i];
        q_canon_[i] = g.rotation;
        x_d_[i] = g.position + nr_out.block<1, 3>(i, 0).transpose();
        dq_[i] = identity_quat() + nr_out.block<1, 4>(i, 3).transpose();
        q_raw_[i] = quat_mul(dq_[i], g.rotation);
        rot_d_[i] = quat_to_rot(normalized(q_raw_[i]));
        out_.log_scale[i] = g.log_scale + nr_out.block<1, 3>(i, 7).transpose();
        sk_in.row(i) = x_d_[i].transpose();
    }
    weights_ = softmax_rows(skinning.mlp.forward(sk_in, record ? &sk_cache_ : nullptr));

    blend_a_.resize(n);
    polar_r_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Mat4 t = blend_transforms(weights_.row(i).transpose(), pose);
        blend_a_[i] = t.block<3, 3>(0, 0);
        polar_r_[i] = polar_rotation(blend_a_[i]);
        out_.position[i] = blend_a_[i] * x_d_[i] + t.block<3, 1>(0, 3);
        out_.rotation[i] = polar_r_[i] * rot_d_[i];
    }
    return out_;
}

DeformationBatch::CanonicalGrads DeformationBatch::backward(std::span<const Vec3> grad_position,
                                                            std::span<const Mat3> grad_rotation,
                                                            std::span<const Vec3> grad_log_scale,
                                                            MlpGradients& nonrigid_grads,
                                                            MlpGradients& skinning_grads) const {
    if (!recorded_) throw std::logic_error("DeformationBatch::backward without a recorded forward");
    const size_t n = size();
    if (grad_position.size() != n || grad_rotation.size() != n || grad_log_scale.size() != n)
        throw std::invalid_argument("DeformationBatch::backward: gradient count mismatch");
    const int bones = pose_.bone_count();

    CanonicalGrads out;
    out.position.resize(n);
    out.rotation.resize(n);
    out.log_scale.resize(n);
    std::vector<Vec3> g_xd(n);
    MatX g_logits(n, bones);
    MatX g_nr(n, 10);

    for (size_t i = 0; i < n; ++i) {
        const Mat3 g_rp = grad_rotation[i] * rot_d_[i].transpose();
        const Mat3 g_rd = polar_r_[i].transpose() * grad_rotation[i];
        const Mat3 g_a = grad_position[i] * x_d_[i].transpose() +
                         polar_rotation_backward(blend_a_[i], polar_r_[i], g_rp);
        g_xd[i] = blend_a_[i].transpose() * grad_position[i];

        VecX g_w(bones);
        for (int b = 0; b < bones; ++b) {
            const Mat4& bone = pose_.bone_transforms[b];
            g_w[b] = (g_a.array() * bone.block<3, 3>(0, 0).array()).sum() + grad_position[i].dot(bone.block<3, 1>(0, 3));
        }
        const double wg = weights_.row(i).dot(g_w.transpose());
        for (int b = 0; b < bones; ++b) g_logits(i, b) = weights_(i, b) * (g_w[b] - wg);

        const Quat unit = normalized(q_raw_[i]);
        const Quat g_unit = quat_to_rot_backward(unit, g_rd);
        const Quat g_raw = normalize_backward(q_raw_[i], g_unit);
        Quat g_dq, g_qc;
        quat_mul_backward(dq_[i], q_canon_[i], g_raw, g_dq, g_qc);
        out.rotation[i] = g_qc;
        out.log_scale[i] = grad_log_scale[i];
        g_nr.block<1, 4>(i, 3) = g_dq.transpose();
        g_nr.block<1, 3>(i, 7) = grad_log_scale[i].transpose();
    }

    const MatX g_sk_in = skinning_->mlp.backward(sk_cache_, g_logits, skinning_grads);
    for (size_t i = 0; i < n; ++i) {
        g_xd[i] += g_sk_in.row(i).transpose();
        g_nr.block<1, 3>(i, 0) = g_xd[i].transpose();
    }
    const MatX g_nr_in = nonrigid_->mlp.backward(nr_cache_, g_nr, nonrigid_grads);
    for (size_t i = 0; i < n; ++i) out.position[i] = g_xd[i] + g_nr_in.block<1, 3>(i, 0).transpose();
    return out;
}

}  // namespace evsplat
