#include "evsplat/appearance.hpp"

#include <cmath>
#include <numbers>

#include "evsplat/semantics.hpp"

namespace evsplat {

namespace {

const double kPi = std::numbers::pi;
const double kC0 = 0.5 * std::sqrt(1.0 / kPi);
const double kC1 = std::sqrt(3.0 / (4.0 * kPi));
const double kC2a = 0.5 * std::sqrt(15.0 / kPi);
const double kC20 = 0.25 * std::sqrt(5.0 / kPi);
const double kC22 = 0.25 * std::sqrt(15.0 / kPi);
const double kC33 = 0.25 * std::sqrt(35.0 / (2.0 * kPi));
const double kC32 = 0.5 * std::sqrt(105.0 / kPi);
const double kC31 = 0.25 * std::sqrt(21.0 / (2.0 * kPi));
const double kC30 = 0.25 * std::sqrt(7.0 / kPi);
const double kC3m = 0.25 * std::sqrt(105.0 / kPi);

}  // namespace

// Homogeneous polynomial forms (equal to the usual ones on the unit sphere) so the
// Jacobian below is exact for whatever direction is fed in.
void sh_basis_with_jacobian(const Vec3& d, int degree, VecX& v, Eigen::Matrix<double, Eigen::Dynamic, 3>& j) {
    if (degree < 0 || degree > 3) throw std::invalid_argument("sh_basis: degree must be in [0, 3]");
    const int k = sh_basis_size(degree);
    v.resize(k);
    j.setZero(k, 3);
    const double x = d.x(), y = d.y(), z = d.z();
    v[0] = kC0;
    if (degree >= 1) {
        v[1] = kC1 * y;
        j(1, 1) = kC1;
        v[2] = kC1 * z;
        j(2, 2) = kC1;
        v[3] = kC1 * x;
        j(3, 0) = kC1;
    }
    if (degree >= 2) {
        v[4] = kC2a * x * y;
        j.row(4) << kC2a * y, kC2a * x, 0.0;
        v[5] = kC2a * y * z;
        j.row(5) << 0.0, kC2a * z, kC2a * y;
        v[6] = kC20 * (2 * z * z - x * x - y * y);
        j.row(6) << -2 * kC20 * x, -2 * kC20 * y, 4 * kC20 * z;
        v[7] = kC2a * x * z;
        j.row(7) << kC2a * z, 0.0, kC2a * x;
        v[8] = kC22 * (x * x - y * y);
        j.row(8) << 2 * kC22 * x, -2 * kC22 * y, 0.0;
    }
    if (degree >= 3) {
        v[9] = kC33 * y * (3 * x * x - y * y);
        j.row(9) << 6 * kC33 * x * y, kC33 * (3 * x * x - 3 * y * y), 0.0;
        v[10] = kC32 * x * y * z;
        j.row(10) << kC32 * y * z, kC32 * x * z, kC32 * x * y;
        v[11] = kC31 * y * (4 * z * z - x * x - y * y);
        j.row(11) << -2 * kC31 * x * y, kC31 * (4 * z * z - x * x - 3 * y * y), 8 * kC31 * y * z;
        v[12] = kC30 * z * (2 * z * z - 3 * x * x - 3 * y * y);
        j.row(12) << -6 * kC30 * x * z, -6 * kC30 * y * z, kC30 * (6 * z * z - 3 * x * x - 3 * y * y);
        v[13] = kC31 * x * (4 * z * z - x * x - y * y);
        j.row(13) << kC31 * (4 * z * z - 3 * x * x - y * y), -2 * kC31 * x * y, 8 * kC31 * x * z;
        v[14] = kC3m * z * (x * x - y * y);
        j.row(14) << 2 * kC3m * x * z, -2 * kC3m * y * z, kC3m * (x * x - y * y);
        v[15] = kC33 * x * (x * x - 3 * y * y);
        j.row(15) << kC33 * (3 * x * x - 3 * y * y), -6 * kC33 * x * y, 0.0;
    }
}

VecX sh_basis(const Vec3& d, int degree) {
    if (!d.allFinite() || std::abs(d.norm() - 1.0) > 1e-6)
        throw std::invalid_argument("sh_basis: direction must be a unit vector");
    VecX v;
    Eigen::Matrix<double, Eigen::Dynamic, 3> j;
    sh_basis_with_jacobian(d, degree, v, j);
    return v;
}

ColorNet ColorNet::create(int feature_dim, int sh_degree, std::mt19937_64& rng, int hidden) {
    ColorNet net;
    net.feature_dim = feature_dim;
    net.sh_degree = sh_degree;
    net.mlp = Mlp({feature_dim + sh_basis_size(sh_degree), hidden, 3}, Activation::Elu, Activation::Sigmoid, rng);
    return net;
}

Vec3 ColorNet::evaluate(const VecX& feature, const Vec3& view_dir) const {
    if (feature.size() != feature_dim) throw std::invalid_argument("ColorNet: feature length mismatch");
    const int k = sh_basis_size(sh_degree);
    MatX in(1, feature_dim + k);
    in.block(0, 0, 1, feature_dim) = feature.transpose();
    in.block(0, feature_dim, 1, k) = sh_basis(view_dir, sh_degree).transpose();
    return mlp.forward(in).row(0).transpose();
}

Vec3 color_of(const SemanticGaussian& g, const PinholeCamera& cam, const ColorNet& scene_net,
              const ColorNet& human_net) {
    const Vec3 d = (g.position - cam.center()).normalized();
    return (hard_mask(g.semantic_logit) ? human_net : scene_net).evaluate(g.color_feature, d);
}

const MatX& ColorBatch::forward(const std::vector<const VecX*>& features, std::span<const Vec3> positions,
                                const Vec3& camera_center, const ColorNet& net, bool record) {
    if (features.size() != positions.size()) throw std::invalid_argument("ColorBatch: input count mismatch");
    net_ = &net;
    recorded_ = record;
    const Eigen::Index n = static_cast<Eigen::Index>(features.size());
    const int f = net.feature_dim, k = sh_basis_size(net.sh_degree);
    MatX in(n, f + k);
    offsets_.resize(n);
    jacobians_.resize(record ? n : 0);
    VecX basis;
    Eigen::Matrix<double, Eigen::Dynamic, 3> jac;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (features[i]->size() != f) throw std::invalid_argument("ColorBatch: feature length mismatch");
        offsets_[i] = positions[i] - camera_center;
        sh_basis_with_jacobian(offsets_[i].normalized(), net.sh_degree, basis, jac);
        in.block(i, 0, 1, f) = features[i]->transpose();
        in.block(i, f, 1, k) = basis.transpose();
        if (record) jacobians_[i] = jac;
    }
    colors_ = net.mlp.forward(in, record ? &cache_ : nullptr);
    return colors_;
}

void ColorBatch::backward(const MatX& grad_color, MlpGradients& net_grads, std::vector<VecX>& grad_feature,
                          std::vector<Vec3>& grad_position) const {
    if (!recorded_) throw std::logic_error("ColorBatch::backward without a recorded forward");
    const MatX g_in = net_->mlp.backward(cache_, grad_color, net_grads);
    const Eigen::Index n = g_in.rows();
    const int f = net_->feature_dim, k = sh_basis_size(net_->sh_degree);
    grad_feature.resize(n);
    grad_position.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        grad_feature[i] = g_in.block(i, 0, 1, f).transpose();
        const Vec3 g_dir = jacobians_[i].transpose() * g_in.block(i, f, 1, k).transpose();
        const double len = offsets_[i].norm();
        const Vec3 dir = offsets_[i] / len;
        grad_position[i] = (g_dir - dir * dir.dot(g_dir)) / len;
    }
}

}  // namespace evsplat
