#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "evsplat/deformation.hpp"
#include "evsplat/renderer.hpp"
#include "support.hpp"

using namespace evsplat;
using testing::uniform;

namespace {

SemanticGaussian random_gaussian(std::mt19937_64& rng, double spread = 0.3) {
    SemanticGaussian g;
    g.position = Vec3(uniform(rng, -spread, spread), uniform(rng, -spread, spread), uniform(rng, 2.0, 2.6));
    g.rotation = testing::random_quat(rng);
    g.log_scale = Vec3(std::log(uniform(rng, 0.05, 0.15)), std::log(uniform(rng, 0.05, 0.15)),
                       std::log(uniform(rng, 0.05, 0.15)));
    g.opacity_logit = uniform(rng, -0.5, 1.5);
    for (int k = 0; k < g.color_feature.size(); ++k) g.color_feature[k] = uniform(rng, -1, 1);
    g.semantic_logit = 4.0;
    return g;
}

void randomize(Mlp& net, std::mt19937_64& rng, double scale) {
    net.for_each_block([&](double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) p[i] = uniform(rng, -scale, scale);
    });
}

SkeletonPose random_pose(std::mt19937_64& rng, int bones, double angle, double shift) {
    std::vector<Mat4> b;
    for (int i = 0; i < bones; ++i) {
        const Vec3 axis = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
        const Mat3 r = Eigen::AngleAxisd(uniform(rng, -angle, angle), axis).toRotationMatrix();
        b.push_back(testing::rigid(r, Vec3(uniform(rng, -shift, shift), uniform(rng, -shift, shift), 0.0)));
    }
    return SkeletonPose::from_bones(b);
}

}  // namespace

TEST_SUITE("deformation") {

TEST_CASE("a fresh non-rigid net is the identity deformation") {
    std::mt19937_64 rng(1);
    const NonRigidNet net = NonRigidNet::create(12, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const SemanticGaussian g = random_gaussian(rng);
        const VecX z = VecX::Random(12);
        const SemanticGaussian d = deform_nonrigid(g, z, net);
        CHECK(d.position == g.position);
        CHECK((d.rotation - g.rotation).norm() < 1e-15);
        CHECK(d.log_scale == g.log_scale);
        CHECK(d.opacity_logit == g.opacity_logit);
        CHECK(d.color_feature == g.color_feature);
        CHECK(d.semantic_logit == g.semantic_logit);
    }
}

TEST_CASE("a net emitting a constant offset shifts positions by exactly that offset") {
    std::mt19937_64 rng(2);
    NonRigidNet net = NonRigidNet::create(6, rng, 16);
    net.mlp.set_zero();
    net.mlp.layers.back().bias[0] = 0.1;
    const SemanticGaussian g = random_gaussian(rng);
    const SemanticGaussian d = deform_nonrigid(g, VecX::Random(6), net);
    CHECK(d.position == g.position + Vec3(0.1, 0.0, 0.0));
    CHECK((d.rotation - g.rotation).norm() < 1e-15);
}

TEST_CASE("rotation and scale offsets compose as documented") {
    std::mt19937_64 rng(3);
    NonRigidNet net = NonRigidNet::create(6, rng, 16);
    net.mlp.set_zero();
    VecX& bias = net.mlp.layers.back().bias;
    bias.segment<4>(3) = Vec4(0.2, 0.0, 0.0, 0.3);  // added to the identity quaternion
    bias.segment<3>(7) = Vec3(0.1, -0.2, 0.3);
    const SemanticGaussian g = random_gaussian(rng);
    const SemanticGaussian d = deform_nonrigid(g, VecX::Zero(6), net);
    const Quat dq = normalized(Quat(1.2, 0.0, 0.0, 0.3));
    CHECK((d.rotation - normalized(quat_mul(dq, g.rotation))).norm() < 1e-14);
    CHECK((d.log_scale - (g.log_scale + Vec3(0.1, -0.2, 0.3))).norm() < 1e-15);
}

TEST_CASE("identity bones leave every field unchanged") {
    std::mt19937_64 rng(4);
    SkinningNet sk = SkinningNet::create(3, rng);
    const SkeletonPose pose = SkeletonPose::identity(3);
    for (int trial = 0; trial < 50; ++trial) {
        const SemanticGaussian g = random_gaussian(rng);
        const SemanticGaussian o = skin_rigid(g, pose, sk);
        CHECK(o.position == g.position);
        CHECK((o.rotation - g.rotation).norm() < 1e-15);
        CHECK(o.log_scale == g.log_scale);
        CHECK(o.color_feature == g.color_feature);
    }
}

TEST_CASE("a single quarter-turn bone maps x to y") {
    SemanticGaussian g;
    g.position = Vec3(1.0, 0.0, 0.0);
    const Mat3 r = Eigen::AngleAxisd(std::numbers::pi / 2.0, Vec3::UnitZ()).toRotationMatrix();
    const SkeletonPose pose = SkeletonPose::from_bones({testing::rigid(r, Vec3::Zero())});
    const SemanticGaussian o = skin_with_weights(g, pose, VecX::Ones(1));
    CHECK((o.position - Vec3(0.0, 1.0, 0.0)).norm() < 1e-6);
    CHECK(is_orthonormal(quat_to_rot(o.rotation)));
    CHECK((quat_to_rot(o.rotation) - r).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("blending two translations averages them") {
    const SkeletonPose pose = SkeletonPose::from_bones(
        {testing::rigid(Mat3::Identity(), Vec3(1, 0, 0)), testing::rigid(Mat3::Identity(), Vec3(0, 1, 0))});
    SemanticGaussian g;
    g.position = Vec3(0.3, -0.7, 2.0);
    const SemanticGaussian o = skin_with_weights(g, pose, Vec2(0.5, 0.5));
    CHECK((o.position - (g.position + Vec3(0.5, 0.5, 0.0))).norm() < 1e-6);
}

TEST_CASE("blended pure translations equal the weighted mean translation") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int bones = 1 + static_cast<int>(rng() % 5);
        std::vector<Mat4> b;
        VecX w(bones);
        Vec3 mean = Vec3::Zero();
        for (int i = 0; i < bones; ++i) w[i] = uniform(rng, 0.0, 1.0);
        w /= w.sum();
        for (int i = 0; i < bones; ++i) {
            const Vec3 t(uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3));
            b.push_back(testing::rigid(Mat3::Identity(), t));
            mean += w[i] * t;
        }
        const Mat4 t = blend_transforms(w, SkeletonPose::from_bones(b));
        CHECK((t.block<3, 1>(0, 3) - mean).norm() < 1e-6);
        CHECK((t.block<3, 3>(0, 0) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("skinning weights are a softmax") {
    std::mt19937_64 rng(6);
    SkinningNet sk = SkinningNet::create(4, rng);
    randomize(sk.mlp, rng, 2.0);
    for (int trial = 0; trial < 500; ++trial) {
        const VecX w = sk.weights(Vec3(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)));
        CHECK(w.minCoeff() >= 0.0);
        CHECK(std::abs(w.sum() - 1.0) < 1e-6);
    }
}

TEST_CASE("polar rotation recovers the rotation factor") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const Mat3 r = testing::random_rotation(rng);
        Mat3 m = Mat3::Random();
        const Mat3 s = m * m.transpose() + 0.1 * Mat3::Identity();
        const Mat3 got = polar_rotation(r * s);
        CHECK((got - r).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(got.determinant() == doctest::Approx(1.0));
    }
}

TEST_CASE("polar rotation backward matches finite differences") {
    std::mt19937_64 rng(8);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        Mat3 a = testing::random_rotation(rng) * (Mat3::Identity() + 0.3 * Mat3::Random());
        const Mat3 w = Mat3::Random();
        const Mat3 g = polar_rotation_backward(a, polar_rotation(a), w);
        auto f = [&] { return (w.array() * polar_rotation(a).array()).sum(); };
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(testing::relative_error(g(i, j), testing::central_difference(f, a(i, j), h), 1e-5) < 1e-5);
    }
}

TEST_CASE("batch deformation matches the single-Gaussian functions") {
    std::mt19937_64 rng(9);
    NonRigidNet nr = NonRigidNet::create(12, rng, 32);
    randomize(nr.mlp, rng, 0.2);
    SkinningNet sk = SkinningNet::create(2, rng, 16);
    randomize(sk.mlp, rng, 1.0);
    const SkeletonPose pose = random_pose(rng, 2, 0.6, 0.3);
    std::vector<SemanticGaussian> gs;
    for (int i = 0; i < 10; ++i) gs.push_back(random_gaussian(rng));
    std::vector<const SemanticGaussian*> ptr;
    for (const SemanticGaussian& g : gs) ptr.push_back(&g);
    DeformationBatch batch;
    const auto& out = batch.forward(ptr, pose, nr, sk);
    for (size_t i = 0; i < gs.size(); ++i) {
        const SemanticGaussian o = skin_rigid(deform_nonrigid(gs[i], pose.pose_vector, nr), pose, sk);
        CHECK((out.position[i] - o.position).norm() < 1e-12);
        CHECK((out.rotation[i] - quat_to_rot(o.rotation)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((out.log_scale[i] - o.log_scale).norm() < 1e-12);
    }
}

TEST_CASE("non-rigid output gradient wrt first-layer weights matches finite differences") {
    std::mt19937_64 rng(10);
    NonRigidNet nr = NonRigidNet::create(6, rng, 16);
    randomize(nr.mlp, rng, 0.3);
    const SemanticGaussian g = random_gaussian(rng);
    const VecX z = VecX::Random(6);
    const Vec3 probe(0.3, -0.8, 0.5);
    MatX in(1, 9);
    in.block(0, 0, 1, 3) = g.position.transpose();
    in.block(0, 3, 1, 6) = z.transpose();
    Mlp::Cache cache;
    nr.mlp.forward(in, &cache);
    MatX up = MatX::Zero(1, 10);
    up.block(0, 0, 1, 3) = probe.transpose();
    MlpGradients grads = nr.mlp.zero_gradients();
    nr.mlp.backward(cache, up, grads);
    MatX& w0 = nr.mlp.layers.front().weight;
    auto f = [&] { return probe.dot(deform_nonrigid(g, z, nr).position); };
    for (int r = 0; r < w0.rows(); ++r)
        for (int c = 0; c < w0.cols(); ++c)
            CHECK(testing::relative_error(grads.weight[0](r, c), testing::central_difference(f, w0(r, c), 1e-4), 1e-7) <
                  1e-3);
}

TEST_CASE("render-through-deformation gradients match finite differences") {
    std::mt19937_64 rng(11);
    NonRigidNet nr = NonRigidNet::create(12, rng, 16);
    randomize(nr.mlp, rng, 0.1);
    SkinningNet sk = SkinningNet::create(2, rng, 16);
    randomize(sk.mlp, rng, 1.0);
    const SkeletonPose pose = random_pose(rng, 2, 0.3, 0.1);
    std::vector<SemanticGaussian> gs;
    for (int i = 0; i < 3; ++i) gs.push_back(random_gaussian(rng, 0.2));
    const std::vector<Vec3> colors = {Vec3(0.9, 0.1, 0.2), Vec3(0.1, 0.8, 0.3), Vec3(0.2, 0.3, 0.9)};
    const PinholeCamera cam = testing::small_camera(16, 16, 24.0);
    const Image bg = testing::random_image(rng, 16, 16);
    const Image w = testing::random_image(rng, 16, 16, 3, -1.0, 1.0);
    RenderOptions opts;
    opts.sigma_extent = 10.0;  // keep footprint truncation out of the comparison

    auto render_loss = [&](DeformationBatch& batch, Renderer& r) {
        std::vector<const SemanticGaussian*> ptr;
        for (const SemanticGaussian& g : gs) ptr.push_back(&g);
        const auto& out = batch.forward(ptr, pose, nr, sk);
        std::vector<RenderGaussian> rg(gs.size());
        for (size_t i = 0; i < gs.size(); ++i) {
            rg[i].position = out.position[i];
            rg[i].rotation = out.rotation[i];
            rg[i].log_scale = out.log_scale[i];
            rg[i].opacity_logit = gs[i].opacity_logit;
            rg[i].color = colors[i];
        }
        return testing::probe_loss(r.forward(rg, cam, bg), w);
    };
    auto loss = [&] {
        DeformationBatch b;
        Renderer r(opts);
        return render_loss(b, r);
    };

    DeformationBatch batch;
    Renderer r(opts);
    render_loss(batch, r);
    const RenderGradients rg = r.backward(w);
    MlpGradients gnr = nr.mlp.zero_gradients(), gsk = sk.mlp.zero_gradients();
    const auto cg = batch.backward(rg.position, rg.rotation, rg.log_scale, gnr, gsk);

    const double h = 1e-4;
    double worst = 0.0;
    for (size_t i = 0; i < gs.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            worst = std::max(worst, testing::relative_error(cg.position[i][k],
                                                            testing::central_difference(loss, gs[i].position[k], h)));
            worst = std::max(worst, testing::relative_error(cg.log_scale[i][k],
                                                            testing::central_difference(loss, gs[i].log_scale[k], h)));
        }
        for (int k = 0; k < 4; ++k)
            worst = std::max(worst, testing::relative_error(cg.rotation[i][k],
                                                            testing::central_difference(loss, gs[i].rotation[k], h)));
    }
    for (size_t l = 0; l < nr.mlp.layers.size(); ++l) {
        MatX& wt = nr.mlp.layers[l].weight;
        for (int t = 0; t < 6; ++t) {
            const int rr = static_cast<int>(rng() % wt.rows()), cc = static_cast<int>(rng() % wt.cols());
            worst = std::max(worst, testing::relative_error(gnr.weight[l](rr, cc),
                                                            testing::central_difference(loss, wt(rr, cc), h), 1e-7));
        }
    }
    for (size_t l = 0; l < sk.mlp.layers.size(); ++l) {
        VecX& b = sk.mlp.layers[l].bias;
        for (int k = 0; k < b.size(); ++k)
            worst = std::max(worst, testing::relative_error(gsk.bias[l][k], testing::central_difference(loss, b[k], h), 1e-7));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("pose and net size mismatches are rejected") {
    std::mt19937_64 rng(12);
    const NonRigidNet nr = NonRigidNet::create(6, rng, 8);
    CHECK_THROWS_AS(deform_nonrigid(SemanticGaussian{}, VecX::Zero(12), nr), std::invalid_argument);
    const SkinningNet sk = SkinningNet::create(2, rng, 8);
    CHECK_THROWS_AS(skin_rigid(SemanticGaussian{}, SkeletonPose::identity(3), sk), std::invalid_argument);
}

}  // TEST_SUITE
