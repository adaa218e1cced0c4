#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "evsplat/appearance.hpp"
#include "support.hpp"

using namespace evsplat;
using testing::uniform;

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Vec3(n(rng), n(rng), n(rng)).normalized();
}

void randomize(Mlp& net, std::mt19937_64& rng, double scale) {
    net.for_each_block([&](double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) p[i] = uniform(rng, -scale, scale);
    });
}

// Real SH up to band 3, written out term by term.
VecX sh_reference(const Vec3& d) {
    const double x = d.x(), y = d.y(), z = d.z();
    const double pi = std::numbers::pi;
    VecX v(16);
    v[0] = 0.5 * std::sqrt(1.0 / pi);
    v[1] = std::sqrt(3.0 / (4.0 * pi)) * y;
    v[2] = std::sqrt(3.0 / (4.0 * pi)) * z;
    v[3] = std::sqrt(3.0 / (4.0 * pi)) * x;
    v[4] = 0.5 * std::sqrt(15.0 / pi) * x * y;
    v[5] = 0.5 * std::sqrt(15.0 / pi) * y * z;
    v[6] = 0.25 * std::sqrt(5.0 / pi) * (3.0 * z * z - 1.0);
    v[7] = 0.5 * std::sqrt(15.0 / pi) * x * z;
    v[8] = 0.25 * std::sqrt(15.0 / pi) * (x * x - y * y);
    v[9] = 0.25 * std::sqrt(35.0 / (2.0 * pi)) * y * (3.0 * x * x - y * y);
    v[10] = 0.5 * std::sqrt(105.0 / pi) * x * y * z;
    v[11] = 0.25 * std::sqrt(21.0 / (2.0 * pi)) * y * (5.0 * z * z - 1.0);
    v[12] = 0.25 * std::sqrt(7.0 / pi) * z * (5.0 * z * z - 3.0);
    v[13] = 0.25 * std::sqrt(21.0 / (2.0 * pi)) * x * (5.0 * z * z - 1.0);
    v[14] = 0.25 * std::sqrt(105.0 / pi) * z * (x * x - y * y);
    v[15] = 0.25 * std::sqrt(35.0 / (2.0 * pi)) * x * (x * x - 3.0 * y * y);
    return v;
}

}  // namespace

TEST_SUITE("appearance") {

TEST_CASE("band 0 is the constant 1 / (2 sqrt(pi))") {
    std::mt19937_64 rng(1);
    const double c0 = sh_basis(Vec3(0, 0, 1))[0];
    CHECK(c0 == doctest::Approx(0.28209479).epsilon(1e-8));
    for (int trial = 0; trial < 100; ++trial) CHECK(sh_basis(random_unit(rng))[0] == c0);
}

TEST_CASE("Y_1^0 on the z axis") {
    CHECK(sh_basis(Vec3(0, 0, 1))[2] == doctest::Approx(0.4886025).epsilon(1e-6));
}

TEST_CASE("basis matches the written-out polynomials and is orthonormal") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 d = random_unit(rng);
        CHECK((sh_basis(d) - sh_reference(d)).cwiseAbs().maxCoeff() < 1e-12);
    }
    // Monte Carlo Gram matrix over the sphere.
    const int samples = 200000;
    MatX gram = MatX::Zero(16, 16);
    for (int s = 0; s < samples; ++s) {
        const VecX v = sh_basis(random_unit(rng));
        gram += v * v.transpose();
    }
    gram *= 4.0 * std::numbers::pi / samples;
    CHECK((gram - MatX::Identity(16, 16)).cwiseAbs().maxCoeff() < 0.03);
}

TEST_CASE("odd bands flip sign under d -> -d, even bands do not") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 d = random_unit(rng);
        const VecX a = sh_basis(d), b = sh_basis(-d);
        for (int l = 0; l <= 3; ++l)
            for (int i = l * l; i < (l + 1) * (l + 1); ++i) CHECK(b[i] == doctest::Approx(l % 2 ? -a[i] : a[i]));
    }
}

TEST_CASE("non-unit directions and bad degrees are rejected") {
    CHECK_THROWS_AS(sh_basis(Vec3(0, 0, 1.01)), std::invalid_argument);
    CHECK_THROWS_AS(sh_basis(Vec3(0, 0, 1), 4), std::invalid_argument);
    CHECK(sh_basis(Vec3(1, 0, 0), 0).size() == 1);
    CHECK(sh_basis(Vec3(1, 0, 0), 2).size() == 9);
}

TEST_CASE("sh jacobian matches finite differences") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Vec3 d = random_unit(rng);
        VecX v;
        Eigen::Matrix<double, Eigen::Dynamic, 3> jac;
        sh_basis_with_jacobian(d, 3, v, jac);
        for (int k = 0; k < 3; ++k) {
            Vec3 dp = d, dm = d;
            dp[k] += 1e-6;
            dm[k] -= 1e-6;
            VecX vp, vm;
            Eigen::Matrix<double, Eigen::Dynamic, 3> unused;
            sh_basis_with_jacobian(dp, 3, vp, unused);
            sh_basis_with_jacobian(dm, 3, vm, unused);
            const VecX num = (vp - vm) / 2e-6;
            CHECK((num - jac.col(k)).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("a zero-weight color net outputs mid gray") {
    std::mt19937_64 rng(5);
    ColorNet net = ColorNet::create(16, 3, rng);
    net.mlp.set_zero();
    for (int trial = 0; trial < 20; ++trial) {
        const VecX f = VecX::Random(16);
        CHECK(net.evaluate(f, random_unit(rng)) == Vec3(0.5, 0.5, 0.5));
    }
}

TEST_CASE("colors stay inside the unit cube and are deterministic") {
    std::mt19937_64 rng(6);
    ColorNet net = ColorNet::create(8, 3, rng);
    randomize(net.mlp, rng, 0.8);
    for (int trial = 0; trial < 200; ++trial) {
        const VecX f = VecX::Random(8);
        const Vec3 d = random_unit(rng);
        const Vec3 c = net.evaluate(f, d);
        CHECK(c.minCoeff() > 0.0);
        CHECK(c.maxCoeff() < 1.0);
        CHECK(net.evaluate(f, d) == c);
    }
}

TEST_CASE("color_of routes by hard mask and ignores camera roll") {
    std::mt19937_64 rng(7);
    ColorNet scene = ColorNet::create(16, 3, rng), human = ColorNet::create(16, 3, rng);
    randomize(scene.mlp, rng, 1.0);
    randomize(human.mlp, rng, 1.0);
    SemanticGaussian g;
    g.position = Vec3(0.4, -0.2, 3.0);
    g.color_feature = VecX::Random(16);
    PinholeCamera cam = testing::small_camera(16, 16, 20.0);
    const Vec3 dir = (g.position - cam.center()).normalized();

    g.semantic_logit = -4.0;
    CHECK((color_of(g, cam, scene, human) - scene.evaluate(g.color_feature, dir)).norm() < 1e-15);
    g.semantic_logit = 4.0;
    CHECK((color_of(g, cam, scene, human) - human.evaluate(g.color_feature, dir)).norm() < 1e-15);
    g.semantic_logit = 0.0;
    CHECK((color_of(g, cam, scene, human) - scene.evaluate(g.color_feature, dir)).norm() < 1e-15);

    const Vec3 before = color_of(g, cam, scene, human);
    const Mat3 roll = Eigen::AngleAxisd(0.7, Vec3::UnitZ()).toRotationMatrix();
    cam.world_to_camera.block<3, 3>(0, 0) = roll;
    CHECK((color_of(g, cam, scene, human) - before).norm() < 1e-14);

    SemanticGaussian twin = g;
    CHECK(color_of(twin, cam, scene, human) == color_of(g, cam, scene, human));
}

TEST_CASE("color batch gradients match finite differences") {
    std::mt19937_64 rng(8);
    ColorNet net = ColorNet::create(6, 3, rng, 12);
    randomize(net.mlp, rng, 0.8);
    std::vector<VecX> feats(4);
    std::vector<Vec3> pos(4);
    for (int i = 0; i < 4; ++i) {
        feats[i] = VecX::Random(6);
        pos[i] = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 2, 3));
    }
    const Vec3 center(0.1, -0.2, 0.0);
    MatX up = MatX::Random(4, 3);
    auto loss = [&] {
        ColorBatch b;
        std::vector<const VecX*> fp;
        for (const VecX& f : feats) fp.push_back(&f);
        return (b.forward(fp, pos, center, net, false).array() * up.array()).sum();
    };
    ColorBatch batch;
    std::vector<const VecX*> fp;
    for (const VecX& f : feats) fp.push_back(&f);
    const MatX colors = batch.forward(fp, pos, center, net);
    for (int i = 0; i < 4; ++i) CHECK((colors.row(i).transpose() - net.evaluate(feats[i], (pos[i] - center).normalized())).norm() < 1e-14);
    MlpGradients gnet = net.mlp.zero_gradients();
    std::vector<VecX> gf;
    std::vector<Vec3> gp;
    batch.backward(up, gnet, gf, gp);
    const double h = 1e-5;
    for (int i = 0; i < 4; ++i) {
        for (int k = 0; k < 6; ++k)
            CHECK(testing::relative_error(gf[i][k], testing::central_difference(loss, feats[i][k], h), 1e-8) < 1e-3);
        for (int k = 0; k < 3; ++k)
            CHECK(testing::relative_error(gp[i][k], testing::central_difference(loss, pos[i][k], h), 1e-8) < 1e-3);
    }
    for (size_t l = 0; l < net.mlp.layers.size(); ++l) {
        MatX& w = net.mlp.layers[l].weight;
        for (int r = 0; r < w.rows(); ++r)
            for (int c = 0; c < w.cols(); ++c)
                CHECK(testing::relative_error(gnet.weight[l](r, c), testing::central_difference(loss, w(r, c), h), 1e-8) <
                      1e-3);
    }
}

}  // TEST_SUITE
