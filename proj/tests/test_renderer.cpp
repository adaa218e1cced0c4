#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "evsplat/renderer.hpp"
#include "support.hpp"

using namespace evsplat;
using testing::uniform;

namespace {

Splat2D make_splat(const Vec2& mean, double var, double depth, const Vec3& color, double alpha, size_t index) {
    Splat2D s;
    s.mean2d = mean;
    s.cov2d = Mat2::Identity() * var;
    s.depth = depth;
    s.color = color;
    s.alpha = alpha;
    s.source_index = index;
    return s;
}

}  // namespace

TEST_SUITE("renderer") {

TEST_CASE("projection of an on-axis point lands on the principal point") {
    RenderGaussian g;
    g.position = Vec3(0.0, 0.0, 2.0);
    g.log_scale = Vec3::Constant(std::log(0.01));
    PinholeCamera cam = testing::small_camera(101, 101, 100.0);
    cam.cx = cam.cy = 50.0;
    const auto s = project(g, cam);
    REQUIRE(s.has_value());
    CHECK(s->mean2d.x() == doctest::Approx(50.0));
    CHECK(s->mean2d.y() == doctest::Approx(50.0));
    CHECK(s->depth == doctest::Approx(2.0));
}

TEST_CASE("points behind the camera are culled") {
    RenderGaussian g;
    g.position = Vec3(0.0, 0.0, -1.0);
    CHECK_FALSE(project(g, testing::small_camera(16, 16, 10.0)).has_value());
    g.position = Vec3(0.0, 0.0, 0.005);
    CHECK_FALSE(project(g, testing::small_camera(16, 16, 10.0)).has_value());
}

TEST_CASE("footprints that miss the image are culled") {
    RenderGaussian g;
    g.position = Vec3(50.0, 0.0, 2.0);
    g.log_scale = Vec3::Constant(std::log(0.01));
    CHECK_FALSE(project(g, testing::small_camera(16, 16, 10.0)).has_value());
}

TEST_CASE("isotropic covariance projects to (f sigma / z)^2 plus the dilation") {
    RenderGaussian g;
    const double sigma = 0.05, z = 2.5, f = 120.0;
    g.position = Vec3(0.0, 0.0, z);
    g.log_scale = Vec3::Constant(std::log(sigma));
    RenderOptions opts;
    const auto s = project(g, testing::small_camera(64, 64, f), 0, opts);
    REQUIRE(s.has_value());
    const double expected = std::pow(f * sigma / z, 2) + opts.dilation;
    CHECK(s->cov2d(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(s->cov2d(1, 1) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(s->cov2d(0, 1)) < 1e-12);
}

TEST_CASE("projected covariance keeps eigenvalues at or above the dilation") {
    std::mt19937_64 rng(17);
    const PinholeCamera cam = testing::small_camera(32, 32, 40.0);
    for (const RenderGaussian& g : testing::random_render_scene(rng, 200)) {
        RenderGaussian thin = g;
        thin.log_scale = Vec3(std::log(1e-6), std::log(1e-6), std::log(1e-6));
        for (const RenderGaussian* p : std::initializer_list<const RenderGaussian*>{&g, &thin}) {
            const auto s = project(*p, cam);
            if (!s) continue;
            Eigen::SelfAdjointEigenSolver<Mat2> eig(s->cov2d);
            CHECK(eig.eigenvalues().minCoeff() >= 0.3 - 1e-12);
        }
    }
}

TEST_CASE("an empty scene shows the background") {
    std::mt19937_64 rng(1);
    const Image bg = testing::random_image(rng, 6, 5);
    const RenderedFrame f = composite({}, bg);
    CHECK(f.rgb.data == bg.data);
    for (double t : f.residual_transmittance) CHECK(t == 1.0);
    for (double w : f.accumulated_weight) CHECK(w == 0.0);
}

TEST_CASE("a saturated splat at its center pixel clamps alpha to 0.999") {
    Image bg(5, 5, 3, 0.2);
    const Vec3 c(0.9, 0.5, 0.1);
    const Splat2D s = make_splat(Vec2(2.0, 2.0), 1.0, 1.0, c, 1.0 - 1e-9, 0);
    const RenderedFrame f = composite(std::span<const Splat2D>(&s, 1), bg);
    for (int k = 0; k < 3; ++k) CHECK(f.rgb.at(2, 2, k) == doctest::Approx(0.999 * c[k] + 0.001 * 0.2).epsilon(1e-12));
    CHECK(f.residual_transmittance[2 * 5 + 2] == doctest::Approx(0.001).epsilon(1e-9));
}

TEST_CASE("two coincident half-transparent splats composite front to back") {
    Image bg(3, 3, 3, 0.0);
    const Vec3 bgc(0.1, 0.2, 0.3), a(1.0, 0.0, 0.0), b(0.0, 1.0, 0.0);
    for (size_t p = 0; p < 9; ++p)
        for (int k = 0; k < 3; ++k) bg.data[3 * p + k] = bgc[k];
    // The farther splat is listed first; the depth sort must still put `a` in front.
    const std::vector<Splat2D> splats = {make_splat(Vec2(1, 1), 1.0, 2.0, b, 0.5, 0),
                                         make_splat(Vec2(1, 1), 1.0, 1.0, a, 0.5, 1)};
    const RenderedFrame f = composite(splats, bg);
    const Vec3 expected = 0.5 * a + 0.25 * b + 0.25 * bgc;
    for (int k = 0; k < 3; ++k) CHECK(f.rgb.at(1, 1, k) == doctest::Approx(expected[k]).epsilon(1e-12));
}

TEST_CASE("renderer forward equals compositing its own projections") {
    std::mt19937_64 rng(23);
    const auto scene = testing::random_render_scene(rng, 12);
    const PinholeCamera cam = testing::small_camera(20, 18, 25.0);
    const Image bg = testing::random_image(rng, 20, 18);
    std::vector<Splat2D> splats;
    for (size_t i = 0; i < scene.size(); ++i)
        if (auto s = project(scene[i], cam, i)) splats.push_back(*s);
    Renderer r;
    const RenderedFrame a = r.forward(scene, cam, bg);
    const RenderedFrame b = composite(splats, bg);
    for (size_t i = 0; i < a.rgb.data.size(); ++i) CHECK(a.rgb.data[i] == doctest::Approx(b.rgb.data[i]).epsilon(1e-12));
}

TEST_CASE("weights plus residual transmittance sum to one") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        auto scene = testing::random_render_scene(rng, 30);
        for (RenderGaussian& g : scene) g.opacity_logit = uniform(rng, -2.0, 8.0);
        const PinholeCamera cam = testing::small_camera(24, 24, 30.0);
        Renderer r;
        const RenderedFrame f = r.forward(scene, cam, constant_background(24, 24, Vec3::Zero()));
        for (size_t p = 0; p < f.residual_transmittance.size(); ++p) {
            CHECK(f.residual_transmittance[p] >= 0.0);
            CHECK(f.residual_transmittance[p] <= 1.0);
            CHECK(std::abs(f.accumulated_weight[p] + f.residual_transmittance[p] - 1.0) < 1e-5);
        }
    }
}

TEST_CASE("rendering does not depend on the order of the input list") {
    std::mt19937_64 rng(31);
    auto scene = testing::random_render_scene(rng, 25);
    const PinholeCamera cam = testing::small_camera(20, 20, 30.0);
    const Image bg = constant_background(20, 20, Vec3(0.2, 0.3, 0.4));
    Renderer r;
    const RenderedFrame a = r.forward(scene, cam, bg);
    std::shuffle(scene.begin(), scene.end(), rng);
    const RenderedFrame b = r.forward(scene, cam, bg);
    CHECK(a.rgb.data == b.rgb.data);
}

TEST_CASE("equal depths are ordered by list position") {
    const PinholeCamera cam = testing::small_camera(9, 9, 20.0);
    RenderGaussian red, green;
    red.position = green.position = Vec3(0.0, 0.0, 2.0);
    red.log_scale = green.log_scale = Vec3::Constant(std::log(0.2));
    red.opacity_logit = green.opacity_logit = 0.0;
    red.color = Vec3(1, 0, 0);
    green.color = Vec3(0, 1, 0);
    Renderer r;
    const Image bg = constant_background(9, 9, Vec3::Zero());
    const RenderedFrame a = r.forward(std::vector<RenderGaussian>{red, green}, cam, bg);
    CHECK(a.rgb.at(4, 4, 0) > a.rgb.at(4, 4, 1));
    const RenderedFrame b = r.forward(std::vector<RenderGaussian>{green, red}, cam, bg);
    CHECK(b.rgb.at(4, 4, 1) > b.rgb.at(4, 4, 0));
}

TEST_CASE("doubling the resolution keeps colors at shared pixel centers") {
    std::mt19937_64 rng(37);
    std::vector<RenderGaussian> scene(6);
    for (RenderGaussian& g : scene) {
        g.position = Vec3(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, 2.0, 3.0));
        g.rotation = testing::random_rotation(rng);
        // Wide enough that no 3-sigma boundary falls inside the image at either resolution.
        g.log_scale = Vec3::Constant(std::log(uniform(rng, 2.0, 3.0)));
        g.opacity_logit = uniform(rng, -1.0, 1.0);
        g.color = Vec3(uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1));
    }
    PinholeCamera lo = testing::small_camera(32, 32, 30.0);
    lo.cx = lo.cy = 16.0;
    PinholeCamera hi = lo;
    hi.width = hi.height = 64;
    hi.fx = hi.fy = 60.0;
    hi.cx = hi.cy = 32.0;
    Renderer r;
    const RenderedFrame a = r.forward(scene, lo, constant_background(32, 32, Vec3::Zero()));
    const RenderedFrame b = r.forward(scene, hi, constant_background(64, 64, Vec3::Zero()));
    double worst = 0.0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(a.rgb.at(x, y, k) - b.rgb.at(2 * x, 2 * y, k)));
    CHECK(worst < 1e-3);
}

TEST_CASE("backward before forward is an error") {
    Renderer r;
    CHECK_THROWS_AS(r.backward(Image(4, 4, 3)), std::logic_error);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    std::mt19937_64 rng(41);
    const auto scene = testing::random_render_scene(rng, 8);
    const PinholeCamera cam = testing::small_camera(16, 16, 20.0);
    Renderer r;
    r.forward(scene, cam, constant_background(16, 16, Vec3::Zero()));
    const RenderGradients g = r.backward(Image(16, 16, 3));
    for (size_t i = 0; i < scene.size(); ++i) {
        CHECK(g.position[i].isZero(0.0));
        CHECK(g.rotation[i].isZero(0.0));
        CHECK(g.log_scale[i].isZero(0.0));
        CHECK(g.opacity_logit[i] == 0.0);
        CHECK(g.color[i].isZero(0.0));
    }
}

TEST_CASE("single splat color gradient is the upstream gradient weighted by alpha") {
    std::mt19937_64 rng(43);
    RenderGaussian g;
    g.position = Vec3(0.05, -0.02, 2.0);
    g.rotation = testing::random_rotation(rng);
    g.log_scale = Vec3(std::log(0.1), std::log(0.15), std::log(0.05));
    g.opacity_logit = 0.7;
    g.color = Vec3(0.2, 0.4, 0.6);
    const PinholeCamera cam = testing::small_camera(16, 16, 30.0);
    const Image up = testing::random_image(rng, 16, 16, 3, -1.0, 1.0);
    Renderer r;
    r.forward(std::vector<RenderGaussian>{g}, cam, constant_background(16, 16, Vec3::Zero()));
    const RenderGradients grads = r.backward(up);

    // Independent per-pixel alpha from the projected Gaussian.
    const auto s = project(g, cam);
    REQUIRE(s.has_value());
    const Mat2 inv = s->cov2d.inverse();
    Vec3 expected = Vec3::Zero();
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const Vec2 d = Vec2(x, y) - s->mean2d;
            const double q = d.dot(inv * d);
            if (q > 9.0) continue;
            const double alpha = std::min(0.999, s->alpha * std::exp(-0.5 * q));
            for (int k = 0; k < 3; ++k) expected[k] += up.at(x, y, k) * alpha;
        }
    for (int k = 0; k < 3; ++k) CHECK(grads.color[0][k] == doctest::Approx(expected[k]).epsilon(1e-10));
}

TEST_CASE("renderer gradients match central finite differences") {
    // The 3-sigma footprint makes the image jump when a pixel enters or leaves it; a wide
    // extent makes those jumps ~1e-20 so the comparison sees only the smooth part.
    RenderOptions opts;
    opts.sigma_extent = 10.0;
    const double h = 1e-4;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        std::mt19937_64 rng(100 + seed);
        auto scene = testing::random_render_scene(rng, 5, 0.25);
        const PinholeCamera cam = testing::small_camera(16, 16, 24.0);
        const Image bg = testing::random_image(rng, 16, 16);
        const Image w = testing::random_image(rng, 16, 16, 3, -1.0, 1.0);
        Renderer r(opts);
        r.forward(scene, cam, bg);
        const RenderGradients g = r.backward(w);
        auto loss = [&] {
            Renderer fresh(opts);
            return testing::probe_loss(fresh.forward(scene, cam, bg), w);
        };
        double worst = 0.0;
        for (size_t i = 0; i < scene.size(); ++i) {
            for (int k = 0; k < 3; ++k) {
                worst = std::max(worst, testing::relative_error(g.position[i][k],
                                                                testing::central_difference(loss, scene[i].position[k], h)));
                worst = std::max(worst, testing::relative_error(g.log_scale[i][k],
                                                                testing::central_difference(loss, scene[i].log_scale[k], h)));
                worst = std::max(worst, testing::relative_error(g.color[i][k],
                                                                testing::central_difference(loss, scene[i].color[k], h)));
            }
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    worst = std::max(worst, testing::relative_error(g.rotation[i](a, b),
                                                                    testing::central_difference(loss, scene[i].rotation(a, b), h)));
            worst = std::max(worst, testing::relative_error(g.opacity_logit[i],
                                                            testing::central_difference(loss, scene[i].opacity_logit, h)));
        }
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("culled Gaussians get zero gradients and no visibility") {
    std::mt19937_64 rng(47);
    auto scene = testing::random_render_scene(rng, 4);
    scene[2].position = Vec3(0.0, 0.0, -3.0);
    const PinholeCamera cam = testing::small_camera(16, 16, 20.0);
    Renderer r;
    r.forward(scene, cam, constant_background(16, 16, Vec3::Zero()));
    const RenderGradients g = r.backward(testing::random_image(rng, 16, 16));
    CHECK_FALSE(g.visible[2]);
    CHECK(g.position[2].isZero(0.0));
    CHECK(g.color[2].isZero(0.0));
    CHECK(g.mean2d_grad_norm[2] == 0.0);
}

#ifdef _OPENMP
TEST_CASE("forward and backward are bit-identical across thread counts") {
    std::mt19937_64 rng(53);
    const auto scene = testing::random_render_scene(rng, 60);
    const PinholeCamera cam = testing::small_camera(48, 40, 50.0);
    const Image bg = testing::random_image(rng, 48, 40);
    const Image up = testing::random_image(rng, 48, 40, 3, -1.0, 1.0);
    const int saved = omp_get_max_threads();
    std::vector<RenderedFrame> frames;
    std::vector<RenderGradients> grads;
    for (int threads : {1, 3, 4}) {
        omp_set_num_threads(threads);
        Renderer r;
        frames.push_back(r.forward(scene, cam, bg));
        grads.push_back(r.backward(up));
    }
    omp_set_num_threads(saved);
    for (size_t k = 1; k < frames.size(); ++k) {
        CHECK(frames[k].rgb.data == frames[0].rgb.data);
        for (size_t i = 0; i < scene.size(); ++i) {
            CHECK(grads[k].position[i] == grads[0].position[i]);
            CHECK(grads[k].rotation[i] == grads[0].rotation[i]);
            CHECK(grads[k].log_scale[i] == grads[0].log_scale[i]);
            CHECK(grads[k].opacity_logit[i] == grads[0].opacity_logit[i]);
            CHECK(grads[k].color[i] == grads[0].color[i]);
        }
    }
}
#endif

TEST_CASE("background and camera mismatches are rejected") {
    Renderer r;
    CHECK_THROWS_AS(r.forward({}, testing::small_camera(8, 8, 10.0), Image(7, 8, 3)), std::invalid_argument);
    r.forward({}, testing::small_camera(8, 8, 10.0), Image(8, 8, 3));
    CHECK_THROWS_AS(r.backward(Image(8, 8, 1)), std::invalid_argument);
}

}  // TEST_SUITE
