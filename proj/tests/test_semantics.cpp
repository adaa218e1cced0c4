#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "evsplat/semantics.hpp"
#include "support.hpp"

using namespace evsplat;

namespace {

std::vector<SemanticGaussian> with_logits(const std::vector<double>& logits) {
    std::vector<SemanticGaussian> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i].semantic_logit = logits[i];
    return out;
}

}  // namespace

TEST_SUITE("semantics") {

TEST_CASE("labels initialize to plus or minus four") {
    CHECK(init_semantic(1) == 4.0);
    CHECK(init_semantic(0) == -4.0);
    CHECK(soft_mask(init_semantic(1)) == doctest::Approx(0.9820).epsilon(1e-4));
    CHECK(soft_mask(init_semantic(0)) == doctest::Approx(0.0180).epsilon(1e-3));
    CHECK_THROWS_AS(init_semantic(2), std::invalid_argument);
    CHECK_THROWS_AS(init_semantic(-1), std::invalid_argument);
}

TEST_CASE("soft mask values") {
    CHECK(soft_mask(0.0) == 0.5);
    CHECK(soft_mask(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(soft_mask(-50.0) < 1e-20);
    CHECK(soft_mask(-50.0) > 0.0);
}

TEST_CASE("soft mask is monotone") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const double a = testing::uniform(rng, -20, 20), b = a + testing::uniform(rng, 1e-3, 5);
        CHECK(soft_mask(a) < soft_mask(b));
    }
}

TEST_CASE("gate examples") {
    const auto all_scene = gate(with_logits({-4, -4, -4, -4}));
    CHECK(all_scene.human.empty());
    CHECK(all_scene.scene == std::vector<std::size_t>{0, 1, 2, 3});

    const auto mixed = gate(with_logits({4, -4, 4}));
    CHECK(mixed.human == std::vector<std::size_t>{0, 2});
    CHECK(mixed.scene == std::vector<std::size_t>{1});

    const auto tie = gate(with_logits({0.0}));
    CHECK(tie.human.empty());
    CHECK(tie.scene == std::vector<std::size_t>{0});
    CHECK_FALSE(hard_mask(0.0));
    CHECK(hard_mask(1e-12));
}

TEST_CASE("gate partitions every Gaussian exactly once") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> logits(1 + rng() % 50);
        for (double& l : logits) l = testing::uniform(rng, -6, 6);
        const auto p = gate(with_logits(logits));
        CHECK(p.human.size() + p.scene.size() == logits.size());
        std::set<std::size_t> seen(p.human.begin(), p.human.end());
        for (std::size_t i : p.scene) CHECK(seen.insert(i).second);
        CHECK(seen.size() == logits.size());
        for (std::size_t i : p.human) CHECK(logits[i] > 0.0);
        for (std::size_t i : p.scene) CHECK(logits[i] <= 0.0);
    }
}

TEST_CASE("gate only depends on the logit sign") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> logits(20), warped(20);
        for (size_t i = 0; i < logits.size(); ++i) {
            logits[i] = testing::uniform(rng, -6, 6);
            warped[i] = std::sinh(logits[i]) * 3.0 + std::pow(logits[i], 3);  // odd and increasing
        }
        const auto a = gate(with_logits(logits)), b = gate(with_logits(warped));
        CHECK(a.human == b.human);
        CHECK(a.scene == b.scene);
    }
}

TEST_CASE("straight-through slope is the soft mask derivative and stays nonzero") {
    for (double l = -9.9; l < 10.0; l += 0.3) {
        const double m = soft_mask(l);
        CHECK(hard_mask_surrogate_grad(l) == doctest::Approx(m * (1.0 - m)).epsilon(1e-14));
        CHECK(hard_mask_surrogate_grad(l) > 0.0);
    }
}

TEST_CASE("children inherit the parent logit exactly") {
    SemanticGaussian parent;
    parent.semantic_logit = 2.3;
    std::vector<SemanticGaussian> two(2);
    two[0].semantic_logit = -1.0;
    inherit_on_split(parent, two);
    for (const auto& c : two) CHECK(c.semantic_logit == 2.3);

    parent.semantic_logit = 0.0;
    inherit_on_split(parent, two);
    for (const auto& c : two) CHECK(c.semantic_logit == 0.0);

    std::mt19937_64 rng(4);
    for (int n : {2, 3, 4}) {
        parent.semantic_logit = testing::uniform(rng, -5, 5);
        std::vector<SemanticGaussian> kids(n);
        inherit_on_split(parent, kids);
        for (const auto& c : kids) CHECK(c.semantic_logit == parent.semantic_logit);
    }
}

}  // TEST_SUITE
