#pragma once

#include <span>
#include <vector>

#include "evsplat/types.hpp"

namespace evsplat {

/// Logit magnitude used when seeding semantics from binary labels (sigmoid(4) ~ 0.982).
inline constexpr double kSemanticInitLogit = 4.0;

/// Label 1 (human) -> +4, label 0 (scene) -> -4. Any other label throws.
double init_semantic(int label);

double soft_mask(double semantic_logit);
/// Strict threshold: m > 0.5 is human, the tie m == 0.5 stays scene.
bool hard_mask(double semantic_logit);

/// Straight-through estimate of d(hard mask)/d(logit): the soft mask slope m(1-m).
double hard_mask_surrogate_grad(double semantic_logit);

struct GatePartition {
    std::vector<std::size_t> human;
    std::vector<std::size_t> scene;
};

GatePartition gate(std::span<const SemanticGaussian> gaussians);

/// Children of a densification clone/split carry the parent's logit exactly.
void inherit_on_split(const SemanticGaussian& parent, std::span<SemanticGaussian> children);

}  // namespace evsplat
