#include "evsplat/semantics.hpp"

#include <string>

namespace evsplat {

double init_semantic(int label) {
    if (label == 1) return kSemanticInitLogit;
    if (label == 0) return -kSemanticInitLogit;
    throw std::invalid_argument("semantic label must be 0 or 1, got " + std::to_string(label));
}

double soft_mask(double semantic_logit) { return sigmoid(semantic_logit); }

bool hard_mask(double semantic_logit) { return soft_mask(semantic_logit) > 0.5; }

double hard_mask_surrogate_grad(double semantic_logit) {
    const double m = soft_mask(semantic_logit);
    return m * (1.0 - m);
}

GatePartition gate(std::span<const SemanticGaussian> gaussians) {
    GatePartition part;
    for (std::size_t i = 0; i < gaussians.size(); ++i)
        (hard_mask(gaussians[i].semantic_logit) ? part.human : part.scene).push_back(i);
    return part;
}

void inherit_on_split(const SemanticGaussian& parent, std::span<SemanticGaussian> children) {
    for (SemanticGaussian& c : children) c.semantic_logit = parent.semantic_logit;
}

}  // namespace evsplat
