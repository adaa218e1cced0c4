#pragma once

#include <functional>
#include <random>
#include <vector>

#include "evsplat/types.hpp"

namespace evsplat {

enum class Activation { Linear, Elu, Sigmoid };

struct DenseLayer {
    MatX weight;  // out x in
    VecX bias;
};

struct MlpGradients {
    std::vector<MatX> weight;
    std::vector<VecX> bias;

    double squared_norm() const;
    void scale(double factor);
    void set_zero();
};

/// Fully connected net evaluated on row batches (one sample per row).
class Mlp {
public:
    struct Cache {
        std::vector<MatX> inputs;  // input of every layer
        std::vector<MatX> pre;     // pre-activation of every layer
    };

    Mlp() = default;
    /// PyTorch-style U(-1/sqrt(in), 1/sqrt(in)) init; the last layer is zeroed when zero_last.
    Mlp(std::vector<int> dims, Activation hidden, Activation output, std::mt19937_64& rng, bool zero_last = false);

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
    int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
    std::vector<int> dims() const;
    std::size_t parameter_count() const;

    MatX forward(const MatX& x, Cache* cache = nullptr) const;
    /// Accumulates parameter gradients into grads and returns dL/dx.
    MatX backward(const Cache& cache, const MatX& grad_out, MlpGradients& grads) const;

    MlpGradients zero_gradients() const;
    void set_zero();
    /// Visits every parameter block (weights then bias, layer by layer).
    void for_each_block(const std::function<void(double*, std::size_t)>& fn);
    void for_each_block(const std::function<void(const double*, std::size_t)>& fn) const;

    std::vector<DenseLayer> layers;
    Activation hidden_activation = Activation::Elu;
    Activation output_activation = Activation::Linear;
};

void for_each_block(MlpGradients& grads, const std::function<void(double*, std::size_t)>& fn);

}  // namespace evsplat
