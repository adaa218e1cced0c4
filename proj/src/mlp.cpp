#include "evsplat/mlp.hpp"

#include <cmath>

namespace evsplat {

namespace {

void activate(MatX& m, Activation act) {
    switch (act) {
        case Activation::Linear:
            break;
        case Activation::Elu:
            m = m.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
            break;
        case Activation::Sigmoid:
            m = m.unaryExpr([](double v) { return sigmoid(v); });
            break;
    }
}

// grad wrt pre-activation, given the pre-activation values and grad wrt the activation output.
MatX activation_backward(const MatX& pre, const MatX& grad, Activation act) {
    switch (act) {
        case Activation::Linear:
            return grad;
        case Activation::Elu:
            return grad.binaryExpr(pre, [](double g, double v) { return v > 0.0 ? g : g * std::exp(v); });
        case Activation::Sigmoid:
            return grad.binaryExpr(pre, [](double g, double v) {
                const double s = sigmoid(v);
                return g * s * (1.0 - s);
            });
    }
    return grad;
}

}  // namespace

double MlpGradients::squared_norm() const {
    double total = 0.0;
    for (const MatX& w : weight) total += w.squaredNorm();
    for (const VecX& b : bias) total += b.squaredNorm();
    return total;
}

void MlpGradients::scale(double factor) {
    for (MatX& w : weight) w *= factor;
    for (VecX& b : bias) b *= factor;
}

void MlpGradients::set_zero() {
    for (MatX& w : weight) w.setZero();
    for (VecX& b : bias) b.setZero();
}

Mlp::Mlp(std::vector<int> dims, Activation hidden, Activation output, std::mt19937_64& rng, bool zero_last)
    : hidden_activation(hidden), output_activation(output) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        const int in = dims[l], out = dims[l + 1];
        if (in <= 0 || out <= 0) throw std::invalid_argument("Mlp layer sizes must be positive");
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        DenseLayer layer;
        layer.weight.resize(out, in);
        layer.bias.resize(out);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
        for (int r = 0; r < out; ++r) layer.bias[r] = dist(rng);
        layers.push_back(std::move(layer));
    }
    if (zero_last) {
        layers.back().weight.setZero();
        layers.back().bias.setZero();
    }
}

std::vector<int> Mlp::dims() const {
    std::vector<int> d;
    if (layers.empty()) return d;
    d.push_back(input_dim());
    for (const DenseLayer& l : layers) d.push_back(static_cast<int>(l.weight.rows()));
    return d;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const DenseLayer& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

MatX Mlp::forward(const MatX& x, Cache* cache) const {
    if (x.cols() != input_dim()) throw std::invalid_argument("Mlp::forward: input width mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    MatX h = x;
    for (size_t l = 0; l < layers.size(); ++l) {
        if (cache) cache->inputs.push_back(h);
        MatX z = h * layers[l].weight.transpose();
        z.rowwise() += layers[l].bias.transpose();
        if (cache) cache->pre.push_back(z);
        activate(z, l + 1 == layers.size() ? output_activation : hidden_activation);
        h = std::move(z);
    }
    return h;
}

MatX Mlp::backward(const Cache& cache, const MatX& grad_out, MlpGradients& grads) const {
    if (cache.pre.size() != layers.size()) throw std::logic_error("Mlp::backward: cache does not match the net");
    MatX g = grad_out;
    for (size_t l = layers.size(); l-- > 0;) {
        g = activation_backward(cache.pre[l], g, l + 1 == layers.size() ? output_activation : hidden_activation);
        grads.weight[l].noalias() += g.transpose() * cache.inputs[l];
        grads.bias[l] += g.colwise().sum().transpose();
        g = g * layers[l].weight;
    }
    return g;
}

MlpGradients Mlp::zero_gradients() const {
    MlpGradients g;
    for (const DenseLayer& l : layers) {
        g.weight.push_back(MatX::Zero(l.weight.rows(), l.weight.cols()));
        g.bias.push_back(VecX::Zero(l.bias.size()));
    }
    return g;
}

void Mlp::set_zero() {
    for (DenseLayer& l : layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
}

void Mlp::for_each_block(const std::function<void(double*, std::size_t)>& fn) {
    for (DenseLayer& l : layers) {
        fn(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        fn(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
}

void Mlp::for_each_block(const std::function<void(const double*, std::size_t)>& fn) const {
    for (const DenseLayer& l : layers) {
        fn(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        fn(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
}

void for_each_block(MlpGradients& grads, const std::function<void(double*, std::size_t)>& fn) {
    for (size_t l = 0; l < grads.weight.size(); ++l) {
        fn(grads.weight[l].data(), static_cast<std::size_t>(grads.weight[l].size()));
        fn(grads.bias[l].data(), static_cast<std::size_t>(grads.bias[l].size()));
    }
}

}  // namespace evsplat
