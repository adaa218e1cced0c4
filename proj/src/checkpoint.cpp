#include "evsplat/checkpoint.hpp"

#include <cmath>
#include <cstring>

#include "evsplat/io.hpp"
#include "evsplat/semantics.hpp"

namespace evsplat {

namespace {

class Writer {
public:
    template <typename T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out.append(buf, sizeof(T));
    }
    void put_doubles(const double* p, size_t n) { out.append(reinterpret_cast<const char*>(p), n * sizeof(double)); }
    std::string out;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    double get_finite() {
        const double v = get<double>();
        if (!std::isfinite(v)) throw DataError("checkpoint: non-finite parameter");
        return v;
    }
    void get_doubles(double* p, size_t n) {
        if (n > remaining() / sizeof(double)) throw DataError("checkpoint: truncated");
        for (size_t i = 0; i < n; ++i) p[i] = get_finite();
    }
    std::string_view get_bytes(size_t n) {
        need(n);
        const std::string_view s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(size_t n) const {
        if (n > remaining()) throw DataError("checkpoint: truncated");
    }
    std::string_view bytes_;
    size_t pos_ = 0;
};

void write_mlp(Writer& w, const Mlp& net) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.layers.size()));
    for (const DenseLayer& l : net.layers) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.rows()));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.cols()));
        w.put_doubles(l.weight.data(), static_cast<size_t>(l.weight.size()));
        w.put_doubles(l.bias.data(), static_cast<size_t>(l.bias.size()));
    }
}

Mlp read_mlp(Reader& r, int input, int output, Activation hidden, Activation out_act, const char* name) {
    const auto layers = r.get<std::uint32_t>();
    if (layers == 0 || layers > 16) throw DataError(std::string("checkpoint: bad layer count in ") + name);
    Mlp net;
    net.hidden_activation = hidden;
    net.output_activation = out_act;
    int prev = input;
    for (std::uint32_t k = 0; k < layers; ++k) {
        const auto rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
        if (rows == 0 || rows > 4096 || cols == 0 || cols > 4096 || (prev >= 0 && static_cast<int>(cols) != prev))
            throw DataError(std::string("checkpoint: inconsistent layer shape in ") + name);
        DenseLayer l;
        l.weight.resize(rows, cols);
        l.bias.resize(rows);
        r.get_doubles(l.weight.data(), static_cast<size_t>(l.weight.size()));
        r.get_doubles(l.bias.data(), rows);
        prev = static_cast<int>(rows);
        net.layers.push_back(std::move(l));
    }
    if (output > 0 && prev != output) throw DataError(std::string("checkpoint: wrong output size in ") + name);
    return net;
}

}  // namespace

std::string encode_checkpoint(const TrainState& s) {
    Writer w;
    w.out = "EVCK";
    w.put<std::uint32_t>(kCheckpointVersion);
    const std::string cfg = config_to_json(s.config);
    w.put<std::uint64_t>(cfg.size());
    w.out += cfg;
    w.put<std::uint64_t>(static_cast<std::uint64_t>(s.iteration));
    w.put<double>(s.scene_extent);
    w.put<std::uint64_t>(s.gaussians.size());
    for (const SemanticGaussian& g : s.gaussians) {
        if (g.color_feature.size() != s.config.feature_dim)
            throw std::invalid_argument("encode_checkpoint: feature length differs from the config");
        w.put_doubles(g.position.data(), 3);
        w.put_doubles(g.rotation.data(), 4);
        w.put_doubles(g.log_scale.data(), 3);
        w.put<double>(g.opacity_logit);
        w.put_doubles(g.color_feature.data(), static_cast<size_t>(g.color_feature.size()));
        w.put<double>(g.semantic_logit);
    }
    write_mlp(w, s.nonrigid.mlp);
    write_mlp(w, s.skinning.mlp);
    write_mlp(w, s.scene_color.mlp);
    write_mlp(w, s.human_color.mlp);
    return std::move(w.out);
}

TrainState decode_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    if (r.get_bytes(4) != "EVCK") throw DataError("checkpoint: bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
    const auto cfg_len = r.get<std::uint64_t>();
    if (cfg_len > r.remaining()) throw DataError("checkpoint: truncated");
    TrainState s;
    try {
        s.config = config_from_json(std::string(r.get_bytes(cfg_len)));
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
    const auto iteration = r.get<std::uint64_t>();
    if (iteration > (1ULL << 62)) throw DataError("checkpoint: bad iteration counter");
    s.iteration = static_cast<std::int64_t>(iteration);
    s.scene_extent = r.get_finite();
    if (s.scene_extent <= 0.0) throw DataError("checkpoint: scene extent must be positive");

    const size_t f = static_cast<size_t>(s.config.feature_dim);
    const auto n = r.get<std::uint64_t>();
    if (n > r.remaining() / ((13 + f) * sizeof(double))) throw DataError("checkpoint: truncated");
    s.gaussians.resize(n);
    for (SemanticGaussian& g : s.gaussians) {
        r.get_doubles(g.position.data(), 3);
        r.get_doubles(g.rotation.data(), 4);
        r.get_doubles(g.log_scale.data(), 3);
        g.opacity_logit = r.get_finite();
        g.color_feature.resize(static_cast<Eigen::Index>(f));
        r.get_doubles(g.color_feature.data(), f);
        g.semantic_logit = r.get_finite();
        try {
            g.validate();
        } catch (const std::invalid_argument& e) {
            throw DataError(std::string("checkpoint: ") + e.what());
        }
    }

    s.nonrigid.mlp = read_mlp(r, -1, 10, Activation::Elu, Activation::Linear, "non-rigid net");
    s.nonrigid.pose_dim = s.nonrigid.mlp.input_dim() - 3;
    if (s.nonrigid.pose_dim <= 0 || s.nonrigid.pose_dim % 6 != 0)
        throw DataError("checkpoint: non-rigid net input must be 3 + 6 per bone");
    const int bones = s.nonrigid.pose_dim / 6;
    s.skinning.mlp = read_mlp(r, 3, bones, Activation::Elu, Activation::Linear, "skinning net");
    s.skinning.bones = bones;
    const int color_in = s.config.feature_dim + sh_basis_size(s.config.sh_degree);
    s.scene_color.mlp = read_mlp(r, color_in, 3, Activation::Elu, Activation::Sigmoid, "scene color net");
    s.human_color.mlp = read_mlp(r, color_in, 3, Activation::Elu, Activation::Sigmoid, "human color net");
    for (ColorNet* c : {&s.scene_color, &s.human_color}) {
        c->feature_dim = s.config.feature_dim;
        c->sh_degree = s.config.sh_degree;
    }
    if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");

    s.moments.resize(s.gaussians.size(), s.config.feature_dim);
    s.nonrigid_moments.resize(s.nonrigid.mlp.parameter_count());
    s.skinning_moments.resize(s.skinning.mlp.parameter_count());
    s.scene_color_moments.resize(s.scene_color.mlp.parameter_count());
    s.human_color_moments.resize(s.human_color.mlp.parameter_count());
    s.grad_accum.assign(s.gaussians.size(), 0.0);
    s.grad_count.assign(s.gaussians.size(), 0);
    s.origin_class.resize(s.gaussians.size());
    for (size_t i = 0; i < s.gaussians.size(); ++i)
        s.origin_class[i] = hard_mask(s.gaussians[i].semantic_logit) ? 1 : 0;
    return s;
}

}  // namespace evsplat
