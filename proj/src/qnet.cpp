#include "ctxprune/qnet.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "ctxprune/error.hpp"
#include "ctxprune/rng.hpp"

namespace ctxprune {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstLayerMap = Eigen::Map<const RowMajor>;
using LayerMap = Eigen::Map<RowMajor>;

ConstLayerMap layer_matrix(const FlatWeights& weights, int l) {
    return {weights.w.data() + weights.layer_offset(l), weights.spec.layer_rows(l),
            weights.spec.layer_cols(l)};
}

}  // namespace

void NetSpec::validate() const {
    if (input_dim <= 0) fail(ErrorKind::Config, "net.input_dim must be positive");
    if (output_dim <= 0) fail(ErrorKind::Config, "net.output_dim must be positive");
    if (hidden_dims.empty()) fail(ErrorKind::Config, "net.hidden_dims needs at least one layer");
    for (int d : hidden_dims) {
        if (d <= 0) fail(ErrorKind::Config, "net.hidden_dims entries must be positive");
    }
}

int NetSpec::layer_rows(int l) const {
    return l + 1 < num_layers() ? hidden_dims[static_cast<std::size_t>(l)] : output_dim;
}

int NetSpec::layer_cols(int l) const {
    return l == 0 ? input_dim : hidden_dims[static_cast<std::size_t>(l - 1)];
}

std::size_t NetSpec::num_weights() const {
    std::size_t n = 0;
    for (int l = 0; l < num_layers(); ++l) {
        n += static_cast<std::size_t>(layer_rows(l)) * static_cast<std::size_t>(layer_cols(l));
    }
    return n;
}

std::size_t FlatWeights::layer_offset(int l) const {
    std::size_t off = 0;
    for (int k = 0; k < l; ++k) {
        off += static_cast<std::size_t>(spec.layer_rows(k)) * static_cast<std::size_t>(spec.layer_cols(k));
    }
    return off;
}

void FlatWeights::validate() const {
    spec.validate();
    if (w.size() != spec.num_weights()) {
        fail(ErrorKind::Mismatch, "weight vector has " + std::to_string(w.size()) +
                                      " entries, architecture needs " +
                                      std::to_string(spec.num_weights()));
    }
    if (static_cast<int>(biases.size()) != spec.num_layers()) {
        fail(ErrorKind::Mismatch, "bias layer count does not match architecture");
    }
    for (int l = 0; l < spec.num_layers(); ++l) {
        if (static_cast<int>(biases[static_cast<std::size_t>(l)].size()) != spec.layer_rows(l)) {
            fail(ErrorKind::Mismatch, "bias length of layer " + std::to_string(l) + " mismatch");
        }
    }
}

FlatWeights flatten(const NetSpec& spec, std::span<const Layer> layers) {
    spec.validate();
    require(static_cast<int>(layers.size()) == spec.num_layers(), "flatten: layer count mismatch");
    FlatWeights out;
    out.spec = spec;
    out.w.reserve(spec.num_weights());
    for (int l = 0; l < spec.num_layers(); ++l) {
        const Layer& layer = layers[static_cast<std::size_t>(l)];
        require(layer.rows == spec.layer_rows(l) && layer.cols == spec.layer_cols(l),
                "flatten: shape of layer " + std::to_string(l) + " mismatch");
        require(layer.weight.size() == static_cast<std::size_t>(layer.rows) * layer.cols &&
                    layer.bias.size() == static_cast<std::size_t>(layer.rows),
                "flatten: storage of layer " + std::to_string(l) + " mismatch");
        out.w.insert(out.w.end(), layer.weight.begin(), layer.weight.end());
        out.biases.push_back(layer.bias);
    }
    return out;
}

std::vector<Layer> unflatten(const FlatWeights& weights) {
    weights.validate();
    std::vector<Layer> layers;
    for (int l = 0; l < weights.spec.num_layers(); ++l) {
        Layer layer;
        layer.rows = weights.spec.layer_rows(l);
        layer.cols = weights.spec.layer_cols(l);
        const auto begin = weights.w.begin() + static_cast<std::ptrdiff_t>(weights.layer_offset(l));
        layer.weight.assign(begin, begin + static_cast<std::ptrdiff_t>(layer.rows) * layer.cols);
        layer.bias = weights.biases[static_cast<std::size_t>(l)];
        layers.push_back(std::move(layer));
    }
    return layers;
}

FlatWeights zero_weights(const NetSpec& spec) {
    spec.validate();
    FlatWeights out;
    out.spec = spec;
    out.w.assign(spec.num_weights(), 0.0);
    for (int l = 0; l < spec.num_layers(); ++l) {
        out.biases.emplace_back(static_cast<std::size_t>(spec.layer_rows(l)), 0.0);
    }
    return out;
}

FlatWeights init_weights(const NetSpec& spec, std::uint64_t seed) {
    FlatWeights out = zero_weights(spec);
    Rng rng(seed);
    std::size_t i = 0;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const int rows = spec.layer_rows(l);
        const int cols = spec.layer_cols(l);
        const double limit = std::sqrt(6.0 / (rows + cols));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (int k = 0; k < rows * cols; ++k) out.w[i++] = dist(rng);
    }
    return out;
}

FlatWeights apply_gates(const FlatWeights& weights, std::span<const double> gates) {
    require(gates.size() == weights.w.size(), "mask length does not match weight count");
    FlatWeights out = weights;
    for (std::size_t i = 0; i < gates.size(); ++i) out.w[i] = weights.w[i] * gates[i];
    return out;
}

Batch make_batch(std::span<const std::vector<double>> observations) {
    require(!observations.empty(), "make_batch: empty batch");
    const auto dim = static_cast<Eigen::Index>(observations.front().size());
    Batch batch(dim, static_cast<Eigen::Index>(observations.size()));
    for (std::size_t b = 0; b < observations.size(); ++b) {
        require(static_cast<Eigen::Index>(observations[b].size()) == dim,
                "make_batch: ragged observations");
        batch.col(static_cast<Eigen::Index>(b)) =
            Eigen::Map<const Eigen::VectorXd>(observations[b].data(), dim);
    }
    return batch;
}

ForwardCache forward_batch(const FlatWeights& weights, const Batch& inputs) {
    const NetSpec& spec = weights.spec;
    if (inputs.rows() != spec.input_dim) {
        fail(ErrorKind::InvalidArgument, "forward: input has " + std::to_string(inputs.rows()) +
                                             " features, network expects " +
                                             std::to_string(spec.input_dim));
    }
    ForwardCache cache;
    cache.activations.reserve(static_cast<std::size_t>(spec.num_layers()) + 1);
    cache.activations.push_back(inputs);
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto& bias = weights.biases[static_cast<std::size_t>(l)];
        Eigen::MatrixXd z = layer_matrix(weights, l) * cache.activations.back();
        z.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
        if (l + 1 < spec.num_layers()) z = z.cwiseMax(0.0);
        cache.activations.push_back(std::move(z));
    }
    return cache;
}

GradientBundle backward_batch(const FlatWeights& weights, const ForwardCache& cache,
                              const Eigen::MatrixXd& upstream) {
    const NetSpec& spec = weights.spec;
    const int layers = spec.num_layers();
    require(static_cast<int>(cache.activations.size()) == layers + 1, "backward: stale cache");
    require(upstream.rows() == spec.output_dim && upstream.cols() == cache.output().cols(),
            "backward: upstream shape mismatch");

    GradientBundle grads;
    grads.d_w.assign(weights.w.size(), 0.0);
    grads.d_biases.resize(static_cast<std::size_t>(layers));

    Eigen::MatrixXd delta = upstream;
    for (int l = layers - 1; l >= 0; --l) {
        const auto& input = cache.activations[static_cast<std::size_t>(l)];
        LayerMap d_layer(grads.d_w.data() + weights.layer_offset(l), spec.layer_rows(l),
                         spec.layer_cols(l));
        d_layer.noalias() = delta * input.transpose();
        const Eigen::VectorXd d_bias = delta.rowwise().sum();
        grads.d_biases[static_cast<std::size_t>(l)].assign(d_bias.data(), d_bias.data() + d_bias.size());
        if (l > 0) {
            Eigen::MatrixXd back = layer_matrix(weights, l).transpose() * delta;
            // Rectifier: pass gradient only where the unit was active.
            delta = back.cwiseProduct((input.array() > 0.0).cast<double>().matrix());
        }
    }
    return grads;
}

std::vector<double> forward(const FlatWeights& weights, std::span<const double> obs) {
    Batch input = Eigen::Map<const Eigen::VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size()));
    const ForwardCache cache = forward_batch(weights, input);
    const auto& q = cache.output();
    return {q.data(), q.data() + q.size()};
}

GradientBundle backward(const FlatWeights& weights, std::span<const double> obs,
                        std::span<const double> upstream) {
    if (static_cast<int>(upstream.size()) != weights.spec.output_dim) {
        fail(ErrorKind::InvalidArgument, "backward: upstream length mismatch");
    }
    Batch input = Eigen::Map<const Eigen::VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size()));
    const ForwardCache cache = forward_batch(weights, input);
    Eigen::MatrixXd up = Eigen::Map<const Eigen::VectorXd>(upstream.data(), static_cast<Eigen::Index>(upstream.size()));
    return backward_batch(weights, cache, up);
}

int argmax_action(std::span<const double> q_values) {
    require(!q_values.empty(), "argmax_action: empty q-values");
    int best = 0;
    for (std::size_t a = 1; a < q_values.size(); ++a) {
        if (q_values[a] > q_values[static_cast<std::size_t>(best)]) best = static_cast<int>(a);
    }
    return best;
}

// ---- masking ----------------------------------------------------------------

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double sigmoid_derivative(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}

std::vector<double> MaskLogits::probabilities() const {
    std::vector<double> p(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) p[i] = sigmoid(l[i]);
    return p;
}

std::vector<std::uint8_t> MaskLogits::hard_mask() const {
    std::vector<std::uint8_t> m(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) m[i] = l[i] > 0.0 ? 1 : 0;
    return m;
}

double MaskLogits::density() const {
    if (l.empty()) return 0.0;
    std::size_t on = 0;
    for (double v : l) on += v > 0.0 ? 1 : 0;
    return static_cast<double>(on) / static_cast<double>(l.size());
}

std::vector<double> hard_gates(const MaskLogits& logits) {
    std::vector<double> g(logits.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = logits.l[i] > 0.0 ? 1.0 : 0.0;
    return g;
}

std::vector<double> surrogate_gates(const MaskLogits& logits) { return logits.probabilities(); }

std::vector<double> masked_forward(const FlatWeights& weights, const MaskLogits& logits,
                                   std::span<const double> obs, MaskMode /*mode*/) {
    require(logits.size() == weights.size(), "masked_forward: logits length mismatch");
    return forward(apply_gates(weights, hard_gates(logits)), obs);
}

std::vector<double> logit_gradient(const FlatWeights& weights, const MaskLogits& logits,
                                   std::span<const double> d_gated_w) {
    require(logits.size() == weights.size() && d_gated_w.size() == weights.size(),
            "logit_gradient: length mismatch");
    std::vector<double> d(weights.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = d_gated_w[i] * weights.w[i] * sigmoid_derivative(logits.l[i]);
    }
    return d;
}

std::vector<double> masked_backward_logits(const FlatWeights& weights, const MaskLogits& logits,
                                           std::span<const double> obs,
                                           std::span<const double> upstream, GatePath path) {
    require(logits.size() == weights.size(), "masked_backward_logits: logits length mismatch");
    const auto gates = path == GatePath::StraightThrough ? hard_gates(logits) : surrogate_gates(logits);
    const GradientBundle g = backward(apply_gates(weights, gates), obs, upstream);
    return logit_gradient(weights, logits, g.d_w);
}

}  // namespace ctxprune
