#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ctxprune {

/// Fully connected architecture: rectifier hidden layers, identity output.
struct NetSpec {
    int input_dim = 0;
    std::vector<int> hidden_dims = {128, 128};
    int output_dim = 4;

    void validate() const;
    int num_layers() const { return static_cast<int>(hidden_dims.size()) + 1; }
    /// (rows, cols) = (fan_out, fan_in) of layer `l`.
    int layer_rows(int l) const;
    int layer_cols(int l) const;
    std::size_t num_weights() const;

    bool operator==(const NetSpec&) const = default;
};

/// One dense layer. `weight` is row-major (rows x cols).
struct Layer {
    int rows = 0;
    int cols = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    bool operator==(const Layer&) const = default;
};

/// All weight matrices concatenated into one vector w, layer by layer and
/// row-major inside a layer. Biases are kept apart and are never masked.
struct FlatWeights {
    NetSpec spec;
    std::vector<double> w;
    std::vector<std::vector<double>> biases;

    std::size_t size() const { return w.size(); }
    /// Offset of layer `l` inside w.
    std::size_t layer_offset(int l) const;
    void validate() const;

    bool operator==(const FlatWeights&) const = default;
};

struct GradientBundle {
    std::vector<double> d_w;
    std::vector<std::vector<double>> d_biases;
};

FlatWeights flatten(const NetSpec& spec, std::span<const Layer> layers);
std::vector<Layer> unflatten(const FlatWeights& weights);

/// Glorot-uniform weights, zero biases.
FlatWeights init_weights(const NetSpec& spec, std::uint64_t seed);

/// Zero weights and biases of the given architecture.
FlatWeights zero_weights(const NetSpec& spec);

/// Copy of `weights` with w replaced by w * gate elementwise.
FlatWeights apply_gates(const FlatWeights& weights, std::span<const double> gates);

/// Column-major batch of observations (input_dim x batch).
using Batch = Eigen::MatrixXd;

Batch make_batch(std::span<const std::vector<double>> observations);

/// Activations kept from a batched forward pass for the backward pass.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> activations;  // activations[0] is the input
    const Eigen::MatrixXd& output() const { return activations.back(); }
};

ForwardCache forward_batch(const FlatWeights& weights, const Batch& inputs);

/// Gradients of sum_b upstream(:, b) . q(:, b) with respect to all weights and
/// biases, given the cache from forward_batch on the same weights.
GradientBundle backward_batch(const FlatWeights& weights, const ForwardCache& cache,
                              const Eigen::MatrixXd& upstream);

std::vector<double> forward(const FlatWeights& weights, std::span<const double> obs);
GradientBundle backward(const FlatWeights& weights, std::span<const double> obs,
                        std::span<const double> upstream);

/// Greedy action with ties broken towards the lowest index.
int argmax_action(std::span<const double> q_values);

// ---- masking ----------------------------------------------------------------

/// Trainable mask logits l. p = sigmoid(l); hard mask m_i = [p_i > 0.5] = [l_i > 0].
struct MaskLogits {
    std::vector<double> l;

    std::size_t size() const { return l.size(); }
    std::vector<double> probabilities() const;
    std::vector<std::uint8_t> hard_mask() const;
    /// Fraction of entries with m_i = 1.
    double density() const;

    bool operator==(const MaskLogits&) const = default;
};

double sigmoid(double x);
double sigmoid_derivative(double x);

enum class MaskMode { Train, Eval };

/// Which gates the forward pass of a masked gradient uses.
///  - StraightThrough: forward with hard m, backward through sigmoid(l).
///  - Surrogate: forward and backward with sigmoid(l).
enum class GatePath { StraightThrough, Surrogate };

/// Hard mask as 0/1 doubles.
std::vector<double> hard_gates(const MaskLogits& logits);
std::vector<double> surrogate_gates(const MaskLogits& logits);

/// Forward with w' = w * m. In Train mode the forward value of the
/// straight-through weights w * ([m - s]_stop + s) is exactly w * m, so both
/// modes produce identical outputs.
std::vector<double> masked_forward(const FlatWeights& weights, const MaskLogits& logits,
                                   std::span<const double> obs, MaskMode mode);

/// d_l[i] = dL/dw~_i * w_i * sigmoid'(l_i), L = upstream . q_masked.
std::vector<double> masked_backward_logits(const FlatWeights& weights, const MaskLogits& logits,
                                           std::span<const double> obs,
                                           std::span<const double> upstream,
                                           GatePath path = GatePath::StraightThrough);

/// Chain rule from weight gradients at the gated point to logit gradients.
std::vector<double> logit_gradient(const FlatWeights& weights, const MaskLogits& logits,
                                   std::span<const double> d_gated_w);

}  // namespace ctxprune
