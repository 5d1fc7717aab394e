#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctxprune/gridworld.hpp"
#include "ctxprune/qnet.hpp"

namespace ctxprune {

struct MaskTrainConfig {
    /// Weight of the sparsity term; the term is the mean of sigmoid(l) over all N logits.
    double lambda = 1e-2;
    /// Large because both loss terms are means: per-logit gradients are O(1/N).
    double learning_rate = 300.0;
    int batch_size = 128;
    int epochs = 100;
    double logit_init_std = 0.05;
    /// Logits start at N(mean, std). A mean of 0 leaves about half the mask off
    /// at random; a small positive mean starts from nearly the full network.
    double logit_init_mean = 0.1;
    /// Size of the state buffer collected under the target task.
    int num_states = 16384;
    /// Exploration rate of the rollouts that collect the state buffer.
    double state_epsilon = 0.3;
    std::uint64_t seed = 0;

    void validate() const;

    bool operator==(const MaskTrainConfig&) const = default;
};

struct LossBreakdown {
    double q_value_loss = 0.0;
    double sparsity_loss = 0.0;
    double total = 0.0;

    bool operator==(const LossBreakdown&) const = default;
};

/// A task's subnetwork: the frozen weights with w' = w * m, biases untouched.
struct Subnetwork {
    int task_index = 0;
    int num_tasks = 0;
    std::vector<std::uint8_t> mask;
    FlatWeights masked_weights;
    std::string checkpoint_id;
    MaskTrainConfig config;

    double density() const;
};

/// Logits drawn from Normal(0, std^2); std = 0 gives all zeros.
MaskLogits init_logits(std::size_t n, double std, std::uint64_t seed, double mean = 0.0);

/// Objective value and logit gradient of
///   L = mean_{s,a} (Q(s,a) - Q_masked(s,a))^2 + lambda * mean_i sigmoid(l_i)
/// where Q_masked uses gates chosen by `path`. `reference` holds Q of the
/// unmasked network for `states` (output_dim x batch).
struct MaskObjective {
    LossBreakdown loss;
    std::vector<double> d_logits;
};

MaskObjective mask_objective(const FlatWeights& weights, const MaskLogits& logits,
                             const Batch& states, const Eigen::MatrixXd& reference, double lambda,
                             GatePath path = GatePath::StraightThrough);

/// Loss of the hard-masked network (no gradient).
LossBreakdown mask_loss(const FlatWeights& weights, const MaskLogits& logits, const Batch& states,
                        const Eigen::MatrixXd& reference, double lambda);

/// One gradient-descent step on the logits through the straight-through path.
/// Returns the loss at the logits before the update. Weights are never modified.
LossBreakdown mask_train_step(const FlatWeights& weights, MaskLogits& logits, const Batch& states,
                              const MaskTrainConfig& cfg);

struct MaskTrainLogEntry {
    int epoch = 0;
    LossBreakdown loss;
    double density = 0.0;

    bool operator==(const MaskTrainLogEntry&) const = default;
};

struct MaskTrainLog {
    std::vector<MaskTrainLogEntry> entries;
    void write_csv(std::ostream& out, int task_index) const;
};

struct MaskTrainResult {
    MaskLogits logits;
    Subnetwork subnetwork;
    MaskTrainLog log;
};

/// Runs `cfg.epochs` passes of mask_train_step over shuffled batches of `states`
/// and extracts the thresholded subnetwork. Log entry 0 is the state before
/// training; entry e holds the full-buffer loss and density after epoch e.
MaskTrainResult learn_mask(const FlatWeights& weights, std::span<const Observation> states,
                           const TaskContext& task, const MaskTrainConfig& cfg,
                           const std::string& checkpoint_id = {});

/// m_i = [sigmoid(l_i) > 0.5], w' = w * m.
Subnetwork extract(const FlatWeights& weights, const MaskLogits& logits, const TaskContext& task);

}  // namespace ctxprune
