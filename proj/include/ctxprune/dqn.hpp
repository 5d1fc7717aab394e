#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ctxprune/gridworld.hpp"
#include "ctxprune/qnet.hpp"
#include "ctxprune/rng.hpp"

namespace ctxprune {

struct DqnConfig {
    double gamma = 0.9;
    double learning_rate = 3e-4;
    int batch_size = 64;
    int buffer_capacity = 50000;
    int target_update_interval = 4000;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    /// Fraction of total_env_steps over which epsilon decays linearly.
    double exploration_fraction = 1.0;
    long total_env_steps = 200000;
    /// Gradient updates start once this many transitions are stored.
    int learning_starts = 1000;
    /// Environment steps between gradient updates.
    int train_interval = 1;
    double max_grad_norm = 10.0;
    /// Store every transition once per task context, with the reward and
    /// termination that the same move would have produced under that context.
    bool relabel_contexts = true;
    /// "sgd" or "adam".
    std::string optimizer = "adam";
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    /// Environment steps between logged evaluations (0 = final only).
    long eval_interval = 10000;
    int eval_episodes = 100;
    std::uint64_t seed = 0;

    void validate() const;
    double epsilon_at(long step) const;

    bool operator==(const DqnConfig&) const = default;
};

struct Transition {
    Observation obs;
    int action = 0;
    double reward = 0.0;
    Observation next_obs;
    bool done = false;
};

/// Column-major minibatch ready for the batched network passes.
struct TransitionBatch {
    Batch obs;
    Batch next_obs;
    std::vector<int> actions;
    std::vector<double> rewards;
    std::vector<std::uint8_t> dones;

    std::size_t size() const { return actions.size(); }
};

TransitionBatch make_transition_batch(std::span<const Transition> transitions);

/// Fixed-capacity ring of transitions. Observations are binary and stored as bytes.
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::size_t observation_size);

    void push(const Transition& t);
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }

    /// Slot `i` in insertion order modulo capacity.
    Transition at(std::size_t i) const;
    /// Uniform sampling with replacement.
    std::vector<std::size_t> sample_indices(Rng& rng, std::size_t batch_size) const;
    TransitionBatch gather(std::span<const std::size_t> indices) const;

private:
    std::size_t capacity_;
    std::size_t obs_size_;
    std::size_t size_ = 0;
    std::size_t next_ = 0;
    std::vector<std::uint8_t> obs_;
    std::vector<std::uint8_t> next_obs_;
    std::vector<int> actions_;
    std::vector<double> rewards_;
    std::vector<std::uint8_t> dones_;
};

/// y_i = r_i if done_i, else r_i + gamma * Q_target(s'_i, argmax_a Q_online(s'_i, a)).
std::vector<double> double_dqn_targets(const TransitionBatch& batch, const FlatWeights& online,
                                       const FlatWeights& target, double gamma);
std::vector<double> double_dqn_targets(std::span<const Transition> batch, const FlatWeights& online,
                                       const FlatWeights& target, double gamma);

struct TrainingLogEntry {
    long step = 0;
    int task_index = 0;
    double normalized_return = 0.0;

    bool operator==(const TrainingLogEntry&) const = default;
};

struct TrainingLog {
    std::vector<TrainingLogEntry> entries;

    /// Normalized return per task at the last logged step.
    std::vector<double> final_returns() const;
    void write_csv(std::ostream& out) const;

    bool operator==(const TrainingLog&) const = default;
};

struct TrainResult {
    FlatWeights weights;
    TrainingLog log;
};

using TrainProgress = std::function<void(const TrainingLogEntry&)>;

/// The weights train_dqn starts from.
FlatWeights initial_weights(const NetSpec& net_spec, const DqnConfig& cfg);

/// Double DQN with a uniformly sampled task per episode, Adam or SGD with gradient-norm
/// clipping, and hard target-network copies.
TrainResult train_dqn(const EnvConfig& env_config, const NetSpec& net_spec, const DqnConfig& cfg,
                      const TrainProgress& progress = {});

struct EvalResult {
    double mean_return = 0.0;
    double normalized_return = 0.0;
    int episodes = 0;
};

/// Greedy (epsilon = 0) episodes; episode i is seeded with derive_seed(seed, task, i)
/// so different networks face identical layouts.
EvalResult evaluate_greedy(const FlatWeights& weights, const EnvConfig& env_config,
                           const TaskContext& context, int episodes, std::uint64_t seed);

/// Observations visited by epsilon-greedy rollouts of a frozen network under one task.
std::vector<Observation> collect_states(const FlatWeights& weights, const EnvConfig& env_config,
                                        const TaskContext& context, int n_states, double epsilon,
                                        std::uint64_t seed);

}  // namespace ctxprune
