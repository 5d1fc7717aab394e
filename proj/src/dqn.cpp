#include "ctxprune/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "ctxprune/error.hpp"

namespace ctxprune {

namespace {

void dqn_check(bool cond, const std::string& what) {
    if (!cond) fail(ErrorKind::Config, "dqn." + what);
}

// Stream tags keep the RNG streams of different consumers apart.
constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kTrainStream = 0x747261696eULL;

int epsilon_greedy(const FlatWeights& weights, const Observation& obs, double epsilon, Rng& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < epsilon) {
        std::uniform_int_distribution<int> any(0, weights.spec.output_dim - 1);
        return any(rng);
    }
    return argmax_action(forward(weights, obs));
}

/// Clipped SGD or Adam over every weight and bias. Clipping rescales the raw
/// gradient to at most max_grad_norm before the update rule.
class Optimizer {
public:
    Optimizer(const DqnConfig& cfg, const FlatWeights& like) : cfg_(cfg) {
        if (cfg.optimizer == "adam") {
            m_.assign(count(like), 0.0);
            v_.assign(count(like), 0.0);
        }
    }

    void apply(FlatWeights& params, const GradientBundle& g) {
        double sq = 0.0;
        for (double x : g.d_w) sq += x * x;
        for (const auto& db : g.d_biases)
            for (double x : db) sq += x * x;
        const double norm = std::sqrt(sq);
        const double scale = norm > cfg_.max_grad_norm ? cfg_.max_grad_norm / norm : 1.0;

        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
        std::size_t k = 0;
        auto update = [&](double& p, double grad) {
            grad *= scale;
            if (m_.empty()) {
                p -= cfg_.learning_rate * grad;
            } else {
                m_[k] = cfg_.adam_beta1 * m_[k] + (1.0 - cfg_.adam_beta1) * grad;
                v_[k] = cfg_.adam_beta2 * v_[k] + (1.0 - cfg_.adam_beta2) * grad * grad;
                p -= cfg_.learning_rate * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + cfg_.adam_epsilon);
            }
            ++k;
        };
        for (std::size_t i = 0; i < params.w.size(); ++i) update(params.w[i], g.d_w[i]);
        for (std::size_t l = 0; l < params.biases.size(); ++l)
            for (std::size_t i = 0; i < params.biases[l].size(); ++i) update(params.biases[l][i], g.d_biases[l][i]);
    }

private:
    static std::size_t count(const FlatWeights& w) {
        std::size_t n = w.w.size();
        for (const auto& b : w.biases) n += b.size();
        return n;
    }

    const DqnConfig& cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    long t_ = 0;
};

}  // namespace

void DqnConfig::validate() const {
    dqn_check(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    dqn_check(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be positive");
    dqn_check(batch_size > 0, "batch_size must be positive");
    dqn_check(buffer_capacity >= batch_size, "buffer_capacity must be at least batch_size");
    dqn_check(target_update_interval > 0, "target_update_interval must be positive");
    dqn_check(epsilon_start >= 0.0 && epsilon_start <= 1.0, "epsilon_start must lie in [0, 1]");
    dqn_check(epsilon_end >= 0.0 && epsilon_end <= 1.0, "epsilon_end must lie in [0, 1]");
    dqn_check(exploration_fraction > 0.0 && exploration_fraction <= 1.0,
              "exploration_fraction must lie in (0, 1]");
    dqn_check(total_env_steps >= 0, "total_env_steps must be non-negative");
    dqn_check(learning_starts >= 0, "learning_starts must be non-negative");
    dqn_check(train_interval > 0, "train_interval must be positive");
    dqn_check(max_grad_norm > 0.0, "max_grad_norm must be positive");
    dqn_check(optimizer == "sgd" || optimizer == "adam", "optimizer must be \"sgd\" or \"adam\"");
    dqn_check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
    dqn_check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
    dqn_check(adam_epsilon > 0.0, "adam_epsilon must be positive");
    dqn_check(eval_interval >= 0, "eval_interval must be non-negative");
    dqn_check(eval_episodes > 0, "eval_episodes must be positive");
}

double DqnConfig::epsilon_at(long step) const {
    const double horizon = exploration_fraction * static_cast<double>(total_env_steps);
    if (horizon <= 0.0) return epsilon_end;
    const double frac = std::min(1.0, static_cast<double>(step) / horizon);
    return epsilon_start + frac * (epsilon_end - epsilon_start);
}

TransitionBatch make_transition_batch(std::span<const Transition> transitions) {
    require(!transitions.empty(), "transition batch is empty");
    std::vector<Observation> obs;
    std::vector<Observation> next;
    TransitionBatch batch;
    for (const Transition& t : transitions) {
        obs.push_back(t.obs);
        next.push_back(t.next_obs);
        batch.actions.push_back(t.action);
        batch.rewards.push_back(t.reward);
        batch.dones.push_back(t.done ? 1 : 0);
    }
    batch.obs = make_batch(obs);
    batch.next_obs = make_batch(next);
    return batch;
}

// ---- replay -----------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t observation_size)
    : capacity_(capacity),
      obs_size_(observation_size),
      obs_(capacity * observation_size),
      next_obs_(capacity * observation_size),
      actions_(capacity),
      rewards_(capacity),
      dones_(capacity) {
    require(capacity > 0, "replay buffer capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) {
    require(t.obs.size() == obs_size_ && t.next_obs.size() == obs_size_,
            "replay: observation length mismatch");
    auto pack = [this](const Observation& src, std::vector<std::uint8_t>& dst) {
        for (std::size_t k = 0; k < obs_size_; ++k) {
            require(src[k] == 0.0 || src[k] == 1.0, "replay: observations must be binary");
            dst[next_ * obs_size_ + k] = src[k] == 1.0 ? 1 : 0;
        }
    };
    pack(t.obs, obs_);
    pack(t.next_obs, next_obs_);
    actions_[next_] = t.action;
    rewards_[next_] = t.reward;
    dones_[next_] = t.done ? 1 : 0;
    next_ = (next_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

Transition ReplayBuffer::at(std::size_t i) const {
    require(i < size_, "replay: index out of range");
    Transition t;
    t.obs.assign(obs_.begin() + static_cast<std::ptrdiff_t>(i * obs_size_),
                 obs_.begin() + static_cast<std::ptrdiff_t>((i + 1) * obs_size_));
    t.next_obs.assign(next_obs_.begin() + static_cast<std::ptrdiff_t>(i * obs_size_),
                      next_obs_.begin() + static_cast<std::ptrdiff_t>((i + 1) * obs_size_));
    t.action = actions_[i];
    t.reward = rewards_[i];
    t.done = dones_[i] != 0;
    return t;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(Rng& rng, std::size_t batch_size) const {
    require(size_ > 0, "replay: sampling from an empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = pick(rng);
    return idx;
}

TransitionBatch ReplayBuffer::gather(std::span<const std::size_t> indices) const {
    const auto n = static_cast<Eigen::Index>(indices.size());
    const auto dim = static_cast<Eigen::Index>(obs_size_);
    TransitionBatch batch;
    batch.obs.resize(dim, n);
    batch.next_obs.resize(dim, n);
    for (Eigen::Index b = 0; b < n; ++b) {
        const std::size_t i = indices[static_cast<std::size_t>(b)];
        require(i < size_, "replay: index out of range");
        for (Eigen::Index k = 0; k < dim; ++k) {
            batch.obs(k, b) = obs_[i * obs_size_ + static_cast<std::size_t>(k)];
            batch.next_obs(k, b) = next_obs_[i * obs_size_ + static_cast<std::size_t>(k)];
        }
        batch.actions.push_back(actions_[i]);
        batch.rewards.push_back(rewards_[i]);
        batch.dones.push_back(dones_[i]);
    }
    return batch;
}

// ---- targets ----------------------------------------------------------------

std::vector<double> double_dqn_targets(const TransitionBatch& batch, const FlatWeights& online,
                                       const FlatWeights& target, double gamma) {
    require(batch.size() > 0, "double_dqn_targets: empty batch");
    const Eigen::MatrixXd q_online = forward_batch(online, batch.next_obs).output();
    const Eigen::MatrixXd q_target = forward_batch(target, batch.next_obs).output();
    std::vector<double> y(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch.dones[b]) {
            y[b] = batch.rewards[b];
            continue;
        }
        const auto col = static_cast<Eigen::Index>(b);
        Eigen::Index best = 0;
        for (Eigen::Index a = 1; a < q_online.rows(); ++a) {
            if (q_online(a, col) > q_online(best, col)) best = a;
        }
        y[b] = batch.rewards[b] + gamma * q_target(best, col);
    }
    return y;
}

std::vector<double> double_dqn_targets(std::span<const Transition> batch, const FlatWeights& online,
                                       const FlatWeights& target, double gamma) {
    return double_dqn_targets(make_transition_batch(batch), online, target, gamma);
}

// ---- log --------------------------------------------------------------------

std::vector<double> TrainingLog::final_returns() const {
    if (entries.empty()) return {};
    const long last = entries.back().step;
    std::vector<double> out;
    for (const auto& e : entries) {
        if (e.step == last) out.push_back(e.normalized_return);
    }
    return out;
}

void TrainingLog::write_csv(std::ostream& out) const {
    std::ostringstream s;
    s.precision(17);
    s << "step,task_index,normalized_return\n";
    for (const auto& e : entries) s << e.step << ',' << e.task_index << ',' << e.normalized_return << '\n';
    out << s.str();
}

// ---- evaluation / collection -----------------------------------------------

EvalResult evaluate_greedy(const FlatWeights& weights, const EnvConfig& env_config,
                           const TaskContext& context, int episodes, std::uint64_t seed) {
    require(episodes >= 1, "evaluate: episodes must be at least 1");
    const GridWorld env(env_config);
    double total = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        auto [state, obs] = env.reset(
            context, derive_seed(seed, static_cast<std::uint64_t>(context.index()), static_cast<std::uint64_t>(ep)));
        double ret = 0.0;
        while (!state.terminated) {
            auto step = env.step(state, static_cast<Action>(argmax_action(forward(weights, obs))));
            ret += step.reward;
            state = std::move(step.state);
            obs = std::move(step.observation);
        }
        total += ret;
    }
    EvalResult r;
    r.episodes = episodes;
    r.mean_return = total / episodes;
    r.normalized_return = normalize_return(env_config, r.mean_return);
    return r;
}

std::vector<Observation> collect_states(const FlatWeights& weights, const EnvConfig& env_config,
                                        const TaskContext& context, int n_states, double epsilon,
                                        std::uint64_t seed) {
    require(n_states > 0, "collect_states: n_states must be positive");
    require(epsilon >= 0.0 && epsilon <= 1.0, "collect_states: epsilon must lie in [0, 1]");
    const GridWorld env(env_config);
    Rng rng(seed);
    std::vector<Observation> states;
    states.reserve(static_cast<std::size_t>(n_states));
    std::uint64_t episode = 0;
    while (static_cast<int>(states.size()) < n_states) {
        auto [state, obs] = env.reset(context, derive_seed(seed, episode++));
        while (!state.terminated && static_cast<int>(states.size()) < n_states) {
            states.push_back(obs);
            auto step = env.step(state, static_cast<Action>(epsilon_greedy(weights, obs, epsilon, rng)));
            state = std::move(step.state);
            obs = std::move(step.observation);
        }
    }
    return states;
}

// ---- training ---------------------------------------------------------------

FlatWeights initial_weights(const NetSpec& net_spec, const DqnConfig& cfg) {
    return init_weights(net_spec, derive_seed(cfg.seed, kTrainStream, 1));
}

TrainResult train_dqn(const EnvConfig& env_config, const NetSpec& net_spec, const DqnConfig& cfg,
                      const TrainProgress& progress) {
    env_config.validate();
    net_spec.validate();
    cfg.validate();
    if (net_spec.input_dim != env_config.observation_size()) {
        fail(ErrorKind::Mismatch, "net.input_dim " + std::to_string(net_spec.input_dim) +
                                      " does not match observation size " +
                                      std::to_string(env_config.observation_size()));
    }
    if (net_spec.output_dim != kNumActions) {
        fail(ErrorKind::Mismatch, "net.output_dim must equal the action count 4");
    }

    const GridWorld env(env_config);
    TrainResult result;
    result.weights = initial_weights(net_spec, cfg);
    FlatWeights& online = result.weights;
    FlatWeights target = online;

    Rng rng(derive_seed(cfg.seed, kTrainStream, 2));
    std::uniform_int_distribution<int> pick_task(0, env_config.num_tasks - 1);
    ReplayBuffer replay(static_cast<std::size_t>(cfg.buffer_capacity),
                        static_cast<std::size_t>(env_config.observation_size()));

    auto log_eval = [&](long step) {
        for (int k = 0; k < env_config.num_tasks; ++k) {
            const EvalResult r = evaluate_greedy(online, env_config, TaskContext(k, env_config.num_tasks),
                                                 cfg.eval_episodes, derive_seed(cfg.seed, kEvalStream));
            TrainingLogEntry e{step, k, r.normalized_return};
            result.log.entries.push_back(e);
            if (progress) progress(e);
        }
    };

    Optimizer optimizer(cfg, online);
    GridState state;
    Observation obs;
    bool need_reset = true;
    std::uint64_t episode = 0;
    const auto B = static_cast<std::size_t>(cfg.batch_size);

    for (long step = 1; step <= cfg.total_env_steps; ++step) {
        if (need_reset) {
            const TaskContext ctx(pick_task(rng), env_config.num_tasks);
            auto reset = env.reset(ctx, derive_seed(cfg.seed, kTrainStream + 3, episode++));
            state = std::move(reset.state);
            obs = std::move(reset.observation);
            need_reset = false;
        }
        const int action = epsilon_greedy(online, obs, cfg.epsilon_at(step - 1), rng);
        auto next = env.step(state, static_cast<Action>(action));
        if (cfg.relabel_contexts) {
            for (int k = 0; k < env_config.num_tasks; ++k) {
                if (k == state.context) {
                    replay.push({obs, action, next.reward, next.observation, next.done});
                    continue;
                }
                GridState alt = state;
                alt.context = k;
                const auto cf = env.step(alt, static_cast<Action>(action));
                replay.push({env.observe(alt), action, cf.reward, cf.observation, cf.done});
            }
        } else {
            replay.push({obs, action, next.reward, next.observation, next.done});
        }
        need_reset = next.done;
        state = std::move(next.state);
        obs = std::move(next.observation);

        if (replay.size() >= std::max<std::size_t>(B, static_cast<std::size_t>(cfg.learning_starts)) &&
            step % cfg.train_interval == 0) {
            const auto idx = replay.sample_indices(rng, B);
            const TransitionBatch batch = replay.gather(idx);
            const std::vector<double> y = double_dqn_targets(batch, online, target, cfg.gamma);
            const ForwardCache cache = forward_batch(online, batch.obs);
            const Eigen::MatrixXd& q = cache.output();

            // L = 0.5 * mean_b (Q(s_b, a_b) - y_b)^2
            Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(q.rows(), q.cols());
            double loss = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const auto col = static_cast<Eigen::Index>(b);
                const double td = q(batch.actions[b], col) - y[b];
                loss += 0.5 * td * td;
                upstream(batch.actions[b], col) = td / static_cast<double>(B);
            }
            loss /= static_cast<double>(B);
            if (!std::isfinite(loss)) {
                fail(ErrorKind::Numeric, "dqn: non-finite TD loss at env step " + std::to_string(step));
            }

            GradientBundle g = backward_batch(online, cache, upstream);
            optimizer.apply(online, g);
        }

        if (step % cfg.target_update_interval == 0) target = online;
        if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0 && step != cfg.total_env_steps) {
            log_eval(step);
        }
    }
    log_eval(cfg.total_env_steps);
    return result;
}

}  // namespace ctxprune
