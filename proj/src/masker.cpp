#include "ctxprune/masker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "ctxprune/error.hpp"
#include "ctxprune/rng.hpp"

namespace ctxprune {

namespace {

void mask_check(bool cond, const std::string& what) {
    if (!cond) fail(ErrorKind::Config, "mask." + what);
}

double sparsity_term(const MaskLogits& logits) {
    double s = 0.0;
    for (double l : logits.l) s += sigmoid(l);
    return s / static_cast<double>(logits.size());
}

void check_finite(const LossBreakdown& loss) {
    if (!std::isfinite(loss.total)) fail(ErrorKind::Numeric, "mask training: non-finite loss");
}

}  // namespace

void MaskTrainConfig::validate() const {
    mask_check(std::isfinite(lambda) && lambda >= 0.0, "lambda must be >= 0");
    mask_check(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be positive");
    mask_check(batch_size > 0, "batch_size must be positive");
    mask_check(epochs >= 0, "epochs must be non-negative");
    mask_check(std::isfinite(logit_init_std) && logit_init_std >= 0.0, "logit_init_std must be >= 0");
    mask_check(std::isfinite(logit_init_mean), "logit_init_mean must be finite");
    mask_check(num_states > 0, "num_states must be positive");
    mask_check(state_epsilon >= 0.0 && state_epsilon <= 1.0, "state_epsilon must lie in [0, 1]");
}

double Subnetwork::density() const {
    if (mask.empty()) return 0.0;
    const auto on = std::count(mask.begin(), mask.end(), std::uint8_t{1});
    return static_cast<double>(on) / static_cast<double>(mask.size());
}

MaskLogits init_logits(std::size_t n, double std, std::uint64_t seed, double mean) {
    require(n > 0, "init_logits: n must be positive");
    require(std >= 0.0, "init_logits: std must be >= 0");
    MaskLogits logits;
    logits.l.assign(n, mean);
    if (std == 0.0) return logits;
    Rng rng(seed);
    std::normal_distribution<double> noise(mean, std);
    for (double& l : logits.l) l = noise(rng);
    return logits;
}

MaskObjective mask_objective(const FlatWeights& weights, const MaskLogits& logits,
                             const Batch& states, const Eigen::MatrixXd& reference, double lambda,
                             GatePath path) {
    require(logits.size() == weights.size(), "mask_objective: logits length mismatch");
    require(reference.rows() == weights.spec.output_dim && reference.cols() == states.cols(),
            "mask_objective: reference shape mismatch");

    const auto gates = path == GatePath::StraightThrough ? hard_gates(logits) : surrogate_gates(logits);
    const FlatWeights gated = apply_gates(weights, gates);
    const ForwardCache cache = forward_batch(gated, states);
    const Eigen::MatrixXd diff = cache.output() - reference;
    const double count = static_cast<double>(diff.size());

    MaskObjective out;
    out.loss.q_value_loss = diff.squaredNorm() / count;
    out.loss.sparsity_loss = sparsity_term(logits);
    out.loss.total = out.loss.q_value_loss + lambda * out.loss.sparsity_loss;

    const Eigen::MatrixXd upstream = (2.0 / count) * diff;
    const GradientBundle g = backward_batch(gated, cache, upstream);
    out.d_logits = logit_gradient(weights, logits, g.d_w);
    const double n = static_cast<double>(logits.size());
    for (std::size_t i = 0; i < out.d_logits.size(); ++i) {
        out.d_logits[i] += lambda * sigmoid_derivative(logits.l[i]) / n;
    }
    return out;
}

LossBreakdown mask_loss(const FlatWeights& weights, const MaskLogits& logits, const Batch& states,
                        const Eigen::MatrixXd& reference, double lambda) {
    require(logits.size() == weights.size(), "mask_loss: logits length mismatch");
    const FlatWeights gated = apply_gates(weights, hard_gates(logits));
    const Eigen::MatrixXd diff = forward_batch(gated, states).output() - reference;
    LossBreakdown loss;
    loss.q_value_loss = diff.squaredNorm() / static_cast<double>(diff.size());
    loss.sparsity_loss = sparsity_term(logits);
    loss.total = loss.q_value_loss + lambda * loss.sparsity_loss;
    return loss;
}

LossBreakdown mask_train_step(const FlatWeights& weights, MaskLogits& logits, const Batch& states,
                              const MaskTrainConfig& cfg) {
    const Eigen::MatrixXd reference = forward_batch(weights, states).output();
    MaskObjective obj = mask_objective(weights, logits, states, reference, cfg.lambda);
    check_finite(obj.loss);
    for (std::size_t i = 0; i < logits.size(); ++i) logits.l[i] -= cfg.learning_rate * obj.d_logits[i];
    return obj.loss;
}

void MaskTrainLog::write_csv(std::ostream& out, int task_index) const {
    std::ostringstream s;
    s.precision(17);
    s << "task_index,epoch,q_value_loss,sparsity_loss,total,density\n";
    for (const auto& e : entries) {
        s << task_index << ',' << e.epoch << ',' << e.loss.q_value_loss << ',' << e.loss.sparsity_loss
          << ',' << e.loss.total << ',' << e.density << '\n';
    }
    out << s.str();
}

MaskTrainResult learn_mask(const FlatWeights& weights, std::span<const Observation> states,
                           const TaskContext& task, const MaskTrainConfig& cfg,
                           const std::string& checkpoint_id) {
    cfg.validate();
    weights.validate();
    require(!states.empty(), "learn_mask: empty state buffer");

    const Batch all = make_batch(states);
    const Eigen::MatrixXd reference = forward_batch(weights, all).output();
    const auto n_states = static_cast<std::size_t>(all.cols());

    MaskTrainResult result;
    result.logits = init_logits(weights.size(), cfg.logit_init_std,
                                derive_seed(cfg.seed, static_cast<std::uint64_t>(task.index()), 1), cfg.logit_init_mean);
    MaskLogits& logits = result.logits;
    result.log.entries.push_back({0, mask_loss(weights, logits, all, reference, cfg.lambda), logits.density()});

    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(task.index()), 2));
    std::vector<std::size_t> order(n_states);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto B = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n_states; start += B) {
            const std::size_t len = std::min(B, n_states - start);
            Batch states_b(all.rows(), static_cast<Eigen::Index>(len));
            Eigen::MatrixXd ref_b(reference.rows(), static_cast<Eigen::Index>(len));
            for (std::size_t k = 0; k < len; ++k) {
                const auto src = static_cast<Eigen::Index>(order[start + k]);
                states_b.col(static_cast<Eigen::Index>(k)) = all.col(src);
                ref_b.col(static_cast<Eigen::Index>(k)) = reference.col(src);
            }
            MaskObjective obj = mask_objective(weights, logits, states_b, ref_b, cfg.lambda);
            check_finite(obj.loss);
            for (std::size_t i = 0; i < logits.size(); ++i) logits.l[i] -= cfg.learning_rate * obj.d_logits[i];
        }
        const LossBreakdown loss = mask_loss(weights, logits, all, reference, cfg.lambda);
        check_finite(loss);
        result.log.entries.push_back({epoch, loss, logits.density()});
    }

    result.subnetwork = extract(weights, logits, task);
    result.subnetwork.checkpoint_id = checkpoint_id;
    result.subnetwork.config = cfg;
    return result;
}

Subnetwork extract(const FlatWeights& weights, const MaskLogits& logits, const TaskContext& task) {
    require(logits.size() == weights.size(), "extract: logits length mismatch");
    Subnetwork s;
    s.task_index = task.index();
    s.num_tasks = task.num_tasks();
    s.mask = logits.hard_mask();
    s.masked_weights = apply_gates(weights, hard_gates(logits));
    return s;
}

}  // namespace ctxprune
