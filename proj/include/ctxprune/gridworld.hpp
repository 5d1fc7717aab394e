#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctxprune {

/// Environment parameters for the K-colour object collection grid.
struct EnvConfig {
    int grid_width = 5;
    int grid_height = 5;
    int num_tasks = 4;
    int objects_per_color = 1;
    double step_penalty = -0.01;
    double wrong_pickup_penalty = -0.1;
    double correct_reward = 1.0;
    int max_steps = 50;
    std::uint64_t seed = 0;

    /// Throws Error(Config) naming the first violated constraint.
    void validate() const;

    int num_cells() const { return grid_width * grid_height; }
    int cell_channels() const { return num_tasks + 1; }
    int observation_size() const { return num_cells() * cell_channels() + num_tasks; }
    /// Index of the first context slot; the context occupies the last K entries.
    int context_offset() const { return num_cells() * cell_channels(); }

    bool operator==(const EnvConfig&) const = default;
};

/// One-hot task identifier.
class TaskContext {
public:
    TaskContext(int index, int num_tasks);

    int index() const { return index_; }
    int num_tasks() const { return num_tasks_; }
    std::vector<double> vector() const;

    bool operator==(const TaskContext&) const = default;

private:
    int index_;
    int num_tasks_;
};

/// Human-readable task names; the four default colours when K = 4.
std::string task_name(int index, int num_tasks);

enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr int kNumActions = 4;

struct Position {
    int row = 0;
    int col = 0;
    bool operator==(const Position&) const = default;
};

struct GridState {
    Position agent;
    std::vector<int> object_map;  // per cell: colour index, or -1 when empty
    int context = 0;
    int steps_elapsed = 0;
    bool terminated = false;

    bool operator==(const GridState&) const = default;
};

using Observation = std::vector<double>;

struct ResetResult {
    GridState state;
    Observation observation;
};

struct StepResult {
    GridState state;
    Observation observation;
    double reward = 0.0;
    bool done = false;
};

/// A decoded observation: agent position, object layout and task.
struct DecodedObservation {
    Position agent;
    std::vector<int> object_map;
    int context = 0;
};

/// Deterministic, fully observable grid. An instance holds only its config and
/// may be shared read-only between threads.
class GridWorld {
public:
    explicit GridWorld(EnvConfig config);

    const EnvConfig& config() const { return config_; }

    /// Places the agent and K * objects_per_color objects on distinct cells
    /// by rejection sampling from a stream seeded with `episode_seed`.
    ResetResult reset(const TaskContext& context, std::uint64_t episode_seed) const;

    /// Moves one cell (walls are no-ops). Throws when the episode is over.
    StepResult step(const GridState& state, Action action) const;

    Observation observe(const GridState& state) const;
    DecodedObservation decode(std::span<const double> observation) const;

private:
    EnvConfig config_;
};

struct ReturnBounds {
    double min = 0.0;
    double max = 0.0;
};

/// Analytic, placement-independent return bounds used for normalization.
ReturnBounds return_bounds(const EnvConfig& config);

/// (episode_return - min) / (max - min).
double normalize_return(const EnvConfig& config, double episode_return);

/// Best achievable return for the episode that `reset(context, episode_seed)`
/// produces, by exhaustive search over (step, cell). Grids up to 6x6 only.
double optimal_return_oracle(const EnvConfig& config, const TaskContext& context,
                             std::uint64_t episode_seed);

/// Same search from an explicit state.
double optimal_return_from(const EnvConfig& config, const GridState& state);

}  // namespace ctxprune
