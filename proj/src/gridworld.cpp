#include "ctxprune/gridworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ctxprune/error.hpp"
#include "ctxprune/rng.hpp"

namespace ctxprune {

namespace {

void config_check(bool cond, const std::string& what) {
    if (!cond) fail(ErrorKind::Config, "env." + what);
}

}  // namespace

void EnvConfig::validate() const {
    config_check(grid_width > 0, "grid_width must be positive");
    config_check(grid_height > 0, "grid_height must be positive");
    config_check(num_tasks > 0, "num_tasks must be positive");
    config_check(objects_per_color > 0, "objects_per_color must be positive");
    config_check(static_cast<long long>(grid_width) * grid_height >=
                     static_cast<long long>(num_tasks) * objects_per_color + 1,
                 "grid_width*grid_height must hold all objects plus the agent");
    config_check(max_steps >= grid_width + grid_height,
                 "max_steps must be at least grid_width + grid_height");
    config_check(std::isfinite(correct_reward) && correct_reward > 0.0,
                 "correct_reward must be positive");
    config_check(std::isfinite(step_penalty) && step_penalty <= 0.0,
                 "step_penalty must be <= 0");
    config_check(std::isfinite(wrong_pickup_penalty) && wrong_pickup_penalty <= 0.0,
                 "wrong_pickup_penalty must be <= 0");
}

TaskContext::TaskContext(int index, int num_tasks) : index_(index), num_tasks_(num_tasks) {
    require(num_tasks > 0, "TaskContext: num_tasks must be positive");
    if (index < 0 || index >= num_tasks) {
        fail(ErrorKind::InvalidArgument, "task index " + std::to_string(index) +
                                             " out of range [0, " + std::to_string(num_tasks) +
                                             ")");
    }
}

std::vector<double> TaskContext::vector() const {
    std::vector<double> v(static_cast<std::size_t>(num_tasks_), 0.0);
    v[static_cast<std::size_t>(index_)] = 1.0;
    return v;
}

std::string task_name(int index, int num_tasks) {
    static const std::array<const char*, 4> colors = {"red", "blue", "purple", "grey"};
    if (num_tasks == 4 && index >= 0 && index < 4) return colors[static_cast<std::size_t>(index)];
    return "task" + std::to_string(index);
}

GridWorld::GridWorld(EnvConfig config) : config_(config) { config_.validate(); }

ResetResult GridWorld::reset(const TaskContext& context, std::uint64_t episode_seed) const {
    require(context.num_tasks() == config_.num_tasks,
            "reset: context has " + std::to_string(context.num_tasks()) +
                " tasks, environment has " + std::to_string(config_.num_tasks));

    const int cells = config_.num_cells();
    Rng rng(episode_seed);
    std::uniform_int_distribution<int> pick(0, cells - 1);
    std::vector<bool> occupied(static_cast<std::size_t>(cells), false);
    auto draw_free = [&] {
        for (;;) {
            const int c = pick(rng);
            if (!occupied[static_cast<std::size_t>(c)]) {
                occupied[static_cast<std::size_t>(c)] = true;
                return c;
            }
        }
    };

    GridState state;
    state.object_map.assign(static_cast<std::size_t>(cells), -1);
    state.context = context.index();
    const int agent_cell = draw_free();
    state.agent = {agent_cell / config_.grid_width, agent_cell % config_.grid_width};
    for (int color = 0; color < config_.num_tasks; ++color) {
        for (int k = 0; k < config_.objects_per_color; ++k) {
            state.object_map[static_cast<std::size_t>(draw_free())] = color;
        }
    }
    Observation obs = observe(state);
    return {std::move(state), std::move(obs)};
}

StepResult GridWorld::step(const GridState& state, Action action) const {
    if (state.terminated) fail(ErrorKind::InvalidArgument, "step: episode already terminated");

    StepResult out;
    out.state = state;
    GridState& s = out.state;
    Position next = s.agent;
    switch (action) {
        case Action::Up: next.row -= 1; break;
        case Action::Down: next.row += 1; break;
        case Action::Left: next.col -= 1; break;
        case Action::Right: next.col += 1; break;
        default: fail(ErrorKind::InvalidArgument, "step: unknown action");
    }
    if (next.row >= 0 && next.row < config_.grid_height && next.col >= 0 &&
        next.col < config_.grid_width) {
        s.agent = next;
    }

    double reward = config_.step_penalty;
    int& cell = s.object_map[static_cast<std::size_t>(s.agent.row * config_.grid_width +
                                                      s.agent.col)];
    if (cell >= 0) {
        if (cell == s.context) {
            reward += config_.correct_reward;
            s.terminated = true;
        } else {
            reward += config_.wrong_pickup_penalty;
        }
        cell = -1;
    }
    s.steps_elapsed += 1;
    if (s.steps_elapsed >= config_.max_steps) s.terminated = true;

    out.reward = reward;
    out.done = s.terminated;
    out.observation = observe(s);
    return out;
}

Observation GridWorld::observe(const GridState& state) const {
    const int channels = config_.cell_channels();
    Observation obs(static_cast<std::size_t>(config_.observation_size()), 0.0);
    for (int c = 0; c < config_.num_cells(); ++c) {
        const int color = state.object_map[static_cast<std::size_t>(c)];
        if (color >= 0) obs[static_cast<std::size_t>(c * channels + color)] = 1.0;
    }
    const int agent_cell = state.agent.row * config_.grid_width + state.agent.col;
    obs[static_cast<std::size_t>(agent_cell * channels + config_.num_tasks)] = 1.0;
    obs[static_cast<std::size_t>(config_.context_offset() + state.context)] = 1.0;
    return obs;
}

DecodedObservation GridWorld::decode(std::span<const double> observation) const {
    require(static_cast<int>(observation.size()) == config_.observation_size(),
            "decode: observation length mismatch");
    const int channels = config_.cell_channels();
    DecodedObservation out;
    out.object_map.assign(static_cast<std::size_t>(config_.num_cells()), -1);
    int agents = 0;
    for (int c = 0; c < config_.num_cells(); ++c) {
        for (int ch = 0; ch < channels; ++ch) {
            const double v = observation[static_cast<std::size_t>(c * channels + ch)];
            if (v == 0.0) continue;
            require(v == 1.0, "decode: non-binary feature");
            if (ch == config_.num_tasks) {
                out.agent = {c / config_.grid_width, c % config_.grid_width};
                ++agents;
            } else {
                require(out.object_map[static_cast<std::size_t>(c)] < 0,
                        "decode: two objects in one cell");
                out.object_map[static_cast<std::size_t>(c)] = ch;
            }
        }
    }
    require(agents == 1, "decode: expected exactly one agent");
    int contexts = 0;
    for (int k = 0; k < config_.num_tasks; ++k) {
        const double v = observation[static_cast<std::size_t>(config_.context_offset() + k)];
        if (v == 1.0) {
            out.context = k;
            ++contexts;
        } else {
            require(v == 0.0, "decode: non-binary context entry");
        }
    }
    require(contexts == 1, "decode: context is not one-hot");
    return out;
}

ReturnBounds return_bounds(const EnvConfig& config) {
    config.validate();
    ReturnBounds b;
    b.max = config.correct_reward + config.step_penalty;
    b.min = config.max_steps * config.step_penalty +
            static_cast<double>(config.num_tasks - 1) * config.objects_per_color *
                config.wrong_pickup_penalty;
    return b;
}

double normalize_return(const EnvConfig& config, double episode_return) {
    const ReturnBounds b = return_bounds(config);
    return (episode_return - b.min) / (b.max - b.min);
}

double optimal_return_from(const EnvConfig& config, const GridState& state) {
    config.validate();
    require(config.grid_width <= 6 && config.grid_height <= 6,
            "optimal_return_oracle: grid larger than 6x6");
    require(!state.terminated, "optimal_return_oracle: state already terminated");

    // best[cell] = highest reward accumulated over walks of exactly t steps that
    // end on `cell` without having touched a target. A wrong object is charged on
    // every entry; optimal walks never revisit a cell, so this is exact.
    const int w = config.grid_width;
    const int h = config.grid_height;
    const double lowest = -std::numeric_limits<double>::infinity();
    std::vector<double> best(static_cast<std::size_t>(w * h), lowest);
    best[static_cast<std::size_t>(state.agent.row * w + state.agent.col)] = 0.0;

    double answer = lowest;
    const int remaining = config.max_steps - state.steps_elapsed;
    constexpr std::array<std::array<int, 2>, 4> moves = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
    for (int t = 1; t <= remaining; ++t) {
        std::vector<double> next(best.size(), lowest);
        for (int cell = 0; cell < w * h; ++cell) {
            const double acc = best[static_cast<std::size_t>(cell)];
            if (acc == lowest) continue;
            const int r = cell / w;
            const int c = cell % w;
            for (const auto& m : moves) {
                int nr = r + m[0];
                int nc = c + m[1];
                if (nr < 0 || nr >= h || nc < 0 || nc >= w) {
                    nr = r;
                    nc = c;
                }
                const int dest = nr * w + nc;
                const int obj = state.object_map[static_cast<std::size_t>(dest)];
                double value = acc + config.step_penalty;
                if (obj == state.context) {
                    answer = std::max(answer, value + config.correct_reward);
                    continue;
                }
                if (obj >= 0) value += config.wrong_pickup_penalty;
                next[static_cast<std::size_t>(dest)] =
                    std::max(next[static_cast<std::size_t>(dest)], value);
            }
        }
        best = std::move(next);
    }
    if (answer == lowest) {
        // No target reachable in time: the best walk just times out.
        for (double v : best) answer = std::max(answer, v);
    }
    return answer;
}

double optimal_return_oracle(const EnvConfig& config, const TaskContext& context,
                             std::uint64_t episode_seed) {
    const GridWorld env(config);
    return optimal_return_from(config, env.reset(context, episode_seed).state);
}

}  // namespace ctxprune
