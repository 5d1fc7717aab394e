#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxprune/gridworld.hpp"
#include "ctxprune/masker.hpp"
#include "ctxprune/qnet.hpp"

namespace ctxprune {

/// Category of one weight index across a set of task masks.
///   Inactive:        off in every task
///   TaskSpecific:    on in exactly one task (takes precedence when K = 1)
///   GloballyShared:  on in every task
///   PartiallyShared: on in at least two but not all tasks
enum class WeightCategory : std::uint8_t { Inactive = 0, GloballyShared, PartiallyShared, TaskSpecific };
inline constexpr int kNumCategories = 4;

const char* category_name(WeightCategory c);

WeightCategory classify_weight(int active_tasks, int num_masks);

struct WeightTaxonomy {
    std::size_t num_weights = 0;
    int num_masks = 0;
    std::size_t inactive = 0;
    std::size_t globally_shared = 0;
    std::size_t partially_shared = 0;
    std::size_t task_specific = 0;
    /// Per mask: weights kept, and weights kept by this mask only.
    std::vector<std::size_t> active_per_mask;
    std::vector<std::size_t> specific_per_mask;

    std::size_t active() const { return num_weights - inactive; }
    std::size_t count(WeightCategory c) const;
    /// Fraction of all N weights.
    double fraction_of_total(WeightCategory c) const;
    /// Fraction of weights kept by at least one mask; undefined when none are.
    std::optional<double> fraction_of_active(WeightCategory c) const;

    bool operator==(const WeightTaxonomy&) const = default;
};

/// Per-index categories.
std::vector<WeightCategory> classify(std::span<const std::vector<std::uint8_t>> masks);

WeightTaxonomy taxonomy(std::span<const std::vector<std::uint8_t>> masks);

/// Where the task one-hot sits inside the network input.
struct ObservationLayout {
    int input_dim = 0;
    int context_offset = 0;
    int num_context = 0;

    static ObservationLayout from_env(const EnvConfig& env);
    void validate() const;
};

struct ContextConnectionStats {
    /// Weights from context input columns to the first hidden layer: K * hidden_dims[0].
    std::size_t context_weight_total = 0;
    /// Context-connected weights per WeightCategory (indexed by the enum value).
    std::array<std::size_t, kNumCategories> context_by_category{};
    /// Context-connected share of the task-specific weights; undefined when
    /// there are no task-specific weights.
    std::optional<double> task_specific_context_share;
    /// Task index of each mask, in input order.
    std::vector<int> mask_tasks;
    /// [mask][slot]: kept context weights of that mask attached to each context slot.
    std::vector<std::vector<std::size_t>> retained_by_slot;
    /// [mask][slot]: task-specific context weights of that mask per slot.
    std::vector<std::vector<std::size_t>> specific_by_slot;

    /// Share of a mask's kept context weights attached to its own task's slot.
    std::optional<double> own_slot_share(std::size_t mask) const;

    bool operator==(const ContextConnectionStats&) const = default;
};

/// Flat indices of the first-layer weights whose input column is a context slot.
std::vector<std::size_t> context_weight_indices(const NetSpec& spec, const ObservationLayout& layout);

ContextConnectionStats context_stats(std::span<const std::vector<std::uint8_t>> masks,
                                     std::span<const int> mask_tasks, const NetSpec& spec,
                                     const ObservationLayout& layout);

/// Rows: the full network, then one row per subnetwork. Columns: evaluation task.
struct ReturnMatrix {
    std::vector<std::string> row_names;
    std::vector<std::string> column_names;
    std::vector<std::vector<double>> values;
    int episodes = 0;
    std::uint64_t seed = 0;

    void write_csv(std::ostream& out) const;

    bool operator==(const ReturnMatrix&) const = default;
};

ReturnMatrix return_matrix(const FlatWeights& full, std::span<const Subnetwork> subnets,
                           const EnvConfig& env, int episodes, std::uint64_t seed);

struct MaskSummary {
    int task_index = 0;
    double density = 0.0;
    MaskTrainConfig config;

    bool operator==(const MaskSummary&) const = default;
};

struct SubnetReport {
    int format_version = 1;
    std::string checkpoint_id;
    EnvConfig env;
    NetSpec net;
    std::vector<MaskSummary> masks;
    WeightTaxonomy taxonomy;
    ContextConnectionStats context;
    ReturnMatrix returns;

    bool operator==(const SubnetReport&) const = default;
};

/// Bundles the statistics. Every subnetwork must carry `checkpoint_id`.
SubnetReport report(const std::string& checkpoint_id, const EnvConfig& env, const NetSpec& net,
                    std::span<const Subnetwork> subnets, const WeightTaxonomy& tax,
                    const ContextConnectionStats& ctx, const ReturnMatrix& returns);

/// Runs taxonomy, context_stats and return_matrix and bundles them.
SubnetReport analyze(const std::string& checkpoint_id, const FlatWeights& full,
                     std::span<const Subnetwork> subnets, const EnvConfig& env, int episodes,
                     std::uint64_t seed);

}  // namespace ctxprune
