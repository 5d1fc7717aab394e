#include "ctxprune/analysis.hpp"

#include <ostream>
#include <set>
#include <sstream>

#include "ctxprune/dqn.hpp"
#include "ctxprune/error.hpp"
#include "ctxprune/rng.hpp"

namespace ctxprune {

const char* category_name(WeightCategory c) {
    switch (c) {
        case WeightCategory::Inactive: return "inactive";
        case WeightCategory::GloballyShared: return "globally_shared";
        case WeightCategory::PartiallyShared: return "partially_shared";
        case WeightCategory::TaskSpecific: return "task_specific";
    }
    return "unknown";
}

WeightCategory classify_weight(int active_tasks, int num_masks) {
    if (active_tasks == 0) return WeightCategory::Inactive;
    if (active_tasks == 1) return WeightCategory::TaskSpecific;
    if (active_tasks == num_masks) return WeightCategory::GloballyShared;
    return WeightCategory::PartiallyShared;
}

std::size_t WeightTaxonomy::count(WeightCategory c) const {
    switch (c) {
        case WeightCategory::Inactive: return inactive;
        case WeightCategory::GloballyShared: return globally_shared;
        case WeightCategory::PartiallyShared: return partially_shared;
        case WeightCategory::TaskSpecific: return task_specific;
    }
    return 0;
}

double WeightTaxonomy::fraction_of_total(WeightCategory c) const {
    return num_weights == 0 ? 0.0 : static_cast<double>(count(c)) / static_cast<double>(num_weights);
}

std::optional<double> WeightTaxonomy::fraction_of_active(WeightCategory c) const {
    if (c == WeightCategory::Inactive || active() == 0) return std::nullopt;
    return static_cast<double>(count(c)) / static_cast<double>(active());
}

namespace {

void check_masks(std::span<const std::vector<std::uint8_t>> masks) {
    require(!masks.empty(), "taxonomy: at least one mask is required");
    for (const auto& m : masks) {
        if (m.size() != masks.front().size()) fail(ErrorKind::Mismatch, "taxonomy: mask lengths differ");
    }
}

}  // namespace

std::vector<WeightCategory> classify(std::span<const std::vector<std::uint8_t>> masks) {
    check_masks(masks);
    const int k = static_cast<int>(masks.size());
    std::vector<WeightCategory> out(masks.front().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        int on = 0;
        for (const auto& m : masks) on += m[i] != 0 ? 1 : 0;
        out[i] = classify_weight(on, k);
    }
    return out;
}

WeightTaxonomy taxonomy(std::span<const std::vector<std::uint8_t>> masks) {
    const std::vector<WeightCategory> cats = classify(masks);
    WeightTaxonomy t;
    t.num_weights = cats.size();
    t.num_masks = static_cast<int>(masks.size());
    t.active_per_mask.assign(masks.size(), 0);
    t.specific_per_mask.assign(masks.size(), 0);
    for (std::size_t i = 0; i < cats.size(); ++i) {
        switch (cats[i]) {
            case WeightCategory::Inactive: ++t.inactive; break;
            case WeightCategory::GloballyShared: ++t.globally_shared; break;
            case WeightCategory::PartiallyShared: ++t.partially_shared; break;
            case WeightCategory::TaskSpecific: ++t.task_specific; break;
        }
        for (std::size_t k = 0; k < masks.size(); ++k) {
            if (masks[k][i] == 0) continue;
            ++t.active_per_mask[k];
            if (cats[i] == WeightCategory::TaskSpecific) ++t.specific_per_mask[k];
        }
    }
    return t;
}

ObservationLayout ObservationLayout::from_env(const EnvConfig& env) {
    return {env.observation_size(), env.context_offset(), env.num_tasks};
}

void ObservationLayout::validate() const {
    if (num_context <= 0 || context_offset < 0 || context_offset + num_context != input_dim) {
        fail(ErrorKind::InvalidArgument,
             "observation layout must declare the trailing context slots of the input");
    }
}

std::vector<std::size_t> context_weight_indices(const NetSpec& spec, const ObservationLayout& layout) {
    layout.validate();
    if (spec.input_dim != layout.input_dim) {
        fail(ErrorKind::Mismatch, "context layout input_dim does not match the network");
    }
    std::vector<std::size_t> idx;
    const int rows = spec.layer_rows(0);
    for (int r = 0; r < rows; ++r) {
        for (int s = 0; s < layout.num_context; ++s) {
            idx.push_back(static_cast<std::size_t>(r) * static_cast<std::size_t>(spec.input_dim) +
                          static_cast<std::size_t>(layout.context_offset + s));
        }
    }
    return idx;
}

std::optional<double> ContextConnectionStats::own_slot_share(std::size_t mask) const {
    require(mask < retained_by_slot.size(), "own_slot_share: mask index out of range");
    std::size_t total = 0;
    for (std::size_t v : retained_by_slot[mask]) total += v;
    if (total == 0) return std::nullopt;
    return static_cast<double>(retained_by_slot[mask][static_cast<std::size_t>(mask_tasks[mask])]) /
           static_cast<double>(total);
}

ContextConnectionStats context_stats(std::span<const std::vector<std::uint8_t>> masks,
                                     std::span<const int> mask_tasks, const NetSpec& spec,
                                     const ObservationLayout& layout) {
    check_masks(masks);
    require(masks.size() == mask_tasks.size(), "context_stats: one task index per mask is required");
    if (masks.front().size() != spec.num_weights()) {
        fail(ErrorKind::Mismatch, "context_stats: mask length does not match the network");
    }
    for (int t : mask_tasks) {
        require(t >= 0 && t < layout.num_context, "context_stats: mask task outside the context slots");
    }

    const std::vector<WeightCategory> cats = classify(masks);
    ContextConnectionStats st;
    st.mask_tasks.assign(mask_tasks.begin(), mask_tasks.end());
    st.retained_by_slot.assign(masks.size(), std::vector<std::size_t>(static_cast<std::size_t>(layout.num_context), 0));
    st.specific_by_slot = st.retained_by_slot;

    const auto indices = context_weight_indices(spec, layout);
    st.context_weight_total = indices.size();
    for (std::size_t i : indices) {
        const auto slot = static_cast<std::size_t>(static_cast<int>(i % static_cast<std::size_t>(spec.input_dim)) -
                                                   layout.context_offset);
        ++st.context_by_category[static_cast<std::size_t>(cats[i])];
        for (std::size_t k = 0; k < masks.size(); ++k) {
            if (masks[k][i] == 0) continue;
            ++st.retained_by_slot[k][slot];
            if (cats[i] == WeightCategory::TaskSpecific) ++st.specific_by_slot[k][slot];
        }
    }

    std::size_t specific = 0;
    for (WeightCategory c : cats) specific += c == WeightCategory::TaskSpecific ? 1 : 0;
    if (specific > 0) {
        st.task_specific_context_share =
            static_cast<double>(st.context_by_category[static_cast<std::size_t>(WeightCategory::TaskSpecific)]) /
            static_cast<double>(specific);
    }
    return st;
}

void ReturnMatrix::write_csv(std::ostream& out) const {
    std::ostringstream s;
    s.precision(17);
    s << "network";
    for (const auto& c : column_names) s << ',' << c;
    s << '\n';
    for (std::size_t r = 0; r < values.size(); ++r) {
        s << row_names[r];
        for (double v : values[r]) s << ',' << v;
        s << '\n';
    }
    out << s.str();
}

ReturnMatrix return_matrix(const FlatWeights& full, std::span<const Subnetwork> subnets,
                           const EnvConfig& env, int episodes, std::uint64_t seed) {
    require(episodes >= 1, "return_matrix: episodes must be at least 1");
    env.validate();
    ReturnMatrix m;
    m.episodes = episodes;
    m.seed = seed;
    for (int k = 0; k < env.num_tasks; ++k) m.column_names.push_back(task_name(k, env.num_tasks));

    auto row = [&](const FlatWeights& net) {
        std::vector<double> values;
        for (int k = 0; k < env.num_tasks; ++k) {
            // Same layouts in a column for every row.
            values.push_back(
                evaluate_greedy(net, env, TaskContext(k, env.num_tasks), episodes, seed).normalized_return);
        }
        return values;
    };
    m.row_names.push_back("full");
    m.values.push_back(row(full));
    for (const Subnetwork& s : subnets) {
        m.row_names.push_back("subnet_" + task_name(s.task_index, env.num_tasks));
        m.values.push_back(row(s.masked_weights));
    }
    return m;
}

SubnetReport report(const std::string& checkpoint_id, const EnvConfig& env, const NetSpec& net,
                    std::span<const Subnetwork> subnets, const WeightTaxonomy& tax,
                    const ContextConnectionStats& ctx, const ReturnMatrix& returns) {
    for (const Subnetwork& s : subnets) {
        if (s.checkpoint_id != checkpoint_id) {
            fail(ErrorKind::Mismatch, "mask for task " + std::to_string(s.task_index) +
                                          " was learned on checkpoint '" + s.checkpoint_id +
                                          "', expected '" + checkpoint_id + "'");
        }
    }
    if (tax.num_masks != static_cast<int>(subnets.size()) ||
        returns.values.size() != subnets.size() + 1 || ctx.mask_tasks.size() != subnets.size()) {
        fail(ErrorKind::Mismatch, "report: statistics were computed over different mask sets");
    }
    SubnetReport r;
    r.checkpoint_id = checkpoint_id;
    r.env = env;
    r.net = net;
    for (const Subnetwork& s : subnets) r.masks.push_back({s.task_index, s.density(), s.config});
    r.taxonomy = tax;
    r.context = ctx;
    r.returns = returns;
    return r;
}

SubnetReport analyze(const std::string& checkpoint_id, const FlatWeights& full,
                     std::span<const Subnetwork> subnets, const EnvConfig& env, int episodes,
                     std::uint64_t seed) {
    require(!subnets.empty(), "analyze: at least one subnetwork is required");
    std::set<int> seen;
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<int> tasks;
    for (const Subnetwork& s : subnets) {
        if (s.checkpoint_id != checkpoint_id) {
            fail(ErrorKind::Mismatch, "mask for task " + std::to_string(s.task_index) +
                                          " does not derive from checkpoint " + checkpoint_id);
        }
        if (s.num_tasks != env.num_tasks) fail(ErrorKind::Mismatch, "mask task count differs from config");
        if (!seen.insert(s.task_index).second) {
            fail(ErrorKind::InvalidArgument, "duplicate mask for task " + std::to_string(s.task_index));
        }
        masks.push_back(s.mask);
        tasks.push_back(s.task_index);
    }
    const WeightTaxonomy tax = taxonomy(masks);
    const ContextConnectionStats ctx = context_stats(masks, tasks, full.spec, ObservationLayout::from_env(env));
    const ReturnMatrix returns = return_matrix(full, subnets, env, episodes, seed);
    return report(checkpoint_id, env, full.spec, subnets, tax, ctx, returns);
}

}  // namespace ctxprune
