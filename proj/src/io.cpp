#include "ctxprune/io.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ctxprune/error.hpp"

namespace ctxprune {

using json = nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "ctxprune-checkpoint";
constexpr const char* kMaskFormat = "ctxprune-mask";
constexpr const char* kReportFormat = "ctxprune-report";

/// Typed, strict access to one JSON object. Every key must be consumed by
/// get()/need() before finish(), so misspelled fields are reported.
class Fields {
public:
    Fields(const json& j, std::string path, ErrorKind kind) : j_(j), path_(std::move(path)), kind_(kind) {
        if (!j_.is_object()) fail(kind_, where("") + "expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        read(*it, where(key), out);
    }

    template <class T>
    void need(const char* key, T& out) {
        if (!j_.contains(key)) fail(kind_, where(key) + "missing");
        get(key, out);
    }

    const json& sub(const char* key) {
        if (!j_.contains(key)) fail(kind_, where(key) + "missing");
        seen_.insert(key);
        return j_.at(key);
    }

    bool has(const char* key) const { return j_.contains(key); }

    std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) fail(kind_, where(item.key().c_str()) + "unknown field");
        }
    }

private:
    std::string where(const char* key) const {
        std::string p = path_;
        if (key[0] != '\0') p = p.empty() ? key : p + "." + key;
        return p.empty() ? "" : p + ": ";
    }

    void read(const json& v, const std::string& at, double& out) const {
        if (!v.is_number()) fail(kind_, at + "expected a number");
        out = v.get<double>();
    }
    void read(const json& v, const std::string& at, int& out) const {
        if (!v.is_number_integer()) fail(kind_, at + "expected an integer");
        const auto x = v.get<long long>();
        if (x < INT32_MIN || x > INT32_MAX) fail(kind_, at + "integer out of range");
        out = static_cast<int>(x);
    }
    void read(const json& v, const std::string& at, long& out) const {
        if (!v.is_number_integer()) fail(kind_, at + "expected an integer");
        out = v.get<long>();
    }
    void read(const json& v, const std::string& at, std::uint64_t& out) const {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
            fail(kind_, at + "expected a non-negative integer");
        }
        out = v.get<std::uint64_t>();
    }
    void read(const json& v, const std::string& at, bool& out) const {
        if (!v.is_boolean()) fail(kind_, at + "expected true or false");
        out = v.get<bool>();
    }
    void read(const json& v, const std::string& at, std::string& out) const {
        if (!v.is_string()) fail(kind_, at + "expected a string");
        out = v.get<std::string>();
    }
    template <class T>
    void read(const json& v, const std::string& at, std::vector<T>& out) const {
        if (!v.is_array()) fail(kind_, at + "expected an array");
        out.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            T x{};
            read(v[i], at.substr(0, at.size() - 2) + "[" + std::to_string(i) + "]: ", x);
            out.push_back(x);
        }
    }
    void read(const json& v, const std::string& at, std::optional<double>& out) const {
        if (v.is_null()) {
            out.reset();
            return;
        }
        double x = 0.0;
        read(v, at, x);
        out = x;
    }

    const json& j_;
    std::string path_;
    ErrorKind kind_;
    std::set<std::string> seen_;
};

// ---- to_json ----------------------------------------------------------------

json env_json(const EnvConfig& e) {
    return {{"grid_width", e.grid_width},
            {"grid_height", e.grid_height},
            {"num_tasks", e.num_tasks},
            {"objects_per_color", e.objects_per_color},
            {"step_penalty", e.step_penalty},
            {"wrong_pickup_penalty", e.wrong_pickup_penalty},
            {"correct_reward", e.correct_reward},
            {"max_steps", e.max_steps},
            {"seed", e.seed}};
}

json net_json(const NetSpec& n) {
    return {{"input_dim", n.input_dim}, {"hidden_dims", n.hidden_dims}, {"output_dim", n.output_dim}};
}

json dqn_json(const DqnConfig& d) {
    return {{"gamma", d.gamma},
            {"learning_rate", d.learning_rate},
            {"batch_size", d.batch_size},
            {"buffer_capacity", d.buffer_capacity},
            {"target_update_interval", d.target_update_interval},
            {"epsilon_start", d.epsilon_start},
            {"epsilon_end", d.epsilon_end},
            {"exploration_fraction", d.exploration_fraction},
            {"total_env_steps", d.total_env_steps},
            {"learning_starts", d.learning_starts},
            {"train_interval", d.train_interval},
            {"max_grad_norm", d.max_grad_norm},
            {"relabel_contexts", d.relabel_contexts},
            {"optimizer", d.optimizer},
            {"adam_beta1", d.adam_beta1},
            {"adam_beta2", d.adam_beta2},
            {"adam_epsilon", d.adam_epsilon},
            {"eval_interval", d.eval_interval},
            {"eval_episodes", d.eval_episodes},
            {"seed", d.seed}};
}

json mask_cfg_json(const MaskTrainConfig& m) {
    return {{"lambda", m.lambda},
            {"sparsity_normalization", "mean"},
            {"learning_rate", m.learning_rate},
            {"batch_size", m.batch_size},
            {"epochs", m.epochs},
            {"logit_init_std", m.logit_init_std},
            {"logit_init_mean", m.logit_init_mean},
            {"num_states", m.num_states},
            {"state_epsilon", m.state_epsilon},
            {"seed", m.seed}};
}

json loss_json(const MaskTrainLogEntry& e) {
    return {{"epoch", e.epoch},
            {"q_value_loss", e.loss.q_value_loss},
            {"sparsity_loss", e.loss.sparsity_loss},
            {"total", e.loss.total},
            {"density", e.density}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// ---- from_json --------------------------------------------------------------

EnvConfig env_from(const json& j, const std::string& path, ErrorKind kind) {
    EnvConfig e;
    Fields f(j, path, kind);
    f.get("grid_width", e.grid_width);
    f.get("grid_height", e.grid_height);
    f.get("num_tasks", e.num_tasks);
    f.get("objects_per_color", e.objects_per_color);
    f.get("step_penalty", e.step_penalty);
    f.get("wrong_pickup_penalty", e.wrong_pickup_penalty);
    f.get("correct_reward", e.correct_reward);
    f.get("max_steps", e.max_steps);
    f.get("seed", e.seed);
    f.finish();
    return e;
}

NetSpec net_from(const json& j, const std::string& path, ErrorKind kind) {
    NetSpec n;
    Fields f(j, path, kind);
    f.get("input_dim", n.input_dim);
    f.get("hidden_dims", n.hidden_dims);
    f.get("output_dim", n.output_dim);
    f.finish();
    return n;
}

DqnConfig dqn_from(const json& j, const std::string& path, ErrorKind kind) {
    DqnConfig d;
    Fields f(j, path, kind);
    f.get("gamma", d.gamma);
    f.get("learning_rate", d.learning_rate);
    f.get("batch_size", d.batch_size);
    f.get("buffer_capacity", d.buffer_capacity);
    f.get("target_update_interval", d.target_update_interval);
    f.get("epsilon_start", d.epsilon_start);
    f.get("epsilon_end", d.epsilon_end);
    f.get("exploration_fraction", d.exploration_fraction);
    f.get("total_env_steps", d.total_env_steps);
    f.get("learning_starts", d.learning_starts);
    f.get("train_interval", d.train_interval);
    f.get("max_grad_norm", d.max_grad_norm);
    f.get("relabel_contexts", d.relabel_contexts);
    f.get("optimizer", d.optimizer);
    f.get("adam_beta1", d.adam_beta1);
    f.get("adam_beta2", d.adam_beta2);
    f.get("adam_epsilon", d.adam_epsilon);
    f.get("eval_interval", d.eval_interval);
    f.get("eval_episodes", d.eval_episodes);
    f.get("seed", d.seed);
    f.finish();
    return d;
}

MaskTrainConfig mask_cfg_from(const json& j, const std::string& path, ErrorKind kind) {
    MaskTrainConfig m;
    Fields f(j, path, kind);
    f.get("lambda", m.lambda);
    std::string norm = "mean";
    f.get("sparsity_normalization", norm);
    if (norm != "mean") fail(kind, f.child("sparsity_normalization") + ": only \"mean\" is supported");
    f.get("learning_rate", m.learning_rate);
    f.get("batch_size", m.batch_size);
    f.get("epochs", m.epochs);
    f.get("logit_init_std", m.logit_init_std);
    f.get("logit_init_mean", m.logit_init_mean);
    f.get("num_states", m.num_states);
    f.get("state_epsilon", m.state_epsilon);
    f.get("seed", m.seed);
    f.finish();
    return m;
}

MaskTrainLogEntry loss_from(const json& j, const std::string& path) {
    MaskTrainLogEntry e;
    Fields f(j, path, ErrorKind::Format);
    f.need("epoch", e.epoch);
    f.need("q_value_loss", e.loss.q_value_loss);
    f.need("sparsity_loss", e.loss.sparsity_loss);
    f.need("total", e.loss.total);
    f.need("density", e.density);
    f.finish();
    return e;
}

/// Header common to every file this library writes.
void check_header(Fields& f, const char* expected_format, int max_version, int& version) {
    std::string format;
    f.need("format", format);
    if (format != expected_format) {
        fail(ErrorKind::Format, "expected a " + std::string(expected_format) + " file, found '" + format + "'");
    }
    f.need("format_version", version);
    if (version < 1 || version > max_version) {
        fail(ErrorKind::Format, std::string(expected_format) + " format_version " + std::to_string(version) +
                                    " is not supported (this build reads up to " +
                                    std::to_string(max_version) + ")");
    }
}

json parse_json(const std::string& text, ErrorKind kind) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(kind, std::string("invalid JSON: ") + e.what());
    }
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

// ---- config -----------------------------------------------------------------

void ExperimentConfig::finalize() {
    env.validate();
    if (net.input_dim == 0) net.input_dim = env.observation_size();
    net.validate();
    if (net.input_dim != env.observation_size()) {
        fail(ErrorKind::Config, "net.input_dim: " + std::to_string(net.input_dim) +
                                    " does not match the observation size " +
                                    std::to_string(env.observation_size()));
    }
    if (net.output_dim != kNumActions) fail(ErrorKind::Config, "net.output_dim: must be 4 (one per action)");
    dqn.validate();
    mask.validate();
    if (eval.episodes < 1) fail(ErrorKind::Config, "eval.episodes: must be at least 1");
    if (output_dir.empty()) fail(ErrorKind::Config, "output_dir: must not be empty");
}

ExperimentConfig parse_config(const std::string& json_text) {
    const json j = parse_json(json_text, ErrorKind::Config);
    ExperimentConfig cfg;
    Fields f(j, "", ErrorKind::Config);
    if (f.has("env")) cfg.env = env_from(f.sub("env"), "env", ErrorKind::Config);
    if (f.has("net")) cfg.net = net_from(f.sub("net"), "net", ErrorKind::Config);
    if (f.has("dqn")) cfg.dqn = dqn_from(f.sub("dqn"), "dqn", ErrorKind::Config);
    if (f.has("mask")) cfg.mask = mask_cfg_from(f.sub("mask"), "mask", ErrorKind::Config);
    if (f.has("eval")) {
        Fields e(f.sub("eval"), "eval", ErrorKind::Config);
        e.get("episodes", cfg.eval.episodes);
        e.get("seed", cfg.eval.seed);
        e.finish();
    }
    f.get("output_dir", cfg.output_dir);
    f.finish();
    cfg.finalize();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

std::string dump_config(const ExperimentConfig& cfg) {
    json j = {{"env", env_json(cfg.env)},
              {"net", net_json(cfg.net)},
              {"dqn", dqn_json(cfg.dqn)},
              {"mask", mask_cfg_json(cfg.mask)},
              {"eval", {{"episodes", cfg.eval.episodes}, {"seed", cfg.eval.seed}}},
              {"output_dir", cfg.output_dir}};
    return j.dump(2) + "\n";
}

// ---- checkpoint -------------------------------------------------------------

std::string checkpoint_id(const FlatWeights& weights) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_int = [&](std::int64_t v) { h = fnv1a(h, &v, sizeof v); };
    mix_int(weights.spec.input_dim);
    for (int d : weights.spec.hidden_dims) mix_int(d);
    mix_int(weights.spec.output_dim);
    h = fnv1a(h, weights.w.data(), weights.w.size() * sizeof(double));
    for (const auto& b : weights.biases) h = fnv1a(h, b.data(), b.size() * sizeof(double));
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << h;
    return s.str();
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    ckpt.weights.validate();
    json layers = json::array();
    for (const Layer& l : unflatten(ckpt.weights)) {
        layers.push_back({{"rows", l.rows}, {"cols", l.cols}, {"weights", l.weight}, {"biases", l.bias}});
    }
    json j = {{"format", kCheckpointFormat},
              {"format_version", ckpt.format_version},
              {"id", checkpoint_id(ckpt.weights)},
              {"net", net_json(ckpt.weights.spec)},
              {"layers", layers},
              {"env", env_json(ckpt.env)},
              {"dqn", dqn_json(ckpt.dqn)},
              {"final_returns", ckpt.final_returns}};
    return j.dump(1) + "\n";
}

Checkpoint decode_checkpoint(const std::string& text) {
    const json j = parse_json(text, ErrorKind::Format);
    Checkpoint c;
    Fields f(j, "", ErrorKind::Format);
    check_header(f, kCheckpointFormat, kCheckpointFormatVersion, c.format_version);
    f.need("id", c.id);
    const NetSpec spec = net_from(f.sub("net"), "net", ErrorKind::Format);
    try {
        spec.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Format, std::string("checkpoint ") + e.what());
    }

    const json& lj = f.sub("layers");
    if (!lj.is_array()) fail(ErrorKind::Format, "layers: expected an array");
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < lj.size(); ++i) {
        Layer l;
        Fields lf(lj[i], "layers[" + std::to_string(i) + "]", ErrorKind::Format);
        lf.need("rows", l.rows);
        lf.need("cols", l.cols);
        lf.need("weights", l.weight);
        lf.need("biases", l.bias);
        lf.finish();
        layers.push_back(std::move(l));
    }
    if (static_cast<int>(layers.size()) != spec.num_layers()) {
        fail(ErrorKind::Format, "layers: " + std::to_string(layers.size()) + " layers, net declares " +
                                    std::to_string(spec.num_layers()));
    }
    for (int l = 0; l < spec.num_layers(); ++l) {
        const Layer& layer = layers[static_cast<std::size_t>(l)];
        if (layer.rows != spec.layer_rows(l) || layer.cols != spec.layer_cols(l) ||
            layer.weight.size() != static_cast<std::size_t>(layer.rows) * layer.cols ||
            layer.bias.size() != static_cast<std::size_t>(layer.rows)) {
            fail(ErrorKind::Format, "layers[" + std::to_string(l) + "]: declared dims do not match array lengths");
        }
    }
    c.weights = flatten(spec, layers);
    c.env = env_from(f.sub("env"), "env", ErrorKind::Format);
    c.dqn = dqn_from(f.sub("dqn"), "dqn", ErrorKind::Format);
    f.need("final_returns", c.final_returns);
    f.finish();
    if (checkpoint_id(c.weights) != c.id) {
        fail(ErrorKind::Format, "checkpoint id " + c.id + " does not match its weights");
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_text(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_text(path)); }

// ---- mask -------------------------------------------------------------------

Subnetwork MaskFile::subnetwork(const Checkpoint& ckpt) const {
    if (checkpoint_id != ckpt.id) {
        fail(ErrorKind::Mismatch, "mask for task " + std::to_string(task_index) + " derives from checkpoint " +
                                      checkpoint_id + ", not " + ckpt.id);
    }
    if (logits.size() != ckpt.weights.size()) {
        fail(ErrorKind::Mismatch, "mask has " + std::to_string(logits.size()) + " entries, checkpoint has " +
                                      std::to_string(ckpt.weights.size()) + " weights");
    }
    Subnetwork s = extract(ckpt.weights, logits, TaskContext(task_index, num_tasks));
    s.checkpoint_id = checkpoint_id;
    s.config = config;
    return s;
}

std::string encode_mask(const MaskFile& mask) {
    const auto m = mask.logits.hard_mask();
    json j = {{"format", kMaskFormat},
              {"format_version", mask.format_version},
              {"task_index", mask.task_index},
              {"num_tasks", mask.num_tasks},
              {"checkpoint_id", mask.checkpoint_id},
              {"logits", mask.logits.l},
              {"mask", std::vector<int>(m.begin(), m.end())},
              {"config", mask_cfg_json(mask.config)},
              {"env", env_json(mask.env)},
              {"final", loss_json(mask.final_entry)}};
    return j.dump(1) + "\n";
}

MaskFile decode_mask(const std::string& text) {
    const json j = parse_json(text, ErrorKind::Format);
    MaskFile m;
    Fields f(j, "", ErrorKind::Format);
    check_header(f, kMaskFormat, kMaskFormatVersion, m.format_version);
    f.need("task_index", m.task_index);
    f.need("num_tasks", m.num_tasks);
    f.need("checkpoint_id", m.checkpoint_id);
    f.need("logits", m.logits.l);
    std::vector<int> bits;
    f.need("mask", bits);
    m.config = mask_cfg_from(f.sub("config"), "config", ErrorKind::Format);
    m.env = env_from(f.sub("env"), "env", ErrorKind::Format);
    m.final_entry = loss_from(f.sub("final"), "final");
    f.finish();

    if (m.num_tasks <= 0 || m.task_index < 0 || m.task_index >= m.num_tasks) {
        fail(ErrorKind::Format, "task_index: outside [0, num_tasks)");
    }
    const auto hard = m.logits.hard_mask();
    if (bits.size() != hard.size()) fail(ErrorKind::Format, "mask: length differs from logits");
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != hard[i]) fail(ErrorKind::Format, "mask: entry " + std::to_string(i) + " disagrees with its logit");
    }
    return m;
}

void save_mask(const MaskFile& mask, const std::filesystem::path& path) { write_text(path, encode_mask(mask)); }

MaskFile load_mask(const std::filesystem::path& path) { return decode_mask(read_text(path)); }

// ---- report -----------------------------------------------------------------

std::string encode_report(const SubnetReport& r) {
    const WeightTaxonomy& t = r.taxonomy;
    json counts = json::object();
    json of_total = json::object();
    json of_active = json::object();
    for (int c = 0; c < kNumCategories; ++c) {
        const auto cat = static_cast<WeightCategory>(c);
        counts[category_name(cat)] = t.count(cat);
        of_total[category_name(cat)] = t.fraction_of_total(cat);
        if (cat != WeightCategory::Inactive) of_active[category_name(cat)] = optional_json(t.fraction_of_active(cat));
    }
    json masks = json::array();
    for (const MaskSummary& m : r.masks) {
        masks.push_back({{"task_index", m.task_index}, {"density", m.density}, {"config", mask_cfg_json(m.config)}});
    }
    json ctx_counts = json::object();
    for (int c = 0; c < kNumCategories; ++c) {
        ctx_counts[category_name(static_cast<WeightCategory>(c))] = r.context.context_by_category[static_cast<std::size_t>(c)];
    }
    json own = json::array();
    for (std::size_t k = 0; k < r.context.mask_tasks.size(); ++k) own.push_back(optional_json(r.context.own_slot_share(k)));

    json j = {{"format", kReportFormat},
              {"format_version", r.format_version},
              {"checkpoint_id", r.checkpoint_id},
              {"env", env_json(r.env)},
              {"net", net_json(r.net)},
              {"masks", masks},
              {"taxonomy",
               {{"num_weights", t.num_weights},
                {"num_masks", t.num_masks},
                {"counts", counts},
                {"fraction_of_total", of_total},
                {"fraction_of_active", of_active},
                {"pruned_fraction", t.fraction_of_total(WeightCategory::Inactive)},
                {"active_per_mask", t.active_per_mask},
                {"specific_per_mask", t.specific_per_mask}}},
              {"context",
               {{"context_weight_total", r.context.context_weight_total},
                {"context_by_category", ctx_counts},
                {"task_specific_context_share", optional_json(r.context.task_specific_context_share)},
                {"mask_tasks", r.context.mask_tasks},
                {"retained_by_slot", r.context.retained_by_slot},
                {"specific_by_slot", r.context.specific_by_slot},
                {"own_slot_share", own}}},
              {"returns",
               {{"row_names", r.returns.row_names},
                {"column_names", r.returns.column_names},
                {"values", r.returns.values},
                {"episodes", r.returns.episodes},
                {"seed", r.returns.seed}}}};
    return j.dump(2) + "\n";
}

SubnetReport decode_report(const std::string& text) {
    const json j = parse_json(text, ErrorKind::Format);
    SubnetReport r;
    Fields f(j, "", ErrorKind::Format);
    check_header(f, kReportFormat, kReportFormatVersion, r.format_version);
    f.need("checkpoint_id", r.checkpoint_id);
    r.env = env_from(f.sub("env"), "env", ErrorKind::Format);
    r.net = net_from(f.sub("net"), "net", ErrorKind::Format);

    const json& mj = f.sub("masks");
    if (!mj.is_array()) fail(ErrorKind::Format, "masks: expected an array");
    for (std::size_t i = 0; i < mj.size(); ++i) {
        const std::string path = "masks[" + std::to_string(i) + "]";
        Fields mf(mj[i], path, ErrorKind::Format);
        MaskSummary m;
        mf.need("task_index", m.task_index);
        mf.need("density", m.density);
        m.config = mask_cfg_from(mf.sub("config"), path + ".config", ErrorKind::Format);
        mf.finish();
        r.masks.push_back(m);
    }

    {
        Fields tf(f.sub("taxonomy"), "taxonomy", ErrorKind::Format);
        WeightTaxonomy& t = r.taxonomy;
        tf.need("num_weights", t.num_weights);
        tf.need("num_masks", t.num_masks);
        Fields cf(tf.sub("counts"), "taxonomy.counts", ErrorKind::Format);
        cf.need("inactive", t.inactive);
        cf.need("globally_shared", t.globally_shared);
        cf.need("partially_shared", t.partially_shared);
        cf.need("task_specific", t.task_specific);
        cf.finish();
        tf.need("active_per_mask", t.active_per_mask);
        tf.need("specific_per_mask", t.specific_per_mask);
        // Fractions are derived from the counts.
        tf.sub("fraction_of_total");
        tf.sub("fraction_of_active");
        tf.sub("pruned_fraction");
        tf.finish();
        if (t.inactive + t.globally_shared + t.partially_shared + t.task_specific != t.num_weights) {
            fail(ErrorKind::Format, "taxonomy.counts: categories do not sum to num_weights");
        }
    }

    {
        Fields cf(f.sub("context"), "context", ErrorKind::Format);
        ContextConnectionStats& c = r.context;
        cf.need("context_weight_total", c.context_weight_total);
        Fields bf(cf.sub("context_by_category"), "context.context_by_category", ErrorKind::Format);
        for (int k = 0; k < kNumCategories; ++k) {
            bf.need(category_name(static_cast<WeightCategory>(k)), c.context_by_category[static_cast<std::size_t>(k)]);
        }
        bf.finish();
        cf.need("task_specific_context_share", c.task_specific_context_share);
        cf.need("mask_tasks", c.mask_tasks);
        cf.need("retained_by_slot", c.retained_by_slot);
        cf.need("specific_by_slot", c.specific_by_slot);
        cf.sub("own_slot_share");
        cf.finish();
        if (c.retained_by_slot.size() != c.mask_tasks.size()) {
            fail(ErrorKind::Format, "context.retained_by_slot: one row per mask expected");
        }
        for (int t : c.mask_tasks) {
            if (t < 0 || static_cast<std::size_t>(t) >= (c.retained_by_slot.empty() ? 0 : c.retained_by_slot.front().size())) {
                fail(ErrorKind::Format, "context.mask_tasks: task outside the slot range");
            }
        }
    }

    {
        Fields rf(f.sub("returns"), "returns", ErrorKind::Format);
        ReturnMatrix& m = r.returns;
        rf.need("row_names", m.row_names);
        rf.need("column_names", m.column_names);
        rf.need("values", m.values);
        rf.need("episodes", m.episodes);
        rf.need("seed", m.seed);
        rf.finish();
        if (m.values.size() != m.row_names.size()) fail(ErrorKind::Format, "returns.values: row count mismatch");
        for (const auto& row : m.values) {
            if (row.size() != m.column_names.size()) fail(ErrorKind::Format, "returns.values: column count mismatch");
        }
    }
    f.finish();
    return r;
}

// ---- files ------------------------------------------------------------------

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string() + " for reading");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) fail(ErrorKind::Io, "cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) fail(ErrorKind::Io, "write to " + path.string() + " failed");
}

}  // namespace ctxprune
