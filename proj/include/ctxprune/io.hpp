#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctxprune/analysis.hpp"
#include "ctxprune/dqn.hpp"
#include "ctxprune/gridworld.hpp"
#include "ctxprune/masker.hpp"
#include "ctxprune/qnet.hpp"

namespace ctxprune {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr int kMaskFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

struct EvalConfig {
    int episodes = 100;
    std::uint64_t seed = 0;

    bool operator==(const EvalConfig&) const = default;
};

/// Everything one experiment needs. Missing keys take the defaults below and
/// are written out in full wherever the config is embedded.
struct ExperimentConfig {
    EnvConfig env;
    NetSpec net;
    DqnConfig dqn;
    MaskTrainConfig mask;
    EvalConfig eval;
    std::string output_dir = "runs/default";

    /// Fills net.input_dim from the environment when it is 0, then checks
    /// every nested invariant.
    void finalize();

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses JSON text. Errors are Error(Config) and name the offending field,
/// e.g. "dqn.gamma: expected a number".
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& cfg);

/// A trained network plus what produced it.
struct Checkpoint {
    int format_version = kCheckpointFormatVersion;
    FlatWeights weights;
    EnvConfig env;
    DqnConfig dqn;
    /// Normalized return per task at the end of training.
    std::vector<double> final_returns;
    /// Content hash of architecture, weights and biases.
    std::string id;

    bool operator==(const Checkpoint&) const = default;
};

std::string checkpoint_id(const FlatWeights& weights);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct MaskFile {
    int format_version = kMaskFormatVersion;
    int task_index = 0;
    int num_tasks = 0;
    std::string checkpoint_id;
    MaskLogits logits;
    MaskTrainConfig config;
    EnvConfig env;
    /// Loss and density after the last epoch.
    MaskTrainLogEntry final_entry;

    /// Rebuilds the subnetwork against the checkpoint it was learned on.
    Subnetwork subnetwork(const Checkpoint& ckpt) const;

    bool operator==(const MaskFile&) const = default;
};

std::string encode_mask(const MaskFile& mask);
MaskFile decode_mask(const std::string& text);
void save_mask(const MaskFile& mask, const std::filesystem::path& path);
MaskFile load_mask(const std::filesystem::path& path);

std::string encode_report(const SubnetReport& report);
SubnetReport decode_report(const std::string& text);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ctxprune
