#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include <json.hpp>

#include "ctxprune/error.hpp"
#include "ctxprune/io.hpp"
#include "ctxprune/rng.hpp"

using namespace ctxprune;
using json = nlohmann::json;

namespace {

void expect_error(const std::function<void()>& f, ErrorKind kind, const std::string& fragment) {
    try {
        f();
        FAIL("expected an error mentioning " << fragment);
    } catch (const Error& e) {
        CHECK(e.kind() == kind);
        CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
}

Checkpoint sample_checkpoint() {
    EnvConfig env;
    env.grid_width = env.grid_height = 3;
    env.num_tasks = 2;
    env.max_steps = 10;
    NetSpec s;
    s.input_dim = env.observation_size();
    s.hidden_dims = {5, 3};
    Checkpoint c;
    c.weights = init_weights(s, 12);
    Rng rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    // Awkward values: subnormals, negative zero, long mantissas.
    c.weights.w[0] = 4.9e-324;
    c.weights.w[1] = -0.0;
    c.weights.w[2] = 0.1 + 0.2;
    for (auto& b : c.weights.biases)
        for (double& x : b) x = n(rng) * 1e-7;
    c.env = env;
    c.dqn.seed = 99;
    c.final_returns = {0.25, 1.0 / 3.0};
    c.id = checkpoint_id(c.weights);
    return c;
}

}  // namespace

TEST_CASE("empty config takes every default") {
    const ExperimentConfig c = parse_config("{}");
    CHECK(c.env == EnvConfig{});
    CHECK(c.net.input_dim == 129);
    CHECK(c.net.hidden_dims == std::vector<int>{128, 128});
    CHECK(c.dqn == DqnConfig{});
    CHECK(c.mask == MaskTrainConfig{});
    CHECK(c.eval.episodes == 100);
    CHECK(parse_config(dump_config(c)) == c);
}

TEST_CASE("config errors name the field") {
    expect_error([] { parse_config(R"({"dqn": {"gamma": "high"}})"); }, ErrorKind::Config, "dqn.gamma");
    expect_error([] { parse_config(R"({"dqn": {"gama": 0.9}})"); }, ErrorKind::Config, "dqn.gama");
    expect_error([] { parse_config(R"({"env": {"num_tasks": 2.5}})"); }, ErrorKind::Config, "env.num_tasks");
    expect_error([] { parse_config(R"({"env": {"grid_width": -1}})"); }, ErrorKind::Config, "env.grid_width");
    expect_error([] { parse_config(R"({"net": {"hidden_dims": [64, "x"]}})"); }, ErrorKind::Config,
                 "net.hidden_dims[1]");
    expect_error([] { parse_config(R"({"net": {"input_dim": 7}})"); }, ErrorKind::Config, "net.input_dim");
    expect_error([] { parse_config(R"({"mask": {"lambda": -2}})"); }, ErrorKind::Config, "mask.lambda");
    expect_error([] { parse_config(R"({"mask": {"logit_init_mean": "on"}})"); }, ErrorKind::Config,
                 "mask.logit_init_mean");
    expect_error([] { parse_config(R"({"eval": {"episodes": 0}})"); }, ErrorKind::Config, "eval.episodes");
    expect_error([] { parse_config(R"({"seed": 1})"); }, ErrorKind::Config, "seed");
    expect_error([] { parse_config("{not json"); }, ErrorKind::Config, "invalid JSON");
    expect_error([] { parse_config("[]"); }, ErrorKind::Config, "object");
}

TEST_CASE("config overrides are applied") {
    const auto c = parse_config(R"({"env": {"grid_width": 4, "grid_height": 4, "num_tasks": 2},
                                    "dqn": {"total_env_steps": 10, "seed": 18446744073709551615},
                                    "output_dir": "runs/x"})");
    CHECK(c.env.grid_width == 4);
    CHECK(c.net.input_dim == 16 * 3 + 2);
    CHECK(c.dqn.total_env_steps == 10);
    CHECK(c.dqn.seed == 18446744073709551615ULL);
    CHECK(c.output_dir == "runs/x");
}

TEST_CASE("checkpoint round trip is bit exact") {
    const Checkpoint c = sample_checkpoint();
    const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
    CHECK(back == c);
    REQUIRE(std::memcmp(back.weights.w.data(), c.weights.w.data(), c.weights.w.size() * sizeof(double)) == 0);
    CHECK(std::signbit(back.weights.w[1]));
    CHECK(encode_checkpoint(back) == encode_checkpoint(c));
}

TEST_CASE("checkpoint id tracks the weights") {
    Checkpoint c = sample_checkpoint();
    const std::string id = c.id;
    CHECK(id.size() == 16u);
    c.weights.w[5] = std::nextafter(c.weights.w[5], 1.0);
    CHECK(checkpoint_id(c.weights) != id);
}

TEST_CASE("checkpoint decoding rejects bad files") {
    const Checkpoint c = sample_checkpoint();
    json j = json::parse(encode_checkpoint(c));

    json future = j;
    future["format_version"] = kCheckpointFormatVersion + 1;
    expect_error([&] { decode_checkpoint(future.dump()); }, ErrorKind::Format, "format_version");

    json tampered = j;
    tampered["layers"][0]["weights"][3] = 123.0;
    expect_error([&] { decode_checkpoint(tampered.dump()); }, ErrorKind::Format, "does not match its weights");

    json short_layer = j;
    short_layer["layers"][1]["biases"].erase(0);
    expect_error([&] { decode_checkpoint(short_layer.dump()); }, ErrorKind::Format, "layers[1]");

    json other = j;
    other["format"] = "ctxprune-mask";
    expect_error([&] { decode_checkpoint(other.dump()); }, ErrorKind::Format, "ctxprune-checkpoint");

    expect_error([] { load_checkpoint("/nonexistent/checkpoint.json"); }, ErrorKind::Io, "/nonexistent");
}

TEST_CASE("mask files") {
    const Checkpoint c = sample_checkpoint();
    MaskFile m;
    m.task_index = 1;
    m.num_tasks = 2;
    m.checkpoint_id = c.id;
    m.logits = init_logits(c.weights.size(), 1.0, 3);
    m.logits.l[0] = 0.0;
    m.env = c.env;
    m.final_entry = {200, {0.5, 0.25, 0.75}, m.logits.density()};
    const MaskFile back = decode_mask(encode_mask(m));
    CHECK(back == m);
    CHECK(back.logits.l == m.logits.l);

    const Subnetwork s = back.subnetwork(c);
    CHECK(s.task_index == 1);
    CHECK(s.mask == m.logits.hard_mask());
    CHECK(s.checkpoint_id == c.id);

    MaskFile foreign = m;
    foreign.checkpoint_id = "0000000000000000";
    expect_error([&] { foreign.subnetwork(c); }, ErrorKind::Mismatch, "derives from checkpoint");

    json j = json::parse(encode_mask(m));
    j["mask"][0] = 1;  // logit 0 is not > 0
    expect_error([&] { decode_mask(j.dump()); }, ErrorKind::Format, "disagrees");
    j = json::parse(encode_mask(m));
    j["format_version"] = 2;
    expect_error([&] { decode_mask(j.dump()); }, ErrorKind::Format, "format_version");
    j = json::parse(encode_mask(m));
    j["task_index"] = 2;
    expect_error([&] { decode_mask(j.dump()); }, ErrorKind::Format, "task_index");
}

TEST_CASE("files on disk") {
    const auto dir = std::filesystem::temp_directory_path() / "ctxprune_io_test";
    std::filesystem::remove_all(dir);
    const Checkpoint c = sample_checkpoint();
    save_checkpoint(c, dir / "nested" / "ckpt.json");
    CHECK(load_checkpoint(dir / "nested" / "ckpt.json") == c);
    std::filesystem::remove_all(dir);
}
