#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctxprune/ctxprune.h"

namespace fs = std::filesystem;

namespace {

std::string tiny_config_path() { return std::string(CTXPRUNE_TEST_DATA) + "/tiny.json"; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string string_out(ctxprune_status (*fn)(const ctxprune_config*, char*, size_t*), const ctxprune_config* c) {
    size_t n = 0;
    REQUIRE(fn(c, nullptr, &n) == CTXPRUNE_OK);
    std::string s(n, '\0');
    REQUIRE(fn(c, s.data(), &n) == CTXPRUNE_OK);
    s.resize(n - 1);
    return s;
}

struct Trained {
    ctxprune_config* cfg = nullptr;
    ctxprune_checkpoint* ckpt = nullptr;
    ctxprune_train_log* log = nullptr;

    Trained() {
        REQUIRE(ctxprune_config_load(tiny_config_path().c_str(), &cfg) == CTXPRUNE_OK);
        REQUIRE(ctxprune_train(cfg, &ckpt, &log, nullptr, nullptr) == CTXPRUNE_OK);
    }
    ~Trained() {
        ctxprune_train_log_free(log);
        ctxprune_checkpoint_free(ckpt);
        ctxprune_config_free(cfg);
    }
};

}  // namespace

TEST_CASE("errors come back as status codes with a message") {
    ctxprune_config* cfg = nullptr;
    CHECK(ctxprune_config_parse(R"({"dqn": {"gamma": 2}})", &cfg) == CTXPRUNE_CONFIG);
    CHECK(cfg == nullptr);
    CHECK(std::string(ctxprune_last_error()).find("dqn.gamma") != std::string::npos);

    CHECK(ctxprune_config_parse(nullptr, &cfg) == CTXPRUNE_INVALID_ARGUMENT);
    CHECK(ctxprune_config_load("/nonexistent/x.json", &cfg) == CTXPRUNE_IO);

    ctxprune_checkpoint* ck = nullptr;
    CHECK(ctxprune_checkpoint_load("/nonexistent/c.json", &ck) == CTXPRUNE_IO);
    CHECK(std::string(ctxprune_status_name(CTXPRUNE_MISMATCH)) == "mismatch");
    CHECK(std::string(ctxprune_version()).size() > 0);

    // Freeing NULL is a no-op.
    ctxprune_config_free(nullptr);
    ctxprune_mask_free(nullptr);
}

TEST_CASE("config accessors") {
    ctxprune_config* cfg = nullptr;
    REQUIRE(ctxprune_config_default(&cfg) == CTXPRUNE_OK);
    int k = 0;
    CHECK(ctxprune_config_num_tasks(cfg, &k) == CTXPRUNE_OK);
    CHECK(k == 4);

    char small[4];
    size_t n = sizeof small;
    CHECK(ctxprune_config_output_dir(cfg, small, &n) == CTXPRUNE_INVALID_ARGUMENT);
    CHECK(n > sizeof small);
    CHECK(string_out(ctxprune_config_output_dir, cfg) == "runs/default");

    n = 0;
    CHECK(ctxprune_config_task_name(cfg, 4, nullptr, &n) == CTXPRUNE_INVALID_ARGUMENT);
    CHECK(ctxprune_config_set_eval_episodes(cfg, 0) == CTXPRUNE_CONFIG);
    CHECK(ctxprune_config_set_seed(cfg, CTXPRUNE_SEED_ALL, 7) == CTXPRUNE_OK);
    const std::string dumped = string_out(ctxprune_config_dump, cfg);
    CHECK(dumped.find("\"seed\": 7") != std::string::npos);

    ctxprune_config* again = nullptr;
    REQUIRE(ctxprune_config_parse(dumped.c_str(), &again) == CTXPRUNE_OK);
    CHECK(string_out(ctxprune_config_dump, again) == dumped);
    ctxprune_config_free(again);
    ctxprune_config_free(cfg);
}

TEST_CASE("train, prune, analyze through the C interface") {
    Trained t;
    size_t n = 0;
    REQUIRE(ctxprune_checkpoint_num_weights(t.ckpt, &n) == CTXPRUNE_OK);
    CHECK(n == 29u * 16u + 16u * 16u + 16u * 4u);
    double r = -1.0;
    CHECK(ctxprune_checkpoint_final_return(t.ckpt, 1, &r) == CTXPRUNE_OK);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    CHECK(ctxprune_checkpoint_final_return(t.ckpt, 2, &r) == CTXPRUNE_INVALID_ARGUMENT);

    const fs::path dir = fs::temp_directory_path() / "ctxprune_c_api_test";
    fs::remove_all(dir);
    const std::string ck_path = (dir / "checkpoint.json").string();
    REQUIRE(ctxprune_checkpoint_save(t.ckpt, ck_path.c_str()) == CTXPRUNE_OK);
    ctxprune_checkpoint* loaded = nullptr;
    REQUIRE(ctxprune_checkpoint_load(ck_path.c_str(), &loaded) == CTXPRUNE_OK);

    std::vector<ctxprune_mask*> masks;
    for (int task = 0; task < 2; ++task) {
        ctxprune_mask* m = nullptr;
        ctxprune_mask_log* ml = nullptr;
        REQUIRE(ctxprune_prune(t.cfg, loaded, task, &m, &ml) == CTXPRUNE_OK);
        int idx = -1;
        CHECK(ctxprune_mask_task(m, &idx) == CTXPRUNE_OK);
        CHECK(idx == task);
        ctxprune_mask_log_free(ml);
        masks.push_back(m);
    }
    ctxprune_mask* bad = nullptr;
    CHECK(ctxprune_prune(t.cfg, loaded, 2, &bad, nullptr) == CTXPRUNE_INVALID_ARGUMENT);

    ctxprune_report* report = nullptr;
    REQUIRE(ctxprune_analyze(t.cfg, loaded, masks.data(), masks.size(), &report) == CTXPRUNE_OK);
    size_t len = 0;
    REQUIRE(ctxprune_report_summary(report, nullptr, &len) == CTXPRUNE_OK);
    std::string text(len, '\0');
    REQUIRE(ctxprune_report_summary(report, text.data(), &len) == CTXPRUNE_OK);
    CHECK(text.find("globally_shared") != std::string::npos);
    CHECK(ctxprune_report_save_json(report, (dir / "report.json").string().c_str()) == CTXPRUNE_OK);
    CHECK(slurp(dir / "report.json").find("ctxprune-report") != std::string::npos);

    double norm = 0.0;
    double mean = 0.0;
    CHECK(ctxprune_evaluate(t.cfg, loaded, masks[0], 0, &norm, &mean) == CTXPRUNE_OK);
    CHECK(ctxprune_evaluate(t.cfg, loaded, nullptr, 1, &norm, &mean) == CTXPRUNE_OK);

    // A mask is bound to the checkpoint it was learned on.
    ctxprune_config* other_cfg = nullptr;
    REQUIRE(ctxprune_config_load(tiny_config_path().c_str(), &other_cfg) == CTXPRUNE_OK);
    REQUIRE(ctxprune_config_set_seed(other_cfg, CTXPRUNE_SEED_DQN, 12345) == CTXPRUNE_OK);
    ctxprune_checkpoint* other = nullptr;
    REQUIRE(ctxprune_train(other_cfg, &other, nullptr, nullptr, nullptr) == CTXPRUNE_OK);
    ctxprune_report* rejected = nullptr;
    CHECK(ctxprune_analyze(t.cfg, other, masks.data(), masks.size(), &rejected) == CTXPRUNE_MISMATCH);
    CHECK(rejected == nullptr);
    CHECK(ctxprune_evaluate(t.cfg, other, masks[0], 0, &norm, &mean) == CTXPRUNE_MISMATCH);

    // A checkpoint from a different environment is refused by prune.
    ctxprune_config* wide = nullptr;
    REQUIRE(ctxprune_config_parse(R"({"env": {"grid_width": 4, "grid_height": 3, "num_tasks": 2}})", &wide) ==
            CTXPRUNE_OK);
    CHECK(ctxprune_prune(wide, loaded, 0, &bad, nullptr) == CTXPRUNE_MISMATCH);

    ctxprune_config_free(wide);
    ctxprune_checkpoint_free(other);
    ctxprune_config_free(other_cfg);
    ctxprune_report_free(report);
    for (auto* m : masks) ctxprune_mask_free(m);
    ctxprune_checkpoint_free(loaded);
    fs::remove_all(dir);
}

namespace {
int progress_calls = 0;
void count_progress(long, int, double, void*) { ++progress_calls; }
}  // namespace

TEST_CASE("progress callback fires once per logged evaluation") {
    ctxprune_config* cfg = nullptr;
    REQUIRE(ctxprune_config_load(tiny_config_path().c_str(), &cfg) == CTXPRUNE_OK);
    ctxprune_checkpoint* ck = nullptr;
    progress_calls = 0;
    REQUIRE(ctxprune_train(cfg, &ck, nullptr, count_progress, nullptr) == CTXPRUNE_OK);
    CHECK(progress_calls == 3 * 2);
    ctxprune_checkpoint_free(ck);
    ctxprune_config_free(cfg);
}
