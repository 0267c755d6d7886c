#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "protomap/protomap.h"

namespace fs = std::filesystem;

namespace {

// small enough to train in milliseconds
const char* kTinyConfig = R"({
    "cohort": {"stage_counts": [8, 8, 8, 8], "imaging_dim": 8, "imaging_noise": 0.0},
    "adpen": {"grid_dims": [3, 3], "epochs": 20, "finetune_epochs": 10},
    "likelihood": {"epochs": 5, "cae_epochs": 10, "cae_code": 4},
    "harness": {"task": "cn_ad", "folds": 3, "output_dir": "capi_out"}
})";

struct TempConfigFile {
    std::string path;
    explicit TempConfigFile(const std::string& text) : path("capi_config_test.json") {
        FILE* f = std::fopen(path.c_str(), "w");
        std::fputs(text.c_str(), f);
        std::fclose(f);
    }
    ~TempConfigFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("status names and null-argument handling") {
    CHECK(std::string(pm_status_name(PM_OK)) == "ok");
    CHECK(std::string(pm_status_name(PM_ERR_USAGE)) == "usage");

    CHECK(pm_config_load(nullptr, nullptr) == PM_ERR_INVALID_ARGUMENT);
    CHECK(pm_cohort_save(nullptr, "x") == PM_ERR_INVALID_ARGUMENT);
    CHECK(pm_adpen_load(nullptr, nullptr) == PM_ERR_INVALID_ARGUMENT);
    CHECK(std::string(pm_last_error()).size() > 0);
}

TEST_CASE("config lifecycle with overrides and rejection of unknown keys") {
    pm_config* cfg = nullptr;
    REQUIRE(pm_config_default(&cfg) == PM_OK);
    CHECK(pm_config_set(cfg, "adpen.epochs", "17") == PM_OK);
    CHECK(pm_config_set(cfg, "harness.task", "mmse") == PM_OK);
    CHECK(pm_config_set(cfg, "adpen.bogus", "1") == PM_ERR_VALIDATION);
    CHECK(std::string(pm_last_error()).find("bogus") != std::string::npos);
    CHECK(pm_config_set(cfg, "no_dot", "1") == PM_ERR_INVALID_ARGUMENT);
    pm_config_free(cfg);

    CHECK(pm_config_load("missing_config.json", &cfg) == PM_ERR_IO);
    CHECK(std::string(pm_config_schema()).find("adpen") != std::string::npos);
}

TEST_CASE("cohort round trip through the c surface") {
    TempConfigFile file(kTinyConfig);
    pm_config* cfg = nullptr;
    REQUIRE(pm_config_load(file.path.c_str(), &cfg) == PM_OK);

    pm_cohort* cohort = nullptr;
    REQUIRE(pm_cohort_open(cfg, 99, &cohort) == PM_OK);
    CHECK(pm_cohort_size(cohort) == 32);

    REQUIRE(pm_cohort_save(cohort, "capi_cohort_test.ndjson") == PM_OK);
    pm_cohort* loaded = nullptr;
    REQUIRE(pm_cohort_load("capi_cohort_test.ndjson", 4, &loaded) == PM_OK);
    CHECK(pm_cohort_size(loaded) == 32);
    std::remove("capi_cohort_test.ndjson");

    pm_cohort_free(loaded);
    pm_cohort_free(cohort);
    pm_config_free(cfg);
}

TEST_CASE("prototype model training, checkpointing, and inference buffers") {
    TempConfigFile file(kTinyConfig);
    pm_config* cfg = nullptr;
    REQUIRE(pm_config_load(file.path.c_str(), &cfg) == PM_OK);
    pm_cohort* cohort = nullptr;
    REQUIRE(pm_cohort_open(cfg, 99, &cohort) == PM_OK);

    pm_adpen* model = nullptr;
    REQUIRE(pm_adpen_train(cfg, cohort, 5, &model) == PM_OK);
    CHECK(pm_adpen_num_prototypes(model) == 9);

    const std::vector<double> clinical = {1, 0, 0, 0, 0.9, 0.72};
    std::vector<double> latent(3), wrong(2);
    CHECK(pm_adpen_encode(model, clinical.data(), clinical.size(), wrong.data(), wrong.size()) ==
          PM_ERR_DIMENSION);
    REQUIRE(pm_adpen_encode(model, clinical.data(), clinical.size(), latent.data(),
                            latent.size()) == PM_OK);

    std::vector<double> map(9);
    REQUIRE(pm_adpen_pseudo_map(model, clinical.data(), clinical.size(), map.data(),
                                map.size()) == PM_OK);
    for (double v : map) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    REQUIRE(pm_adpen_save(model, "capi_adpen_test.json") == PM_OK);
    pm_adpen* loaded = nullptr;
    REQUIRE(pm_adpen_load("capi_adpen_test.json", &loaded) == PM_OK);
    std::remove("capi_adpen_test.json");

    std::vector<double> latent2(3);
    REQUIRE(pm_adpen_encode(loaded, clinical.data(), clinical.size(), latent2.data(),
                            latent2.size()) == PM_OK);
    CHECK(latent == latent2);  // load reproduces inference bit-exactly

    pm_adpen_free(loaded);
    pm_adpen_free(model);
    pm_cohort_free(cohort);
    pm_config_free(cfg);
}

TEST_CASE("command-level flow: train, refuse out-of-order stages, estimate, explain") {
    TempConfigFile file(kTinyConfig);
    pm_config* cfg = nullptr;
    REQUIRE(pm_config_load(file.path.c_str(), &cfg) == PM_OK);
    fs::remove_all("capi_out");

    // estimator before adpen must refuse
    CHECK(pm_run_train_estimator(cfg, 7, nullptr) == PM_ERR_USAGE);

    REQUIRE(pm_run_generate(cfg, 7, nullptr) == PM_OK);
    CHECK(fs::exists("capi_out/cohort.ndjson"));

    REQUIRE(pm_run_train_adpen(cfg, 7, nullptr) == PM_OK);
    CHECK(fs::exists("capi_out/adpen.json"));
    CHECK(fs::exists("capi_out/curves_adpen.csv"));

    REQUIRE(pm_run_train_estimator(cfg, 7, nullptr) == PM_OK);
    CHECK(fs::exists("capi_out/estimator.json"));

    pm_estimator* estimator = nullptr;
    REQUIRE(pm_estimator_load("capi_out/estimator.json", &estimator) == PM_OK);
    CHECK(pm_estimator_map_len(estimator) == 9);
    std::vector<double> features(8, 0.1), map(9);
    REQUIRE(pm_estimator_estimate(estimator, features.data(), features.size(), map.data(),
                                  map.size()) == PM_OK);
    for (double v : map) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    pm_estimator_free(estimator);

    REQUIRE(pm_run_explain(cfg, 7, nullptr) == PM_OK);
    CHECK(fs::exists("capi_out/explainable_map.json"));
    CHECK(fs::exists("capi_out/morph_diffs.csv"));

    fs::remove_all("capi_out");
    pm_config_free(cfg);
}

TEST_CASE("evaluate returns a parseable metrics report") {
    TempConfigFile file(kTinyConfig);
    pm_config* cfg = nullptr;
    REQUIRE(pm_config_load(file.path.c_str(), &cfg) == PM_OK);
    REQUIRE(pm_config_set(cfg, "harness.output_dir", "capi_eval_out") == PM_OK);
    fs::remove_all("capi_eval_out");

    char* metrics = nullptr;
    REQUIRE(pm_run_evaluate(cfg, 11, nullptr, &metrics) == PM_OK);
    REQUIRE(metrics != nullptr);
    const auto parsed = nlohmann::json::parse(metrics);
    CHECK(parsed.at("folds").get<int>() == 3);
    CHECK(parsed.at("fold_results").size() == 3);
    pm_string_free(metrics);

    CHECK(fs::exists("capi_eval_out/metrics.json"));
    CHECK(fs::exists("capi_eval_out/metrics.csv"));
    fs::remove_all("capi_eval_out");
    pm_config_free(cfg);
}
