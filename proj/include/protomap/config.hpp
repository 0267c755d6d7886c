#pragma once

#include <cstdint>
#include <string>

#include "protomap/cohort.hpp"
#include "protomap/likelihood.hpp"

namespace protomap {

struct ExplainConfig {
    std::size_t top_n = 3;
    std::size_t per_stage = 3;
    double threshold_percentile = 0.60;
    std::size_t query_index = 0;
};

struct HarnessConfig {
    std::string task = "cn_ad";
    int folds = 5;
    std::string output_dir = "out";
};

// Flat key-value sections, one per module. Unknown sections or keys are
// rejected; PROTOMAP_<SECTION>_<KEY> environment variables override file
// values after parsing.
struct RunConfig {
    // cohort
    SyntheticSpec cohort_spec;
    std::string cohort_path;       // load this NDJSON instead of generating
    std::string cohort_save_path;  // where `generate` writes

    AdpenConfig adpen;
    EstimatorConfig estimator;
    TemperaturePolicy temperature;
    ExplainConfig explain;
    HarnessConfig harness;

    TaskSpec task_spec() const;  // resolves harness.task
    Cohort load_or_generate_cohort(std::uint64_t seed) const;
    void validate() const;
};

RunConfig default_config();
RunConfig load_config(const std::string& path);            // file + env overrides
RunConfig parse_config_json(const std::string& json_text); // no env pass, for tests
void apply_env_overrides(RunConfig& config);
std::string config_schema_help();

}  // namespace protomap
