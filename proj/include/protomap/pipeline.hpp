#pragma once

#include <map>
#include <string>
#include <vector>

#include "protomap/config.hpp"
#include "protomap/explain.hpp"
#include "protomap/metrics.hpp"

namespace protomap {

struct FoldOutcome {
    int fold = 0;
    bool ok = false;
    std::string error;   // structured message when a stage failed
    std::string stage;   // pipeline stage that failed
    int best_epoch = -1;
    std::map<std::string, double> metrics;  // ordered for stable serialization
};

struct MetricsReport {
    std::string task;
    std::uint64_t seed = 0;
    int folds = 0;
    std::vector<FoldOutcome> fold_outcomes;
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;  // population std over folds

    std::string to_json_string() const;
    std::string to_csv_string() const;
};

MetricsReport parse_metrics_report(const std::string& json_text);

// Full cross-validated run: per fold trains the prototype network, fine-tunes
// the SOM, caches pseudo maps, pretrains the CAE, trains the estimator, and
// evaluates the held-out fold. Writes checkpoints, maps, curves, and metric
// files under output_dir when it is non-empty.
MetricsReport run_pipeline(const RunConfig& config, std::uint64_t seed,
                           const std::string& output_dir = "");

// Artifacts of a single-split run (fold 0 of the configured k-fold); used by
// the train-adpen / train-estimator / explain commands.
struct SingleSplitArtifacts {
    AdpenModel adpen;
    FoldSplit split;
};

SingleSplitArtifacts train_adpen_split(const RunConfig& config, const Cohort& cohort,
                                       std::uint64_t seed);

void write_adpen_curves_csv(const AdpenModel& model, const std::string& path);
void write_estimator_curves_csv(const EstimatorModel& model, const std::string& path);

// Explainability bundle for one query subject against trained artifacts.
struct ExplainOutputs {
    ExplainableMap clinical_map;
    std::vector<std::vector<std::size_t>> stage_representatives;
    std::vector<std::size_t> selected_prototypes;  // flattened, stage-major
    std::vector<std::vector<double>> morph_diffs;  // aligned with selected_prototypes
    double threshold = 0.0;
};

ExplainOutputs explain_subject(const Cohort& cohort, const AdpenModel& adpen,
                               const EstimatorModel& estimator,
                               const std::vector<std::size_t>& reference_rows,
                               std::size_t query_row, const ExplainConfig& config);

void write_explain_outputs(const ExplainOutputs& outputs, const std::string& dir);

}  // namespace protomap
