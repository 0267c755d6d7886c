#include "protomap/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "serialize.hpp"

namespace protomap {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json report_to_json(const MetricsReport& report) {
    json folds = json::array();
    for (const auto& f : report.fold_outcomes) {
        json jf = {
            {"fold", f.fold},
            {"ok", f.ok},
            {"best_epoch", f.best_epoch},
            {"metrics", f.metrics},
        };
        if (!f.ok) {
            jf["error"] = f.error;
            jf["stage"] = f.stage;
        }
        folds.push_back(jf);
    }
    return json{
        {"task", report.task},   {"seed", report.seed},     {"folds", report.folds},
        {"fold_results", folds}, {"mean", report.mean},     {"std", report.stddev},
    };
}

void aggregate(MetricsReport& report) {
    std::map<std::string, std::vector<double>> columns;
    for (const auto& f : report.fold_outcomes) {
        if (!f.ok) continue;
        for (const auto& [k, v] : f.metrics) columns[k].push_back(v);
    }
    for (const auto& [k, values] : columns) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size());
        report.mean[k] = mean;
        report.stddev[k] = std::sqrt(var);
    }
}

void write_maps_json(const std::vector<std::size_t>& rows,
                     const std::vector<LikelihoodMap>& pseudo,
                     const std::vector<LikelihoodMap>& estimated, const std::string& path) {
    json entries = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        entries.push_back({
            {"row", rows[i]},
            {"pseudo", pseudo[i].values},
            {"estimated", estimated[i].values},
        });
    }
    json j = {
        {"topology", topology_name(pseudo.empty() ? Topology::grid2d : pseudo.front().topology)},
        {"shape", pseudo.empty() ? std::vector<std::size_t>{} : pseudo.front().dims},
        {"maps", entries},
    };
    detail::write_json_file(j, path);
}

}  // namespace

std::string MetricsReport::to_json_string() const { return report_to_json(*this).dump(2) + "\n"; }

std::string MetricsReport::to_csv_string() const {
    std::string csv = "metric,mean,std";
    for (const auto& f : fold_outcomes) csv += ",fold_" + std::to_string(f.fold);
    csv += "\n";
    char buf[64];
    for (const auto& [k, m] : mean) {
        csv += k;
        std::snprintf(buf, sizeof buf, ",%.17g", m);
        csv += buf;
        std::snprintf(buf, sizeof buf, ",%.17g", stddev.at(k));
        csv += buf;
        for (const auto& f : fold_outcomes) {
            if (f.ok && f.metrics.count(k)) {
                std::snprintf(buf, sizeof buf, ",%.17g", f.metrics.at(k));
                csv += buf;
            } else {
                csv += ",";
            }
        }
        csv += "\n";
    }
    return csv;
}

MetricsReport parse_metrics_report(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        raise(ErrorKind::parse, std::string("metrics report: ") + e.what());
    }
    MetricsReport report;
    report.task = j.at("task").get<std::string>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.folds = j.at("folds").get<int>();
    for (const auto& jf : j.at("fold_results")) {
        FoldOutcome f;
        f.fold = jf.at("fold").get<int>();
        f.ok = jf.at("ok").get<bool>();
        f.best_epoch = jf.at("best_epoch").get<int>();
        f.metrics = jf.at("metrics").get<std::map<std::string, double>>();
        if (jf.contains("error")) f.error = jf.at("error").get<std::string>();
        if (jf.contains("stage")) f.stage = jf.at("stage").get<std::string>();
        report.fold_outcomes.push_back(std::move(f));
    }
    report.mean = j.at("mean").get<std::map<std::string, double>>();
    report.stddev = j.at("std").get<std::map<std::string, double>>();
    return report;
}

void write_adpen_curves_csv(const AdpenModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorKind::io, "cannot open " + path + " for writing");
    out << "epoch,total,vae,ordering,som\n";
    out.precision(17);
    for (const auto& p : model.curve) {
        out << p.epoch << "," << p.total << "," << p.vae << "," << p.ordering << "," << p.som
            << "\n";
    }
}

void write_estimator_curves_csv(const EstimatorModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorKind::io, "cannot open " + path + " for writing");
    out << "epoch,total,est,cons,task,val_metric\n";
    out.precision(17);
    for (const auto& p : model.curve) {
        out << p.epoch << "," << p.total << "," << p.est << "," << p.cons << "," << p.task << ","
            << p.val_metric << "\n";
    }
}

SingleSplitArtifacts train_adpen_split(const RunConfig& config, const Cohort& cohort,
                                       std::uint64_t seed) {
    auto folds = stratified_kfold(cohort, config.harness.folds, seed);
    SingleSplitArtifacts artifacts;
    artifacts.split = folds.front();
    artifacts.adpen = train_adpen(cohort, artifacts.split.train, config.adpen, seed);
    finetune_som(artifacts.adpen, cohort, artifacts.split.train, config.adpen.finetune_epochs);
    return artifacts;
}

MetricsReport run_pipeline(const RunConfig& config, std::uint64_t seed,
                           const std::string& output_dir) {
    config.validate();
    const TaskSpec task = config.task_spec();
    const Cohort cohort = config.load_or_generate_cohort(mix_seed(seed, 0xc0));
    const auto folds = stratified_kfold(cohort, config.harness.folds, seed);

    if (!output_dir.empty()) fs::create_directories(output_dir);

    MetricsReport report;
    report.task = config.harness.task;
    report.seed = seed;
    report.folds = config.harness.folds;

    for (std::size_t fold = 0; fold < folds.size(); ++fold) {
        const auto& split = folds[fold];
        const std::uint64_t fold_seed = mix_seed(seed, 100 + fold);
        FoldOutcome outcome;
        outcome.fold = static_cast<int>(fold);
        std::string stage = "train-adpen";
        try {
            AdpenModel adpen = train_adpen(cohort, split.train, config.adpen, fold_seed);
            stage = "finetune-som";
            finetune_som(adpen, cohort, split.train, config.adpen.finetune_epochs);

            stage = "train-estimator";
            EstimatorModel estimator =
                train_estimator(cohort, split, adpen, task, config.estimator,
                                mix_seed(fold_seed, 7), config.temperature);

            stage = "evaluate";
            std::vector<std::size_t> test_rows;
            for (std::size_t r : split.test) {
                if (task.sample_applies(cohort.subjects[r].record.stage)) test_rows.push_back(r);
            }
            if (test_rows.empty()) {
                raise(ErrorKind::validation, "no test samples match the task");
            }

            const auto test_pseudo =
                pseudo_maps_for(adpen, cohort, test_rows, config.temperature);
            std::vector<LikelihoodMap> test_estimated;
            test_estimated.reserve(test_rows.size());
            double mae = 0.0;
            for (std::size_t i = 0; i < test_rows.size(); ++i) {
                const auto& feats = cohort.subjects[test_rows[i]].imaging.features;
                test_estimated.push_back(estimator.estimate(feats));
                double abs_acc = 0.0;
                for (std::size_t j = 0; j < test_pseudo[i].values.size(); ++j) {
                    abs_acc += std::abs(test_pseudo[i].values[j] - test_estimated[i].values[j]);
                }
                mae += abs_acc / static_cast<double>(test_pseudo[i].values.size());
            }
            outcome.metrics["map_mae"] = mae / static_cast<double>(test_rows.size());
            outcome.best_epoch = estimator.best_epoch;

            if (task.kind == TaskKind::classification) {
                std::vector<int> labels, predictions;
                std::vector<std::vector<double>> probs;
                for (std::size_t r : test_rows) {
                    const int stage_label = cohort.subjects[r].record.stage;
                    labels.push_back(
                        task.stage_to_class[static_cast<std::size_t>(stage_label)]);
                    auto p = estimator.predict_probs(cohort.subjects[r].imaging.features);
                    predictions.push_back(static_cast<int>(
                        std::max_element(p.begin(), p.end()) - p.begin()));
                    probs.push_back(std::move(p));
                }
                if (task.num_classes == 2) {
                    std::vector<double> scores;
                    scores.reserve(probs.size());
                    for (const auto& p : probs) scores.push_back(p[1]);
                    outcome.metrics["auc"] = roc_auc_binary(scores, labels);
                } else {
                    outcome.metrics["auc"] = roc_auc_ovr(probs, labels, task.num_classes);
                }
                outcome.metrics["balanced_accuracy"] =
                    balanced_accuracy(predictions, labels, task.num_classes);
                outcome.metrics["f1_weighted"] =
                    f1_weighted(predictions, labels, task.num_classes);
            } else {
                const auto L = static_cast<std::size_t>(cohort.num_stages());
                std::vector<double> predictions, targets;
                for (std::size_t r : test_rows) {
                    predictions.push_back(
                        estimator.predict_value(cohort.subjects[r].imaging.features));
                    targets.push_back(task.target == RegressionTarget::mmse
                                          ? cohort.subjects[r].clinical[L]
                                          : cohort.subjects[r].clinical[L + 1]);
                }
                const auto reg = rmse_r2(predictions, targets);
                outcome.metrics["rmse"] = reg.rmse;
                outcome.metrics["r2"] = reg.r2;
            }
            outcome.ok = true;

            if (!output_dir.empty()) {
                const std::string fold_dir =
                    output_dir + "/fold_" + std::to_string(fold);
                fs::create_directories(fold_dir);
                save_adpen(adpen, fold_dir + "/adpen.json");
                save_estimator(estimator, fold_dir + "/estimator.json");
                write_adpen_curves_csv(adpen, fold_dir + "/curves_adpen.csv");
                write_estimator_curves_csv(estimator, fold_dir + "/curves_estimator.csv");
                write_maps_json(test_rows, test_pseudo, test_estimated,
                                fold_dir + "/maps_test.json");
            }
        } catch (const Error& e) {
            outcome.ok = false;
            outcome.stage = stage;
            outcome.error = std::string(error_kind_name(e.kind())) + ": " + e.what();
        }
        report.fold_outcomes.push_back(std::move(outcome));
    }

    aggregate(report);
    if (!output_dir.empty()) {
        std::ofstream mj(output_dir + "/metrics.json");
        mj << report.to_json_string();
        std::ofstream mc(output_dir + "/metrics.csv");
        mc << report.to_csv_string();
        if (!mj || !mc) raise(ErrorKind::io, "failed writing metric files to " + output_dir);
    }
    return report;
}

ExplainOutputs explain_subject(const Cohort& cohort, const AdpenModel& adpen,
                               const EstimatorModel& estimator,
                               const std::vector<std::size_t>& reference_rows,
                               std::size_t query_row, const ExplainConfig& config) {
    if (query_row >= cohort.size()) {
        raise(ErrorKind::invalid_argument, "query index outside the cohort");
    }
    const auto& query = cohort.subjects[query_row];

    ExplainOutputs out;
    const auto estimated = estimator.estimate(query.imaging.features);
    const auto states = decode_prototypes(adpen.vae, adpen.grid);
    out.clinical_map = build_clinical_map(estimated, states);

    const auto latents = adpen.latents(cohort, reference_rows);
    const auto samples =
        retrieve_nearest_samples(adpen.grid, latents, reference_rows, cohort, config.top_n);

    out.stage_representatives =
        select_stage_representatives(states, query.record.age_years, config.per_stage);

    std::vector<std::vector<double>> raw_diffs;
    for (const auto& stage_list : out.stage_representatives) {
        for (std::size_t proto : stage_list) {
            out.selected_prototypes.push_back(proto);
            raw_diffs.push_back(morph_difference(
                query.imaging.features, samples.per_prototype[proto].mean_features, 0.0));
        }
    }
    out.threshold = default_morph_threshold(raw_diffs, config.threshold_percentile);
    for (std::size_t i = 0; i < out.selected_prototypes.size(); ++i) {
        out.morph_diffs.push_back(morph_difference(
            query.imaging.features,
            samples.per_prototype[out.selected_prototypes[i]].mean_features, out.threshold));
    }
    return out;
}

void write_explain_outputs(const ExplainOutputs& outputs, const std::string& dir) {
    fs::create_directories(dir);
    save_explainable_map(outputs.clinical_map, dir + "/explainable_map.json");
    save_morph_diffs_csv(outputs.selected_prototypes, outputs.morph_diffs,
                         dir + "/morph_diffs.csv");

    json j = {
        {"threshold", outputs.threshold},
        {"stage_representatives", outputs.stage_representatives},
    };
    detail::write_json_file(j, dir + "/selection.json");
}

}  // namespace protomap
