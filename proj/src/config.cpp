#include "protomap/config.hpp"

#include <cctype>
#include <cstdlib>
#include <iterator>
#include <set>

#include "serialize.hpp"

extern char** environ;

namespace protomap {

namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& section, const std::string& name, const char* key, T& out) {
    if (!section.contains(key)) return;
    try {
        out = section.at(key).get<T>();
    } catch (const json::exception& e) {
        raise(ErrorKind::parse, "config " + name + "." + key + ": " + e.what());
    }
}

void check_keys(const json& section, const std::string& name, const std::set<std::string>& known) {
    for (const auto& [key, value] : section.items()) {
        (void)value;
        if (!known.count(key)) {
            raise(ErrorKind::validation, "unknown config key '" + name + "." + key + "'");
        }
    }
}

void apply_section(RunConfig& cfg, const std::string& name, const json& section) {
    if (name == "cohort") {
        check_keys(section, name,
                   {"path", "save_path", "stage_names", "stage_counts", "mmse_means",
                    "mmse_stddevs", "age_means", "age_stddevs", "imaging_dim", "imaging_noise"});
        read_key(section, name, "path", cfg.cohort_path);
        read_key(section, name, "save_path", cfg.cohort_save_path);
        read_key(section, name, "stage_names", cfg.cohort_spec.stage_names);
        read_key(section, name, "stage_counts", cfg.cohort_spec.stage_counts);
        read_key(section, name, "mmse_means", cfg.cohort_spec.mmse_means);
        read_key(section, name, "mmse_stddevs", cfg.cohort_spec.mmse_stddevs);
        read_key(section, name, "age_means", cfg.cohort_spec.age_means);
        read_key(section, name, "age_stddevs", cfg.cohort_spec.age_stddevs);
        read_key(section, name, "imaging_dim", cfg.cohort_spec.imaging_dim);
        read_key(section, name, "imaging_noise", cfg.cohort_spec.imaging_noise);
    } else if (name == "adpen") {
        check_keys(section, name,
                   {"encoder_hidden", "latent_dim", "topology", "grid_dims", "gamma_max",
                    "gamma_min", "lambda_som", "epochs", "minibatches", "learning_rate",
                    "lr_decay_factor", "lr_decay_interval", "finetune_epochs", "ordering",
                    "ordering_stopgrad_denominator"});
        read_key(section, name, "encoder_hidden", cfg.adpen.encoder_hidden);
        read_key(section, name, "latent_dim", cfg.adpen.latent_dim);
        if (section.contains("topology")) {
            cfg.adpen.topology = topology_from_string(section.at("topology").get<std::string>());
        }
        read_key(section, name, "grid_dims", cfg.adpen.grid_dims);
        read_key(section, name, "gamma_max", cfg.adpen.gamma_max);
        read_key(section, name, "gamma_min", cfg.adpen.gamma_min);
        read_key(section, name, "lambda_som", cfg.adpen.lambda_som);
        read_key(section, name, "epochs", cfg.adpen.epochs);
        read_key(section, name, "minibatches", cfg.adpen.minibatches);
        read_key(section, name, "learning_rate", cfg.adpen.learning_rate);
        read_key(section, name, "lr_decay_factor", cfg.adpen.lr_decay_factor);
        read_key(section, name, "lr_decay_interval", cfg.adpen.lr_decay_interval);
        read_key(section, name, "finetune_epochs", cfg.adpen.finetune_epochs);
        if (section.contains("ordering")) {
            const auto mode = section.at("ordering").get<std::string>();
            if (mode != "sigmoid" && mode != "raw") {
                raise(ErrorKind::validation, "adpen.ordering must be 'sigmoid' or 'raw'");
            }
            cfg.adpen.ordering =
                mode == "raw" ? OrderingMode::raw : OrderingMode::sigmoid_surrogate;
        }
        read_key(section, name, "ordering_stopgrad_denominator",
                 cfg.adpen.ordering_stopgrad_denominator);
    } else if (name == "likelihood") {
        check_keys(section, name,
                   {"extractor_hidden", "feature_dim", "estimator_hidden", "task_hidden",
                    "cae_hidden", "cae_code", "cae_epochs", "cae_minibatches",
                    "cae_learning_rate", "epochs", "minibatches", "lr_classification",
                    "lr_regression", "lr_decay_factor", "lr_decay_interval", "lambda_cons",
                    "lambda_task", "temperature_policy", "temperature_value"});
        read_key(section, name, "extractor_hidden", cfg.estimator.extractor_hidden);
        read_key(section, name, "feature_dim", cfg.estimator.feature_dim);
        read_key(section, name, "estimator_hidden", cfg.estimator.estimator_hidden);
        read_key(section, name, "task_hidden", cfg.estimator.task_hidden);
        read_key(section, name, "cae_hidden", cfg.estimator.cae.hidden);
        read_key(section, name, "cae_code", cfg.estimator.cae.code);
        read_key(section, name, "cae_epochs", cfg.estimator.cae.epochs);
        read_key(section, name, "cae_minibatches", cfg.estimator.cae.minibatches);
        read_key(section, name, "cae_learning_rate", cfg.estimator.cae.learning_rate);
        read_key(section, name, "epochs", cfg.estimator.epochs);
        read_key(section, name, "minibatches", cfg.estimator.minibatches);
        read_key(section, name, "lr_classification", cfg.estimator.lr_classification);
        read_key(section, name, "lr_regression", cfg.estimator.lr_regression);
        read_key(section, name, "lr_decay_factor", cfg.estimator.lr_decay_factor);
        read_key(section, name, "lr_decay_interval", cfg.estimator.lr_decay_interval);
        read_key(section, name, "lambda_cons", cfg.estimator.lambda_cons);
        read_key(section, name, "lambda_task", cfg.estimator.lambda_task);
        if (section.contains("temperature_policy")) {
            const auto policy = section.at("temperature_policy").get<std::string>();
            if (policy == "variance") {
                cfg.temperature.kind = TemperaturePolicy::Kind::variance;
            } else if (policy == "fixed") {
                cfg.temperature.kind = TemperaturePolicy::Kind::fixed;
            } else {
                raise(ErrorKind::validation,
                      "likelihood.temperature_policy must be 'variance' or 'fixed'");
            }
        }
        read_key(section, name, "temperature_value", cfg.temperature.fixed_value);
    } else if (name == "explain") {
        check_keys(section, name, {"top_n", "per_stage", "threshold_percentile", "query_index"});
        read_key(section, name, "top_n", cfg.explain.top_n);
        read_key(section, name, "per_stage", cfg.explain.per_stage);
        read_key(section, name, "threshold_percentile", cfg.explain.threshold_percentile);
        read_key(section, name, "query_index", cfg.explain.query_index);
    } else if (name == "harness") {
        check_keys(section, name, {"task", "folds", "output_dir"});
        read_key(section, name, "task", cfg.harness.task);
        read_key(section, name, "folds", cfg.harness.folds);
        read_key(section, name, "output_dir", cfg.harness.output_dir);
    } else if (name == "autodiff") {
        check_keys(section, name,
                   {"adam_beta1", "adam_beta2", "adam_epsilon", "grad_clip", "grad_clip_norm"});
        AdamConfig adam;
        read_key(section, name, "adam_beta1", adam.beta1);
        read_key(section, name, "adam_beta2", adam.beta2);
        read_key(section, name, "adam_epsilon", adam.epsilon);
        read_key(section, name, "grad_clip", adam.clip_enabled);
        read_key(section, name, "grad_clip_norm", adam.clip_norm);
        cfg.adpen.adam = adam;
        cfg.estimator.adam = adam;
        cfg.estimator.cae.adam = adam;
    } else {
        raise(ErrorKind::validation, "unknown config section '" + name + "'");
    }
}

}  // namespace

TaskSpec RunConfig::task_spec() const {
    const int L = cohort_spec.num_stages();
    TaskSpec spec;
    const std::string& task = harness.task;
    auto need_four = [&] {
        if (L != 4) {
            raise(ErrorKind::validation,
                  "task '" + task + "' requires the four-stage spectrum, cohort has " +
                      std::to_string(L));
        }
    };
    if (task == "cn_ad") {
        need_four();
        spec = {TaskKind::classification, {0, -1, -1, 1}, 2, RegressionTarget::mmse, -1};
    } else if (task == "cn_mci") {
        need_four();
        spec = {TaskKind::classification, {0, 1, 1, -1}, 2, RegressionTarget::mmse, -1};
    } else if (task == "mci_ad") {
        need_four();
        spec = {TaskKind::classification, {-1, 0, 0, 1}, 2, RegressionTarget::mmse, -1};
    } else if (task == "smci_pmci") {
        need_four();
        spec = {TaskKind::classification, {-1, 0, 1, -1}, 2, RegressionTarget::mmse, -1};
    } else if (task == "cn_mci_ad") {
        need_four();
        spec = {TaskKind::classification, {0, 1, 1, 2}, 3, RegressionTarget::mmse, -1};
    } else if (task == "stages") {
        spec.kind = TaskKind::classification;
        spec.stage_to_class.resize(static_cast<std::size_t>(L));
        for (int s = 0; s < L; ++s) spec.stage_to_class[static_cast<std::size_t>(s)] = s;
        spec.num_classes = L;
    } else if (task == "mmse") {
        spec = {TaskKind::regression, {}, 0, RegressionTarget::mmse, -1};
    } else if (task == "age") {
        // healthy samples only: normal aging must not mix with disease effects
        spec = {TaskKind::regression, {}, 0, RegressionTarget::age, 0};
    } else {
        raise(ErrorKind::validation, "unknown harness.task '" + task + "'");
    }
    return spec;
}

Cohort RunConfig::load_or_generate_cohort(std::uint64_t seed) const {
    if (!cohort_path.empty()) {
        return load_cohort_ndjson(cohort_path, cohort_spec.num_stages());
    }
    return generate_cohort(cohort_spec, seed);
}

void RunConfig::validate() const {
    if (cohort_path.empty()) cohort_spec.validate();
    adpen.validate();
    estimator.validate();
    if (harness.folds < 2) raise(ErrorKind::validation, "harness.folds must be >= 2");
    if (explain.threshold_percentile < 0.0 || explain.threshold_percentile > 1.0) {
        raise(ErrorKind::validation, "explain.threshold_percentile must be in [0, 1]");
    }
    task_spec();  // rejects unknown task names early
}

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        raise(ErrorKind::parse, std::string("config: ") + e.what());
    }
    if (!j.is_object()) raise(ErrorKind::parse, "config root must be an object of sections");
    RunConfig cfg;
    for (const auto& [name, section] : j.items()) {
        if (!section.is_object()) {
            raise(ErrorKind::parse, "config section '" + name + "' must be an object");
        }
        apply_section(cfg, name, section);
    }
    return cfg;
}

void apply_env_overrides(RunConfig& cfg) {
    static const std::set<std::string> sections = {"cohort", "adpen", "likelihood",
                                                   "explain", "harness", "autodiff"};
    for (char** env = environ; *env != nullptr; ++env) {
        const std::string entry(*env);
        if (entry.rfind("PROTOMAP_", 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(9, eq - 9);
        const std::string value = entry.substr(eq + 1);
        for (auto& ch : key) ch = static_cast<char>(std::tolower(ch));

        // section is the prefix up to the first underscore
        const auto us = key.find('_');
        if (us == std::string::npos) {
            raise(ErrorKind::validation, "malformed override " + entry.substr(0, eq));
        }
        const std::string section = key.substr(0, us);
        const std::string field = key.substr(us + 1);
        if (!sections.count(section)) {
            raise(ErrorKind::validation, "unknown config section in override " +
                                             entry.substr(0, eq));
        }

        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;  // plain strings need no quoting
        }
        json wrapper;
        wrapper[field] = parsed;
        apply_section(cfg, section, wrapper);
    }
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::io, "cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    RunConfig cfg = parse_config_json(text);
    apply_env_overrides(cfg);
    cfg.validate();
    return cfg;
}

std::string config_schema_help() {
    return R"(Config sections and keys (JSON object per section):
  cohort:     path, save_path, stage_names, stage_counts, mmse_means,
              mmse_stddevs, age_means, age_stddevs, imaging_dim, imaging_noise
  adpen:      encoder_hidden, latent_dim, topology, grid_dims, gamma_max,
              gamma_min, lambda_som, epochs, minibatches, learning_rate,
              lr_decay_factor, lr_decay_interval, finetune_epochs, ordering,
              ordering_stopgrad_denominator
  likelihood: extractor_hidden, feature_dim, estimator_hidden, task_hidden,
              cae_hidden, cae_code, cae_epochs, cae_minibatches,
              cae_learning_rate, epochs, minibatches, lr_classification,
              lr_regression, lr_decay_factor, lr_decay_interval, lambda_cons,
              lambda_task, temperature_policy, temperature_value
  explain:    top_n, per_stage, threshold_percentile, query_index
  harness:    task, folds, output_dir
  autodiff:   adam_beta1, adam_beta2, adam_epsilon, grad_clip, grad_clip_norm
Environment overrides: PROTOMAP_<SECTION>_<KEY>=<json or string value>.
)";
}

}  // namespace protomap
