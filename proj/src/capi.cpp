#include "protomap/protomap.h"

#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "protomap/pipeline.hpp"

using namespace protomap;

struct pm_config {
    RunConfig cfg;
};
struct pm_cohort {
    Cohort cohort;
};
struct pm_adpen {
    AdpenModel model;
};
struct pm_estimator {
    EstimatorModel model;
};

namespace {

thread_local std::string g_last_error;

pm_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return PM_ERR_INVALID_ARGUMENT;
        case ErrorKind::dimension: return PM_ERR_DIMENSION;
        case ErrorKind::validation: return PM_ERR_VALIDATION;
        case ErrorKind::usage: return PM_ERR_USAGE;
        case ErrorKind::training: return PM_ERR_TRAINING;
        case ErrorKind::io: return PM_ERR_IO;
        case ErrorKind::parse: return PM_ERR_PARSE;
        case ErrorKind::metric_undefined: return PM_ERR_METRIC_UNDEFINED;
        case ErrorKind::internal: return PM_ERR_INTERNAL;
    }
    return PM_ERR_INTERNAL;
}

template <typename Fn>
pm_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PM_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return PM_ERR_INTERNAL;
    }
}

pm_status require(bool ok, const char* message) {
    if (ok) return PM_OK;
    g_last_error = message;
    return PM_ERR_INVALID_ARGUMENT;
}

std::string resolved_out_dir(const RunConfig& cfg, const char* out_dir) {
    return out_dir != nullptr && *out_dir != '\0' ? std::string(out_dir)
                                                  : cfg.harness.output_dir;
}

}  // namespace

extern "C" {

const char* pm_status_name(pm_status status) {
    switch (status) {
        case PM_OK: return "ok";
        case PM_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case PM_ERR_DIMENSION: return "dimension";
        case PM_ERR_VALIDATION: return "validation";
        case PM_ERR_USAGE: return "usage";
        case PM_ERR_TRAINING: return "training";
        case PM_ERR_IO: return "io";
        case PM_ERR_PARSE: return "parse";
        case PM_ERR_METRIC_UNDEFINED: return "metric_undefined";
        case PM_ERR_INTERNAL: return "internal";
    }
    return "internal";
}

const char* pm_last_error(void) { return g_last_error.c_str(); }

void pm_string_free(char* text) { std::free(text); }

pm_status pm_config_default(pm_config** out) {
    if (require(out != nullptr, "null output handle") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        *out = new pm_config{default_config()};
        return PM_OK;
    });
}

pm_status pm_config_load(const char* path, pm_config** out) {
    if (require(path != nullptr && out != nullptr, "null argument") != PM_OK) {
        return PM_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        *out = new pm_config{load_config(path)};
        return PM_OK;
    });
}

pm_status pm_config_set(pm_config* config, const char* dotted_key, const char* value) {
    if (require(config && dotted_key && value, "null argument") != PM_OK) {
        return PM_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        const std::string key(dotted_key);
        const auto dot = key.find('.');
        if (dot == std::string::npos || dot == 0 || dot + 1 == key.size()) {
            raise(ErrorKind::invalid_argument, "config key must look like 'section.key'");
        }
        // reuse the override path: PROTOMAP_<SECTION>_<KEY>=<value>
        std::string env_key = "PROTOMAP_" + key.substr(0, dot) + "_" + key.substr(dot + 1);
        for (auto& ch : env_key) ch = static_cast<char>(std::toupper(ch));
        setenv(env_key.c_str(), value, 1);
        try {
            apply_env_overrides(config->cfg);
        } catch (...) {
            unsetenv(env_key.c_str());
            throw;
        }
        unsetenv(env_key.c_str());
        return PM_OK;
    });
}

const char* pm_config_schema(void) {
    static const std::string schema = config_schema_help();
    return schema.c_str();
}

void pm_config_free(pm_config* config) { delete config; }

pm_status pm_cohort_open(const pm_config* config, uint64_t seed, pm_cohort** out) {
    if (require(config && out, "null argument") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        *out = new pm_cohort{config->cfg.load_or_generate_cohort(mix_seed(seed, 0xc0))};
        return PM_OK;
    });
}

pm_status pm_cohort_load(const char* path, int num_stages, pm_cohort** out) {
    if (require(path && out, "null argument") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        *out = new pm_cohort{load_cohort_ndjson(path, num_stages)};
        return PM_OK;
    });
}

pm_status pm_cohort_save(const pm_cohort* cohort, const char* path) {
    if (require(cohort && path, "null argument") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        save_cohort_ndjson(cohort->cohort, path);
        return PM_OK;
    });
}

size_t pm_cohort_size(const pm_cohort* cohort) {
    return cohort == nullptr ? 0 : cohort->cohort.size();
}

void pm_cohort_free(pm_cohort* cohort) { delete cohort; }

pm_status pm_adpen_train(const pm_config* config, const pm_cohort* cohort, uint64_t seed,
                         pm_adpen** out) {
    if (require(config && cohort && out, "null argument") != PM_OK) {
        return PM_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        AdpenModel model = train_adpen(cohort->cohort, {}, config->cfg.adpen, seed);
        finetune_som(model, cohort->cohort, {}, config->cfg.adpen.finetune_epochs);
        *out = new pm_adpen{std::move(model)};
        return PM_OK;
    });
}

pm_status pm_adpen_save(const pm_adpen* model, const char* path) {
    if (require(model && path, "null argument") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        save_adpen(model->model, path);
        return PM_OK;
    });
}

pm_status pm_adpen_load(const char* path, pm_adpen** out) {
    if (require(path && out, "null argument") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        *out = new pm_adpen{load_adpen(path)};
        return PM_OK;
    });
}

pm_status pm_adpen_encode(const pm_adpen* model, const double* clinical, size_t clinical_len,
                          double* latent_out, size_t latent_len) {
    if (require(model && clinical && latent_out, "null argument") != PM_OK) {
        return PM_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        if (latent_len != model->model.vae.latent_dim()) {
            raise(ErrorKind::dimension, "latent buffer has the wrong length");
        }
        const std::vector<double> c(clinical, clinical + clinical_len);
        const auto point = model->model.vae.encode_point(c, nullptr);
        std::memcpy(latent_out, point.h.data(), latent_len * sizeof(double));
        return PM_OK;
    });
}

pm_status pm_adpen_pseudo_map(const pm_adpen* model, const double* clinical,
                              size_t clinical_len, double* map_out, size_t map_len) {
    if (require(model && clinical && map_out, "null argument") != PM_OK) {
        return PM_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        if (map_len != model->model.grid.num_prototypes()) {
            raise(ErrorKind::dimension, "map buffer has the wrong length");
        }
        const std::vector<double> c(clinical, clinical + clinical_len);
        const auto point = model->model.vae.encode_point(c, nullptr);
        const auto map = pseudo_map(point.h, model->model.grid);
        std::memcpy(map_out, map.values.data(), map_len * sizeof(double));
        return PM_OK;
    });
}

size_t pm_adpen_num_prototypes(const pm_adpen* model) {
    return model == nullptr ? 0 : model->model.grid.num_prototypes();
}

void pm_adpen_free(pm_adpen* model) { delete model; }

pm_status pm_estimator_load(const char* path, pm_estimator** out) {
    if (require(path && out, "null argument") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        *out = new pm_estimator{load_estimator(path)};
        return PM_OK;
    });
}

pm_status pm_estimator_estimate(const pm_estimator* model, const double* features,
                                size_t features_len, double* map_out, size_t map_len) {
    if (require(model && features && map_out, "null argument") != PM_OK) {
        return PM_ERR_INVALID_ARGUMENT;
    }
    return guarded([&] {
        if (map_len != pm_estimator_map_len(model)) {
            raise(ErrorKind::dimension, "map buffer has the wrong length");
        }
        const std::vector<double> f(features, features + features_len);
        const auto map = model->model.estimate(f);
        std::memcpy(map_out, map.values.data(), map_len * sizeof(double));
        return PM_OK;
    });
}

size_t pm_estimator_map_len(const pm_estimator* model) {
    return model == nullptr ? 0 : model->model.estimator_net.out_dim();
}

void pm_estimator_free(pm_estimator* model) { delete model; }

pm_status pm_run_generate(const pm_config* config, uint64_t seed, const char* out_path) {
    if (require(config != nullptr, "null config") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const RunConfig& cfg = config->cfg;
        cfg.validate();
        std::string path = out_path != nullptr && *out_path != '\0'
                               ? std::string(out_path)
                               : cfg.cohort_save_path;
        if (path.empty()) path = cfg.harness.output_dir + "/cohort.ndjson";
        std::filesystem::create_directories(
            std::filesystem::path(path).parent_path().empty()
                ? "."
                : std::filesystem::path(path).parent_path());
        const Cohort cohort = cfg.load_or_generate_cohort(mix_seed(seed, 0xc0));
        save_cohort_ndjson(cohort, path);
        return PM_OK;
    });
}

pm_status pm_run_train_adpen(const pm_config* config, uint64_t seed, const char* out_dir) {
    if (require(config != nullptr, "null config") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const RunConfig& cfg = config->cfg;
        cfg.validate();
        const std::string dir = resolved_out_dir(cfg, out_dir);
        std::filesystem::create_directories(dir);
        const Cohort cohort = cfg.load_or_generate_cohort(mix_seed(seed, 0xc0));
        auto artifacts = train_adpen_split(cfg, cohort, seed);
        save_adpen(artifacts.adpen, dir + "/adpen.json");
        write_adpen_curves_csv(artifacts.adpen, dir + "/curves_adpen.csv");
        return PM_OK;
    });
}

pm_status pm_run_train_estimator(const pm_config* config, uint64_t seed, const char* out_dir) {
    if (require(config != nullptr, "null config") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const RunConfig& cfg = config->cfg;
        cfg.validate();
        const std::string dir = resolved_out_dir(cfg, out_dir);
        const std::string adpen_path = dir + "/adpen.json";
        if (!std::filesystem::exists(adpen_path)) {
            raise(ErrorKind::usage,
                  "estimator training requires " + adpen_path + "; run train-adpen first");
        }
        AdpenModel adpen = load_adpen(adpen_path);
        const Cohort cohort = cfg.load_or_generate_cohort(mix_seed(seed, 0xc0));
        // the checkpoint's seed pins the fold split it was trained on
        auto folds = stratified_kfold(cohort, cfg.harness.folds, adpen.seed);
        EstimatorModel estimator = train_estimator(cohort, folds.front(), adpen,
                                                   cfg.task_spec(), cfg.estimator,
                                                   mix_seed(seed, 7), cfg.temperature);
        save_estimator(estimator, dir + "/estimator.json");
        write_estimator_curves_csv(estimator, dir + "/curves_estimator.csv");
        return PM_OK;
    });
}

pm_status pm_run_evaluate(const pm_config* config, uint64_t seed, const char* out_dir,
                          char** metrics_json) {
    if (require(config != nullptr, "null config") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const RunConfig& cfg = config->cfg;
        const std::string dir = resolved_out_dir(cfg, out_dir);
        MetricsReport report = run_pipeline(cfg, seed, dir);
        if (metrics_json != nullptr) {
            const std::string text = report.to_json_string();
            *metrics_json = static_cast<char*>(std::malloc(text.size() + 1));
            if (*metrics_json == nullptr) raise(ErrorKind::internal, "out of memory");
            std::memcpy(*metrics_json, text.c_str(), text.size() + 1);
        }
        for (const auto& fold : report.fold_outcomes) {
            if (!fold.ok) {
                raise(ErrorKind::training, "fold " + std::to_string(fold.fold) + " failed at " +
                                               fold.stage + ": " + fold.error);
            }
        }
        return PM_OK;
    });
}

pm_status pm_run_explain(const pm_config* config, uint64_t seed, const char* out_dir) {
    if (require(config != nullptr, "null config") != PM_OK) return PM_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const RunConfig& cfg = config->cfg;
        cfg.validate();
        const std::string dir = resolved_out_dir(cfg, out_dir);
        const std::string adpen_path = dir + "/adpen.json";
        const std::string estimator_path = dir + "/estimator.json";
        for (const auto& path : {adpen_path, estimator_path}) {
            if (!std::filesystem::exists(path)) {
                raise(ErrorKind::usage, "explain requires " + path);
            }
        }
        AdpenModel adpen = load_adpen(adpen_path);
        EstimatorModel estimator = load_estimator(estimator_path);
        const Cohort cohort = cfg.load_or_generate_cohort(mix_seed(seed, 0xc0));
        auto folds = stratified_kfold(cohort, cfg.harness.folds, adpen.seed);
        ExplainOutputs outputs = explain_subject(cohort, adpen, estimator, folds.front().train,
                                                 cfg.explain.query_index, cfg.explain);
        write_explain_outputs(outputs, dir);
        return PM_OK;
    });
}

}  // extern "C"
