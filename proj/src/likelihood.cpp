#include "protomap/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include "protomap/log.hpp"

#include "serialize.hpp"

namespace protomap {

namespace {

constexpr double kLogEps = 1e-12;
constexpr double kDegenerateEps = 1e-12;

std::vector<double> squared_distances(const std::vector<double>& h, const PrototypeGrid& grid) {
    const Tensor& p = grid.prototypes.value();
    if (h.size() != p.cols()) raise(ErrorKind::dimension, "latent dimension mismatch");
    std::vector<double> d(p.rows());
    for (std::size_t k = 0; k < p.rows(); ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            const double diff = h[j] - p.at(k, j);
            acc += diff * diff;
        }
        d[k] = acc;
    }
    return d;
}

double resolve_policy(const std::vector<double>& distances, const TemperaturePolicy& policy) {
    if (policy.kind == TemperaturePolicy::Kind::fixed) {
        if (policy.fixed_value > 0.0) return policy.fixed_value;
        warn("non-positive fixed temperature, falling back to 1");
        return 1.0;
    }
    return resolve_temperature(distances);
}

Var forward_frozen(const Mlp& mlp, const Var& x) {
    Var y = x;
    for (const auto& layer : mlp.layers) {
        DenseLayer frozen;
        frozen.weights = Var::constant(layer.weights.value());
        frozen.bias = Var::constant(layer.bias.value());
        frozen.activation = layer.activation;
        y = frozen.forward(y);
    }
    return y;
}

Tensor maps_tensor(const std::vector<LikelihoodMap>& maps) {
    const std::size_t k = maps.front().values.size();
    Tensor t({maps.size(), k});
    for (std::size_t n = 0; n < maps.size(); ++n) {
        if (maps[n].values.size() != k) {
            raise(ErrorKind::dimension, "likelihood maps have inconsistent lengths");
        }
        for (std::size_t j = 0; j < k; ++j) t.at(n, j) = maps[n].values[j];
    }
    return t;
}

struct LossComponents {
    Var est;
    Var cons;
    Var task;
    Var total;
};

LossComponents loss_components(const Var& estimated_maps, const Tensor& pseudo_maps,
                               const ConsistencyCae& cae, const Var& task_output,
                               const Tensor& task_targets, TaskKind kind, double lambda_cons,
                               double lambda_task) {
    if (!cae.trained) raise(ErrorKind::usage, "consistency loss requires a pretrained CAE");
    if (!estimated_maps.value().same_shape(pseudo_maps)) {
        raise(ErrorKind::dimension, "estimated and pseudo map batches differ in shape");
    }
    const double batch = static_cast<double>(pseudo_maps.rows());

    LossComponents c;
    Var diff = sub(estimated_maps, Var::constant(pseudo_maps));
    c.est = add(sum_all(abs(diff)), sum_all(square(diff)));

    Var code_est = cae.encode_frozen(estimated_maps);
    Var code_ref = cae.encode_frozen(Var::constant(pseudo_maps));
    Var cdiff = sub(code_est, code_ref);
    c.cons = add(sum_all(abs(cdiff)), sum_all(square(cdiff)));

    if (kind == TaskKind::classification) {
        c.task = affine(
            sum_all(mul_const(log(affine(task_output, 1.0, kLogEps)), task_targets)), -1.0, 0.0);
    } else {
        c.task = sum_all(square(sub(task_output, Var::constant(task_targets))));
    }

    c.total = affine(add(add(c.est, affine(c.cons, lambda_cons, 0.0)),
                         affine(c.task, lambda_task, 0.0)),
                     1.0 / batch, 0.0);
    return c;
}

}  // namespace

// ---- maps ----

void save_map_json(const LikelihoodMap& map, const std::string& path) {
    nlohmann::json j = {
        {"kind", map.kind == MapKind::pseudo ? "pseudo" : "estimated"},
        {"topology", topology_name(map.topology)},
        {"shape", map.dims},
        {"values", map.values},
    };
    detail::write_json_file(j, path);
}

LikelihoodMap load_map_json(const std::string& path) {
    const nlohmann::json j = detail::load_json_file(path);
    LikelihoodMap map;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "pseudo" && kind != "estimated") {
        raise(ErrorKind::parse, path + ": unknown map kind '" + kind + "'");
    }
    map.kind = kind == "pseudo" ? MapKind::pseudo : MapKind::estimated;
    map.topology = topology_from_string(j.at("topology").get<std::string>());
    map.dims = j.at("shape").get<std::vector<std::size_t>>();
    map.values = j.at("values").get<std::vector<double>>();
    std::size_t k = 1;
    for (std::size_t d : map.dims) k *= d;
    if (map.dims.empty() || k != map.values.size()) {
        raise(ErrorKind::validation, path + ": shape does not match value count");
    }
    return map;
}

double resolve_temperature(const std::vector<double>& distances) {
    if (distances.size() < 2) raise(ErrorKind::invalid_argument, "temperature needs K >= 2");
    double mean = 0.0;
    for (double d : distances) mean += d;
    mean /= static_cast<double>(distances.size());
    double var = 0.0;
    for (double d : distances) var += (d - mean) * (d - mean);
    var /= static_cast<double>(distances.size());
    const double std_dev = std::sqrt(var);
    return std_dev < kDegenerateEps ? 1.0 : std_dev;
}

std::vector<double> minmax_normalize(const std::vector<double>& v) {
    if (v.empty()) raise(ErrorKind::invalid_argument, "minmax of empty vector");
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double span = *mx - *mn;
    if (span < kDegenerateEps) return v;  // constant map passes through
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *mn) / span;
    return out;
}

LikelihoodMap pseudo_map(const std::vector<double>& h, const PrototypeGrid& grid,
                         const TemperaturePolicy& policy) {
    const auto distances = squared_distances(h, grid);
    const double gamma = resolve_policy(distances, policy);

    // softmax of -d/gamma with max-subtraction
    std::vector<double> scores(distances.size());
    double best = -distances[0];
    for (std::size_t k = 0; k < distances.size(); ++k) best = std::max(best, -distances[k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < distances.size(); ++k) {
        scores[k] = std::exp((-distances[k] - best) / gamma);
        denom += scores[k];
    }
    for (auto& s : scores) s /= denom;

    LikelihoodMap map;
    map.values = minmax_normalize(scores);
    map.topology = grid.topology;
    map.dims = grid.dims;
    map.kind = MapKind::pseudo;
    return map;
}

std::vector<LikelihoodMap> pseudo_maps_for(const AdpenModel& model, const Cohort& cohort,
                                           const std::vector<std::size_t>& rows,
                                           const TemperaturePolicy& policy) {
    if (!model.trained) raise(ErrorKind::usage, "pseudo maps require a trained prototype model");
    std::vector<LikelihoodMap> maps;
    maps.reserve(rows.size());
    for (std::size_t row : rows) {
        const auto latent = model.vae.encode_point(cohort.subjects[row].clinical, nullptr);
        maps.push_back(pseudo_map(latent.h, model.grid, policy));
    }
    return maps;
}

// ---- CAE ----

std::vector<double> ConsistencyCae::encode(const std::vector<double>& map) const {
    Tensor in({1, map.size()}, std::vector<double>(map));
    return encoder.forward(Var::constant(in)).value().values();
}

std::vector<double> ConsistencyCae::reconstruct(const std::vector<double>& map) const {
    Tensor in({1, map.size()}, std::vector<double>(map));
    return decoder.forward(encoder.forward(Var::constant(in))).value().values();
}

Var ConsistencyCae::encode_frozen(const Var& maps) const {
    return forward_frozen(encoder, maps);
}

double ConsistencyCae::reconstruction_mse(const std::vector<LikelihoodMap>& maps) const {
    if (maps.empty()) raise(ErrorKind::invalid_argument, "reconstruction mse of empty set");
    double acc = 0.0;
    for (const auto& map : maps) {
        const auto rec = reconstruct(map.values);
        for (std::size_t j = 0; j < map.values.size(); ++j) {
            const double d = map.values[j] - rec[j];
            acc += d * d;
        }
    }
    return acc / static_cast<double>(maps.size());
}

ConsistencyCae pretrain_cae(const std::vector<LikelihoodMap>& maps, const CaeConfig& config,
                            std::uint64_t seed) {
    if (maps.empty()) raise(ErrorKind::validation, "CAE pretraining needs at least one map");
    const std::size_t k = maps.front().values.size();
    if (config.code == 0 || config.code >= k) {
        raise(ErrorKind::validation, "CAE code dimension must be in (0, K)");
    }

    Rng init_rng(mix_seed(seed, 1));
    ConsistencyCae cae;
    cae.encoder = Mlp({k, config.hidden, config.code}, Activation::relu, Activation::identity,
                      init_rng);
    cae.decoder = Mlp({config.code, config.hidden, k}, Activation::relu, Activation::sigmoid,
                      init_rng);

    const Tensor all = maps_tensor(maps);
    std::vector<NamedParam> params;
    collect_params(cae.encoder, "cae.encoder", params);
    collect_params(cae.decoder, "cae.decoder", params);
    std::vector<Var> param_vars;
    for (auto& p : params) param_vars.push_back(p.var);

    Adam adam(config.adam);
    Rng shuffle_rng(mix_seed(seed, 2));
    std::vector<std::size_t> order(maps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const int b = std::min<int>(config.minibatches, static_cast<int>(maps.size()));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        std::size_t pos = 0;
        for (int f = 0; f < b && pos < order.size(); ++f) {
            const std::size_t take = order.size() / static_cast<std::size_t>(b) +
                                     (static_cast<std::size_t>(f) <
                                              order.size() % static_cast<std::size_t>(b)
                                          ? 1
                                          : 0);
            Tensor batch({take, k});
            for (std::size_t i = 0; i < take; ++i) {
                for (std::size_t j = 0; j < k; ++j) batch.at(i, j) = all.at(order[pos + i], j);
            }
            pos += take;

            zero_grad(param_vars);
            Var in = Var::constant(batch);
            Var rec = cae.decoder.forward(cae.encoder.forward(in));
            Var loss = sum_all(square(sub(rec, in)));
            if (!std::isfinite(loss.value().item())) {
                raise(ErrorKind::training, "CAE pretraining diverged at epoch " +
                                               std::to_string(epoch));
            }
            backward(loss);
            adam.step(params, config.learning_rate);
        }
    }
    cae.trained = true;
    return cae;
}

// ---- task spec ----

bool TaskSpec::sample_applies(int stage) const {
    if (kind == TaskKind::classification) {
        return stage_to_class[static_cast<std::size_t>(stage)] >= 0;
    }
    return restrict_stage < 0 || stage == restrict_stage;
}

void TaskSpec::validate(int num_stages) const {
    if (kind == TaskKind::regression) return;
    if (stage_to_class.size() != static_cast<std::size_t>(num_stages)) {
        raise(ErrorKind::validation, "stage_to_class must cover every stage");
    }
    if (num_classes < 2) raise(ErrorKind::validation, "classification needs >= 2 classes");
    std::vector<bool> used(static_cast<std::size_t>(num_classes), false);
    for (int c : stage_to_class) {
        if (c >= num_classes) {
            raise(ErrorKind::validation, "class label " + std::to_string(c) + " out of range");
        }
        if (c >= 0) used[static_cast<std::size_t>(c)] = true;
    }
    for (bool u : used) {
        if (!u) raise(ErrorKind::validation, "every class needs at least one mapped stage");
    }
}

void EstimatorConfig::validate() const {
    if (feature_dim == 0 || extractor_hidden == 0 || estimator_hidden == 0 || task_hidden == 0) {
        raise(ErrorKind::validation, "estimator layer widths must be positive");
    }
    if (epochs < 0 || minibatches < 1) raise(ErrorKind::validation, "bad estimator epochs/batches");
    if (lr_classification < 0.0 || lr_regression < 0.0) {
        raise(ErrorKind::validation, "learning rates must be >= 0");
    }
    if (lambda_cons < 0.0 || lambda_task < 0.0) {
        raise(ErrorKind::validation, "loss weights must be >= 0");
    }
}

// ---- losses ----

double est_loss(const std::vector<double>& pseudo, const std::vector<double>& estimated) {
    if (pseudo.size() != estimated.size()) raise(ErrorKind::dimension, "map length mismatch");
    double l1 = 0.0, l2 = 0.0;
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
        const double d = pseudo[i] - estimated[i];
        l1 += std::abs(d);
        l2 += d * d;
    }
    return l1 + l2;
}

double cons_loss(const ConsistencyCae& cae, const std::vector<double>& pseudo,
                 const std::vector<double>& estimated) {
    if (!cae.trained) raise(ErrorKind::usage, "consistency loss requires a pretrained CAE");
    return est_loss(cae.encode(pseudo), cae.encode(estimated));
}

double task_loss_classification(const std::vector<double>& probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
        raise(ErrorKind::validation, "label index out of range");
    }
    return -std::log(probs[static_cast<std::size_t>(label)] + kLogEps);
}

double task_loss_regression(double predicted, double target) {
    const double d = predicted - target;
    return d * d;
}

Var total_loss_term(const Var& estimated_maps, const Tensor& pseudo_maps,
                    const ConsistencyCae& cae, const Var& task_output,
                    const Tensor& task_targets, TaskKind kind, double lambda_cons,
                    double lambda_task) {
    return loss_components(estimated_maps, pseudo_maps, cae, task_output, task_targets, kind,
                           lambda_cons, lambda_task)
        .total;
}

// ---- estimator ----

LikelihoodMap EstimatorModel::estimate(const std::vector<double>& imaging_features) const {
    if (imaging_features.size() != extractor.in_dim()) {
        raise(ErrorKind::validation, "imaging feature dimension mismatch: expected " +
                                         std::to_string(extractor.in_dim()) + ", got " +
                                         std::to_string(imaging_features.size()));
    }
    Tensor in({1, imaging_features.size()}, std::vector<double>(imaging_features));
    Var rho = sigmoid(estimator_net.forward(extractor.forward(Var::constant(in))));
    LikelihoodMap map;
    map.values = rho.value().values();
    map.topology = topology;
    map.dims = dims;
    map.kind = MapKind::estimated;
    return map;
}

std::vector<double> EstimatorModel::predict_probs(const std::vector<double>& imaging_features) const {
    if (task.kind != TaskKind::classification) {
        raise(ErrorKind::usage, "predict_probs on a regression model");
    }
    const auto map = estimate(imaging_features);
    Tensor code({1, cae.code_dim()}, cae.encode(map.values));
    return task_head.forward(Var::constant(code)).value().values();
}

double EstimatorModel::predict_value(const std::vector<double>& imaging_features) const {
    if (task.kind != TaskKind::regression) {
        raise(ErrorKind::usage, "predict_value on a classification model");
    }
    const auto map = estimate(imaging_features);
    Tensor code({1, cae.code_dim()}, cae.encode(map.values));
    return task_head.forward(Var::constant(code)).value().item();
}

EstimatorModel train_estimator(const Cohort& cohort, const FoldSplit& split,
                               const AdpenModel& adpen, const TaskSpec& task,
                               const EstimatorConfig& config, std::uint64_t seed,
                               const TemperaturePolicy& policy) {
    if (!adpen.trained) {
        raise(ErrorKind::usage, "estimator training requires a trained prototype model");
    }
    config.validate();
    task.validate(cohort.num_stages());

    auto filter = [&](const std::vector<std::size_t>& rows) {
        std::vector<std::size_t> out;
        for (std::size_t r : rows) {
            if (task.sample_applies(cohort.subjects[r].record.stage)) out.push_back(r);
        }
        return out;
    };
    const auto train_rows = filter(split.train);
    const auto val_rows = filter(split.validation);
    if (train_rows.empty()) raise(ErrorKind::validation, "no training samples match the task");

    // pseudo maps cached once from the frozen prototype model
    const auto train_maps = pseudo_maps_for(adpen, cohort, train_rows, policy);
    const std::size_t k = adpen.grid.num_prototypes();
    const std::size_t img_dim = cohort.imaging_dim();

    EstimatorModel model;
    model.task = task;
    model.config = config;
    model.topology = adpen.grid.topology;
    model.dims = adpen.grid.dims;
    model.seed = seed;
    model.cae = pretrain_cae(train_maps, config.cae, mix_seed(seed, 11));

    Rng init_rng(mix_seed(seed, 12));
    model.extractor = Mlp({img_dim, config.extractor_hidden, config.feature_dim},
                          Activation::relu, Activation::relu, init_rng);
    model.estimator_net = Mlp({config.feature_dim, config.estimator_hidden, k},
                              Activation::relu, Activation::identity, init_rng);
    const bool classify = task.kind == TaskKind::classification;
    const std::size_t out_dim = classify ? static_cast<std::size_t>(task.num_classes) : 1;
    model.task_head = Mlp({config.cae.code, config.task_hidden, out_dim}, Activation::relu,
                          classify ? Activation::softmax : Activation::sigmoid, init_rng);

    std::vector<NamedParam> params;
    collect_params(model.extractor, "extractor", params);
    collect_params(model.estimator_net, "estimator", params);
    collect_params(model.task_head, "task_head", params);
    std::vector<Var> param_vars;
    for (auto& p : params) param_vars.push_back(p.var);

    auto target_of = [&](std::size_t row) {
        const auto& subj = cohort.subjects[row];
        if (classify) {
            return static_cast<double>(
                task.stage_to_class[static_cast<std::size_t>(subj.record.stage)]);
        }
        const auto L = static_cast<std::size_t>(cohort.num_stages());
        return task.target == RegressionTarget::mmse ? subj.clinical[L] : subj.clinical[L + 1];
    };

    auto snapshot = [&params] {
        std::vector<Tensor> tensors;
        tensors.reserve(params.size());
        for (const auto& p : params) tensors.push_back(p.var.value());
        return tensors;
    };
    auto restore = [&params](const std::vector<Tensor>& tensors) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i].var.mutable_value() = tensors[i];
        }
    };

    auto validate_now = [&]() -> double {
        if (val_rows.empty()) return classify ? 1.0 : 0.0;
        if (classify) {
            std::size_t hits = 0;
            for (std::size_t r : val_rows) {
                const auto probs = model.predict_probs(cohort.subjects[r].imaging.features);
                const auto pred = static_cast<int>(
                    std::max_element(probs.begin(), probs.end()) - probs.begin());
                if (pred == static_cast<int>(target_of(r))) ++hits;
            }
            return static_cast<double>(hits) / static_cast<double>(val_rows.size());
        }
        double acc = 0.0;
        for (std::size_t r : val_rows) {
            const double d =
                model.predict_value(cohort.subjects[r].imaging.features) - target_of(r);
            acc += d * d;
        }
        return acc / static_cast<double>(val_rows.size());
    };

    Adam adam(config.adam);
    const LrSchedule lr_schedule{classify ? config.lr_classification : config.lr_regression,
                                 config.lr_decay_factor, config.lr_decay_interval};
    Rng shuffle_rng(mix_seed(seed, 13));

    std::vector<std::size_t> order(train_rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const int b = std::min<int>(config.minibatches, static_cast<int>(train_rows.size()));

    std::vector<Tensor> best_params = snapshot();
    model.best_val_metric = classify ? -1.0 : std::numeric_limits<double>::infinity();
    model.best_epoch = -1;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_schedule.at(epoch);
        shuffle_rng.shuffle(order);

        EstimatorCurvePoint point;
        point.epoch = epoch;
        int steps = 0;
        std::size_t pos = 0;
        for (int f = 0; f < b && pos < order.size(); ++f) {
            const std::size_t take = order.size() / static_cast<std::size_t>(b) +
                                     (static_cast<std::size_t>(f) <
                                              order.size() % static_cast<std::size_t>(b)
                                          ? 1
                                          : 0);
            Tensor features({take, img_dim});
            Tensor pseudo({take, k});
            Tensor targets = classify ? Tensor({take, static_cast<std::size_t>(task.num_classes)})
                                      : Tensor({take, 1});
            for (std::size_t i = 0; i < take; ++i) {
                const std::size_t local = order[pos + i];
                const std::size_t row = train_rows[local];
                const auto& feats = cohort.subjects[row].imaging.features;
                for (std::size_t j = 0; j < img_dim; ++j) features.at(i, j) = feats[j];
                for (std::size_t j = 0; j < k; ++j) pseudo.at(i, j) = train_maps[local].values[j];
                if (classify) {
                    targets.at(i, static_cast<std::size_t>(target_of(row))) = 1.0;
                } else {
                    targets.at(i, 0) = target_of(row);
                }
            }
            pos += take;

            zero_grad(param_vars);
            Var z = model.extractor.forward(Var::constant(features));
            Var rho = sigmoid(model.estimator_net.forward(z));
            Var task_out = model.task_head.forward(model.cae.encode_frozen(rho));
            const auto losses = loss_components(rho, pseudo, model.cae, task_out, targets,
                                                task.kind, config.lambda_cons,
                                                config.lambda_task);
            if (!std::isfinite(losses.total.value().item())) {
                raise(ErrorKind::training, "estimator training diverged at epoch " +
                                               std::to_string(epoch));
            }
            backward(losses.total);
            adam.step(params, lr);

            point.est += losses.est.value().item() / static_cast<double>(take);
            point.cons += losses.cons.value().item() / static_cast<double>(take);
            point.task += losses.task.value().item() / static_cast<double>(take);
            point.total += losses.total.value().item();
            ++steps;
        }
        if (steps > 0) {
            point.est /= steps;
            point.cons /= steps;
            point.task /= steps;
            point.total /= steps;
        }

        point.val_metric = validate_now();
        // ties keep the later epoch: the map-estimation terms keep improving
        // after the task metric saturates
        const bool improved = classify ? point.val_metric >= model.best_val_metric
                                       : point.val_metric <= model.best_val_metric;
        if (improved) {
            model.best_val_metric = point.val_metric;
            model.best_epoch = epoch;
            best_params = snapshot();
        }
        model.curve.push_back(point);
    }

    if (model.best_epoch >= 0) restore(best_params);
    model.trained = true;
    return model;
}

// ---- checkpointing ----

void save_estimator(const EstimatorModel& model, const std::string& path) {
    nlohmann::json j;
    j["format"] = "protomap-estimator";
    j["version"] = 1;
    j["seed"] = model.seed;
    j["trained"] = model.trained;
    j["topology"] = topology_name(model.topology);
    j["dims"] = model.dims;
    j["best_epoch"] = model.best_epoch;
    j["best_val_metric"] = model.best_val_metric;
    j["task"] = {
        {"kind", model.task.kind == TaskKind::classification ? "classification" : "regression"},
        {"stage_to_class", model.task.stage_to_class},
        {"num_classes", model.task.num_classes},
        {"target", model.task.target == RegressionTarget::mmse ? "mmse" : "age"},
        {"restrict_stage", model.task.restrict_stage},
    };
    j["config"] = {
        {"extractor_hidden", model.config.extractor_hidden},
        {"feature_dim", model.config.feature_dim},
        {"estimator_hidden", model.config.estimator_hidden},
        {"task_hidden", model.config.task_hidden},
        {"epochs", model.config.epochs},
        {"minibatches", model.config.minibatches},
        {"lr_classification", model.config.lr_classification},
        {"lr_regression", model.config.lr_regression},
        {"lr_decay_factor", model.config.lr_decay_factor},
        {"lr_decay_interval", model.config.lr_decay_interval},
        {"lambda_cons", model.config.lambda_cons},
        {"lambda_task", model.config.lambda_task},
        {"cae_hidden", model.config.cae.hidden},
        {"cae_code", model.config.cae.code},
        {"cae_epochs", model.config.cae.epochs},
        {"cae_minibatches", model.config.cae.minibatches},
        {"cae_learning_rate", model.config.cae.learning_rate},
    };
    j["extractor"] = detail::mlp_to_json(model.extractor);
    j["estimator_net"] = detail::mlp_to_json(model.estimator_net);
    j["task_head"] = detail::mlp_to_json(model.task_head);
    j["cae"] = {
        {"trained", model.cae.trained},
        {"encoder", detail::mlp_to_json(model.cae.encoder)},
        {"decoder", detail::mlp_to_json(model.cae.decoder)},
    };
    detail::write_json_file(j, path);
}

EstimatorModel load_estimator(const std::string& path) {
    const nlohmann::json j = detail::load_json_file(path);
    if (j.value("format", "") != "protomap-estimator") {
        raise(ErrorKind::parse, path + ": not an estimator checkpoint");
    }
    EstimatorModel model;
    model.seed = j.at("seed").get<std::uint64_t>();
    model.trained = j.at("trained").get<bool>();
    model.topology = topology_from_string(j.at("topology").get<std::string>());
    model.dims = j.at("dims").get<std::vector<std::size_t>>();
    model.best_epoch = j.at("best_epoch").get<int>();
    model.best_val_metric = j.at("best_val_metric").get<double>();

    const auto& jt = j.at("task");
    model.task.kind = jt.at("kind").get<std::string>() == "classification"
                          ? TaskKind::classification
                          : TaskKind::regression;
    model.task.stage_to_class = jt.at("stage_to_class").get<std::vector<int>>();
    model.task.num_classes = jt.at("num_classes").get<int>();
    model.task.target = jt.at("target").get<std::string>() == "mmse" ? RegressionTarget::mmse
                                                                     : RegressionTarget::age;
    model.task.restrict_stage = jt.at("restrict_stage").get<int>();

    const auto& jc = j.at("config");
    model.config.extractor_hidden = jc.at("extractor_hidden").get<std::size_t>();
    model.config.feature_dim = jc.at("feature_dim").get<std::size_t>();
    model.config.estimator_hidden = jc.at("estimator_hidden").get<std::size_t>();
    model.config.task_hidden = jc.at("task_hidden").get<std::size_t>();
    model.config.epochs = jc.at("epochs").get<int>();
    model.config.minibatches = jc.at("minibatches").get<int>();
    model.config.lr_classification = jc.at("lr_classification").get<double>();
    model.config.lr_regression = jc.at("lr_regression").get<double>();
    model.config.lr_decay_factor = jc.at("lr_decay_factor").get<double>();
    model.config.lr_decay_interval = jc.at("lr_decay_interval").get<int>();
    model.config.lambda_cons = jc.at("lambda_cons").get<double>();
    model.config.lambda_task = jc.at("lambda_task").get<double>();
    model.config.cae.hidden = jc.at("cae_hidden").get<std::size_t>();
    model.config.cae.code = jc.at("cae_code").get<std::size_t>();
    model.config.cae.epochs = jc.at("cae_epochs").get<int>();
    model.config.cae.minibatches = jc.at("cae_minibatches").get<int>();
    model.config.cae.learning_rate = jc.at("cae_learning_rate").get<double>();

    model.extractor = detail::mlp_from_json(j.at("extractor"));
    model.estimator_net = detail::mlp_from_json(j.at("estimator_net"));
    model.task_head = detail::mlp_from_json(j.at("task_head"));
    model.cae.trained = j.at("cae").at("trained").get<bool>();
    model.cae.encoder = detail::mlp_from_json(j.at("cae").at("encoder"));
    model.cae.decoder = detail::mlp_from_json(j.at("cae").at("decoder"));
    return model;
}

}  // namespace protomap
