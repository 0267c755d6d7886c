#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "gradcheck.hpp"
#include "protomap/likelihood.hpp"

using namespace protomap;

namespace {

Cohort small_cohort(std::uint64_t seed, double noise = 0.05) {
    SyntheticSpec spec;
    spec.stage_counts = {20, 20, 20, 20};
    spec.imaging_dim = 8;
    spec.imaging_noise = noise;
    return generate_cohort(spec, seed);
}

AdpenModel small_adpen(const Cohort& cohort, std::uint64_t seed) {
    AdpenConfig cfg;
    cfg.grid_dims = {4, 4};
    cfg.epochs = 60;
    AdpenModel model = train_adpen(cohort, {}, cfg, seed);
    finetune_som(model, cohort, {}, 30);
    return model;
}

PrototypeGrid line_grid(const std::vector<double>& xs) {
    PrototypeGrid grid = PrototypeGrid::create(Topology::chain1d, {xs.size()}, 1);
    for (std::size_t k = 0; k < xs.size(); ++k) grid.prototypes.mutable_value().at(k, 0) = xs[k];
    return grid;
}

std::vector<LikelihoodMap> toy_maps(std::size_t count, std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    PrototypeGrid grid = PrototypeGrid::create(Topology::chain1d, {k}, 2);
    for (auto& v : grid.prototypes.mutable_value().values()) v = rng.uniform(-1, 1);
    std::vector<LikelihoodMap> maps;
    for (std::size_t i = 0; i < count; ++i) {
        maps.push_back(pseudo_map({rng.uniform(-1, 1), rng.uniform(-1, 1)}, grid));
    }
    return maps;
}

}  // namespace

TEST_CASE("temperature from the distance spread") {
    CHECK(resolve_temperature({3.0, 3.0, 3.0}) == 1.0);  // zero variance falls back
    CHECK(resolve_temperature({0.0, 2.0}) == doctest::Approx(1.0));  // population std
}

TEST_CASE("min-max normalization") {
    auto v = minmax_normalize({0.2, 0.4, 0.6});
    CHECK(v[0] == doctest::Approx(0.0));
    CHECK(v[1] == doctest::Approx(0.5));
    CHECK(v[2] == doctest::Approx(1.0));

    const std::vector<double> constant = {0.7, 0.7, 0.7};
    CHECK(minmax_normalize(constant) == constant);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> raw(6);
        for (auto& x : raw) x = rng.uniform(-5, 5);
        auto norm = minmax_normalize(raw);
        CHECK(*std::min_element(norm.begin(), norm.end()) == doctest::Approx(0.0));
        CHECK(*std::max_element(norm.begin(), norm.end()) == doctest::Approx(1.0));
    }
}

TEST_CASE("pseudo map equidistant case keeps the uniform scores") {
    PrototypeGrid grid = line_grid({1.0, -1.0});  // h = 0 is equidistant
    auto map = pseudo_map({0.0}, grid);
    CHECK(map.values[0] == doctest::Approx(0.5));
    CHECK(map.values[1] == doctest::Approx(0.5));
}

TEST_CASE("pseudo map approaches a one-hot at the bmu as gamma vanishes") {
    PrototypeGrid grid = line_grid({0.0, 1.0, 2.0, 5.0});
    TemperaturePolicy policy{TemperaturePolicy::Kind::fixed, 1e-9};
    auto map = pseudo_map({0.9}, grid, policy);
    const std::size_t bmu = bmu_index({0.9}, grid);
    for (std::size_t k = 0; k < map.values.size(); ++k) {
        CHECK(map.values[k] == doctest::Approx(k == bmu ? 1.0 : 0.0));
    }
}

TEST_CASE("pseudo map matches the hand-computed softmax oracle") {
    // distances 0,1,2,3 with gamma = 1
    PrototypeGrid grid = line_grid({0.0, 1.0, std::sqrt(2.0), std::sqrt(3.0)});
    TemperaturePolicy policy{TemperaturePolicy::Kind::fixed, 1.0};
    auto map = pseudo_map({0.0}, grid, policy);

    double denom = 0.0;
    std::vector<double> expect(4);
    for (int k = 0; k < 4; ++k) {
        expect[static_cast<std::size_t>(k)] = std::exp(-k);
        denom += expect[static_cast<std::size_t>(k)];
    }
    for (auto& e : expect) e /= denom;
    const double mn = expect[3], mx = expect[0];
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(map.values[k] == doctest::Approx((expect[k] - mn) / (mx - mn)).epsilon(1e-12));
    }
}

TEST_CASE("variance temperature makes the map scale invariant") {
    Rng rng(9);
    PrototypeGrid grid = PrototypeGrid::create(Topology::chain1d, {7}, 3);
    for (auto& v : grid.prototypes.mutable_value().values()) v = rng.uniform(-1, 1);
    std::vector<double> h = {0.2, -0.4, 0.6};

    PrototypeGrid scaled = PrototypeGrid::create(Topology::chain1d, {7}, 3);
    for (std::size_t i = 0; i < scaled.prototypes.value().size(); ++i) {
        scaled.prototypes.mutable_value()[i] = 2.0 * grid.prototypes.value()[i];
    }
    std::vector<double> h2 = {0.4, -0.8, 1.2};

    auto a = pseudo_map(h, grid);
    auto b = pseudo_map(h2, scaled);
    for (std::size_t k = 0; k < a.values.size(); ++k) {
        CHECK(a.values[k] == doctest::Approx(b.values[k]).epsilon(1e-9));
    }
}

TEST_CASE("pseudo map argmax equals the bmu") {
    Rng rng(10);
    PrototypeGrid grid = PrototypeGrid::create(Topology::grid2d, {5, 5}, 3);
    for (auto& v : grid.prototypes.mutable_value().values()) v = rng.uniform(-1, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> h = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        auto map = pseudo_map(h, grid);
        const auto argmax = static_cast<std::size_t>(
            std::max_element(map.values.begin(), map.values.end()) - map.values.begin());
        CHECK(argmax == bmu_index(h, grid));
    }
}

TEST_CASE("map json round trip") {
    auto maps = toy_maps(1, 6, 77);
    const std::string path = "map_roundtrip_test.json";
    save_map_json(maps[0], path);
    auto loaded = load_map_json(path);
    std::remove(path.c_str());
    CHECK(loaded.values == maps[0].values);
    CHECK(loaded.kind == maps[0].kind);
    CHECK(loaded.dims == maps[0].dims);
}

TEST_CASE("cae pretraining halves the reconstruction error") {
    auto maps = toy_maps(200, 16, 123);
    CaeConfig cfg;
    cfg.hidden = 24;
    cfg.code = 8;
    cfg.epochs = 150;

    CaeConfig frozen = cfg;
    frozen.learning_rate = 0.0;
    const double initial = pretrain_cae(maps, frozen, 31).reconstruction_mse(maps);

    // lr 0 leaves the reconstruction error at its initialization value
    CaeConfig untouched = cfg;
    untouched.epochs = 0;
    CHECK(pretrain_cae(maps, untouched, 31).reconstruction_mse(maps) == initial);

    ConsistencyCae cae = pretrain_cae(maps, cfg, 31);
    const double trained = cae.reconstruction_mse(maps);
    CHECK(trained < 0.5 * initial);
    CHECK(cae.trained);
}

TEST_CASE("cae pretraining is deterministic") {
    auto maps = toy_maps(40, 12, 124);
    CaeConfig cfg;
    cfg.code = 6;
    cfg.epochs = 30;
    ConsistencyCae a = pretrain_cae(maps, cfg, 5);
    ConsistencyCae b = pretrain_cae(maps, cfg, 5);
    CHECK(a.encoder.layers[0].weights.value().values() ==
          b.encoder.layers[0].weights.value().values());
    CHECK(a.reconstruct(maps[0].values) == b.reconstruct(maps[0].values));
}

TEST_CASE("estimated maps live strictly inside (0, 1)") {
    Rng rng(55);
    EstimatorModel model;
    model.extractor = Mlp({8, 16, 4}, Activation::relu, Activation::relu, rng);
    model.estimator_net = Mlp({4, 8, 10}, Activation::relu, Activation::identity, rng);
    model.topology = Topology::chain1d;
    model.dims = {10};

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> feats(8);
        for (auto& f : feats) f = rng.uniform(-2, 2);
        auto map = model.estimate(feats);
        for (double v : map.values) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }

    // zero weights -> logits 0 -> all 0.5
    for (auto& layer : model.estimator_net.layers) {
        for (auto& v : layer.weights.mutable_value().values()) v = 0.0;
        for (auto& v : layer.bias.mutable_value().values()) v = 0.0;
    }
    auto map = model.estimate(std::vector<double>(8, 0.3));
    for (double v : map.values) CHECK(v == doctest::Approx(0.5));

    CHECK_THROWS_AS(model.estimate(std::vector<double>(5, 0.0)), Error);
}

TEST_CASE("estimation loss closed forms") {
    CHECK(est_loss({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    CHECK(est_loss({1.0, 0.0}, {0.0, 0.0}) == doctest::Approx(2.0));  // 1 + 1
    Rng rng(66);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        std::vector<double> b = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        CHECK(est_loss(a, b) == doctest::Approx(est_loss(b, a)).epsilon(1e-12));
        CHECK(est_loss(a, b) >= 0.0);
    }
}

TEST_CASE("consistency loss requires a pretrained cae and is nonnegative") {
    ConsistencyCae raw;
    Rng rng(67);
    raw.encoder = Mlp({6, 4, 3}, Activation::relu, Activation::identity, rng);
    raw.decoder = Mlp({3, 4, 6}, Activation::relu, Activation::sigmoid, rng);
    std::vector<double> map(6, 0.5);
    CHECK_THROWS_AS(cons_loss(raw, map, map), Error);

    raw.trained = true;
    CHECK(cons_loss(raw, map, map) == 0.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> a(6), b(6);
        for (auto& x : a) x = rng.uniform(0, 1);
        for (auto& x : b) x = rng.uniform(0, 1);
        CHECK(cons_loss(raw, a, b) >= 0.0);
    }
}

TEST_CASE("task loss closed forms") {
    CHECK(std::abs(task_loss_classification({0.0, 1.0, 0.0}, 1)) < 1e-9);
    CHECK(task_loss_classification({0.5, 0.5}, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(task_loss_regression(0.42, 0.42) == 0.0);
    CHECK_THROWS_AS(task_loss_classification({0.5, 0.5}, 2), Error);
    CHECK_THROWS_AS(task_loss_classification({0.5, 0.5}, -1), Error);
}

TEST_CASE("total loss reduces to mean estimation loss when the weights vanish") {
    Rng rng(68);
    auto maps = toy_maps(12, 8, 125);
    CaeConfig cae_cfg;
    cae_cfg.hidden = 8;
    cae_cfg.code = 4;
    cae_cfg.epochs = 20;
    ConsistencyCae cae = pretrain_cae(maps, cae_cfg, 17);

    const std::size_t batch = 3, k = 8;
    Tensor pseudo({batch, k});
    Tensor est_vals({batch, k});
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            pseudo.at(i, j) = maps[i].values[j];
            est_vals.at(i, j) = rng.uniform(0.01, 0.99);
        }
    }
    Tensor targets({batch, 2});
    for (std::size_t i = 0; i < batch; ++i) targets.at(i, i % 2) = 1.0;
    Tensor task_out({batch, 2});
    for (std::size_t i = 0; i < batch; ++i) {
        task_out.at(i, 0) = 0.5;
        task_out.at(i, 1) = 0.5;
    }

    Var total = total_loss_term(Var::constant(est_vals), pseudo, cae,
                                Var::constant(task_out), targets, TaskKind::classification,
                                0.0, 0.0);
    double expect = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        std::vector<double> a(k), b(k);
        for (std::size_t j = 0; j < k; ++j) {
            a[j] = pseudo.at(i, j);
            b[j] = est_vals.at(i, j);
        }
        expect += est_loss(a, b);
    }
    CHECK(total.value().item() == doctest::Approx(expect / batch).epsilon(1e-12));

    // perfect estimation and prediction -> 0
    Tensor onehot_out({batch, 2});
    for (std::size_t i = 0; i < batch; ++i) onehot_out.at(i, i % 2) = 1.0;
    Var zero = total_loss_term(Var::constant(pseudo), pseudo, cae, Var::constant(onehot_out),
                               targets, TaskKind::classification, 1.0, 1.0);
    CHECK(std::abs(zero.value().item()) < 1e-9);
}

TEST_CASE("total loss gradient wrt the extractor matches finite differences") {
    Rng rng(69);
    auto maps = toy_maps(10, 6, 126);
    CaeConfig cae_cfg;
    cae_cfg.hidden = 6;
    cae_cfg.code = 3;
    cae_cfg.epochs = 15;
    ConsistencyCae cae = pretrain_cae(maps, cae_cfg, 18);

    Mlp extractor({5, 7, 4}, Activation::relu, Activation::relu, rng);
    Mlp estimator({4, 6, 6}, Activation::relu, Activation::identity, rng);
    Mlp head({3, 5, 2}, Activation::relu, Activation::softmax, rng);

    Tensor features({3, 5});
    for (std::size_t i = 0; i < features.size(); ++i) features[i] = rng.uniform(-1, 1);
    Tensor pseudo({3, 6});
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 6; ++j) pseudo.at(i, j) = maps[i].values[j];
    }
    Tensor targets({3, 2});
    for (std::size_t i = 0; i < 3; ++i) targets.at(i, i % 2) = 1.0;

    std::vector<NamedParam> named;
    collect_params(extractor, "extractor", named);
    std::vector<Var> params;
    for (auto& p : named) params.push_back(p.var);

    auto result = gradcheck::compare(params, [&] {
        Var rho = sigmoid(estimator.forward(extractor.forward(Var::constant(features))));
        Var task_out = head.forward(cae.encode_frozen(rho));
        return total_loss_term(rho, pseudo, cae, task_out, targets, TaskKind::classification,
                               0.7, 1.3);
    });
    CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("estimator training honors lr zero and is deterministic") {
    Cohort cohort = small_cohort(201, 0.0);
    AdpenModel adpen = small_adpen(cohort, 301);
    auto folds = stratified_kfold(cohort, 4, 11);

    TaskSpec task{TaskKind::classification, {0, -1, -1, 1}, 2, RegressionTarget::mmse, -1};
    EstimatorConfig cfg;
    cfg.epochs = 5;
    cfg.cae.epochs = 10;
    cfg.cae.code = 8;
    cfg.lr_classification = 0.0;

    EstimatorModel frozen = train_estimator(cohort, folds[0], adpen, task, cfg, 71);
    EstimatorConfig zero_epochs = cfg;
    zero_epochs.epochs = 0;
    EstimatorModel init = train_estimator(cohort, folds[0], adpen, task, zero_epochs, 71);
    CHECK(frozen.extractor.layers[0].weights.value().values() ==
          init.extractor.layers[0].weights.value().values());

    cfg.lr_classification = 1e-4;
    cfg.epochs = 4;
    EstimatorModel a = train_estimator(cohort, folds[0], adpen, task, cfg, 72);
    EstimatorModel b = train_estimator(cohort, folds[0], adpen, task, cfg, 72);
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        CHECK(a.curve[i].total == b.curve[i].total);
        CHECK(a.curve[i].val_metric == b.curve[i].val_metric);
    }
}

TEST_CASE("estimator training keeps the cae bit-identical") {
    Cohort cohort = small_cohort(202, 0.0);
    AdpenModel adpen = small_adpen(cohort, 302);
    auto folds = stratified_kfold(cohort, 4, 12);

    TaskSpec task{TaskKind::classification, {0, 1, 2, 3}, 4, RegressionTarget::mmse, -1};
    EstimatorConfig cfg;
    cfg.epochs = 6;
    cfg.cae.epochs = 15;
    cfg.cae.code = 8;

    // pretrain separately to capture the frozen state
    const auto train_maps = pseudo_maps_for(adpen, cohort, folds[0].train, {});
    std::vector<LikelihoodMap> filtered;
    for (std::size_t i = 0; i < folds[0].train.size(); ++i) filtered.push_back(train_maps[i]);
    ConsistencyCae reference = pretrain_cae(filtered, cfg.cae, mix_seed(73, 11));

    EstimatorModel model = train_estimator(cohort, folds[0], adpen, task, cfg, 73);
    for (std::size_t l = 0; l < reference.encoder.layers.size(); ++l) {
        CHECK(model.cae.encoder.layers[l].weights.value().values() ==
              reference.encoder.layers[l].weights.value().values());
        CHECK(model.cae.encoder.layers[l].bias.value().values() ==
              reference.encoder.layers[l].bias.value().values());
    }
}

TEST_CASE("total loss decreases over the first training epochs") {
    Cohort cohort = small_cohort(205, 0.0);
    AdpenModel adpen = small_adpen(cohort, 305);
    auto folds = stratified_kfold(cohort, 4, 15);
    TaskSpec task{TaskKind::classification, {0, 1, 2, 3}, 4, RegressionTarget::mmse, -1};
    EstimatorConfig cfg;
    cfg.epochs = 20;
    cfg.cae.epochs = 20;
    cfg.cae.code = 8;
    EstimatorModel model = train_estimator(cohort, folds[0], adpen, task, cfg, 75);

    // non-strict decrease of 5-epoch window averages
    REQUIRE(model.curve.size() == 20);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < 4; ++w) {
        double mean = 0.0;
        for (std::size_t e = 0; e < 5; ++e) mean += model.curve[5 * w + e].total;
        mean /= 5.0;
        CHECK(mean <= prev);
        prev = mean;
    }
}

TEST_CASE("estimator rejects an untrained prototype model") {
    Cohort cohort = small_cohort(203);
    AdpenConfig cfg;
    cfg.grid_dims = {4, 4};
    cfg.epochs = 0;
    AdpenModel raw = train_adpen(cohort, {}, cfg, 1);
    raw.trained = false;
    auto folds = stratified_kfold(cohort, 4, 13);
    TaskSpec task{TaskKind::classification, {0, -1, -1, 1}, 2, RegressionTarget::mmse, -1};
    CHECK_THROWS_AS(train_estimator(cohort, folds[0], raw, task, {}, 1), Error);
}

TEST_CASE("estimator checkpoint round trip reproduces predictions") {
    Cohort cohort = small_cohort(204, 0.0);
    AdpenModel adpen = small_adpen(cohort, 304);
    auto folds = stratified_kfold(cohort, 4, 14);
    TaskSpec task{TaskKind::classification, {0, -1, -1, 1}, 2, RegressionTarget::mmse, -1};
    EstimatorConfig cfg;
    cfg.epochs = 5;
    cfg.cae.epochs = 10;
    cfg.cae.code = 8;
    EstimatorModel model = train_estimator(cohort, folds[0], adpen, task, cfg, 74);

    const std::string path = "estimator_checkpoint_test.json";
    save_estimator(model, path);
    EstimatorModel loaded = load_estimator(path);
    std::remove(path.c_str());

    for (std::size_t r : folds[0].test) {
        if (!task.sample_applies(cohort.subjects[r].record.stage)) continue;
        const auto& feats = cohort.subjects[r].imaging.features;
        CHECK(model.estimate(feats).values == loaded.estimate(feats).values);
        CHECK(model.predict_probs(feats) == loaded.predict_probs(feats));
    }
}
