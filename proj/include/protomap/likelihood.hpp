#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protomap/adpen.hpp"

namespace protomap {

enum class MapKind { pseudo, estimated };

// K similarity scores against the prototype grid, tagged with the grid's
// topology so downstream rendering can reshape them.
struct LikelihoodMap {
    std::vector<double> values;  // in [0, 1] after normalization
    Topology topology = Topology::grid2d;
    std::vector<std::size_t> dims;
    MapKind kind = MapKind::pseudo;
};

void save_map_json(const LikelihoodMap& map, const std::string& path);
LikelihoodMap load_map_json(const std::string& path);

// Softening temperature for the distance softmax. The variance policy uses
// the population standard deviation of the K distances, which makes the map
// invariant to a uniform rescaling of the latent space.
struct TemperaturePolicy {
    enum class Kind { variance, fixed } kind = Kind::variance;
    double fixed_value = 1.0;
};

double resolve_temperature(const std::vector<double>& distances);

// (v - min) / (max - min); constant vectors pass through unchanged
std::vector<double> minmax_normalize(const std::vector<double>& v);

// softmax of -|h - p_k|^2 / gamma over prototypes, then min-max normalized
LikelihoodMap pseudo_map(const std::vector<double>& h, const PrototypeGrid& grid,
                         const TemperaturePolicy& policy = {});

// pseudo maps for a set of cohort rows, computed once from inference-mode
// latents of a trained model
std::vector<LikelihoodMap> pseudo_maps_for(const AdpenModel& model, const Cohort& cohort,
                                           const std::vector<std::size_t>& rows,
                                           const TemperaturePolicy& policy = {});

// ---- consistency autoencoder over likelihood maps ----

struct CaeConfig {
    std::size_t hidden = 32;
    std::size_t code = 16;
    int epochs = 300;
    int minibatches = 8;
    double learning_rate = 1e-3;
    AdamConfig adam;
};

struct ConsistencyCae {
    Mlp encoder;  // K -> hidden -> code
    Mlp decoder;  // code -> hidden -> K (sigmoid output)
    bool trained = false;

    std::size_t map_dim() const { return encoder.in_dim(); }
    std::size_t code_dim() const { return encoder.out_dim(); }

    std::vector<double> encode(const std::vector<double>& map) const;
    std::vector<double> reconstruct(const std::vector<double>& map) const;

    // forward through frozen copies of the encoder weights; gradients reach
    // the input but never the autoencoder parameters
    Var encode_frozen(const Var& maps) const;

    double reconstruction_mse(const std::vector<LikelihoodMap>& maps) const;
};

ConsistencyCae pretrain_cae(const std::vector<LikelihoodMap>& maps, const CaeConfig& config,
                            std::uint64_t seed);

// ---- imaging-side estimator ----

enum class TaskKind { classification, regression };
enum class RegressionTarget { mmse, age };

struct TaskSpec {
    TaskKind kind = TaskKind::classification;
    // classification: per-stage class label, -1 excludes the stage
    std::vector<int> stage_to_class = {0, 1, 2, 3};
    int num_classes = 4;
    // regression
    RegressionTarget target = RegressionTarget::mmse;
    int restrict_stage = -1;  // regression-only filter, -1 keeps all stages

    bool sample_applies(int stage) const;
    void validate(int num_stages) const;
};

struct EstimatorConfig {
    std::size_t extractor_hidden = 128;
    std::size_t feature_dim = 64;  // z
    std::size_t estimator_hidden = 256;
    CaeConfig cae;
    int epochs = 200;
    int minibatches = 10;
    double lr_classification = 1e-4;
    double lr_regression = 0.01;
    double lr_decay_factor = 0.98;
    int lr_decay_interval = 10;
    double lambda_cons = 1.0;
    double lambda_task = 1.0;
    std::size_t task_hidden = 64;
    AdamConfig adam;

    void validate() const;
};

struct EstimatorCurvePoint {
    int epoch = 0;
    double total = 0.0;
    double est = 0.0;
    double cons = 0.0;
    double task = 0.0;
    double val_metric = 0.0;  // accuracy (classification) or mse (regression)
};

struct EstimatorModel {
    Mlp extractor;      // imaging -> z
    Mlp estimator_net;  // z -> K logits (sigmoid applied on top)
    Mlp task_head;      // cae code -> classes / scalar
    ConsistencyCae cae;
    TaskSpec task;
    EstimatorConfig config;
    Topology topology = Topology::grid2d;
    std::vector<std::size_t> dims;
    bool trained = false;
    std::uint64_t seed = 0;
    std::vector<EstimatorCurvePoint> curve;
    int best_epoch = -1;
    double best_val_metric = 0.0;

    LikelihoodMap estimate(const std::vector<double>& imaging_features) const;
    std::vector<double> predict_probs(const std::vector<double>& imaging_features) const;
    double predict_value(const std::vector<double>& imaging_features) const;
};

// ---- losses ----

// |a - b|_1 + |a - b|_2^2 for a single map pair
double est_loss(const std::vector<double>& pseudo, const std::vector<double>& estimated);

// same penalty in the frozen CAE code space
double cons_loss(const ConsistencyCae& cae, const std::vector<double>& pseudo,
                 const std::vector<double>& estimated);

// cross-entropy of the predicted distribution at the true label
double task_loss_classification(const std::vector<double>& probs, int label);
double task_loss_regression(double predicted, double target);

// mean over the batch of est + lambda2 * cons + lambda3 * task for a ready
// forward pass; exposed for tests via the training path below
Var total_loss_term(const Var& estimated_maps, const Tensor& pseudo_maps,
                    const ConsistencyCae& cae, const Var& task_output,
                    const Tensor& task_targets, TaskKind kind, double lambda_cons,
                    double lambda_task);

EstimatorModel train_estimator(const Cohort& cohort, const FoldSplit& split,
                               const AdpenModel& adpen, const TaskSpec& task,
                               const EstimatorConfig& config, std::uint64_t seed,
                               const TemperaturePolicy& policy = {});

void save_estimator(const EstimatorModel& model, const std::string& path);
EstimatorModel load_estimator(const std::string& path);

}  // namespace protomap
