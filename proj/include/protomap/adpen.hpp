#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "protomap/cohort.hpp"
#include "protomap/layers.hpp"
#include "protomap/optim.hpp"

namespace protomap {

// ---- prototype grid ----

enum class Topology { chain1d, grid2d, grid3d };

Topology topology_from_string(const std::string& name);
const char* topology_name(Topology t);

struct PrototypeGrid {
    Var prototypes;                  // [K x M] parameter
    Topology topology = Topology::grid2d;
    std::vector<std::size_t> dims;   // product == K

    static PrototypeGrid create(Topology topology, std::vector<std::size_t> dims,
                                std::size_t latent_dim);

    std::size_t num_prototypes() const { return prototypes.value().rows(); }
    std::size_t latent_dim() const { return prototypes.value().cols(); }
    std::array<int, 3> coordinate(std::size_t index) const;
    int manhattan(std::size_t a, std::size_t b) const;
};

// argmin_k |h - p_k|^2, ties broken by lowest index
std::size_t bmu_index(const std::vector<double>& h, const PrototypeGrid& grid);

// Manhattan topological distance from the BMU to every unit
Tensor topo_distances(std::size_t bmu, const PrototypeGrid& grid);

// Gamma = gamma_max * (gamma_min / gamma_max)^(t / T)
struct SomSchedule {
    double gamma_max = 10.0;
    double gamma_min = 0.5;
    std::int64_t total_steps = 1;
    std::int64_t step = 0;

    double radius() const;
};

// omega = exp(-delta^2 / (2 gamma^2))
Tensor neighborhood_weights(const Tensor& delta, double gamma);

// ---- VAE over composite clinical vectors ----

struct LatentPoint {
    std::vector<double> h;
    std::vector<double> mu;
    std::vector<double> log_var;
};

struct VaeModel {
    Mlp encoder_trunk;
    DenseLayer mu_head;
    DenseLayer logvar_head;
    Mlp decoder_trunk;
    DenseLayer decoder_out;  // identity; stage block gets softmax, score/age sigmoid
    int num_stages = 4;

    static VaeModel create(int num_stages, const std::vector<std::size_t>& hidden,
                           std::size_t latent_dim, Rng& rng);

    std::size_t latent_dim() const { return mu_head.out_dim(); }
    std::size_t input_dim() const { return encoder_trunk.in_dim(); }

    struct Encoded {
        Var mu;
        Var logvar;
        Var h;
    };
    // noise == nullptr means inference mode (eps = 0, h = mu)
    Encoded encode_batch(const Tensor& c_batch, const Tensor* noise) const;
    Var decode_batch(const Var& h) const;  // softmax stage block, sigmoid score/age

    LatentPoint encode_point(const std::vector<double>& c, Rng* noise_rng) const;
    std::vector<double> decode_point(const std::vector<double>& h) const;

    void collect(std::vector<NamedParam>& out);
    std::uint64_t parameter_checksum() const;  // bit-exact over all weights
};

// closed-form KL(N(mu, sigma^2) || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - log sigma^2)
double kl_divergence(const std::vector<double>& mu, const std::vector<double>& log_var);
Var kl_divergence_term(const Var& mu, const Var& logvar);

// negated ELBO summed over the batch: stage cross-entropy + squared error on
// score/age + KL term
Var vae_loss_term(const VaeModel& vae, const Tensor& c_batch, const Tensor* noise);

// ---- severity ordering head ----

enum class OrderingMode { sigmoid_surrogate, raw };

struct OrderingHead {
    DenseLayer projection;  // latent -> scalar

    static OrderingHead create(std::size_t latent_dim, Rng& rng);
    double project(const std::vector<double>& h) const;
};

// Bounded surrogate sum sigmoid((O(h_a) - O(h_b)) / |h_a - h_b|) over pairs of
// (stage l, stage l+1) latents; minimizing pushes the projection to grow with
// severity. Coincident pairs are skipped and counted.
Var ordering_loss_term(const OrderingHead& head, const Var& h_batch,
                       const std::vector<OrderingPair>& pairs, OrderingMode mode,
                       bool stopgrad_denominator, std::size_t* skipped);

// sum_n sum_k omega_n[k] |h_n - p_k|^2; omega from each sample's BMU at the
// schedule's current radius, treated as constant in the gradient
Var som_loss_term(const Var& h_batch, const PrototypeGrid& grid, const SomSchedule& schedule);

// ---- evaluation ----

double quantization_error(const std::vector<std::vector<double>>& latents,
                          const PrototypeGrid& grid);
double topographic_error(const std::vector<std::vector<double>>& latents,
                         const PrototypeGrid& grid);

// ---- joint training ----

struct AdpenConfig {
    std::vector<std::size_t> encoder_hidden = {10, 16, 8};
    std::size_t latent_dim = 3;
    Topology topology = Topology::grid2d;
    std::vector<std::size_t> grid_dims = {5, 20};
    double gamma_max = 0.0;  // <= 0 resolves to half the largest grid dimension
    double gamma_min = 0.5;
    double lambda_som = 0.01;
    int epochs = 1000;
    int minibatches = 4;
    double learning_rate = 1e-3;
    double lr_decay_factor = 1.0;
    int lr_decay_interval = 10;
    int finetune_epochs = 500;
    OrderingMode ordering = OrderingMode::sigmoid_surrogate;
    bool ordering_stopgrad_denominator = false;
    AdamConfig adam;

    std::size_t num_prototypes() const;
    double resolved_gamma_max() const;
    void validate() const;
};

struct AdpenCurvePoint {
    int epoch = 0;
    double total = 0.0;
    double vae = 0.0;
    double ordering = 0.0;
    double som = 0.0;
};

struct AdpenModel {
    VaeModel vae;
    OrderingHead ordering_head;
    PrototypeGrid grid;
    SomSchedule schedule;
    AdpenConfig config;
    std::uint64_t seed = 0;
    bool trained = false;
    std::vector<AdpenCurvePoint> curve;

    // inference-mode latents for the given cohort rows
    std::vector<std::vector<double>> latents(const Cohort& cohort,
                                             const std::vector<std::size_t>& indices) const;
};

// Jointly trains VAE, ordering head, and prototype grid on the given cohort
// rows (all rows when indices is empty).
AdpenModel train_adpen(const Cohort& cohort, const std::vector<std::size_t>& indices,
                       const AdpenConfig& config, std::uint64_t seed);

// Updates only the prototypes against frozen-VAE latents.
void finetune_som(AdpenModel& model, const Cohort& cohort,
                  const std::vector<std::size_t>& indices, int epochs);

void save_adpen(const AdpenModel& model, const std::string& path);
AdpenModel load_adpen(const std::string& path);

}  // namespace protomap
