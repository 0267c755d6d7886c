#include "protomap/adpen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "serialize.hpp"

namespace protomap {

namespace {

constexpr double kCoincidentPairEps = 1e-12;
constexpr double kLogEps = 1e-12;

Tensor clinical_batch(const Cohort& cohort, const std::vector<std::size_t>& rows) {
    const std::size_t width = cohort.subjects.front().clinical.size();
    Tensor batch({rows.size(), width});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& c = cohort.subjects[rows[i]].clinical;
        for (std::size_t j = 0; j < width; ++j) batch.at(i, j) = c[j];
    }
    return batch;
}

std::vector<int> batch_stages(const Cohort& cohort, const std::vector<std::size_t>& rows) {
    std::vector<int> stages(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        stages[i] = cohort.subjects[rows[i]].record.stage;
    }
    return stages;
}

// recon (stage cross-entropy + squared error on score/age) + KL, summed
Var vae_loss_from_encoded(const VaeModel& vae, const VaeModel::Encoded& enc,
                          const Tensor& c_batch) {
    const auto L = static_cast<std::size_t>(vae.num_stages);
    const std::size_t batch = c_batch.rows();

    Var decoded = vae.decode_batch(enc.h);
    Var stage_probs = slice_cols(decoded, 0, L);
    Var rest = slice_cols(decoded, L, L + 2);

    Tensor stage_targets({batch, L});
    Tensor rest_targets({batch, 2});
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t j = 0; j < L; ++j) stage_targets.at(n, j) = c_batch.at(n, j);
        rest_targets.at(n, 0) = c_batch.at(n, L);
        rest_targets.at(n, 1) = c_batch.at(n, L + 1);
    }

    Var ce = affine(sum_all(mul_const(log(affine(stage_probs, 1.0, kLogEps)), stage_targets)),
                    -1.0, 0.0);
    Var se = sum_all(square(sub(rest, Var::constant(rest_targets))));
    return add(add(ce, se), kl_divergence_term(enc.mu, enc.logvar));
}

std::vector<std::vector<std::size_t>> chunk_indices(const std::vector<std::size_t>& order,
                                                    int minibatches) {
    const std::size_t n = order.size();
    const auto b = static_cast<std::size_t>(minibatches);
    std::vector<std::vector<std::size_t>> chunks;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < b && pos < n; ++f) {
        const std::size_t take = n / b + (f < n % b ? 1 : 0);
        chunks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                            order.begin() + static_cast<std::ptrdiff_t>(pos + take));
        pos += take;
    }
    return chunks;
}

}  // namespace

// ---- prototype grid ----

Topology topology_from_string(const std::string& name) {
    if (name == "chain1d") return Topology::chain1d;
    if (name == "grid2d") return Topology::grid2d;
    if (name == "grid3d") return Topology::grid3d;
    raise(ErrorKind::parse, "unknown topology: " + name);
}

const char* topology_name(Topology t) {
    switch (t) {
        case Topology::chain1d: return "chain1d";
        case Topology::grid2d: return "grid2d";
        case Topology::grid3d: return "grid3d";
    }
    return "grid2d";
}

PrototypeGrid PrototypeGrid::create(Topology topology, std::vector<std::size_t> dims,
                                    std::size_t latent_dim) {
    const std::size_t expected =
        topology == Topology::chain1d ? 1u : topology == Topology::grid2d ? 2u : 3u;
    if (dims.size() != expected) {
        raise(ErrorKind::validation, "topology " + std::string(topology_name(topology)) +
                                         " needs " + std::to_string(expected) + " dimensions");
    }
    std::size_t k = 1;
    for (std::size_t d : dims) {
        if (d == 0) raise(ErrorKind::validation, "grid dimensions must be positive");
        k *= d;
    }
    PrototypeGrid grid;
    grid.topology = topology;
    grid.dims = std::move(dims);
    grid.prototypes = Var::parameter(Tensor({k, latent_dim}));
    return grid;
}

std::array<int, 3> PrototypeGrid::coordinate(std::size_t index) const {
    switch (topology) {
        case Topology::chain1d:
            return {static_cast<int>(index), 0, 0};
        case Topology::grid2d: {
            const std::size_t cols = dims[1];
            return {static_cast<int>(index / cols), static_cast<int>(index % cols), 0};
        }
        case Topology::grid3d: {
            const std::size_t plane = dims[1] * dims[2];
            const std::size_t rem = index % plane;
            return {static_cast<int>(index / plane), static_cast<int>(rem / dims[2]),
                    static_cast<int>(rem % dims[2])};
        }
    }
    return {0, 0, 0};
}

int PrototypeGrid::manhattan(std::size_t a, std::size_t b) const {
    const auto ca = coordinate(a);
    const auto cb = coordinate(b);
    return std::abs(ca[0] - cb[0]) + std::abs(ca[1] - cb[1]) + std::abs(ca[2] - cb[2]);
}

std::size_t bmu_index(const std::vector<double>& h, const PrototypeGrid& grid) {
    const Tensor& p = grid.prototypes.value();
    const std::size_t k = p.rows(), m = p.cols();
    if (h.size() != m) raise(ErrorKind::dimension, "bmu: latent dimension mismatch");
    if (k == 0) raise(ErrorKind::validation, "bmu: empty prototype grid");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
        double d = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double diff = h[i] - p.at(j, i);
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

Tensor topo_distances(std::size_t bmu, const PrototypeGrid& grid) {
    const std::size_t k = grid.num_prototypes();
    if (bmu >= k) raise(ErrorKind::invalid_argument, "topo_distances: BMU index out of range");
    Tensor delta({k});
    for (std::size_t j = 0; j < k; ++j) {
        delta[j] = static_cast<double>(grid.manhattan(bmu, j));
    }
    return delta;
}

double SomSchedule::radius() const {
    if (gamma_max <= 0.0 || gamma_min <= 0.0 || gamma_min > gamma_max) {
        raise(ErrorKind::validation, "som schedule needs 0 < gamma_min <= gamma_max");
    }
    if (total_steps < 1 || step < 0 || step > total_steps) {
        raise(ErrorKind::validation, "som schedule step outside [0, total]");
    }
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return gamma_max * std::pow(gamma_min / gamma_max, frac);
}

Tensor neighborhood_weights(const Tensor& delta, double gamma) {
    if (gamma <= 0.0) raise(ErrorKind::validation, "neighborhood radius must be positive");
    Tensor omega = delta;
    const double denom = 2.0 * gamma * gamma;
    for (std::size_t i = 0; i < omega.size(); ++i) {
        omega[i] = std::exp(-(delta[i] * delta[i]) / denom);
    }
    return omega;
}

// ---- VAE ----

VaeModel VaeModel::create(int num_stages, const std::vector<std::size_t>& hidden,
                          std::size_t latent_dim, Rng& rng) {
    if (hidden.empty()) raise(ErrorKind::validation, "encoder needs at least one hidden layer");
    VaeModel vae;
    vae.num_stages = num_stages;
    const auto input = static_cast<std::size_t>(num_stages) + 2;

    std::vector<std::size_t> enc_widths = {input};
    enc_widths.insert(enc_widths.end(), hidden.begin(), hidden.end());
    vae.encoder_trunk = Mlp(enc_widths, Activation::relu, Activation::relu, rng);
    vae.mu_head = DenseLayer(hidden.back(), latent_dim, Activation::identity, rng);
    vae.logvar_head = DenseLayer(hidden.back(), latent_dim, Activation::identity, rng);

    std::vector<std::size_t> dec_widths = {latent_dim};
    dec_widths.insert(dec_widths.end(), hidden.rbegin(), hidden.rend());
    vae.decoder_trunk = Mlp(dec_widths, Activation::relu, Activation::relu, rng);
    vae.decoder_out = DenseLayer(hidden.front(), input, Activation::identity, rng);
    return vae;
}

VaeModel::Encoded VaeModel::encode_batch(const Tensor& c_batch, const Tensor* noise) const {
    if (c_batch.ndim() != 2 || c_batch.cols() != input_dim()) {
        raise(ErrorKind::dimension, "encode: batch must be [n x " + std::to_string(input_dim()) +
                                        "], got " + c_batch.shape_string());
    }
    Encoded enc;
    Var trunk = encoder_trunk.forward(Var::constant(c_batch));
    enc.mu = mu_head.forward(trunk);
    enc.logvar = logvar_head.forward(trunk);
    if (noise != nullptr) {
        if (!noise->same_shape(enc.mu.value())) {
            raise(ErrorKind::dimension, "encode: noise shape mismatch");
        }
        Var sigma = exp(affine(enc.logvar, 0.5, 0.0));
        enc.h = add(enc.mu, mul_const(sigma, *noise));
    } else {
        enc.h = enc.mu;  // eps = 0
    }
    return enc;
}

Var VaeModel::decode_batch(const Var& h) const {
    const auto L = static_cast<std::size_t>(num_stages);
    Var y = decoder_out.forward(decoder_trunk.forward(h));
    Var stage = row_softmax(slice_cols(y, 0, L));
    Var rest = sigmoid(slice_cols(y, L, L + 2));
    return concat_cols(stage, rest);
}

LatentPoint VaeModel::encode_point(const std::vector<double>& c, Rng* noise_rng) const {
    Tensor batch({1, c.size()}, std::vector<double>(c));
    Tensor noise;
    const Tensor* noise_ptr = nullptr;
    if (noise_rng != nullptr) {
        noise = Tensor({1, latent_dim()});
        for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = noise_rng->normal();
        noise_ptr = &noise;
    }
    Encoded enc = encode_batch(batch, noise_ptr);
    LatentPoint point;
    point.mu = enc.mu.value().values();
    point.log_var = enc.logvar.value().values();
    point.h = enc.h.value().values();
    for (double v : point.h) {
        if (!std::isfinite(v)) raise(ErrorKind::training, "encoder produced non-finite latent");
    }
    return point;
}

std::vector<double> VaeModel::decode_point(const std::vector<double>& h) const {
    Tensor batch({1, h.size()}, std::vector<double>(h));
    Var decoded = decode_batch(Var::constant(batch));
    if (!decoded.value().all_finite()) {
        raise(ErrorKind::training, "decoder produced non-finite output");
    }
    return decoded.value().values();
}

void VaeModel::collect(std::vector<NamedParam>& out) {
    collect_params(encoder_trunk, "vae.encoder", out);
    collect_params(mu_head, "vae.mu_head", out);
    collect_params(logvar_head, "vae.logvar_head", out);
    collect_params(decoder_trunk, "vae.decoder", out);
    collect_params(decoder_out, "vae.decoder_out", out);
}

std::uint64_t VaeModel::parameter_checksum() const {
    std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a
    auto feed = [&hash](const Tensor& t) {
        for (double v : t.values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int b = 0; b < 8; ++b) {
                hash ^= (bits >> (8 * b)) & 0xffULL;
                hash *= 1099511628211ULL;
            }
        }
    };
    auto feed_layer = [&feed](const DenseLayer& l) {
        feed(l.weights.value());
        feed(l.bias.value());
    };
    for (const auto& l : encoder_trunk.layers) feed_layer(l);
    feed_layer(mu_head);
    feed_layer(logvar_head);
    for (const auto& l : decoder_trunk.layers) feed_layer(l);
    feed_layer(decoder_out);
    return hash;
}

double kl_divergence(const std::vector<double>& mu, const std::vector<double>& log_var) {
    if (mu.size() != log_var.size()) raise(ErrorKind::dimension, "kl: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        acc += mu[i] * mu[i] + std::exp(log_var[i]) - 1.0 - log_var[i];
    }
    return 0.5 * acc;
}

Var kl_divergence_term(const Var& mu, const Var& logvar) {
    if (!mu.value().same_shape(logvar.value())) {
        raise(ErrorKind::dimension, "kl: mu and logvar shapes differ");
    }
    Var sum = sub(add(square(mu), exp(logvar)), affine(logvar, 1.0, 1.0));
    return affine(sum_all(sum), 0.5, 0.0);
}

Var vae_loss_term(const VaeModel& vae, const Tensor& c_batch, const Tensor* noise) {
    if (c_batch.rows() == 0) raise(ErrorKind::invalid_argument, "vae loss on empty batch");
    return vae_loss_from_encoded(vae, vae.encode_batch(c_batch, noise), c_batch);
}

// ---- ordering ----

OrderingHead OrderingHead::create(std::size_t latent_dim, Rng& rng) {
    OrderingHead head;
    head.projection = DenseLayer(latent_dim, 1, Activation::identity, rng);
    return head;
}

double OrderingHead::project(const std::vector<double>& h) const {
    const Tensor& w = projection.weights.value();
    if (h.size() != w.cols()) raise(ErrorKind::dimension, "ordering head dimension mismatch");
    double acc = projection.bias.value()[0];
    for (std::size_t i = 0; i < h.size(); ++i) acc += w[i] * h[i];
    return acc;
}

Var ordering_loss_term(const OrderingHead& head, const Var& h_batch,
                       const std::vector<OrderingPair>& pairs, OrderingMode mode,
                       bool stopgrad_denominator, std::size_t* skipped) {
    const Tensor& hv = h_batch.value();
    std::vector<std::size_t> anchors, partners;
    std::size_t skip_count = 0;
    for (const auto& pair : pairs) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < hv.cols(); ++j) {
            const double d = hv.at(pair.anchor, j) - hv.at(pair.partner, j);
            d2 += d * d;
        }
        if (std::sqrt(d2) <= kCoincidentPairEps) {
            ++skip_count;  // coincident latents carry no ordering signal
            continue;
        }
        anchors.push_back(pair.anchor);
        partners.push_back(pair.partner);
    }
    if (skipped) *skipped = skip_count;
    if (anchors.empty()) return Var::constant(Tensor::scalar(0.0));

    Var ha = gather_rows(h_batch, anchors);
    Var hb = gather_rows(h_batch, partners);
    Var diff = sub(head.projection.forward(ha), head.projection.forward(hb));
    Var denom = rows_norm(sub(ha, hb));
    if (stopgrad_denominator) denom = Var::constant(denom.value());
    Var ratio = divide(diff, denom);
    return sum_all(mode == OrderingMode::sigmoid_surrogate ? sigmoid(ratio) : ratio);
}

Var som_loss_term(const Var& h_batch, const PrototypeGrid& grid, const SomSchedule& schedule) {
    const Tensor& hv = h_batch.value();
    if (hv.rows() == 0) raise(ErrorKind::invalid_argument, "som loss on empty batch");
    const std::size_t batch = hv.rows(), k = grid.num_prototypes();
    const double gamma = schedule.radius();

    Tensor omega({batch, k});
    std::vector<double> h_row(hv.cols());
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t j = 0; j < hv.cols(); ++j) h_row[j] = hv.at(n, j);
        const std::size_t bmu = bmu_index(h_row, grid);
        const Tensor weights = neighborhood_weights(topo_distances(bmu, grid), gamma);
        for (std::size_t j = 0; j < k; ++j) omega.at(n, j) = weights[j];
    }
    return weighted_sqdist(h_batch, grid.prototypes, omega);
}

// ---- evaluation ----

double quantization_error(const std::vector<std::vector<double>>& latents,
                          const PrototypeGrid& grid) {
    if (latents.empty()) raise(ErrorKind::invalid_argument, "quantization error of empty set");
    const Tensor& p = grid.prototypes.value();
    double acc = 0.0;
    for (const auto& h : latents) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < p.rows(); ++j) {
            double d = 0.0;
            for (std::size_t i = 0; i < p.cols(); ++i) {
                const double diff = h[i] - p.at(j, i);
                d += diff * diff;
            }
            best = std::min(best, d);
        }
        acc += best;
    }
    return acc / static_cast<double>(latents.size());
}

double topographic_error(const std::vector<std::vector<double>>& latents,
                         const PrototypeGrid& grid) {
    if (latents.empty()) raise(ErrorKind::invalid_argument, "topographic error of empty set");
    if (grid.num_prototypes() < 2) raise(ErrorKind::validation, "topographic error needs K >= 2");
    const Tensor& p = grid.prototypes.value();
    std::size_t bad = 0;
    for (const auto& h : latents) {
        std::size_t first = 0, second = 0;
        double d1 = std::numeric_limits<double>::infinity();
        double d2 = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < p.rows(); ++j) {
            double d = 0.0;
            for (std::size_t i = 0; i < p.cols(); ++i) {
                const double diff = h[i] - p.at(j, i);
                d += diff * diff;
            }
            if (d < d1) {
                d2 = d1;
                second = first;
                d1 = d;
                first = j;
            } else if (d < d2) {
                d2 = d;
                second = j;
            }
        }
        if (grid.manhattan(first, second) > 1) ++bad;
    }
    return static_cast<double>(bad) / static_cast<double>(latents.size());
}

// ---- training ----

std::size_t AdpenConfig::num_prototypes() const {
    std::size_t k = 1;
    for (std::size_t d : grid_dims) k *= d;
    return k;
}

double AdpenConfig::resolved_gamma_max() const {
    if (gamma_max > 0.0) return gamma_max;
    std::size_t largest = 1;
    for (std::size_t d : grid_dims) largest = std::max(largest, d);
    return static_cast<double>(largest) / 2.0;
}

void AdpenConfig::validate() const {
    const std::size_t expected =
        topology == Topology::chain1d ? 1u : topology == Topology::grid2d ? 2u : 3u;
    if (grid_dims.size() != expected) {
        raise(ErrorKind::validation, "grid dims must have " + std::to_string(expected) +
                                         " entries for " + topology_name(topology));
    }
    for (std::size_t d : grid_dims) {
        if (d == 0) raise(ErrorKind::validation, "grid dims must be positive");
    }
    if (latent_dim == 0) raise(ErrorKind::validation, "latent dim must be positive");
    if (encoder_hidden.empty()) raise(ErrorKind::validation, "encoder needs hidden layers");
    if (epochs < 0 || finetune_epochs < 0) raise(ErrorKind::validation, "epochs must be >= 0");
    if (minibatches < 1) raise(ErrorKind::validation, "minibatches must be >= 1");
    if (learning_rate < 0.0) raise(ErrorKind::validation, "learning rate must be >= 0");
    if (lambda_som < 0.0) raise(ErrorKind::validation, "lambda_som must be >= 0");
    if (gamma_min <= 0.0 || gamma_min > resolved_gamma_max()) {
        raise(ErrorKind::validation, "need 0 < gamma_min <= gamma_max");
    }
}

std::vector<std::vector<double>> AdpenModel::latents(
    const Cohort& cohort, const std::vector<std::size_t>& indices) const {
    std::vector<std::vector<double>> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) {
        out.push_back(vae.encode_point(cohort.subjects[idx].clinical, nullptr).h);
    }
    return out;
}

AdpenModel train_adpen(const Cohort& cohort, const std::vector<std::size_t>& indices,
                       const AdpenConfig& config, std::uint64_t seed) {
    config.validate();
    std::vector<std::size_t> rows = indices;
    if (rows.empty()) {
        rows.resize(cohort.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }
    if (rows.empty()) raise(ErrorKind::validation, "training set is empty");

    Rng init_rng(mix_seed(seed, 1));
    Rng proto_rng(mix_seed(seed, 2));
    Rng shuffle_rng(mix_seed(seed, 3));
    Rng noise_rng(mix_seed(seed, 4));
    Rng pair_rng(mix_seed(seed, 5));

    AdpenModel model;
    model.config = config;
    model.seed = seed;
    model.vae = VaeModel::create(cohort.num_stages(), config.encoder_hidden, config.latent_dim,
                                 init_rng);
    model.ordering_head = OrderingHead::create(config.latent_dim, init_rng);
    model.grid = PrototypeGrid::create(config.topology, config.grid_dims, config.latent_dim);

    const int b = std::min<int>(config.minibatches, static_cast<int>(rows.size()));
    const std::size_t k = config.num_prototypes();
    model.schedule.gamma_max = config.resolved_gamma_max();
    model.schedule.gamma_min = config.gamma_min;
    model.schedule.total_steps = std::max<std::int64_t>(1, static_cast<std::int64_t>(config.epochs) * b);
    model.schedule.step = 0;

    // data-anchored prototype init: encoded latents of a seeded mini-batch
    {
        std::vector<std::size_t> pool = rows;
        proto_rng.shuffle(pool);
        const std::size_t batch_size =
            (rows.size() + static_cast<std::size_t>(b) - 1) / static_cast<std::size_t>(b);
        pool.resize(std::min(pool.size(), std::max<std::size_t>(batch_size, 1)));
        Tensor& protos = model.grid.prototypes.mutable_value();
        for (std::size_t j = 0; j < k; ++j) {
            std::size_t pick;
            if (pool.size() >= k) {
                pick = pool[j];
            } else {
                pick = pool[static_cast<std::size_t>(
                    proto_rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
            }
            const auto latent =
                model.vae.encode_point(cohort.subjects[pick].clinical, nullptr).h;
            for (std::size_t m = 0; m < config.latent_dim; ++m) protos.at(j, m) = latent[m];
        }
    }

    std::vector<NamedParam> params;
    model.vae.collect(params);
    collect_params(model.ordering_head.projection, "ordering_head", params);
    params.push_back({model.grid.prototypes, "grid.prototypes"});
    std::vector<Var> param_vars;
    for (const auto& p : params) param_vars.push_back(p.var);

    Adam adam(config.adam);
    const LrSchedule lr_schedule{config.learning_rate, config.lr_decay_factor,
                                 config.lr_decay_interval};

    const int L = cohort.num_stages();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_schedule.at(epoch);
        std::vector<std::size_t> order = rows;
        shuffle_rng.shuffle(order);

        AdpenCurvePoint point;
        point.epoch = epoch;
        int steps = 0;
        for (const auto& chunk : chunk_indices(order, b)) {
            const Tensor c_batch = clinical_batch(cohort, chunk);
            Tensor noise({chunk.size(), config.latent_dim});
            for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = noise_rng.normal();

            zero_grad(param_vars);
            const auto enc = model.vae.encode_batch(c_batch, &noise);
            Var vae_term = vae_loss_from_encoded(model.vae, enc, c_batch);
            const auto stages = batch_stages(cohort, chunk);
            const auto pairs = sample_ordering_pairs(stages, L, pair_rng);
            Var order_term = ordering_loss_term(model.ordering_head, enc.h, pairs,
                                                config.ordering,
                                                config.ordering_stopgrad_denominator, nullptr);
            Var som_term = som_loss_term(enc.h, model.grid, model.schedule);
            Var total = add(add(vae_term, order_term), affine(som_term, config.lambda_som, 0.0));

            if (!std::isfinite(total.value().item())) {
                raise(ErrorKind::training,
                      "training diverged at epoch " + std::to_string(epoch) + " (vae=" +
                          std::to_string(vae_term.value().item()) + ", ordering=" +
                          std::to_string(order_term.value().item()) + ", som=" +
                          std::to_string(som_term.value().item()) + ")");
            }
            backward(total);
            adam.step(params, lr);
            if (model.schedule.step < model.schedule.total_steps) ++model.schedule.step;

            point.vae += vae_term.value().item();
            point.ordering += order_term.value().item();
            point.som += som_term.value().item();
            point.total += total.value().item();
            ++steps;
        }
        if (steps > 0) {
            point.vae /= steps;
            point.ordering /= steps;
            point.som /= steps;
            point.total /= steps;
        }
        model.curve.push_back(point);
    }

    model.trained = true;
    return model;
}

void finetune_som(AdpenModel& model, const Cohort& cohort,
                  const std::vector<std::size_t>& indices, int epochs) {
    if (!model.trained) raise(ErrorKind::usage, "finetune requires a trained model");
    if (epochs <= 0) return;
    std::vector<std::size_t> rows = indices;
    if (rows.empty()) {
        rows.resize(cohort.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }

    // frozen VAE: latents computed once
    const auto latents = model.latents(cohort, rows);
    const std::size_t m = model.grid.latent_dim();

    const int b = std::min<int>(model.config.minibatches, static_cast<int>(rows.size()));
    SomSchedule schedule;
    schedule.gamma_max = model.config.resolved_gamma_max();
    schedule.gamma_min = model.config.gamma_min;
    schedule.total_steps = std::max<std::int64_t>(1, static_cast<std::int64_t>(epochs) * b);
    schedule.step = 0;

    std::vector<NamedParam> params = {{model.grid.prototypes, "grid.prototypes"}};
    std::vector<Var> param_vars = {model.grid.prototypes};
    Adam adam(model.config.adam);
    Rng shuffle_rng(mix_seed(model.seed, 6));

    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (const auto& chunk : chunk_indices(order, b)) {
            Tensor h_batch({chunk.size(), m});
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                for (std::size_t j = 0; j < m; ++j) h_batch.at(i, j) = latents[chunk[i]][j];
            }
            zero_grad(param_vars);
            Var loss = som_loss_term(Var::constant(h_batch), model.grid, schedule);
            if (!std::isfinite(loss.value().item())) {
                raise(ErrorKind::training, "som fine-tune diverged at epoch " +
                                               std::to_string(epoch));
            }
            backward(loss);
            adam.step(params, model.config.learning_rate);
            if (schedule.step < schedule.total_steps) ++schedule.step;
        }
    }
    model.schedule = schedule;
}

// ---- checkpointing ----

void save_adpen(const AdpenModel& model, const std::string& path) {
    nlohmann::json j;
    j["format"] = "protomap-adpen";
    j["version"] = 1;
    j["seed"] = model.seed;
    j["trained"] = model.trained;
    j["num_stages"] = model.vae.num_stages;
    j["config"] = {
        {"encoder_hidden", model.config.encoder_hidden},
        {"latent_dim", model.config.latent_dim},
        {"topology", topology_name(model.config.topology)},
        {"grid_dims", model.config.grid_dims},
        {"gamma_max", model.config.gamma_max},
        {"gamma_min", model.config.gamma_min},
        {"lambda_som", model.config.lambda_som},
        {"epochs", model.config.epochs},
        {"minibatches", model.config.minibatches},
        {"learning_rate", model.config.learning_rate},
        {"lr_decay_factor", model.config.lr_decay_factor},
        {"lr_decay_interval", model.config.lr_decay_interval},
        {"finetune_epochs", model.config.finetune_epochs},
        {"ordering", model.config.ordering == OrderingMode::raw ? "raw" : "sigmoid"},
        {"ordering_stopgrad_denominator", model.config.ordering_stopgrad_denominator},
    };
    j["schedule"] = {
        {"gamma_max", model.schedule.gamma_max},
        {"gamma_min", model.schedule.gamma_min},
        {"total_steps", model.schedule.total_steps},
        {"step", model.schedule.step},
    };
    j["vae"] = {
        {"encoder_trunk", detail::mlp_to_json(model.vae.encoder_trunk)},
        {"mu_head", detail::layer_to_json(model.vae.mu_head)},
        {"logvar_head", detail::layer_to_json(model.vae.logvar_head)},
        {"decoder_trunk", detail::mlp_to_json(model.vae.decoder_trunk)},
        {"decoder_out", detail::layer_to_json(model.vae.decoder_out)},
    };
    j["ordering_head"] = detail::layer_to_json(model.ordering_head.projection);
    j["grid"] = {
        {"topology", topology_name(model.grid.topology)},
        {"dims", model.grid.dims},
        {"latent_dim", model.grid.latent_dim()},
        {"prototypes", model.grid.prototypes.value().values()},
    };
    detail::write_json_file(j, path);
}

AdpenModel load_adpen(const std::string& path) {
    const nlohmann::json j = detail::load_json_file(path);
    if (j.value("format", "") != "protomap-adpen") {
        raise(ErrorKind::parse, path + ": not a prototype-model checkpoint");
    }
    AdpenModel model;
    model.seed = j.at("seed").get<std::uint64_t>();
    model.trained = j.at("trained").get<bool>();

    const auto& jc = j.at("config");
    model.config.encoder_hidden = jc.at("encoder_hidden").get<std::vector<std::size_t>>();
    model.config.latent_dim = jc.at("latent_dim").get<std::size_t>();
    model.config.topology = topology_from_string(jc.at("topology").get<std::string>());
    model.config.grid_dims = jc.at("grid_dims").get<std::vector<std::size_t>>();
    model.config.gamma_max = jc.at("gamma_max").get<double>();
    model.config.gamma_min = jc.at("gamma_min").get<double>();
    model.config.lambda_som = jc.at("lambda_som").get<double>();
    model.config.epochs = jc.at("epochs").get<int>();
    model.config.minibatches = jc.at("minibatches").get<int>();
    model.config.learning_rate = jc.at("learning_rate").get<double>();
    model.config.lr_decay_factor = jc.at("lr_decay_factor").get<double>();
    model.config.lr_decay_interval = jc.at("lr_decay_interval").get<int>();
    model.config.finetune_epochs = jc.at("finetune_epochs").get<int>();
    model.config.ordering = jc.at("ordering").get<std::string>() == "raw"
                                ? OrderingMode::raw
                                : OrderingMode::sigmoid_surrogate;
    model.config.ordering_stopgrad_denominator =
        jc.at("ordering_stopgrad_denominator").get<bool>();

    const auto& js = j.at("schedule");
    model.schedule.gamma_max = js.at("gamma_max").get<double>();
    model.schedule.gamma_min = js.at("gamma_min").get<double>();
    model.schedule.total_steps = js.at("total_steps").get<std::int64_t>();
    model.schedule.step = js.at("step").get<std::int64_t>();

    const auto& jv = j.at("vae");
    model.vae.num_stages = j.at("num_stages").get<int>();
    model.vae.encoder_trunk = detail::mlp_from_json(jv.at("encoder_trunk"));
    model.vae.mu_head = detail::layer_from_json(jv.at("mu_head"));
    model.vae.logvar_head = detail::layer_from_json(jv.at("logvar_head"));
    model.vae.decoder_trunk = detail::mlp_from_json(jv.at("decoder_trunk"));
    model.vae.decoder_out = detail::layer_from_json(jv.at("decoder_out"));
    model.ordering_head.projection = detail::layer_from_json(j.at("ordering_head"));

    const auto& jg = j.at("grid");
    model.grid = PrototypeGrid::create(topology_from_string(jg.at("topology").get<std::string>()),
                                       jg.at("dims").get<std::vector<std::size_t>>(),
                                       jg.at("latent_dim").get<std::size_t>());
    auto protos = jg.at("prototypes").get<std::vector<double>>();
    if (protos.size() != model.grid.prototypes.value().size()) {
        raise(ErrorKind::parse, path + ": prototype matrix has wrong size");
    }
    model.grid.prototypes.mutable_value() =
        Tensor({model.grid.num_prototypes(), model.grid.latent_dim()}, std::move(protos));
    return model;
}

}  // namespace protomap
