#include "protomap/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "protomap/log.hpp"

#include "serialize.hpp"

namespace protomap {

int PrototypicalState::stage() const {
    return static_cast<int>(std::max_element(stage_probs.begin(), stage_probs.end()) -
                            stage_probs.begin());
}

std::vector<PrototypicalState> decode_prototypes(const VaeModel& vae, const PrototypeGrid& grid) {
    const auto L = static_cast<std::size_t>(vae.num_stages);
    std::vector<PrototypicalState> states;
    states.reserve(grid.num_prototypes());
    const Tensor& p = grid.prototypes.value();
    for (std::size_t k = 0; k < p.rows(); ++k) {
        std::vector<double> latent(p.cols());
        for (std::size_t j = 0; j < p.cols(); ++j) latent[j] = p.at(k, j);
        const auto decoded = vae.decode_point(latent);
        PrototypicalState state;
        state.stage_probs.assign(decoded.begin(), decoded.begin() + static_cast<std::ptrdiff_t>(L));
        state.mmse01 = decoded[L];
        state.age01 = decoded[L + 1];
        states.push_back(std::move(state));
    }
    return states;
}

ExplainableMap build_clinical_map(const LikelihoodMap& estimated,
                                  const std::vector<PrototypicalState>& states) {
    if (estimated.values.size() != states.size()) {
        raise(ErrorKind::validation, "map length " + std::to_string(estimated.values.size()) +
                                         " does not match " + std::to_string(states.size()) +
                                         " decoded states");
    }
    ExplainableMap map;
    map.topology = estimated.topology;
    map.dims = estimated.dims;
    map.entries.reserve(states.size());
    for (std::size_t k = 0; k < states.size(); ++k) {
        map.entries.push_back({estimated.values[k], states[k]});
    }
    return map;
}

void save_explainable_map(const ExplainableMap& map, const std::string& path) {
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t k = 0; k < map.entries.size(); ++k) {
        const auto& e = map.entries[k];
        entries.push_back({
            {"prototype", k},
            {"score", e.score},
            {"stage_probs", e.state.stage_probs},
            {"mmse", e.state.mmse01 * 30.0},
            {"age", e.state.age01 * 100.0},
        });
    }
    nlohmann::json j = {
        {"topology", topology_name(map.topology)},
        {"shape", map.dims},
        {"entries", entries},
    };
    detail::write_json_file(j, path);
}

ExplainableMap load_explainable_map(const std::string& path) {
    const nlohmann::json j = detail::load_json_file(path);
    ExplainableMap map;
    map.topology = topology_from_string(j.at("topology").get<std::string>());
    map.dims = j.at("shape").get<std::vector<std::size_t>>();
    for (const auto& item : j.at("entries")) {
        ExplainableEntry e;
        e.score = item.at("score").get<double>();
        e.state.stage_probs = item.at("stage_probs").get<std::vector<double>>();
        e.state.mmse01 = item.at("mmse").get<double>() / 30.0;
        e.state.age01 = item.at("age").get<double>() / 100.0;
        map.entries.push_back(std::move(e));
    }
    std::size_t k = 1;
    for (std::size_t d : map.dims) k *= d;
    if (map.entries.size() != k) {
        raise(ErrorKind::validation, path + ": entry count does not match shape");
    }
    return map;
}

PrototypicalSampleSet retrieve_nearest_samples(const PrototypeGrid& grid,
                                               const std::vector<std::vector<double>>& latents,
                                               const std::vector<std::size_t>& latent_rows,
                                               const Cohort& cohort, std::size_t n) {
    if (latents.size() != latent_rows.size()) {
        raise(ErrorKind::dimension, "latents and row ids must align");
    }
    if (latents.empty()) raise(ErrorKind::validation, "retrieval needs cached training latents");
    if (n == 0) raise(ErrorKind::invalid_argument, "retrieval needs n >= 1");
    if (latents.size() < n) {
        warn("only " + std::to_string(latents.size()) + " samples available for top-" +
             std::to_string(n) + " retrieval, using all");
    }

    const Tensor& p = grid.prototypes.value();
    const std::size_t take = std::min(n, latents.size());
    const std::size_t feat_dim = cohort.imaging_dim();

    PrototypicalSampleSet set;
    set.requested = n;
    set.per_prototype.resize(p.rows());

    std::vector<std::pair<double, std::size_t>> scored(latents.size());
    for (std::size_t k = 0; k < p.rows(); ++k) {
        for (std::size_t i = 0; i < latents.size(); ++i) {
            double d = 0.0;
            for (std::size_t j = 0; j < p.cols(); ++j) {
                const double diff = latents[i][j] - p.at(k, j);
                d += diff * diff;
            }
            scored[i] = {d, latent_rows[i]};  // ties by lowest cohort row id
        }
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                          scored.end());

        auto& out = set.per_prototype[k];
        out.sample_rows.reserve(take);
        out.mean_features.assign(feat_dim, 0.0);
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t row = scored[i].second;
            out.sample_rows.push_back(row);
            const auto& feats = cohort.subjects[row].imaging.features;
            for (std::size_t j = 0; j < feat_dim; ++j) out.mean_features[j] += feats[j];
        }
        for (auto& v : out.mean_features) v /= static_cast<double>(take);
    }
    return set;
}

std::vector<std::vector<std::size_t>> select_stage_representatives(
    const std::vector<PrototypicalState>& states, double query_age_years,
    std::size_t per_stage) {
    if (states.empty()) raise(ErrorKind::validation, "no decoded states to select from");
    if (!(query_age_years > 0.0 && query_age_years <= 100.0)) {
        raise(ErrorKind::validation, "query age outside (0, 100]");
    }
    const std::size_t num_stages = states.front().stage_probs.size();

    std::vector<std::vector<std::size_t>> by_stage(num_stages);
    for (std::size_t k = 0; k < states.size(); ++k) {
        by_stage[static_cast<std::size_t>(states[k].stage())].push_back(k);
    }

    std::vector<std::vector<std::size_t>> selected(num_stages);
    for (std::size_t s = 0; s < num_stages; ++s) {
        auto& candidates = by_stage[s];
        if (candidates.size() < per_stage) {
            warn("stage " + std::to_string(s) + " has only " +
                 std::to_string(candidates.size()) + " prototypes, requested " +
                 std::to_string(per_stage));
        }
        std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
            const double da = std::abs(states[a].age01 * 100.0 - query_age_years);
            const double db = std::abs(states[b].age01 * 100.0 - query_age_years);
            if (da != db) return da < db;
            return a < b;  // deterministic under age ties
        });
        candidates.resize(std::min(per_stage, candidates.size()));
        selected[s] = candidates;
    }
    return selected;
}

std::vector<double> morph_difference(const std::vector<double>& query,
                                     const std::vector<double>& prototype_mean,
                                     double threshold) {
    if (query.size() != prototype_mean.size()) {
        raise(ErrorKind::validation, "morphological difference needs matching dimensions");
    }
    std::vector<double> diff(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
        const double d = query[i] - prototype_mean[i];
        diff[i] = std::abs(d) < threshold ? 0.0 : d;
    }
    return diff;
}

double default_morph_threshold(const std::vector<std::vector<double>>& diffs,
                               double percentile) {
    std::vector<double> magnitudes;
    for (const auto& d : diffs) {
        for (double v : d) magnitudes.push_back(std::abs(v));
    }
    if (magnitudes.empty()) raise(ErrorKind::invalid_argument, "no differences to threshold");
    std::sort(magnitudes.begin(), magnitudes.end());
    // nearest-rank percentile
    const auto rank = static_cast<std::size_t>(
        std::ceil(percentile * static_cast<double>(magnitudes.size())));
    return magnitudes[std::min(magnitudes.size() - 1, rank == 0 ? 0 : rank - 1)];
}

void save_morph_diffs_csv(const std::vector<std::size_t>& prototype_ids,
                          const std::vector<std::vector<double>>& diffs,
                          const std::string& path) {
    if (prototype_ids.size() != diffs.size()) {
        raise(ErrorKind::dimension, "prototype ids and difference rows must align");
    }
    std::ofstream out(path);
    if (!out) raise(ErrorKind::io, "cannot open " + path + " for writing");
    out << "prototype";
    if (!diffs.empty()) {
        for (std::size_t j = 0; j < diffs.front().size(); ++j) out << ",d" << j;
    }
    out << "\n";
    out.precision(17);
    for (std::size_t i = 0; i < diffs.size(); ++i) {
        out << prototype_ids[i];
        for (double v : diffs[i]) out << "," << v;
        out << "\n";
    }
    if (!out) raise(ErrorKind::io, "failed writing " + path);
}

}  // namespace protomap
