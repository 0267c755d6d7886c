#pragma once

#include <string>
#include <vector>

#include "protomap/likelihood.hpp"

namespace protomap {

// Decoded clinical state of one prototype: stage distribution plus the
// normalized score and age (denormalizable to 0-30 and years).
struct PrototypicalState {
    std::vector<double> stage_probs;
    double mmse01 = 0.0;
    double age01 = 0.0;

    int stage() const;  // argmax of the stage block
};

std::vector<PrototypicalState> decode_prototypes(const VaeModel& vae, const PrototypeGrid& grid);

struct ExplainableEntry {
    double score = 0.0;  // estimated likelihood for this prototype
    PrototypicalState state;
};

struct ExplainableMap {
    std::vector<ExplainableEntry> entries;
    Topology topology = Topology::grid2d;
    std::vector<std::size_t> dims;
};

// zips the estimated map with the decoded prototype states in grid order
ExplainableMap build_clinical_map(const LikelihoodMap& estimated,
                                  const std::vector<PrototypicalState>& states);

// export with mmse on the 0-30 scale and age in years
void save_explainable_map(const ExplainableMap& map, const std::string& path);
ExplainableMap load_explainable_map(const std::string& path);

// Per prototype: the n nearest training samples in latent space (ties by
// lowest id) and the element-wise mean of their imaging features.
struct PrototypicalSamples {
    std::vector<std::size_t> sample_rows;   // cohort row ids, nearest first
    std::vector<double> mean_features;
};

struct PrototypicalSampleSet {
    std::vector<PrototypicalSamples> per_prototype;
    std::size_t requested = 3;
};

PrototypicalSampleSet retrieve_nearest_samples(const PrototypeGrid& grid,
                                               const std::vector<std::vector<double>>& latents,
                                               const std::vector<std::size_t>& latent_rows,
                                               const Cohort& cohort, std::size_t n = 3);

// Per stage, the prototypes (up to per_stage) whose decoded age is nearest
// the query age; ties by lower prototype index.
std::vector<std::vector<std::size_t>> select_stage_representatives(
    const std::vector<PrototypicalState>& states, double query_age_years,
    std::size_t per_stage = 3);

// signed difference X - Xbar with entries below the magnitude threshold zeroed
std::vector<double> morph_difference(const std::vector<double>& query,
                                     const std::vector<double>& prototype_mean, double threshold);

// magnitude percentile over a set of raw difference maps (nearest-rank)
double default_morph_threshold(const std::vector<std::vector<double>>& diffs,
                               double percentile = 0.60);

// CSV matrix: one row per selected prototype, one column per feature dimension
void save_morph_diffs_csv(const std::vector<std::size_t>& prototype_ids,
                          const std::vector<std::vector<double>>& diffs,
                          const std::string& path);

}  // namespace protomap
