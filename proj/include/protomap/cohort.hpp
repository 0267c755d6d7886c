#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protomap/rng.hpp"

namespace protomap {

// Clinical stages are ordered by severity; index 0 is the healthiest.
struct ClinicalRecord {
    int stage = 0;
    int mmse_raw = 30;       // 0 (severe) .. 30 (healthy)
    double age_years = 70.0; // (0, 100]
};

// c = [one-hot stage, mmse/30, age/100], length num_stages + 2
std::vector<double> normalize_clinical(const ClinicalRecord& record, int num_stages);
ClinicalRecord denormalize_clinical(const std::vector<double>& composite, int num_stages);

struct ImagingSample {
    std::vector<double> features;
    int subject_id = 0;
    int acquisition_index = 0;
};

struct Subject {
    ClinicalRecord record;
    std::vector<double> clinical;  // composite clinical vector
    ImagingSample imaging;
};

// Synthetic cohort description. Imaging features are tanh(A c) plus Gaussian
// noise of stddev imaging_noise, with A drawn once per cohort from the seed,
// so with zero noise the features are an exact function of the clinical state.
struct SyntheticSpec {
    std::vector<std::string> stage_names = {"CN", "sMCI", "pMCI", "AD"};
    std::vector<int> stage_counts = {100, 100, 100, 100};
    std::vector<double> mmse_means = {29.0, 27.0, 25.0, 21.0};  // strictly decreasing
    std::vector<double> mmse_stddevs = {1.0, 1.0, 1.0, 1.0};
    std::vector<double> age_means = {72.0, 73.0, 74.0, 75.0};
    std::vector<double> age_stddevs = {8.0, 8.0, 8.0, 8.0};
    std::size_t imaging_dim = 64;
    double imaging_noise = 0.05;

    int num_stages() const { return static_cast<int>(stage_names.size()); }
    void validate() const;
};

struct Cohort {
    SyntheticSpec spec;
    std::uint64_t seed = 0;
    std::vector<Subject> subjects;

    int num_stages() const { return spec.num_stages(); }
    std::size_t size() const { return subjects.size(); }
    std::size_t imaging_dim() const;
    std::vector<std::size_t> per_stage_counts() const;
};

Cohort generate_cohort(const SyntheticSpec& spec, std::uint64_t seed);

// newline-delimited JSON, one record per subject
void save_cohort_ndjson(const Cohort& cohort, const std::string& path);
Cohort load_cohort_ndjson(const std::string& path, int num_stages = 4);

struct FoldSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

// Stratified k-fold: test folds partition the cohort with per-stage counts
// within one sample of count/k; validation is the next test fold around.
std::vector<FoldSplit> stratified_kfold(const Cohort& cohort, int k, std::uint64_t seed);

struct OrderingPair {
    std::size_t anchor;   // index into the batch, stage l
    std::size_t partner;  // index into the batch, stage l + 1
};

// For every batch element whose stage has a successor, draw one partner of
// the next stage uniformly from the batch. Anchors without any available
// partner are skipped (and reported through skipped when non-null).
std::vector<OrderingPair> sample_ordering_pairs(const std::vector<int>& batch_stages,
                                                int num_stages, Rng& rng,
                                                std::size_t* skipped = nullptr);

}  // namespace protomap
