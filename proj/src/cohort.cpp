#include "protomap/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "protomap/error.hpp"

namespace protomap {

namespace {

void check_record(const ClinicalRecord& r, int num_stages) {
    if (r.stage < 0 || r.stage >= num_stages) {
        raise(ErrorKind::validation, "stage index " + std::to_string(r.stage) +
                                         " outside [0, " + std::to_string(num_stages) + ")");
    }
    if (r.mmse_raw < 0 || r.mmse_raw > 30) {
        raise(ErrorKind::validation, "mmse " + std::to_string(r.mmse_raw) + " outside [0, 30]");
    }
    if (!(r.age_years > 0.0 && r.age_years <= 100.0)) {
        raise(ErrorKind::validation, "age " + std::to_string(r.age_years) + " outside (0, 100]");
    }
}

}  // namespace

std::vector<double> normalize_clinical(const ClinicalRecord& record, int num_stages) {
    check_record(record, num_stages);
    std::vector<double> c(static_cast<std::size_t>(num_stages) + 2, 0.0);
    c[static_cast<std::size_t>(record.stage)] = 1.0;
    c[static_cast<std::size_t>(num_stages)] = record.mmse_raw / 30.0;
    c[static_cast<std::size_t>(num_stages) + 1] = record.age_years / 100.0;
    return c;
}

ClinicalRecord denormalize_clinical(const std::vector<double>& composite, int num_stages) {
    if (composite.size() != static_cast<std::size_t>(num_stages) + 2) {
        raise(ErrorKind::dimension, "composite clinical vector has wrong length");
    }
    ClinicalRecord r;
    int hot = -1;
    for (int i = 0; i < num_stages; ++i) {
        if (composite[static_cast<std::size_t>(i)] == 1.0) {
            if (hot >= 0) raise(ErrorKind::validation, "stage block is not one-hot");
            hot = i;
        } else if (composite[static_cast<std::size_t>(i)] != 0.0) {
            raise(ErrorKind::validation, "stage block is not one-hot");
        }
    }
    if (hot < 0) raise(ErrorKind::validation, "stage block is not one-hot");
    r.stage = hot;
    r.mmse_raw = static_cast<int>(std::lround(composite[static_cast<std::size_t>(num_stages)] * 30.0));
    r.age_years = composite[static_cast<std::size_t>(num_stages) + 1] * 100.0;
    check_record(r, num_stages);
    return r;
}

void SyntheticSpec::validate() const {
    const std::size_t L = stage_names.size();
    if (L < 2) raise(ErrorKind::validation, "need at least two stages");
    if (stage_counts.size() != L || mmse_means.size() != L || mmse_stddevs.size() != L ||
        age_means.size() != L || age_stddevs.size() != L) {
        raise(ErrorKind::validation, "per-stage arrays must all have length " + std::to_string(L));
    }
    for (int count : stage_counts) {
        if (count <= 0) raise(ErrorKind::validation, "every stage needs a positive sample count");
    }
    for (std::size_t i = 1; i < L; ++i) {
        if (!(mmse_means[i] < mmse_means[i - 1])) {
            raise(ErrorKind::validation, "mmse means must strictly decrease across stages");
        }
    }
    if (imaging_noise < 0.0) raise(ErrorKind::validation, "imaging noise must be >= 0");
    if (imaging_dim == 0) raise(ErrorKind::validation, "imaging dim must be positive");
}

std::size_t Cohort::imaging_dim() const {
    return subjects.empty() ? 0 : subjects.front().imaging.features.size();
}

std::vector<std::size_t> Cohort::per_stage_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_stages()), 0);
    for (const auto& s : subjects) counts[static_cast<std::size_t>(s.record.stage)]++;
    return counts;
}

Cohort generate_cohort(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int L = spec.num_stages();

    Cohort cohort;
    cohort.spec = spec;
    cohort.seed = seed;

    // clinical-to-imaging projection, fixed per cohort
    Rng map_rng(mix_seed(seed, 0xfeed));
    const std::size_t in_dim = static_cast<std::size_t>(L) + 2;
    std::vector<double> projection(spec.imaging_dim * in_dim);
    for (auto& a : projection) a = map_rng.normal();

    Rng sample_rng(mix_seed(seed, 0x5a3d));
    Rng noise_rng(mix_seed(seed, 0x0153));

    int subject_id = 0;
    for (int stage = 0; stage < L; ++stage) {
        const auto s = static_cast<std::size_t>(stage);
        for (int i = 0; i < spec.stage_counts[s]; ++i) {
            ClinicalRecord rec;
            rec.stage = stage;
            const double mmse = sample_rng.normal(spec.mmse_means[s], spec.mmse_stddevs[s]);
            rec.mmse_raw = std::clamp(static_cast<int>(std::lround(mmse)), 0, 30);
            rec.age_years =
                std::clamp(sample_rng.normal(spec.age_means[s], spec.age_stddevs[s]), 1.0, 100.0);

            Subject subj;
            subj.record = rec;
            subj.clinical = normalize_clinical(rec, L);
            subj.imaging.subject_id = subject_id;
            subj.imaging.acquisition_index = 0;
            subj.imaging.features.resize(spec.imaging_dim);
            for (std::size_t d = 0; d < spec.imaging_dim; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < in_dim; ++j) {
                    acc += projection[d * in_dim + j] * subj.clinical[j];
                }
                double v = std::tanh(acc);
                if (spec.imaging_noise > 0.0) v += spec.imaging_noise * noise_rng.normal();
                subj.imaging.features[d] = v;
            }
            cohort.subjects.push_back(std::move(subj));
            ++subject_id;
        }
    }
    return cohort;
}

void save_cohort_ndjson(const Cohort& cohort, const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorKind::io, "cannot open " + path + " for writing");
    for (const auto& s : cohort.subjects) {
        nlohmann::json rec = {
            {"subject_id", s.imaging.subject_id},
            {"stage", s.record.stage},
            {"mmse", s.record.mmse_raw},
            {"age", s.record.age_years},
            {"acquisition_index", s.imaging.acquisition_index},
            {"features", s.imaging.features},
        };
        out << rec.dump() << "\n";
    }
    if (!out) raise(ErrorKind::io, "failed writing " + path);
}

Cohort load_cohort_ndjson(const std::string& path, int num_stages) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::io, "cannot open " + path);

    Cohort cohort;
    while (cohort.spec.stage_names.size() < static_cast<std::size_t>(num_stages)) {
        cohort.spec.stage_names.push_back("S" + std::to_string(cohort.spec.stage_names.size()));
    }
    cohort.spec.stage_names.resize(static_cast<std::size_t>(num_stages));

    std::string line;
    std::size_t line_no = 0;
    std::size_t feature_dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorKind::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        for (const char* key : {"subject_id", "stage", "mmse", "age", "acquisition_index", "features"}) {
            if (!rec.contains(key)) {
                raise(ErrorKind::validation,
                      path + ":" + std::to_string(line_no) + ": missing field '" + key + "'");
            }
        }
        Subject subj;
        subj.record.stage = rec["stage"].get<int>();
        subj.record.mmse_raw = rec["mmse"].get<int>();
        subj.record.age_years = rec["age"].get<double>();
        subj.imaging.subject_id = rec["subject_id"].get<int>();
        subj.imaging.acquisition_index = rec["acquisition_index"].get<int>();
        subj.imaging.features = rec["features"].get<std::vector<double>>();
        if (feature_dim == 0) feature_dim = subj.imaging.features.size();
        if (subj.imaging.features.size() != feature_dim || feature_dim == 0) {
            raise(ErrorKind::validation,
                  path + ":" + std::to_string(line_no) + ": inconsistent feature dimension");
        }
        for (double v : subj.imaging.features) {
            if (!std::isfinite(v)) {
                raise(ErrorKind::validation,
                      path + ":" + std::to_string(line_no) + ": non-finite feature value");
            }
        }
        subj.clinical = normalize_clinical(subj.record, num_stages);  // validates ranges
        cohort.subjects.push_back(std::move(subj));
    }
    cohort.spec.imaging_dim = feature_dim;
    return cohort;
}

std::vector<FoldSplit> stratified_kfold(const Cohort& cohort, int k, std::uint64_t seed) {
    if (k < 2) raise(ErrorKind::validation, "k-fold needs k >= 2");
    const int L = cohort.num_stages();

    std::vector<std::vector<std::size_t>> by_stage(static_cast<std::size_t>(L));
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        by_stage[static_cast<std::size_t>(cohort.subjects[i].record.stage)].push_back(i);
    }
    for (int s = 0; s < L; ++s) {
        const auto& idx = by_stage[static_cast<std::size_t>(s)];
        if (!idx.empty() && idx.size() < static_cast<std::size_t>(k)) {
            raise(ErrorKind::validation, "stage " + std::to_string(s) + " has " +
                                             std::to_string(idx.size()) + " samples, need >= " +
                                             std::to_string(k) + " for " + std::to_string(k) +
                                             "-fold");
        }
    }

    Rng rng(mix_seed(seed, 0xf01d));
    // deal shuffled per-stage indices into k test buckets, sizes differing by <= 1
    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(k));
    for (auto& idx : by_stage) {
        rng.shuffle(idx);
        const std::size_t n = idx.size();
        std::size_t pos = 0;
        for (int f = 0; f < k; ++f) {
            const std::size_t take = n / static_cast<std::size_t>(k) +
                                     (static_cast<std::size_t>(f) < n % static_cast<std::size_t>(k) ? 1 : 0);
            for (std::size_t j = 0; j < take; ++j) {
                buckets[static_cast<std::size_t>(f)].push_back(idx[pos++]);
            }
        }
    }
    for (auto& b : buckets) std::sort(b.begin(), b.end());

    std::vector<FoldSplit> folds;
    folds.reserve(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        FoldSplit split;
        split.test = buckets[static_cast<std::size_t>(f)];
        if (k >= 3) {
            const int vf = (f + 1) % k;
            split.validation = buckets[static_cast<std::size_t>(vf)];
            for (int g = 0; g < k; ++g) {
                if (g == f || g == vf) continue;
                const auto& b = buckets[static_cast<std::size_t>(g)];
                split.train.insert(split.train.end(), b.begin(), b.end());
            }
        } else {
            // k = 2: split the non-test bucket per stage so training never empties
            std::vector<std::vector<std::size_t>> other(static_cast<std::size_t>(L));
            for (std::size_t idx : buckets[static_cast<std::size_t>(1 - f)]) {
                other[static_cast<std::size_t>(cohort.subjects[idx].record.stage)].push_back(idx);
            }
            for (const auto& group : other) {
                const std::size_t train_take = (group.size() + 1) / 2;
                for (std::size_t i = 0; i < group.size(); ++i) {
                    (i < train_take ? split.train : split.validation).push_back(group[i]);
                }
            }
            std::sort(split.validation.begin(), split.validation.end());
        }
        std::sort(split.train.begin(), split.train.end());
        folds.push_back(std::move(split));
    }
    return folds;
}

std::vector<OrderingPair> sample_ordering_pairs(const std::vector<int>& batch_stages,
                                                int num_stages, Rng& rng, std::size_t* skipped) {
    std::vector<std::vector<std::size_t>> by_stage(static_cast<std::size_t>(num_stages));
    for (std::size_t i = 0; i < batch_stages.size(); ++i) {
        const int s = batch_stages[i];
        if (s < 0 || s >= num_stages) raise(ErrorKind::validation, "batch stage out of range");
        by_stage[static_cast<std::size_t>(s)].push_back(i);
    }

    std::vector<OrderingPair> pairs;
    std::size_t skip_count = 0;
    for (std::size_t i = 0; i < batch_stages.size(); ++i) {
        const int next = batch_stages[i] + 1;
        if (next >= num_stages) continue;  // final stage has no successor
        const auto& candidates = by_stage[static_cast<std::size_t>(next)];
        if (candidates.empty()) {
            ++skip_count;
            continue;
        }
        const auto pick = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(candidates.size()) - 1));
        pairs.push_back({i, candidates[pick]});
    }
    if (skipped) *skipped = skip_count;
    return pairs;
}

}  // namespace protomap
