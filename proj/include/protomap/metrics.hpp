#pragma once

#include <vector>

namespace protomap {

// Probability that a random positive outranks a random negative, ties at 1/2.
// Labels are 0/1; raises a metric error unless both classes are present.
double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// Unweighted one-vs-rest mean of binary AUCs over all classes; probs[n][c].
double roc_auc_ovr(const std::vector<std::vector<double>>& probs,
                   const std::vector<int>& labels, int num_classes);

// Mean per-class recall; every class in [0, num_classes) must appear.
double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                         int num_classes);

// Support-weighted mean per-class F1; a class without true or predicted
// positives contributes F1 = 0.
double f1_weighted(const std::vector<int>& predictions, const std::vector<int>& labels,
                   int num_classes);

struct RegressionMetrics {
    double rmse = 0.0;
    double r2 = 0.0;
};

// r2 = 1 - SSres / SStot; constant targets make r2 undefined.
RegressionMetrics rmse_r2(const std::vector<double>& predictions,
                          const std::vector<double>& targets);

}  // namespace protomap
