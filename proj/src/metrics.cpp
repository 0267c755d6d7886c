#include "protomap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protomap/error.hpp"

namespace protomap {

double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        raise(ErrorKind::invalid_argument, "auc: scores and labels must align and be non-empty");
    }
    std::size_t pos = 0, neg = 0;
    for (int label : labels) {
        if (label == 1) ++pos;
        else if (label == 0) ++neg;
        else raise(ErrorKind::invalid_argument, "auc: labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0) {
        raise(ErrorKind::metric_undefined, "auc needs both a positive and a negative sample");
    }

    // midrank formulation; ties contribute exactly 1/2 per crossing pair
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t t = i; t <= j; ++t) {
            if (labels[order[t]] == 1) pos_rank_sum += midrank;
        }
        i = j + 1;
    }
    const double p = static_cast<double>(pos);
    const double n = static_cast<double>(neg);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double roc_auc_ovr(const std::vector<std::vector<double>>& probs,
                   const std::vector<int>& labels, int num_classes) {
    if (probs.size() != labels.size() || probs.empty()) {
        raise(ErrorKind::invalid_argument, "ovr auc: probs and labels must align");
    }
    if (num_classes < 2) raise(ErrorKind::invalid_argument, "ovr auc needs >= 2 classes");
    double acc = 0.0;
    std::vector<double> scores(labels.size());
    std::vector<int> binary(labels.size());
    for (int c = 0; c < num_classes; ++c) {
        for (std::size_t n = 0; n < labels.size(); ++n) {
            scores[n] = probs[n][static_cast<std::size_t>(c)];
            binary[n] = labels[n] == c ? 1 : 0;
        }
        acc += roc_auc_binary(scores, binary);
    }
    return acc / static_cast<double>(num_classes);
}

double balanced_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                         int num_classes) {
    if (predictions.size() != labels.size() || predictions.empty()) {
        raise(ErrorKind::invalid_argument, "balanced accuracy: inputs must align");
    }
    std::vector<std::size_t> support(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::size_t> hits(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const int y = labels[n];
        if (y < 0 || y >= num_classes) raise(ErrorKind::invalid_argument, "label out of range");
        ++support[static_cast<std::size_t>(y)];
        if (predictions[n] == y) ++hits[static_cast<std::size_t>(y)];
    }
    double acc = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        if (support[static_cast<std::size_t>(c)] == 0) {
            raise(ErrorKind::metric_undefined,
                  "balanced accuracy undefined: class " + std::to_string(c) + " missing");
        }
        acc += static_cast<double>(hits[static_cast<std::size_t>(c)]) /
               static_cast<double>(support[static_cast<std::size_t>(c)]);
    }
    return acc / static_cast<double>(num_classes);
}

double f1_weighted(const std::vector<int>& predictions, const std::vector<int>& labels,
                   int num_classes) {
    if (predictions.size() != labels.size() || predictions.empty()) {
        raise(ErrorKind::invalid_argument, "f1: inputs must align");
    }
    double weighted = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        std::size_t tp = 0, fp = 0, fn = 0, support = 0;
        for (std::size_t n = 0; n < labels.size(); ++n) {
            const bool is_true = labels[n] == c;
            const bool is_pred = predictions[n] == c;
            if (is_true) ++support;
            if (is_true && is_pred) ++tp;
            if (!is_true && is_pred) ++fp;
            if (is_true && !is_pred) ++fn;
        }
        double f1 = 0.0;  // zero when the class has no true or predicted positives
        if (2 * tp + fp + fn > 0) {
            f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        }
        weighted += f1 * static_cast<double>(support);
    }
    return weighted / static_cast<double>(labels.size());
}

RegressionMetrics rmse_r2(const std::vector<double>& predictions,
                          const std::vector<double>& targets) {
    if (predictions.size() != targets.size() || predictions.empty()) {
        raise(ErrorKind::invalid_argument, "rmse/r2: inputs must align and be non-empty");
    }
    const double n = static_cast<double>(targets.size());
    double mean = 0.0;
    for (double t : targets) mean += t;
    mean /= n;

    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double err = predictions[i] - targets[i];
        ss_res += err * err;
        ss_tot += (targets[i] - mean) * (targets[i] - mean);
    }
    if (ss_tot < 1e-300) {
        raise(ErrorKind::metric_undefined, "r2 undefined for constant targets");
    }
    return {std::sqrt(ss_res / n), 1.0 - ss_res / ss_tot};
}

}  // namespace protomap
