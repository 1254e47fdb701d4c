#include "ate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ate/error.hpp"

namespace ate {

double accuracy(std::span<const int> predictions, std::span<const int> truths) {
    if (predictions.empty()) throw EmptyInputError("accuracy: empty input");
    if (predictions.size() != truths.size())
        throw DimensionError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                             std::to_string(truths.size()) + " truths");
    int64_t correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == truths[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::vector<OperatingPoint> far_frr_curve(std::span<const ScoredExample> examples) {
    int64_t n_pos = 0, n_neg = 0;
    for (const auto& e : examples) (e.label != 0 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw ValidationError("far/frr: need at least one positive and one negative, got " +
                              std::to_string(n_pos) + " positives / " + std::to_string(n_neg) +
                              " negatives");

    // Sorted copy; prefix counts give FP/FN per threshold in one sweep.
    std::vector<ScoredExample> sorted(examples.begin(), examples.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const ScoredExample& a, const ScoredExample& b) { return a.score < b.score; });

    std::vector<double> thresholds;
    thresholds.push_back(-std::numeric_limits<double>::infinity());
    for (const auto& e : sorted)
        if (thresholds.size() == 1 || thresholds.back() != e.score) thresholds.push_back(e.score);
    thresholds.push_back(std::numeric_limits<double>::infinity());

    std::vector<OperatingPoint> curve;
    curve.reserve(thresholds.size());
    size_t i = 0;         // first example with score >= threshold
    int64_t fn_below = 0; // positives with score < threshold
    int64_t neg_below = 0;
    for (double t : thresholds) {
        while (i < sorted.size() && sorted[i].score < t) {
            (sorted[i].label != 0 ? fn_below : neg_below)++;
            ++i;
        }
        OperatingPoint p;
        p.threshold = t;
        p.far = static_cast<double>(n_neg - neg_below) / static_cast<double>(n_neg);
        p.frr = static_cast<double>(fn_below) / static_cast<double>(n_pos);
        curve.push_back(p);
    }
    return curve;
}

double far_at_fixed_frr(std::span<const OperatingPoint> curve, double target_frr) {
    if (curve.empty()) throw EmptyInputError("far_at_fixed_frr: empty curve");
    double best_far = -1.0;
    for (const auto& p : curve)
        if (p.frr <= target_frr && (best_far < 0 || p.far < best_far)) best_far = p.far;
    if (best_far >= 0) return best_far;
    const auto min_frr = std::min_element(
        curve.begin(), curve.end(),
        [](const OperatingPoint& a, const OperatingPoint& b) { return a.frr < b.frr; });
    return min_frr->far;
}

FoldResult kfold_cross_validate(
    std::span<const int> fold_ids, int k,
    const std::function<double(const std::vector<int>&, const std::vector<int>&)>& run_fold) {
    if (k < 2) throw ConfigError("kfold: k must be >= 2");
    if (fold_ids.empty()) throw EmptyInputError("kfold: empty dataset");
    for (size_t i = 0; i < fold_ids.size(); ++i)
        if (fold_ids[i] < 0 || fold_ids[i] >= k)
            throw ValidationError("kfold: sample " + std::to_string(i) + " has fold " +
                                  std::to_string(fold_ids[i]) + " outside [0, " + std::to_string(k) +
                                  ")");

    FoldResult res;
    for (int fold = 0; fold < k; ++fold) {
        std::vector<int> train_idx, test_idx;
        for (size_t i = 0; i < fold_ids.size(); ++i)
            (fold_ids[i] == fold ? test_idx : train_idx).push_back(static_cast<int>(i));
        if (test_idx.empty()) throw ValidationError("kfold: fold " + std::to_string(fold) + " is empty");
        res.fold_accuracy.push_back(run_fold(train_idx, test_idx));
    }
    double sum = 0.0;
    for (double a : res.fold_accuracy) sum += a;
    res.mean = sum / static_cast<double>(k);
    double sq = 0.0;
    for (double a : res.fold_accuracy) sq += (a - res.mean) * (a - res.mean);
    res.stddev = std::sqrt(sq / static_cast<double>(k));
    return res;
}

} // namespace ate
