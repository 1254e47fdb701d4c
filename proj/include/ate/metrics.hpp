#pragma once

#include <functional>
#include <span>
#include <vector>

namespace ate {

struct ScoredExample {
    double score = 0.0;  // positive-class probability in [0, 1]
    int label = 0;       // 1 = positive (keyword), 0 = negative
};

struct OperatingPoint {
    double threshold = 0.0;
    double far = 0.0;  // fraction of negatives accepted
    double frr = 0.0;  // fraction of positives rejected
};

struct FoldResult {
    std::vector<double> fold_accuracy;
    double mean = 0.0;
    double stddev = 0.0;  // population std
};

double accuracy(std::span<const int> predictions, std::span<const int> truths);

/// Threshold sweep over all distinct scores plus -inf/+inf sentinels,
/// accept iff score >= threshold; points ordered by ascending threshold.
std::vector<OperatingPoint> far_frr_curve(std::span<const ScoredExample> examples);

/// Lowest FAR among points with FRR <= target; if no point qualifies, the
/// FAR of the point with minimal FRR.
double far_at_fixed_frr(std::span<const OperatingPoint> curve, double target_frr);

/// For each fold i: run_fold(train indices, test indices) -> accuracy on
/// fold i. Callers supply the training closure; folds run sequentially.
FoldResult kfold_cross_validate(
    std::span<const int> fold_ids, int k,
    const std::function<double(const std::vector<int>&, const std::vector<int>&)>& run_fold);

} // namespace ate
