#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "ate/dsp.hpp"
#include "ate/model.hpp"
#include "ate/rng.hpp"
#include "ate/tensor.hpp"

namespace ate {

/// Entropy-ascent augmentation: x + clip(grad_x entropy, -epsilon, epsilon).
struct AtePolicy {
    float epsilon = 1.0f;  // feature units; 1.0 on normalized features
};

/// Loss-gradient sign step, provided as a comparison mode.
struct FgsmPolicy {
    float epsilon = 0.1f;
};

struct SpecAugmentPolicy {
    int n_freq_masks = 1;
    int max_freq_width = 8;   // mel bins
    int n_time_masks = 1;
    int max_time_width = 20;  // frames
    float mask_value = 0.0f;  // normalized domain
};

/// SpecAugment mask geometry, but masked cells come from another batch
/// sample and labels mix by the replaced fraction.
struct SpecMixPolicy {
    int n_freq_masks = 1;
    int max_freq_width = 8;
    int n_time_masks = 1;
    int max_time_width = 20;
};

using AugmentStage = std::variant<AtePolicy, SpecAugmentPolicy, SpecMixPolicy, FgsmPolicy>;

std::string stage_name(const AugmentStage& stage);

/// Ordered stage list with one Bernoulli gate per batch. [S, A] and [A, S]
/// are distinct pipelines.
struct AugmentationPipeline {
    std::vector<AugmentStage> stages;
    float p_aug = 0.5f;

    bool empty() const { return stages.empty(); }
    std::string describe(const char* sep = " -> ") const;
};

/// Clip threshold from training-split statistics: the raw-unit std, or 1.0
/// when the pipeline runs on normalized features.
double compute_epsilon(const DatasetStats& stats);

/// One rectangular mask on a [frames, mels] matrix.
struct MaskSpan {
    enum class Axis { Freq, Time };
    Axis axis;
    int start = 0;
    int width = 0;
};

/// Width ~ U{0..max_width}, start ~ U{0..extent-width}; freq masks first.
std::vector<MaskSpan> draw_masks(const SpecAugmentPolicy& policy, int frames, int mels, Rng& rng);

/// Zero (mask_value) the drawn spans of one clip's features. Untouched cells
/// are bit-identical to the input.
template <class S>
TensorT<S> spec_augment(const TensorT<S>& features, const SpecAugmentPolicy& policy, Rng& rng);

template <class S>
struct SpecMixResultT {
    TensorT<S> features;
    std::vector<S> label;  // soft label over classes, sums to 1
    double lambda = 0.0;   // replaced-cell fraction
};

using SpecMixResult = SpecMixResultT<float>;

/// Replace masked regions of x1 by the corresponding cells of x2;
/// label = (1-lambda)*onehot(y1) + lambda*onehot(y2).
template <class S>
SpecMixResultT<S> spec_mix(const TensorT<S>& x1, int y1, const TensorT<S>& x2, int y2,
                           int n_classes, const SpecMixPolicy& policy, Rng& rng);

/// One forward pass, entropy backward to the input, elementwise clip of the
/// gradient to [-epsilon, epsilon], added to x. The result is detached: it
/// re-enters the update pass as a fresh data leaf. Labels are unchanged.
template <class S>
TensorT<S> ate_augment(const TensorT<S>& batch, const ModelConfig& config,
                       const std::map<std::string, TensorT<S>>& params, float epsilon);

/// epsilon * sign(grad_x loss) added to x. `labels` are soft rows [B, N].
template <class S>
TensorT<S> fgsm_augment(const TensorT<S>& batch, const TensorT<S>& labels,
                        const ModelConfig& config,
                        const std::map<std::string, TensorT<S>>& params, float epsilon);

template <class S>
struct PipelineResultT {
    TensorT<S> batch;   // [B, 1, frames, mels]
    TensorT<S> labels;  // soft labels [B, n_classes]
    bool applied = false;
};

using PipelineResult = PipelineResultT<float>;

/// Draw the gate once; if it fires, run every stage in order, each consuming
/// the previous stage's output. ATE/FGSM stages use the current parameters.
template <class S>
PipelineResultT<S> apply_pipeline(const AugmentationPipeline& pipeline, const TensorT<S>& batch,
                                  const TensorT<S>& labels, const ModelConfig& config,
                                  const std::map<std::string, TensorT<S>>& params, Rng& rng);

} // namespace ate
