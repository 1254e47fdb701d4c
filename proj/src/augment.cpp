#include "ate/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ate {

namespace {

// View of one sample inside a [B,1,F,M] batch; samples are contiguous.
template <class S>
TensorT<S> slice_sample(const TensorT<S>& batch, int b, int frames, int mels) {
    TensorT<S> t = TensorT<S>::zeros({frames, mels});
    const size_t n = static_cast<size_t>(frames) * mels;
    std::copy_n(batch.data.begin() + static_cast<int64_t>(b) * n, n, t.data.begin());
    return t;
}

template <class S>
void store_sample(TensorT<S>& batch, int b, const TensorT<S>& sample) {
    std::copy(sample.data.begin(), sample.data.end(),
              batch.data.begin() + static_cast<int64_t>(b) * sample.size());
}

std::vector<char> mask_grid(std::span<const MaskSpan> masks, int frames, int mels) {
    std::vector<char> grid(static_cast<size_t>(frames) * mels, 0);
    for (const auto& m : masks) {
        if (m.axis == MaskSpan::Axis::Freq) {
            for (int t = 0; t < frames; ++t)
                for (int c = m.start; c < m.start + m.width; ++c)
                    grid[static_cast<size_t>(t) * mels + c] = 1;
        } else {
            for (int t = m.start; t < m.start + m.width; ++t)
                for (int c = 0; c < mels; ++c) grid[static_cast<size_t>(t) * mels + c] = 1;
        }
    }
    return grid;
}

// Gradient of the batch entropy sum with respect to the input leaf. Using
// the sum (mean scaled by B) keeps each sample's gradient equal to its own
// entropy gradient regardless of batch size.
template <class S>
TensorT<S> input_entropy_gradient(const TensorT<S>& batch, const ModelConfig& config,
                                  const std::map<std::string, TensorT<S>>& params) {
    TapeT<S> tape;
    const NodeId x = tape.data_leaf(batch);
    const auto bind = model_forward(tape, config, params, x);
    const NodeId probs = tape.softmax(bind.logits);
    const NodeId root = tape.scale(tape.entropy(probs), batch.dim(0));
    const NodeId leaves[] = {x};
    return tape.backward(root, leaves).at(x);
}

template <class S>
TensorT<S> input_loss_gradient(const TensorT<S>& batch, const TensorT<S>& labels,
                               const ModelConfig& config,
                               const std::map<std::string, TensorT<S>>& params) {
    TapeT<S> tape;
    const NodeId x = tape.data_leaf(batch);
    const auto bind = model_forward(tape, config, params, x);
    const NodeId probs = tape.softmax(bind.logits);
    const NodeId loss = tape.cross_entropy(probs, labels);
    const NodeId leaves[] = {x};
    return tape.backward(loss, leaves).at(x);
}

SpecAugmentPolicy mix_geometry(const SpecMixPolicy& policy) {
    SpecAugmentPolicy geometry;
    geometry.n_freq_masks = policy.n_freq_masks;
    geometry.max_freq_width = policy.max_freq_width;
    geometry.n_time_masks = policy.n_time_masks;
    geometry.max_time_width = policy.max_time_width;
    return geometry;
}

} // namespace

std::string stage_name(const AugmentStage& stage) {
    struct Visitor {
        std::string operator()(const AtePolicy&) const { return "ate"; }
        std::string operator()(const SpecAugmentPolicy&) const { return "specaugment"; }
        std::string operator()(const SpecMixPolicy&) const { return "specmix"; }
        std::string operator()(const FgsmPolicy&) const { return "fgsm"; }
    };
    return std::visit(Visitor{}, stage);
}

std::string AugmentationPipeline::describe(const char* sep) const {
    if (stages.empty()) return "none";
    std::string out;
    for (size_t i = 0; i < stages.size(); ++i) {
        if (i) out += sep;
        out += stage_name(stages[i]);
    }
    return out;
}

double compute_epsilon(const DatasetStats& stats) { return stats.stddev; }

std::vector<MaskSpan> draw_masks(const SpecAugmentPolicy& policy, int frames, int mels, Rng& rng) {
    if (policy.n_freq_masks < 0 || policy.n_time_masks < 0)
        throw ConfigError("specaugment: mask counts must be >= 0");
    if (policy.n_freq_masks > 0 && (policy.max_freq_width < 0 || policy.max_freq_width > mels))
        throw ConfigError("specaugment: max_freq_width " + std::to_string(policy.max_freq_width) +
                          " out of range for n_mels " + std::to_string(mels));
    if (policy.n_time_masks > 0 && (policy.max_time_width < 0 || policy.max_time_width > frames))
        throw ConfigError("specaugment: max_time_width " + std::to_string(policy.max_time_width) +
                          " out of range for frames " + std::to_string(frames));

    std::vector<MaskSpan> masks;
    for (int i = 0; i < policy.n_freq_masks; ++i) {
        const int w = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(policy.max_freq_width) + 1));
        const int start = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(mels - w) + 1));
        masks.push_back({MaskSpan::Axis::Freq, start, w});
    }
    for (int i = 0; i < policy.n_time_masks; ++i) {
        const int w = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(policy.max_time_width) + 1));
        const int start = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(frames - w) + 1));
        masks.push_back({MaskSpan::Axis::Time, start, w});
    }
    return masks;
}

template <class S>
TensorT<S> spec_augment(const TensorT<S>& features, const SpecAugmentPolicy& policy, Rng& rng) {
    if (features.ndim() != 2)
        throw DimensionError("specaugment: want [frames, mels], got " + shape_str(features.shape));
    const int frames = features.dim(0), mels = features.dim(1);
    const auto masks = draw_masks(policy, frames, mels, rng);
    TensorT<S> out = features;
    const auto grid = mask_grid(masks, frames, mels);
    for (size_t i = 0; i < grid.size(); ++i)
        if (grid[i]) out.data[i] = static_cast<S>(policy.mask_value);
    return out;
}

template <class S>
SpecMixResultT<S> spec_mix(const TensorT<S>& x1, int y1, const TensorT<S>& x2, int y2,
                           int n_classes, const SpecMixPolicy& policy, Rng& rng) {
    if (!x1.same_shape(x2))
        throw DimensionError("specmix: shapes differ: " + shape_str(x1.shape) + " vs " +
                             shape_str(x2.shape));
    if (x1.ndim() != 2)
        throw DimensionError("specmix: want [frames, mels], got " + shape_str(x1.shape));
    if (y1 < 0 || y1 >= n_classes || y2 < 0 || y2 >= n_classes)
        throw IndexError("specmix: label out of range for n_classes=" + std::to_string(n_classes));
    const int frames = x1.dim(0), mels = x1.dim(1);
    const auto masks = draw_masks(mix_geometry(policy), frames, mels, rng);
    const auto grid = mask_grid(masks, frames, mels);

    SpecMixResultT<S> res;
    res.features = x1;
    int64_t replaced = 0;
    for (size_t i = 0; i < grid.size(); ++i)
        if (grid[i]) {
            res.features.data[i] = x2.data[i];
            ++replaced;
        }
    res.lambda = static_cast<double>(replaced) / static_cast<double>(grid.size());
    res.label.assign(static_cast<size_t>(n_classes), S(0));
    res.label[static_cast<size_t>(y1)] += static_cast<S>(1.0 - res.lambda);
    res.label[static_cast<size_t>(y2)] += static_cast<S>(res.lambda);
    return res;
}

template <class S>
TensorT<S> ate_augment(const TensorT<S>& batch, const ModelConfig& config,
                       const std::map<std::string, TensorT<S>>& params, float epsilon) {
    if (epsilon < 0) throw ConfigError("ate: epsilon must be >= 0");
    if (epsilon == 0.0f) return batch;  // clip collapses to zero
    const S eps = static_cast<S>(epsilon);
    const TensorT<S> grad = input_entropy_gradient(batch, config, params);
    TensorT<S> out = batch;
    for (int64_t i = 0; i < out.size(); ++i) {
        const S base = out[i];
        S moved = base + std::clamp(grad[i], -eps, eps);
        // Addition rounding can overshoot the clip bound by an ulp; pull the
        // result back until the realized difference honors it exactly.
        while (std::abs(moved - base) > eps) moved = std::nextafter(moved, base);
        out[i] = moved;
    }
    return out;
}

template <class S>
TensorT<S> fgsm_augment(const TensorT<S>& batch, const TensorT<S>& labels,
                        const ModelConfig& config,
                        const std::map<std::string, TensorT<S>>& params, float epsilon) {
    if (epsilon < 0) throw ConfigError("fgsm: epsilon must be >= 0");
    if (epsilon == 0.0f) return batch;
    const S eps = static_cast<S>(epsilon);
    const TensorT<S> grad = input_loss_gradient(batch, labels, config, params);
    TensorT<S> out = batch;
    for (int64_t i = 0; i < out.size(); ++i) {
        const S g = grad[i];
        if (g > 0)
            out[i] += eps;
        else if (g < 0)
            out[i] -= eps;
    }
    return out;
}

template <class S>
PipelineResultT<S> apply_pipeline(const AugmentationPipeline& pipeline, const TensorT<S>& batch,
                                  const TensorT<S>& labels, const ModelConfig& config,
                                  const std::map<std::string, TensorT<S>>& params, Rng& rng) {
    if (batch.ndim() != 4)
        throw DimensionError("pipeline: want batch [B,1,frames,mels], got " + shape_str(batch.shape));
    if (labels.ndim() != 2 || labels.dim(0) != batch.dim(0))
        throw DimensionError("pipeline: labels " + shape_str(labels.shape) + " do not match batch " +
                             shape_str(batch.shape));
    PipelineResultT<S> res{batch, labels, false};
    if (pipeline.empty()) return res;
    if (!rng.bernoulli(pipeline.p_aug)) return res;

    res.applied = true;
    const int B = batch.dim(0);
    const int frames = batch.dim(2), mels = batch.dim(3);

    for (const auto& stage : pipeline.stages) {
        if (const auto* ate = std::get_if<AtePolicy>(&stage)) {
            res.batch = ate_augment(res.batch, config, params, ate->epsilon);
        } else if (const auto* fgsm = std::get_if<FgsmPolicy>(&stage)) {
            res.batch = fgsm_augment(res.batch, res.labels, config, params, fgsm->epsilon);
        } else if (const auto* sa = std::get_if<SpecAugmentPolicy>(&stage)) {
            for (int b = 0; b < B; ++b) {
                TensorT<S> sample = slice_sample(res.batch, b, frames, mels);
                store_sample(res.batch, b, spec_augment(sample, *sa, rng));
            }
        } else if (const auto* sm = std::get_if<SpecMixPolicy>(&stage)) {
            // Donors come from the stage-entry snapshot so mixing order
            // within the batch does not matter.
            const TensorT<S> snapshot = res.batch;
            const TensorT<S> label_snapshot = res.labels;
            const SpecAugmentPolicy geometry = mix_geometry(*sm);
            for (int b = 0; b < B; ++b) {
                int donor = b;
                if (B > 1) {
                    donor = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(B) - 1));
                    if (donor >= b) ++donor;
                }
                const auto masks = draw_masks(geometry, frames, mels, rng);
                const auto grid = mask_grid(masks, frames, mels);
                TensorT<S> sample = slice_sample(snapshot, b, frames, mels);
                const TensorT<S> donor_sample = slice_sample(snapshot, donor, frames, mels);
                int64_t replaced = 0;
                for (size_t i = 0; i < grid.size(); ++i)
                    if (grid[i]) {
                        sample.data[i] = donor_sample.data[i];
                        ++replaced;
                    }
                const double lambda =
                    static_cast<double>(replaced) / static_cast<double>(grid.size());
                store_sample(res.batch, b, sample);
                for (int c = 0; c < res.labels.dim(1); ++c)
                    res.labels.at2(b, c) =
                        static_cast<S>((1.0 - lambda) * label_snapshot.at2(b, c) +
                                       lambda * label_snapshot.at2(donor, c));
            }
        }
    }
    return res;
}

template TensorT<float> spec_augment(const TensorT<float>&, const SpecAugmentPolicy&, Rng&);
template TensorT<double> spec_augment(const TensorT<double>&, const SpecAugmentPolicy&, Rng&);
template SpecMixResultT<float> spec_mix(const TensorT<float>&, int, const TensorT<float>&, int,
                                        int, const SpecMixPolicy&, Rng&);
template SpecMixResultT<double> spec_mix(const TensorT<double>&, int, const TensorT<double>&, int,
                                         int, const SpecMixPolicy&, Rng&);
template TensorT<float> ate_augment(const TensorT<float>&, const ModelConfig&,
                                    const std::map<std::string, TensorT<float>>&, float);
template TensorT<double> ate_augment(const TensorT<double>&, const ModelConfig&,
                                     const std::map<std::string, TensorT<double>>&, float);
template TensorT<float> fgsm_augment(const TensorT<float>&, const TensorT<float>&,
                                     const ModelConfig&,
                                     const std::map<std::string, TensorT<float>>&, float);
template TensorT<double> fgsm_augment(const TensorT<double>&, const TensorT<double>&,
                                      const ModelConfig&,
                                      const std::map<std::string, TensorT<double>>&, float);
template PipelineResultT<float> apply_pipeline(const AugmentationPipeline&, const TensorT<float>&,
                                               const TensorT<float>&, const ModelConfig&,
                                               const std::map<std::string, TensorT<float>>&, Rng&);
template PipelineResultT<double> apply_pipeline(const AugmentationPipeline&,
                                                const TensorT<double>&, const TensorT<double>&,
                                                const ModelConfig&,
                                                const std::map<std::string, TensorT<double>>&,
                                                Rng&);

} // namespace ate
