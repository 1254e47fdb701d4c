#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ate/augment.hpp"
#include "ate/data.hpp"
#include "ate/model.hpp"

namespace ate {

/// Element type of the training computation. Float64 exists for
/// verification runs; checkpoints stay 32-bit either way.
enum class Precision { Float32, Float64 };

struct TrainConfig {
    int epochs = 20;
    int batch_size = 16;
    double lr0 = 0.001;
    double lr_factor = 0.3;
    int plateau_epochs = 8;
    AugmentationPipeline pipeline;  // carries p_aug
    uint64_t seed = 0;
    Precision precision = Precision::Float32;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (!(lr_factor > 0.0 && lr_factor < 1.0))
            throw ConfigError("train: lr_factor must be in (0, 1)");
        if (plateau_epochs < 1) throw ConfigError("train: plateau_epochs must be >= 1");
        if (pipeline.p_aug < 0.0f || pipeline.p_aug > 1.0f)
            throw ConfigError("train: p_aug must be in [0, 1]");
    }
};

/// Adam moments; beta1 0.9, beta2 0.999, eps 1e-8.
template <class S>
struct AdamStateT {
    std::map<std::string, TensorT<S>> m;
    std::map<std::string, TensorT<S>> v;
    int64_t t = 0;
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;
};

using AdamState = AdamStateT<float>;

/// One Adam update over every parameter; grads is a name -> tensor map
/// covering all of them.
template <class S>
void adam_step(std::map<std::string, TensorT<S>>& params,
               const std::map<std::string, TensorT<S>>& grads, AdamStateT<S>& state, double lr) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(AdamStateT<S>::beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(AdamStateT<S>::beta2, static_cast<double>(state.t));
    for (auto& [name, theta] : params) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw ContractError("adam: missing gradient for parameter " + name);
        const TensorT<S>& g = git->second;
        if (!g.same_shape(theta))
            throw DimensionError("adam: gradient shape " + shape_str(g.shape) + " != parameter " +
                                 shape_str(theta.shape) + " for " + name);
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m = TensorT<S>::zeros(theta.shape);
        if (v.empty()) v = TensorT<S>::zeros(theta.shape);
        for (int64_t i = 0; i < theta.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = AdamStateT<S>::beta1 * static_cast<double>(m[i]) +
                              (1.0 - AdamStateT<S>::beta1) * gi;
            const double vi = AdamStateT<S>::beta2 * static_cast<double>(v[i]) +
                              (1.0 - AdamStateT<S>::beta2) * gi * gi;
            m[i] = static_cast<S>(mi);
            v[i] = static_cast<S>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            theta[i] = static_cast<S>(static_cast<double>(theta[i]) -
                                      lr * mhat / (std::sqrt(vhat) + AdamStateT<S>::eps));
        }
    }
}

/// Plateau schedule: multiply lr by `factor` when the running minimum
/// validation loss has not improved for `patience` consecutive epochs;
/// both a new minimum and a decay reset the counter.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, double factor, int patience)
        : lr_(lr0), factor_(factor), patience_(patience) {}

    double on_epoch(double val_loss) {
        if (!have_best_ || val_loss < best_) {
            best_ = val_loss;
            have_best_ = true;
            stale_ = 0;
        } else if (++stale_ >= patience_) {
            lr_ *= factor_;
            stale_ = 0;
        }
        return lr_;
    }

    double lr() const { return lr_; }

private:
    double lr_;
    double factor_;
    int patience_;
    double best_ = 0.0;
    bool have_best_ = false;
    int stale_ = 0;
};

/// Spec-shaped convenience over the scheduler: replay a full validation-loss
/// history and return the resulting lr.
double lr_plateau_update(std::span<const double> history, double lr0, double factor, int patience);

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
    int augmented_batches = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;  // 1-based, max validation accuracy
    int total_augmented_batches = 0;

    /// Tab-separated epoch log line; `seconds` is the only non-deterministic
    /// column.
    static std::string log_header();
    static std::string log_line(const EpochStats& e);
};

struct TrainResult {
    TrainReport report;
    Checkpoint best;  // parameters at the best validation-accuracy epoch
};

/// Full training procedure: per step, sample a batch, draw the pipeline
/// gate, update parameters with the gradient of the loss on either the
/// augmented or the clean batch; per epoch, validate and retain the best
/// checkpoint. Deterministic given (data, config, seed).
TrainResult train(const FeatureDataset& train_set, const FeatureDataset& val_set,
                  const ModelConfig& model_config, const TrainConfig& config);

/// Mean cross-entropy loss and accuracy of the current parameters on a
/// dataset; used for validation and evaluation.
struct EvalOutcome {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<int> predictions;
    std::vector<std::vector<float>> probabilities;  // per sample, per class
};

EvalOutcome evaluate(const FeatureDataset& dataset, const ModelConfig& model_config,
                     const ModelParameters& params, int batch_size = 32);

/// Stack dataset rows into a [B,1,frames,mels] batch plus one-hot labels.
std::pair<Tensor, Tensor> assemble_batch(const FeatureDataset& dataset,
                                         std::span<const int> indices, int input_frames);

} // namespace ate
