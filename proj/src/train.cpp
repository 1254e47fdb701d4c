#include "ate/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace ate {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

template <class S>
std::pair<TensorT<S>, TensorT<S>> assemble_batch_t(const FeatureDataset& dataset,
                                                   std::span<const int> indices,
                                                   int input_frames) {
    auto [batch, labels] = assemble_batch(dataset, indices, input_frames);
    if constexpr (std::is_same_v<S, float>)
        return {std::move(batch), std::move(labels)};
    else
        return {tensor_cast<S>(batch), tensor_cast<S>(labels)};
}

template <class S>
EvalOutcome evaluate_impl(const FeatureDataset& dataset, const ModelConfig& model_config,
                          const std::map<std::string, TensorT<S>>& params, int batch_size) {
    if (dataset.features.empty()) throw EmptyInputError("evaluate: empty dataset");
    EvalOutcome out;
    const int n = static_cast<int>(dataset.features.size());
    double loss_sum = 0.0;
    int correct = 0;
    for (int at = 0; at < n; at += batch_size) {
        std::vector<int> idx;
        for (int i = at; i < std::min(at + batch_size, n); ++i) idx.push_back(i);
        auto [batch, labels] = assemble_batch_t<S>(dataset, idx, model_config.input_frames);
        TapeT<S> tape;
        const NodeId x = tape.data_leaf(std::move(batch));
        const auto bind = model_forward(tape, model_config, params, x);
        const NodeId probs_id = tape.softmax(bind.logits);
        const NodeId loss_id = tape.cross_entropy(probs_id, labels);
        loss_sum += static_cast<double>(tape.value(loss_id)[0]) * static_cast<double>(idx.size());
        const TensorT<S>& probs = tape.value(probs_id);
        for (size_t b = 0; b < idx.size(); ++b) {
            int arg = 0;
            for (int c = 1; c < probs.dim(1); ++c)
                if (probs.at2(static_cast<int>(b), c) > probs.at2(static_cast<int>(b), arg)) arg = c;
            out.predictions.push_back(arg);
            std::vector<float> row(static_cast<size_t>(probs.dim(1)));
            for (int c = 0; c < probs.dim(1); ++c)
                row[static_cast<size_t>(c)] = static_cast<float>(probs.at2(static_cast<int>(b), c));
            out.probabilities.push_back(std::move(row));
            if (arg == dataset.labels[static_cast<size_t>(idx[b])]) ++correct;
        }
    }
    out.loss = loss_sum / n;
    out.accuracy = static_cast<double>(correct) / n;
    return out;
}

template <class S>
TrainResult train_impl(const FeatureDataset& train_set, const FeatureDataset& val_set,
                       const ModelConfig& model_config, const TrainConfig& config) {
    std::map<std::string, TensorT<S>> params;
    {
        ModelParameters built = build_model(model_config, config.seed);
        if constexpr (std::is_same_v<S, float>)
            params = std::move(built);
        else
            params = params_cast<S>(built);
    }
    AdamStateT<S> adam;
    PlateauScheduler sched(config.lr0, config.lr_factor, config.plateau_epochs);
    double lr = config.lr0;

    TrainResult result;
    result.best.config = model_config;
    result.best.seed = config.seed;
    double best_acc = -1.0;

    const int n_train = static_cast<int>(train_set.features.size());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const double t0 = now_seconds();
        const auto batches = make_batches(n_train, config.batch_size, config.seed, epoch);
        double loss_sum = 0.0;
        int64_t seen = 0;
        int augmented = 0;
        for (size_t step = 0; step < batches.size(); ++step) {
            auto [batch, labels] =
                assemble_batch_t<S>(train_set, batches[step], model_config.input_frames);

            if (!config.pipeline.empty()) {
                Rng step_rng(derive_seed(config.seed, 0xa06e47ull, static_cast<uint64_t>(epoch),
                                         static_cast<uint64_t>(step)));
                auto r = apply_pipeline(config.pipeline, batch, labels, model_config, params,
                                        step_rng);
                batch = std::move(r.batch);
                labels = std::move(r.labels);
                if (r.applied) ++augmented;
            }

            const int B = batch.dim(0);
            TapeT<S> tape;
            const NodeId x = tape.data_leaf(std::move(batch));
            const auto bind = model_forward(tape, model_config, params, x);
            const NodeId probs = tape.softmax(bind.logits);
            const NodeId loss_id = tape.cross_entropy(probs, labels);
            const double loss = static_cast<double>(tape.value(loss_id)[0]);
            if (!std::isfinite(loss))
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                      " step " + std::to_string(step + 1));
            loss_sum += loss * B;
            seen += B;

            std::vector<NodeId> leaves;
            leaves.reserve(bind.param_leaves.size());
            for (const auto& [name, id] : bind.param_leaves) leaves.push_back(id);
            const GradientMapT<S> grad_map = tape.backward(loss_id, leaves);
            std::map<std::string, TensorT<S>> grads;
            for (const auto& [name, id] : bind.param_leaves) grads[name] = grad_map.at(id);
            adam_step(params, grads, adam, lr);
        }

        const EvalOutcome val = evaluate_impl<S>(val_set, model_config, params, config.batch_size);
        lr = sched.on_epoch(val.loss);

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(seen);
        stats.val_loss = val.loss;
        stats.val_accuracy = val.accuracy;
        stats.lr = lr;
        stats.seconds = now_seconds() - t0;
        stats.augmented_batches = augmented;
        result.report.epochs.push_back(stats);
        result.report.total_augmented_batches += augmented;

        if (val.accuracy > best_acc) {
            best_acc = val.accuracy;
            result.report.best_epoch = epoch;
            if constexpr (std::is_same_v<S, float>)
                result.best.parameters = params;
            else
                result.best.parameters = params_cast<float>(params);  // checkpoints stay f32
            result.best.epoch = static_cast<uint32_t>(epoch);
            result.best.metric = val.accuracy;
        }
    }
    return result;
}

} // namespace

double lr_plateau_update(std::span<const double> history, double lr0, double factor, int patience) {
    if (history.empty()) throw ContractError("lr schedule: empty history");
    PlateauScheduler sched(lr0, factor, patience);
    double lr = lr0;
    for (double loss : history) lr = sched.on_epoch(loss);
    return lr;
}

std::string TrainReport::log_header() {
    return "epoch\ttrain_loss\tval_loss\tval_acc\tlr\tseconds\taugmented_batches";
}

std::string TrainReport::log_line(const EpochStats& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.6f\t%.6f\t%.6g\t%.3f\t%d", e.epoch, e.train_loss,
                  e.val_loss, e.val_accuracy, e.lr, e.seconds, e.augmented_batches);
    return buf;
}

std::pair<Tensor, Tensor> assemble_batch(const FeatureDataset& dataset,
                                         std::span<const int> indices, int input_frames) {
    if (indices.empty()) throw EmptyInputError("batch: no indices");
    const int mels = dataset.features.front().dim(1);
    const int B = static_cast<int>(indices.size());
    Tensor batch = Tensor::zeros({B, 1, input_frames, mels});
    Tensor labels = Tensor::zeros({B, dataset.n_classes});
    const size_t per = static_cast<size_t>(input_frames) * mels;
    for (int b = 0; b < B; ++b) {
        const int idx = indices[static_cast<size_t>(b)];
        const Tensor fitted = fit_frames(dataset.features[static_cast<size_t>(idx)], input_frames, 0.0f);
        std::copy_n(fitted.data.begin(), per, batch.data.begin() + static_cast<size_t>(b) * per);
        labels.at2(b, dataset.labels[static_cast<size_t>(idx)]) = 1.0f;
    }
    return {std::move(batch), std::move(labels)};
}

EvalOutcome evaluate(const FeatureDataset& dataset, const ModelConfig& model_config,
                     const ModelParameters& params, int batch_size) {
    return evaluate_impl<float>(dataset, model_config, params, batch_size);
}

TrainResult train(const FeatureDataset& train_set, const FeatureDataset& val_set,
                  const ModelConfig& model_config, const TrainConfig& config) {
    config.validate();
    model_config.validate();
    if (train_set.features.empty() || val_set.features.empty())
        throw EmptyInputError("train: empty train or validation split");
    if (config.precision == Precision::Float64)
        return train_impl<double>(train_set, val_set, model_config, config);
    return train_impl<float>(train_set, val_set, model_config, config);
}

} // namespace ate
