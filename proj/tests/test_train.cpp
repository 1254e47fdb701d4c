#include <cmath>
#include <cstring>

#include <doctest.h>

#include "ate/train.hpp"
#include "oracles.hpp"

using namespace ate;

namespace {

// Linearly separable toy features: class 0 lights up the top half of the
// 8x8 grid, class 1 the bottom half, plus mild noise.
FeatureDataset toy_dataset(int per_class, uint64_t seed) {
    FeatureDataset ds;
    ds.n_classes = 2;
    Rng rng(seed);
    for (int label = 0; label < 2; ++label)
        for (int i = 0; i < per_class; ++i) {
            Tensor f = Tensor::zeros({8, 8});
            for (int r = 0; r < 8; ++r)
                for (int c = 0; c < 8; ++c) {
                    const bool hot = label == 0 ? r < 4 : r >= 4;
                    f.at2(r, c) = static_cast<float>((hot ? 1.0 : -1.0) + 0.1 * rng.normal());
                }
            ds.features.push_back(std::move(f));
            ds.labels.push_back(label);
            ds.clip_ids.push_back("toy" + std::to_string(label) + "_" + std::to_string(i));
            ds.folds.push_back(-1);
        }
    return ds;
}

bool params_equal(const ModelParameters& a, const ModelParameters& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, t] : a) {
        const auto it = b.find(name);
        if (it == b.end() || it->second.shape != t.shape) return false;
        if (std::memcmp(it->second.data.data(), t.data.data(), t.data.size() * 4) != 0)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    std::map<std::string, Tensor64> params{{"w", Tensor64({2}, {1.5, -0.5})}};
    std::map<std::string, Tensor64> grads{{"w", Tensor64::zeros({2})}};
    AdamStateT<double> state;
    adam_step(params, grads, state, 0.001);
    CHECK(params.at("w")[0] == 1.5);
    CHECK(params.at("w")[1] == -0.5);
    CHECK(state.t == 1);
}

TEST_CASE("adam: first-step magnitude is about lr regardless of gradient scale") {
    std::map<std::string, Tensor64> params{{"w", Tensor64::scalar(0.0)}};
    std::map<std::string, Tensor64> grads{{"w", Tensor64::scalar(10.0)}};
    AdamStateT<double> state;
    adam_step(params, grads, state, 0.001);
    CHECK(params.at("w")[0] == doctest::Approx(-0.001).epsilon(1e-6));
}

TEST_CASE("adam: three steps on f(x)=x^2 match the straight-line transcription") {
    std::map<std::string, Tensor64> params{{"w", Tensor64::scalar(1.0)}};
    AdamStateT<double> state;
    oracles::ScalarAdam oracle;
    double theta = 1.0;
    for (int step = 0; step < 3; ++step) {
        const double g = 2.0 * params.at("w")[0];
        std::map<std::string, Tensor64> grads{{"w", Tensor64::scalar(g)}};
        adam_step(params, grads, state, 0.001);
        theta = oracle.step(theta, 2.0 * theta, 0.001);
        CHECK(std::abs(params.at("w")[0] - theta) < 1e-12);
    }
}

TEST_CASE("adam: missing gradient is a contract error") {
    std::map<std::string, Tensor64> params{{"w", Tensor64::scalar(1.0)},
                                           {"b", Tensor64::scalar(0.0)}};
    std::map<std::string, Tensor64> grads{{"w", Tensor64::scalar(1.0)}};
    AdamStateT<double> state;
    CHECK_THROWS_AS(adam_step(params, grads, state, 0.001), ContractError);
}

TEST_CASE("plateau schedule: the three spec cases") {
    // Strictly decreasing: lr stays at lr0.
    {
        std::vector<double> history;
        for (int i = 0; i < 20; ++i) history.push_back(1.0 - 0.01 * i);
        CHECK(lr_plateau_update(history, 0.001, 0.3, 8) == doctest::Approx(0.001));
    }
    // Eight consecutive non-improving epochs: one decay.
    {
        std::vector<double> history = {1.0};
        for (int i = 0; i < 8; ++i) history.push_back(2.0);
        CHECK(lr_plateau_update(history, 0.001, 0.3, 8) == doctest::Approx(0.0003));
    }
    // Sixteen: two decays.
    {
        std::vector<double> history = {1.0};
        for (int i = 0; i < 16; ++i) history.push_back(2.0);
        CHECK(lr_plateau_update(history, 0.001, 0.3, 8) == doctest::Approx(9e-5));
    }
}

TEST_CASE("plateau schedule: lr never increases and equals lr0 * factor^decays") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        PlateauScheduler sched(0.001, 0.3, 4);
        double lr = 0.001;
        // Independent decay-event counter.
        double best = 0;
        bool have_best = false;
        int stale = 0, decays = 0;
        for (int epoch = 0; epoch < 40; ++epoch) {
            const double loss = rng.uniform(0.0, 1.0);
            const double next = sched.on_epoch(loss);
            CHECK(next <= lr + 1e-18);
            lr = next;
            if (!have_best || loss < best) {
                best = loss;
                have_best = true;
                stale = 0;
            } else if (++stale >= 4) {
                ++decays;
                stale = 0;
            }
            CHECK(lr == doctest::Approx(0.001 * std::pow(0.3, decays)).epsilon(1e-12));
        }
    }
}

TEST_CASE("train: deterministic, and p_aug=0 matches an empty pipeline step for step") {
    const FeatureDataset train_set = toy_dataset(16, 1);
    const FeatureDataset val_set = toy_dataset(4, 2);
    const ModelConfig model = ModelConfig::tiny();

    TrainConfig base;
    base.epochs = 3;
    base.batch_size = 8;
    base.seed = 5;

    const TrainResult a = train(train_set, val_set, model, base);
    const TrainResult b = train(train_set, val_set, model, base);
    REQUIRE(a.report.epochs.size() == b.report.epochs.size());
    for (size_t i = 0; i < a.report.epochs.size(); ++i) {
        CHECK(a.report.epochs[i].train_loss == b.report.epochs[i].train_loss);
        CHECK(a.report.epochs[i].val_loss == b.report.epochs[i].val_loss);
        CHECK(a.report.epochs[i].val_accuracy == b.report.epochs[i].val_accuracy);
    }
    CHECK(params_equal(a.best.parameters, b.best.parameters));

    TrainConfig gated = base;
    gated.pipeline.stages = {AtePolicy{1.0f}};
    gated.pipeline.p_aug = 0.0f;
    const TrainResult c = train(train_set, val_set, model, gated);
    CHECK(params_equal(a.best.parameters, c.best.parameters));
    for (const auto& e : c.report.epochs) CHECK(e.augmented_batches == 0);
}

TEST_CASE("train: learns the separable toy set without augmentation") {
    const FeatureDataset train_set = toy_dataset(32, 3);
    const FeatureDataset val_set = toy_dataset(8, 4);
    const ModelConfig model = ModelConfig::tiny();
    TrainConfig config;
    config.epochs = 20;
    config.batch_size = 16;
    config.seed = 7;

    const TrainResult result = train(train_set, val_set, model, config);
    const EvalOutcome on_train = evaluate(train_set, model, result.best.parameters);
    CHECK(on_train.accuracy >= 0.95);

    // Loss is non-increasing after the first epoch, with 5% headroom.
    for (size_t i = 2; i < result.report.epochs.size(); ++i)
        CHECK(result.report.epochs[i].train_loss <=
              result.report.epochs[i - 1].train_loss * 1.05);

    CHECK(result.report.best_epoch >= 1);
    double best_acc = 0;
    for (const auto& e : result.report.epochs) best_acc = std::max(best_acc, e.val_accuracy);
    CHECK(result.best.metric == best_acc);
}

TEST_CASE("train: gate accounting is binomially plausible") {
    const FeatureDataset train_set = toy_dataset(16, 5);
    const FeatureDataset val_set = toy_dataset(4, 6);
    const ModelConfig model = ModelConfig::tiny();
    TrainConfig config;
    config.epochs = 25;
    config.batch_size = 8;  // 4 batches/epoch -> 100 gate draws
    config.seed = 11;
    SpecAugmentPolicy cheap;
    cheap.max_freq_width = 2;
    cheap.max_time_width = 2;
    config.pipeline.stages = {cheap};
    config.pipeline.p_aug = 0.5f;

    const TrainResult result = train(train_set, val_set, model, config);
    const int n = 100;
    const double sigma = std::sqrt(n * 0.25);
    CHECK(result.report.total_augmented_batches >= 50 - 3 * sigma);
    CHECK(result.report.total_augmented_batches <= 50 + 3 * sigma);
}

TEST_CASE("train: non-finite loss raises a divergence error naming the epoch") {
    const FeatureDataset train_set = toy_dataset(8, 8);
    const FeatureDataset val_set = toy_dataset(2, 9);
    const ModelConfig model = ModelConfig::tiny();
    TrainConfig config;
    config.epochs = 10;
    config.batch_size = 8;
    config.seed = 1;
    config.lr0 = 1e12;  // blows the parameters up within a couple of steps
    try {
        train(train_set, val_set, model, config);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("train: ate pipeline changes the trajectory but still trains") {
    const FeatureDataset train_set = toy_dataset(16, 10);
    const FeatureDataset val_set = toy_dataset(4, 11);
    const ModelConfig model = ModelConfig::tiny();
    TrainConfig plain;
    plain.epochs = 5;
    plain.batch_size = 8;
    plain.seed = 13;
    TrainConfig with_ate = plain;
    with_ate.pipeline.stages = {AtePolicy{1.0f}};
    with_ate.pipeline.p_aug = 1.0f;

    const TrainResult a = train(train_set, val_set, model, plain);
    const TrainResult b = train(train_set, val_set, model, with_ate);
    CHECK_FALSE(params_equal(a.best.parameters, b.best.parameters));
    CHECK(b.report.total_augmented_batches == 5 * 4);
}

TEST_CASE("train honors the 64-bit precision flag") {
    const FeatureDataset train_set = toy_dataset(8, 20);
    const FeatureDataset val_set = toy_dataset(2, 21);
    const ModelConfig model = ModelConfig::tiny();
    TrainConfig config;
    config.epochs = 4;
    config.batch_size = 8;
    config.seed = 3;
    config.pipeline.stages = {AtePolicy{0.5f}};
    config.pipeline.p_aug = 1.0f;

    const TrainResult f32 = train(train_set, val_set, model, config);
    config.precision = Precision::Float64;
    const TrainResult f64 = train(train_set, val_set, model, config);

    // Same procedure, different arithmetic: trajectories agree loosely but
    // not bitwise, and the checkpoint container stays 32-bit either way.
    CHECK(f64.report.epochs.size() == f32.report.epochs.size());
    CHECK(f64.report.epochs[0].train_loss ==
          doctest::Approx(f32.report.epochs[0].train_loss).epsilon(1e-3));
    CHECK(f64.report.epochs.back().train_loss < f64.report.epochs.front().train_loss);
    bool identical = true;
    for (size_t i = 0; i < f32.report.epochs.size(); ++i)
        if (f32.report.epochs[i].train_loss != f64.report.epochs[i].train_loss) identical = false;
    CHECK_FALSE(identical);

    const TrainResult again = train(train_set, val_set, model, config);
    CHECK(params_equal(f64.best.parameters, again.best.parameters));  // still deterministic
}

TEST_CASE("epoch log line format is stable") {
    EpochStats e;
    e.epoch = 3;
    e.train_loss = 0.5;
    e.val_loss = 0.25;
    e.val_accuracy = 0.875;
    e.lr = 0.001;
    e.seconds = 1.2345;
    e.augmented_batches = 2;
    CHECK(TrainReport::log_line(e) == "3\t0.500000\t0.250000\t0.875000\t0.001\t1.234\t2");
    CHECK(TrainReport::log_header() ==
          "epoch\ttrain_loss\tval_loss\tval_acc\tlr\tseconds\taugmented_batches");
}
