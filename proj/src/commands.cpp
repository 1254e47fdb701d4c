#include "ate/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "ate/metrics.hpp"
#include "ate/runconfig.hpp"
#include "ate/train.hpp"

namespace fs = std::filesystem;

namespace ate {

namespace {

template <class Fn>
int run_guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

RunConfig load_config(const CommandOptions& opts) {
    if (opts.config_path.empty()) throw ConfigError("no config file given (--config PATH)");
    RunConfig cfg = load_run_config(opts.config_path);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.train.seed = *opts.seed;
        if (cfg.dataset.synthetic) cfg.dataset.synthetic->seed = *opts.seed;
    }
    if (opts.pipeline) cfg.train.pipeline = parse_pipeline(*opts.pipeline, cfg.train.pipeline);
    return cfg;
}

Manifest prepare_manifest(const RunConfig& cfg, const CommandOptions& opts) {
    Manifest manifest;
    if (!cfg.dataset.manifest.empty()) {
        manifest = load_manifest(cfg.dataset.manifest);
    } else if (cfg.dataset.synthetic) {
        const fs::path dir = cfg.dataset.synthetic_dir.empty()
                                 ? opts.out_dir / "synth"
                                 : fs::path(cfg.dataset.synthetic_dir);
        if (fs::exists(dir / "manifest.tsv"))
            manifest = load_manifest(dir / "manifest.tsv");
        else
            manifest = generate_synthetic_dataset(*cfg.dataset.synthetic, dir);
    } else {
        throw ConfigError("config: dataset section needs either a manifest path or a synthetic spec");
    }
    return manifest;
}

struct PreparedData {
    Manifest manifest;
    std::vector<SpectrogramFeatures> features;  // aligned with manifest.entries
    DatasetStats train_stats;
    int extracted = 0;
    int cached = 0;
};

PreparedData prepare_data(const RunConfig& cfg, const CommandOptions& opts) {
    PreparedData data;
    data.manifest = prepare_manifest(cfg, opts);
    assign_splits(data.manifest, cfg.dataset.val_fraction, cfg.seed);

    FeatureCache cache(opts.out_dir / "cache", cfg.features);
    data.features.reserve(data.manifest.entries.size());
    for (const auto& entry : data.manifest.entries)
        data.features.push_back(cache.get(data.manifest, entry));
    data.extracted = cache.extracted();
    data.cached = cache.hits();

    std::vector<SpectrogramFeatures> train_features;
    for (size_t i = 0; i < data.manifest.entries.size(); ++i)
        if (data.manifest.entries[i].split == "train") train_features.push_back(data.features[i]);
    if (train_features.empty()) train_features = data.features;  // stats fall back to everything
    data.train_stats = compute_dataset_stats(train_features);
    return data;
}

FeatureDataset make_split(const PreparedData& data, const std::string& split) {
    FeatureDataset ds;
    ds.n_classes = static_cast<int>(data.manifest.classes.size());
    for (size_t i = 0; i < data.manifest.entries.size(); ++i) {
        const auto& e = data.manifest.entries[i];
        if (!split.empty() && e.split != split) continue;
        ds.features.push_back(data.features[i].matrix);
        ds.labels.push_back(data.manifest.class_index(e.label));
        ds.clip_ids.push_back(e.clip_id);
        ds.folds.push_back(e.fold);
    }
    normalize_features(ds, data.train_stats);
    return ds;
}

std::string pipeline_order_tag(const AugmentationPipeline& pipeline) {
    if (pipeline.empty()) return "none";
    std::string tag;
    for (size_t i = 0; i < pipeline.stages.size(); ++i) {
        if (i) tag += "+";
        const std::string name = stage_name(pipeline.stages[i]);
        if (name == "ate")
            tag += "A";
        else if (name == "specaugment")
            tag += "S";
        else if (name == "specmix")
            tag += "SM";
        else
            tag += "F";
    }
    return tag;
}

void write_run_description(const CommandOptions& opts, const RunConfig& cfg) {
    fs::create_directories(opts.out_dir);
    if (!opts.config_path.empty())
        fs::copy_file(opts.config_path, opts.out_dir / "config.json",
                      fs::copy_options::overwrite_existing);
    std::ofstream os(opts.out_dir / "versions.txt");
    os << "ate-kws " << kToolkitVersion << "\n";
    os << "compiler " <<
#if defined(__clang__)
        "clang " << __clang_major__ << "." << __clang_minor__
#elif defined(__GNUC__)
        "gcc " << __GNUC__ << "." << __GNUC_MINOR__
#else
        "unknown"
#endif
       << "\n";
    os << "seed " << cfg.seed << "\n";
    os << "pipeline " << cfg.train.pipeline.describe() << "\n";
}

void write_pgm(const fs::path& path, const Tensor& m, float lo, float hi) {
    std::ofstream os(path);
    os << "P2\n" << m.dim(1) << " " << m.dim(0) << "\n255\n";
    const float span = hi - lo;
    for (int r = 0; r < m.dim(0); ++r) {
        for (int c = 0; c < m.dim(1); ++c) {
            int v = 128;
            if (span > 0)
                v = static_cast<int>(std::lround((m.at2(r, c) - lo) / span * 255.0f));
            os << std::clamp(v, 0, 255) << (c + 1 < m.dim(1) ? " " : "\n");
        }
    }
}

void write_raw(const fs::path& path, const Tensor& m, const std::string& id) {
    SpectrogramFeatures f;
    f.matrix = m;
    f.clip_id = id;
    const auto bytes = serialize_features(f);
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<int> fold_assignment(const Manifest& manifest, int k, uint64_t seed) {
    bool all_have_folds = !manifest.entries.empty();
    for (const auto& e : manifest.entries)
        if (e.fold < 0) {
            all_have_folds = false;
            break;
        }
    std::vector<int> folds;
    if (all_have_folds) {
        for (const auto& e : manifest.entries) {
            if (e.fold >= k)
                throw ValidationError("kfold: clip '" + e.clip_id + "' has fold " +
                                      std::to_string(e.fold) + " >= k=" + std::to_string(k));
            folds.push_back(e.fold);
        }
        return folds;
    }
    // Seeded balanced assignment: shuffle indices, deal round-robin.
    const int n = static_cast<int>(manifest.entries.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(derive_seed(seed, 0xf01d5ull));
    for (int i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[rng.uniform_int(static_cast<uint64_t>(i) + 1)]);
    folds.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) folds[static_cast<size_t>(order[static_cast<size_t>(i)])] = i % k;
    return folds;
}

} // namespace

int cmd_featurize(const CommandOptions& opts) {
    return run_guarded([&] {
        const RunConfig cfg = load_config(opts);
        write_run_description(opts, cfg);
        const PreparedData data = prepare_data(cfg, opts);
        std::printf("%d extracted, %d cached\n", data.extracted, data.cached);
        std::printf("stats: mean=%.6f std=%.6f count=%lld\n", data.train_stats.mean,
                    data.train_stats.stddev, static_cast<long long>(data.train_stats.count));
        std::printf("epsilon: %.6f raw (1.0 normalized)\n", compute_epsilon(data.train_stats));
        return 0;
    });
}

int cmd_train(const CommandOptions& opts) {
    return run_guarded([&] {
        const RunConfig cfg = load_config(opts);
        write_run_description(opts, cfg);
        const PreparedData data = prepare_data(cfg, opts);
        const FeatureDataset train_set = make_split(data, "train");
        const FeatureDataset val_set = make_split(data, "val");
        const ModelConfig model_config =
            cfg.finalize_model(static_cast<int>(data.manifest.classes.size()));

        std::printf("pipeline: %s\n", cfg.train.pipeline.describe().c_str());
        std::printf("model: %lld parameters\n",
                    static_cast<long long>(model_config.param_count()));
        std::printf("%s\n", TrainReport::log_header().c_str());

        const TrainResult result = [&] {
            try {
                return train(train_set, val_set, model_config, cfg.train);
            } catch (const DivergenceError&) {
                throw;
            }
        }();
        for (const auto& e : result.report.epochs)
            std::printf("%s\n", TrainReport::log_line(e).c_str());

        const fs::path ckpt_path = opts.out_dir / "checkpoint.atec";
        save_checkpoint(result.best, ckpt_path);

        std::ofstream log(opts.out_dir / "epochs.tsv");
        log << TrainReport::log_header() << "\n";
        for (const auto& e : result.report.epochs) log << TrainReport::log_line(e) << "\n";

        std::ofstream summary(opts.out_dir / "summary.txt");
        summary << "pipeline=" << cfg.train.pipeline.describe() << "\n";
        summary << "pipeline_order=" << pipeline_order_tag(cfg.train.pipeline) << "\n";
        summary << "seed=" << cfg.seed << "\n";
        summary << "epochs=" << cfg.train.epochs << "\n";
        summary << "best_epoch=" << result.report.best_epoch << "\n";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", result.best.metric);
        summary << "best_val_accuracy=" << buf << "\n";
        summary << "augmented_batches=" << result.report.total_augmented_batches << "\n";
        summary << "checkpoint=" << ckpt_path.string() << "\n";

        std::printf("best epoch %d val_acc %.6f -> %s\n", result.report.best_epoch,
                    result.best.metric, ckpt_path.string().c_str());
        return 0;
    });
}

int cmd_eval(const CommandOptions& opts, const fs::path& checkpoint, bool kfold) {
    return run_guarded([&] {
        const RunConfig cfg = load_config(opts);
        write_run_description(opts, cfg);
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        const PreparedData data = prepare_data(cfg, opts);
        const int n_classes = static_cast<int>(data.manifest.classes.size());
        if (ckpt.config.n_classes != n_classes)
            throw ConfigError("eval: checkpoint has " + std::to_string(ckpt.config.n_classes) +
                              " classes, dataset has " + std::to_string(n_classes));

        if (kfold) {
            const int k = cfg.eval.k;
            const std::vector<int> folds = fold_assignment(data.manifest, k, cfg.seed);
            FeatureDataset all = [&] {
                FeatureDataset ds;
                ds.n_classes = n_classes;
                for (size_t i = 0; i < data.manifest.entries.size(); ++i) {
                    ds.features.push_back(data.features[i].matrix);
                    ds.labels.push_back(data.manifest.class_index(data.manifest.entries[i].label));
                    ds.clip_ids.push_back(data.manifest.entries[i].clip_id);
                }
                return ds;
            }();
            int fold_counter = 0;
            const FoldResult result = kfold_cross_validate(
                folds, k, [&](const std::vector<int>& train_idx, const std::vector<int>& test_idx) {
                    auto subset = [&](const std::vector<int>& idx) {
                        FeatureDataset ds;
                        ds.n_classes = all.n_classes;
                        for (int i : idx) {
                            ds.features.push_back(all.features[static_cast<size_t>(i)]);
                            ds.labels.push_back(all.labels[static_cast<size_t>(i)]);
                            ds.clip_ids.push_back(all.clip_ids[static_cast<size_t>(i)]);
                        }
                        return ds;
                    };
                    FeatureDataset fold_train = subset(train_idx);
                    FeatureDataset fold_test = subset(test_idx);
                    std::vector<SpectrogramFeatures> raw;
                    for (const auto& t : fold_train.features) raw.push_back({t, ""});
                    const DatasetStats stats = compute_dataset_stats(raw);
                    normalize_features(fold_train, stats);
                    normalize_features(fold_test, stats);
                    TrainConfig fold_cfg = cfg.train;
                    fold_cfg.seed =
                        derive_seed(cfg.seed, 0xf01dull, static_cast<uint64_t>(fold_counter++));
                    const TrainResult r = train(fold_train, fold_test, ckpt.config, fold_cfg);
                    const EvalOutcome outcome =
                        evaluate(fold_test, ckpt.config, r.best.parameters, cfg.train.batch_size);
                    return outcome.accuracy;
                });
            for (size_t i = 0; i < result.fold_accuracy.size(); ++i)
                std::printf("fold_%zu_accuracy\t%.6f\n", i, result.fold_accuracy[i]);
            std::printf("accuracy_mean_std\t%.3f±%.3f\n", result.mean, result.stddev);
            return 0;
        }

        // Evaluation split: test if present, else val, else everything.
        std::string split;
        for (const auto& e : data.manifest.entries)
            if (e.split == "test") {
                split = "test";
                break;
            }
        if (split.empty())
            for (const auto& e : data.manifest.entries)
                if (e.split == "val") {
                    split = "val";
                    break;
                }
        const FeatureDataset eval_set = make_split(data, split);
        if (eval_set.features.empty()) throw ValidationError("eval: no entries in evaluation split");
        const EvalOutcome outcome =
            evaluate(eval_set, ckpt.config, ckpt.parameters, cfg.train.batch_size);
        std::printf("split\t%s\n", split.empty() ? "all" : split.c_str());
        std::printf("examples\t%zu\n", eval_set.features.size());
        std::printf("accuracy\t%.6f\n", outcome.accuracy);

        if (n_classes == 2) {
            std::vector<ScoredExample> scored;
            for (size_t i = 0; i < eval_set.labels.size(); ++i)
                scored.push_back({static_cast<double>(outcome.probabilities[i][1]),
                                  eval_set.labels[i] == 1 ? 1 : 0});
            const auto curve = far_frr_curve(scored);
            const double far = far_at_fixed_frr(curve, cfg.eval.target_frr);
            std::printf("far_at_frr_%.2f\t%.6f\n", cfg.eval.target_frr, far);
            const fs::path curve_path = opts.out_dir / "curve.tsv";
            std::ofstream os(curve_path);
            os << "threshold\tfar\tfrr\n";
            char line[96];
            for (const auto& p : curve) {
                std::snprintf(line, sizeof line, "%g\t%.6f\t%.6f", p.threshold, p.far, p.frr);
                os << line << "\n";
            }
            std::printf("curve\t%s\n", curve_path.string().c_str());
        }
        return 0;
    });
}

int cmd_preview(const CommandOptions& opts, const fs::path& checkpoint, int count) {
    return run_guarded([&] {
        const RunConfig cfg = load_config(opts);
        write_run_description(opts, cfg);
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        const PreparedData data = prepare_data(cfg, opts);
        FeatureDataset all = make_split(data, "");
        if (all.features.empty()) throw ValidationError("preview: dataset is empty");
        if (cfg.train.pipeline.empty())
            throw ConfigError("preview: pipeline is empty; nothing to show");
        count = std::min<int>(count, static_cast<int>(all.features.size()));

        const fs::path dir = opts.out_dir / "preview";
        fs::create_directories(dir);
        const int frames = ckpt.config.input_frames;
        int written = 0;

        for (int i = 0; i < count; ++i) {
            const Tensor orig = fit_frames(all.features[static_cast<size_t>(i)], frames, 0.0f);
            for (const auto& stage : cfg.train.pipeline.stages) {
                const std::string name = stage_name(stage);
                Rng rng(derive_seed(cfg.seed, 0x94e41ull, static_cast<uint64_t>(i)));
                Tensor delta = Tensor::zeros(orig.shape);
                float delta_scale = 1.0f;

                if (const auto* ate = std::get_if<AtePolicy>(&stage)) {
                    Tensor batch = Tensor::zeros({1, 1, frames, orig.dim(1)});
                    batch.data = orig.data;
                    const Tensor aug = ate_augment(batch, ckpt.config, ckpt.parameters, ate->epsilon);
                    for (int64_t j = 0; j < delta.size(); ++j) delta[j] = aug[j] - orig[j];
                    delta_scale = ate->epsilon;
                } else if (const auto* fgsm = std::get_if<FgsmPolicy>(&stage)) {
                    Tensor batch = Tensor::zeros({1, 1, frames, orig.dim(1)});
                    batch.data = orig.data;
                    Tensor labels = Tensor::zeros({1, ckpt.config.n_classes});
                    labels.at2(0, all.labels[static_cast<size_t>(i)]) = 1.0f;
                    const Tensor aug =
                        fgsm_augment(batch, labels, ckpt.config, ckpt.parameters, fgsm->epsilon);
                    for (int64_t j = 0; j < delta.size(); ++j) delta[j] = aug[j] - orig[j];
                    delta_scale = fgsm->epsilon;
                } else if (const auto* sa = std::get_if<SpecAugmentPolicy>(&stage)) {
                    const Tensor aug = spec_augment(orig, *sa, rng);
                    for (int64_t j = 0; j < delta.size(); ++j) delta[j] = aug[j] - orig[j];
                } else if (const auto* sm = std::get_if<SpecMixPolicy>(&stage)) {
                    const int donor = (i + 1) % static_cast<int>(all.features.size());
                    const Tensor donor_m =
                        fit_frames(all.features[static_cast<size_t>(donor)], frames, 0.0f);
                    const auto mixed =
                        spec_mix(orig, all.labels[static_cast<size_t>(i)], donor_m,
                                 all.labels[static_cast<size_t>(donor)], all.n_classes, *sm, rng);
                    for (int64_t j = 0; j < delta.size(); ++j)
                        delta[j] = mixed.features[j] - orig[j];
                }

                // augmented := original + delta, so the three raw files obey
                // the arithmetic identity exactly.
                Tensor aug = orig;
                for (int64_t j = 0; j < aug.size(); ++j) aug[j] += delta[j];

                if (delta_scale <= 0.0f) delta_scale = 1.0f;
                float shared_lo = orig[0], shared_hi = orig[0];
                for (float v : orig.data) {
                    shared_lo = std::min(shared_lo, v);
                    shared_hi = std::max(shared_hi, v);
                }
                for (float v : aug.data) {
                    shared_lo = std::min(shared_lo, v);
                    shared_hi = std::max(shared_hi, v);
                }
                const std::string base =
                    (dir / (all.clip_ids[static_cast<size_t>(i)] + "_" + name)).string();
                write_pgm(base + "_orig.pgm", orig, shared_lo, shared_hi);
                write_pgm(base + "_aug.pgm", aug, shared_lo, shared_hi);
                write_pgm(base + "_delta.pgm", delta, -delta_scale, delta_scale);
                write_raw(base + "_orig.lfbe", orig, all.clip_ids[static_cast<size_t>(i)] + ":orig");
                write_raw(base + "_delta.lfbe", delta,
                          all.clip_ids[static_cast<size_t>(i)] + ":delta");
                write_raw(base + "_aug.lfbe", aug, all.clip_ids[static_cast<size_t>(i)] + ":aug");
                ++written;
            }
        }
        std::printf("wrote %d triplets to %s\n", written, dir.string().c_str());
        return 0;
    });
}

int cmd_manifest(const fs::path& audio_dir, const std::string& format, const fs::path& out_file,
                 const fs::path& val_list, const fs::path& test_list) {
    return run_guarded([&] {
        ManifestBuilderOptions options;
        options.audio_dir = audio_dir;
        options.format = format;
        options.val_list = val_list;
        options.test_list = test_list;
        const Manifest manifest = build_manifest(options);
        save_manifest(manifest, out_file);
        std::printf("%zu clips, %zu classes -> %s\n", manifest.entries.size(),
                    manifest.classes.size(), out_file.string().c_str());
        return 0;
    });
}

int cmd_bench(const CommandOptions& opts) {
    return run_guarded([&] {
        const RunConfig cfg = load_config(opts);
        write_run_description(opts, cfg);
        const PreparedData data = prepare_data(cfg, opts);
        const FeatureDataset train_set = make_split(data, "train");
        const FeatureDataset val_set = make_split(data, "val");
        const ModelConfig model_config =
            cfg.finalize_model(static_cast<int>(data.manifest.classes.size()));

        const char* names[] = {"none", "specaugment", "ate", "ate,specaugment"};
        double seconds[4] = {0, 0, 0, 0};
        for (int i = 0; i < 4; ++i) {
            TrainConfig bench_cfg = cfg.train;
            bench_cfg.epochs = 1;
            bench_cfg.pipeline = parse_pipeline(names[i], cfg.train.pipeline);
            const TrainResult r = train(train_set, val_set, model_config, bench_cfg);
            seconds[i] = r.report.epochs.front().seconds;
        }
        std::printf("%-20s %s\n", "pipeline", "seconds");
        for (int i = 0; i < 4; ++i) {
            std::string label = names[i];
            std::replace(label.begin(), label.end(), ',', '+');
            std::printf("%-20s %.1f\n", label.c_str(), seconds[i]);
        }
        std::printf("ate/none ratio: %.2f\n", seconds[0] > 0 ? seconds[2] / seconds[0] : 0.0);
        return 0;
    });
}

} // namespace ate
