#include <string>

#include <CLI11.hpp>

#include "ate/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"ate-kws: audio classification training with entropy-gradient augmentation"};
    app.require_subcommand(1);

    ate::CommandOptions opts;
    std::string config, out = "run", pipeline;
    uint64_t seed = 0;
    bool seed_set = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config, "run configuration file (JSON)");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
            seed_set = true;
        });
        cmd->add_option("--pipeline", pipeline,
                        "comma-separated augmentation stages, order-significant "
                        "(ate, specaugment, specmix, fgsm, none)");
    };

    auto* featurize = app.add_subcommand("featurize", "extract LFBE features into the cache");
    add_common(featurize);

    auto* train = app.add_subcommand("train", "run the training loop");
    add_common(train);

    std::string checkpoint;
    bool kfold = false;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_flag("--kfold", kfold, "k-fold cross-validation (k from the eval config section)");

    int count = 4;
    std::string preview_ckpt;
    auto* preview = app.add_subcommand("preview", "write augmentation triplets as PGM images");
    add_common(preview);
    preview->add_option("--checkpoint", preview_ckpt, "checkpoint file")->required();
    preview->add_option("-n,--count", count, "number of clips to preview");

    auto* bench = app.add_subcommand("bench", "time one epoch per pipeline variant");
    add_common(bench);

    std::string audio_dir, format = "dirs", manifest_out = "manifest.tsv";
    std::string val_list, test_list;
    auto* manifest = app.add_subcommand(
        "manifest", "build a manifest from a hand-fetched audio tree (esc50 or dirs layout)");
    manifest->add_option("--audio-dir", audio_dir, "root of the audio files")->required();
    manifest->add_option("--format", format, "esc50 | dirs");
    manifest->add_option("--out", manifest_out, "manifest file to write");
    manifest->add_option("--val-list", val_list, "file list for the validation split");
    manifest->add_option("--test-list", test_list, "file list for the test split");

    CLI11_PARSE(app, argc, argv);

    opts.config_path = config;
    opts.out_dir = out;
    if (seed_set) opts.seed = seed;
    if (!pipeline.empty()) opts.pipeline = pipeline;

    if (featurize->parsed()) return ate::cmd_featurize(opts);
    if (train->parsed()) return ate::cmd_train(opts);
    if (eval->parsed()) return ate::cmd_eval(opts, checkpoint, kfold);
    if (preview->parsed()) return ate::cmd_preview(opts, preview_ckpt, count);
    if (bench->parsed()) return ate::cmd_bench(opts);
    if (manifest->parsed()) return ate::cmd_manifest(audio_dir, format, manifest_out, val_list, test_list);
    return 1;
}
