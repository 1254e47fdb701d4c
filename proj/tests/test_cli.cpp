#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>

#include "ate/dsp.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "ate-cli-tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path log = dir / "cli-output.txt";
    const std::string cmd = std::string(ATE_CLI_BIN) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(status);
    std::ifstream is(log);
    r.output.assign((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return r;
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// Small two-class synthetic run: 12 half-second clips, a 2-conv model.
const char* kTinyConfig = R"({
  "seed": 5,
  "dataset": {
    "synthetic": {"n_classes": 2, "clips_per_class": 6, "duration_s": 0.5, "noise_level": 0.05},
    "val_fraction": 0.2
  },
  "model": {
    "input_frames": 48,
    "conv": [
      {"filters": 4, "kernel_h": 3, "kernel_w": 3, "stride_h": 2, "stride_w": 2},
      {"filters": 8, "kernel_h": 3, "kernel_w": 3, "stride_h": 2, "stride_w": 2}
    ],
    "fc": [16]
  },
  "train": {"epochs": 3, "batch_size": 8, "p_aug": 0.5},
  "augmentation": {
    "pipeline": ["ate", "specaugment"],
    "ate": {"epsilon": 1.0},
    "specaugment": {"max_freq_width": 6, "max_time_width": 6}
  },
  "eval": {"target_frr": 0.1, "k": 3}
})";

fs::path write_config(const fs::path& dir, const std::string& text) {
    const fs::path path = dir / "config.json";
    std::ofstream os(path);
    os << text;
    return path;
}

} // namespace

TEST_CASE("featurize extracts once and reuses the cache on rerun") {
    const fs::path dir = fresh_dir("featurize");
    const fs::path config = write_config(dir, kTinyConfig);
    const std::string args =
        "featurize --config " + config.string() + " --out " + (dir / "run").string();

    const RunResult first = run_cli(args, dir);
    CHECK(first.exit_code == 0);
    CHECK(first.output.find("12 extracted, 0 cached") != std::string::npos);
    CHECK(first.output.find("stats: mean=") != std::string::npos);
    CHECK(first.output.find("epsilon:") != std::string::npos);

    const RunResult second = run_cli(args, dir);
    CHECK(second.exit_code == 0);
    CHECK(second.output.find("0 extracted, 12 cached") != std::string::npos);
}

TEST_CASE("featurize with a missing manifest exits 1 naming the path") {
    const fs::path dir = fresh_dir("featurize-missing");
    const fs::path config = write_config(dir, R"({"dataset": {"manifest": "/no/such/m.tsv"}})");
    const RunResult r = run_cli(
        "featurize --config " + config.string() + " --out " + (dir / "run").string(), dir);
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("/no/such/m.tsv") != std::string::npos);
}

TEST_CASE("train writes checkpoint, epoch log, summary; echoes the pipeline") {
    const fs::path dir = fresh_dir("train");
    const fs::path config = write_config(dir, kTinyConfig);
    const fs::path out = dir / "run";
    const RunResult r =
        run_cli("train --config " + config.string() + " --out " + out.string(), dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("pipeline: ate -> specaugment") != std::string::npos);
    CHECK(fs::exists(out / "checkpoint.atec"));
    CHECK(fs::exists(out / "epochs.tsv"));
    CHECK(fs::exists(out / "summary.txt"));
    CHECK(fs::exists(out / "config.json"));
    CHECK(fs::exists(out / "versions.txt"));

    const std::string summary = read_text(out / "summary.txt");
    CHECK(summary.find("pipeline_order=A+S") != std::string::npos);
    CHECK(summary.find("seed=5") != std::string::npos);

    const std::string log = read_text(out / "epochs.tsv");
    CHECK(log.find("epoch\ttrain_loss") != std::string::npos);

    const std::string versions = read_text(out / "versions.txt");
    CHECK(versions.find("ate-kws") != std::string::npos);
    CHECK(versions.find("seed 5") != std::string::npos);
}

TEST_CASE("pipeline flag overrides the config file") {
    const fs::path dir = fresh_dir("train-override");
    const fs::path config = write_config(dir, kTinyConfig);
    const fs::path out = dir / "run";
    const RunResult r = run_cli("train --config " + config.string() + " --out " + out.string() +
                                    " --pipeline none",
                                dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("pipeline: none") != std::string::npos);
    CHECK(read_text(out / "summary.txt").find("pipeline_order=none") != std::string::npos);
    CHECK(read_text(out / "summary.txt").find("augmented_batches=0") != std::string::npos);
}

TEST_CASE("eval prints accuracy and FAR at the fixed FRR for binary tasks") {
    const fs::path dir = fresh_dir("eval");
    const fs::path config = write_config(dir, kTinyConfig);
    const fs::path out = dir / "run";
    REQUIRE(run_cli("train --config " + config.string() + " --out " + out.string(), dir)
                .exit_code == 0);
    const RunResult r = run_cli("eval --config " + config.string() + " --out " + out.string() +
                                    " --checkpoint " + (out / "checkpoint.atec").string(),
                                dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("accuracy\t") != std::string::npos);
    CHECK(r.output.find("far_at_frr_0.10\t") != std::string::npos);
    CHECK(fs::exists(out / "curve.tsv"));
    CHECK(read_text(out / "curve.tsv").find("threshold\tfar\tfrr") != std::string::npos);
}

TEST_CASE("eval omits FAR lines for multiclass tasks") {
    const fs::path dir = fresh_dir("eval-multi");
    std::string cfg = kTinyConfig;
    cfg.replace(cfg.find("\"n_classes\": 2"), 14, "\"n_classes\": 3");
    const fs::path config = write_config(dir, cfg);
    const fs::path out = dir / "run";
    REQUIRE(run_cli("train --config " + config.string() + " --out " + out.string() +
                        " --pipeline none",
                    dir)
                .exit_code == 0);
    const RunResult r = run_cli("eval --config " + config.string() + " --out " + out.string() +
                                    " --checkpoint " + (out / "checkpoint.atec").string(),
                                dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("accuracy\t") != std::string::npos);
    CHECK(r.output.find("far_at_frr") == std::string::npos);
}

TEST_CASE("eval exits 1 on class-count mismatch") {
    const fs::path dir = fresh_dir("eval-mismatch");
    const fs::path config2 = write_config(dir, kTinyConfig);
    const fs::path out2 = dir / "run2";
    REQUIRE(run_cli("train --config " + config2.string() + " --out " + out2.string() +
                        " --pipeline none",
                    dir)
                .exit_code == 0);

    std::string cfg3 = kTinyConfig;
    cfg3.replace(cfg3.find("\"n_classes\": 2"), 14, "\"n_classes\": 3");
    const fs::path dir3 = fresh_dir("eval-mismatch-3");
    const fs::path config3 = write_config(dir3, cfg3);
    const RunResult r = run_cli("eval --config " + config3.string() + " --out " +
                                    (dir3 / "run").string() + " --checkpoint " +
                                    (out2 / "checkpoint.atec").string(),
                                dir3);
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("classes") != std::string::npos);
}

TEST_CASE("eval --kfold reports per-fold accuracy and mean±std") {
    const fs::path dir = fresh_dir("kfold");
    std::string cfg = kTinyConfig;
    cfg.replace(cfg.find("\"epochs\": 3"), 11, "\"epochs\": 2");
    const fs::path config = write_config(dir, cfg);
    const fs::path out = dir / "run";
    REQUIRE(run_cli("train --config " + config.string() + " --out " + out.string() +
                        " --pipeline none",
                    dir)
                .exit_code == 0);
    const RunResult r = run_cli("eval --config " + config.string() + " --out " + out.string() +
                                    " --checkpoint " + (out / "checkpoint.atec").string() +
                                    " --kfold",
                                dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("fold_0_accuracy") != std::string::npos);
    CHECK(r.output.find("fold_2_accuracy") != std::string::npos);
    CHECK(r.output.find("accuracy_mean_std\t") != std::string::npos);
    CHECK(r.output.find("±") != std::string::npos);
}

TEST_CASE("preview triplets satisfy original + delta == augmented bit-exactly") {
    const fs::path dir = fresh_dir("preview");
    const fs::path config = write_config(dir, kTinyConfig);
    const fs::path out = dir / "run";
    REQUIRE(run_cli("train --config " + config.string() + " --out " + out.string(), dir)
                .exit_code == 0);
    const RunResult r = run_cli("preview --config " + config.string() + " --out " + out.string() +
                                    " --checkpoint " + (out / "checkpoint.atec").string() +
                                    " -n 2",
                                dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("wrote 4 triplets") != std::string::npos);

    int verified = 0;
    for (const auto& f : fs::directory_iterator(out / "preview")) {
        const std::string name = f.path().filename().string();
        if (name.find("_orig.lfbe") == std::string::npos) continue;
        const std::string base = name.substr(0, name.size() - std::string("_orig.lfbe").size());
        auto load = [&](const std::string& suffix) {
            std::ifstream is(out / "preview" / (base + suffix), std::ios::binary);
            const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                             std::istreambuf_iterator<char>());
            return ate::deserialize_features(bytes).matrix;
        };
        const ate::Tensor orig = load("_orig.lfbe");
        const ate::Tensor delta = load("_delta.lfbe");
        const ate::Tensor aug = load("_aug.lfbe");
        REQUIRE(orig.shape == delta.shape);
        REQUIRE(orig.shape == aug.shape);
        for (int64_t i = 0; i < orig.size(); ++i) REQUIRE(orig[i] + delta[i] == aug[i]);
        ++verified;
        // The PGM files exist alongside the raw matrices.
        CHECK(fs::exists(out / "preview" / (base + "_orig.pgm")));
        CHECK(fs::exists(out / "preview" / (base + "_delta.pgm")));
        CHECK(fs::exists(out / "preview" / (base + "_aug.pgm")));
    }
    CHECK(verified == 4);
}

TEST_CASE("preview with epsilon 0 renders a uniformly mid-gray delta") {
    const fs::path dir = fresh_dir("preview-eps0");
    std::string cfg = kTinyConfig;
    cfg.replace(cfg.find("\"ate\": {\"epsilon\": 1.0}"), 23, "\"ate\": {\"epsilon\": 0.0}");
    const fs::path config = write_config(dir, cfg);
    const fs::path out = dir / "run";
    REQUIRE(run_cli("train --config " + config.string() + " --out " + out.string() +
                        " --pipeline none",
                    dir)
                .exit_code == 0);
    const RunResult r = run_cli("preview --config " + config.string() + " --out " + out.string() +
                                    " --checkpoint " + (out / "checkpoint.atec").string() +
                                    " -n 1 --pipeline ate",
                                dir);
    REQUIRE(r.exit_code == 0);
    bool found = false;
    for (const auto& f : fs::directory_iterator(out / "preview")) {
        const std::string name = f.path().filename().string();
        if (name.find("_ate_delta.pgm") == std::string::npos) continue;
        found = true;
        std::ifstream is(f.path());
        std::string magic;
        int w, h, maxval;
        is >> magic >> w >> h >> maxval;
        REQUIRE(magic == "P2");
        int v;
        while (is >> v) CHECK(v == 128);
    }
    CHECK(found);
}

TEST_CASE("bench prints a four-row table with one-decimal seconds and the ratio") {
    const fs::path dir = fresh_dir("bench");
    std::string cfg = kTinyConfig;
    cfg.replace(cfg.find("\"epochs\": 3"), 11, "\"epochs\": 1");
    const fs::path config = write_config(dir, cfg);
    const RunResult r = run_cli(
        "bench --config " + config.string() + " --out " + (dir / "run").string(), dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("pipeline") != std::string::npos);
    for (const char* row : {"none", "specaugment", "ate", "ate+specaugment"})
        CHECK(r.output.find(row) != std::string::npos);
    CHECK(r.output.find("ate/none ratio:") != std::string::npos);
}

TEST_CASE("divergent training exits with code 2") {
    const fs::path dir = fresh_dir("diverge");
    std::string cfg = kTinyConfig;
    cfg.replace(cfg.find("\"train\": {\"epochs\": 3, \"batch_size\": 8"),
                std::string("\"train\": {\"epochs\": 3, \"batch_size\": 8").size(),
                "\"train\": {\"epochs\": 3, \"batch_size\": 8, \"lr0\": 1e12");
    const fs::path config = write_config(dir, cfg);
    const RunResult r = run_cli(
        "train --config " + config.string() + " --out " + (dir / "run").string(), dir);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("non-finite") != std::string::npos);
}

TEST_CASE("commands without a config exit 1") {
    const fs::path dir = fresh_dir("no-config");
    const RunResult r = run_cli("featurize --out " + (dir / "run").string(), dir);
    CHECK(r.exit_code == 1);
}
