#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace ate {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Flags shared by every subcommand; flag > config file > default.
struct CommandOptions {
    std::filesystem::path config_path;
    std::filesystem::path out_dir = "run";
    std::optional<uint64_t> seed;
    std::optional<std::string> pipeline;  // comma-separated stage names
};

/// Exit codes: 0 success, 1 configuration/validation, 2 runtime divergence.
int cmd_featurize(const CommandOptions& opts);
int cmd_train(const CommandOptions& opts);
int cmd_eval(const CommandOptions& opts, const std::filesystem::path& checkpoint, bool kfold);
int cmd_preview(const CommandOptions& opts, const std::filesystem::path& checkpoint, int count);
int cmd_bench(const CommandOptions& opts);

/// Build a manifest from an audio tree the user fetched by hand
/// (esc50-style names or one-directory-per-class).
int cmd_manifest(const std::filesystem::path& audio_dir, const std::string& format,
                 const std::filesystem::path& out_file, const std::filesystem::path& val_list,
                 const std::filesystem::path& test_list);

} // namespace ate
