#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ate/dsp.hpp"
#include "ate/tensor.hpp"

namespace ate {

struct ManifestEntry {
    std::string clip_id;
    std::string path;   // as written in the manifest; resolve against Manifest::dir
    std::string label;
    int fold = -1;             // optional, -1 = none
    std::string split;         // optional: train | val | test, empty = none
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> classes;  // sorted label set
    std::filesystem::path dir;         // directory the manifest was loaded from

    int class_index(const std::string& label) const;
    std::filesystem::path resolve_path(const ManifestEntry& entry) const;
};

/// Manifest file: UTF-8, one record per line, tab-separated key=value fields:
/// id, path, label, optional fold, optional split.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Per-epoch shuffled index batches; the final partial batch is kept.
std::vector<std::vector<int>> make_batches(int n, int batch_size, uint64_t seed, int epoch);

/// Seeded stratified train/val split for entries that carry no split yet.
void assign_splits(Manifest& manifest, double val_fraction, uint64_t seed);

/// Desk-scale stand-in dataset: per class, a disjoint set of tone
/// frequencies; clips are tone sums with random phase plus Gaussian noise,
/// peak-normalized to 0.9.
struct SyntheticSpec {
    int n_classes = 2;
    int clips_per_class = 32;
    std::vector<std::vector<double>> class_tones = {{400.0, 800.0}, {2000.0, 3000.0}};
    double noise_level = 0.05;
    double duration_s = 1.0;
    int sample_rate = 16000;
    uint64_t seed = 0;

    void validate() const;
    /// Disjoint two-tone sets spread over the band, one per class.
    static std::vector<std::vector<double>> default_tones(int n_classes);
};

/// Writes WAV files plus manifest.tsv under dir; returns the loaded manifest.
Manifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

/// Build a manifest from an existing audio tree. Two layouts:
///  - "esc50": flat directory of {FOLD}-{SOURCE}-{TAKE}-{TARGET}.wav files;
///    folds become 0-based, labels are zero-padded target ids ("c07").
///  - "dirs": one subdirectory per class label; optional val/test list files
///    (one "label/file.wav" per line, speech-commands style) assign splits.
struct ManifestBuilderOptions {
    std::filesystem::path audio_dir;
    std::string format = "dirs";
    std::filesystem::path val_list;   // optional
    std::filesystem::path test_list;  // optional
};

Manifest build_manifest(const ManifestBuilderOptions& options);

/// Extract-once feature store keyed by (clip_id, feature-config hash).
/// Corrupt or stale entries are re-extracted; a warning goes to stderr.
class FeatureCache {
public:
    FeatureCache(std::filesystem::path dir, FeatureConfig config);
    ~FeatureCache();
    FeatureCache(const FeatureCache&) = delete;
    FeatureCache& operator=(const FeatureCache&) = delete;

    /// Cached features for one manifest entry, extracting on miss.
    SpectrogramFeatures get(const Manifest& manifest, const ManifestEntry& entry);

    /// Persist the index now; also happens on destruction and periodically
    /// during bulk extraction.
    void flush();

    int extracted() const { return extracted_; }
    int hits() const { return hits_; }

private:
    struct IndexEntry {
        std::string hash_hex;
        std::string filename;
    };

    std::filesystem::path dir_;
    FeatureConfig config_;
    std::string config_hash_;
    std::unordered_map<std::string, IndexEntry> index_;
    int extracted_ = 0;
    int hits_ = 0;
    int unsaved_ = 0;

    void load_index();
    std::string file_for(const std::string& clip_id) const;
};

/// In-memory featurized dataset ready for batching.
struct FeatureDataset {
    std::vector<Tensor> features;  // each [frames, mels]
    std::vector<int> labels;
    std::vector<std::string> clip_ids;
    std::vector<int> folds;
    int n_classes = 0;
};

/// Crop or right-pad (with pad_value) to exactly target_frames rows.
Tensor fit_frames(const Tensor& features, int target_frames, float pad_value);

/// In-place global normalization: (v - mean) / std. Zero std leaves values
/// mean-centered.
void normalize_features(FeatureDataset& dataset, const DatasetStats& stats);

} // namespace ate
