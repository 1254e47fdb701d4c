#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "ate/augment.hpp"
#include "ate/data.hpp"
#include "ate/dsp.hpp"
#include "ate/model.hpp"
#include "ate/train.hpp"

namespace ate {

struct DatasetSection {
    std::string manifest;                   // path to a manifest file, or
    std::optional<SyntheticSpec> synthetic; // a generated stand-in dataset
    std::string synthetic_dir;              // defaults to <out>/synth
    double val_fraction = 0.1;
};

struct EvalSection {
    double target_frr = 0.1;
    int k = 5;
};

/// One structured document with a section per subsystem. Flags override
/// file values; file values override defaults.
struct RunConfig {
    DatasetSection dataset;
    FeatureConfig features;
    // Model geometry; n_classes is finalized against the manifest's classes.
    int input_frames = 98;
    std::optional<std::vector<ConvLayerConfig>> conv_override;
    std::optional<std::vector<int>> fc_override;  // hidden dims, without n_classes
    TrainConfig train;
    EvalSection eval;
    uint64_t seed = 0;

    ModelConfig finalize_model(int n_classes) const;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// Order-significant comma-separated stage names ("ate,specaugment"),
/// with per-stage parameters taken from `reference` stages of the same
/// kind when present.
AugmentationPipeline parse_pipeline(const std::string& names,
                                    const AugmentationPipeline& reference);

} // namespace ate
