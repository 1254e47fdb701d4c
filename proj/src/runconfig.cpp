#include "ate/runconfig.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ate {

namespace {

// Read a field if present; type errors surface as ConfigError.
template <class T>
void get_to(const json& j, const char* key, T& out, const char* section) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + section + "." + key + ": " + e.what());
    }
}

AtePolicy parse_ate(const json& j) {
    AtePolicy p;
    get_to(j, "epsilon", p.epsilon, "augmentation.ate");
    return p;
}

FgsmPolicy parse_fgsm(const json& j) {
    FgsmPolicy p;
    get_to(j, "epsilon", p.epsilon, "augmentation.fgsm");
    return p;
}

SpecAugmentPolicy parse_specaugment(const json& j) {
    SpecAugmentPolicy p;
    get_to(j, "n_freq_masks", p.n_freq_masks, "augmentation.specaugment");
    get_to(j, "max_freq_width", p.max_freq_width, "augmentation.specaugment");
    get_to(j, "n_time_masks", p.n_time_masks, "augmentation.specaugment");
    get_to(j, "max_time_width", p.max_time_width, "augmentation.specaugment");
    get_to(j, "mask_value", p.mask_value, "augmentation.specaugment");
    return p;
}

SpecMixPolicy parse_specmix(const json& j) {
    SpecMixPolicy p;
    get_to(j, "n_freq_masks", p.n_freq_masks, "augmentation.specmix");
    get_to(j, "max_freq_width", p.max_freq_width, "augmentation.specmix");
    get_to(j, "n_time_masks", p.n_time_masks, "augmentation.specmix");
    get_to(j, "max_time_width", p.max_time_width, "augmentation.specmix");
    return p;
}

AugmentStage stage_from_name(const std::string& name, const json& aug_section) {
    const json params = aug_section.contains(name) ? aug_section.at(name) : json::object();
    if (name == "ate") return parse_ate(params);
    if (name == "fgsm") return parse_fgsm(params);
    if (name == "specaugment") return parse_specaugment(params);
    if (name == "specmix") return parse_specmix(params);
    throw ConfigError("config: unknown augmentation stage '" + name + "'");
}

} // namespace

ModelConfig RunConfig::finalize_model(int n_classes) const {
    ModelConfig m = ModelConfig::defaults(n_classes, input_frames);
    if (conv_override) m.conv = *conv_override;
    if (fc_override) {
        m.fc = *fc_override;
        m.fc.push_back(n_classes);
    }
    m.validate();
    return m;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ExistenceError("config: cannot open " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError("config: " + path.string() + ": " + e.what());
    }

    RunConfig c;
    get_to(j, "seed", c.seed, "");

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        get_to(d, "manifest", c.dataset.manifest, "dataset");
        get_to(d, "val_fraction", c.dataset.val_fraction, "dataset");
        get_to(d, "dir", c.dataset.synthetic_dir, "dataset");
        if (d.contains("synthetic")) {
            const json& s = d.at("synthetic");
            SyntheticSpec spec;
            get_to(s, "n_classes", spec.n_classes, "dataset.synthetic");
            get_to(s, "clips_per_class", spec.clips_per_class, "dataset.synthetic");
            get_to(s, "tones", spec.class_tones, "dataset.synthetic");
            get_to(s, "noise_level", spec.noise_level, "dataset.synthetic");
            get_to(s, "duration_s", spec.duration_s, "dataset.synthetic");
            get_to(s, "sample_rate", spec.sample_rate, "dataset.synthetic");
            spec.seed = c.seed;
            if (!s.contains("tones") && spec.n_classes != 2)
                spec.class_tones = SyntheticSpec::default_tones(spec.n_classes);
            c.dataset.synthetic = spec;
        }
    }

    if (j.contains("features")) {
        const json& f = j.at("features");
        get_to(f, "n_mels", c.features.n_mels, "features");
        get_to(f, "frame_ms", c.features.frame_ms, "features");
        get_to(f, "hop_ms", c.features.hop_ms, "features");
        get_to(f, "fft_size", c.features.fft_size, "features");
        get_to(f, "mel_low_hz", c.features.mel_low_hz, "features");
        get_to(f, "mel_high_hz", c.features.mel_high_hz, "features");
        get_to(f, "log_floor", c.features.log_floor, "features");
    }

    if (j.contains("model")) {
        const json& m = j.at("model");
        get_to(m, "input_frames", c.input_frames, "model");
        if (m.contains("conv")) {
            std::vector<ConvLayerConfig> conv;
            for (const auto& layer : m.at("conv")) {
                ConvLayerConfig l;
                get_to(layer, "filters", l.filters, "model.conv");
                get_to(layer, "kernel_h", l.kernel_h, "model.conv");
                get_to(layer, "kernel_w", l.kernel_w, "model.conv");
                get_to(layer, "stride_h", l.stride_h, "model.conv");
                get_to(layer, "stride_w", l.stride_w, "model.conv");
                conv.push_back(l);
            }
            c.conv_override = std::move(conv);
        }
        if (m.contains("fc")) {
            std::vector<int> fc;
            m.at("fc").get_to(fc);
            c.fc_override = std::move(fc);
        }
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        get_to(t, "epochs", c.train.epochs, "train");
        get_to(t, "batch_size", c.train.batch_size, "train");
        get_to(t, "lr0", c.train.lr0, "train");
        get_to(t, "lr_factor", c.train.lr_factor, "train");
        get_to(t, "plateau_epochs", c.train.plateau_epochs, "train");
        get_to(t, "p_aug", c.train.pipeline.p_aug, "train");
        int precision = 32;
        get_to(t, "precision", precision, "train");
        if (precision == 64)
            c.train.precision = Precision::Float64;
        else if (precision != 32)
            throw ConfigError("config: train.precision must be 32 or 64");
    }

    if (j.contains("augmentation")) {
        const json& a = j.at("augmentation");
        if (a.contains("pipeline")) {
            std::vector<std::string> names;
            a.at("pipeline").get_to(names);
            for (const auto& name : names)
                if (name != "none") c.train.pipeline.stages.push_back(stage_from_name(name, a));
        }
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        get_to(e, "target_frr", c.eval.target_frr, "eval");
        get_to(e, "k", c.eval.k, "eval");
    }

    c.train.seed = c.seed;
    if (c.dataset.synthetic) c.dataset.synthetic->seed = c.seed;
    return c;
}

AugmentationPipeline parse_pipeline(const std::string& names, const AugmentationPipeline& reference) {
    AugmentationPipeline out;
    out.p_aug = reference.p_aug;
    std::string item;
    std::istringstream is(names);
    while (std::getline(is, item, ',')) {
        // trim spaces
        const auto a = item.find_first_not_of(" \t");
        const auto b = item.find_last_not_of(" \t");
        if (a == std::string::npos) continue;
        item = item.substr(a, b - a + 1);
        if (item == "none") continue;
        const AugmentStage* match = nullptr;
        for (const auto& stage : reference.stages)
            if (stage_name(stage) == item) {
                match = &stage;
                break;
            }
        if (match) {
            out.stages.push_back(*match);
        } else if (item == "ate") {
            out.stages.push_back(AtePolicy{});
        } else if (item == "fgsm") {
            out.stages.push_back(FgsmPolicy{});
        } else if (item == "specaugment") {
            out.stages.push_back(SpecAugmentPolicy{});
        } else if (item == "specmix") {
            out.stages.push_back(SpecMixPolicy{});
        } else {
            throw ConfigError("pipeline: unknown stage '" + item + "'");
        }
    }
    return out;
}

} // namespace ate
