#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ate/tape.hpp"
#include "ate/tensor.hpp"

namespace ate {

struct ConvLayerConfig {
    int filters = 0;
    int kernel_h = 0, kernel_w = 0;
    int stride_h = 1, stride_w = 1;

    bool operator==(const ConvLayerConfig&) const = default;
};

/// CNN architecture: conv stack (same padding, relu) -> flatten -> fc stack
/// (relu after all but the last). The default profile is 5 conv + 3 fc
/// layers at about 2.1M parameters for a 98x64 input.
struct ModelConfig {
    int input_frames = 98;
    int input_mels = 64;
    std::vector<ConvLayerConfig> conv;
    std::vector<int> fc;  // last entry == n_classes
    int n_classes = 2;

    static ModelConfig defaults(int n_classes = 2, int input_frames = 98);
    /// Two conv + two fc layers on a small input; used by gradient checks.
    static ModelConfig tiny(int n_classes = 2, int input_frames = 8, int input_mels = 8);

    void validate() const;
    int64_t param_count() const;
    /// Spatial dims after each conv layer (same padding, ceil strides).
    std::vector<std::array<int, 2>> spatial_dims() const;
    int flat_dim() const;

    std::string canonical_text() const;
    static ModelConfig from_text(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

/// Ordered name -> tensor map; names run conv1.. then fc1.. in stack order,
/// and std::map keeps serialization order deterministic.
using ModelParameters = std::map<std::string, Tensor>;

/// (name, shape) pairs the config implies, in architecture order.
std::vector<std::pair<std::string, Shape>> expected_parameter_shapes(const ModelConfig& config);

/// He-uniform weights, zero biases, deterministic for a given seed.
ModelParameters build_model(const ModelConfig& config, uint64_t seed);

struct Checkpoint {
    ModelConfig config;
    ModelParameters parameters;
    uint32_t epoch = 0;
    double metric = 0.0;
    uint64_t seed = 0;
};

/// Checkpoint file: magic "ATEC", version u32=1, epoch u32, metric f64,
/// seed u64, length-prefixed canonical config text, tensor count u32, then
/// per tensor: name length u16 + name, ndim u8, dims u32 each, f32 payload.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <class S>
struct ForwardBinding {
    NodeId logits;
    std::map<std::string, NodeId> param_leaves;
};

/// Records the whole network on the tape. `input` must already be a leaf of
/// shape [batch, 1, input_frames, input_mels].
template <class S>
ForwardBinding<S> model_forward(TapeT<S>& tape, const ModelConfig& config,
                                const std::map<std::string, TensorT<S>>& params, NodeId input) {
    config.validate();
    const auto& in = tape.value(input);
    if (in.ndim() != 4 || in.dim(1) != 1 || in.dim(2) != config.input_frames ||
        in.dim(3) != config.input_mels)
        throw DimensionError("model: input " + shape_str(in.shape) + " does not match config [B,1," +
                             std::to_string(config.input_frames) + "," +
                             std::to_string(config.input_mels) + "]");

    ForwardBinding<S> bind;
    auto leaf = [&](const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw ContractError("model: missing parameter " + name);
        NodeId id = tape.param_leaf(it->second);
        bind.param_leaves[name] = id;
        return id;
    };

    NodeId x = input;
    for (size_t i = 0; i < config.conv.size(); ++i) {
        const auto& layer = config.conv[i];
        const std::string prefix = "conv" + std::to_string(i + 1);
        x = tape.conv2d(x, leaf(prefix + ".weight"), leaf(prefix + ".bias"), layer.stride_h,
                        layer.stride_w, Padding::Same, Activation::Relu);
    }
    x = tape.flatten(x);
    for (size_t i = 0; i < config.fc.size(); ++i) {
        const std::string prefix = "fc" + std::to_string(i + 1);
        const Activation act = (i + 1 < config.fc.size()) ? Activation::Relu : Activation::None;
        x = tape.affine(x, leaf(prefix + ".weight"), leaf(prefix + ".bias"), act);
    }
    bind.logits = x;
    return bind;
}

template <class To, class From>
std::map<std::string, TensorT<To>> params_cast(const std::map<std::string, TensorT<From>>& params) {
    std::map<std::string, TensorT<To>> out;
    for (const auto& [name, tensor] : params) out[name] = tensor_cast<To>(tensor);
    return out;
}

} // namespace ate
