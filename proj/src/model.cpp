#include "ate/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ate/rng.hpp"

namespace ate {

namespace {

void wr_u16(std::ostream& os, uint16_t v) {
    const uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void wr_u32(std::ostream& os, uint32_t v) {
    const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                          static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void wr_u64(std::ostream& os, uint64_t v) {
    wr_u32(os, static_cast<uint32_t>(v));
    wr_u32(os, static_cast<uint32_t>(v >> 32));
}

uint16_t rd_u16(std::istream& is) {
    uint8_t b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw FormatError("checkpoint: truncated file");
    return static_cast<uint16_t>(b[0] | b[1] << 8);
}

uint32_t rd_u32(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint64_t rd_u64(std::istream& is) {
    const uint64_t lo = rd_u32(is);
    const uint64_t hi = rd_u32(is);
    return lo | hi << 32;
}

} // namespace

ModelConfig ModelConfig::defaults(int n_classes, int input_frames) {
    ModelConfig c;
    c.input_frames = input_frames;
    c.input_mels = 64;
    c.conv = {{16, 5, 5, 2, 2}, {32, 3, 3, 2, 2}, {64, 3, 3, 2, 2}, {64, 3, 3, 2, 2},
              {128, 3, 3, 1, 1}};
    c.n_classes = n_classes;
    c.fc = {512, 256, n_classes};
    return c;
}

ModelConfig ModelConfig::tiny(int n_classes, int input_frames, int input_mels) {
    ModelConfig c;
    c.input_frames = input_frames;
    c.input_mels = input_mels;
    c.conv = {{4, 3, 3, 2, 2}, {8, 3, 3, 2, 2}};
    c.n_classes = n_classes;
    c.fc = {16, n_classes};
    return c;
}

void ModelConfig::validate() const {
    if (input_frames < 1 || input_mels < 1) throw ConfigError("model: input dims must be positive");
    if (conv.empty() || fc.empty()) throw ConfigError("model: need at least one conv and one fc layer");
    if (n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
    if (fc.back() != n_classes)
        throw ConfigError("model: last fc dim " + std::to_string(fc.back()) + " != n_classes " +
                          std::to_string(n_classes));
    for (size_t i = 0; i < conv.size(); ++i) {
        const auto& l = conv[i];
        if (l.filters < 1 || l.kernel_h < 1 || l.kernel_w < 1 || l.stride_h < 1 || l.stride_w < 1)
            throw ConfigError("model: conv" + std::to_string(i + 1) +
                              " has non-positive filters/kernel/stride");
    }
    for (size_t i = 0; i + 1 < fc.size(); ++i)
        if (fc[i] < 1) throw ConfigError("model: fc" + std::to_string(i + 1) + " dim must be positive");
    const auto dims = spatial_dims();
    for (size_t i = 0; i < dims.size(); ++i)
        if (dims[i][0] < 1 || dims[i][1] < 1)
            throw ConfigError("model: conv" + std::to_string(i + 1) + " collapses spatial dims to " +
                              std::to_string(dims[i][0]) + "x" + std::to_string(dims[i][1]));
}

std::vector<std::array<int, 2>> ModelConfig::spatial_dims() const {
    std::vector<std::array<int, 2>> dims;
    int h = input_frames, w = input_mels;
    for (const auto& l : conv) {
        h = (h + l.stride_h - 1) / l.stride_h;  // ceil, same padding
        w = (w + l.stride_w - 1) / l.stride_w;
        dims.push_back({h, w});
    }
    return dims;
}

int ModelConfig::flat_dim() const {
    const auto dims = spatial_dims();
    return conv.back().filters * dims.back()[0] * dims.back()[1];
}

int64_t ModelConfig::param_count() const {
    int64_t total = 0;
    for (const auto& [name, shape] : expected_parameter_shapes(*this)) total += shape_size(shape);
    return total;
}

std::string ModelConfig::canonical_text() const {
    std::ostringstream os;
    os << "input_frames=" << input_frames << "\n";
    os << "input_mels=" << input_mels << "\n";
    os << "n_classes=" << n_classes << "\n";
    os << "conv=";
    for (size_t i = 0; i < conv.size(); ++i) {
        const auto& l = conv[i];
        os << (i ? "," : "") << l.filters << "x" << l.kernel_h << "x" << l.kernel_w << "s"
           << l.stride_h << "x" << l.stride_w;
    }
    os << "\nfc=";
    for (size_t i = 0; i < fc.size(); ++i) os << (i ? "," : "") << fc[i];
    os << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig c;
    c.conv.clear();
    c.fc.clear();
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("model config: line " + std::to_string(line_no) + ": missing '='");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "input_frames")
                c.input_frames = std::stoi(val);
            else if (key == "input_mels")
                c.input_mels = std::stoi(val);
            else if (key == "n_classes")
                c.n_classes = std::stoi(val);
            else if (key == "conv") {
                std::istringstream vs(val);
                std::string item;
                while (std::getline(vs, item, ',')) {
                    ConvLayerConfig l;
                    if (std::sscanf(item.c_str(), "%dx%dx%ds%dx%d", &l.filters, &l.kernel_h,
                                    &l.kernel_w, &l.stride_h, &l.stride_w) != 5)
                        throw ParseError("model config: line " + std::to_string(line_no) +
                                         ": bad conv layer '" + item + "'");
                    c.conv.push_back(l);
                }
            } else if (key == "fc") {
                std::istringstream vs(val);
                std::string item;
                while (std::getline(vs, item, ',')) c.fc.push_back(std::stoi(item));
            } else {
                throw ParseError("model config: line " + std::to_string(line_no) + ": unknown key '" +
                                 key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ParseError("model config: line " + std::to_string(line_no) + ": bad number in '" +
                             val + "'");
        }
    }
    c.validate();
    return c;
}

std::vector<std::pair<std::string, Shape>> expected_parameter_shapes(const ModelConfig& config) {
    std::vector<std::pair<std::string, Shape>> out;
    int ch = 1;
    for (size_t i = 0; i < config.conv.size(); ++i) {
        const auto& l = config.conv[i];
        const std::string prefix = "conv" + std::to_string(i + 1);
        out.emplace_back(prefix + ".weight", Shape{l.filters, ch, l.kernel_h, l.kernel_w});
        out.emplace_back(prefix + ".bias", Shape{l.filters});
        ch = l.filters;
    }
    int in_dim = config.flat_dim();
    for (size_t i = 0; i < config.fc.size(); ++i) {
        const std::string prefix = "fc" + std::to_string(i + 1);
        out.emplace_back(prefix + ".weight", Shape{in_dim, config.fc[i]});
        out.emplace_back(prefix + ".bias", Shape{config.fc[i]});
        in_dim = config.fc[i];
    }
    return out;
}

ModelParameters build_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, 0x6d6f64656cull));  // "model"
    ModelParameters params;
    for (const auto& [name, shape] : expected_parameter_shapes(config)) {
        Tensor t = Tensor::zeros(shape);
        if (name.ends_with(".weight")) {
            // He-uniform: fan_in is ci*kh*kw for conv [co,ci,kh,kw], in_dim for fc [in,out].
            const int64_t fan_in = (shape.size() == 4)
                                       ? static_cast<int64_t>(shape[1]) * shape[2] * shape[3]
                                       : shape[0];
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : t.data) v = static_cast<float>(rng.uniform(-limit, limit));
        }
        params.emplace(name, std::move(t));
    }
    return params;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    ckpt.config.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open for writing: " + path.string());
    os.write("ATEC", 4);
    wr_u32(os, 1);
    wr_u32(os, ckpt.epoch);
    uint64_t metric_bits;
    std::memcpy(&metric_bits, &ckpt.metric, 8);
    wr_u64(os, metric_bits);
    wr_u64(os, ckpt.seed);
    const std::string cfg = ckpt.config.canonical_text();
    wr_u32(os, static_cast<uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    wr_u32(os, static_cast<uint32_t>(ckpt.parameters.size()));
    for (const auto& [name, tensor] : ckpt.parameters) {
        wr_u16(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(tensor.ndim()));
        for (int d : tensor.shape) wr_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(tensor.data.data()),
                 static_cast<std::streamsize>(tensor.data.size() * 4));
    }
    if (!os) throw FormatError("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ATEC", 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path.string());
    const uint32_t version = rd_u32(is);
    if (version != 1) throw VersionError("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.epoch = rd_u32(is);
    const uint64_t metric_bits = rd_u64(is);
    std::memcpy(&ckpt.metric, &metric_bits, 8);
    ckpt.seed = rd_u64(is);

    const uint32_t cfg_len = rd_u32(is);
    std::string cfg(cfg_len, '\0');
    is.read(cfg.data(), cfg_len);
    if (!is) throw FormatError("checkpoint: truncated config text");
    ckpt.config = ModelConfig::from_text(cfg);

    const uint32_t n_tensors = rd_u32(is);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        const uint16_t name_len = rd_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const int ndim = is.get();
        if (!is || ndim <= 0 || ndim > 8) throw FormatError("checkpoint: bad tensor rank");
        Shape shape(static_cast<size_t>(ndim));
        for (auto& d : shape) d = static_cast<int>(rd_u32(is));
        Tensor t = Tensor::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
        if (!is) throw FormatError("checkpoint: truncated tensor payload for " + name);
        ckpt.parameters.emplace(std::move(name), std::move(t));
    }

    // Cross-check the tensor map against the declared config.
    const auto expected = expected_parameter_shapes(ckpt.config);
    if (expected.size() != ckpt.parameters.size())
        throw IntegrityError("checkpoint: config declares " + std::to_string(expected.size()) +
                             " tensors, file carries " + std::to_string(ckpt.parameters.size()));
    for (const auto& [name, shape] : expected) {
        auto it = ckpt.parameters.find(name);
        if (it == ckpt.parameters.end()) throw IntegrityError("checkpoint: missing tensor " + name);
        if (it->second.shape != shape)
            throw IntegrityError("checkpoint: tensor " + name + " has shape " +
                                 shape_str(it->second.shape) + ", config implies " + shape_str(shape));
    }
    return ckpt;
}

} // namespace ate
