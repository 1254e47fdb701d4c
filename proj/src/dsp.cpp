#include "ate/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace ate {

namespace {

// --- little-endian byte helpers ------------------------------------------

uint32_t rd_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t rd_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | p[1] << 8);
}

void wr_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

void wr_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void wr_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    wr_u32(out, bits);
}

float rd_f32(const uint8_t* p) {
    uint32_t bits = rd_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

bool tag_is(const uint8_t* p, const char* tag) { return std::memcmp(p, tag, 4) == 0; }

// --- FFT -------------------------------------------------------------------

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT.
void fft_inplace(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

std::vector<double> hann_window(int len) {
    std::vector<double> w(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i)
        w[static_cast<size_t>(i)] =
            0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (len - 1)));
    return w;
}

} // namespace

void FeatureConfig::validate(int sample_rate) const {
    if (n_mels < 1) throw ConfigError("features: n_mels must be >= 1");
    if (frame_ms <= 0 || hop_ms <= 0) throw ConfigError("features: frame_ms and hop_ms must be positive");
    if (!is_pow2(fft_size)) throw ConfigError("features: fft_size must be a power of two, got " +
                                              std::to_string(fft_size));
    if (fft_size < frame_samples(sample_rate))
        throw ConfigError("features: fft_size " + std::to_string(fft_size) + " < frame length " +
                          std::to_string(frame_samples(sample_rate)));
    if (!(mel_low_hz < mel_high_hz) || mel_high_hz > sample_rate / 2.0)
        throw ConfigError("features: need mel_low_hz < mel_high_hz <= sample_rate/2");
    if (log_floor <= 0) throw ConfigError("features: log_floor must be positive");
}

std::string FeatureConfig::canonical_text() const {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "n_mels=%d;frame_ms=%d;hop_ms=%d;fft_size=%d;window=hann;"
                  "mel_low_hz=%.17g;mel_high_hz=%.17g;log_floor=%.17g",
                  n_mels, frame_ms, hop_ms, fft_size, mel_low_hz, mel_high_hz, log_floor);
    return buf;
}

uint64_t FeatureConfig::hash() const {
    // FNV-1a over the canonical text.
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : canonical_text()) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

AudioClip decode_wav(std::span<const uint8_t> bytes) {
    if (bytes.size() < 12) throw ParseError("wav: truncated header (" + std::to_string(bytes.size()) + " bytes)");
    const uint8_t* p = bytes.data();
    if (!tag_is(p, "RIFF") || !tag_is(p + 8, "WAVE")) throw ParseError("wav: not a RIFF/WAVE container");

    bool have_fmt = false;
    uint16_t audio_format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    const uint8_t* data_ptr = nullptr;
    uint32_t data_size = 0;

    size_t off = 12;
    while (off + 8 <= bytes.size()) {
        const uint8_t* chunk = p + off;
        const uint32_t size = rd_u32(chunk + 4);
        if (off + 8 + size > bytes.size())
            throw ParseError("wav: chunk overruns file at offset " + std::to_string(off));
        if (tag_is(chunk, "fmt ")) {
            if (size < 16) throw ParseError("wav: fmt chunk too small");
            audio_format = rd_u16(chunk + 8);
            channels = rd_u16(chunk + 10);
            sample_rate = rd_u32(chunk + 12);
            bits = rd_u16(chunk + 22);
            have_fmt = true;
        } else if (tag_is(chunk, "data")) {
            data_ptr = chunk + 8;
            data_size = size;
        }
        off += 8 + size + (size & 1);  // chunks are word-aligned
    }
    if (!have_fmt) throw ParseError("wav: missing fmt chunk");
    if (data_ptr == nullptr) throw ParseError("wav: missing data chunk");
    if (audio_format != 1) throw UnsupportedFormatError("wav: audio_format=" + std::to_string(audio_format));
    if (channels != 1) throw UnsupportedFormatError("wav: channels=" + std::to_string(channels));
    if (bits != 16) throw UnsupportedFormatError("wav: bits_per_sample=" + std::to_string(bits));

    AudioClip clip;
    clip.sample_rate = static_cast<int>(sample_rate);
    const size_t n = data_size / 2;
    clip.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const int16_t s = static_cast<int16_t>(rd_u16(data_ptr + 2 * i));
        clip.samples[i] = static_cast<float>(s) / 32768.0f;
    }
    return clip;
}

std::vector<uint8_t> encode_wav(const AudioClip& clip) {
    const uint32_t n = static_cast<uint32_t>(clip.samples.size());
    const uint32_t data_bytes = n * 2;
    std::vector<uint8_t> out;
    out.reserve(44 + data_bytes);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    wr_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    wr_u32(out, 16);
    wr_u16(out, 1);  // PCM
    wr_u16(out, 1);  // mono
    wr_u32(out, static_cast<uint32_t>(clip.sample_rate));
    wr_u32(out, static_cast<uint32_t>(clip.sample_rate) * 2);
    wr_u16(out, 2);
    wr_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    wr_u32(out, data_bytes);
    for (float v : clip.samples) {
        const double c = std::clamp(static_cast<double>(v), -1.0, 1.0);
        const auto s = static_cast<int16_t>(std::lrint(c * 32767.0));
        wr_u16(out, static_cast<uint16_t>(s));
    }
    return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& config, int sample_rate) {
    const int bins = config.fft_size / 2 + 1;
    const double bin_hz = static_cast<double>(sample_rate) / config.fft_size;
    const double mel_lo = hz_to_mel(config.mel_low_hz);
    const double mel_hi = hz_to_mel(config.mel_high_hz);
    std::vector<double> edges(static_cast<size_t>(config.n_mels) + 2);
    for (int j = 0; j < config.n_mels + 2; ++j)
        edges[static_cast<size_t>(j)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * j / (config.n_mels + 1));

    std::vector<std::vector<double>> fb(static_cast<size_t>(config.n_mels),
                                        std::vector<double>(static_cast<size_t>(bins), 0.0));
    for (int m = 0; m < config.n_mels; ++m) {
        const double lo = edges[static_cast<size_t>(m)];
        const double mid = edges[static_cast<size_t>(m) + 1];
        const double hi = edges[static_cast<size_t>(m) + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f > lo && f < hi)
                w = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            fb[static_cast<size_t>(m)][static_cast<size_t>(k)] = std::max(w, 0.0);
        }
    }
    return fb;
}

std::vector<double> power_spectrum(std::span<const double> frame, int fft_size) {
    if (!is_pow2(fft_size)) throw ConfigError("power_spectrum: fft_size must be a power of two");
    if (static_cast<int>(frame.size()) > fft_size)
        throw DimensionError("power_spectrum: frame length " + std::to_string(frame.size()) +
                             " exceeds fft_size " + std::to_string(fft_size));
    std::vector<std::complex<double>> buf(static_cast<size_t>(fft_size), {0.0, 0.0});
    for (size_t i = 0; i < frame.size(); ++i) buf[i] = {frame[i], 0.0};
    fft_inplace(buf);
    std::vector<double> power(static_cast<size_t>(fft_size / 2 + 1));
    for (int k = 0; k <= fft_size / 2; ++k) power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
    return power;
}

SpectrogramFeatures lfbe_extract(const AudioClip& clip, const FeatureConfig& config,
                                 std::string clip_id) {
    config.validate(clip.sample_rate);
    const int frame_len = config.frame_samples(clip.sample_rate);
    const int hop = config.hop_samples(clip.sample_rate);
    const int n = static_cast<int>(clip.samples.size());
    if (n < frame_len)
        throw ValidationError("lfbe: clip too short: " + std::to_string(n) + " samples < frame " +
                              std::to_string(frame_len));
    const int frames = 1 + (n - frame_len) / hop;

    const std::vector<double> window = hann_window(frame_len);
    const auto fb = mel_filterbank(config, clip.sample_rate);

    SpectrogramFeatures out;
    out.clip_id = std::move(clip_id);
    out.matrix = Tensor::zeros({frames, config.n_mels});
    std::vector<double> frame(static_cast<size_t>(frame_len));
    for (int t = 0; t < frames; ++t) {
        const size_t start = static_cast<size_t>(t) * hop;
        for (int i = 0; i < frame_len; ++i)
            frame[static_cast<size_t>(i)] =
                static_cast<double>(clip.samples[start + static_cast<size_t>(i)]) *
                window[static_cast<size_t>(i)];
        const std::vector<double> power = power_spectrum(frame, config.fft_size);
        for (int m = 0; m < config.n_mels; ++m) {
            double e = 0.0;
            const auto& w = fb[static_cast<size_t>(m)];
            for (size_t k = 0; k < power.size(); ++k) e += w[k] * power[k];
            out.matrix.at2(t, m) = static_cast<float>(std::log(std::max(e, config.log_floor)));
        }
    }
    return out;
}

DatasetStats compute_dataset_stats(std::span<const SpectrogramFeatures> features) {
    if (features.empty()) throw EmptyInputError("dataset stats: empty feature collection");
    // Two-pass mean/variance; the test oracle uses single-pass sums instead.
    int64_t count = 0;
    double sum = 0.0;
    for (const auto& f : features) {
        count += f.matrix.size();
        for (float v : f.matrix.data) sum += static_cast<double>(v);
    }
    if (count == 0) throw EmptyInputError("dataset stats: features contain no entries");
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (const auto& f : features)
        for (float v : f.matrix.data) {
            const double d = static_cast<double>(v) - mean;
            sq += d * d;
        }
    DatasetStats stats;
    stats.mean = mean;
    stats.stddev = std::sqrt(sq / static_cast<double>(count));  // population std
    stats.count = count;
    return stats;
}

std::vector<uint8_t> serialize_features(const SpectrogramFeatures& f) {
    if (f.matrix.ndim() != 2)
        throw DimensionError("features: expected 2-d matrix, got " + shape_str(f.matrix.shape));
    if (f.clip_id.size() > 0xffff) throw ValidationError("features: clip id longer than 65535 bytes");
    std::vector<uint8_t> out;
    out.insert(out.end(), {'L', 'F', 'B', 'E'});
    wr_u32(out, 1);
    wr_u16(out, static_cast<uint16_t>(f.clip_id.size()));
    out.insert(out.end(), f.clip_id.begin(), f.clip_id.end());
    wr_u32(out, static_cast<uint32_t>(f.matrix.dim(0)));
    wr_u32(out, static_cast<uint32_t>(f.matrix.dim(1)));
    for (float v : f.matrix.data) wr_f32(out, v);
    return out;
}

SpectrogramFeatures deserialize_features(std::span<const uint8_t> bytes) {
    if (bytes.size() < 10) throw FormatError("features: file truncated");
    const uint8_t* p = bytes.data();
    if (!tag_is(p, "LFBE")) throw FormatError("features: bad magic");
    const uint32_t version = rd_u32(p + 4);
    if (version != 1) throw VersionError("features: unsupported version " + std::to_string(version));
    const uint16_t id_len = rd_u16(p + 8);
    size_t off = 10;
    if (bytes.size() < off + id_len + 8) throw FormatError("features: file truncated");
    SpectrogramFeatures f;
    f.clip_id.assign(reinterpret_cast<const char*>(p + off), id_len);
    off += id_len;
    const uint32_t rows = rd_u32(p + off);
    const uint32_t cols = rd_u32(p + off + 4);
    off += 8;
    const size_t need = static_cast<size_t>(rows) * cols * 4;
    if (bytes.size() < off + need) throw FormatError("features: payload truncated");
    f.matrix = Tensor::zeros({static_cast<int>(rows), static_cast<int>(cols)});
    for (size_t i = 0; i < static_cast<size_t>(rows) * cols; ++i)
        f.matrix.data[i] = rd_f32(p + off + 4 * i);
    return f;
}

} // namespace ate
