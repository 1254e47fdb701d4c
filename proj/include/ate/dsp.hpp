#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ate/tensor.hpp"

namespace ate {

/// Mono PCM audio normalized to [-1, 1].
struct AudioClip {
    std::vector<float> samples;
    int sample_rate = 16000;
};

/// Log mel-filterbank front end settings. Defaults are the usual 16 kHz
/// keyword-spotting front end: 64 mels over 25 ms frames with a 10 ms shift.
struct FeatureConfig {
    int n_mels = 64;
    int frame_ms = 25;
    int hop_ms = 10;
    int fft_size = 512;
    double mel_low_hz = 20.0;
    double mel_high_hz = 7600.0;
    double log_floor = 1e-10;

    int frame_samples(int sample_rate) const { return sample_rate * frame_ms / 1000; }
    int hop_samples(int sample_rate) const { return sample_rate * hop_ms / 1000; }

    void validate(int sample_rate) const;
    std::string canonical_text() const;
    uint64_t hash() const;
};

/// frames x n_mels LFBE matrix for one clip.
struct SpectrogramFeatures {
    Tensor matrix;  // [frames, n_mels]
    std::string clip_id;
};

/// Mean / population std over every feature entry of the training split.
struct DatasetStats {
    double mean = 0.0;
    double stddev = 0.0;
    int64_t count = 0;
};

/// Parse a RIFF/WAVE container; accepts only PCM, mono, 16-bit.
AudioClip decode_wav(std::span<const uint8_t> bytes);

/// Serialize a clip as PCM 16-bit mono WAV. Samples are clamped to [-1, 1].
std::vector<uint8_t> encode_wav(const AudioClip& clip);

/// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular mel filters, n_mels x (fft_size/2 + 1) weights.
std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& config, int sample_rate);

/// |FFT|^2 of a zero-padded frame, bins 0..fft_size/2. fft_size must be a
/// power of two and >= frame length.
std::vector<double> power_spectrum(std::span<const double> frame, int fft_size);

/// Hann window -> real FFT -> power spectrum -> mel filterbank -> floored log.
SpectrogramFeatures lfbe_extract(const AudioClip& clip, const FeatureConfig& config,
                                 std::string clip_id = {});

DatasetStats compute_dataset_stats(std::span<const SpectrogramFeatures> features);

/// Feature cache file: magic "LFBE", version u32=1, id length u16 + UTF-8 id,
/// rows u32, cols u32, then rows*cols little-endian f32.
std::vector<uint8_t> serialize_features(const SpectrogramFeatures& f);
SpectrogramFeatures deserialize_features(std::span<const uint8_t> bytes);

} // namespace ate
