#include <cmath>
#include <cstring>

#include <doctest.h>

#include "ate/dsp.hpp"
#include "ate/rng.hpp"
#include "oracles.hpp"

using namespace ate;

namespace {

AudioClip tone_clip(double freq, double amplitude, double seconds = 1.0, int sr = 16000) {
    AudioClip clip;
    clip.sample_rate = sr;
    const int n = static_cast<int>(seconds * sr);
    clip.samples.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        clip.samples[static_cast<size_t>(i)] =
            static_cast<float>(amplitude * std::sin(2.0 * M_PI * freq * i / sr));
    return clip;
}

std::vector<uint8_t> wav_with_channels(uint16_t channels) {
    AudioClip clip;
    clip.samples.assign(100, 0.0f);
    std::vector<uint8_t> bytes = encode_wav(clip);
    bytes[22] = static_cast<uint8_t>(channels);  // fmt.channels
    return bytes;
}

} // namespace

TEST_CASE("decode_wav int16 normalization") {
    AudioClip clip;
    clip.samples = {0.0f, 0.0f};
    auto bytes = encode_wav(clip);
    // Overwrite the two data samples with the extreme int16 values.
    bytes[44] = 0xff;
    bytes[45] = 0x7f;  // 32767
    bytes[46] = 0x00;
    bytes[47] = 0x80;  // -32768
    const AudioClip back = decode_wav(bytes);
    REQUIRE(back.samples.size() == 2);
    CHECK(back.samples[0] == doctest::Approx(0.99997).epsilon(1e-4));
    CHECK(back.samples[1] == -1.0f);
    CHECK(back.sample_rate == 16000);
}

TEST_CASE("decode_wav rejects stereo naming the field") {
    const auto bytes = wav_with_channels(2);
    CHECK_THROWS_AS(decode_wav(bytes), UnsupportedFormatError);
    try {
        decode_wav(bytes);
    } catch (const UnsupportedFormatError& e) {
        CHECK(std::string(e.what()).find("channels=2") != std::string::npos);
    }
}

TEST_CASE("decode_wav rejects truncated header") {
    const std::vector<uint8_t> tiny = {'R', 'I', 'F', 'F'};
    CHECK_THROWS_AS(decode_wav(tiny), ParseError);

    auto bytes = encode_wav(tone_clip(100.0, 0.1, 0.01));
    bytes.resize(30);  // cuts into the fmt chunk
    CHECK_THROWS_AS(decode_wav(bytes), ParseError);
}

TEST_CASE("decode_wav rejects non-PCM and wrong bit depth") {
    auto non_pcm = encode_wav(tone_clip(100.0, 0.1, 0.01));
    non_pcm[20] = 3;  // IEEE float format tag
    CHECK_THROWS_AS(decode_wav(non_pcm), UnsupportedFormatError);

    auto eight_bit = encode_wav(tone_clip(100.0, 0.1, 0.01));
    eight_bit[34] = 8;
    try {
        decode_wav(eight_bit);
        FAIL("expected error");
    } catch (const UnsupportedFormatError& e) {
        CHECK(std::string(e.what()).find("bits_per_sample=8") != std::string::npos);
    }
}

TEST_CASE("lfbe frame count: one second at 16 kHz gives 98 x 64") {
    const FeatureConfig config;
    const auto f = lfbe_extract(tone_clip(440.0, 0.5), config, "tone");
    CHECK(f.matrix.shape == Shape{98, 64});
    CHECK(f.clip_id == "tone");
}

TEST_CASE("lfbe frame count formula over random lengths") {
    const FeatureConfig config;
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 400 + static_cast<int>(rng.uniform_int(32000));
        AudioClip clip;
        clip.samples.assign(static_cast<size_t>(n), 0.01f);
        const auto f = lfbe_extract(clip, config);
        CHECK(f.matrix.dim(0) == 1 + (n - 400) / 160);
    }
}

TEST_CASE("lfbe on silence hits the log floor everywhere") {
    const FeatureConfig config;
    AudioClip clip;
    clip.samples.assign(16000, 0.0f);
    const auto f = lfbe_extract(clip, config);
    const float expected = static_cast<float>(std::log(1e-10));
    for (float v : f.matrix.data) CHECK(v == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("lfbe rejects clips shorter than one frame") {
    const FeatureConfig config;
    AudioClip clip;
    clip.samples.assign(399, 0.1f);
    CHECK_THROWS_AS(lfbe_extract(clip, config), ValidationError);
    try {
        lfbe_extract(clip, config);
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("399") != std::string::npos);
        CHECK(msg.find("400") != std::string::npos);
    }
}

TEST_CASE("440 Hz tone peaks at the filter the mel formula predicts") {
    const FeatureConfig config;
    // Independent reckoning of the triangular weights at 440 Hz from the
    // mel-scale formula.
    auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto melinv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const double lo = mel(20.0), hi = mel(7600.0);
    std::vector<double> edge(66);
    for (int j = 0; j < 66; ++j) edge[static_cast<size_t>(j)] = melinv(lo + (hi - lo) * j / 65.0);
    int expected = -1;
    double best = 0.0;
    for (int m = 0; m < 64; ++m) {
        const double l = edge[static_cast<size_t>(m)], c = edge[static_cast<size_t>(m) + 1],
                     r = edge[static_cast<size_t>(m) + 2];
        double w = 0.0;
        if (440.0 > l && 440.0 < r) w = 440.0 <= c ? (440.0 - l) / (c - l) : (r - 440.0) / (r - c);
        if (w > best) {
            best = w;
            expected = m;
        }
    }
    REQUIRE(expected >= 0);

    const auto f = lfbe_extract(tone_clip(440.0, 0.5), config);
    const int mid = f.matrix.dim(0) / 2;
    int got = 0;
    for (int m = 1; m < 64; ++m)
        if (f.matrix.at2(mid, m) > f.matrix.at2(mid, got)) got = m;
    CHECK(got == expected);
}

TEST_CASE("power spectrum matches the direct DFT oracle and Parseval") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int len = 8 + static_cast<int>(rng.uniform_int(57));  // <= 64
        std::vector<double> frame(static_cast<size_t>(len));
        double energy = 0.0;
        for (auto& v : frame) {
            v = rng.uniform(-1.0, 1.0);
            energy += v * v;
        }
        const auto mine = power_spectrum(frame, 64);
        const auto want = oracles::direct_dft_power(frame, 64);
        REQUIRE(mine.size() == want.size());
        for (size_t k = 0; k < mine.size(); ++k)
            CHECK(mine[k] == doctest::Approx(want[k]).epsilon(1e-9).scale(1.0));

        double spectral = mine.front() + mine.back();
        for (size_t k = 1; k + 1 < mine.size(); ++k) spectral += 2.0 * mine[k];
        CHECK(spectral == doctest::Approx(64.0 * energy).epsilon(1e-3));
    }
}

TEST_CASE("mel filterbank is nonnegative, unimodal, and covers the band") {
    const FeatureConfig config;
    const auto fb = mel_filterbank(config, 16000);
    REQUIRE(fb.size() == 64);
    for (const auto& filter : fb) {
        bool rising_done = false;
        double prev = -1.0;
        int positives = 0;
        for (double w : filter) {
            CHECK(w >= 0.0);
            if (w > 0.0) ++positives;
            if (w < prev) rising_done = true;
            if (rising_done && w > prev) FAIL("filter is not unimodal");
            prev = w;
        }
        CHECK(positives > 0);
    }
    // Every bin strictly between the outer filter edges gets positive weight
    // from at least one filter.
    const double bin_hz = 16000.0 / config.fft_size;
    for (size_t k = 0; k < fb.front().size(); ++k) {
        const double f = k * bin_hz;
        if (f <= 20.0 || f >= 7600.0) continue;
        double total = 0.0;
        for (const auto& filter : fb) total += filter[k];
        CHECK(total > 0.0);
    }
}

TEST_CASE("doubling the amplitude shifts LFBE by 2 ln 2 above the floor") {
    const FeatureConfig config;
    const AudioClip small = tone_clip(700.0, 0.25);
    AudioClip big = small;
    for (auto& v : big.samples) v *= 2.0f;  // exact in binary floating point
    const auto fs = lfbe_extract(small, config);
    const auto fbig = lfbe_extract(big, config);
    const float floor_val = static_cast<float>(std::log(1e-10));
    int checked = 0;
    for (int64_t i = 0; i < fs.matrix.size(); ++i) {
        if (fs.matrix[i] <= floor_val + 1e-5f) continue;  // floored cells shift differently
        CHECK(fbig.matrix[i] - fs.matrix[i] == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-5));
        ++checked;
    }
    CHECK(checked > 1000);
}

TEST_CASE("dataset stats closed forms and brute-force oracle") {
    SpectrogramFeatures constant;
    constant.matrix = Tensor::full({4, 3}, 2.5f);
    const DatasetStats s1 = compute_dataset_stats(std::span(&constant, 1));
    CHECK(s1.mean == doctest::Approx(2.5));
    CHECK(s1.stddev == doctest::Approx(0.0));
    CHECK(s1.count == 12);

    SpectrogramFeatures two;
    two.matrix = Tensor({1, 2}, {0.0f, 2.0f});
    const DatasetStats s2 = compute_dataset_stats(std::span(&two, 1));
    CHECK(s2.mean == doctest::Approx(1.0));
    CHECK(s2.stddev == doctest::Approx(1.0));

    Rng rng(23);
    std::vector<SpectrogramFeatures> many(100);
    std::vector<float> flat;
    for (auto& f : many) {
        f.matrix = Tensor::zeros({5 + static_cast<int>(rng.uniform_int(20)), 8});
        for (auto& v : f.matrix.data) {
            v = static_cast<float>(rng.uniform(-30.0, 5.0));
            flat.push_back(v);
        }
    }
    const DatasetStats got = compute_dataset_stats(many);
    const auto want = oracles::brute_stats(flat);
    CHECK(got.mean == doctest::Approx(want.mean).epsilon(1e-6));
    CHECK(got.stddev == doctest::Approx(want.stddev).epsilon(1e-6));
    CHECK(got.count == want.count);

    CHECK_THROWS_AS(compute_dataset_stats({}), EmptyInputError);
}

TEST_CASE("feature file round-trips bit-exactly") {
    Rng rng(29);
    SpectrogramFeatures f;
    f.clip_id = "clip-42";
    f.matrix = Tensor::zeros({7, 5});
    for (auto& v : f.matrix.data) v = static_cast<float>(rng.uniform(-40.0, 10.0));
    const auto bytes = serialize_features(f);
    const auto back = deserialize_features(bytes);
    CHECK(back.clip_id == f.clip_id);
    REQUIRE(back.matrix.shape == f.matrix.shape);
    CHECK(std::memcmp(back.matrix.data.data(), f.matrix.data.data(),
                      f.matrix.data.size() * 4) == 0);
}

TEST_CASE("feature file rejects bad magic and wrong version") {
    SpectrogramFeatures f;
    f.matrix = Tensor::zeros({2, 2});
    auto bytes = serialize_features(f);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_features(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(deserialize_features(bad_version), VersionError);
}

TEST_CASE("feature config validation") {
    FeatureConfig c;
    c.fft_size = 300;  // not a power of two
    CHECK_THROWS_AS(c.validate(16000), ConfigError);
    c.fft_size = 256;  // below the 400-sample frame
    CHECK_THROWS_AS(c.validate(16000), ConfigError);
    c = FeatureConfig{};
    c.mel_high_hz = 9000.0;  // above Nyquist
    CHECK_THROWS_AS(c.validate(16000), ConfigError);
    CHECK_NOTHROW(FeatureConfig{}.validate(16000));
}
