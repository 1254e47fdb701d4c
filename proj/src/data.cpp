#include "ate/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "ate/rng.hpp"

namespace fs = std::filesystem;

namespace ate {

namespace {

std::vector<uint8_t> read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ExistenceError("cannot open file: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const fs::path& path, std::span<const uint8_t> bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ExistenceError("cannot open file for writing: " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace

int Manifest::class_index(const std::string& label) const {
    const auto it = std::lower_bound(classes.begin(), classes.end(), label);
    if (it == classes.end() || *it != label)
        throw ValidationError("manifest: unknown label '" + label + "'");
    return static_cast<int>(it - classes.begin());
}

fs::path Manifest::resolve_path(const ManifestEntry& entry) const {
    const fs::path p(entry.path);
    return p.is_absolute() ? p : dir / p;
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ExistenceError("manifest: cannot open " + path.string());
    Manifest m;
    m.dir = path.has_parent_path() ? path.parent_path() : fs::path(".");

    std::set<std::string> seen_ids;
    std::set<std::string> labels;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        ManifestEntry e;
        bool have_id = false, have_path = false, have_label = false;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, '\t')) {
            if (field.empty()) continue;
            const auto eq = field.find('=');
            if (eq == std::string::npos)
                throw ParseError("manifest: line " + std::to_string(line_no) + ": field '" + field +
                                 "' is not key=value");
            const std::string key = field.substr(0, eq);
            const std::string val = field.substr(eq + 1);
            if (key == "id") {
                e.clip_id = val;
                have_id = true;
            } else if (key == "path") {
                e.path = val;
                have_path = true;
            } else if (key == "label") {
                e.label = val;
                have_label = true;
            } else if (key == "fold") {
                try {
                    e.fold = std::stoi(val);
                } catch (const std::exception&) {
                    throw ParseError("manifest: line " + std::to_string(line_no) + ": bad fold '" + val +
                                     "'");
                }
                if (e.fold < 0)
                    throw ValidationError("manifest: line " + std::to_string(line_no) +
                                          ": fold must be >= 0");
            } else if (key == "split") {
                if (val != "train" && val != "val" && val != "test")
                    throw ParseError("manifest: line " + std::to_string(line_no) + ": bad split '" + val +
                                     "'");
                e.split = val;
            } else {
                throw ParseError("manifest: line " + std::to_string(line_no) + ": unknown field '" + key +
                                 "'");
            }
        }
        if (!have_id || !have_path || !have_label)
            throw ParseError("manifest: line " + std::to_string(line_no) +
                             ": record needs id, path and label");
        if (!seen_ids.insert(e.clip_id).second)
            throw ValidationError("manifest: duplicate clip id '" + e.clip_id + "'");
        labels.insert(e.label);
        m.entries.push_back(std::move(e));
    }
    m.classes.assign(labels.begin(), labels.end());
    return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw ExistenceError("manifest: cannot open for writing " + path.string());
    for (const auto& e : manifest.entries) {
        os << "id=" << e.clip_id << "\tpath=" << e.path << "\tlabel=" << e.label;
        if (e.fold >= 0) os << "\tfold=" << e.fold;
        if (!e.split.empty()) os << "\tsplit=" << e.split;
        os << "\n";
    }
}

std::vector<std::vector<int>> make_batches(int n, int batch_size, uint64_t seed, int epoch) {
    if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(derive_seed(seed, 0xba7c4e5ull, static_cast<uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[rng.uniform_int(static_cast<uint64_t>(i) + 1)]);
    std::vector<std::vector<int>> batches;
    for (int at = 0; at < n; at += batch_size) {
        const int end = std::min(at + batch_size, n);
        batches.emplace_back(order.begin() + at, order.begin() + end);
    }
    return batches;
}

void assign_splits(Manifest& manifest, double val_fraction, uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ConfigError("split: val_fraction must be in [0, 1)");
    std::unordered_map<std::string, std::vector<size_t>> by_label;
    for (size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].split.empty()) by_label[manifest.entries[i].label].push_back(i);

    // Iterate classes in sorted order so the assignment is reproducible.
    for (const auto& label : manifest.classes) {
        auto it = by_label.find(label);
        if (it == by_label.end()) continue;
        auto& idx = it->second;
        Rng rng(derive_seed(seed, 0x511217ull, fnv1a(label)));
        for (size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_int(static_cast<uint64_t>(i))]);
        size_t n_val = 0;
        if (val_fraction > 0.0)
            n_val = std::max<size_t>(1, static_cast<size_t>(std::lround(
                                            val_fraction * static_cast<double>(idx.size()))));
        if (n_val >= idx.size()) n_val = idx.size() > 1 ? idx.size() - 1 : 0;
        for (size_t i = 0; i < idx.size(); ++i)
            manifest.entries[idx[i]].split = (i < n_val) ? "val" : "train";
    }
}

void SyntheticSpec::validate() const {
    if (n_classes < 2) throw ConfigError("synthetic: n_classes must be >= 2");
    if (clips_per_class < 1) throw ConfigError("synthetic: clips_per_class must be >= 1");
    if (static_cast<int>(class_tones.size()) != n_classes)
        throw ConfigError("synthetic: need a tone set per class, got " +
                          std::to_string(class_tones.size()) + " sets for " +
                          std::to_string(n_classes) + " classes");
    if (noise_level < 0) throw ConfigError("synthetic: noise_level must be >= 0");
    if (duration_s <= 0) throw ConfigError("synthetic: duration must be positive");
    std::set<double> seen;
    for (const auto& tones : class_tones) {
        if (tones.empty()) throw ConfigError("synthetic: every class needs at least one tone");
        for (double f : tones) {
            if (f <= 0 || f >= sample_rate / 2.0)
                throw ConfigError("synthetic: tone frequency out of range: " + std::to_string(f));
            if (!seen.insert(f).second)
                throw ConfigError("synthetic: class tone sets overlap at " + std::to_string(f) + " Hz");
        }
    }
}

std::vector<std::vector<double>> SyntheticSpec::default_tones(int n_classes) {
    std::vector<std::vector<double>> tones;
    for (int c = 0; c < n_classes; ++c) {
        const double base = 350.0 + 550.0 * c;
        tones.push_back({base, base + 225.0});
    }
    return tones;
}

Manifest generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& dir) {
    spec.validate();
    fs::create_directories(dir);
    const int n_samples = static_cast<int>(std::lround(spec.duration_s * spec.sample_rate));

    Manifest manifest;
    manifest.dir = dir;
    int clip_index = 0;
    for (int c = 0; c < spec.n_classes; ++c) {
        for (int j = 0; j < spec.clips_per_class; ++j, ++clip_index) {
            Rng rng(derive_seed(spec.seed, 0x5d17ull, static_cast<uint64_t>(clip_index)));
            const auto& tones = spec.class_tones[static_cast<size_t>(c)];
            std::vector<double> phases;
            phases.reserve(tones.size());
            for (size_t t = 0; t < tones.size(); ++t)
                phases.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));

            std::vector<double> wave(static_cast<size_t>(n_samples), 0.0);
            for (size_t t = 0; t < tones.size(); ++t) {
                const double w = 2.0 * std::numbers::pi * tones[t] / spec.sample_rate;
                for (int i = 0; i < n_samples; ++i)
                    wave[static_cast<size_t>(i)] += std::sin(w * i + phases[t]);
            }
            for (int i = 0; i < n_samples; ++i)
                wave[static_cast<size_t>(i)] += spec.noise_level * rng.normal();

            double peak = 0.0;
            for (double v : wave) peak = std::max(peak, std::abs(v));
            const double gain = peak > 0 ? 0.9 / peak : 0.0;

            AudioClip clip;
            clip.sample_rate = spec.sample_rate;
            clip.samples.resize(static_cast<size_t>(n_samples));
            for (int i = 0; i < n_samples; ++i)
                clip.samples[static_cast<size_t>(i)] =
                    static_cast<float>(wave[static_cast<size_t>(i)] * gain);

            char name[64];
            std::snprintf(name, sizeof name, "clip_c%d_%03d.wav", c, j);
            write_file(dir / name, encode_wav(clip));

            ManifestEntry e;
            e.clip_id = std::string(name, std::strlen(name) - 4);
            e.path = name;
            e.label = "class" + std::to_string(c);
            manifest.entries.push_back(std::move(e));
        }
    }
    std::set<std::string> labels;
    for (const auto& e : manifest.entries) labels.insert(e.label);
    manifest.classes.assign(labels.begin(), labels.end());
    save_manifest(manifest, dir / "manifest.tsv");
    return manifest;
}

namespace {

std::set<std::string> read_list_file(const fs::path& path) {
    std::set<std::string> entries;
    if (path.empty()) return entries;
    std::ifstream is(path);
    if (!is) throw ExistenceError("manifest builder: cannot open list file " + path.string());
    std::string line;
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) entries.insert(line);
    }
    return entries;
}

} // namespace

Manifest build_manifest(const ManifestBuilderOptions& options) {
    if (!fs::is_directory(options.audio_dir))
        throw ExistenceError("manifest builder: not a directory: " + options.audio_dir.string());

    Manifest manifest;
    manifest.dir = options.audio_dir;
    std::set<std::string> labels;

    if (options.format == "esc50") {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(options.audio_dir))
            if (e.path().extension() == ".wav") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const std::string stem = f.stem().string();
            int fold = 0, target = 0;
            char src[128], take[16];
            if (std::sscanf(stem.c_str(), "%d-%127[^-]-%15[^-]-%d", &fold, src, take, &target) != 4 ||
                fold < 1 || target < 0)
                throw ParseError("manifest builder: file name '" + f.filename().string() +
                                 "' is not FOLD-SOURCE-TAKE-TARGET.wav");
            char label[8];
            std::snprintf(label, sizeof label, "c%02d", target);
            ManifestEntry entry;
            entry.clip_id = stem;
            entry.path = f.filename().string();
            entry.label = label;
            entry.fold = fold - 1;  // published folds are 1-based
            labels.insert(entry.label);
            manifest.entries.push_back(std::move(entry));
        }
    } else if (options.format == "dirs") {
        const auto val = read_list_file(options.val_list);
        const auto test = read_list_file(options.test_list);
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(options.audio_dir))
            if (e.path().extension() == ".wav") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const fs::path rel = fs::relative(f, options.audio_dir);
            if (!rel.has_parent_path()) continue;  // top-level files carry no label
            ManifestEntry entry;
            entry.label = rel.begin()->string();
            entry.path = rel.generic_string();
            entry.clip_id = entry.path.substr(0, entry.path.size() - 4);
            if (val.count(entry.path)) entry.split = "val";
            else if (test.count(entry.path)) entry.split = "test";
            else if (!val.empty() || !test.empty()) entry.split = "train";
            labels.insert(entry.label);
            manifest.entries.push_back(std::move(entry));
        }
    } else {
        throw ConfigError("manifest builder: unknown format '" + options.format +
                          "' (want esc50 or dirs)");
    }

    if (manifest.entries.empty())
        throw ValidationError("manifest builder: no .wav files under " + options.audio_dir.string());
    manifest.classes.assign(labels.begin(), labels.end());
    return manifest;
}

FeatureCache::FeatureCache(fs::path dir, FeatureConfig config)
    : dir_(std::move(dir)), config_(config), config_hash_(hash_hex(config.hash())) {
    fs::create_directories(dir_);
    load_index();
}

FeatureCache::~FeatureCache() {
    try {
        flush();
    } catch (...) {
        // nothing useful to do in a destructor
    }
}

void FeatureCache::load_index() {
    std::ifstream is(dir_ / "index.tsv");
    if (!is) return;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string id, hash, file;
        if (std::getline(ls, id, '\t') && std::getline(ls, hash, '\t') && std::getline(ls, file))
            index_[id] = {hash, file};
    }
}

void FeatureCache::flush() {
    if (unsaved_ == 0) return;
    std::ofstream os(dir_ / "index.tsv");
    std::vector<std::string> ids;
    ids.reserve(index_.size());
    for (const auto& [id, _] : index_) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
        const auto& e = index_.at(id);
        os << id << '\t' << e.hash_hex << '\t' << e.filename << '\n';
    }
    unsaved_ = 0;
}

std::string FeatureCache::file_for(const std::string& clip_id) const {
    std::string safe;
    for (char c : clip_id)
        safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')
                    ? c
                    : '_';
    return safe + "-" + hash_hex(fnv1a(clip_id)).substr(8) + ".lfbe";
}

SpectrogramFeatures FeatureCache::get(const Manifest& manifest, const ManifestEntry& entry) {
    const auto it = index_.find(entry.clip_id);
    if (it != index_.end() && it->second.hash_hex == config_hash_) {
        try {
            const auto bytes = read_file(dir_ / it->second.filename);
            auto f = deserialize_features(bytes);
            if (f.clip_id != entry.clip_id) throw IntegrityError("cache: clip id mismatch");
            ++hits_;
            return f;
        } catch (const Error& e) {
            std::cerr << "warning: feature cache entry for '" << entry.clip_id
                      << "' unusable (" << e.what() << "); re-extracting\n";
        }
    }

    const fs::path audio = manifest.resolve_path(entry);
    if (!fs::exists(audio))
        throw ExistenceError("audio file missing: " + audio.string() + " (clip '" + entry.clip_id +
                             "')");
    const auto bytes = read_file(audio);
    auto features = lfbe_extract(decode_wav(bytes), config_, entry.clip_id);
    const std::string filename = file_for(entry.clip_id);
    write_file(dir_ / filename, serialize_features(features));
    index_[entry.clip_id] = {config_hash_, filename};
    ++extracted_;
    if (++unsaved_ >= 256) flush();  // keeps bulk extraction linear
    return features;
}

Tensor fit_frames(const Tensor& features, int target_frames, float pad_value) {
    if (features.ndim() != 2)
        throw DimensionError("fit_frames: want [frames, mels], got " + shape_str(features.shape));
    const int frames = features.dim(0), mels = features.dim(1);
    if (frames == target_frames) return features;
    Tensor out = Tensor::full({target_frames, mels}, pad_value);
    const int copy = std::min(frames, target_frames);
    std::copy_n(features.data.begin(), static_cast<size_t>(copy) * mels, out.data.begin());
    return out;
}

void normalize_features(FeatureDataset& dataset, const DatasetStats& stats) {
    const float mean = static_cast<float>(stats.mean);
    const float inv = stats.stddev > 0 ? static_cast<float>(1.0 / stats.stddev) : 1.0f;
    for (auto& t : dataset.features)
        for (auto& v : t.data) v = (v - mean) * inv;
}

} // namespace ate
