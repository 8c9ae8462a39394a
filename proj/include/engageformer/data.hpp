#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "engageformer/rng.hpp"
#include "engageformer/tensor.hpp"
#include "engageformer/tokenizer.hpp"

namespace engageformer {

// Clip file format, little-endian:
//   magic "EFV1" | u32 T | u32 H | u32 W | u32 D | T*H*W*D bytes, u8,
//   (t, h, w, c) row-major.
// Clips hold raw pixel values 0..255; normalize_clip maps them into [-1, 1].

namespace detail {

inline void write_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32le(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw DataError("truncated clip header while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <typename S>
void write_clip(const std::string& path, const Tensor<S>& clip) {
    if (clip.rank() != 4)
        throw DataError("clip tensor must be rank 4, got " + shape_str(clip.shape()));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open clip for writing: " + path);
    os.write("EFV1", 4);
    for (std::size_t e : clip.shape()) detail::write_u32le(os, static_cast<std::uint32_t>(e));
    std::vector<unsigned char> payload(clip.numel());
    for (std::size_t i = 0; i < clip.numel(); ++i) {
        const double v = static_cast<double>(clip[i]);
        const long r = std::lround(v);
        if (r < 0 || r > 255)
            throw DataError("pixel value " + std::to_string(v) + " outside 0..255 in " + path);
        payload[i] = static_cast<unsigned char>(r);
    }
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
    if (!os) throw DataError("write failed for clip: " + path);
}

template <typename S>
Tensor<S> read_clip(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open clip: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "EFV1")
        throw DataError("bad clip magic in " + path);
    Shape shape(4);
    shape[0] = detail::read_u32le(is, "frame count");
    shape[1] = detail::read_u32le(is, "height");
    shape[2] = detail::read_u32le(is, "width");
    shape[3] = detail::read_u32le(is, "channel count");
    const std::size_t n = shape_numel(shape);
    std::vector<unsigned char> payload(n);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw DataError("truncated clip payload in " + path + ": expected " + std::to_string(n) +
                        " bytes, got " + std::to_string(is.gcount()));
    if (is.peek() != EOF)
        throw DataError("clip payload longer than header promises in " + path);
    Tensor<S> t(shape);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<S>(payload[i]);
    return t;
}

// value/255, then (x - 0.5)/0.5: pixels land in [-1, 1].
template <typename S>
Tensor<S> normalize_clip(const Tensor<S>& clip) {
    Tensor<S> out = clip;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<S>((static_cast<double>(out[i]) / 255.0 - 0.5) / 0.5);
    return out;
}

// ---- PPM (binary P6, maxval 255) ---------------------------------------

struct PpmImage {
    std::size_t width = 0, height = 0;
    std::vector<unsigned char> rgb;  // h * w * 3
};

// Minimal P6 reader: "P6", whitespace-separated width/height/maxval with
// '#' comments, one whitespace byte, then raw RGB.
inline PpmImage read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open PPM: " + path);
    auto next_token = [&is, &path]() {
        std::string tok;
        int c;
        while ((c = is.get()) != EOF) {
            if (c == '#') {
                while ((c = is.get()) != EOF && c != '\n') {}
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
        if (tok.empty()) throw DataError("truncated PPM header in " + path);
        return tok;
    };
    if (next_token() != "P6") throw DataError("not a binary P6 PPM: " + path);
    PpmImage img;
    const std::string ws = next_token(), hs = next_token(), maxs = next_token();
    img.width = static_cast<std::size_t>(std::stoull(ws));
    img.height = static_cast<std::size_t>(std::stoull(hs));
    if (maxs != "255") throw DataError("PPM maxval must be 255, got " + maxs + " in " + path);
    if (img.width == 0 || img.height == 0)
        throw DataError("PPM has zero dimension in " + path);
    img.rgb.resize(img.width * img.height * 3);
    is.read(reinterpret_cast<char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (static_cast<std::size_t>(is.gcount()) != img.rgb.size())
        throw DataError("truncated PPM payload in " + path);
    return img;
}

// Stacks the .ppm frames of a directory (lexicographic name order) into a
// T x H x W x 3 clip. When more than `frames` frames exist, frame i of the
// output samples input index floor(i * F / T). frames == 0 keeps all frames.
template <typename S>
Tensor<S> ingest_ppm_sequence(const std::string& dir, std::size_t frames = 0) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm")
            files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .ppm frames in " + dir);
    const std::size_t total = files.size();
    if (frames == 0) frames = total;
    if (total < frames)
        throw DataError("directory " + dir + " has " + std::to_string(total) +
                        " frames, need " + std::to_string(frames));
    std::vector<std::size_t> pick(frames);
    for (std::size_t i = 0; i < frames; ++i) pick[i] = i * total / frames;

    Tensor<S> clip;
    std::size_t h = 0, w = 0;
    for (std::size_t i = 0; i < frames; ++i) {
        PpmImage img = read_ppm(files[pick[i]]);
        if (i == 0) {
            h = img.height;
            w = img.width;
            clip = Tensor<S>({frames, h, w, 3});
        } else if (img.height != h || img.width != w) {
            throw DataError("frame " + files[pick[i]] + " is " + std::to_string(img.width) +
                            "x" + std::to_string(img.height) + ", expected " +
                            std::to_string(w) + "x" + std::to_string(h));
        }
        for (std::size_t j = 0; j < img.rgb.size(); ++j)
            clip[i * h * w * 3 + j] = static_cast<S>(img.rgb[j]);
    }
    return clip;
}

// ---- manifests -----------------------------------------------------------

// Text manifest: one record per line, `<relative path> TAB <label id> TAB
// <label name>`, preceded by `#label <id> <name>` header lines. Label ids
// are dense in [0, C).
struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    std::size_t label = 0;
};

struct Manifest {
    std::string dir;
    std::vector<std::string> labels;
    std::vector<ManifestEntry> entries;

    std::string resolve(const ManifestEntry& e) const {
        return dir.empty() ? e.path : dir + "/" + e.path;
    }
    std::size_t classes() const { return labels.size(); }
};

inline void validate_manifest(const Manifest& m) {
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        if (m.labels[i].empty())
            throw DataError("manifest label ids are not dense: missing id " + std::to_string(i));
        for (std::size_t j = i + 1; j < m.labels.size(); ++j)
            if (m.labels[i] == m.labels[j])
                throw DataError("duplicate label name: " + m.labels[i]);
    }
    for (const ManifestEntry& e : m.entries)
        if (e.label >= m.labels.size())
            throw DataError("entry " + e.path + " has label id " + std::to_string(e.label) +
                            " outside 0.." + std::to_string(m.labels.size()));
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path);
    Manifest m;
    const auto parent = std::filesystem::path(path).parent_path();
    m.dir = parent.string();
    std::map<std::size_t, std::string> header;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line);
            std::string tag;
            ls >> tag;
            if (tag == "#label") {
                std::size_t id;
                std::string name;
                if (!(ls >> id >> name))
                    throw DataError("bad #label line " + std::to_string(lineno) + " in " + path);
                header[id] = name;
            }
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw DataError("manifest line " + std::to_string(lineno) +
                            " is not <path>TAB<id>TAB<name> in " + path);
        ManifestEntry e;
        e.path = line.substr(0, t1);
        e.label = static_cast<std::size_t>(std::stoull(line.substr(t1 + 1, t2 - t1 - 1)));
        const std::string name = line.substr(t2 + 1);
        if (header.empty()) {
            // No headers: derive the map from records.
            if (m.labels.size() <= e.label) m.labels.resize(e.label + 1);
            if (m.labels[e.label].empty())
                m.labels[e.label] = name;
            else if (m.labels[e.label] != name)
                throw DataError("label id " + std::to_string(e.label) + " used for both '" +
                                m.labels[e.label] + "' and '" + name + "' in " + path);
        }
        m.entries.push_back(std::move(e));
    }
    if (!header.empty()) {
        m.labels.resize(header.rbegin()->first + 1);
        for (const auto& [id, name] : header) m.labels[id] = name;
    }
    validate_manifest(m);
    return m;
}

inline void save_manifest(const std::string& path, const Manifest& m) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open manifest for writing: " + path);
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        os << "#label " << i << " " << m.labels[i] << "\n";
    for (const ManifestEntry& e : m.entries)
        os << e.path << "\t" << e.label << "\t" << m.labels[e.label] << "\n";
    if (!os) throw DataError("write failed for manifest: " + path);
}

// ---- synthetic labeled clips ----------------------------------------------

inline std::vector<std::string> default_label_names(std::size_t classes) {
    if (classes == 6)
        return {"Boredom", "Confusion", "Engaged", "Frustration", "Sleepy", "Yawning"};
    std::vector<std::string> names;
    for (std::size_t c = 0; c < classes; ++c) names.push_back("class" + std::to_string(c));
    return names;
}

// Balanced synthetic dataset: class c gets a bright block whose brightness
// oscillates at temporal frequency 1 + c cycles per clip, anchored at a
// class-dependent spatial position, over a Gaussian-noise background. Labels
// are therefore recoverable from both spatial and temporal structure. Files
// are a pure function of (seed, geometry, n, classes).
inline std::string synth_dataset(std::size_t n_per_class, std::size_t classes,
                                 const ClipGeometry& geom, std::uint64_t seed,
                                 const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (n_per_class == 0) throw ConfigError("synth needs n >= 1 per class");
    if (classes < 2) throw ConfigError("synth needs at least two classes");
    if (geom.channels != 3) throw ConfigError("synth writes RGB clips (channels = 3)");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw DataError("cannot create directory: " + out_dir);

    static constexpr double kAnchors[8][2] = {{0.15, 0.15}, {0.15, 0.60}, {0.60, 0.15},
                                              {0.60, 0.60}, {0.375, 0.375}, {0.15, 0.375},
                                              {0.60, 0.375}, {0.375, 0.15}};
    const std::size_t bh = std::max<std::size_t>(2, geom.height / 4);
    const std::size_t bw = std::max<std::size_t>(2, geom.width / 4);

    Manifest m;
    m.dir = out_dir;
    m.labels = default_label_names(classes);
    const Rng root(seed);
    std::size_t clip_index = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < n_per_class; ++k, ++clip_index) {
            Rng r = root.derive(clip_index);
            Tensor<float> clip({geom.frames, geom.height, geom.width, geom.channels});
            for (std::size_t i = 0; i < clip.numel(); ++i) {
                const double v = 110.0 + 25.0 * r.gaussian();
                clip[i] = static_cast<float>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
            const double* anchor = kAnchors[c % 8];
            const long max_jy = static_cast<long>(bh / 4), max_jx = static_cast<long>(bw / 4);
            const long jy = static_cast<long>(r.next_u64() % (2 * max_jy + 1)) - max_jy;
            const long jx = static_cast<long>(r.next_u64() % (2 * max_jx + 1)) - max_jx;
            const std::size_t y0 = static_cast<std::size_t>(std::clamp(
                static_cast<long>(anchor[0] * geom.height) + jy, 0L,
                static_cast<long>(geom.height - bh)));
            const std::size_t x0 = static_cast<std::size_t>(std::clamp(
                static_cast<long>(anchor[1] * geom.width) + jx, 0L,
                static_cast<long>(geom.width - bw)));
            const double freq = 1.0 + static_cast<double>(c);
            const double phase = 2.0 * std::numbers::pi * r.uniform();
            for (std::size_t t = 0; t < geom.frames; ++t) {
                const double bright =
                    200.0 + 55.0 * std::sin(2.0 * std::numbers::pi * freq * t / geom.frames + phase);
                const float px = static_cast<float>(std::lround(std::clamp(bright, 0.0, 255.0)));
                for (std::size_t y = y0; y < y0 + bh; ++y)
                    for (std::size_t x = x0; x < x0 + bw; ++x) {
                        const std::size_t base =
                            ((t * geom.height + y) * geom.width + x) * geom.channels;
                        for (std::size_t ch = 0; ch < geom.channels; ++ch)
                            clip[base + ch] = px;
                    }
            }
            const std::string name =
                "clip_c" + std::to_string(c) + "_s" + std::to_string(k) + ".efv";
            write_clip(out_dir + "/" + name, clip);
            m.entries.push_back({name, c});
        }
    }
    const std::string manifest_path = out_dir + "/manifest.tsv";
    save_manifest(manifest_path, m);
    return manifest_path;
}

// ---- stratified split ------------------------------------------------------

// Seeded per-class split; the train side receives ceil(n_c * pct / 100)
// samples of each class (integer arithmetic, no floating point). Every class
// must have at least two samples.
inline std::pair<Manifest, Manifest> stratified_split(const Manifest& m, std::uint64_t seed,
                                                      std::size_t train_pct = 80) {
    if (train_pct == 0 || train_pct >= 100)
        throw ConfigError("train percentage must lie in 1..99");
    std::vector<std::vector<std::size_t>> per_class(m.classes());
    for (std::size_t i = 0; i < m.entries.size(); ++i)
        per_class[m.entries[i].label].push_back(i);
    for (std::size_t c = 0; c < per_class.size(); ++c)
        if (per_class[c].size() < 2)
            throw DataError("class " + std::to_string(c) + " (" + m.labels[c] + ") has " +
                            std::to_string(per_class[c].size()) +
                            " samples; splitting needs at least 2");
    Manifest train, test;
    train.dir = test.dir = m.dir;
    train.labels = test.labels = m.labels;
    const Rng root(seed);
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        std::vector<std::size_t>& idx = per_class[c];
        Rng r = root.derive(c);
        for (std::size_t i = idx.size(); i-- > 1;)
            std::swap(idx[i], idx[r.next_u64() % (i + 1)]);
        const std::size_t n_train = (idx.size() * train_pct + 99) / 100;
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_train ? train : test).entries.push_back(m.entries[idx[i]]);
    }
    return {train, test};
}

}  // namespace engageformer
