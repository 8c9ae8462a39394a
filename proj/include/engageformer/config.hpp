#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "engageformer/model.hpp"
#include "engageformer/train.hpp"

namespace engageformer {

struct FullConfig {
    ModelConfig model;
    TrainConfig train;
};

inline bool operator==(const TubeletSpec& a, const TubeletSpec& b) {
    return a.t == b.t && a.h == b.h && a.w == b.w;
}
inline bool operator==(const ClipGeometry& a, const ClipGeometry& b) {
    return a.frames == b.frames && a.height == b.height && a.width == b.width &&
           a.channels == b.channels;
}
inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.geometry == b.geometry && a.views == b.views && a.d == b.d &&
           a.view_layers == b.view_layers && a.view_heads == b.view_heads &&
           a.global_layers == b.global_layers && a.global_heads == b.global_heads &&
           a.mlp_dim == b.mlp_dim && a.fusion_all == b.fusion_all &&
           a.fusion_layers == b.fusion_layers && a.stochastic_depth == b.stochastic_depth &&
           a.classes == b.classes && a.labels == b.labels;
}
inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.lr0 == b.lr0 && a.weight_decay == b.weight_decay && a.epochs == b.epochs &&
           a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.adam_eps == b.adam_eps &&
           a.label_smoothing == b.label_smoothing && a.noise_sigma == b.noise_sigma &&
           a.flip_prob == b.flip_prob && a.noise_prob == b.noise_prob &&
           a.flip_axis == b.flip_axis && a.batch_size == b.batch_size && a.seed == b.seed;
}
inline bool operator==(const FullConfig& a, const FullConfig& b) {
    return a.model == b.model && a.train == b.train;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.push_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    return parts;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw ConfigError(key + " expects a non-negative integer, got '" + v + "'");
    return out;
}

inline double parse_f64(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw ConfigError(key + " expects a number, got '" + v + "'");
    return out;
}

inline std::vector<TubeletSpec> parse_views(const std::string& v) {
    std::vector<TubeletSpec> views;
    for (const std::string& part : split(v, ',')) {
        const std::vector<std::string> dims = split(part, 'x');
        if (dims.size() != 3)
            throw ConfigError("model.views entries must be TxHxW, got '" + part + "'");
        TubeletSpec s;
        s.t = parse_u64("model.views", dims[0]);
        s.h = parse_u64("model.views", dims[1]);
        s.w = parse_u64("model.views", dims[2]);
        if (s.t == 0 || s.h == 0 || s.w == 0)
            throw ConfigError("tubelet extents must be >= 1 in '" + part + "'");
        views.push_back(s);
    }
    if (views.empty()) throw ConfigError("model.views must name at least one view");
    return views;
}

}  // namespace detail

// Applies one `key = value` assignment. Unknown keys are rejected.
inline void apply_config_entry(FullConfig& fc, const std::string& key, const std::string& value) {
    using detail::parse_f64;
    using detail::parse_u64;
    ModelConfig& m = fc.model;
    TrainConfig& t = fc.train;
    if (key == "model.frames") m.geometry.frames = parse_u64(key, value);
    else if (key == "model.height") m.geometry.height = parse_u64(key, value);
    else if (key == "model.width") m.geometry.width = parse_u64(key, value);
    else if (key == "model.channels") m.geometry.channels = parse_u64(key, value);
    else if (key == "model.views") m.views = detail::parse_views(value);
    else if (key == "model.d") m.d = parse_u64(key, value);
    else if (key == "model.view_layers") m.view_layers = parse_u64(key, value);
    else if (key == "model.view_heads") m.view_heads = parse_u64(key, value);
    else if (key == "model.global_layers") m.global_layers = parse_u64(key, value);
    else if (key == "model.global_heads") m.global_heads = parse_u64(key, value);
    else if (key == "model.mlp_dim") m.mlp_dim = parse_u64(key, value);
    else if (key == "model.fusion_layers") {
        m.fusion_layers.clear();
        m.fusion_all = value == "all";
        if (!m.fusion_all && value != "none")
            for (const std::string& part : detail::split(value, ','))
                m.fusion_layers.push_back(parse_u64(key, part));
    } else if (key == "model.stochastic_depth") m.stochastic_depth = parse_f64(key, value);
    else if (key == "model.classes") m.classes = parse_u64(key, value);
    else if (key == "model.labels") m.labels = detail::split(value, ',');
    else if (key == "train.lr0") t.lr0 = parse_f64(key, value);
    else if (key == "train.weight_decay") t.weight_decay = parse_f64(key, value);
    else if (key == "train.epochs") t.epochs = parse_u64(key, value);
    else if (key == "train.beta1") t.beta1 = parse_f64(key, value);
    else if (key == "train.beta2") t.beta2 = parse_f64(key, value);
    else if (key == "train.adam_eps") t.adam_eps = parse_f64(key, value);
    else if (key == "train.label_smoothing") t.label_smoothing = parse_f64(key, value);
    else if (key == "train.noise_sigma") t.noise_sigma = parse_f64(key, value);
    else if (key == "train.flip_prob") t.flip_prob = parse_f64(key, value);
    else if (key == "train.noise_prob") t.noise_prob = parse_f64(key, value);
    else if (key == "train.flip_axis") {
        if (value == "height") t.flip_axis = FlipAxis::kHeight;
        else if (value == "width") t.flip_axis = FlipAxis::kWidth;
        else throw ConfigError("train.flip_axis must be height or width, got '" + value + "'");
    } else if (key == "train.batch_size") t.batch_size = parse_u64(key, value);
    else if (key == "train.seed") t.seed = parse_u64(key, value);
    else throw ConfigError("unknown config key: " + key);
}

// Parses `key = value` text over the defaults. '#' starts a comment; blank
// lines are ignored. The result is validated, so any returned config is
// buildable.
inline FullConfig parse_config(const std::string& text) {
    FullConfig fc;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + " is not key = value: '" +
                              line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key on line " + std::to_string(lineno));
        apply_config_entry(fc, key, value);
    }
    validate_config(fc.model);
    validate_train_config(fc.train);
    return fc;
}

inline FullConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

// Prints every key; parse_config(print_config(fc)) reproduces fc exactly
// (doubles are rendered with shortest round-trip formatting).
inline std::string print_config(const FullConfig& fc) {
    const ModelConfig& m = fc.model;
    const TrainConfig& t = fc.train;
    std::ostringstream os;
    auto num = [](double v) { return format_double_shortest(v); };
    os << "model.frames = " << m.geometry.frames << "\n";
    os << "model.height = " << m.geometry.height << "\n";
    os << "model.width = " << m.geometry.width << "\n";
    os << "model.channels = " << m.geometry.channels << "\n";
    os << "model.views = ";
    for (std::size_t i = 0; i < m.views.size(); ++i) {
        if (i) os << ",";
        os << m.views[i].t << "x" << m.views[i].h << "x" << m.views[i].w;
    }
    os << "\n";
    os << "model.d = " << m.d << "\n";
    os << "model.view_layers = " << m.view_layers << "\n";
    os << "model.view_heads = " << m.view_heads << "\n";
    os << "model.global_layers = " << m.global_layers << "\n";
    os << "model.global_heads = " << m.global_heads << "\n";
    os << "model.mlp_dim = " << m.mlp_dim << "\n";
    os << "model.fusion_layers = ";
    if (m.fusion_all) {
        os << "all";
    } else if (m.fusion_layers.empty()) {
        os << "none";
    } else {
        for (std::size_t i = 0; i < m.fusion_layers.size(); ++i) {
            if (i) os << ",";
            os << m.fusion_layers[i];
        }
    }
    os << "\n";
    os << "model.stochastic_depth = " << num(m.stochastic_depth) << "\n";
    os << "model.classes = " << m.classes << "\n";
    os << "model.labels = ";
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        if (i) os << ",";
        os << m.labels[i];
    }
    os << "\n";
    os << "train.lr0 = " << num(t.lr0) << "\n";
    os << "train.weight_decay = " << num(t.weight_decay) << "\n";
    os << "train.epochs = " << t.epochs << "\n";
    os << "train.beta1 = " << num(t.beta1) << "\n";
    os << "train.beta2 = " << num(t.beta2) << "\n";
    os << "train.adam_eps = " << num(t.adam_eps) << "\n";
    os << "train.label_smoothing = " << num(t.label_smoothing) << "\n";
    os << "train.noise_sigma = " << num(t.noise_sigma) << "\n";
    os << "train.flip_prob = " << num(t.flip_prob) << "\n";
    os << "train.noise_prob = " << num(t.noise_prob) << "\n";
    os << "train.flip_axis = " << (t.flip_axis == FlipAxis::kHeight ? "height" : "width") << "\n";
    os << "train.batch_size = " << t.batch_size << "\n";
    os << "train.seed = " << t.seed << "\n";
    return os.str();
}

}  // namespace engageformer
