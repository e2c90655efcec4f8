#pragma once

// Pipeline configuration and its text format: a small TOML subset with
// [sections], `key = value` lines and `#` comments. Values are booleans,
// integers, floats, double-quoted strings or flat numeric arrays.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "glandseg/error.hpp"
#include "glandseg/imaging.hpp"
#include "glandseg/model.hpp"
#include "glandseg/stain.hpp"
#include "glandseg/texture.hpp"
#include "glandseg/train.hpp"

namespace glandseg {

// ---------------------------------------------------------------------------
// Document model
// ---------------------------------------------------------------------------

using TomlValue = std::variant<bool, std::int64_t, double, std::string, std::vector<double>>;

struct TomlDocument {
    /// section -> key -> value; keys outside any section live under "".
    std::map<std::string, std::map<std::string, TomlValue>> sections;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool is_bare_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

// Removes a trailing comment that is not inside a string.
inline std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

inline bool parse_number(const std::string& s, TomlValue& out) {
    std::string t;
    for (char c : s)
        if (c != '_') t += c;
    if (t.empty()) return false;
    const char* b = t.data();
    const char* e = t.data() + t.size();
    if (t.find_first_of(".eEn") == std::string::npos) {
        std::int64_t v = 0;
        const char* p = b + (*b == '+' ? 1 : 0);
        auto r = std::from_chars(p, e, v);
        if (r.ec == std::errc{} && r.ptr == e) {
            out = v;
            return true;
        }
        return false;
    }
    const char* p = b + (*b == '+' ? 1 : 0);
    double v = 0;
    auto r = std::from_chars(p, e, v);
    if (r.ec == std::errc{} && r.ptr == e) {
        out = v;
        return true;
    }
    return false;
}

inline TomlValue parse_value(const std::string& raw, int line_no) {
    const std::string s = trim(raw);
    auto fail = [&](const std::string& why) -> TomlValue {
        throw UsageError("config line " + std::to_string(line_no) + ": " + why + " ('" + s + "')");
    };
    if (s == "true") return true;
    if (s == "false") return false;
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        std::string out;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                const char n = s[++i];
                out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
            } else {
                out += s[i];
            }
        }
        return out;
    }
    if (s.size() >= 2 && s.front() == '[' && s.back() == ']') {
        std::vector<double> arr;
        std::stringstream items(s.substr(1, s.size() - 2));
        std::string item;
        while (std::getline(items, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            TomlValue v;
            if (!parse_number(item, v)) return fail("array items must be numbers");
            arr.push_back(std::holds_alternative<double>(v) ? std::get<double>(v)
                                                            : static_cast<double>(std::get<std::int64_t>(v)));
        }
        return arr;
    }
    TomlValue v;
    if (parse_number(s, v)) return v;
    return fail("unrecognised value");
}

// Shortest representation that reads back to the same double.
inline std::string format_number(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// As format_number, but always spelled as a float.
inline std::string format_double(double v) {
    std::string s = format_number(v);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

inline std::string format_value(const TomlValue& v) {
    return std::visit(
        [](const auto& x) -> std::string {
            using X = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<X, bool>) {
                return x ? "true" : "false";
            } else if constexpr (std::is_same_v<X, std::int64_t>) {
                return std::to_string(x);
            } else if constexpr (std::is_same_v<X, double>) {
                return format_double(x);
            } else if constexpr (std::is_same_v<X, std::string>) {
                std::string out = "\"";
                for (char c : x) {
                    if (c == '"' || c == '\\') out += '\\';
                    if (c == '\n') {
                        out += "\\n";
                        continue;
                    }
                    out += c;
                }
                return out + "\"";
            } else {
                std::string out = "[";
                for (std::size_t i = 0; i < x.size(); ++i) out += (i ? ", " : "") + format_number(x[i]);
                return out + "]";
            }
        },
        v);
}

}  // namespace detail

inline TomlDocument parse_toml(const std::string& text) {
    TomlDocument doc;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::trim(detail::strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError("config line " + std::to_string(line_no) + ": unterminated section");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (!detail::is_bare_key(section))
                throw UsageError("config line " + std::to_string(line_no) + ": bad section name '" + section + "'");
            doc.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        if (!detail::is_bare_key(key)) throw UsageError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
        auto& sec = doc.sections[section];
        if (sec.contains(key)) throw UsageError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        sec[key] = detail::parse_value(line.substr(eq + 1), line_no);
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

struct PreprocessConfig {
    CanonicalSizing sizing;
    LbpParams lbp;
    Mat3 stain_matrix = StainMatrix::ruifrok_johnston;

    bool operator==(const PreprocessConfig&) const = default;
};

struct TrainingConfig {
    int epochs = 30;
    int batch = 2;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    std::uint64_t seed = 7;
    /// Expand every training image with the flip / crop recipe.
    bool augment = false;
    /// Trailing fraction of the training set held out for model selection.
    double validation_fraction = 0.0;

    bool operator==(const TrainingConfig&) const = default;
};

struct PostprocConfig {
    double min_area_frac = 0.001;

    bool operator==(const PostprocConfig&) const = default;
};

struct PathsConfig {
    std::string train_dir;
    std::string test_dir;
    std::string output_dir = "out";
    /// Existing checkpoint to evaluate; when empty the model is trained.
    std::string checkpoint;

    bool operator==(const PathsConfig&) const = default;
};

struct PipelineConfig {
    PreprocessConfig preprocess;
    ModelConfig model;
    TrainingConfig training;
    PostprocConfig postproc;
    PathsConfig paths;

    /// Settings for 64x64 synthetic corpora.
    static PipelineConfig toy() {
        PipelineConfig c;
        c.preprocess.sizing = {CanonicalSizing::Mode::fixed, 64, 64};
        c.training.epochs = 20;
        c.training.batch = 4;
        c.training.learning_rate = 3e-3;
        return c;
    }

    void validate() const {
        require(preprocess.sizing.width >= 1 && preprocess.sizing.height >= 1, "canonical size must be >= 1");
        ::glandseg::validate(preprocess.lbp);
        StainMatrix{preprocess.stain_matrix};
        model.validate();
        require(training.epochs >= 0, "training.epochs must be >= 0");
        require(training.batch >= 1, "training.batch must be >= 1");
        require(training.learning_rate > 0 && std::isfinite(training.learning_rate), "training.learning_rate must be > 0");
        require(training.validation_fraction >= 0 && training.validation_fraction < 1,
                "training.validation_fraction must lie in [0, 1)");
        require(postproc.min_area_frac >= 0 && postproc.min_area_frac < 1, "postproc.min_area_frac must lie in [0, 1)");
    }

    bool operator==(const PipelineConfig&) const = default;
};

namespace detail {

struct ConfigReader {
    const std::map<std::string, TomlValue>& entries;
    std::string section;

    const TomlValue* find(const std::string& key) const {
        auto it = entries.find(key);
        return it == entries.end() ? nullptr : &it->second;
    }
    [[noreturn]] void type_error(const std::string& key, const char* want) const {
        throw UsageError("config " + section + "." + key + ": expected " + want);
    }
    void get(const std::string& key, bool& out) const {
        if (auto* v = find(key)) {
            if (!std::holds_alternative<bool>(*v)) type_error(key, "a boolean");
            out = std::get<bool>(*v);
        }
    }
    void get(const std::string& key, int& out) const {
        if (auto* v = find(key)) {
            if (!std::holds_alternative<std::int64_t>(*v)) type_error(key, "an integer");
            out = static_cast<int>(std::get<std::int64_t>(*v));
        }
    }
    void get(const std::string& key, std::uint64_t& out) const {
        if (auto* v = find(key)) {
            if (!std::holds_alternative<std::int64_t>(*v) || std::get<std::int64_t>(*v) < 0)
                type_error(key, "a non-negative integer");
            out = static_cast<std::uint64_t>(std::get<std::int64_t>(*v));
        }
    }
    void get(const std::string& key, double& out) const {
        if (auto* v = find(key)) {
            if (std::holds_alternative<double>(*v))
                out = std::get<double>(*v);
            else if (std::holds_alternative<std::int64_t>(*v))
                out = static_cast<double>(std::get<std::int64_t>(*v));
            else
                type_error(key, "a number");
        }
    }
    void get(const std::string& key, std::string& out) const {
        if (auto* v = find(key)) {
            if (!std::holds_alternative<std::string>(*v)) type_error(key, "a string");
            out = std::get<std::string>(*v);
        }
    }
    void get(const std::string& key, std::vector<double>& out) const {
        if (auto* v = find(key)) {
            if (!std::holds_alternative<std::vector<double>>(*v)) type_error(key, "an array");
            out = std::get<std::vector<double>>(*v);
        }
    }
};

inline const std::map<std::string, std::vector<std::string>>& known_keys() {
    static const std::map<std::string, std::vector<std::string>> keys{
        {"preprocess", {"canonical_mode", "canonical_width", "canonical_height", "lbp_points", "lbp_radius", "stain_matrix"}},
        {"model", {"input_channels", "encoder_widths", "lbp_injection", "coarse_head_stage", "seed"}},
        {"training", {"epochs", "batch", "learning_rate", "optimizer", "seed", "augment", "validation_fraction"}},
        {"postproc", {"min_area_frac"}},
        {"paths", {"train_dir", "test_dir", "output_dir", "checkpoint"}},
    };
    return keys;
}

}  // namespace detail

/// Overlays the entries of `doc` onto `cfg`. Unknown sections or keys and
/// mistyped values are usage errors.
inline void apply_config(PipelineConfig& cfg, const TomlDocument& doc) {
    const auto& known = detail::known_keys();
    for (const auto& [section, entries] : doc.sections) {
        auto it = known.find(section);
        if (it == known.end()) {
            if (section.empty() && entries.empty()) continue;
            throw UsageError("config: unknown section '[" + section + "]'");
        }
        for (const auto& [key, value] : entries)
            if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
                throw UsageError("config: unknown key '" + section + "." + key + "'");
        const detail::ConfigReader r{entries, section};
        if (section == "preprocess") {
            std::string mode = cfg.preprocess.sizing.mode == CanonicalSizing::Mode::fixed ? "fixed" : "round_up";
            r.get("canonical_mode", mode);
            if (mode == "fixed")
                cfg.preprocess.sizing.mode = CanonicalSizing::Mode::fixed;
            else if (mode == "round_up")
                cfg.preprocess.sizing.mode = CanonicalSizing::Mode::round_up;
            else
                throw UsageError("config preprocess.canonical_mode: expected \"fixed\" or \"round_up\"");
            r.get("canonical_width", cfg.preprocess.sizing.width);
            r.get("canonical_height", cfg.preprocess.sizing.height);
            r.get("lbp_points", cfg.preprocess.lbp.n_points);
            r.get("lbp_radius", cfg.preprocess.lbp.radius);
            if (r.find("stain_matrix")) {
                std::vector<double> m;
                r.get("stain_matrix", m);
                if (m.size() != 9) throw UsageError("config preprocess.stain_matrix: expected 9 numbers (row-major 3x3)");
                for (int i = 0; i < 9; ++i) cfg.preprocess.stain_matrix[i / 3][i % 3] = m[static_cast<std::size_t>(i)];
            }
        } else if (section == "model") {
            r.get("input_channels", cfg.model.input_channels);
            if (r.find("encoder_widths")) {
                std::vector<double> w;
                r.get("encoder_widths", w);
                cfg.model.encoder_widths.clear();
                for (double v : w) {
                    if (v != std::floor(v)) throw UsageError("config model.encoder_widths: expected integers");
                    cfg.model.encoder_widths.push_back(static_cast<int>(v));
                }
            }
            r.get("lbp_injection", cfg.model.lbp_injection);
            r.get("coarse_head_stage", cfg.model.coarse_head_stage);
            r.get("seed", cfg.model.seed);
        } else if (section == "training") {
            r.get("epochs", cfg.training.epochs);
            r.get("batch", cfg.training.batch);
            r.get("learning_rate", cfg.training.learning_rate);
            std::string opt = cfg.training.optimizer == Optimizer::adam ? "adam" : "sgd";
            r.get("optimizer", opt);
            if (opt == "adam")
                cfg.training.optimizer = Optimizer::adam;
            else if (opt == "sgd")
                cfg.training.optimizer = Optimizer::sgd;
            else
                throw UsageError("config training.optimizer: expected \"adam\" or \"sgd\"");
            r.get("seed", cfg.training.seed);
            r.get("augment", cfg.training.augment);
            r.get("validation_fraction", cfg.training.validation_fraction);
        } else if (section == "postproc") {
            r.get("min_area_frac", cfg.postproc.min_area_frac);
        } else if (section == "paths") {
            r.get("train_dir", cfg.paths.train_dir);
            r.get("test_dir", cfg.paths.test_dir);
            r.get("output_dir", cfg.paths.output_dir);
            r.get("checkpoint", cfg.paths.checkpoint);
        }
    }
}

inline PipelineConfig parse_config(const std::string& text, PipelineConfig base = {}) {
    apply_config(base, parse_toml(text));
    base.validate();
    return base;
}

inline PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

/// Applies one `section.key=value` override.
inline void apply_override(PipelineConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw UsageError("override '" + assignment + "' is not of the form section.key=value");
    const std::string text = "[" + assignment.substr(0, dot) + "]\n" + assignment.substr(dot + 1, eq - dot - 1) +
                             " = " + assignment.substr(eq + 1) + "\n";
    apply_config(cfg, parse_toml(text));
}

namespace detail {

struct Entry {
    std::string key;
    TomlValue value;
    const char* note;
};

inline std::vector<std::pair<std::string, std::vector<Entry>>> config_entries(const PipelineConfig& c) {
    std::vector<double> matrix;
    for (const auto& row : c.preprocess.stain_matrix) matrix.insert(matrix.end(), row.begin(), row.end());
    std::vector<double> widths(c.model.encoder_widths.begin(), c.model.encoder_widths.end());
    auto i64 = [](auto v) { return static_cast<std::int64_t>(v); };
    return {
        {"preprocess",
         {{"canonical_mode", std::string(c.preprocess.sizing.mode == CanonicalSizing::Mode::fixed ? "fixed" : "round_up"),
           "\"fixed\" resizes every image to canonical_width x canonical_height; \"round_up\" lifts each side to a multiple of 64"},
          {"canonical_width", i64(c.preprocess.sizing.width), "network input width; 832 for the full-size gland dataset"},
          {"canonical_height", i64(c.preprocess.sizing.height), "network input height; 576 for the full-size gland dataset"},
          {"lbp_points", i64(c.preprocess.lbp.n_points), "LBP sampling points N, in [4, 24]"},
          {"lbp_radius", c.preprocess.lbp.radius, "LBP sampling radius R in pixels"},
          {"stain_matrix", matrix, "row-major H/E/DAB optical-density vectors (Ruifrok-Johnston by default)"}}},
        {"model",
         {{"input_channels", i64(c.model.input_channels), "network input channels: red and hematoxylin"},
          {"encoder_widths", widths, "channels per encoder stage; inputs must be divisible by 2^stages"},
          {"lbp_injection", c.model.lbp_injection, "feed the rotation-invariant LBP map into the fine head"},
          {"coarse_head_stage", i64(c.model.coarse_head_stage), "auxiliary head resolution is 1 / 2^stage"},
          {"seed", i64(c.model.seed), "weight initialisation seed"}}},
        {"training",
         {{"epochs", i64(c.training.epochs), "passes over the training set"},
          {"batch", i64(c.training.batch), "mini-batch size"},
          {"learning_rate", c.training.learning_rate, "optimizer step size"},
          {"optimizer", std::string(c.training.optimizer == Optimizer::adam ? "adam" : "sgd"), "\"adam\" or \"sgd\""},
          {"seed", i64(c.training.seed), "sample-order shuffling seed"},
          {"augment", c.training.augment, "expand each training image into 52 flipped / cropped variants"},
          {"validation_fraction", c.training.validation_fraction,
           "trailing share of the training set used to pick the best epoch"}}},
        {"postproc", {{"min_area_frac", c.postproc.min_area_frac, "objects smaller than this share of the image are removed"}}},
        {"paths",
         {{"train_dir", c.paths.train_dir, "directory of <name>.png images with <name>_anno.png instance masks"},
          {"test_dir", c.paths.test_dir, "evaluation images, same layout"},
          {"output_dir", c.paths.output_dir, "destination for checkpoints, maps, masks and reports"},
          {"checkpoint", c.paths.checkpoint, "trained weights to evaluate; empty means train first"}}},
    };
}

}  // namespace detail

/// Serialises a configuration. With `annotate`, each key is preceded by a
/// comment describing it.
inline std::string serialize_config(const PipelineConfig& c, bool annotate = false) {
    std::ostringstream os;
    bool first = true;
    for (const auto& [section, entries] : detail::config_entries(c)) {
        if (!first) os << '\n';
        first = false;
        os << '[' << section << "]\n";
        for (const auto& e : entries) {
            if (annotate) os << "# " << e.note << '\n';
            os << e.key << " = " << detail::format_value(e.value) << '\n';
        }
    }
    return os.str();
}

}  // namespace glandseg
