// Plain-text key=value configuration with JSON-style arrays for vector values.
// The canonical form (sorted keys, full-precision values) is what gets hashed
// and written into run manifests.
#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddlab {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

using ConfigMap = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline ConfigMap parse_config_text(const std::string& text) {
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

inline ConfigMap load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

// Applies a "key=value" override as passed on the command line.
inline void apply_override(ConfigMap& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + assignment);
    cfg[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

inline std::string canonical_text(const ConfigMap& cfg) {
    std::string out;
    for (const auto& [k, v] : cfg) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string config_hash(const ConfigMap& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_text(cfg))));
    return buf;
}

// Full-precision decimal formatting; round-trips doubles exactly.
inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string format_double_list(const std::vector<double>& xs) {
    std::string out = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += format_double(xs[i]);
    }
    out += "]";
    return out;
}

namespace detail {
inline std::string require(const ConfigMap& cfg, const std::string& key) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) throw ConfigError("missing config key: " + key);
    return it->second;
}
}  // namespace detail

inline bool has_key(const ConfigMap& cfg, const std::string& key) { return cfg.count(key) > 0; }

inline std::string get_string(const ConfigMap& cfg, const std::string& key,
                              const std::string& fallback) {
    const auto it = cfg.find(key);
    return it == cfg.end() ? fallback : it->second;
}

inline double get_double(const ConfigMap& cfg, const std::string& key) {
    const std::string v = detail::require(cfg, key);
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: " + v);
    }
}

inline double get_double(const ConfigMap& cfg, const std::string& key, double fallback) {
    return has_key(cfg, key) ? get_double(cfg, key) : fallback;
}

inline long get_int(const ConfigMap& cfg, const std::string& key) {
    const std::string v = detail::require(cfg, key);
    try {
        std::size_t pos = 0;
        const long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an integer: " + v);
    }
}

inline long get_int(const ConfigMap& cfg, const std::string& key, long fallback) {
    return has_key(cfg, key) ? get_int(cfg, key) : fallback;
}

inline std::vector<double> parse_double_list(const std::string& text, const std::string& key) {
    std::string s = trim(text);
    if (s.size() < 2 || s.front() != '[' || s.back() != ']')
        throw ConfigError("config key " + key + ": expected [a,b,...], got " + text);
    s = s.substr(1, s.size() - 2);
    std::vector<double> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": bad number: " + item);
        }
    }
    return out;
}

inline std::vector<double> get_double_list(const ConfigMap& cfg, const std::string& key,
                                           const std::vector<double>& fallback) {
    if (!has_key(cfg, key)) return fallback;
    return parse_double_list(cfg.at(key), key);
}

}  // namespace ddlab
