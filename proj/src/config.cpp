#include "exvae/config.hpp"

#include <fstream>
#include <sstream>

#include "exvae/errors.hpp"

namespace exvae {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str());
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        cfg.set(key, value);
    }
    return cfg;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    values_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const {
    return values_.count(key) > 0;
}

void KeyValueConfig::mark(const std::string& key) const { consumed_[key] = true; }

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
    mark(key);
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

std::string KeyValueConfig::require_str(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ConfigError(key + " required");
    return *v;
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t pos = 0;
        const long out = std::stol(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an integer: " + *v);
    }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t pos = 0;
        const double out = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: " + *v);
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "1" || *v == "true" || *v == "yes" || *v == "on") return true;
    if (*v == "0" || *v == "false" || *v == "no" || *v == "off") return false;
    throw ConfigError("config key " + key + ": not a boolean: " + *v);
}

std::uint64_t KeyValueConfig::require_seed() const {
    auto v = get("seed");
    if (!v) throw ConfigError("seed required");
    try {
        return std::stoull(*v);
    } catch (const std::exception&) {
        throw ConfigError("config key seed: not an integer: " + *v);
    }
}

namespace {

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

} // namespace

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::vector<int> out;
    for (const auto& part : split_commas(*v)) {
        try {
            out.push_back(std::stoi(trim(part)));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not an integer list: " + *v);
        }
    }
    return out;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::vector<double> out;
    for (const auto& part : split_commas(*v)) {
        try {
            out.push_back(std::stod(trim(part)));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": not a number list: " + *v);
        }
    }
    return out;
}

void KeyValueConfig::reject_unknown() const {
    for (const auto& [key, value] : values_)
        if (!consumed_.count(key))
            throw ConfigError("unknown config key: " + key);
}

void KeyValueConfig::reject_outside(std::span<const std::string_view> allowed) const {
    for (const auto& [key, value] : values_) {
        bool known = false;
        for (std::string_view a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown config key: " + key);
    }
}

std::string KeyValueConfig::resolved_text() const {
    std::ostringstream out;
    for (const auto& [key, value] : values_)
        out << key << " = " << value << "\n";
    return out.str();
}

} // namespace exvae
