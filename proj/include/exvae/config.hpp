#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace exvae {

// Flat key=value configuration: one pair per line, '#' starts a comment,
// whitespace around keys and values is trimmed. Later assignments (e.g.
// command-line overrides) win. Reading tracks which keys were consumed so a
// run can reject unknown keys by name.
class KeyValueConfig {
public:
    static KeyValueConfig from_file(const std::string& path);
    static KeyValueConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::optional<std::string> get(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::string require_str(const std::string& key) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t require_seed() const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const;

    // Throws ConfigError naming the first key never read by any accessor.
    void reject_unknown() const;

    // Throws ConfigError naming the first key outside `allowed`. Used by the
    // CLI so one config file can drive several subcommands, each consuming
    // its own subset.
    void reject_outside(std::span<const std::string_view> allowed) const;

    // Deterministic text form (sorted keys), written next to run outputs.
    std::string resolved_text() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> consumed_;
    void mark(const std::string& key) const;
};

} // namespace exvae
