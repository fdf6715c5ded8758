#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mbsync/common.hpp"

namespace mbsync {

inline constexpr const char* kVersion = "0.1.0";

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);
/// FNV-1a of a file's bytes. Throws std::runtime_error if unreadable.
std::uint64_t file_hash(const std::string& path);

/// Flat key = value configuration. Every key has a type and a default; values
/// are stored in a canonical spelling so equal configs hash equally.
class RunConfig {
public:
    static RunConfig defaults();

    /// Throws ConfigError on an unknown key or a value that does not parse.
    void set(const std::string& key, const std::string& value);
    /// "key=value" form.
    void set_assignment(const std::string& assignment);
    /// Lines of key = value; '#' starts a comment.
    void load_file(const std::string& path);

    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Sorted key=value lines of every key that can affect outputs.
    std::string canonical() const;
    std::uint64_t hash() const { return fnv1a64(canonical()); }

    /// Cross-key checks. Throws ConfigError.
    void validate() const;

private:
    std::map<std::string, std::string> values_;
};

/// Runs one command ("gen-data", "train", "sample", "eval", "decompose",
/// "sync-bench") and writes its outputs and manifest.json into cfg "out".
/// Throws on failure.
void run_command(const std::string& command, const RunConfig& cfg, std::ostream& log);

/// Re-runs the command recorded in a manifest into `out` (empty keeps the
/// recorded directory). Returns true iff every output hash matches.
bool rerun_manifest(const std::string& manifest_path, const std::string& out, std::ostream& log);

/// Entry point of the mbsync executable; returns the process exit code.
int cli_main(int argc, char** argv);

}  // namespace mbsync
