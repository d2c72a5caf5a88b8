#pragma once

// Config-file resolution and filesystem helpers shared by the CLI commands.
// Precedence is flags > config file > built-in defaults; unknown config keys
// are rejected with a nearest-key suggestion.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irtkit/error.hpp"

namespace irtkit {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1,
                               diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

inline std::string nearest_key(const std::string& key, const std::vector<std::string>& known) {
    std::string best;
    std::size_t best_d = key.size() + 1;
    for (const auto& candidate : known) {
        const std::size_t d = edit_distance(key, candidate);
        if (d < best_d) {
            best_d = d;
            best = candidate;
        }
    }
    return best_d <= std::max<std::size_t>(2, key.size() / 3) ? best : "";
}

// Paths are resolved against IRTKIT_DATA_DIR when set and the path is
// relative; absolute paths pass through.
inline std::string resolve_path(const std::string& path) {
    if (path.empty()) return path;
    const std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    const char* base = std::getenv("IRTKIT_DATA_DIR");
    if (base == nullptr || *base == '\0') return path;
    return (std::filesystem::path(base) / p).string();
}

inline nlohmann::json load_config_file(const std::string& path) {
    std::ifstream in(resolve_path(path));
    if (!in) fail("io", "cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("parse", "config file '" + path + "': " + e.what());
    }
    if (!j.is_object()) fail("config", "config file '" + path + "' must hold a JSON object");
    return j;
}

// Atomic write: the content lands under a temporary name and is renamed into
// place, so readers never observe a partial file.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string resolved = resolve_path(path);
    const std::filesystem::path target(resolved);
    if (target.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(target.parent_path(), ec);
    }
    const std::string tmp = resolved + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail("io", "cannot write '" + resolved + "'");
        out << content;
        out.flush();
        if (!out) fail("io", "short write to '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, resolved, ec);
    if (ec) fail("io", "cannot rename '" + tmp + "' into place: " + ec.message());
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(resolve_path(path), std::ios::binary);
    if (!in) fail("io", "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace irtkit
