#pragma once

// CSV and manifest output. Numbers are serialized with std::to_chars
// (shortest round-trip form), so equal doubles always yield equal bytes and
// output files can be compared byte for byte across thread counts. Files are
// written to a temporary sibling and renamed into place.

#include <charconv>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "erw/common.hpp"
#include "erw/config.hpp"
#include "erw/rng.hpp"
#include "erw/stats.hpp"

namespace erw {

inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format_number(std::uint64_t v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format_number(std::int64_t v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> header) : columns_(std::move(header)) {
        append_row(columns_);
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size())
            throw EngineError("csv row width " + std::to_string(cells.size()) +
                              " does not match the header width " +
                              std::to_string(columns_.size()));
        append_row(cells);
    }

    const std::string& text() const { return text_; }

  private:
    void append_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) text_ += ',';
            text_ += cells[i];
        }
        text_ += '\n';
    }
    std::vector<std::string> columns_;
    std::string text_;
};

// temp sibling + rename, so a crash never leaves a half-written file behind
inline void write_file_atomic(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw EngineError("cannot open " + tmp.string() + " for writing");
        out << contents;
        out.flush();
        if (!out) throw EngineError("short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

// run provenance: everything needed to reproduce the numbers, plus a
// timestamp that deliberately lives only here and never in the CSVs
inline std::string manifest_json(const RunConfig& rc, const std::string& command,
                                 std::uint64_t seed, unsigned jobs) {
    nlohmann::json m;
    m["version"] = kVersion;
    m["rng_mixer"] = kRngMixerName;
    m["command"] = command;
    m["config"] = rc.name;
    m["config_digest"] = rc.digest;
    m["seed"] = seed;
    m["jobs"] = jobs;
    char stamp[32] = {0};
    std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    m["timestamp"] = stamp;
    return m.dump(2) + "\n";
}

inline const std::vector<std::string>& classification_header() {
    static const std::vector<std::string> h = {
        "t",
        "mean_delta",
        "verdict",
        "near_critical",
        "return_fraction",
        "late_return_fraction",
        "escape_fraction",
        "oscillation_fraction",
        "sign_change_rate",
        "speed_estimate",
        "mean_min_proj",
        "mean_max_proj",
        "threshold",
        "horizon",
        "replicas"};
    return h;
}

inline std::vector<std::string> classification_row(double t, const ClassificationResult& res,
                                                   bool flagged_near_critical) {
    const auto& ev = res.evidence;
    return {format_number(t),
            res.mean_delta_infinite ? "inf" : format_number(res.mean_delta_value),
            to_string(res.verdict),
            flagged_near_critical || res.near_critical ? "1" : "0",
            format_number(ev.return_fraction),
            format_number(ev.late_return_fraction),
            format_number(ev.escape_fraction),
            format_number(ev.oscillation_fraction),
            format_number(ev.sign_change_rate),
            format_number(ev.speed_estimate),
            format_number(ev.mean_min_proj),
            format_number(ev.mean_max_proj),
            format_number(res.threshold),
            format_number(res.horizon),
            format_number(res.replicas)};
}

} // namespace erw
