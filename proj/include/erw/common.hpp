#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace erw {

inline constexpr const char* kVersion = "erwlab 0.1.0";

// Hard upper bound on lattice dimension. Sites are fixed-size so the hot
// loop never allocates; raise and recompile if you ever need d > 8.
inline constexpr int kMaxDim = 8;

// Lattice point. Only the first `dim` coordinates are meaningful; the rest
// stay zero so equality and hashing can look at the whole array.
struct Site {
    std::array<std::int64_t, kMaxDim> c{};
    std::int32_t dim = 0;

    std::int64_t& operator[](int i) { return c[static_cast<std::size_t>(i)]; }
    std::int64_t operator[](int i) const { return c[static_cast<std::size_t>(i)]; }

    friend bool operator==(const Site& a, const Site& b) {
        return a.dim == b.dim && a.c == b.c;
    }
    friend bool operator!=(const Site& a, const Site& b) { return !(a == b); }
    friend bool operator<(const Site& a, const Site& b) {
        if (a.dim != b.dim) return a.dim < b.dim;
        return a.c < b.c;
    }
};

inline Site make_site(std::initializer_list<std::int64_t> coords) {
    Site s;
    s.dim = static_cast<std::int32_t>(coords.size());
    int i = 0;
    for (auto v : coords) s.c[static_cast<std::size_t>(i++)] = v;
    return s;
}

// Error taxonomy. The CLI maps ConfigError to exit code 2, CheckFailure to 1,
// everything else to 2 with an "internal" prefix.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EngineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InstanceTooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TimeoutError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SiteCapExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NearCriticalRefusal : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string to_string(const Site& s_) {
    std::string out = "(";
    for (int i = 0; i < s_.dim; ++i) {
        if (i) out += ",";
        out += std::to_string(s_[i]);
    }
    out += ")";
    return out;
}

} // namespace erw
