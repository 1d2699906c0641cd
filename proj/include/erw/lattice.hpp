#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "erw/common.hpp"

// State space Y = Z^d (d >= 1) or the strip Z x {0,...,L-1}, a drift
// direction l with |l|_1 = 1, and the slab decomposition S_z = {x : z <= x.l < z+1}.
//
// Direction slots are enumerated in one canonical order everywhere:
//   slot 2j   -> +e_{j+1}
//   slot 2j+1 -> -e_{j+1}
// Cookie probability vectors and inverse-CDF sampling index this order, which
// is what makes trajectories bit-reproducible given a seed.

namespace erw {

struct LatticeSpec {
    enum class Kind { Zd, Strip };
    Kind kind = Kind::Zd;
    int d = 1; // effective dimension (Strip has d = 2)
    int L = 0; // strip circumference, 0 for Zd

    static LatticeSpec zd(int d) {
        if (d < 1) throw ConfigError("lattice: Zd requires d >= 1");
        if (d > kMaxDim)
            throw ConfigError("lattice: d > " + std::to_string(kMaxDim) +
                              " not supported (raise kMaxDim and recompile)");
        LatticeSpec s;
        s.kind = Kind::Zd;
        s.d = d;
        return s;
    }

    static LatticeSpec strip(int L) {
        if (L < 2) throw ConfigError("lattice: Strip requires L >= 2");
        LatticeSpec s;
        s.kind = Kind::Strip;
        s.d = 2;
        s.L = L;
        return s;
    }

    int dim() const { return d; }
    int num_slots() const { return 2 * d; }
    bool is_strip() const { return kind == Kind::Strip; }
    // Z and strips are the lattices with a recurrence notion in this library.
    bool is_line_or_strip() const { return is_strip() || d == 1; }

    friend bool operator==(const LatticeSpec& a, const LatticeSpec& b) {
        return a.kind == b.kind && a.d == b.d && a.L == b.L;
    }
};

// Drift direction. For Z and strips this is pinned to e_1; for Zd(d >= 2) any
// real vector with |l|_1 = 1 (tolerance 1e-12) is accepted. Components may be
// given as exact rationals; they are converted once and projections use
// doubles with a documented 1e-12 slab-boundary tolerance.
struct Direction {
    std::vector<double> l;
    double max_unit = 1.0; // max over unit vectors e of e.l  (= max_j |l_j|)

    static Direction e1(const LatticeSpec& lat) {
        Direction dir;
        dir.l.assign(static_cast<std::size_t>(lat.dim()), 0.0);
        dir.l[0] = 1.0;
        dir.max_unit = 1.0;
        return dir;
    }

    static Direction from_components(const LatticeSpec& lat, std::vector<double> comps) {
        if (static_cast<int>(comps.size()) != lat.dim())
            throw ConfigError("direction: expected " + std::to_string(lat.dim()) +
                              " components, got " + std::to_string(comps.size()));
        double norm1 = 0.0;
        for (double v : comps) norm1 += std::abs(v);
        if (std::abs(norm1 - 1.0) > 1e-12)
            throw ConfigError("direction: |l|_1 must equal 1 (got " + std::to_string(norm1) + ")");
        if (lat.is_strip() || lat.dim() == 1) {
            // recurrence on the line and on strips is defined against e_1 only
            bool is_e1 = std::abs(comps[0] - 1.0) <= 1e-12;
            for (std::size_t j = 1; j < comps.size(); ++j)
                if (std::abs(comps[j]) > 1e-12) is_e1 = false;
            if (!is_e1) throw ConfigError("direction: Z and Strip require l = e_1");
            return e1(lat);
        }
        Direction dir;
        dir.l = std::move(comps);
        dir.max_unit = 0.0;
        for (double v : dir.l) dir.max_unit = std::max(dir.max_unit, std::abs(v));
        return dir;
    }

    static Direction from_rationals(const LatticeSpec& lat,
                                    const std::vector<std::pair<std::int64_t, std::int64_t>>& r) {
        std::vector<double> comps;
        comps.reserve(r.size());
        for (auto [num, den] : r) {
            if (den == 0) throw ConfigError("direction: zero denominator");
            comps.push_back(static_cast<double>(num) / static_cast<double>(den));
        }
        return from_components(lat, std::move(comps));
    }

    int dim() const { return static_cast<int>(l.size()); }
};

inline void check_site(const LatticeSpec& lat, const Site& site) {
    if (site.dim != lat.dim())
        throw std::domain_error("site dimension " + std::to_string(site.dim) +
                                " does not match lattice dimension " + std::to_string(lat.dim()));
    if (lat.is_strip() && (site[1] < 0 || site[1] >= lat.L))
        throw std::domain_error("strip site " + to_string(site) + " has second coordinate outside [0," +
                                std::to_string(lat.L) + ")");
}

namespace detail {
inline std::int64_t checked_inc(std::int64_t v) {
    if (v == std::numeric_limits<std::int64_t>::max())
        throw std::overflow_error("site coordinate overflow");
    return v + 1;
}
inline std::int64_t checked_dec(std::int64_t v) {
    if (v == std::numeric_limits<std::int64_t>::min())
        throw std::overflow_error("site coordinate overflow");
    return v - 1;
}
} // namespace detail

// Neighbor in canonical slot order. Strip wraps the second coordinate mod L;
// on Strip L=2 both lateral slots land on the same site and both are kept,
// because cookies assign probability per direction slot, not per target.
inline Site neighbor(const LatticeSpec& lat, const Site& site, int slot) {
    Site out = site;
    const int axis = slot >> 1;
    const bool negative = slot & 1;
    std::int64_t v = negative ? detail::checked_dec(site[axis]) : detail::checked_inc(site[axis]);
    if (lat.is_strip() && axis == 1) {
        if (v < 0) v += lat.L;
        else if (v >= lat.L) v -= lat.L;
    }
    out[axis] = v;
    return out;
}

inline std::vector<Site> neighbors(const LatticeSpec& lat, const Site& site) {
    check_site(lat, site);
    std::vector<Site> out;
    out.reserve(static_cast<std::size_t>(lat.num_slots()));
    for (int s = 0; s < lat.num_slots(); ++s) out.push_back(neighbor(lat, site, s));
    return out;
}

// Translation by z (strip: modular in the second coordinate).
inline Site add_sites(const LatticeSpec& lat, const Site& x, const Site& z) {
    Site out = x;
    for (int i = 0; i < x.dim; ++i) {
        std::int64_t a = x[i], b = z[i];
        if ((b > 0 && a > std::numeric_limits<std::int64_t>::max() - b) ||
            (b < 0 && a < std::numeric_limits<std::int64_t>::min() - b))
            throw std::overflow_error("site coordinate overflow in translation");
        out[i] = a + b;
    }
    if (lat.is_strip()) {
        std::int64_t m = out[1] % lat.L;
        if (m < 0) m += lat.L;
        out[1] = m;
    }
    return out;
}

inline Site negate_site(const LatticeSpec& lat, const Site& z) {
    Site out = z;
    for (int i = 0; i < z.dim; ++i) out[i] = -z[i];
    if (lat.is_strip()) {
        std::int64_t m = out[1] % lat.L;
        if (m < 0) m += lat.L;
        out[1] = m;
    }
    return out;
}

inline double project(const Site& site, const Direction& dir) {
    if (site.dim != dir.dim())
        throw std::domain_error("project: site/direction dimension mismatch");
    double acc = 0.0;
    for (int i = 0; i < site.dim; ++i) acc += static_cast<double>(site[i]) * dir.l[static_cast<std::size_t>(i)];
    return acc;
}

// Slab boundaries get a 1e-12 snap so membership is stable when x.l lands on
// (floating-point images of) integers.
inline constexpr double kSlabTol = 1e-12;

inline std::int64_t slab_of_projection(double p) {
    double r = std::nearbyint(p);
    if (std::abs(p - r) <= kSlabTol) return static_cast<std::int64_t>(r);
    return static_cast<std::int64_t>(std::floor(p));
}

inline std::int64_t slab_index(const Site& site, const Direction& dir) {
    return slab_of_projection(project(site, dir));
}

// Projection increment of one canonical step: +-l[axis].
inline double slot_projection_delta(const Direction& dir, int slot) {
    const double v = dir.l[static_cast<std::size_t>(slot >> 1)];
    return (slot & 1) ? -v : v;
}

} // namespace erw
