#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "erw/common.hpp"
#include "erw/lattice.hpp"
#include "erw/rng.hpp"

// Cookie environments. A site carries a stack of cookies: the i-th visit
// consumes cookie i, whose 2d-vector gives the step distribution over the
// canonical direction slots. Stacks are a finite prefix plus a repeated tail;
// the total site drift delta is then a finite sum (infinite when the tail
// itself drifts). Environments are i.i.d. across sites and never stored:
// each site's stack is recovered from a hash of (seed, coordinates), and the
// leftover operator that strips consumed cookies is an overlay of per-site
// offsets on top of that immutable base.

namespace erw {

inline constexpr double kSumTol = 1e-12;

struct Cookie {
    std::vector<double> probs; // indexed by canonical direction slot
};

inline double drift(const Cookie& c, const Direction& dir) {
    double acc = 0.0;
    for (std::size_t s = 0; s < c.probs.size(); ++s)
        acc += c.probs[s] * slot_projection_delta(dir, static_cast<int>(s));
    return acc;
}

struct CookieStack {
    std::vector<Cookie> prefix;
    Cookie tail; // repeated for every visit past the prefix
};

inline const Cookie& stack_cookie(const CookieStack& st, std::size_t index0) {
    return index0 < st.prefix.size() ? st.prefix[index0] : st.tail;
}

struct SupportEntry {
    CookieStack stack;
    double probability = 0.0;
};

struct EnvironmentDistribution {
    double kappa = 0.0;
    std::vector<SupportEntry> support;
};

// -- validation ---------------------------------------------------------

namespace detail {
inline void check_cookie(const Cookie& c, double kappa, int slots, const Direction& dir,
                         const std::string& where, std::vector<std::string>& out) {
    if (static_cast<int>(c.probs.size()) != slots) {
        out.push_back(where + ": expected " + std::to_string(slots) + " probabilities, got " +
                      std::to_string(c.probs.size()));
        return;
    }
    double sum = 0.0;
    for (int s = 0; s < slots; ++s) {
        double p = c.probs[static_cast<std::size_t>(s)];
        if (p < kappa - kSumTol || p > 1.0 - kappa + kSumTol)
            out.push_back(where + ": entry " + std::to_string(p) + " at slot " + std::to_string(s) +
                          " outside [kappa, 1-kappa] = [" + std::to_string(kappa) + ", " +
                          std::to_string(1.0 - kappa) + "]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTol)
        out.push_back(where + ": probabilities sum to " + std::to_string(sum) + ", expected 1");
    double d = drift(c, dir);
    if (d < -kSumTol)
        out.push_back(where + ": drift " + std::to_string(d) + " toward l is negative");
}
} // namespace detail

// Collects every violated constraint; empty result means the distribution is
// a valid point of Omega for this lattice and direction.
inline std::vector<std::string> validate(const EnvironmentDistribution& dist, const LatticeSpec& lat,
                                         const Direction& dir) {
    std::vector<std::string> out;
    const int slots = lat.num_slots();
    if (!(dist.kappa > 0.0))
        out.push_back("kappa: must be positive, got " + std::to_string(dist.kappa));
    if (dist.kappa * slots > 1.0 + kSumTol)
        out.push_back("kappa: 2d*kappa = " + std::to_string(dist.kappa * slots) + " exceeds 1");
    if (dist.support.empty()) out.push_back("support: empty");
    double psum = 0.0;
    for (std::size_t k = 0; k < dist.support.size(); ++k) {
        const auto& entry = dist.support[k];
        const std::string base = "support[" + std::to_string(k) + "]";
        if (entry.probability < 0.0 || entry.probability > 1.0)
            out.push_back(base + ": probability " + std::to_string(entry.probability) +
                          " outside [0,1]");
        psum += entry.probability;
        for (std::size_t i = 0; i < entry.stack.prefix.size(); ++i)
            detail::check_cookie(entry.stack.prefix[i], dist.kappa, slots, dir,
                                 base + ".prefix[" + std::to_string(i) + "]", out);
        detail::check_cookie(entry.stack.tail, dist.kappa, slots, dir, base + ".tail", out);
    }
    if (!dist.support.empty() && std::abs(psum - 1.0) > kSumTol)
        out.push_back("support: probabilities sum to " + std::to_string(psum) + ", expected 1");
    return out;
}

// -- total site drift ---------------------------------------------------

struct DeltaValue {
    double value = 0.0;
    bool infinite = false;
};

inline DeltaValue delta(const CookieStack& st, const Direction& dir) {
    DeltaValue d;
    for (const auto& c : st.prefix) d.value += drift(c, dir);
    double tail = drift(st.tail, dir);
    if (std::abs(tail) > kSumTol) d.infinite = true;
    return d;
}

inline DeltaValue mean_delta(const EnvironmentDistribution& dist, const Direction& dir) {
    DeltaValue out;
    for (const auto& entry : dist.support) {
        if (entry.probability <= 0.0) continue;
        DeltaValue d = delta(entry.stack, dir);
        if (d.infinite) {
            out.infinite = true;
            return out;
        }
        out.value += entry.probability * d.value;
    }
    return out;
}

// -- prepared (hot-path) form -------------------------------------------

struct PreparedCookie {
    std::array<double, 2 * kMaxDim> cdf{}; // inclusive prefix sums over slots
    double drift = 0.0;
};

struct PreparedStack {
    std::vector<PreparedCookie> prefix;
    PreparedCookie tail;
    double total_delta = 0.0;
    bool delta_infinite = false;
};

struct PreparedDistribution {
    std::vector<PreparedStack> stacks;
    std::vector<double> stack_cdf; // inclusive prefix sums of support probabilities
    int num_slots = 0;
};

namespace detail {
inline PreparedCookie prepare_cookie(const Cookie& c, const Direction& dir) {
    PreparedCookie pc;
    double acc = 0.0;
    for (std::size_t s = 0; s < c.probs.size(); ++s) {
        acc += c.probs[s];
        pc.cdf[s] = acc;
    }
    pc.cdf[c.probs.size() - 1] = 1.0; // guard against sum rounding below a u ~ 1 draw
    pc.drift = drift(c, dir);
    return pc;
}
} // namespace detail

inline PreparedDistribution prepare(const EnvironmentDistribution& dist, const LatticeSpec& lat,
                                    const Direction& dir) {
    PreparedDistribution prep;
    prep.num_slots = lat.num_slots();
    double acc = 0.0;
    for (const auto& entry : dist.support) {
        PreparedStack ps;
        ps.prefix.reserve(entry.stack.prefix.size());
        for (const auto& c : entry.stack.prefix) ps.prefix.push_back(detail::prepare_cookie(c, dir));
        ps.tail = detail::prepare_cookie(entry.stack.tail, dir);
        DeltaValue d = delta(entry.stack, dir);
        ps.total_delta = d.value;
        ps.delta_infinite = d.infinite;
        prep.stacks.push_back(std::move(ps));
        acc += entry.probability;
        prep.stack_cdf.push_back(acc);
    }
    if (!prep.stack_cdf.empty()) prep.stack_cdf.back() = 1.0;
    return prep;
}

// Direction slot chosen by inverse CDF at u over the canonical order.
inline int pick_slot(const PreparedCookie& c, int num_slots, double u) {
    for (int s = 0; s < num_slots - 1; ++s)
        if (u < c.cdf[static_cast<std::size_t>(s)]) return s;
    return num_slots - 1;
}

inline std::size_t pick_stack(const PreparedDistribution& prep, double u) {
    for (std::size_t k = 0; k + 1 < prep.stack_cdf.size(); ++k)
        if (u < prep.stack_cdf[k]) return k;
    return prep.stack_cdf.size() - 1;
}

// -- sampled environment --------------------------------------------------

// A realization of the i.i.d. environment: immutable shared base (seed +
// distribution) plus this view's private overlay. `translation` implements
// the spatial shift (view coordinate x reads base coordinate x+translation);
// `offsets` implements the leftover operator (cookies consumed per site,
// keyed by base coordinates).
struct SampledEnvironment {
    std::shared_ptr<const EnvironmentDistribution> dist;
    std::shared_ptr<const PreparedDistribution> prep;
    LatticeSpec lattice;
    Direction dir;
    std::uint64_t seed = 0;
    Site translation;
    std::unordered_map<Site, std::uint64_t, SiteHasher> offsets;

    bool plain() const { return offsets.empty(); }
};

inline SampledEnvironment make_environment(std::shared_ptr<const EnvironmentDistribution> dist,
                                           const LatticeSpec& lat, const Direction& dir,
                                           std::uint64_t seed) {
    auto errs = validate(*dist, lat, dir);
    if (!errs.empty()) {
        std::string msg = "invalid environment distribution:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    SampledEnvironment env;
    env.dist = dist;
    env.prep = std::make_shared<const PreparedDistribution>(prepare(*dist, lat, dir));
    env.lattice = lat;
    env.dir = dir;
    env.seed = seed;
    env.translation = Site{};
    env.translation.dim = lat.dim();
    return env;
}

inline Site base_site(const SampledEnvironment& env, const Site& view_site) {
    return add_sites(env.lattice, view_site, env.translation);
}

inline std::size_t stack_index_at(const SampledEnvironment& env, const Site& view_site) {
    if (env.prep->stacks.size() == 1) return 0;
    double u = site_unit_hash(env.seed, base_site(env, view_site));
    return pick_stack(*env.prep, u);
}

inline const CookieStack& site_stack(const SampledEnvironment& env, const Site& view_site) {
    return env.dist->support[stack_index_at(env, view_site)].stack;
}

inline std::uint64_t offset_at(const SampledEnvironment& env, const Site& view_site) {
    if (env.offsets.empty()) return 0;
    auto it = env.offsets.find(base_site(env, view_site));
    return it == env.offsets.end() ? 0 : it->second;
}

// Cookie consumed on the i-th visit (i >= 1), after the overlay's consumed
// count has shifted the index.
inline const Cookie& cookie_at(const SampledEnvironment& env, const Site& view_site, std::uint64_t i) {
    if (i < 1) throw std::domain_error("cookie_at: visit index must be >= 1");
    const CookieStack& st = site_stack(env, view_site);
    const std::uint64_t idx = i - 1 + offset_at(env, view_site);
    return idx < st.prefix.size() ? st.prefix[static_cast<std::size_t>(idx)] : st.tail;
}

inline const PreparedCookie& prepared_cookie_at(const SampledEnvironment& env, const Site& view_site,
                                                std::uint64_t i) {
    const PreparedStack& st = env.prep->stacks[stack_index_at(env, view_site)];
    const std::uint64_t idx = i - 1 + offset_at(env, view_site);
    return idx < st.prefix.size() ? st.prefix[static_cast<std::size_t>(idx)] : st.tail;
}

// Leftover operator: consume the first remaining cookie at every path point
// strictly before the endpoint. Visit counts accumulate on top of whatever
// the overlay already holds.
inline SampledEnvironment leftover(const SampledEnvironment& env, const std::vector<Site>& path) {
    if (path.empty()) throw std::domain_error("leftover: empty path");
    for (std::size_t n = 0; n + 1 < path.size(); ++n) {
        auto ns = neighbors(env.lattice, path[n]);
        if (std::count(ns.begin(), ns.end(), path[n + 1]) == 0)
            throw std::domain_error("leftover: path sites " + to_string(path[n]) + " and " +
                                    to_string(path[n + 1]) + " are not adjacent");
    }
    SampledEnvironment out = env;
    for (std::size_t n = 0; n + 1 < path.size(); ++n)
        out.offsets[base_site(env, path[n])] += 1;
    return out;
}

// Spatial shift: the result viewed at x equals env viewed at x+z.
inline SampledEnvironment shift(const SampledEnvironment& env, const Site& z) {
    SampledEnvironment out = env;
    out.translation = add_sites(env.lattice, env.translation, z);
    return out;
}

} // namespace erw
