#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "erw/common.hpp"
#include "erw/environment.hpp"
#include "erw/lattice.hpp"
#include "erw/rng.hpp"

// The walk engine. Stepping consumes the visit-indexed cookie at the current
// site, credits its drift to the departure site's slab (that is D_n and
// D_n^z), then moves by inverse CDF over the canonical slot order with one
// uniform per step; M_n = (X_n - X_0).l - D_n is the Doob-Meyer martingale.
//
// Two implementations on purpose. GenericWalker is the reference: it goes
// through the plain environment API cookie by cookie and keeps full maps.
// run_walk is the measurement engine: per-lattice drivers with dense
// two-sided tables on Z and strips, a hash table elsewhere, identical
// trajectories bit for bit (the test suite holds them together). Projections
// relative to the start everywhere: hit_right = x stops at T_x.

namespace erw {

enum class StopReason { HitRight, HitLeft, Returned, Budget };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::HitRight: return "hit_right";
        case StopReason::HitLeft: return "hit_left";
        case StopReason::Returned: return "returned";
        default: return "budget";
    }
}

struct StopRule {
    std::uint64_t max_steps = 0; // required hard cap
    std::optional<double> hit_right; // stop when (X_n - X_0).l >= value
    std::optional<double> hit_left;  // stop when (X_n - X_0).l <= value
    bool stop_on_return = false;     // stop when X_n = X_0, n >= 1
};

struct RunOptions {
    std::vector<std::uint64_t> snapshot_times; // sorted ascending
    std::vector<double> level_snapshots;       // sorted ascending, relative projections
    std::uint64_t late_window_start = std::numeric_limits<std::uint64_t>::max();
    std::size_t record_path_cap = 0; // 0 = no path retention
    bool record_ladders = false;
    bool export_tables = false; // visit counts + per-slab drift in the summary
    std::uint64_t site_cap = 100000000;
    bool misindex_control = false; // negative control: account cookie i+1, move by cookie i
};

struct WalkState {
    Site position;
    std::uint64_t n = 0;
    double proj_rel = 0.0;
    double drift_total = 0.0;
    double mart = 0.0;
    double min_proj = 0.0;
    double max_proj = 0.0;
    double late_min_proj = std::numeric_limits<double>::infinity();
    std::uint64_t returns_to_start = 0;
    std::uint64_t sign_changes = 0;
    std::uint64_t last_return_time = 0;
    std::uint64_t distinct_sites = 1;
};

struct Snapshot {
    std::uint64_t n = 0;
    double mart = 0.0;
    double proj = 0.0;
    double drift_total = 0.0;
};

struct LevelHit {
    double level = 0.0;
    std::uint64_t time = 0;
    double drift_total = 0.0;
};

struct RecordedStep {
    Site site;
    double drift_total = 0.0;
    double mart = 0.0;
};

struct TrajectorySummary {
    StopReason stop_reason = StopReason::Budget;
    WalkState final_state;
    std::optional<std::uint64_t> hit_time;
    std::vector<Snapshot> snapshots;
    std::vector<LevelHit> level_hits;
    std::vector<std::uint64_t> ladder_times;
    std::vector<RecordedStep> path;
    bool path_truncated = false;
    std::map<Site, std::uint32_t> visit_counts; // only when export_tables
    std::map<std::int64_t, double> drift_by_slab;
};

// -- dense two-sided table -------------------------------------------------

// Growable array over signed indices; index -1-i lives in the negative half.
template <class T>
class TwoSided {
  public:
    T& at(std::int64_t i) {
        if (i >= 0) {
            auto u = static_cast<std::size_t>(i);
            if (u >= pos_.size()) grow(pos_, u);
            return pos_[u];
        }
        auto u = static_cast<std::size_t>(-(i + 1));
        if (u >= neg_.size()) grow(neg_, u);
        return neg_[u];
    }

    T get(std::int64_t i) const {
        if (i >= 0) {
            auto u = static_cast<std::size_t>(i);
            return u < pos_.size() ? pos_[u] : T{};
        }
        auto u = static_cast<std::size_t>(-(i + 1));
        return u < neg_.size() ? neg_[u] : T{};
    }

    template <class F>
    void for_each_nonzero(F f) const {
        for (std::size_t u = 0; u < neg_.size(); ++u)
            if (neg_[u] != T{}) f(-static_cast<std::int64_t>(u) - 1, neg_[u]);
        for (std::size_t u = 0; u < pos_.size(); ++u)
            if (pos_[u] != T{}) f(static_cast<std::int64_t>(u), pos_[u]);
    }

  private:
    static void grow(std::vector<T>& v, std::size_t need) {
        std::size_t cap = v.size() < 16 ? 16 : v.size();
        while (cap <= need) cap *= 2;
        v.resize(cap);
    }
    std::vector<T> pos_, neg_;
};

// -- reference walker --------------------------------------------------------

class GenericWalker {
  public:
    GenericWalker(const SampledEnvironment& env, const Site& start, bool misindex = false)
        : env_(&env), misindex_(misindex) {
        check_site(env.lattice, start);
        start_ = start;
        proj_start_ = project(start, env.dir);
        st_.position = start;
        st_.position.dim = start.dim;
        visits_[start] = 1;
    }

    const WalkState& state() const { return st_; }
    const Site& start() const { return start_; }

    void step(double u) {
        const Site here = st_.position;
        const std::uint32_t i = visits_[here];
        const Cookie& c = cookie_at(*env_, here, i);
        double d = drift(c, env_->dir);
        if (misindex_) d = drift(cookie_at(*env_, here, i + 1), env_->dir);
        if (d < -kSumTol) throw EngineError("walk: negative cookie drift at consumption");
        st_.drift_total += d;
        drift_by_slab_[slab_index(here, env_->dir)] += d;

        int slot = 0;
        double acc = 0.0;
        const int nslots = env_->lattice.num_slots();
        for (; slot < nslots - 1; ++slot) {
            acc += c.probs[static_cast<std::size_t>(slot)];
            if (u < acc) break;
        }
        st_.position = neighbor(env_->lattice, here, slot);
        ++st_.n;
        auto& v = visits_[st_.position];
        if (++v == 1) ++st_.distinct_sites;

        const double pr = project(st_.position, env_->dir) - proj_start_;
        st_.proj_rel = pr;
        st_.mart = pr - st_.drift_total;
        st_.min_proj = std::min(st_.min_proj, pr);
        st_.max_proj = std::max(st_.max_proj, pr);
        if (pr > 0) {
            if (prev_sign_ < 0) ++st_.sign_changes;
            prev_sign_ = 1;
        } else if (pr < 0) {
            if (prev_sign_ > 0) ++st_.sign_changes;
            prev_sign_ = -1;
        }
        if (st_.position == start_) {
            ++st_.returns_to_start;
            st_.last_return_time = st_.n;
        }
    }

    const std::unordered_map<Site, std::uint32_t, SiteHasher>& visit_counts() const {
        return visits_;
    }
    const std::map<std::int64_t, double>& drift_by_slab() const { return drift_by_slab_; }

  private:
    const SampledEnvironment* env_;
    bool misindex_;
    Site start_;
    double proj_start_ = 0.0;
    int prev_sign_ = 0;
    WalkState st_;
    std::unordered_map<Site, std::uint32_t, SiteHasher> visits_;
    std::map<std::int64_t, double> drift_by_slab_;
};

// -- optimized engine -------------------------------------------------------

namespace detail {

struct LineDriver {
    std::int64_t x = 0, x0 = 0;
    TwoSided<std::uint32_t> visits;
    explicit LineDriver(const SampledEnvironment&) {}
    void init(const Site& s) { x = x0 = s[0]; }
    std::uint32_t& count() { return visits.at(x); }
    void move(int slot) { x += (slot == 0) ? 1 : -1; }
    double proj_abs() const { return static_cast<double>(x); }
    std::int64_t slab() const { return x; }
    bool at_start() const { return x == x0; }
    Site site() const { return make_site({x}); }
    void export_counts(std::map<Site, std::uint32_t>& out) const {
        visits.for_each_nonzero([&](std::int64_t i, std::uint32_t v) { out[make_site({i})] = v; });
    }
};

struct StripDriver {
    std::int64_t x = 0, y = 0, x0 = 0, y0 = 0, L = 2;
    TwoSided<std::uint32_t> visits;
    explicit StripDriver(const SampledEnvironment& env) : L(env.lattice.L) {}
    void init(const Site& s) {
        x = x0 = s[0];
        y = y0 = s[1];
    }
    std::uint32_t& count() { return visits.at(x * L + y); }
    void move(int slot) {
        switch (slot) {
            case 0: ++x; break;
            case 1: --x; break;
            case 2: y = (y + 1 == L) ? 0 : y + 1; break;
            default: y = (y == 0) ? L - 1 : y - 1; break;
        }
    }
    double proj_abs() const { return static_cast<double>(x); }
    std::int64_t slab() const { return x; }
    bool at_start() const { return x == x0 && y == y0; }
    Site site() const { return make_site({x, y}); }
    void export_counts(std::map<Site, std::uint32_t>& out) const {
        visits.for_each_nonzero([&](std::int64_t i, std::uint32_t v) {
            // invert i = x*L + y with y in [0, L): floor division
            std::int64_t xx = i / L;
            if (i % L < 0) --xx;
            out[make_site({xx, i - xx * L})] = v;
        });
    }
};

// dense storage for the full plane: a growable array of growable rows
struct PlaneDriver {
    std::int64_t x = 0, y = 0, x0 = 0, y0 = 0;
    double l0 = 1.0, l1 = 0.0;
    double proj = 0.0;
    TwoSided<std::unique_ptr<TwoSided<std::uint32_t>>> rows;
    explicit PlaneDriver(const SampledEnvironment& env) : l0(env.dir.l[0]), l1(env.dir.l[1]) {}
    void init(const Site& s) {
        x = x0 = s[0];
        y = y0 = s[1];
        update_proj();
    }
    // same operation order as project() so results are bitwise identical
    void update_proj() {
        double s = 0.0;
        s += static_cast<double>(x) * l0;
        s += static_cast<double>(y) * l1;
        proj = s;
    }
    std::uint32_t& count() {
        auto& row = rows.at(x);
        if (!row) row = std::make_unique<TwoSided<std::uint32_t>>();
        return row->at(y);
    }
    void move(int slot) {
        switch (slot) {
            case 0: ++x; break;
            case 1: --x; break;
            case 2: ++y; break;
            default: --y; break;
        }
        update_proj();
    }
    double proj_abs() const { return proj; }
    std::int64_t slab() const { return slab_of_projection(proj); }
    bool at_start() const { return x == x0 && y == y0; }
    Site site() const { return make_site({x, y}); }
    void export_counts(std::map<Site, std::uint32_t>& out) const {
        rows.for_each_nonzero([&](std::int64_t xx, const std::unique_ptr<TwoSided<std::uint32_t>>& row) {
            row->for_each_nonzero(
                [&](std::int64_t yy, std::uint32_t v) { out[make_site({xx, yy})] = v; });
        });
    }
};

struct HashDriver {
    Site cur;
    const Direction* dir;
    double proj = 0.0;
    std::unordered_map<Site, std::uint32_t, SiteHasher> visits;
    const LatticeSpec* lat;
    explicit HashDriver(const SampledEnvironment& env) : dir(&env.dir), lat(&env.lattice) {
        visits.reserve(1 << 12);
    }
    Site start_site;
    void init(const Site& s) {
        cur = s;
        start_site = s;
        proj = project(s, *dir);
    }
    std::uint32_t& count() { return visits[cur]; }
    void move(int slot) {
        const int axis = slot >> 1;
        cur[axis] += (slot & 1) ? -1 : 1;
        proj = project(cur, *dir);
    }
    double proj_abs() const { return proj; }
    std::int64_t slab() const { return slab_of_projection(proj); }
    bool at_start() const { return cur == start_site; }
    Site site() const { return cur; }
    void export_counts(std::map<Site, std::uint32_t>& out) const {
        for (const auto& [s, v] : visits) out[s] = v;
    }
};

template <class Driver>
TrajectorySummary run_loop(const SampledEnvironment& env, const Site& start, SplitMix64& rng,
                           const StopRule& rule, const RunOptions& opts) {
    const PreparedDistribution& prep = *env.prep;
    const bool lookup_site = prep.stacks.size() > 1 || !env.plain();
    const bool misindex = opts.misindex_control;
    const int nslots = prep.num_slots;
    const PreparedStack* const stack0 = &prep.stacks[0];

    Driver dr(env);
    dr.init(start);
    dr.count() = 1;
    const double proj0 = dr.proj_abs();

    WalkState st;
    st.position = start;
    TrajectorySummary out;
    TwoSided<double> slab_drift;

    std::size_t snap_i = 0;
    while (snap_i < opts.snapshot_times.size() && opts.snapshot_times[snap_i] == 0) {
        out.snapshots.push_back({0, 0.0, 0.0, 0.0});
        ++snap_i;
    }
    std::size_t lvl_i = 0;
    while (lvl_i < opts.level_snapshots.size() && 0.0 >= opts.level_snapshots[lvl_i]) {
        out.level_hits.push_back({opts.level_snapshots[lvl_i], 0, 0.0});
        ++lvl_i;
    }
    double ladder_level = 1.0;
    if (opts.record_ladders) out.ladder_times.push_back(0);
    std::size_t ring_head = 0;
    if (opts.record_path_cap > 0) out.path.push_back({start, 0.0, 0.0});
    if (opts.late_window_start == 0) st.late_min_proj = 0.0;

    auto finish = [&](StopReason reason, std::optional<std::uint64_t> hit) {
        out.stop_reason = reason;
        out.hit_time = hit;
        st.position = dr.site();
        out.final_state = st;
        if (opts.export_tables) {
            dr.export_counts(out.visit_counts);
            slab_drift.for_each_nonzero(
                [&](std::int64_t z, double v) { out.drift_by_slab[z] = v; });
        }
        return out;
    };

    // degenerate stops at n = 0
    if (rule.max_steps == 0) throw ConfigError("walk: StopRule.max_steps must be positive");
    if (rule.hit_right && 0.0 >= *rule.hit_right) return finish(StopReason::HitRight, 0);
    if (rule.hit_left && 0.0 <= *rule.hit_left) return finish(StopReason::HitLeft, 0);

    int prev_sign = 0;
    while (true) {
        // consume the visit-indexed cookie at the current site
        const std::uint32_t i = dr.count();
        const PreparedStack* stp = stack0;
        std::uint64_t off = 0;
        if (lookup_site) {
            Site s = dr.site();
            if (prep.stacks.size() > 1) stp = &prep.stacks[stack_index_at(env, s)];
            if (!env.plain()) off = offset_at(env, s);
        }
        const std::uint64_t idx = static_cast<std::uint64_t>(i) - 1 + off;
        const PreparedCookie& c = idx < stp->prefix.size() ? stp->prefix[idx] : stp->tail;
        double dstep = c.drift;
        if (misindex) {
            const std::uint64_t idx2 = idx + 1;
            dstep = idx2 < stp->prefix.size() ? stp->prefix[idx2].drift : stp->tail.drift;
        }
        st.drift_total += dstep;
        slab_drift.at(dr.slab()) += dstep;

        const int slot = pick_slot(c, nslots, rng.next_u01());
        dr.move(slot);
        ++st.n;
        const std::uint32_t v = ++dr.count();
        if (v == 1 && ++st.distinct_sites > opts.site_cap)
            throw SiteCapExceeded("walk: more than " + std::to_string(opts.site_cap) +
                                  " distinct sites touched");

        const double pr = dr.proj_abs() - proj0;
        st.proj_rel = pr;
        st.mart = pr - st.drift_total;
        if (pr < st.min_proj) st.min_proj = pr;
        if (pr > st.max_proj) st.max_proj = pr;
        if (st.n >= opts.late_window_start && pr < st.late_min_proj) st.late_min_proj = pr;
        if (pr > 0) {
            if (prev_sign < 0) ++st.sign_changes;
            prev_sign = 1;
        } else if (pr < 0) {
            if (prev_sign > 0) ++st.sign_changes;
            prev_sign = -1;
        }
        const bool at_start = dr.at_start();
        if (at_start) {
            ++st.returns_to_start;
            st.last_return_time = st.n;
        }

        if (opts.record_ladders && pr >= ladder_level) {
            out.ladder_times.push_back(st.n);
            ladder_level = pr + 1.0;
        }
        if (snap_i < opts.snapshot_times.size() && st.n == opts.snapshot_times[snap_i]) {
            out.snapshots.push_back({st.n, st.mart, pr, st.drift_total});
            ++snap_i;
        }
        while (lvl_i < opts.level_snapshots.size() && pr >= opts.level_snapshots[lvl_i]) {
            out.level_hits.push_back({opts.level_snapshots[lvl_i], st.n, st.drift_total});
            ++lvl_i;
        }
        if (opts.record_path_cap > 0) {
            if (out.path.size() < opts.record_path_cap) {
                out.path.push_back({dr.site(), st.drift_total, st.mart});
            } else {
                out.path[ring_head] = {dr.site(), st.drift_total, st.mart};
                ring_head = (ring_head + 1) % opts.record_path_cap;
                out.path_truncated = true;
            }
        }

        if (rule.hit_right && pr >= *rule.hit_right) return finish(StopReason::HitRight, st.n);
        if (rule.hit_left && pr <= *rule.hit_left) return finish(StopReason::HitLeft, st.n);
        if (rule.stop_on_return && at_start) return finish(StopReason::Returned, std::nullopt);
        if (st.n >= rule.max_steps) return finish(StopReason::Budget, std::nullopt);
    }
}

} // namespace detail

inline TrajectorySummary run_walk(const SampledEnvironment& env, const Site& start, SplitMix64& rng,
                                  const StopRule& rule, const RunOptions& opts = {}) {
    check_site(env.lattice, start);
    if (env.lattice.is_strip())
        return detail::run_loop<detail::StripDriver>(env, start, rng, rule, opts);
    if (env.lattice.dim() == 1)
        return detail::run_loop<detail::LineDriver>(env, start, rng, rule, opts);
    if (env.lattice.dim() == 2)
        return detail::run_loop<detail::PlaneDriver>(env, start, rng, rule, opts);
    return detail::run_loop<detail::HashDriver>(env, start, rng, rule, opts);
}

// -- ladder times from a recorded path ---------------------------------------

// tau_0 = 0; tau_{n+1} = first time the projection exceeds its tau_n value
// by at least 1. Computed from a recorded path (tests); the engine computes
// the same thing online via RunOptions.record_ladders.
inline std::vector<std::uint64_t> ladder_times(const std::vector<Site>& path, const Direction& dir) {
    std::vector<std::uint64_t> out;
    if (path.empty()) return out;
    out.push_back(0);
    double level = project(path[0], dir);
    for (std::size_t n = 1; n < path.size(); ++n) {
        double p = project(path[n], dir);
        if (p >= level + 1.0) {
            out.push_back(n);
            level = p;
        }
    }
    return out;
}

// -- invariant recomputation --------------------------------------------------

struct InvariantReport {
    bool ok = true;
    std::uint64_t first_divergence = 0;
    std::string what;
};

// Replays a recorded path through the plain environment API and re-derives
// D_n and M_n from scratch, comparing them with the values the engine wrote
// at each step.
inline InvariantReport recompute_invariants(const TrajectorySummary& summary,
                                            const SampledEnvironment& env) {
    InvariantReport rep;
    if (summary.path.empty()) {
        rep.ok = false;
        rep.what = "no path retained (set record_path_cap)";
        return rep;
    }
    if (summary.path_truncated) {
        rep.ok = false;
        rep.what = "path ring buffer wrapped; full path required";
        return rep;
    }
    const double proj0 = project(summary.path[0].site, env.dir);
    std::unordered_map<Site, std::uint32_t, SiteHasher> visits;
    visits[summary.path[0].site] = 1;
    double drift_total = 0.0;
    for (std::size_t n = 1; n < summary.path.size(); ++n) {
        const Site& from = summary.path[n - 1].site;
        const Site& to = summary.path[n].site;
        auto ns = neighbors(env.lattice, from);
        if (std::count(ns.begin(), ns.end(), to) == 0) {
            rep.ok = false;
            rep.first_divergence = n;
            rep.what = "recorded path is not nearest-neighbor at step " + std::to_string(n);
            return rep;
        }
        drift_total += drift(cookie_at(env, from, visits[from]), env.dir);
        ++visits[to];
        const double mart = project(to, env.dir) - proj0 - drift_total;
        if (std::abs(drift_total - summary.path[n].drift_total) > 1e-9 ||
            std::abs(mart - summary.path[n].mart) > 1e-9) {
            rep.ok = false;
            rep.first_divergence = n;
            rep.what = "drift/martingale mismatch at step " + std::to_string(n) + ": recomputed D=" +
                       std::to_string(drift_total) + " M=" + std::to_string(mart) + ", recorded D=" +
                       std::to_string(summary.path[n].drift_total) + " M=" +
                       std::to_string(summary.path[n].mart);
            return rep;
        }
    }
    return rep;
}

} // namespace erw
