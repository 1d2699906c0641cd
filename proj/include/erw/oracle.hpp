#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "erw/environment.hpp"
#include "erw/lattice.hpp"

// Exact ground truth on windowed instances. The walk restricted to the
// window (-i, k) with absorption at projection <= -i or >= k is a finite
// absorbing Markov chain once the state carries, per interior site, how many
// cookies are already consumed there; counts cap at the prefix length because
// tail cookies repeat. Absorption probabilities and expected absorbed drift
// then come from sparse linear systems. A depth-limited exhaustive
// enumeration over the same dynamics (but sharing no state-encoding code
// with the solver) brackets the solver's answers from both sides.

namespace erw {

inline constexpr std::uint64_t kDefaultStateCap = 10000000;
inline constexpr std::size_t kDefaultPrefixCap = 64;

// Windowed instance on Z or a strip, l = e_1. Interior positions have
// first coordinate in (-i, k); `stacks` is indexed by interior site index
// (strip: lateral coordinate folded in). Tails are usually zero-drift (finite
// delta), but the chain is finite and exact either way, and drifting tails
// are what make biased-walk expected-time cross-checks representable.
struct FiniteInstance {
    LatticeSpec lattice;
    Direction dir;
    std::int64_t left = 1;  // absorb at projection <= -left
    std::int64_t right = 1; // absorb at projection >= right
    std::vector<CookieStack> stacks;

    std::int64_t interior_cols() const { return left + right - 1; }
    std::int64_t lanes() const { return lattice.is_strip() ? lattice.L : 1; }

    std::size_t site_index(const Site& s) const {
        return static_cast<std::size_t>((s[0] + left - 1) * lanes() +
                                        (lattice.is_strip() ? s[1] : 0));
    }
    bool interior(const Site& s) const { return s[0] > -left && s[0] < right; }
};

inline FiniteInstance make_instance(const SampledEnvironment& env, std::int64_t i, std::int64_t k,
                                    std::size_t prefix_cap = kDefaultPrefixCap) {
    if (!env.lattice.is_line_or_strip())
        throw ConfigError("oracle: windowed instances exist only on Z and strips");
    if (i < 1 || k < 1) throw ConfigError("oracle: window requires i >= 1 and k >= 1");
    FiniteInstance inst;
    inst.lattice = env.lattice;
    inst.dir = env.dir;
    inst.left = i;
    inst.right = k;
    const std::int64_t L = inst.lanes();
    inst.stacks.resize(static_cast<std::size_t>(inst.interior_cols() * L));
    for (std::int64_t x = -i + 1; x < k; ++x) {
        for (std::int64_t y = 0; y < L; ++y) {
            Site s = env.lattice.is_strip() ? make_site({x, y}) : make_site({x});
            CookieStack st = site_stack(env, s);
            std::uint64_t off = offset_at(env, s);
            if (off > 0) {
                // bake the overlay in: drop the consumed prefix entries
                std::vector<Cookie> rest;
                for (std::size_t j = static_cast<std::size_t>(off); j < st.prefix.size(); ++j)
                    rest.push_back(st.prefix[j]);
                st.prefix = std::move(rest);
            }
            if (st.prefix.size() > prefix_cap)
                throw InstanceTooLarge("oracle: prefix length " + std::to_string(st.prefix.size()) +
                                       " exceeds cap " + std::to_string(prefix_cap));
            inst.stacks[inst.site_index(s)] = std::move(st);
        }
    }
    return inst;
}

// Structural sanity for stacks that did not come through a validated
// environment: slot counts and probability sums must be right or the chain
// assembly would silently read garbage.
inline void check_instance_stack(const CookieStack& st, int slots) {
    auto check = [&](const Cookie& c) {
        if (static_cast<int>(c.probs.size()) != slots)
            throw ConfigError("oracle: cookie has " + std::to_string(c.probs.size()) +
                              " entries, lattice has " + std::to_string(slots) + " slots");
        double sum = 0.0;
        for (double p : c.probs) {
            if (p < 0.0 || p > 1.0) throw ConfigError("oracle: cookie probability out of range");
            sum += p;
        }
        if (std::abs(sum - 1.0) > kSumTol)
            throw ConfigError("oracle: cookie probabilities sum to " + std::to_string(sum));
    };
    for (const auto& c : st.prefix) check(c);
    check(st.tail);
}

inline FiniteInstance make_uniform_instance(const LatticeSpec& lat, std::int64_t i, std::int64_t k,
                                            const CookieStack& stack) {
    if (!lat.is_line_or_strip())
        throw ConfigError("oracle: windowed instances exist only on Z and strips");
    if (i < 1 || k < 1) throw ConfigError("oracle: window requires i >= 1 and k >= 1");
    check_instance_stack(stack, lat.num_slots());
    FiniteInstance inst;
    inst.lattice = lat;
    inst.dir = Direction::e1(lat);
    inst.left = i;
    inst.right = k;
    inst.stacks.assign(static_cast<std::size_t>(inst.interior_cols() * inst.lanes()), stack);
    return inst;
}

// -- state space ----------------------------------------------------------

inline std::uint64_t num_states(const FiniteInstance& inst,
                                std::uint64_t cap = kDefaultStateCap) {
    unsigned __int128 total = static_cast<std::uint64_t>(inst.interior_cols() * inst.lanes());
    for (const auto& st : inst.stacks) {
        total *= static_cast<std::uint64_t>(st.prefix.size() + 1);
        if (total > cap)
            throw InstanceTooLarge("oracle: state space exceeds cap " + std::to_string(cap));
    }
    return static_cast<std::uint64_t>(total);
}

struct OracleSolution {
    double p_right = 0.0;
    double p_left = 0.0;
    double expected_drift = 0.0;
    double expected_time = 0.0;
    std::uint64_t states = 0;
    std::string solver; // "sparselu" or "bicgstab"
};

namespace detail {

struct ChainLayout {
    std::size_t npos = 0;
    std::uint64_t nprof = 1;
    std::vector<std::uint64_t> stride;    // per interior site, 0 when prefix empty
    std::vector<std::uint32_t> radix;     // prefix_len per site (digit range radix+1)
};

inline ChainLayout chain_layout(const FiniteInstance& inst) {
    ChainLayout lay;
    lay.npos = inst.stacks.size();
    lay.stride.assign(lay.npos, 0);
    lay.radix.assign(lay.npos, 0);
    for (std::size_t s = 0; s < lay.npos; ++s) {
        const auto len = static_cast<std::uint32_t>(inst.stacks[s].prefix.size());
        lay.radix[s] = len;
        if (len > 0) {
            lay.stride[s] = lay.nprof;
            lay.nprof *= len + 1;
        }
    }
    return lay;
}

inline std::uint32_t profile_digit(const ChainLayout& lay, std::uint64_t prof, std::size_t s) {
    if (lay.radix[s] == 0) return 0;
    return static_cast<std::uint32_t>((prof / lay.stride[s]) % (lay.radix[s] + 1));
}

// One row of chain dynamics: the consumed cookie at (pos, profile) and the
// per-slot targets. Shared by the reward assembly but not by enumerate_paths.
struct Outcome {
    bool absorb_right = false;
    bool absorb_left = false;
    std::uint64_t state = 0; // when interior
};

} // namespace detail

// -- exhaustive enumeration ------------------------------------------------

struct PathMasses {
    double right_mass = 0.0;
    double left_mass = 0.0;
    double live_mass = 1.0;
};

// Depth-limited exhaustive sum over all paths, evolved as a mass map keyed by
// (position, per-site consumed counts). Deliberately shares no indexing code
// with the linear-system solver: this is the independent referee for it.
inline PathMasses enumerate_paths(const FiniteInstance& inst, const Site& start, int depth) {
    if (depth < 0 || depth > 64) throw ConfigError("oracle: enumeration depth must be in [0, 64]");
    check_site(inst.lattice, start);
    if (!inst.interior(start)) throw ConfigError("oracle: start site is not interior");

    using Key = std::pair<Site, std::vector<std::uint8_t>>;
    struct KeyLess {
        bool operator()(const Key& a, const Key& b) const {
            if (a.first.dim != b.first.dim) return a.first.dim < b.first.dim;
            for (int i = 0; i < a.first.dim; ++i)
                if (a.first[i] != b.first[i]) return a.first[i] < b.first[i];
            return a.second < b.second;
        }
    };
    std::map<Key, double, KeyLess> live;
    live[{start, std::vector<std::uint8_t>(inst.stacks.size(), 0)}] = 1.0;

    PathMasses out;
    for (int step = 0; step < depth && !live.empty(); ++step) {
        std::map<Key, double, KeyLess> next;
        for (const auto& [key, mass] : live) {
            const auto& [pos, counts] = key;
            const std::size_t si = inst.site_index(pos);
            const CookieStack& st = inst.stacks[si];
            const Cookie& c = stack_cookie(st, counts[si]);
            for (int slot = 0; slot < inst.lattice.num_slots(); ++slot) {
                const double p = c.probs[static_cast<std::size_t>(slot)];
                if (p == 0.0) continue;
                Site target = neighbor(inst.lattice, pos, slot);
                if (target[0] >= inst.right) {
                    out.right_mass += mass * p;
                } else if (target[0] <= -inst.left) {
                    out.left_mass += mass * p;
                } else {
                    auto counts2 = counts;
                    if (counts2[si] < st.prefix.size())
                        counts2[si] = static_cast<std::uint8_t>(counts2[si] + 1);
                    next[{target, std::move(counts2)}] += mass * p;
                }
            }
        }
        live = std::move(next);
    }
    out.live_mass = 0.0;
    for (const auto& [key, mass] : live) out.live_mass += mass;
    return out;
}

// -- linear-system solver ---------------------------------------------------

enum class SolverChoice { Auto, Direct, Iterative };

inline OracleSolution solve_instance(const FiniteInstance& inst, const Site& start,
                                     std::uint64_t state_cap = kDefaultStateCap,
                                     SolverChoice choice = SolverChoice::Auto) {
    check_site(inst.lattice, start);
    if (!inst.interior(start)) throw ConfigError("oracle: start site is not interior");
    const std::uint64_t n_states = num_states(inst, state_cap);
    const auto lay = detail::chain_layout(inst);
    const auto n = static_cast<Eigen::Index>(n_states);

    // state id = profile * npos + pos
    auto state_id = [&](std::size_t pos, std::uint64_t prof) {
        return static_cast<Eigen::Index>(prof * lay.npos + pos);
    };

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(n_states) *
                  static_cast<std::size_t>(inst.lattice.num_slots() + 1));
    Eigen::VectorXd b_right = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd b_left = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd reward = Eigen::VectorXd::Zero(n);

    const std::int64_t L = inst.lanes();
    for (std::uint64_t prof = 0; prof < lay.nprof; ++prof) {
        for (std::size_t pos = 0; pos < lay.npos; ++pos) {
            const Eigen::Index row = state_id(pos, prof);
            const std::int64_t x = static_cast<std::int64_t>(pos) / L - (inst.left - 1);
            const std::int64_t y = static_cast<std::int64_t>(pos) % L;
            Site here = inst.lattice.is_strip() ? make_site({x, y}) : make_site({x});
            const CookieStack& st = inst.stacks[pos];
            const std::uint32_t consumed = detail::profile_digit(lay, prof, pos);
            const Cookie& c = stack_cookie(st, consumed);
            reward[row] = drift(c, inst.dir);
            trips.emplace_back(row, row, 1.0);
            const std::uint64_t prof2 =
                consumed < lay.radix[pos] ? prof + lay.stride[pos] : prof;
            for (int slot = 0; slot < inst.lattice.num_slots(); ++slot) {
                const double p = c.probs[static_cast<std::size_t>(slot)];
                if (p == 0.0) continue;
                Site target = neighbor(inst.lattice, here, slot);
                if (target[0] >= inst.right) {
                    b_right[row] += p;
                } else if (target[0] <= -inst.left) {
                    b_left[row] += p;
                } else {
                    trips.emplace_back(row, state_id(inst.site_index(target), prof2), -p);
                }
            }
        }
    }

    Eigen::SparseMatrix<double> A(n, n);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();

    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    OracleSolution sol;
    sol.states = n_states;

    Eigen::VectorXd h_right(n), h_left(n), g(n), t(n);
    bool solved = false;
    const bool try_iterative =
        choice == SolverChoice::Iterative || (choice == SolverChoice::Auto && n_states >= 10000);
    if (try_iterative) {
        Eigen::BiCGSTAB<Eigen::SparseMatrix<double>> it;
        it.setTolerance(1e-13);
        it.setMaxIterations(20000);
        it.compute(A);
        h_right = it.solve(b_right);
        h_left = it.solve(b_left);
        g = it.solve(reward);
        t = it.solve(ones);
        const double scale = std::max({b_right.norm(), b_left.norm(), reward.norm(), ones.norm(), 1.0});
        const double resid = std::max({(A * h_right - b_right).norm(), (A * h_left - b_left).norm(),
                                       (A * g - reward).norm(), (A * t - ones).norm()});
        if (resid <= 1e-12 * scale) {
            solved = true;
            sol.solver = "bicgstab";
        }
    }
    if (!solved) {
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.analyzePattern(A);
        lu.factorize(A);
        if (lu.info() != Eigen::Success)
            throw EngineError("oracle: singular absorbing chain (this is a bug)");
        // one round of iterative refinement recovers the last bits lost in
        // the factorization (the symmetric window then yields exactly 1/2)
        auto refined = [&](const Eigen::VectorXd& b) {
            Eigen::VectorXd x = lu.solve(b);
            x += lu.solve(Eigen::VectorXd(b - A * x));
            return x;
        };
        h_right = refined(b_right);
        h_left = refined(b_left);
        g = refined(reward);
        t = refined(ones);
        sol.solver = "sparselu";
    }

    const Eigen::Index s0 = state_id(inst.site_index(start), 0);
    sol.p_right = h_right[s0];
    sol.p_left = h_left[s0];
    sol.expected_drift = g[s0];
    sol.expected_time = t[s0];

    // optional stopping with the limit taken: absorbed drift balances the
    // boundary projection (relative to the start) exactly
    const double identity = static_cast<double>(inst.right) * sol.p_right -
                            static_cast<double>(inst.left) * sol.p_left -
                            static_cast<double>(start[0]);
    if (std::abs(sol.expected_drift - identity) > 1e-9)
        throw EngineError("oracle: E[D] = k*P[right] - i*P[left] violated by " +
                          std::to_string(std::abs(sol.expected_drift - identity)));
    if (std::abs(sol.p_right + sol.p_left - 1.0) > 1e-9)
        throw EngineError("oracle: absorption probabilities sum to " +
                          std::to_string(sol.p_right + sol.p_left));
    return sol;
}

inline double exact_hitting_prob(const FiniteInstance& inst, const Site& start) {
    return solve_instance(inst, start).p_right;
}

inline double exact_expected_drift(const FiniteInstance& inst, const Site& start) {
    return solve_instance(inst, start).expected_drift;
}

inline double exact_expected_time(const FiniteInstance& inst, const Site& start) {
    return solve_instance(inst, start).expected_time;
}

} // namespace erw
