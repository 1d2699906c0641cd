#pragma once

#include <cstdint>
#include <utility>

#include "erw/environment.hpp"
#include "erw/walk.hpp"

// The transition kernel on environments: run the walk from the origin until
// T_1 (first time the projection reaches 1), strip the cookies the walk
// consumed (leftover operator, endpoint's last visit exempt), then shift so
// the crossing point becomes the new origin. Iterating this from a sampled
// environment is the "environment viewed from the particle" chain.

namespace erw {

inline constexpr std::uint64_t kKernelBudget = 1000000000ULL;

struct KernelDraw {
    SampledEnvironment env; // leftover environment, shifted to the crossing point
    Site crossing;          // X at T_1, in the input view's coordinates
    std::uint64_t steps = 0;
};

inline KernelDraw sample_R(const SampledEnvironment& env, SplitMix64& rng,
                           std::uint64_t budget = kKernelBudget) {
    Site origin;
    origin.dim = env.lattice.dim();
    StopRule rule;
    rule.max_steps = budget;
    rule.hit_right = 1.0;
    RunOptions opts;
    opts.export_tables = true;
    auto sum = run_walk(env, origin, rng, rule, opts);
    if (sum.stop_reason != StopReason::HitRight)
        throw TimeoutError("sample_R: step budget " + std::to_string(budget) +
                           " exhausted before the walk crossed level 1");

    SampledEnvironment out = env;
    // visit counts include the occupancy at T_1; every strictly-earlier visit
    // consumed a cookie, and the crossing site was never seen before T_1
    for (const auto& [site, cnt] : sum.visit_counts)
        out.offsets[base_site(env, site)] += cnt;
    auto it = out.offsets.find(base_site(env, sum.final_state.position));
    if (it != out.offsets.end()) {
        if (--it->second == 0) out.offsets.erase(it);
    }
    out = shift(out, sum.final_state.position);
    return {std::move(out), sum.final_state.position, sum.final_state.n};
}

} // namespace erw
