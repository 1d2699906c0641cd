#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "erw/oracle.hpp"
#include "erw/stats.hpp"

using namespace erw;

namespace {

std::shared_ptr<EnvironmentDistribution> single(double kappa, CookieStack st) {
    auto d = std::make_shared<EnvironmentDistribution>();
    d->kappa = kappa;
    d->support = {{std::move(st), 1.0}};
    return d;
}

SampledEnvironment env_z_zero(std::uint64_t seed = 1) {
    auto z = LatticeSpec::zd(1);
    return make_environment(single(0.5, {{}, Cookie{{0.5, 0.5}}}), z, Direction::e1(z), seed);
}

SampledEnvironment env_z_delta(double delta, int m, std::uint64_t seed = 1) {
    auto z = LatticeSpec::zd(1);
    DriftFamily fam;
    fam.lattice = z;
    fam.kappa = 0.25;
    fam.prefix_cookies = static_cast<std::uint64_t>(m);
    return make_environment(std::make_shared<EnvironmentDistribution>(fam.at(delta)), z,
                            Direction::e1(z), seed);
}

} // namespace

TEST_CASE("estimate plumbing") {
    auto e = reduce_mean({1.0, 2.0, 3.0, 4.0});
    CHECK(e.mean == Catch::Approx(2.5));
    CHECK(e.std_error == Catch::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    CHECK(e.replicas == 4);
    CHECK(e.ci_lo <= e.mean);
    CHECK(e.ci_hi >= e.mean);
    CHECK(e.std_error >= 0.0);

    auto f = reduce_fraction({1, 0, 1, 1});
    CHECK(f.mean == Catch::Approx(0.75));
}

TEST_CASE("decision table") {
    ClassifyParams p; // theta_t = theta_r = 0.95, theta_osc = 0.70
    ClassificationEvidence ev;

    ev.escape_fraction = 0.99;
    ev.late_return_fraction = 0.0;
    CHECK(decide(ev, p) == Verdict::Transient);

    ev = {};
    ev.return_fraction = 0.99;
    ev.sign_change_rate = 0.01;
    ev.oscillation_fraction = 0.97;
    CHECK(decide(ev, p) == Verdict::Recurrent);

    // oscillation evidence is required for a recurrence verdict
    ev.oscillation_fraction = 0.5;
    CHECK(decide(ev, p) == Verdict::Inconclusive);
    ev.oscillation_fraction = p.theta_osc;
    CHECK(decide(ev, p) == Verdict::Recurrent);
    ev.oscillation_fraction = 0.97;
    ev.sign_change_rate = 0.0;
    CHECK(decide(ev, p) == Verdict::Inconclusive);

    // between thresholds: inconclusive
    ev = {};
    ev.escape_fraction = 0.7;
    ev.return_fraction = 0.7;
    CHECK(decide(ev, p) == Verdict::Inconclusive);

    // escape without quiet late window is not transience
    ev = {};
    ev.escape_fraction = 0.99;
    ev.late_return_fraction = 0.2;
    CHECK(decide(ev, p) == Verdict::Inconclusive);
}

TEST_CASE("raising escape evidence never flips transient to recurrent", "[property]") {
    ClassifyParams p;
    SplitMix64 rng{5};
    for (int trial = 0; trial < 2000; ++trial) {
        ClassificationEvidence ev;
        ev.escape_fraction = rng.next_u01();
        ev.return_fraction = rng.next_u01();
        ev.late_return_fraction = rng.next_u01();
        ev.oscillation_fraction = rng.next_u01();
        ev.sign_change_rate = rng.next_u01() < 0.5 ? 0.0 : 0.01;
        auto before = decide(ev, p);
        auto bumped = ev;
        bumped.escape_fraction = std::min(1.0, ev.escape_fraction + rng.next_u01());
        auto after = decide(bumped, p);
        if (before == Verdict::Transient) REQUIRE(after == Verdict::Transient);
        REQUIRE_FALSE((before == Verdict::Transient && after == Verdict::Recurrent));
    }
}

TEST_CASE("escape estimate is null for the zero-drift walk") {
    ReplicaPlan plan;
    plan.seed = 9001;
    plan.replicas = 200;
    EscapeParams ep;
    ep.horizon = 100000;
    ep.escape_level = 1000.0;
    auto est = estimate_escape(env_z_zero(), ep, plan);
    CHECK(est.mean == 0.0);
    CHECK(est.ci_hi < 0.01);
}

TEST_CASE("escape estimate detects strong drift") {
    // three cookies of (0.75, 0.25): total drift 1.5, past the line threshold
    ReplicaPlan plan;
    plan.seed = 9002;
    plan.replicas = 200;
    EscapeParams ep;
    ep.horizon = 100000;
    ep.escape_level = 100.0;
    auto est = estimate_escape(env_z_delta(1.5, 3), ep, plan);
    CHECK(est.mean > 0.9);
}

TEST_CASE("escape estimate refuses infinite total drift") {
    auto z = LatticeSpec::zd(1);
    auto env = make_environment(single(0.25, {{}, Cookie{{0.75, 0.25}}}), z, Direction::e1(z), 1);
    ReplicaPlan plan;
    plan.seed = 9003;
    plan.replicas = 50;
    EscapeParams ep;
    ep.horizon = 10000;
    REQUIRE_THROWS_AS(estimate_escape(env, ep, plan), ConfigError);
    ep.allow_infinite_delta = true;
    auto est = estimate_escape(env, ep, plan);
    CHECK(est.mean > 0.9);
}

TEST_CASE("annealed and quenched estimates agree on a mixture", "[property]") {
    auto z = LatticeSpec::zd(1);
    auto dist = std::make_shared<EnvironmentDistribution>();
    dist->kappa = 0.05;
    DriftFamily fam;
    fam.lattice = z;
    fam.kappa = 0.05;
    fam.prefix_cookies = 4;
    dist->support = {{fam.at(1.2).support[0].stack, 0.5}, {fam.at(1.8).support[0].stack, 0.5}};
    auto env = make_environment(dist, z, Direction::e1(z), 1);

    EscapeParams ep;
    ep.horizon = 50000;
    ep.escape_level = 50.0;
    ReplicaPlan annealed;
    annealed.seed = 9004;
    annealed.replicas = 400;
    ReplicaPlan quenched = annealed;
    quenched.quenched = true;
    auto a = estimate_escape(env, ep, annealed);
    auto q = estimate_escape(env, ep, quenched);
    double gap = std::abs(a.mean - q.mean);
    double scale = std::sqrt(a.std_error * a.std_error + q.std_error * q.std_error);
    CHECK(gap <= 3.0 * scale + 1e-12);

    // degenerate (single-stack) distribution: the two modes see the same
    // environment, so the estimates are identical
    auto degenerate = env_z_delta(1.5, 3);
    auto da = estimate_escape(degenerate, ep, annealed);
    quenched.replicas = annealed.replicas;
    auto dq = estimate_escape(degenerate, ep, quenched);
    CHECK(da.mean == dq.mean);
}

TEST_CASE("hitting frequencies agree with the exact solver", "[property]") {
    // excited window: one (0.75, 0.25) cookie per site, exits at +2 / -2
    auto z = LatticeSpec::zd(1);
    auto env = make_environment(single(0.25, {{Cookie{{0.75, 0.25}}}, Cookie{{0.5, 0.5}}}), z,
                                Direction::e1(z), 77);
    auto inst = make_instance(env, 2, 2);
    const double exact = exact_hitting_prob(inst, detail::origin_of(z));

    const std::uint64_t R = 10000;
    std::vector<char> hit(R, 0);
    StopRule rule;
    rule.max_steps = 1000000;
    rule.hit_right = 2.0;
    rule.hit_left = -2.0;
    detail::for_each_replica(R, 1, [&](std::uint64_t r) {
        auto e = detail::reseeded(env, env_seed(9005, r, true));
        auto rng = walk_stream(9005, r);
        auto sum = run_walk(e, detail::origin_of(z), rng, rule);
        hit[r] = sum.stop_reason == StopReason::HitRight ? 1 : 0;
    });
    auto est = reduce_fraction(hit);
    double sigma = std::sqrt(exact * (1.0 - exact) / static_cast<double>(R));
    CHECK(std::abs(est.mean - exact) <= 3.0 * sigma);
}

TEST_CASE("classifier verdicts at reduced scale") {
    // acceptance-scale runs live in the acceptance suite; these use a short
    // horizon with correspondingly looser oscillation demands
    ClassifyParams p;
    p.horizon = 100000;
    p.replicas = 200;
    p.escape_level = 100.0;
    p.osc_level = 10.0;
    p.theta_osc = 0.75;

    auto rec = classify(env_z_delta(0.5, 4), p, 9100);
    CHECK(rec.verdict == Verdict::Recurrent);
    CHECK(rec.evidence.return_fraction >= 0.95);
    CHECK(rec.threshold == 1.0);
    CHECK_FALSE(rec.near_critical);

    auto tr = classify(env_z_delta(1.5, 4), p, 9101);
    CHECK(tr.verdict == Verdict::Transient);
    CHECK(tr.evidence.escape_fraction >= 0.95);
    CHECK(tr.evidence.late_return_fraction <= 0.05);
    CHECK(tr.evidence.speed_estimate > 0.0);

    // strip: width 2, total drift 0.8 > 1/2
    auto s2 = LatticeSpec::strip(2);
    DriftFamily sfam;
    sfam.lattice = s2;
    sfam.kappa = 0.125;
    sfam.lateral = 0.125;
    sfam.prefix_cookies = 4;
    auto senv = make_environment(std::make_shared<EnvironmentDistribution>(sfam.at(0.8)), s2,
                                 Direction::e1(s2), 1);
    auto st = classify(senv, p, 9102);
    CHECK(st.verdict == Verdict::Transient);
    CHECK(st.threshold == 0.5);
    CHECK(st.strip_width == 2);
}

TEST_CASE("classifier refuses near-critical inputs") {
    ClassifyParams p;
    p.horizon = 1000;
    p.replicas = 20;
    auto env = env_z_delta(0.95, 4); // within 10% of the threshold 1
    REQUIRE_THROWS_AS(classify(env, p, 9200), NearCriticalRefusal);
    p.force = true;
    auto res = classify(env, p, 9200);
    CHECK(res.near_critical);

    // refusal band is relative to the strip threshold 1/L
    auto s2 = LatticeSpec::strip(2);
    CHECK(near_critical(0.52, false, s2));
    CHECK_FALSE(near_critical(0.58, false, s2));
    CHECK_FALSE(near_critical(0.95, false, s2));

    auto z = LatticeSpec::zd(1);
    REQUIRE_THROWS_AS(
        classify(make_environment(single(0.25, {{}, Cookie{{0.25, 0.25, 0.25, 0.25}}}),
                                  LatticeSpec::zd(2), Direction::e1(LatticeSpec::zd(2)), 1),
                 p, 9201),
        ConfigError);
    (void)z;
}

TEST_CASE("martingale test is centered and the control is not") {
    ReplicaPlan plan;
    plan.seed = 9300;
    plan.replicas = 2000;
    auto pts = martingale_test(env_z_zero(), {100, 1000}, plan);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].n == 100);
    for (const auto& pt : pts) CHECK(std::abs(pt.z) <= 3.0);

    auto excited = env_z_delta(1.5, 3);
    auto epts = martingale_test(excited, {1000}, plan);
    CHECK(std::abs(epts[0].z) <= 3.0);

    auto control = martingale_test(excited, {1000}, plan, true);
    CHECK(std::abs(control[0].z) > 3.0);
}

TEST_CASE("drift bound check") {
    ReplicaPlan plan;
    plan.seed = 9400;
    plan.replicas = 1000;
    plan.quenched = true;

    DriftBoundParams dp;
    dp.levels = {1.0, 5.0};
    dp.budget = 200000;
    auto zero = drift_bound_check(env_z_zero(), dp, plan);
    for (const auto& row : zero) {
        CHECK(row.drift_at_stop.mean == 0.0);
        CHECK(row.pass);
    }

    // tiny budget: some replicas cannot reach the level and are reported
    DriftBoundParams tight;
    tight.levels = {5.0};
    tight.budget = 10;
    auto capped = drift_bound_check(env_z_zero(), tight, plan);
    CHECK(capped[0].unreached > 0);
    CHECK(capped[0].pass);

    // drifting configuration: stopping identity puts the mean near x, under
    // the x + 1 bound
    DriftBoundParams dx;
    dx.levels = {10.0};
    dx.budget = 1000000;
    auto ex = drift_bound_check(env_z_delta(1.5, 3), dx, plan);
    CHECK(ex[0].unreached == 0);
    CHECK(ex[0].pass);
    CHECK(ex[0].drift_at_stop.mean >= 9.0);
    CHECK(ex[0].drift_at_stop.mean <= 11.0);
}

TEST_CASE("drift family is exact in the mean") {
    DriftFamily fam;
    fam.lattice = LatticeSpec::zd(1);
    fam.kappa = 0.25;
    fam.prefix_cookies = 4;
    auto dir = Direction::e1(fam.lattice);
    for (double t : {0.25, 0.5, 1.0, 1.5, 2.0}) {
        auto md = mean_delta(fam.at(t), dir);
        CHECK_FALSE(md.infinite);
        CHECK(md.value == Catch::Approx(t).margin(1e-12));
    }
    CHECK(fam.max_parameter() == Catch::Approx(2.0));
    REQUIRE_THROWS_AS(fam.at(2.5), ConfigError);
    REQUIRE_THROWS_AS(fam.at(-0.1), ConfigError);

    DriftFamily sfam;
    sfam.lattice = LatticeSpec::strip(2);
    sfam.kappa = 0.125;
    sfam.lateral = 0.125;
    sfam.prefix_cookies = 4;
    auto sdir = Direction::e1(sfam.lattice);
    auto md = mean_delta(sfam.at(0.8), sdir);
    CHECK(md.value == Catch::Approx(0.8).margin(1e-12));
    // lateral probability is preserved through the family
    auto st = sfam.at(0.8).support[0].stack;
    CHECK(st.prefix[0].probs[2] == 0.125);
    CHECK(st.tail.probs[0] == st.tail.probs[1]);
}

TEST_CASE("sweep crosses the phase boundary at reduced scale") {
    DriftFamily fam;
    fam.lattice = LatticeSpec::zd(1);
    fam.kappa = 0.25;
    fam.prefix_cookies = 4;
    ClassifyParams p;
    p.horizon = 100000;
    p.replicas = 150;
    p.escape_level = 100.0;
    p.osc_level = 10.0;
    p.theta_osc = 0.75;

    auto table = sweep(fam, {0.25, 0.5, 1.5, 2.0}, p, 424242);
    REQUIRE(table.rows.size() == 4);
    CHECK(table.warnings.empty());
    CHECK(table.rows[0].result.verdict == Verdict::Recurrent);
    CHECK(table.rows[1].result.verdict == Verdict::Recurrent);
    CHECK(table.rows[2].result.verdict == Verdict::Transient);
    CHECK(table.rows[3].result.verdict == Verdict::Transient);
    for (const auto& row : table.rows) {
        CHECK(row.mean_delta_value == Catch::Approx(row.t).margin(1e-12));
        CHECK_FALSE(row.refused_near_critical);
    }
}

TEST_CASE("sweep flags near-critical grid points and non-monotone grids") {
    DriftFamily fam;
    fam.lattice = LatticeSpec::zd(1);
    fam.kappa = 0.25;
    fam.prefix_cookies = 4;
    ClassifyParams p;
    p.horizon = 500;
    p.replicas = 10;

    auto table = sweep(fam, {1.05}, p, 7);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].refused_near_critical);
    CHECK(table.rows[0].result.verdict == Verdict::Inconclusive);
    CHECK(table.rows[0].result.near_critical);

    auto repeated = sweep(fam, {0.5, 0.5}, p, 7);
    CHECK_FALSE(repeated.warnings.empty());
}

TEST_CASE("replica fan-out is independent of the thread count", "[property]") {
    auto env = env_z_delta(1.5, 3);
    EscapeParams ep;
    ep.horizon = 20000;
    ep.escape_level = 50.0;
    ReplicaPlan one;
    one.seed = 9500;
    one.replicas = 97; // deliberately not a multiple of the widths below
    ReplicaPlan four = one;
    four.jobs = 4;
    auto a = estimate_escape(env, ep, one);
    auto b = estimate_escape(env, ep, four);
    CHECK(a.mean == b.mean);
    CHECK(a.std_error == b.std_error);

    ReplicaPlan m1 = one;
    m1.replicas = 500;
    ReplicaPlan m3 = m1;
    m3.jobs = 3;
    auto p1 = martingale_test(env, {200, 500}, m1);
    auto p3 = martingale_test(env, {200, 500}, m3);
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].mart.mean == p3[i].mart.mean);
        CHECK(p1[i].z == p3[i].z);
    }

    DriftFamily fam;
    fam.lattice = LatticeSpec::zd(1);
    fam.kappa = 0.25;
    fam.prefix_cookies = 4;
    ClassifyParams cp;
    cp.horizon = 5000;
    cp.replicas = 60;
    cp.escape_level = 20.0;
    auto t1 = sweep(fam, {0.25, 1.5}, cp, 31);
    auto t8 = sweep(fam, {0.25, 1.5}, cp, 31, 8);
    REQUIRE(t1.rows.size() == t8.rows.size());
    for (std::size_t i = 0; i < t1.rows.size(); ++i) {
        CHECK(t1.rows[i].result.verdict == t8.rows[i].result.verdict);
        CHECK(t1.rows[i].result.evidence.escape_fraction ==
              t8.rows[i].result.evidence.escape_fraction);
        CHECK(t1.rows[i].result.evidence.sign_change_rate ==
              t8.rows[i].result.evidence.sign_change_rate);
        CHECK(t1.rows[i].result.evidence.speed_estimate ==
              t8.rows[i].result.evidence.speed_estimate);
    }
}
