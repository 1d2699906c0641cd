// erwlab: batch front end for the walk laboratory.
//
// Subcommands: validate, simulate, classify, sweep, oracle, martingale-test,
// beatus-check. Exit codes: 0 success and all checks passed, 1 a statistical
// check failed, 2 configuration error. Every error goes to stderr with an
// erwlab:error:{config|check|internal}: prefix. CSV goes to stdout, or
// atomically to --out with a JSON manifest beside it.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "erw/config.hpp"
#include "erw/io.hpp"
#include "erw/kernel.hpp"
#include "erw/oracle.hpp"
#include "erw/stats.hpp"

namespace {

using namespace erw;

struct OutputSink {
    std::string out_path; // empty: stdout
    void deliver(const std::string& csv, const RunConfig& rc, const std::string& command,
                 std::uint64_t seed, unsigned jobs) const {
        if (out_path.empty()) {
            std::fputs(csv.c_str(), stdout);
            return;
        }
        write_file_atomic(out_path, csv);
        write_file_atomic(out_path + ".manifest.json", manifest_json(rc, command, seed, jobs));
    }
};

std::string join_argv(int argc, char** argv) {
    std::string s;
    for (int i = 1; i < argc; ++i) {
        if (i > 1) s += ' ';
        s += argv[i];
    }
    return s;
}

int cmd_validate(const std::string& path) {
    auto rc = parse_config_file(path);
    std::vector<std::string> problems;
    if (rc.environment) {
        problems = validate(*rc.environment, rc.lattice, rc.dir);
    } else if (rc.family) {
        // a family is valid iff its endpoints instantiate to valid laws
        for (double t : {0.0, rc.family->max_parameter()}) {
            auto dist = rc.family->at(t);
            auto v = validate(dist, rc.lattice, rc.dir);
            problems.insert(problems.end(), v.begin(), v.end());
        }
    }
    if (!problems.empty()) {
        for (const auto& p : problems)
            std::fprintf(stderr, "erwlab:error:config: %s: %s\n", path.c_str(), p.c_str());
        return 2;
    }
    std::printf("ok %s\n", rc.digest.c_str());
    return 0;
}

int cmd_simulate(const RunConfig& rc, std::uint64_t seed, unsigned jobs, bool quenched,
                 const OutputSink& sink, const std::string& command) {
    auto base = config_environment(rc, 0);
    StopRule rule;
    rule.max_steps = rc.horizon;
    RunOptions opts;
    opts.late_window_start = (rc.horizon + 1) / 2;
    const Site start = detail::origin_of(rc.lattice);

    struct Row {
        StopReason reason = StopReason::Budget;
        WalkState st;
    };
    std::vector<Row> rows(rc.replicas);
    detail::for_each_replica(rc.replicas, jobs, [&](std::uint64_t r) {
        auto env = detail::reseeded(base, env_seed(seed, r, quenched));
        auto rng = walk_stream(seed, r);
        auto sum = run_walk(env, start, rng, rule, opts);
        rows[r] = {sum.stop_reason, sum.final_state};
    });

    CsvWriter csv({"replica", "stop_reason", "steps", "proj", "drift_total", "mart", "min_proj",
                   "max_proj", "late_min_proj", "returns_to_start", "sign_changes",
                   "last_return_time", "distinct_sites"});
    for (std::uint64_t r = 0; r < rc.replicas; ++r) {
        const auto& st = rows[r].st;
        csv.row({format_number(r), to_string(rows[r].reason), format_number(st.n),
                 format_number(st.proj_rel), format_number(st.drift_total),
                 format_number(st.mart), format_number(st.min_proj), format_number(st.max_proj),
                 format_number(st.late_min_proj), format_number(st.returns_to_start),
                 format_number(st.sign_changes), format_number(st.last_return_time),
                 format_number(st.distinct_sites)});
    }
    sink.deliver(csv.text(), rc, command, seed, jobs);
    return 0;
}

int cmd_classify(const RunConfig& rc, std::uint64_t seed, unsigned jobs, bool force,
                 const OutputSink& sink, const std::string& command) {
    auto base = config_environment(rc, 0);
    ClassifyParams params = rc.classify_params;
    params.force = force;
    auto res = classify(base, params, seed, jobs);
    CsvWriter csv(classification_header());
    csv.row(classification_row(res.mean_delta_value, res, false));
    sink.deliver(csv.text(), rc, command, seed, jobs);
    return 0;
}

int cmd_sweep(const RunConfig& rc, const std::vector<double>& grid, std::uint64_t seed,
              unsigned jobs, bool force, const OutputSink& sink, const std::string& command) {
    if (!rc.family)
        throw ConfigError(rc.name + ": sweep needs a \"family\" block in the config");
    ClassifyParams params = rc.classify_params;
    params.force = force;
    auto table = sweep(*rc.family, grid, params, seed, jobs);
    for (const auto& w : table.warnings) std::fprintf(stderr, "erwlab:warning: %s\n", w.c_str());
    CsvWriter csv(classification_header());
    for (const auto& row : table.rows)
        csv.row(classification_row(row.t, row.result, row.refused_near_critical));
    sink.deliver(csv.text(), rc, command, seed, jobs);
    return 0;
}

int cmd_oracle(const RunConfig& rc, std::uint64_t seed, const OutputSink& sink,
               const std::string& command) {
    if (!rc.window)
        throw ConfigError(rc.name + ": oracle needs a \"window\" block in the config");
    auto env = config_environment(rc, seed);
    auto inst = make_instance(env, rc.window->left, rc.window->right);
    auto sol = solve_instance(inst, detail::origin_of(rc.lattice));
    std::printf("%s\n", format_number(sol.p_right).c_str());
    CsvWriter csv({"p_right", "p_left", "expected_drift", "expected_time", "states", "solver"});
    csv.row({format_number(sol.p_right), format_number(sol.p_left),
             format_number(sol.expected_drift), format_number(sol.expected_time),
             format_number(sol.states), sol.solver});
    if (!sink.out_path.empty()) sink.deliver(csv.text(), rc, command, seed, 1);
    return 0;
}

int cmd_martingale(const RunConfig& rc, const std::vector<std::uint64_t>& times,
                   std::uint64_t seed, unsigned jobs, bool misindex, const OutputSink& sink,
                   const std::string& command) {
    auto base = config_environment(rc, 0);
    ReplicaPlan plan;
    plan.seed = seed;
    plan.replicas = rc.replicas;
    plan.jobs = jobs;
    auto pts = martingale_test(base, times, plan, misindex);
    CsvWriter csv({"n", "mean", "std_error", "z", "replicas", "pass"});
    bool all_ok = true;
    for (const auto& pt : pts) {
        const bool ok = std::abs(pt.z) <= 3.0;
        all_ok = all_ok && ok;
        csv.row({format_number(pt.n), format_number(pt.mart.mean),
                 format_number(pt.mart.std_error), format_number(pt.z),
                 format_number(pt.mart.replicas), ok ? "1" : "0"});
    }
    sink.deliver(csv.text(), rc, command, seed, jobs);
    if (!all_ok) {
        std::fprintf(stderr, "erwlab:error:check: martingale mean drifted past 3 standard "
                             "errors%s\n",
                     misindex ? " (misindexed control run)" : "");
        return 1;
    }
    return 0;
}

int cmd_beatus(const RunConfig& rc, const std::vector<double>& levels, std::uint64_t seed,
               unsigned jobs, std::uint64_t budget, bool annealed, const OutputSink& sink,
               const std::string& command) {
    auto base = config_environment(rc, 0);
    ReplicaPlan plan;
    plan.seed = seed;
    plan.replicas = rc.replicas;
    plan.jobs = jobs;
    plan.quenched = !annealed;
    DriftBoundParams params;
    params.levels = levels;
    params.budget = budget;
    auto rows = drift_bound_check(base, params, plan);
    CsvWriter csv({"x", "mean", "std_error", "ci_lo", "ci_hi", "unreached", "bound", "pass"});
    bool all_ok = true;
    for (const auto& row : rows) {
        all_ok = all_ok && row.pass;
        if (row.unreached > 0)
            std::fprintf(stderr,
                         "erwlab:warning: %s of %s replicas never reached level %s within the "
                         "budget; their drift totals understate the stopped mean\n",
                         format_number(row.unreached).c_str(),
                         format_number(plan.replicas).c_str(),
                         format_number(row.level).c_str());
        csv.row({format_number(row.level), format_number(row.drift_at_stop.mean),
                 format_number(row.drift_at_stop.std_error),
                 format_number(row.drift_at_stop.ci_lo), format_number(row.drift_at_stop.ci_hi),
                 format_number(row.unreached), format_number(row.level + 1.0),
                 row.pass ? "1" : "0"});
    }
    sink.deliver(csv.text(), rc, command, seed, jobs);
    if (!all_ok) {
        std::fprintf(stderr, "erwlab:error:check: stopped drift mean exceeded the x+1 bound\n");
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"excited random walk laboratory"};
    app.require_subcommand(1);
    const std::string command = join_argv(argc, argv);

    std::string config_path, family_path, instance_path, out_path;
    std::uint64_t seed = 0, replicas = 0, horizon = 0, budget = 1000000;
    unsigned jobs = 1;
    bool force = false, quenched = false, annealed = false, misindex = false;
    std::vector<double> grid, levels{1.0, 5.0, 10.0, 20.0};
    std::vector<std::uint64_t> times{100, 1000, 10000};

    auto* v = app.add_subcommand("validate", "check a config against the model invariants");
    v->add_option("config", config_path)->required();

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        if (needs_config) sub->add_option("config", config_path)->required();
        sub->add_option("--seed", seed, "base seed for all replica streams")->required();
        sub->add_option("--replicas", replicas, "override the config replica count");
        sub->add_option("--horizon", horizon, "override the config horizon");
        sub->add_option("--jobs", jobs, "worker threads (results do not depend on this)");
        sub->add_option("--out", out_path, "write CSV here (with a manifest) instead of stdout");
    };

    auto* sim = app.add_subcommand("simulate", "per-replica trajectory summaries");
    add_common(sim, true);
    sim->add_flag("--quenched", quenched, "share one environment across replicas");

    auto* cls = app.add_subcommand("classify", "recurrence/transience verdict");
    add_common(cls, true);
    cls->add_flag("--force", force, "classify even inside the near-critical band");

    auto* sw = app.add_subcommand("sweep", "classify a family across a parameter grid");
    sw->add_option("--family", family_path, "config with a \"family\" block")->required();
    sw->add_option("--grid", grid, "comma-separated family parameters")
        ->required()
        ->delimiter(',');
    sw->add_option("--seed", seed)->required();
    sw->add_option("--replicas", replicas);
    sw->add_option("--horizon", horizon);
    sw->add_option("--jobs", jobs);
    sw->add_option("--out", out_path);
    sw->add_flag("--force", force);

    auto* orc = app.add_subcommand("oracle", "exact absorption numbers for a finite window");
    orc->add_option("--instance", instance_path, "config with a \"window\" block")->required();
    orc->add_option("--seed", seed, "environment realization seed (default 0)");
    orc->add_option("--out", out_path);

    auto* mart = app.add_subcommand("martingale-test", "quenched mean-zero check");
    add_common(mart, true);
    mart->add_option("--times", times, "comma-separated time points")->delimiter(',');
    mart->add_flag("--misindex", misindex, "negative control: account the wrong cookie");

    auto* beat = app.add_subcommand("beatus-check", "stopped drift bound mean <= x+1");
    add_common(beat, true);
    beat->add_option("--levels", levels, "comma-separated stopping levels")->delimiter(',');
    beat->add_option("--budget", budget, "per-replica step budget");
    beat->add_flag("--annealed", annealed, "fresh environment per replica");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::fprintf(stderr, "erwlab:error:config: %s\n", e.what());
        return 2;
    }

    try {
        OutputSink sink{out_path};
        if (v->parsed()) return cmd_validate(config_path);

        const std::string& path = sw->parsed()    ? family_path
                                  : orc->parsed() ? instance_path
                                                  : config_path;
        RunConfig rc = parse_config_file(path);
        if (replicas > 0) rc.replicas = replicas;
        if (horizon > 0) rc.horizon = horizon;
        rc.classify_params.horizon = rc.horizon;
        rc.classify_params.replicas = rc.replicas;
        rc.escape_params.horizon = rc.horizon;

        if (sim->parsed()) return cmd_simulate(rc, seed, jobs, quenched, sink, command);
        if (cls->parsed()) return cmd_classify(rc, seed, jobs, force, sink, command);
        if (sw->parsed()) return cmd_sweep(rc, grid, seed, jobs, force, sink, command);
        if (orc->parsed()) return cmd_oracle(rc, seed, sink, command);
        if (mart->parsed()) return cmd_martingale(rc, times, seed, jobs, misindex, sink, command);
        if (beat->parsed())
            return cmd_beatus(rc, levels, seed, jobs, budget, annealed, sink, command);
        std::fprintf(stderr, "erwlab:error:internal: no subcommand dispatched\n");
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "erwlab:error:config: %s\n", e.what());
        return 2;
    } catch (const NearCriticalRefusal& e) {
        std::fprintf(stderr, "erwlab:error:config: %s\n", e.what());
        return 2;
    } catch (const InstanceTooLarge& e) {
        std::fprintf(stderr, "erwlab:error:config: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "erwlab:error:internal: %s\n", e.what());
        return 2;
    }
}
