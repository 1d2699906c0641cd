#pragma once

// JSON experiment configs: one schema shared by every subcommand. A config
// names a lattice, a direction, and exactly one of an environment
// distribution, a drift family, or adds an oracle window over the
// environment. Parsing is strict: unknown keys and malformed values fail
// loudly rather than being guessed at.

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "erw/environment.hpp"
#include "erw/oracle.hpp"
#include "erw/stats.hpp"

namespace erw {

struct OracleWindow {
    std::int64_t left = 1;  // absorb at -left
    std::int64_t right = 1; // absorb at +right
};

struct RunConfig {
    LatticeSpec lattice = LatticeSpec::zd(1);
    Direction dir;
    std::shared_ptr<EnvironmentDistribution> environment; // null if family-only
    std::optional<DriftFamily> family;
    std::optional<OracleWindow> window;
    ClassifyParams classify_params;
    EscapeParams escape_params;
    std::uint64_t horizon = 1000000;
    std::uint64_t replicas = 1000;
    std::string digest; // over the canonical serialized form
    std::string name;   // file path or caller-supplied label
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return out;
}

[[noreturn]] inline void config_fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
}

inline void expect_keys(const nlohmann::json& obj, const std::string& where,
                        std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) config_fail(where, "unknown key \"" + key + "\"");
    }
}

inline double get_number(const nlohmann::json& obj, const std::string& where, const char* key) {
    if (!obj.contains(key)) config_fail(where, std::string("missing \"") + key + "\"");
    const auto& v = obj.at(key);
    if (!v.is_number()) config_fail(where, std::string("\"") + key + "\" must be a number");
    return v.get<double>();
}

inline std::uint64_t get_count(const nlohmann::json& obj, const std::string& where,
                               const char* key) {
    if (!obj.contains(key)) config_fail(where, std::string("missing \"") + key + "\"");
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        config_fail(where, std::string("\"") + key + "\" must be a nonnegative integer");
    return v.get<std::uint64_t>();
}

inline LatticeSpec parse_lattice(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) config_fail(where, "\"lattice\" must be an object");
    expect_keys(j, where, {"kind", "d", "L"});
    if (!j.contains("kind") || !j.at("kind").is_string())
        config_fail(where, "lattice needs a \"kind\" of \"zd\" or \"strip\"");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "zd") {
        auto d = get_count(j, where, "d");
        if (d < 1 || d > kMaxDim) config_fail(where, "lattice dimension out of range");
        return LatticeSpec::zd(static_cast<std::uint32_t>(d));
    }
    if (kind == "strip") {
        auto L = get_count(j, where, "L");
        if (L < 2) config_fail(where, "strip width must be at least 2");
        return LatticeSpec::strip(L);
    }
    config_fail(where, "lattice kind \"" + kind + "\" is not \"zd\" or \"strip\"");
}

inline Cookie parse_cookie(const nlohmann::json& j, const LatticeSpec& lat,
                           const std::string& where) {
    if (!j.is_array() || j.size() != lat.num_slots())
        config_fail(where, "a cookie must be an array of " + std::to_string(lat.num_slots()) +
                               " slot probabilities");
    Cookie c;
    for (const auto& v : j) {
        if (!v.is_number()) config_fail(where, "cookie entries must be numbers");
        c.probs.push_back(v.get<double>());
    }
    return c;
}

inline nlohmann::json cookie_json(const Cookie& c) {
    return nlohmann::json(c.probs);
}

} // namespace detail

inline std::shared_ptr<EnvironmentDistribution> parse_environment(const nlohmann::json& j,
                                                                  const LatticeSpec& lat,
                                                                  const std::string& where) {
    if (!j.is_object()) detail::config_fail(where, "\"environment\" must be an object");
    detail::expect_keys(j, where, {"kappa", "support"});
    auto dist = std::make_shared<EnvironmentDistribution>();
    dist->kappa = detail::get_number(j, where, "kappa");
    if (!j.contains("support") || !j.at("support").is_array() || j.at("support").empty())
        detail::config_fail(where, "environment needs a non-empty \"support\" array");
    std::size_t idx = 0;
    for (const auto& entry : j.at("support")) {
        const std::string ew = where + ", support entry " + std::to_string(idx);
        if (!entry.is_object()) detail::config_fail(ew, "must be an object");
        detail::expect_keys(entry, ew, {"probability", "prefix", "tail"});
        SupportEntry se;
        se.probability = detail::get_number(entry, ew, "probability");
        if (entry.contains("prefix")) {
            if (!entry.at("prefix").is_array())
                detail::config_fail(ew, "\"prefix\" must be an array of cookies");
            std::size_t ci = 0;
            for (const auto& cj : entry.at("prefix")) {
                se.stack.prefix.push_back(
                    detail::parse_cookie(cj, lat, ew + ", cookie " + std::to_string(ci + 1)));
                ++ci;
            }
        }
        if (!entry.contains("tail")) detail::config_fail(ew, "missing \"tail\" cookie");
        se.stack.tail = detail::parse_cookie(entry.at("tail"), lat, ew + ", tail cookie");
        dist->support.push_back(std::move(se));
        ++idx;
    }
    return dist;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& name) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        detail::config_fail(name, std::string("not valid JSON (") + e.what() + ")");
    }
    if (!j.is_object()) detail::config_fail(name, "top level must be an object");
    detail::expect_keys(j, name,
                        {"lattice", "direction", "environment", "family", "window", "classify",
                         "escape", "horizon", "replicas"});

    RunConfig rc;
    rc.name = name;
    if (!j.contains("lattice")) detail::config_fail(name, "missing \"lattice\"");
    rc.lattice = detail::parse_lattice(j.at("lattice"), name);

    if (j.contains("direction")) {
        const auto& dj = j.at("direction");
        detail::expect_keys(dj, name + ", direction", {"components"});
        if (!dj.contains("components") || !dj.at("components").is_array())
            detail::config_fail(name, "\"direction\" needs a \"components\" array");
        std::vector<double> comps;
        for (const auto& v : dj.at("components")) {
            if (!v.is_number()) detail::config_fail(name, "direction components must be numbers");
            comps.push_back(v.get<double>());
        }
        rc.dir = Direction::from_components(rc.lattice, comps);
    } else {
        rc.dir = Direction::e1(rc.lattice);
    }

    const bool has_env = j.contains("environment");
    const bool has_family = j.contains("family");
    if (has_env && has_family)
        detail::config_fail(name, "give either \"environment\" or \"family\", not both");
    if (!has_env && !has_family)
        detail::config_fail(name, "missing \"environment\" (or \"family\")");
    if (has_env) {
        rc.environment = parse_environment(j.at("environment"), rc.lattice, name);
        if (j.contains("window")) {
            const auto& wj = j.at("window");
            const std::string ww = name + ", window";
            detail::expect_keys(wj, ww, {"left", "right"});
            OracleWindow w;
            w.left = static_cast<std::int64_t>(detail::get_count(wj, ww, "left"));
            w.right = static_cast<std::int64_t>(detail::get_count(wj, ww, "right"));
            if (w.left < 1 || w.right < 1)
                detail::config_fail(ww, "window sides must be at least 1");
            rc.window = w;
        }
    } else {
        if (j.contains("window"))
            detail::config_fail(name, "oracle windows need a concrete \"environment\"");
        const auto& fj = j.at("family");
        const std::string fw = name + ", family";
        detail::expect_keys(fj, fw, {"kappa", "prefix_cookies", "lateral"});
        DriftFamily fam;
        fam.lattice = rc.lattice;
        fam.kappa = detail::get_number(fj, fw, "kappa");
        fam.prefix_cookies = detail::get_count(fj, fw, "prefix_cookies");
        if (fj.contains("lateral")) fam.lateral = detail::get_number(fj, fw, "lateral");
        if (rc.lattice.dim() != 1 && !rc.lattice.is_strip())
            detail::config_fail(fw, "drift families are defined on Z and strips only");
        rc.family = fam;
    }

    if (j.contains("classify")) {
        const auto& cj = j.at("classify");
        const std::string cw = name + ", classify";
        detail::expect_keys(cj, cw,
                            {"theta_t", "theta_r", "theta_osc", "osc_level", "escape_level"});
        auto& p = rc.classify_params;
        if (cj.contains("theta_t")) p.theta_t = detail::get_number(cj, cw, "theta_t");
        if (cj.contains("theta_r")) p.theta_r = detail::get_number(cj, cw, "theta_r");
        if (cj.contains("theta_osc")) p.theta_osc = detail::get_number(cj, cw, "theta_osc");
        if (cj.contains("osc_level")) p.osc_level = detail::get_number(cj, cw, "osc_level");
        if (cj.contains("escape_level"))
            p.escape_level = detail::get_number(cj, cw, "escape_level");
    }
    if (j.contains("escape")) {
        const auto& ej = j.at("escape");
        const std::string ew = name + ", escape";
        detail::expect_keys(ej, ew, {"escape_level", "allow_infinite_delta"});
        if (ej.contains("escape_level"))
            rc.escape_params.escape_level = detail::get_number(ej, ew, "escape_level");
        if (ej.contains("allow_infinite_delta")) {
            if (!ej.at("allow_infinite_delta").is_boolean())
                detail::config_fail(ew, "\"allow_infinite_delta\" must be a boolean");
            rc.escape_params.allow_infinite_delta = ej.at("allow_infinite_delta").get<bool>();
        }
    }
    if (j.contains("horizon")) rc.horizon = detail::get_count(j, name, "horizon");
    if (j.contains("replicas")) rc.replicas = detail::get_count(j, name, "replicas");
    if (rc.horizon == 0) detail::config_fail(name, "\"horizon\" must be positive");
    if (rc.replicas == 0) detail::config_fail(name, "\"replicas\" must be positive");
    rc.classify_params.horizon = rc.horizon;
    rc.classify_params.replicas = rc.replicas;
    rc.escape_params.horizon = rc.horizon;

    // nlohmann objects iterate in key order, so dump() is canonical: the
    // digest ignores input formatting but pins every value
    rc.digest = detail::hex64(detail::fnv1a64(j.dump()));
    return rc;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

// canonical serialized form; parse(serialize(parse(x))) == parse(x)
inline nlohmann::json config_json(const RunConfig& rc) {
    nlohmann::json j;
    if (rc.lattice.is_strip())
        j["lattice"] = {{"kind", "strip"}, {"L", rc.lattice.L}};
    else
        j["lattice"] = {{"kind", "zd"}, {"d", rc.lattice.d}};
    j["direction"] = {{"components", rc.dir.l}};
    if (rc.environment) {
        nlohmann::json env;
        env["kappa"] = rc.environment->kappa;
        env["support"] = nlohmann::json::array();
        for (const auto& se : rc.environment->support) {
            nlohmann::json entry;
            entry["probability"] = se.probability;
            entry["prefix"] = nlohmann::json::array();
            for (const auto& c : se.stack.prefix) entry["prefix"].push_back(detail::cookie_json(c));
            entry["tail"] = detail::cookie_json(se.stack.tail);
            env["support"].push_back(std::move(entry));
        }
        j["environment"] = std::move(env);
    }
    if (rc.family) {
        j["family"] = {{"kappa", rc.family->kappa},
                       {"prefix_cookies", rc.family->prefix_cookies},
                       {"lateral", rc.family->lateral}};
    }
    if (rc.window) j["window"] = {{"left", rc.window->left}, {"right", rc.window->right}};
    j["horizon"] = rc.horizon;
    j["replicas"] = rc.replicas;
    const auto& p = rc.classify_params;
    j["classify"] = {{"theta_t", p.theta_t},
                     {"theta_r", p.theta_r},
                     {"theta_osc", p.theta_osc},
                     {"osc_level", p.osc_level},
                     {"escape_level", p.escape_level}};
    j["escape"] = {{"escape_level", rc.escape_params.escape_level},
                   {"allow_infinite_delta", rc.escape_params.allow_infinite_delta}};
    return j;
}

// the sampled environment for a config, or the family instantiated at t
inline SampledEnvironment config_environment(const RunConfig& rc, std::uint64_t seed) {
    if (rc.environment) return make_environment(rc.environment, rc.lattice, rc.dir, seed);
    throw ConfigError(rc.name + ": this subcommand needs a concrete \"environment\"");
}

} // namespace erw
