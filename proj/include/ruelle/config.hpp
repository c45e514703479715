#pragma once

#include "ruelle/map_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>

namespace ruelle {

using Json = nlohmann::json;

struct MapConfig {
    std::string id = "cat";  // cat | perturbed_cat | chart
    double eps = 0;
    std::uint64_t seed = 0;  // perturbation phases; 0 is the canonical model
    double smoothness = std::numeric_limits<double>::infinity();  // r; builtins are C^infinity
};

struct WeightConfig {
    std::string id = "one";  // one | constant | bump | trig
    double c = 1;            // constant value, or c0 for trig
    Vec2 center = Vec2::Zero();
    double radius = 1;
    std::vector<TrigTerm> terms;
};

struct ResonanceOptions {
    double radius = 1.5;         // zeros with |z| <= radius
    double match_tol = 1e-4;
    double backward_tol = 1e-6;  // zeros above this backward error are set aside
    double eigen_floor = 6e-3;   // smallest |mu| asked of the eigen-solver
    double stability_tol = 1e-6;
};

struct BoundsOptions {
    std::vector<double> t_grid{1.0, 2.0, std::numeric_limits<double>::infinity()};
    int cover_max = 8;
    double tol_cross = 0.05;
    bool negative_control = false;  // inflate the rho route so the cross-check must fail
};

struct AnisoOptions {
    int matrix_n_max = 6;
    int grid = 1024;
    int packets = 2;
    int young_trials = 100;
    int young_grid = 256;
    int z_samples = 8;
    double z_radius = 0.5;
    std::vector<int> iterates{10, 12, 10};
    bool kernel_decay = true;
};

struct RunConfig {
    MapConfig map;
    WeightConfig weight;
    double p = 1;
    double q = -1;
    int N_det = 12;
    int m_max = 10;
    int mc_samples = 4000;
    int n_max_aniso = 8;
    int n_freq = 32;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    ResonanceOptions resonances;
    BoundsOptions bounds;
    AnisoOptions aniso;
    std::vector<std::string> warnings;  // filled by validation
};

// Defaults differ per command only in the map: aniso runs on the chart model.
inline RunConfig default_config(const std::string& command) {
    RunConfig c;
    if (command == "aniso") {
        c.map.id = "chart";
        c.weight.id = "bump";
    }
    return c;
}

namespace detail {

inline Json number_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? Json("inf") : Json("-inf");
    return Json(v);
}

inline double read_number(const Json& j, const std::string& key) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    if (!j.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    return j.get<double>();
}

inline int read_int(const Json& j, const std::string& key) {
    if (!j.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
    return j.get<int>();
}

inline std::uint64_t read_seed(const Json& j, const std::string& key) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
        throw ConfigError("config key '" + key + "' must be a nonnegative integer");
    return j.get<std::uint64_t>();
}

inline bool read_bool(const Json& j, const std::string& key) {
    if (!j.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
    return j.get<bool>();
}

inline std::string read_string(const Json& j, const std::string& key) {
    if (!j.is_string()) throw ConfigError("config key '" + key + "' must be a string");
    return j.get<std::string>();
}

inline Vec2 read_vec2(const Json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("config key '" + key + "' must be a 2-element array");
    return {read_number(j[0], key), read_number(j[1], key)};
}

inline void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
}

}  // namespace detail

// Overlays a parsed JSON document on `c`. Unknown keys are errors.
inline void apply_json(RunConfig& c, const Json& j) {
    using namespace detail;
    check_keys(j, "", {"map", "weight", "p", "q", "N_det", "m_max", "mc_samples", "n_max_aniso", "n_freq", "seed",
                       "output_dir", "resonances", "bounds", "aniso"});
    if (j.contains("map")) {
        const auto& m = j["map"];
        check_keys(m, "map", {"id", "eps", "seed", "smoothness"});
        if (m.contains("id")) c.map.id = read_string(m["id"], "map.id");
        if (m.contains("eps")) c.map.eps = read_number(m["eps"], "map.eps");
        if (m.contains("seed")) c.map.seed = read_seed(m["seed"], "map.seed");
        if (m.contains("smoothness")) c.map.smoothness = read_number(m["smoothness"], "map.smoothness");
    }
    if (j.contains("weight")) {
        const auto& w = j["weight"];
        check_keys(w, "weight", {"id", "c", "center", "radius", "terms"});
        if (w.contains("id")) c.weight.id = read_string(w["id"], "weight.id");
        if (w.contains("c")) c.weight.c = read_number(w["c"], "weight.c");
        if (w.contains("center")) c.weight.center = read_vec2(w["center"], "weight.center");
        if (w.contains("radius")) c.weight.radius = read_number(w["radius"], "weight.radius");
        if (w.contains("terms")) {
            c.weight.terms.clear();
            if (!w["terms"].is_array()) throw ConfigError("config key 'weight.terms' must be an array");
            for (const auto& t : w["terms"]) {
                check_keys(t, "weight.terms[]", {"name", "coeff"});
                c.weight.terms.push_back({read_string(t.at("name"), "weight.terms.name"),
                                          read_number(t.at("coeff"), "weight.terms.coeff")});
            }
        }
    }
    if (j.contains("p")) c.p = read_number(j["p"], "p");
    if (j.contains("q")) c.q = read_number(j["q"], "q");
    if (j.contains("N_det")) c.N_det = read_int(j["N_det"], "N_det");
    if (j.contains("m_max")) c.m_max = read_int(j["m_max"], "m_max");
    if (j.contains("mc_samples")) c.mc_samples = read_int(j["mc_samples"], "mc_samples");
    if (j.contains("n_max_aniso")) c.n_max_aniso = read_int(j["n_max_aniso"], "n_max_aniso");
    if (j.contains("n_freq")) c.n_freq = read_int(j["n_freq"], "n_freq");
    if (j.contains("seed")) c.seed = read_seed(j["seed"], "seed");
    if (j.contains("output_dir")) c.output_dir = read_string(j["output_dir"], "output_dir");
    if (j.contains("resonances")) {
        const auto& r = j["resonances"];
        check_keys(r, "resonances", {"radius", "match_tol", "backward_tol", "eigen_floor", "stability_tol"});
        auto& o = c.resonances;
        if (r.contains("radius")) o.radius = read_number(r["radius"], "resonances.radius");
        if (r.contains("match_tol")) o.match_tol = read_number(r["match_tol"], "resonances.match_tol");
        if (r.contains("backward_tol")) o.backward_tol = read_number(r["backward_tol"], "resonances.backward_tol");
        if (r.contains("eigen_floor")) o.eigen_floor = read_number(r["eigen_floor"], "resonances.eigen_floor");
        if (r.contains("stability_tol")) o.stability_tol = read_number(r["stability_tol"], "resonances.stability_tol");
    }
    if (j.contains("bounds")) {
        const auto& b = j["bounds"];
        check_keys(b, "bounds", {"t_grid", "cover_max", "tol_cross", "negative_control"});
        auto& o = c.bounds;
        if (b.contains("t_grid")) {
            if (!b["t_grid"].is_array()) throw ConfigError("config key 'bounds.t_grid' must be an array");
            o.t_grid.clear();
            for (const auto& t : b["t_grid"]) o.t_grid.push_back(read_number(t, "bounds.t_grid"));
        }
        if (b.contains("cover_max")) o.cover_max = read_int(b["cover_max"], "bounds.cover_max");
        if (b.contains("tol_cross")) o.tol_cross = read_number(b["tol_cross"], "bounds.tol_cross");
        if (b.contains("negative_control")) o.negative_control = read_bool(b["negative_control"], "bounds.negative_control");
    }
    if (j.contains("aniso")) {
        const auto& a = j["aniso"];
        check_keys(a, "aniso", {"matrix_n_max", "grid", "packets", "young_trials", "young_grid", "z_samples", "z_radius",
                                "iterates", "kernel_decay"});
        auto& o = c.aniso;
        if (a.contains("matrix_n_max")) o.matrix_n_max = read_int(a["matrix_n_max"], "aniso.matrix_n_max");
        if (a.contains("grid")) o.grid = read_int(a["grid"], "aniso.grid");
        if (a.contains("packets")) o.packets = read_int(a["packets"], "aniso.packets");
        if (a.contains("young_trials")) o.young_trials = read_int(a["young_trials"], "aniso.young_trials");
        if (a.contains("young_grid")) o.young_grid = read_int(a["young_grid"], "aniso.young_grid");
        if (a.contains("z_samples")) o.z_samples = read_int(a["z_samples"], "aniso.z_samples");
        if (a.contains("z_radius")) o.z_radius = read_number(a["z_radius"], "aniso.z_radius");
        if (a.contains("iterates")) {
            if (!a["iterates"].is_array()) throw ConfigError("config key 'aniso.iterates' must be an array");
            o.iterates.clear();
            for (const auto& m : a["iterates"]) o.iterates.push_back(read_int(m, "aniso.iterates"));
        }
        if (a.contains("kernel_decay")) o.kernel_decay = read_bool(a["kernel_decay"], "aniso.kernel_decay");
    }
}

// Effective configuration without output_dir and warnings, keys sorted.
inline Json to_json(const RunConfig& c) {
    using detail::number_or_inf;
    Json terms = Json::array();
    for (const auto& t : c.weight.terms) terms.push_back({{"name", t.name}, {"coeff", t.coeff}});
    Json tg = Json::array();
    for (double t : c.bounds.t_grid) tg.push_back(number_or_inf(t));
    return {
        {"map", {{"id", c.map.id}, {"eps", c.map.eps}, {"seed", c.map.seed}, {"smoothness", number_or_inf(c.map.smoothness)}}},
        {"weight",
         {{"id", c.weight.id}, {"c", c.weight.c}, {"center", {c.weight.center[0], c.weight.center[1]}},
          {"radius", c.weight.radius}, {"terms", terms}}},
        {"p", number_or_inf(c.p)},
        {"q", number_or_inf(c.q)},
        {"N_det", c.N_det},
        {"m_max", c.m_max},
        {"mc_samples", c.mc_samples},
        {"n_max_aniso", c.n_max_aniso},
        {"n_freq", c.n_freq},
        {"seed", c.seed},
        {"resonances",
         {{"radius", c.resonances.radius}, {"match_tol", c.resonances.match_tol},
          {"backward_tol", c.resonances.backward_tol}, {"eigen_floor", c.resonances.eigen_floor},
          {"stability_tol", c.resonances.stability_tol}}},
        {"bounds",
         {{"t_grid", tg}, {"cover_max", c.bounds.cover_max}, {"tol_cross", c.bounds.tol_cross},
          {"negative_control", c.bounds.negative_control}}},
        {"aniso",
         {{"matrix_n_max", c.aniso.matrix_n_max}, {"grid", c.aniso.grid}, {"packets", c.aniso.packets},
          {"young_trials", c.aniso.young_trials}, {"young_grid", c.aniso.young_grid},
          {"z_samples", c.aniso.z_samples}, {"z_radius", c.aniso.z_radius}, {"iterates", c.aniso.iterates},
          {"kernel_decay", c.aniso.kernel_decay}}},
    };
}

// FNV-1a 64 of the canonical JSON text.
inline std::string config_hash(const RunConfig& c) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Checks counts and the exponent pair; a p - q budget beyond the
// smoothness is a warning, not an error.
inline void validate(RunConfig& c) {
    c.warnings.clear();
    auto positive = [](int v, const char* key) {
        if (v <= 0) throw ConfigError(std::string("config key '") + key + "' must be positive");
    };
    positive(c.N_det, "N_det");
    positive(c.m_max, "m_max");
    positive(c.mc_samples, "mc_samples");
    positive(c.n_freq, "n_freq");
    positive(c.aniso.packets, "aniso.packets");
    positive(c.aniso.young_trials, "aniso.young_trials");
    positive(c.aniso.z_samples, "aniso.z_samples");
    positive(c.bounds.cover_max, "bounds.cover_max");
    if (c.n_max_aniso < 0) throw ConfigError("config key 'n_max_aniso' must be nonnegative");
    if (c.aniso.matrix_n_max < 0) throw ConfigError("config key 'aniso.matrix_n_max' must be nonnegative");
    if (c.aniso.grid < 8 || c.aniso.grid % 2 || c.aniso.young_grid < 8 || c.aniso.young_grid % 2)
        throw ConfigError("aniso grids must be even and at least 8");
    if (c.bounds.t_grid.empty()) throw ConfigError("bounds.t_grid must not be empty");
    for (double t : c.bounds.t_grid)
        if (!(t >= 1)) throw ConfigError("bounds.t_grid entries must be >= 1");
    if (!(c.q < 0 && 0 < c.p) && !(c.p == 0 && c.q == 0))
        throw ConfigError("exponents need q < 0 < p (or p = q = 0 for the coarse bound)");
    static const std::set<std::string> maps{"cat", "perturbed_cat", "chart"};
    if (!maps.count(c.map.id)) throw ConfigError("unknown map id '" + c.map.id + "'");
    static const std::set<std::string> weights{"one", "constant", "bump", "trig"};
    if (!weights.count(c.weight.id)) throw ConfigError("unknown weight id '" + c.weight.id + "'");
    if (c.map.id == "chart" && c.weight.id != "bump" && !(c.weight.id == "constant" && c.weight.c == 0))
        throw ConfigError("the chart model takes a bump weight (or constant 0)");
    if (!(c.map.smoothness > 1)) throw ConfigError("map.smoothness must exceed 1");
    const double r = c.map.smoothness;
    if (std::isfinite(r) && c.p - c.q >= r - 1) {
        std::ostringstream os;
        os << "p - q = " << c.p - c.q << " is not below r - 1 = " << r - 1 << " for the configured smoothness";
        c.warnings.push_back(os.str());
    }
}

inline RunConfig load_config(const std::string& command, const std::optional<std::filesystem::path>& path) {
    RunConfig c = default_config(command);
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("cannot read config file " + path->string());
        Json j;
        try {
            j = Json::parse(in, nullptr, true, /*ignore_comments=*/true);
        } catch (const Json::parse_error& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        apply_json(c, j);
    }
    return c;
}

inline Weight make_weight(const WeightConfig& w, bool torus) {
    if (w.id == "one") return weight_one();
    if (w.id == "constant") return weight_constant(w.c);
    if (w.id == "bump") return torus ? weight_torus_bump(w.center, w.radius) : weight_bump(w.center, w.radius);
    if (w.id == "trig") return weight_trig(w.c, w.terms);
    throw ConfigError("unknown weight id '" + w.id + "'");
}

inline MapSystem make_torus_system(const RunConfig& c) {
    MapSystem s;
    if (c.map.id == "cat") {
        if (c.map.eps != 0) throw ConfigError("map 'cat' takes eps = 0; use 'perturbed_cat'");
        s = builtin_cat_map();
    } else if (c.map.id == "perturbed_cat") {
        s = builtin_perturbed_cat(c.map.eps, c.map.seed);
    } else {
        throw ConfigError("this command needs a torus map (cat or perturbed_cat)");
    }
    return with_weight(s, make_weight(c.weight, true));
}

inline ChartModel make_chart_model(const RunConfig& c) {
    if (c.map.id != "chart") throw ConfigError("this command needs map id 'chart'");
    if (c.weight.id == "bump") return builtin_chart_model(c.map.eps, c.weight.radius, c.weight.center);
    ChartModel m = builtin_chart_model(c.map.eps);
    m.sys = with_weight(m.sys, weight_constant(0.0));
    return m;
}

}  // namespace ruelle
