#pragma once

#include "ruelle/aniso.hpp"
#include "ruelle/bounds.hpp"
#include "ruelle/collocation.hpp"
#include "ruelle/config.hpp"
#include "ruelle/determinant.hpp"

#include <cstdio>
#include <iostream>

namespace ruelle {

namespace fs = std::filesystem;

enum ExitCode : int { kExitPass = 0, kExitCheckFailed = 2, kExitConfigError = 3, kExitNumericalFailure = 4 };

// Exit code for an exception escaping a command; other errors map to 1.
inline std::pair<int, const char*> classify_failure(const std::exception& e) {
    if (dynamic_cast<const CheckFailed*>(&e)) return {kExitCheckFailed, "CheckFailed"};
    if (dynamic_cast<const ConfigError*>(&e)) return {kExitConfigError, "ConfigError"};
    if (dynamic_cast<const NumericalFailure*>(&e)) return {kExitNumericalFailure, "NumericalFailure"};
    return {1, "Error"};
}

inline std::string failure_line(const char* kind, int code, const std::string& msg) {
    return Json{{"error", kind}, {"exit_code", code}, {"message", msg}}.dump();
}

struct CommandResult {
    int exit_code = kExitPass;
    std::string failure;  // machine-readable reason when exit_code != 0
    Json report;          // the main report, as written
    std::vector<std::string> files;
};

// Progress messages go to a stream unless quiet; nothing timing-dependent is
// written to report files.
class Log {
public:
    explicit Log(bool quiet = false, std::ostream* os = &std::cerr) : quiet_(quiet), os_(os) {}
    void operator()(const std::string& msg) const {
        if (!quiet_ && os_) *os_ << "[ruelle_lab] " << msg << '\n';
    }

private:
    bool quiet_;
    std::ostream* os_;
};

// ---------------------------------------------------------------------------
// Writers. Every file carries "config_hash=... seed=..." in its first line
// (CSV and plot data) or in the "_header" key (JSON, which sorts first).

inline std::string header_text(const RunConfig& c) { return "config_hash=" + config_hash(c) + " seed=" + std::to_string(c.seed); }

inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline Json num(double v) { return detail::number_or_inf(v); }
inline Json cjson(cplx z) { return Json::array({num(z.real()), num(z.imag())}); }

inline void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + file.string());
    out << text;
}

class CsvWriter {
public:
    CsvWriter(const RunConfig& c, std::vector<std::string> columns) : ncol_(columns.size()) {
        text_ = "# " + header_text(c) + "\n";
        add(columns);
    }
    void row(const std::vector<std::string>& cells) {
        require(cells.size() == ncol_, "csv row has the wrong number of cells");
        add(cells);
    }
    const std::string& text() const { return text_; }

private:
    void add(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) text_ += (i ? "," : "") + cells[i];
        text_ += "\n";
    }
    std::size_t ncol_;
    std::string text_;
};

inline Json finish_report(const RunConfig& c, Json j) {
    j["_header"] = header_text(c);
    j["config"] = to_json(c);
    j["warnings"] = c.warnings;
    return j;
}

inline void write_json(const fs::path& file, const Json& j) { write_text(file, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// resonances: orbits -> traces -> determinant -> collocation -> match

inline CommandResult cmd_resonances(RunConfig cfg, const fs::path& out, const Log& log = Log(true)) {
    validate(cfg);
    for (const auto& w : cfg.warnings) log("warning: " + w);
    const MapSystem sys = make_torus_system(cfg);
    fs::create_directories(out);
    CommandResult res;

    log("periodic orbits and traces up to m = " + std::to_string(cfg.N_det));
    OrbitProvider orbits(sys);
    const TraceSeries ts = trace_series(orbits, cfg.N_det);
    CsvWriter traces(cfg, {"m", "trace", "points", "method"});
    for (int m = 1; m <= cfg.N_det; ++m) {
        const auto& pts = orbits.points(m);
        traces.row({std::to_string(m), fmt(ts[m]), std::to_string(pts.size()), to_string(pts.method)});
    }
    write_text(out / "traces.csv", traces.text());

    DeterminantPoly dp = det_coeffs_from_traces(ts);
    std::vector<int> ms;
    for (int m = 1; m <= std::min(cfg.m_max, cfg.N_det); ++m) ms.push_back(m);
    const ValidityRadius vr = validity_radius(orbits, cfg.p, cfg.q, ms);
    dp.validity_radius = vr.radius;
    dp.zeros = det_zeros(dp, cfg.resonances.radius);
    Json zeros = Json::array();
    for (const auto& z : dp.zeros)
        zeros.push_back({{"z", cjson(z.z)},
                         {"multiplicity", z.multiplicity},
                         {"backward_error", num(z.backward_error)},
                         {"ill_conditioned", z.ill_conditioned},
                         {"near_boundary", z.near_boundary}});
    Json coeffs = Json::array();
    for (double c : dp.coeffs) coeffs.push_back(num(c));
    const Json det = finish_report(cfg, {{"map_id", sys.id},
                                         {"weight_id", sys.weight.id},
                                         {"N", cfg.N_det},
                                         {"coeffs", coeffs},
                                         {"validity_radius", num(dp.validity_radius)},
                                         {"coarse_radius", num(vr.coarse)},
                                         {"search_radius", num(cfg.resonances.radius)},
                                         {"zeros", zeros}});
    write_json(out / "determinant.json", det);

    const int n1 = cfg.n_freq, n2 = 2 * cfg.n_freq;
    log("collocation at N = " + std::to_string(n1) + " and " + std::to_string(n2));
    const TransferMatrix ta = build_transfer_matrix(sys, n1);
    const TransferMatrix tb = build_transfer_matrix(sys, n2);
    const auto ea = eigen_resonances(ta, cfg.resonances.eigen_floor);
    const auto eb = eigen_resonances(tb, cfg.resonances.eigen_floor);
    const auto stable = stability_filter(ea, eb, cfg.resonances.stability_tol);

    std::vector<DeterminantZero> good;
    for (const auto& z : dp.zeros)
        if (std::abs(z.z) <= cfg.resonances.radius && z.backward_error <= cfg.resonances.backward_tol) good.push_back(z);
    const MatchReport mr = match_resonances_to_zeros(stable, good, cfg.resonances.radius, cfg.resonances.match_tol);

    Json pairs = Json::array();
    for (const auto& p : mr.pairs)
        pairs.push_back({{"zero", cjson(p.zero)},
                         {"inverse", cjson(p.inverse)},
                         {"eigenvalue", cjson(p.eigenvalue)},
                         {"gap", num(p.gap)},
                         {"zero_multiplicity", p.zero_multiplicity},
                         {"eigen_multiplicity", p.eigen_multiplicity}});
    Json uz = Json::array(), ue = Json::array(), st = Json::array();
    for (cplx z : mr.unmatched_zeros) uz.push_back(cjson(z));
    for (cplx e : mr.unmatched_eigenvalues) ue.push_back(cjson(e));
    for (const auto& r : stable) st.push_back({{"mu", cjson(r.mu)}, {"residual", num(r.residual)}});
    const bool pass = mr.bijective();
    res.report = finish_report(
        cfg, {{"radius", num(mr.radius)},
              {"tol", num(mr.tol)},
              {"pairs", pairs},
              {"unmatched_zeros", uz},
              {"unmatched_eigenvalues", ue},
              {"bijective", mr.bijective()},
              {"multiplicities_agree", mr.multiplicities_agree},
              {"pass", pass},
              {"collocation",
               {{"N", {n1, n2}},
                {"dim", {ta.dim(), tb.dim()}},
                {"aliasing_risk", {ta.aliasing_risk, tb.aliasing_risk}},
                {"max_column_grid", {ta.max_column_grid, tb.max_column_grid}},
                {"eigenvalues_found", {ea.size(), eb.size()}},
                {"eigen_floor", num(cfg.resonances.eigen_floor)},
                {"stable", st}}}});
    write_json(out / "match.json", res.report);
    res.files = {"traces.csv", "determinant.json", "match.json"};
    if (!pass) {
        res.exit_code = kExitCheckFailed;
        res.failure = "unmatched: " + std::to_string(mr.unmatched_zeros.size()) + " zeros, " +
                      std::to_string(mr.unmatched_eigenvalues.size()) + " eigenvalues";
    }
    log(pass ? "match: bijective" : "match: " + res.failure);
    return res;
}

// ---------------------------------------------------------------------------
// bounds: all routes to the growth rate plus the two checks

inline CommandResult cmd_bounds(RunConfig cfg, const fs::path& out, const Log& log = Log(true)) {
    validate(cfg);
    for (const auto& w : cfg.warnings) log("warning: " + w);
    const MapSystem sys = make_torus_system(cfg);
    fs::create_directories(out);
    CommandResult res;

    BoundsConfig bc;
    bc.p = cfg.p;
    bc.q = cfg.q;
    bc.t_grid = cfg.bounds.t_grid;
    bc.m_orbit_max = cfg.m_max;
    bc.m_cover_max = std::min(cfg.bounds.cover_max, cfg.m_max);
    bc.n_samples = cfg.mc_samples;
    bc.tol_cross = cfg.bounds.tol_cross;
    bc.seed = cfg.seed;
    log("bound routes up to m = " + std::to_string(cfg.m_max));
    OrbitProvider orbits(sys);
    BoundReport rep = compute_bound_report(orbits, bc);

    if (cfg.bounds.negative_control) {
        // Inflate the rho route by 25%; the cross-check must reject it.
        Extrapolation bad = rep.rho_fit;
        bad.estimate *= 1.25;
        try {
            rep.kitaev = kitaev_crosscheck(bad, rep.q_var, bc.tol_cross);
            rep.kitaev_pass = true;
            rep.kitaev_message.clear();
        } catch (const CrossCheckFailed& e) {
            rep.kitaev_pass = false;
            rep.kitaev_message = std::string("negative control: ") + e.what();
            rep.kitaev.rho_estimate = bad.estimate;
            rep.kitaev.log_gap = std::abs(std::log(bad.estimate) - std::log(rep.q_var.estimate));
            rep.kitaev.pass = false;
        }
    }

    std::vector<std::string> cols{"m", "rho", "rho_std_error"};
    for (double t : bc.t_grid) cols.push_back("R_t" + fmt(t));
    cols.insert(cols.end(), {"q_star_greedy", "rho_star", "pressure_log_sum"});
    CsvWriter csv(cfg, cols);
    Json rows = Json::array();
    for (const auto& r : rep.rows) {
        std::vector<std::string> cells{std::to_string(r.m), fmt(r.rho.value), fmt(r.rho.std_error)};
        Json R = Json::array();
        for (double v : r.R) {
            cells.push_back(fmt(v));
            R.push_back(num(v));
        }
        const double qs = r.q_star ? r.q_star->greedy : std::numeric_limits<double>::quiet_NaN();
        const double rs = r.rho_star ? *r.rho_star : std::numeric_limits<double>::quiet_NaN();
        cells.insert(cells.end(), {fmt(qs), fmt(rs), fmt(r.pressure)});
        csv.row(cells);
        Json row{{"m", r.m}, {"rho", num(r.rho.value)}, {"rho_std_error", num(r.rho.std_error)}, {"R", R},
                 {"pressure_log_sum", num(r.pressure)}};
        if (r.q_star) row["q_star_greedy"] = num(r.q_star->greedy);
        if (r.rho_star) row["rho_star"] = num(*r.rho_star);
        rows.push_back(row);
    }
    write_text(out / "bounds.csv", csv.text());

    auto fit = [](const Extrapolation& e) {
        return Json{{"estimate", num(e.estimate)}, {"slope", num(e.slope)}, {"residual", num(e.residual)}, {"poor_fit", e.poor_fit}};
    };
    Json appb = Json::array();
    for (const auto& r : rep.inequality.rows)
        appb.push_back({{"m", r.m}, {"rho", num(r.rho.value)}, {"rho_std_error", num(r.rho.std_error)}, {"min_R", num(r.min_R)}, {"ok", r.ok}});
    Json tg = Json::array(), rfit = Json::array();
    for (double t : bc.t_grid) tg.push_back(num(t));
    for (double v : rep.R_fit) rfit.push_back(num(v));
    const bool pass = rep.kitaev_pass && rep.inequality.pass;
    Json j{{"map_id", rep.map_id},
           {"weight_id", rep.weight_id},
           {"p", num(cfg.p)},
           {"q", num(cfg.q)},
           {"t_grid", tg},
           {"rows", rows},
           {"rho_fit", fit(rep.rho_fit)},
           {"q_variational", {{"estimate", num(rep.q_var.estimate)}, {"floor_level", rep.q_var.floor_level}, {"fit", fit(rep.q_var.fit)}}},
           {"R_fit", rfit},
           {"kitaev",
            {{"rho_estimate", num(rep.kitaev.rho_estimate)},
             {"q_estimate", num(rep.kitaev.q_estimate)},
             {"log_gap", num(rep.kitaev.log_gap)},
             {"tol", num(rep.kitaev.tol)},
             {"pass", rep.kitaev_pass},
             {"message", rep.kitaev_message}}},
           {"inequality", {{"rows", appb}, {"pass", rep.inequality.pass}}},
           {"validity_radius", {{"radius", num(rep.radius.radius)}, {"coarse", num(rep.radius.coarse)}}},
           {"negative_control", cfg.bounds.negative_control},
           {"pass", pass}};
    if (rep.q_star_fit) j["q_star_fit"] = fit(*rep.q_star_fit);
    if (rep.rho_star_fit) j["rho_star_fit"] = fit(*rep.rho_star_fit);
    res.report = finish_report(cfg, j);
    write_json(out / "bounds.json", res.report);
    res.files = {"bounds.csv", "bounds.json"};
    if (!pass) {
        res.exit_code = kExitCheckFailed;
        res.failure = !rep.kitaev_pass ? "kitaev: " + rep.kitaev_message : "inequality inequality violated";
    }
    log(pass ? "bounds: checks pass" : "bounds: " + res.failure);
    return res;
}

// ---------------------------------------------------------------------------
// aniso: partition, Young, triangularity, flat traces, kneading

// Random Gaussian mixtures inside the inner half of the box.
inline GridFunction random_mixture(const LabGrid& g, Rng& rng, int terms, double spread) {
    std::uniform_real_distribution<double> pos(-0.6, 0.6), width(0.08, 0.35), amp(-1, 1);
    GridFunction f(g);
    for (int t = 0; t < terms; ++t) {
        const Vec2 c(spread * pos(rng), spread * pos(rng));
        const double wx = width(rng), wy = width(rng);
        const cplx a(amp(rng), amp(rng));
        f = f + GridFunction::sample(g, [&](const Vec2& x) {
                const Vec2 d = x - c;
                return a * std::exp(-d[0] * d[0] / (2 * wx * wx) - d[1] * d[1] / (2 * wy * wy));
            });
    }
    return f;
}

// Smallest even grid whose top frequency reaches 2^(n_max+1) on the box B.
inline int min_lab_grid(int n_max, double B = 4.0) {
    return 2 * static_cast<int>(std::ceil(std::ldexp(2.0, n_max) * B / kPi));
}

inline CommandResult cmd_aniso(RunConfig cfg, const fs::path& out, const Log& log = Log(true)) {
    validate(cfg);
    for (const auto& w : cfg.warnings) log("warning: " + w);
    const ChartModel model = make_chart_model(cfg);
    const auto& A = cfg.aniso;
    fs::create_directories(out);
    CommandResult res;
    Json j;

    log("partition of unity at n_max = " + std::to_string(cfg.n_max_aniso));
    const double defect = partition_defect(model.theta, cfg.n_max_aniso, 512);
    const bool part_ok = defect <= 1e-12;
    j["partition"] = {{"n_max", cfg.n_max_aniso}, {"grid", 512}, {"defect", num(defect)}, {"pass", part_ok}};

    log("Young inequality, " + std::to_string(A.young_trials) + " draws");
    const LabGrid yg{4.0, A.young_grid};
    Rng rng(cfg.seed);
    int young_pass = 0;
    double worst_ratio = 0;
    for (int t = 0; t < A.young_trials; ++t) {
        const GridFunction kernel = random_mixture(yg, rng, 2, 0.5);
        const GridFunction u = random_mixture(yg, rng, 3, 1.5);
        const YoungReport r = young_check(kernel, u, model.theta);
        young_pass += r.pass;
        if (r.rhs > 0) worst_ratio = std::max(worst_ratio, r.lhs / r.rhs);
    }
    const bool young_ok = young_pass == A.young_trials;
    j["young"] = {{"trials", A.young_trials}, {"passed", young_pass}, {"worst_ratio", num(worst_ratio)}, {"pass", young_ok}};

    const bool vanishes = !weight_support_box(model.sys).has_value();
    log("triangularity of linked masks over iterates");
    bool tri_ok = true;
    {
        Json tri{{"iterates", A.iterates}, {"vacuous", vanishes}};
        if (!vanishes) {
            std::vector<std::unique_ptr<BlockOperator>> ops;
            std::vector<const BlockOperator*> ptrs;
            Json hs = Json::array();
            for (int m : A.iterates) {
                ChartModel it{iterate_system(model.sys, m), model.theta, model.theta_prime};
                ops.push_back(std::make_unique<BlockOperator>(it, cfg.n_max_aniso, LabGrid{4.0, min_lab_grid(cfg.n_max_aniso)}));
                ptrs.push_back(ops.back().get());
                hs.push_back({{"m", m}, {"h_plus", ops.back()->h().h_plus}, {"h_minus", ops.back()->h().h_minus}});
            }
            const auto tr = triangularity_product_check(ptrs);
            tri_ok = tr.diagonal_empty;
            tri["h"] = hs;
            tri["diagonal_hits"] = tr.diagonal_hits;
        }
        tri["pass"] = tri_ok;
        j["triangularity"] = tri;
    }

    log("flat traces up to n0 = " + std::to_string(cfg.n_max_aniso));
    const FlatTraceTable ft(model.sys, model.theta, cfg.n_max_aniso);
    const auto fps = chart_fixed_points(model.sys);
    const double target = fixed_point_trace(fps);
    CsvWriter fcsv(cfg, {"n0", "partial_sum", "chi_integral"});
    Json partial = Json::array(), chi = Json::array(), fpj = Json::array();
    double tele = 0;
    for (int n0 = 0; n0 <= cfg.n_max_aniso; ++n0) {
        const double ps = ft.partial_sum(n0), ci = ft.chi_integral(n0);
        tele = std::max(tele, std::abs(ps - ci));
        partial.push_back(num(ps));
        chi.push_back(num(ci));
        fcsv.row({std::to_string(n0), fmt(ps), fmt(ci)});
    }
    for (const auto& f : fps) fpj.push_back({{"x", {num(f.x[0]), num(f.x[1])}}, {"weight", num(f.weight)}, {"det", num(f.det)}});
    const double gap = std::abs(ft.partial_sum(cfg.n_max_aniso) - target);
    const bool trace_ok = tele <= 1e-8 && gap <= 1e-3;
    write_text(out / "flat_traces.csv", fcsv.text());
    j["flat_trace"] = {{"n0", cfg.n_max_aniso}, {"modes", ft.modes()},    {"partial_sums", partial}, {"chi_integrals", chi},
                       {"telescoping_gap", num(tele)}, {"fixed_points", fpj}, {"target", num(target)},
                       {"gap", num(gap)}, {"pass", trace_ok}};

    log("block matrices at n_max = " + std::to_string(A.matrix_n_max) + ", grid " + std::to_string(A.grid));
    BlockOperator op(model, A.matrix_n_max, LabGrid{4.0, A.grid});
    const CompressedOperator co = op.compress(A.packets);
    const KneadingReport kr = kneading_check(co.Mb, co.Mc, circle_samples(A.z_samples, A.z_radius));
    Json kz = Json::array();
    for (const auto& r : kr.rows)
        kz.push_back({{"z", cjson(r.z)}, {"lhs", cjson(r.lhs)}, {"rhs", cjson(r.rhs)}, {"rel_err", num(r.rel_err)}, {"condition", num(r.condition)}});
    j["kneading"] = {{"dim", co.M.rows()}, {"packets", A.packets}, {"aliasing_risk", op.aliasing_risk()},
                     {"samples", kz}, {"max_rel_err", num(kr.max_rel_err)}, {"tol", num(kr.tol)}, {"pass", kr.pass}};

    const ApproxProxyReport ap = approx_number_proxy(pq_weighted(co.Mc, co.bands, cfg.p, cfg.q));
    Json sv = Json::array();
    for (double s : ap.singular_values) sv.push_back(num(s));
    j["approx_proxy"] = {{"singular_values", sv}, {"monotone", ap.monotone}, {"power_exponent", num(ap.power_exponent)},
                         {"geometric_rate", num(ap.geometric_rate)}};

    if (!vanishes) {
        const HExponents& h = op.h();
        j["h_exponents"] = {{"h_plus", h.h_plus}, {"h_minus", h.h_minus}, {"sup_norm", num(h.sup_norm)}, {"inf_norm", num(h.inf_norm)}};
    }
    if (A.kernel_decay && !vanishes) {
        log("kernel decay of unlinked blocks");
        const KernelDecayReport kd = kernel_decay_fit(op, unlinked_pairs(op), {Vec2::Zero()});
        Json lv = Json::array(), lm = Json::array(), lp = Json::array();
        for (std::size_t i = 0; i < kd.levels.size(); ++i) {
            lv.push_back(num(kd.levels[i]));
            lm.push_back(num(kd.log2_max[i]));
            lp.push_back(num(kd.log2_profile[i]));
        }
        j["kernel_decay"] = {{"levels", lv}, {"log2_max", lm}, {"log2_profile", lp}, {"slope", num(kd.slope)},
                             {"profile_slope", num(kd.profile_slope)}, {"aliasing_risk", kd.aliasing_risk}};
    }

    const bool pass = part_ok && young_ok && tri_ok && trace_ok && kr.pass;
    j["pass"] = pass;
    res.report = finish_report(cfg, j);
    write_json(out / "aniso.json", res.report);
    res.files = {"aniso.json", "flat_traces.csv"};
    if (!pass) {
        res.exit_code = kExitCheckFailed;
        std::string f;
        for (const auto& [name, ok] : {std::pair<const char*, bool>{"partition", part_ok}, {"young", young_ok},
                                       {"triangularity", tri_ok}, {"flat_trace", trace_ok}, {"kneading", kr.pass}})
            if (!ok) f += (f.empty() ? "" : ",") + std::string(name);
        res.failure = "failed checks: " + f;
    }
    log(pass ? "aniso: checks pass" : "aniso: " + res.failure);
    return res;
}

// ---------------------------------------------------------------------------
// report: merge JSON reports and emit plot data

inline CommandResult cmd_report(RunConfig cfg, const fs::path& dir, const Log& log = Log(true)) {
    validate(cfg);
    static const char* kSources[] = {"determinant.json", "match.json", "bounds.json", "aniso.json"};
    std::map<std::string, Json> src;
    Json present = Json::object(), gaps = Json::array();
    for (const char* name : kSources) {
        const fs::path f = dir / name;
        if (!fs::exists(f)) {
            gaps.push_back(name);
            present[name] = nullptr;
            continue;
        }
        std::ifstream in(f);
        try {
            src[name] = Json::parse(in);
        } catch (const Json::parse_error& e) {
            throw MissingArtifacts("unreadable report " + f.string() + ": " + e.what());
        }
        present[name] = src[name].value("_header", "");
    }
    if (src.empty()) throw MissingArtifacts("no reports found in " + dir.string());

    Json s{{"sources", present}, {"gaps", gaps}};
    std::vector<std::string> files{"summary.json"};
    auto plot = [&](const std::string& name, const std::string& columns, const std::vector<std::string>& lines) {
        std::string text = "# " + header_text(cfg) + "\n# " + columns + "\n";
        for (const auto& l : lines) text += l + "\n";
        write_text(dir / name, text);
        files.push_back(name);
    };
    auto logv = [](const Json& v) { return v.is_number() && v.get<double>() > 0 ? fmt(std::log(v.get<double>())) : std::string("nan"); };

    bool all_pass = true;
    if (src.count("bounds.json")) {
        const Json& b = src["bounds.json"];
        s["bounds"] = {{"kitaev", b["kitaev"]}, {"inequality_pass", b["inequality"]["pass"]}, {"pass", b["pass"]}};
        all_pass = all_pass && b["pass"].get<bool>();
        std::vector<std::string> lines;
        std::string cols = "m log_rho";
        for (std::size_t i = 0; i < b["t_grid"].size(); ++i) cols += " log_R_t" + (b["t_grid"][i].is_string() ? b["t_grid"][i].get<std::string>() : fmt(b["t_grid"][i].get<double>()));
        cols += " log_q_star log_rho_star pressure_log_sum";
        for (const auto& r : b["rows"]) {
            std::string l = std::to_string(r["m"].get<int>()) + " " + logv(r["rho"]);
            for (const auto& v : r["R"]) l += " " + logv(v);
            l += " " + (r.contains("q_star_greedy") ? logv(r["q_star_greedy"]) : std::string("nan"));
            l += " " + (r.contains("rho_star") ? logv(r["rho_star"]) : std::string("nan"));
            l += " " + fmt(r["pressure_log_sum"].get<double>());
            lines.push_back(l);
        }
        plot("plot_log_bounds.dat", cols, lines);
    }
    if (src.count("determinant.json") || src.count("match.json")) {
        std::vector<std::string> lines;
        if (src.count("determinant.json")) {
            const Json& d = src["determinant.json"];
            s["determinant"] = {{"coeffs", d["coeffs"]}, {"zeros", d["zeros"]}, {"validity_radius", d["validity_radius"]}};
            for (const auto& z : d["zeros"]) {
                const cplx w(z["z"][0].get<double>(), z["z"][1].get<double>());
                const cplx inv = 1.0 / w;
                lines.push_back("zero_inverse " + fmt(inv.real()) + " " + fmt(inv.imag()));
            }
        }
        if (src.count("match.json")) {
            const Json& m = src["match.json"];
            s["match"] = {{"pairs", m["pairs"]}, {"bijective", m["bijective"]}, {"pass", m["pass"]}};
            all_pass = all_pass && m["pass"].get<bool>();
            for (const auto& e : m["collocation"]["stable"])
                lines.push_back("eigenvalue " + fmt(e["mu"][0].get<double>()) + " " + fmt(e["mu"][1].get<double>()));
        }
        plot("plot_spectrum.dat", "kind re im", lines);
    }
    if (src.count("aniso.json")) {
        const Json& a = src["aniso.json"];
        Json checks = Json::object();
        for (const char* k : {"partition", "young", "triangularity", "flat_trace", "kneading"}) checks[k] = a[k]["pass"];
        s["aniso"] = {{"checks", checks}, {"flat_trace_gap", a["flat_trace"]["gap"]}, {"pass", a["pass"]}};
        all_pass = all_pass && a["pass"].get<bool>();
        std::vector<std::string> lines;
        const Json& ft = a["flat_trace"];
        for (std::size_t n = 0; n < ft["partial_sums"].size(); ++n)
            lines.push_back(std::to_string(n) + " " + fmt(ft["partial_sums"][n].get<double>()) + " " +
                            fmt(ft["chi_integrals"][n].get<double>()) + " " + fmt(ft["target"].get<double>()));
        plot("plot_flat_traces.dat", "n0 partial_sum chi_integral target", lines);
        lines.clear();
        const Json& sv = a["approx_proxy"]["singular_values"];
        for (std::size_t k = 0; k < sv.size(); ++k) lines.push_back(std::to_string(k + 1) + " " + fmt(sv[k].get<double>()));
        plot("plot_singular_values.dat", "k s_k", lines);
    }
    s["all_pass"] = all_pass;
    s["plots"] = Json(std::vector<std::string>(files.begin() + 1, files.end()));
    CommandResult res;
    res.report = finish_report(cfg, s);
    write_json(dir / "summary.json", res.report);
    res.files = files;
    log("summary with " + std::to_string(src.size()) + " sources, " + std::to_string(gaps.size()) + " gaps");
    return res;
}

}  // namespace ruelle
