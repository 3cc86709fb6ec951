#pragma once

#include "phom/bsde.hpp"
#include "phom/config.hpp"
#include "phom/ergodic_cell.hpp"
#include "phom/pde_oracle.hpp"
#include "phom/serialize.hpp"
#include "phom/stats.hpp"
#include "phom/torus_dynamics.hpp"
#include "phom/validation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace phom {

namespace fs = std::filesystem;

/// Values of one solver at the query points, plus an optional 1D profile.
struct SolutionRecord {
    std::string method;
    ValueEstimate value;
    std::vector<double> profile_x;
    std::vector<double> profile_u;
};

struct EpsSolutions {
    double eps = 0.0;
    std::vector<SolutionRecord> records;

    const SolutionRecord* find(std::string_view method) const {
        for (const auto& r : records)
            if (r.method == method) return &r;
        return nullptr;
    }
};

struct ConvergenceRow {
    double eps = 0.0;
    std::vector<double> u_eps, u_eps_se, abs_error, error_se;
    double max_error = 0.0;
    double max_error_se = 0.0;
    std::size_t argmax = 0;
};

struct ConvergenceReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string mode = "trend";
    std::string prelimit_source, limit_source;
    std::vector<Vec> points;
    std::vector<double> u, u_se;
    double u_sup = 0.0;
    /// Rows ordered by decreasing eps.
    std::vector<ConvergenceRow> rows;
    double spearman = 0.0;
    double initial_error = 0.0, final_error = 0.0, final_error_se = 0.0;
    double final_threshold = 0.0;
    std::map<std::string, bool> criteria;
    bool pass = false;
};

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
    bool cached = false;
};

struct PipelineOptions {
    /// Last stage to run (inclusive); the config's stage list still applies.
    std::optional<Stage> stop_after;
    bool use_cache = true;
};

struct PipelineResult {
    std::vector<Stage> ran;
    std::optional<ValidationReport> validation;
    std::optional<MeasureEstimate> measure;
    std::optional<CorrectorField> corrector;
    std::optional<EffectiveModel> effective;
    std::vector<EpsSolutions> prelimit;
    std::optional<EpsSolutions> limit;
    std::optional<ConvergenceReport> report;
    std::vector<StageTiming> timings;
    std::vector<std::string> notices;
    int exit_code = 0;

    const StageTiming* timing(std::string_view stage) const {
        for (const auto& t : timings)
            if (t.stage == stage) return &t;
        return nullptr;
    }
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitSolver = 3;
inline constexpr int kExitAcceptance = 4;

/// Input and assumption errors map to 2, numerical failures to 3.
inline int exit_code_for(ErrorCode c) {
    switch (c) {
        case ErrorCode::ConfigInvalid:
        case ErrorCode::ModelInvalid:
        case ErrorCode::DomainInvalid:
        case ErrorCode::CenteringViolated: return kExitValidation;
        default: return kExitSolver;
    }
}

// ---------------------------------------------------------------------------
// Serialization of pipeline records
// ---------------------------------------------------------------------------

inline Json to_json(const SolutionRecord& r) {
    Json j = to_json(r.value);
    j["method"] = r.method;
    if (!r.profile_x.empty()) j["profile"] = {{"x", r.profile_x}, {"u", r.profile_u}};
    return j;
}

inline SolutionRecord solution_from_json(const Json& j) {
    SolutionRecord r;
    r.method = j.at("method").get<std::string>();
    r.value = value_from_json(j);
    if (j.contains("profile")) {
        r.profile_x = j["profile"].at("x").get<std::vector<double>>();
        r.profile_u = j["profile"].at("u").get<std::vector<double>>();
    }
    return r;
}

inline Json to_json(const EpsSolutions& s) {
    Json recs = Json::array();
    for (const auto& r : s.records) recs.push_back(to_json(r));
    return Json{{"eps", s.eps}, {"records", recs}};
}

inline EpsSolutions eps_solutions_from_json(const Json& j) {
    EpsSolutions s;
    s.eps = j.at("eps").get<double>();
    for (const auto& r : j.at("records")) s.records.push_back(solution_from_json(r));
    return s;
}

inline Json to_json(const ConvergenceReport& r) {
    Json pts = Json::array();
    for (const auto& p : r.points) pts.push_back(detail::vec_json(p));
    Json rows = Json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"eps", row.eps},
                        {"u_eps", row.u_eps},
                        {"u_eps_se", row.u_eps_se},
                        {"abs_error", row.abs_error},
                        {"error_se", row.error_se},
                        {"max_error", row.max_error},
                        {"max_error_se", row.max_error_se},
                        {"argmax", row.argmax}});
    return Json{{"format_version", kFormatVersion},
                {"config_hash", r.config_hash},
                {"seed", r.seed},
                {"mode", r.mode},
                {"prelimit_source", r.prelimit_source},
                {"limit_source", r.limit_source},
                {"points", pts},
                {"u", r.u},
                {"u_se", r.u_se},
                {"u_sup", r.u_sup},
                {"rows", rows},
                {"spearman", r.spearman},
                {"initial_error", r.initial_error},
                {"final_error", r.final_error},
                {"final_error_se", r.final_error_se},
                {"final_threshold", r.final_threshold},
                {"criteria", r.criteria},
                {"pass", r.pass}};
}

/// Canonical bytes of a report: the determinism contract is stated on these.
inline std::string canonical_report(const ConvergenceReport& r) { return to_json(r).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Convergence assessment
// ---------------------------------------------------------------------------

/// Builds the error table. In "trend" mode the pass criteria are a positive
/// Spearman correlation of error with eps, final < final_ratio * initial and
/// final < max(se_multiplier SE, rel_tol |u|_inf). In "equality" mode every
/// row must satisfy the last bound.
inline ConvergenceReport assess_convergence(const std::vector<EpsSolutions>& prelimit, const EpsSolutions& limit,
                                            const ConvergeConfig& cc, const std::string& config_hash, std::uint64_t seed) {
    ConvergenceReport r;
    r.config_hash = config_hash;
    r.seed = seed;
    r.mode = cc.mode;
    r.prelimit_source = std::string(to_string(cc.prelimit));
    r.limit_source = std::string(to_string(cc.limit));
    const SolutionRecord* lim = limit.find(r.limit_source);
    if (!lim) throw Error(ErrorCode::ConfigInvalid, "limit solution from '" + r.limit_source + "' is missing");
    r.points = lim->value.points;
    r.u = lim->value.values;
    r.u_se = lim->value.se;
    for (double v : r.u) r.u_sup = std::max(r.u_sup, std::abs(v));

    std::vector<const EpsSolutions*> order;
    for (const auto& s : prelimit) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->eps > b->eps; });
    for (const auto* s : order) {
        const SolutionRecord* rec = s->find(r.prelimit_source);
        if (!rec) throw Error(ErrorCode::ConfigInvalid, "prelimit solution from '" + r.prelimit_source + "' is missing");
        ConvergenceRow row;
        row.eps = s->eps;
        row.u_eps = rec->value.values;
        row.u_eps_se = rec->value.se;
        for (std::size_t q = 0; q < r.u.size(); ++q) {
            const double e = std::abs(row.u_eps[q] - r.u[q]);
            const double se = std::hypot(row.u_eps_se[q], r.u_se[q]);
            row.abs_error.push_back(e);
            row.error_se.push_back(se);
            if (q == 0 || e > row.max_error) {
                row.max_error = e;
                row.max_error_se = se;
                row.argmax = q;
            }
        }
        r.rows.push_back(std::move(row));
    }

    auto bound = [&](const ConvergenceRow& row) {
        return std::max(cc.se_multiplier * row.max_error_se, cc.rel_tol * r.u_sup);
    };
    if (r.rows.empty()) {
        r.pass = false;
        r.criteria["nonempty_sweep"] = false;
        return r;
    }
    r.initial_error = r.rows.front().max_error;
    r.final_error = r.rows.back().max_error;
    r.final_error_se = r.rows.back().max_error_se;
    r.final_threshold = bound(r.rows.back());
    std::vector<double> eps, err;
    for (const auto& row : r.rows) {
        eps.push_back(row.eps);
        err.push_back(row.max_error);
    }
    r.spearman = spearman(err, eps);
    if (cc.mode == "equality") {
        bool all = true;
        for (const auto& row : r.rows) all = all && row.max_error <= bound(row);
        r.criteria["all_within_bound"] = all;
        r.pass = all;
    } else {
        r.criteria["spearman_positive"] = r.spearman > 0.0;
        r.criteria["final_below_ratio"] = r.final_error < cc.final_ratio * r.initial_error;
        r.criteria["final_within_bound"] = r.final_error < r.final_threshold;
        r.pass = r.criteria["spearman_positive"] && r.criteria["final_below_ratio"] && r.criteria["final_within_bound"];
    }
    return r;
}

inline std::string errors_csv(const ConvergenceReport& r) {
    std::ostringstream os;
    os << "eps,max_error,max_error_se,argmax";
    for (std::size_t q = 0; q < r.u.size(); ++q) os << ",abs_error_" << (q + 1);
    os << '\n';
    for (const auto& row : r.rows) {
        os << format_double(row.eps) << ',' << format_double(row.max_error) << ',' << format_double(row.max_error_se)
           << ',' << row.argmax;
        for (double e : row.abs_error) os << ',' << format_double(e);
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace detail {

inline Json section(const Json& doc, const char* key) { return doc.contains(key) ? doc.at(key) : Json(); }

inline std::uint64_t stage_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    return derive_seed(seed, fnv1a64(tag) ^ (index * 0x9E3779B97F4A7C15ULL));
}

inline SolutionRecord fd_record(const GridSolution& s, const std::vector<Vec>& points) {
    SolutionRecord r;
    r.method = "fd";
    r.value.points = points;
    for (const auto& x : points) {
        r.value.values.push_back(s(x));
        r.value.se.push_back(0.0);
    }
    r.value.iterations_used = s.newton_iters;
    if (s.dim == 1) {
        const std::size_t n = s.size();
        const std::size_t stride = std::max<std::size_t>(1, (n - 1) / 256);
        for (std::size_t p = 0; p < n; p += stride) {
            r.profile_x.push_back(s.node(p)[0]);
            r.profile_u.push_back(s.values[p]);
        }
        if ((n - 1) % stride != 0) {
            r.profile_x.push_back(s.node(n - 1)[0]);
            r.profile_u.push_back(s.values[n - 1]);
        }
    }
    return r;
}

/// Wraps the averaged driver as a (y, z)-independent source for Feynman-Kac.
inline Driver averaged_source(const AveragedDriver& fbar) {
    return Driver(
        [fbar](const Vec&, const Vec& x, double y, const Vec& z) { return fbar(x, y, z); }, fbar.mu(),
        fbar.driver().K(), true);
}

inline std::string value_csv(const ValueEstimate& v) {
    std::ostringstream os;
    write_value_csv(os, v);
    return os.str();
}

}  // namespace detail

class Pipeline {
public:
    Pipeline(const ExperimentConfig& cfg, PipelineOptions opt = {}) : cfg_(cfg), opt_(opt), out_(cfg.output_dir) {
        Json hashed = cfg_.canonical;
        hashed["seed"] = cfg_.seed;
        hashed["tool_version"] = kToolVersion;
        config_hash_ = content_hash(hashed);
    }

    const std::string& config_hash() const { return config_hash_; }

    PipelineResult run() {
        PipelineResult res;
        fs::create_directories(out_ / "cache");
        Json manifest{{"config_hash", config_hash_}, {"seed", cfg_.seed}, {"name", cfg_.name}};
        Json artifacts = Json::object();

        for (Stage s : cfg_.stages) {
            if (opt_.stop_after && static_cast<int>(s) > static_cast<int>(*opt_.stop_after)) break;
            const auto t0 = std::chrono::steady_clock::now();
            bool cached = false;
            std::string artifact;
            try {
                switch (s) {
                    case Stage::Validate: cached = run_validate(res, artifact); break;
                    case Stage::Measure: cached = run_measure(res, artifact); break;
                    case Stage::Cell: cached = run_cell(res, artifact); break;
                    case Stage::Effective: cached = run_effective(res, artifact); break;
                    case Stage::SolveEps: cached = run_solve_eps(res, artifact); break;
                    case Stage::SolveLimit: cached = run_solve_limit(res, artifact); break;
                    case Stage::Converge: cached = run_converge(res, artifact); break;
                }
            } catch (const Error& e) {
                throw Error(e.code(), "stage '" + std::string(to_string(s)) + "' (artifact " +
                                          (artifact.empty() ? (out_ / to_string(s)).string() : artifact) +
                                          "): " + e.message());
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            res.ran.push_back(s);
            res.timings.push_back({std::string(to_string(s)), secs, cached});
            artifacts[std::string(to_string(s))] = artifact;
            if (res.exit_code != kExitOk) break;
        }
        manifest["artifacts"] = artifacts;
        Json stages = Json::array();
        for (Stage s : res.ran) stages.push_back(std::string(to_string(s)));
        manifest["stages_run"] = stages;
        write_json(out_ / "manifest.json", manifest);

        Json timings = Json::array();
        for (const auto& t : res.timings) timings.push_back({{"stage", t.stage}, {"seconds", t.seconds}, {"cached", t.cached}});
        write_json(out_ / "timings.json", timings);
        return res;
    }

private:
    std::string key(std::string_view stage, const Json& payload) const {
        Json j = payload;
        j["stage"] = std::string(stage);
        j["seed"] = cfg_.seed;
        j["tool_version"] = kToolVersion;
        return content_hash(j);
    }

    fs::path cache_stem(std::string_view stage, const std::string& hash) const {
        return out_ / "cache" / (std::string(stage) + "-" + hash);
    }

    bool cache_hit(const fs::path& stem_json) const { return opt_.use_cache && fs::exists(stem_json); }

    Json model_section() const { return detail::section(cfg_.canonical, "model"); }
    Json problem_section() const { return detail::section(cfg_.canonical, "problem"); }

    std::string measure_key() const {
        return key("measure", {{"model", model_section()}, {"measure", detail::section(cfg_.canonical, "measure")}});
    }
    std::string cell_key() const {
        return key("cell", {{"measure", measure_key()}, {"cell", detail::section(cfg_.canonical, "cell")}});
    }

    // -- validate ---------------------------------------------------------
    bool run_validate(PipelineResult& res, std::string& artifact) {
        const std::string h = key("validate", {{"model", model_section()},
                                               {"problem", problem_section()},
                                               {"measure", detail::section(cfg_.canonical, "measure")},
                                               {"cell", detail::section(cfg_.canonical, "cell")},
                                               {"validate", detail::section(cfg_.canonical, "validate")}});
        const fs::path stem = cache_stem("validate", h);
        artifact = (out_ / "validation.json").string();
        bool cached = false;
        Json doc;
        if (cache_hit(stem.string() + ".json")) {
            doc = read_json(stem.string() + ".json");
            cached = true;
        } else {
            ValidationParams vp = cfg_.validation;
            vp.seed = detail::stage_seed(cfg_.seed, "validate");
            const ValidationReport rep = validate_assumptions(cfg_.model, cfg_.dirichlet(), vp);
            doc = to_json(rep);
            write_json(stem.string() + ".json", doc);
        }
        ValidationReport rep;
        for (const auto& c : doc.at("checks"))
            rep.checks.push_back({c.at("name").get<std::string>(), c.at("pass").get<bool>(), c.at("residual").get<double>(),
                                  c.at("tolerance").get<double>(), c.at("note").get<std::string>(),
                                  c.at("informational").get<bool>()});
        write_json(artifact, doc);
        if (!rep.overall()) {
            res.exit_code = kExitValidation;
            res.notices.push_back("validation failed; later stages were not run");
        }
        res.validation = std::move(rep);
        return cached;
    }

    // -- measure ----------------------------------------------------------
    bool run_measure(PipelineResult& res, std::string& artifact) {
        const fs::path stem = cache_stem("measure", measure_key());
        artifact = stem.string() + ".json";
        bool cached = false;
        if (cache_hit(artifact)) {
            res.measure = load_measure(stem);
            cached = true;
        } else {
            MeasureParams mp = cfg_.measure;
            mp.mc.seed = detail::stage_seed(cfg_.seed, "measure");
            res.measure = estimate_invariant_measure(cfg_.model, 0.0, cfg_.measure_backend, mp);
            save_measure(stem, *res.measure);
        }
        const auto& m = *res.measure;
        std::ostringstream os;
        for (int i = 0; i < m.grid.dim; ++i) os << "x_" << (i + 1) << ',';
        os << "weight,density,se\n";
        const double vol = std::pow(m.grid.spacing(), m.grid.dim);
        for (std::size_t c = 0; c < m.grid.size(); ++c) {
            const Vec x = m.grid.center(c);
            for (int i = 0; i < m.grid.dim; ++i) os << format_double(x[i]) << ',';
            os << format_double(m.weights[c]) << ',' << format_double(m.weights[c] / vol) << ','
               << format_double(m.se.empty() ? 0.0 : m.se[c]) << '\n';
        }
        write_csv_with_meta(out_ / "measure.csv", os.str(),
                            {{"config_hash", config_hash_}, {"seed", cfg_.seed}, {"stage", "measure"},
                             {"backend", std::string(to_string(m.backend))}, {"bundle", artifact}});
        return cached;
    }

    // -- cell -------------------------------------------------------------
    bool run_cell(PipelineResult& res, std::string& artifact) {
        const fs::path stem = cache_stem("cell", cell_key());
        artifact = stem.string() + ".json";
        bool cached = false;
        if (cache_hit(artifact)) {
            res.corrector = load_corrector(stem);
            cached = true;
        } else {
            CellParams cp = cfg_.cell;
            cp.seed = detail::stage_seed(cfg_.seed, "cell");
            cp.mixing_params.seed = detail::stage_seed(cfg_.seed, "mixing");
            res.corrector = solve_cell_problem(cfg_.model, *res.measure, cfg_.cell_backend, cp);
            save_corrector(stem, *res.corrector);
        }
        const auto& c = *res.corrector;
        const int d = c.dim;
        std::ostringstream os;
        for (int i = 0; i < d; ++i) os << "x_" << (i + 1) << ',';
        for (int i = 0; i < d; ++i) os << "bhat_" << (i + 1) << ',';
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) os << "dbhat_" << (i + 1) << (j + 1) << (i * d + j + 1 < d * d ? "," : "");
        os << '\n';
        for (std::size_t k = 0; k < c.grid.size(); ++k) {
            const Vec x = c.grid.center(k);
            for (int i = 0; i < d; ++i) os << format_double(x[i]) << ',';
            for (int i = 0; i < d; ++i) os << format_double(c.bhat(static_cast<Eigen::Index>(k), i)) << ',';
            for (int m = 0; m < d * d; ++m)
                os << format_double(c.dbhat(static_cast<Eigen::Index>(k), m)) << (m + 1 < d * d ? "," : "");
            os << '\n';
        }
        write_csv_with_meta(out_ / "corrector.csv", os.str(),
                            {{"config_hash", config_hash_}, {"seed", cfg_.seed}, {"stage", "cell"},
                             {"backend", std::string(to_string(c.backend))}, {"residual_norm", c.residual_norm},
                             {"bundle", artifact}});
        return cached;
    }

    // -- effective --------------------------------------------------------
    bool run_effective(PipelineResult& res, std::string& artifact) {
        // Assembly is a weighted sum over cached measure and corrector bundles.
        res.effective = effective_coefficients(cfg_.model, *res.measure, *res.corrector, cfg_.dirichlet().driver());
        artifact = (out_ / "effective.json").string();
        Json j = to_json(*res.effective);
        j["config_hash"] = config_hash_;
        j["seed"] = cfg_.seed;
        write_json(artifact, j);
        const bool cached = res.timing("measure") && res.timing("measure")->cached && res.timing("cell") &&
                            res.timing("cell")->cached;
        for (const auto& w : res.effective->warnings) res.notices.push_back(w);
        return cached;
    }

    // -- solve-eps --------------------------------------------------------
    bool run_solve_eps(PipelineResult& res, std::string& artifact) {
        const auto& sc = cfg_.solve_eps;
        const auto& prob = cfg_.dirichlet();
        bool all_cached = true;
        fs::remove_all(out_ / "solve-eps");
        fs::create_directories(out_ / "solve-eps");
        artifact = (out_ / "solve-eps").string();
        if (cfg_.epsilons.empty()) res.notices.push_back("empty eps list: solve-eps produced no solutions");
        for (std::size_t i = 0; i < cfg_.epsilons.size(); ++i) {
            const double eps = cfg_.epsilons[i];
            const std::string h = key("solve-eps", {{"model", model_section()},
                                                    {"problem", problem_section()},
                                                    {"solve", detail::section(cfg_.canonical, "solve_eps")},
                                                    {"points", detail::section(cfg_.canonical, "query_points")},
                                                    {"eps", eps}});
            const fs::path stem = cache_stem("solve-eps", h);
            EpsSolutions sol;
            if (cache_hit(stem.string() + ".json")) {
                sol = eps_solutions_from_json(read_json(stem.string() + ".json"));
            } else {
                all_cached = false;
                sol.eps = eps;
                if (sc.uses_fd())
                    sol.records.push_back(
                        detail::fd_record(solve_oscillating(cfg_.model, prob, eps, sc.fd_N, sc.newton), cfg_.query_points));
                if (sc.uses_bsde()) {
                    BsdeParams bp = sc.paths.bsde;
                    bp.scheme.h = slow_step(sc.paths.h0, eps, sc.paths.h_max);
                    bp.scheme.seed = detail::stage_seed(cfg_.seed, "solve-eps", i + 1);
                    const SlowDynamics dyn(cfg_.model, eps);
                    SolutionRecord r;
                    r.method = "bsde";
                    if (prob.driver().yz_independent())
                        r.value = solve_feynman_kac(dyn, prob.domain(), prob.g(), prob.driver(), cfg_.query_points, bp);
                    else
                        r.value = solve_bsde_picard(dyn, prob.domain(), prob.g(),
                                                    PrelimitDriver{&cfg_.model, &prob.driver()}, cfg_.query_points, bp);
                    sol.records.push_back(std::move(r));
                }
                write_json(stem.string() + ".json", to_json(sol));
            }
            const std::string base = "eps_" + std::to_string(i);
            write_json(out_ / "solve-eps" / (base + ".json"), to_json(sol));
            for (const auto& r : sol.records)
                write_csv_with_meta(out_ / "solve-eps" / (base + "_" + r.method + ".csv"), detail::value_csv(r.value),
                                    {{"config_hash", config_hash_}, {"seed", cfg_.seed}, {"stage", "solve-eps"},
                                     {"eps", eps}, {"method", r.method}});
            res.prelimit.push_back(std::move(sol));
        }
        return all_cached && !cfg_.epsilons.empty();
    }

    // -- solve-limit ------------------------------------------------------
    bool run_solve_limit(PipelineResult& res, std::string& artifact) {
        const auto& sc = cfg_.solve_limit;
        const auto& prob = cfg_.dirichlet();
        const std::string h = key("solve-limit", {{"cell", cell_key()},
                                                  {"problem", problem_section()},
                                                  {"solve", detail::section(cfg_.canonical, "solve_limit")},
                                                  {"points", detail::section(cfg_.canonical, "query_points")}});
        const fs::path stem = cache_stem("solve-limit", h);
        artifact = (out_ / "solve-limit.json").string();
        EpsSolutions sol;
        bool cached = false;
        if (cache_hit(stem.string() + ".json")) {
            sol = eps_solutions_from_json(read_json(stem.string() + ".json"));
            cached = true;
        } else {
            const auto& eff = *res.effective;
            if (sc.uses_fd())
                sol.records.push_back(detail::fd_record(solve_effective(eff, prob, sc.fd_N, sc.newton), cfg_.query_points));
            if (sc.uses_bsde()) {
                BsdeParams bp = sc.paths.bsde;
                bp.scheme.h = sc.paths.h_max;
                bp.scheme.seed = detail::stage_seed(cfg_.seed, "solve-limit");
                const LimitDynamics dyn(eff);
                SolutionRecord r;
                r.method = "bsde";
                if (prob.driver().yz_independent())
                    r.value = solve_feynman_kac(dyn, prob.domain(), prob.g(), detail::averaged_source(eff.fbar),
                                                cfg_.query_points, bp);
                else
                    r.value = solve_bsde_picard(dyn, prob.domain(), prob.g(), LimitDriver{&eff.fbar}, cfg_.query_points, bp);
                sol.records.push_back(std::move(r));
            }
            write_json(stem.string() + ".json", to_json(sol));
        }
        write_json(artifact, to_json(sol));
        for (const auto& r : sol.records)
            write_csv_with_meta(out_ / ("solve-limit_" + r.method + ".csv"), detail::value_csv(r.value),
                                {{"config_hash", config_hash_}, {"seed", cfg_.seed}, {"stage", "solve-limit"},
                                 {"method", r.method}});
        res.limit = std::move(sol);
        return cached;
    }

    // -- converge ---------------------------------------------------------
    bool run_converge(PipelineResult& res, std::string& artifact) {
        artifact = (out_ / "report.json").string();
        res.report = assess_convergence(res.prelimit, *res.limit, cfg_.converge, config_hash_, cfg_.seed);
        atomic_write(artifact, canonical_report(*res.report));
        write_csv_with_meta(out_ / "errors.csv", errors_csv(*res.report),
                            {{"config_hash", config_hash_}, {"seed", cfg_.seed}, {"stage", "converge"}});
        if (cfg_.epsilons.empty()) res.notices.push_back("empty eps list: the convergence table is empty");
        if (!res.report->pass && !cfg_.epsilons.empty()) res.exit_code = kExitAcceptance;
        return res.timing("solve-eps") && res.timing("solve-eps")->cached && res.timing("solve-limit") &&
               res.timing("solve-limit")->cached;
    }

    const ExperimentConfig& cfg_;
    PipelineOptions opt_;
    fs::path out_;
    std::string config_hash_;
};

inline PipelineResult run_pipeline(const ExperimentConfig& cfg, PipelineOptions opt = {}) {
    return Pipeline(cfg, opt).run();
}

}  // namespace phom
