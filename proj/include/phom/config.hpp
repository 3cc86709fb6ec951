#pragma once

#include "phom/bsde.hpp"
#include "phom/coefficients.hpp"
#include "phom/core.hpp"
#include "phom/ergodic_cell.hpp"
#include "phom/pde_oracle.hpp"
#include "phom/torus_dynamics.hpp"
#include "phom/validation.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace phom {

using Json = nlohmann::json;

enum class Stage { Validate, Measure, Cell, Effective, SolveEps, SolveLimit, Converge };

inline constexpr std::array<Stage, 7> kStageOrder{Stage::Validate, Stage::Measure,    Stage::Cell,
                                                 Stage::Effective, Stage::SolveEps, Stage::SolveLimit,
                                                 Stage::Converge};

inline std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::Validate: return "validate";
        case Stage::Measure: return "measure";
        case Stage::Cell: return "cell";
        case Stage::Effective: return "effective";
        case Stage::SolveEps: return "solve-eps";
        case Stage::SolveLimit: return "solve-limit";
        case Stage::Converge: return "converge";
    }
    return "unknown";
}

inline std::optional<Stage> parse_stage(std::string_view name) {
    for (Stage s : kStageOrder)
        if (to_string(s) == name) return s;
    return std::nullopt;
}

/// Which solver produces a value function.
enum class SolveMethod { Fd, Bsde, Both };

inline std::string_view to_string(SolveMethod m) {
    return m == SolveMethod::Fd ? "fd" : m == SolveMethod::Bsde ? "bsde" : "both";
}

struct PathSolverConfig {
    BsdeParams bsde;
    /// Slow step h = min(h0 eps^2, h_max); the limit process uses h_max.
    double h0 = 2e-3;
    double h_max = 1e-3;
};

struct SolveConfig {
    SolveMethod method = SolveMethod::Fd;
    int fd_N = 0;
    NewtonParams newton;
    PathSolverConfig paths;

    bool uses_fd() const { return method != SolveMethod::Bsde; }
    bool uses_bsde() const { return method != SolveMethod::Fd; }
};

struct ConvergeConfig {
    /// Source of the prelimit values entering the error table.
    SolveMethod prelimit = SolveMethod::Fd;
    SolveMethod limit = SolveMethod::Fd;
    double rel_tol = 0.02;
    double se_multiplier = 3.0;
    double final_ratio = 0.5;
    /// "trend" (error decreases with eps) or "equality" (u_eps = u within the bound).
    std::string mode = "trend";
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    std::vector<Stage> stages;
    PeriodicModel model = PeriodicModel::constant(1);
    std::optional<DirichletProblem> problem;
    std::vector<double> epsilons;
    std::vector<Vec> query_points;

    MeasureBackend measure_backend = MeasureBackend::StationaryGrid;
    MeasureParams measure;
    CellBackend cell_backend = CellBackend::Grid;
    CellParams cell;
    ValidationParams validation;
    SolveConfig solve_eps;
    SolveConfig solve_limit;
    ConvergeConfig converge;

    /// Canonical (key-sorted) form of the parsed document, the seed excluded.
    Json canonical;

    bool has_stage(Stage s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }
    const DirichletProblem& dirichlet() const { return *problem; }
};

namespace detail {

/// Object reader that rejects unknown keys and reports JSON paths.
class JsonReader {
public:
    JsonReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("expected an object");
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw Error(ErrorCode::ConfigInvalid, (path_.empty() ? std::string("<root>") : path_) + ": " + msg);
    }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const Json& at(const std::string& key) {
        if (!has(key)) fail("missing required key '" + key + "'");
        return j_.at(key);
    }

    double number(const std::string& key, std::optional<double> def = std::nullopt) {
        if (!has(key)) {
            if (!def) fail("missing required key '" + key + "'");
            return *def;
        }
        const Json& v = j_.at(key);
        if (!v.is_number()) throw Error(ErrorCode::ConfigInvalid, child(key) + ": expected a number");
        return v.get<double>();
    }

    long long integer(const std::string& key, std::optional<long long> def = std::nullopt) {
        if (!has(key)) {
            if (!def) fail("missing required key '" + key + "'");
            return *def;
        }
        const Json& v = j_.at(key);
        if (!v.is_number_integer()) throw Error(ErrorCode::ConfigInvalid, child(key) + ": expected an integer");
        return v.get<long long>();
    }

    std::size_t count(const std::string& key, std::size_t def) {
        const long long v = integer(key, static_cast<long long>(def));
        if (v < 0) throw Error(ErrorCode::ConfigInvalid, child(key) + ": must be nonnegative");
        return static_cast<std::size_t>(v);
    }

    std::string string(const std::string& key, std::optional<std::string> def = std::nullopt) {
        if (!has(key)) {
            if (!def) fail("missing required key '" + key + "'");
            return *def;
        }
        const Json& v = j_.at(key);
        if (!v.is_string()) throw Error(ErrorCode::ConfigInvalid, child(key) + ": expected a string");
        return v.get<std::string>();
    }

    std::optional<JsonReader> object(const std::string& key) {
        if (!has(key)) return std::nullopt;
        return JsonReader(j_.at(key), child(key));
    }

    /// Rejects keys that were never queried.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) fail("unknown key '" + it.key() + "'");
    }

private:
    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline Vec parse_vec(const Json& j, const std::string& path, int expected_dim = -1) {
    if (!j.is_array()) throw Error(ErrorCode::ConfigInvalid, path + ": expected an array of numbers");
    if (j.empty() || j.size() > static_cast<std::size_t>(kMaxDim))
        throw Error(ErrorCode::ConfigInvalid, path + ": length must be between 1 and 3");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw Error(ErrorCode::ConfigInvalid, path + "[" + std::to_string(i) + "]: expected a number");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    if (expected_dim >= 0 && v.size() != expected_dim)
        throw Error(ErrorCode::ConfigInvalid,
                    path + ": expected length " + std::to_string(expected_dim) + ", got " + std::to_string(v.size()));
    return v;
}

/// A field is a number or {constant, terms: [{k, cos, sin}], cutoff: {axis, lo, hi, width}}.
inline ScalarField parse_field(const Json& j, const std::string& path, int dim) {
    if (j.is_number()) return ScalarField(j.get<double>());
    JsonReader r(j, path);
    const double constant = r.number("constant", 0.0);
    std::vector<FourierTerm> terms;
    if (r.has("terms")) {
        const Json& arr = r.at("terms");
        if (!arr.is_array()) r.fail("'terms' must be an array");
        for (std::size_t t = 0; t < arr.size(); ++t) {
            JsonReader tr(arr[t], path + ".terms[" + std::to_string(t) + "]");
            FourierTerm ft;
            const Json& k = tr.at("k");
            if (!k.is_array() || k.size() != static_cast<std::size_t>(dim))
                tr.fail("'k' must be an integer array of length " + std::to_string(dim));
            for (int i = 0; i < dim; ++i) {
                if (!k[i].is_number_integer()) tr.fail("'k' entries must be integers");
                ft.k[i] = k[i].get<int>();
            }
            ft.cos_coef = tr.number("cos", 0.0);
            ft.sin_coef = tr.number("sin", 0.0);
            tr.finish();
            terms.push_back(ft);
        }
    }
    std::optional<SmoothCutoff> cutoff;
    if (auto cr = r.object("cutoff")) {
        SmoothCutoff c;
        c.axis = static_cast<int>(cr->integer("axis", 0));
        if (c.axis < 0 || c.axis >= dim) cr->fail("'axis' out of range");
        c.lo = cr->number("lo");
        c.hi = cr->number("hi");
        c.width = cr->number("width", 0.1);
        cr->finish();
        cutoff = c;
    }
    r.finish();
    try {
        return ScalarField(constant, std::move(terms), cutoff);
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigInvalid, path + ": " + e.message());
    }
}

inline std::vector<ScalarField> parse_fields(const Json& j, const std::string& path, std::size_t n, int dim) {
    if (!j.is_array() || j.size() != n)
        throw Error(ErrorCode::ConfigInvalid, path + ": expected an array of " + std::to_string(n) + " fields");
    std::vector<ScalarField> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(parse_field(j[i], path + "[" + std::to_string(i) + "]", dim));
    return out;
}

inline PeriodicModel parse_model(JsonReader& r) {
    const long long dim = r.integer("dim");
    if (dim < 1 || dim > kMaxDim) r.fail("'dim' must be 1, 2 or 3");
    const int d = static_cast<int>(dim);
    const auto n = static_cast<std::size_t>(d);
    const bool has_sigma = r.has("sigma"), has_diff = r.has("diffusion");
    if (has_sigma == has_diff) r.fail("exactly one of 'sigma' and 'diffusion' is required");
    const DiffusionForm form = has_sigma ? DiffusionForm::Sigma : DiffusionForm::Diffusion;
    const std::string key = has_sigma ? "sigma" : "diffusion";
    auto diffusion = parse_fields(r.at(key), r.child(key), n * n, d);
    std::vector<ScalarField> b(n), c(n);
    if (r.has("b")) b = parse_fields(r.at("b"), r.child("b"), n, d);
    if (r.has("c")) c = parse_fields(r.at("c"), r.child("c"), n, d);
    r.finish();
    return PeriodicModel(d, form, std::move(diffusion), std::move(b), std::move(c));
}

inline Domain parse_domain(JsonReader& r, int dim) {
    const std::string type = r.string("type", "box");
    Domain G;
    if (type == "box") {
        const Vec lo = parse_vec(r.at("lower"), r.child("lower"), dim);
        const Vec hi = parse_vec(r.at("upper"), r.child("upper"), dim);
        for (int i = 0; i < dim; ++i)
            if (!(lo[i] < hi[i])) r.fail("box requires lower < upper on every axis");
        G = Domain::box(lo, hi);
    } else if (type == "ball") {
        const Vec c = parse_vec(r.at("center"), r.child("center"), dim);
        const double rad = r.number("radius");
        if (!(rad > 0.0)) r.fail("'radius' must be positive");
        G = Domain::ball(c, rad);
    } else {
        r.fail("'type' must be 'box' or 'ball'");
    }
    r.finish();
    return G;
}

inline BoundaryFunction parse_boundary(JsonReader& r, int dim) {
    const double constant = r.number("constant", 0.0);
    Vec linear;
    if (r.has("linear")) linear = parse_vec(r.at("linear"), r.child("linear"), dim);
    const double quadratic = r.number("quadratic", 0.0);
    r.finish();
    return BoundaryFunction(constant, linear, quadratic);
}

inline Driver parse_driver(JsonReader& r, int dim) {
    DriverSpec s;
    s.source_constant = r.number("source_constant", 0.0);
    if (r.has("source_fast")) s.source_fast = parse_field(r.at("source_fast"), r.child("source_fast"), dim);
    s.slow_amplitude = r.number("slow_amplitude", 0.0);
    if (r.has("slow_wavevector")) s.slow_wavevector = parse_vec(r.at("slow_wavevector"), r.child("slow_wavevector"), dim);
    if (s.slow_amplitude != 0.0 && s.slow_wavevector.size() == 0) r.fail("'slow_amplitude' needs 'slow_wavevector'");
    s.reaction_linear = r.number("reaction_linear", 0.0);
    s.reaction_sine = r.number("reaction_sine", 0.0);
    s.gradient_amplitude = r.number("gradient_amplitude", 0.0);
    if (r.has("gradient_direction"))
        s.gradient_direction = parse_vec(r.at("gradient_direction"), r.child("gradient_direction"), dim);
    if (s.gradient_amplitude != 0.0 && s.gradient_direction.size() == 0)
        r.fail("'gradient_amplitude' needs 'gradient_direction'");
    r.finish();
    return Driver(s);
}

inline ExitRule parse_exit_rule(const std::string& s, const JsonReader& r) {
    if (s == "grid") return ExitRule::GridCrossing;
    if (s == "bridge") return ExitRule::BrownianBridge;
    r.fail("'exit_rule' must be 'grid' or 'bridge'");
}

inline SolveMethod parse_method(const std::string& s, const JsonReader& r) {
    if (s == "fd") return SolveMethod::Fd;
    if (s == "bsde") return SolveMethod::Bsde;
    if (s == "both") return SolveMethod::Both;
    r.fail("method must be 'fd', 'bsde' or 'both'");
}

inline void parse_paths(JsonReader& r, PathSolverConfig& p) {
    p.bsde.n_paths = r.count("n_paths", p.bsde.n_paths);
    p.bsde.n_final_paths = r.count("n_final_paths", p.bsde.n_final_paths);
    p.bsde.n_picard = static_cast<int>(r.integer("n_picard", p.bsde.n_picard));
    p.bsde.basis_degree = static_cast<int>(r.integer("basis_degree", p.bsde.basis_degree));
    p.bsde.picard_tol = r.number("picard_tol", p.bsde.picard_tol);
    p.bsde.noise_multiplier = r.number("noise_multiplier", p.bsde.noise_multiplier);
    p.h0 = r.number("h0", p.h0);
    p.h_max = r.number("h_max", p.h_max);
    p.bsde.scheme.t_max = r.number("t_max", p.bsde.scheme.t_max);
    p.bsde.scheme.exit_rule = parse_exit_rule(r.string("exit_rule", "bridge"), r);
    if (!(p.h0 > 0.0) || !(p.h_max > 0.0)) r.fail("'h0' and 'h_max' must be positive");
    if (p.bsde.n_paths < 2 || p.bsde.n_final_paths < 2) r.fail("path counts must be at least 2");
    r.finish();
}

inline void parse_solve(JsonReader& r, SolveConfig& s, int default_N) {
    s.method = parse_method(r.string("method", "fd"), r);
    s.fd_N = static_cast<int>(r.integer("fd_N", default_N));
    if (s.fd_N < 2) r.fail("'fd_N' must be at least 2");
    s.newton.tol = r.number("newton_tol", s.newton.tol);
    s.newton.max_iters = static_cast<int>(r.integer("newton_max_iters", s.newton.max_iters));
    if (auto pr = r.object("bsde")) parse_paths(*pr, s.paths);
    r.finish();
}

}  // namespace detail

/// Parses and validates an experiment document. Every error is CONFIG_INVALID
/// (or the model/problem constructor error) with the JSON path of the offence.
inline ExperimentConfig parse_config(const Json& doc) {
    using detail::JsonReader;
    ExperimentConfig cfg;
    JsonReader root(doc, "");
    cfg.name = root.string("name", "experiment");
    cfg.seed = static_cast<std::uint64_t>(root.integer("seed", 1));
    cfg.output_dir = root.string("output_dir", "out");

    // Stages: a prefix of the pipeline order.
    if (root.has("stages")) {
        const Json& st = root.at("stages");
        if (!st.is_array() || st.empty()) root.fail("'stages' must be a nonempty array");
        for (std::size_t i = 0; i < st.size(); ++i) {
            const auto s = st[i].is_string() ? parse_stage(st[i].get<std::string>()) : std::nullopt;
            if (!s) root.fail("stages[" + std::to_string(i) + "] is not a pipeline stage");
            if (*s != kStageOrder[i])
                root.fail("stages must be a prefix of validate, measure, cell, effective, solve-eps, "
                          "solve-limit, converge");
            cfg.stages.push_back(*s);
        }
    } else {
        cfg.stages.assign(kStageOrder.begin(), kStageOrder.end());
    }

    {
        JsonReader mr(root.at("model"), "model");
        cfg.model = detail::parse_model(mr);
    }
    const int d = cfg.model.dim();

    {
        JsonReader pr(root.at("problem"), "problem");
        JsonReader dr(pr.at("domain"), "problem.domain");
        Domain G = detail::parse_domain(dr, d);
        BoundaryFunction g;
        if (auto br = pr.object("boundary")) g = detail::parse_boundary(*br, d);
        Driver f;
        if (auto fr = pr.object("driver")) f = detail::parse_driver(*fr, d);
        const double lambda = pr.number("lambda");
        pr.finish();
        if (lambda == 0.0) throw Error(ErrorCode::ConfigInvalid, "problem.lambda: must be nonzero");
        cfg.problem.emplace(std::move(G), std::move(g), std::move(f), lambda);
    }

    if (root.has("epsilons")) {
        const Json& e = root.at("epsilons");
        if (!e.is_array()) root.fail("'epsilons' must be an array");
        for (std::size_t i = 0; i < e.size(); ++i) {
            if (!e[i].is_number() || !(e[i].get<double>() > 0.0))
                root.fail("epsilons[" + std::to_string(i) + "] must be a positive number");
            cfg.epsilons.push_back(e[i].get<double>());
        }
    }
    if (root.has("query_points")) {
        const Json& q = root.at("query_points");
        if (!q.is_array()) root.fail("'query_points' must be an array");
        for (std::size_t i = 0; i < q.size(); ++i) {
            const std::string path = "query_points[" + std::to_string(i) + "]";
            Vec x = detail::parse_vec(q[i], path, d);
            if (!cfg.problem->domain().contains(x))
                throw Error(ErrorCode::ConfigInvalid, path + ": not inside the open domain");
            cfg.query_points.push_back(x);
        }
    }
    if (cfg.query_points.empty()) cfg.query_points.push_back(cfg.problem->domain().reference_point());

    if (auto r = root.object("measure")) {
        const std::string backend = r->string("backend", "stationary-grid");
        if (backend == "stationary-grid") cfg.measure_backend = MeasureBackend::StationaryGrid;
        else if (backend == "occupation-mc") cfg.measure_backend = MeasureBackend::OccupationMc;
        else r->fail("'backend' must be 'stationary-grid' or 'occupation-mc'");
        cfg.measure.N = static_cast<int>(r->integer("N", cfg.measure.N));
        if (cfg.measure.N < 4) r->fail("'N' must be at least 4");
        cfg.measure.mc.n_paths = r->count("n_paths", cfg.measure.mc.n_paths);
        cfg.measure.mc.h = r->number("h", cfg.measure.mc.h);
        cfg.measure.mc.t_burn = r->number("t_burn", cfg.measure.mc.t_burn);
        cfg.measure.mc.t_avg = r->number("t_avg", cfg.measure.mc.t_avg);
        r->finish();
    }
    if (auto r = root.object("cell")) {
        const std::string backend = r->string("backend", "grid");
        if (backend == "grid") cfg.cell_backend = CellBackend::Grid;
        else if (backend == "feynman-kac") cfg.cell_backend = CellBackend::FeynmanKac;
        else r->fail("'backend' must be 'grid' or 'feynman-kac'");
        cfg.cell.centering_tol = r->number("centering_tol", cfg.cell.centering_tol);
        cfg.cell.n_paths = r->count("n_paths", cfg.cell.n_paths);
        cfg.cell.h = r->number("h", cfg.cell.h);
        cfg.cell.tail_tol = r->number("tail_tol", cfg.cell.tail_tol);
        r->finish();
    }
    if (auto r = root.object("validate")) {
        auto& v = cfg.validation;
        v.centering_tol = r->number("centering_tol", v.centering_tol);
        v.random_samples = r->count("random_samples", v.random_samples);
        v.exit_paths = r->count("exit_paths", v.exit_paths);
        v.exit_h0 = r->number("exit_h0", v.exit_h0);
        v.exit_h_max = r->number("exit_h_max", v.exit_h_max);
        v.exit_t_max = r->number("exit_t_max", v.exit_t_max);
        if (r->has("exit_eps")) {
            const Json& e = r->at("exit_eps");
            if (!e.is_array()) r->fail("'exit_eps' must be an array");
            for (const auto& x : e) {
                if (!x.is_number() || !(x.get<double>() > 0.0)) r->fail("'exit_eps' entries must be positive");
                v.exit_eps.push_back(x.get<double>());
            }
        }
        if (r->has("exit_points")) {
            const Json& e = r->at("exit_points");
            if (!e.is_array()) r->fail("'exit_points' must be an array");
            for (std::size_t i = 0; i < e.size(); ++i)
                v.exit_points.push_back(detail::parse_vec(e[i], r->child("exit_points"), d));
        }
        r->finish();
    }
    cfg.validation.centering_tol = std::min(cfg.validation.centering_tol, cfg.cell.centering_tol);
    cfg.validation.measure_backend = MeasureBackend::StationaryGrid;
    cfg.validation.measure.N = cfg.measure.N;

    const int default_N = d == 1 ? 1024 : 64;
    if (auto r = root.object("solve_eps")) detail::parse_solve(*r, cfg.solve_eps, default_N);
    else cfg.solve_eps.fd_N = default_N;
    if (auto r = root.object("solve_limit")) detail::parse_solve(*r, cfg.solve_limit, default_N);
    else cfg.solve_limit.fd_N = default_N;
    if (d > 2 && (cfg.solve_eps.uses_fd() || cfg.solve_limit.uses_fd()))
        throw Error(ErrorCode::ConfigInvalid, "the finite-difference solver supports d <= 2; use method 'bsde'");

    if (auto r = root.object("converge")) {
        auto& c = cfg.converge;
        c.prelimit = detail::parse_method(r->string("prelimit", "fd"), *r);
        c.limit = detail::parse_method(r->string("limit", "fd"), *r);
        if (c.prelimit == SolveMethod::Both || c.limit == SolveMethod::Both)
            r->fail("'prelimit' and 'limit' choose a single source: 'fd' or 'bsde'");
        c.rel_tol = r->number("rel_tol", c.rel_tol);
        c.se_multiplier = r->number("se_multiplier", c.se_multiplier);
        c.final_ratio = r->number("final_ratio", c.final_ratio);
        c.mode = r->string("mode", c.mode);
        if (c.mode != "trend" && c.mode != "equality") r->fail("'mode' must be 'trend' or 'equality'");
        r->finish();
    }
    auto provides = [](const SolveConfig& s, SolveMethod m) {
        return s.method == SolveMethod::Both || s.method == m;
    };
    if (cfg.has_stage(Stage::Converge)) {
        if (!provides(cfg.solve_eps, cfg.converge.prelimit))
            throw Error(ErrorCode::ConfigInvalid, "converge.prelimit: solve_eps does not produce that source");
        if (!provides(cfg.solve_limit, cfg.converge.limit))
            throw Error(ErrorCode::ConfigInvalid, "converge.limit: solve_limit does not produce that source");
    }
    root.finish();

    cfg.canonical = doc;
    cfg.canonical.erase("seed");
    cfg.canonical.erase("output_dir");
    cfg.canonical.erase("stages");
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::ConfigInvalid, std::string("malformed JSON: ") + e.what());
    }
    return parse_config(doc);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const Error& e) {
        throw Error(e.code(), path + ": " + e.message());
    }
}

}  // namespace phom
