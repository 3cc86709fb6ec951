#include "phom/config.hpp"
#include "phom/pipeline.hpp"
#include "phom/svg.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void print_summary(const phom::PipelineResult& res) {
    using namespace phom;
    for (const auto& t : res.timings)
        std::printf("stage %-12s %8.3f s%s\n", t.stage.c_str(), t.seconds, t.cached ? " (cached)" : "");
    if (res.validation) {
        for (const auto& c : res.validation->checks)
            std::printf("  check %-22s %s  residual %.3g  tol %.3g%s\n", c.name.c_str(),
                        c.informational ? "INFO" : (c.pass ? "PASS" : "FAIL"), c.residual, c.tolerance,
                        c.note.empty() ? "" : ("  " + c.note).c_str());
    }
    if (res.effective) {
        std::printf("  effective A =");
        for (Eigen::Index i = 0; i < res.effective->A.size(); ++i) std::printf(" %.8g", res.effective->A.data()[i]);
        std::printf("\n  effective C =");
        for (Eigen::Index i = 0; i < res.effective->C.size(); ++i) std::printf(" %.8g", res.effective->C[i]);
        std::printf("\n");
    }
    if (res.report) {
        for (const auto& row : res.report->rows)
            std::printf("  eps %-8g max error %.4e (se %.2e)\n", row.eps, row.max_error, row.max_error_se);
        std::printf("  spearman %.3f, final %.4e, bound %.4e: %s\n", res.report->spearman, res.report->final_error,
                    res.report->final_threshold, res.report->pass ? "PASS" : "FAIL");
    }
    for (const auto& n : res.notices) std::fprintf(stderr, "notice: %s\n", n.c_str());
}

int run_stage(const CommonOptions& opt, std::optional<phom::Stage> stop, bool plots) {
    using namespace phom;
    ExperimentConfig cfg = load_config(opt.config);
    if (opt.seed) cfg.seed = *opt.seed;
    if (!opt.out.empty()) cfg.output_dir = opt.out;
    PipelineOptions po;
    po.stop_after = stop;
    const PipelineResult res = run_pipeline(cfg, po);
    print_summary(res);
    if (stop && !res.ran.empty() && res.ran.back() != *stop && res.exit_code == kExitOk)
        std::fprintf(stderr, "notice: stage '%s' is not in the configured stage list; stopped after '%s'\n",
                     std::string(to_string(*stop)).c_str(), std::string(to_string(res.ran.back())).c_str());
    if (plots) {
        const auto p = emit_plots(cfg.output_dir);
        for (const auto& w : p.written) std::printf("wrote %s/%s\n", cfg.output_dir.c_str(), w.c_str());
        for (const auto& n : p.notices) std::fprintf(stderr, "notice: %s\n", n.c_str());
    }
    return res.exit_code;
}

int run_plot(const CommonOptions& opt) {
    using namespace phom;
    std::string out = opt.out;
    if (out.empty()) {
        if (opt.config.empty()) throw Error(ErrorCode::ConfigInvalid, "plot needs --out or --config");
        out = load_config(opt.config).output_dir;
    }
    const auto p = emit_plots(out);
    for (const auto& w : p.written) std::printf("wrote %s/%s\n", out.c_str(), w.c_str());
    for (const auto& n : p.notices) std::fprintf(stderr, "notice: %s\n", n.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace phom;
    CLI::App app{"Periodic homogenization toolkit: effective coefficients, BSDE and PDE solvers, convergence studies"};
    app.require_subcommand(1);
    CommonOptions opt;
    std::uint64_t seed_value = 0;

    struct Command {
        const char* name;
        const char* help;
        std::optional<Stage> stage;
        bool plots;
    };
    const Command commands[] = {
        {"validate", "Check the standing assumptions of the configured model", Stage::Validate, false},
        {"measure", "Estimate the invariant measure on the torus", Stage::Measure, false},
        {"cell", "Solve the cell problem for the corrector", Stage::Cell, false},
        {"effective", "Assemble the effective coefficients A, C and the averaged driver", Stage::Effective, false},
        {"solve-eps", "Solve the oscillating problem for every eps", Stage::SolveEps, false},
        {"solve-limit", "Solve the homogenized problem", Stage::SolveLimit, false},
        {"converge", "Run the eps sweep and assess convergence", Stage::Converge, false},
        {"run", "Run the configured stage list and emit plots", std::nullopt, true},
    };
    std::vector<std::pair<CLI::App*, const Command*>> subs;
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", opt.config, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed_value, "Master seed (overrides the config)");
        sub->add_option("--out", opt.out, "Output directory (overrides the config)");
        subs.push_back({sub, &c});
    }
    CLI::App* plot = app.add_subcommand("plot", "Write SVG plots from the artifacts of a previous run");
    plot->add_option("--config", opt.config, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
    plot->add_option("--seed", seed_value, "Accepted for symmetry; plots do not depend on it");
    plot->add_option("--out", opt.out, "Output directory holding the artifacts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (plot->parsed()) return run_plot(opt);
        for (const auto& [sub, cmd] : subs) {
            if (!sub->parsed()) continue;
            if (sub->count("--seed")) opt.seed = seed_value;
            return run_stage(opt, cmd->stage, cmd->plots);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitSolver;
    }
    return kExitOk;
}
