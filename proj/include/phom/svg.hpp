#pragma once

#include "phom/ergodic_cell.hpp"
#include "phom/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace phom {

namespace svg {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                          "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

inline const char* color(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof kPalette[0])]; }

/// Axis-aligned plotting panel with linear or log10 scales.
class Panel {
public:
    Panel(double x0, double y0, double w, double h, bool logx = false, bool logy = false)
        : x0_(x0), y0_(y0), w_(w), h_(h), logx_(logx), logy_(logy) {}

    void include_x(double v) {
        if (logx_ && !(v > 0.0)) return;
        const double t = logx_ ? std::log10(v) : v;
        xmin_ = std::min(xmin_, t);
        xmax_ = std::max(xmax_, t);
    }
    void include_y(double v) {
        if (logy_ && !(v > 0.0)) return;
        const double t = logy_ ? std::log10(v) : v;
        ymin_ = std::min(ymin_, t);
        ymax_ = std::max(ymax_, t);
    }

    void finalize() {
        if (!(xmin_ <= xmax_)) xmin_ = 0.0, xmax_ = 1.0;
        if (!(ymin_ <= ymax_)) ymin_ = 0.0, ymax_ = 1.0;
        if (logx_) xmin_ = std::floor(xmin_), xmax_ = std::max(std::ceil(xmax_), xmin_ + 1.0);
        if (logy_) ymin_ = std::floor(ymin_), ymax_ = std::max(std::ceil(ymax_), ymin_ + 1.0);
        if (xmax_ - xmin_ < 1e-12) xmin_ -= 0.5, xmax_ += 0.5;
        if (ymax_ - ymin_ < 1e-12) ymin_ -= 0.5, ymax_ += 0.5;
        if (!logy_) {
            const double pad = 0.05 * (ymax_ - ymin_);
            ymin_ -= pad;
            ymax_ += pad;
        }
    }

    double px(double v) const {
        const double t = logx_ ? std::log10(std::max(v, 1e-300)) : v;
        return x0_ + w_ * (t - xmin_) / (xmax_ - xmin_);
    }
    double py(double v) const {
        const double t = logy_ ? std::log10(std::max(v, 1e-300)) : v;
        return y0_ + h_ - h_ * (t - ymin_) / (ymax_ - ymin_);
    }
    bool visible_y(double v) const { return !logy_ || v > 0.0; }

    std::string frame(const std::string& title, const std::string& xlabel, const std::string& ylabel) const {
        std::string s;
        s += "<rect x=\"" + num(x0_) + "\" y=\"" + num(y0_) + "\" width=\"" + num(w_) + "\" height=\"" + num(h_) +
             "\" fill=\"none\" stroke=\"#333\"/>\n";
        s += "<text x=\"" + num(x0_ + w_ / 2) + "\" y=\"" + num(y0_ - 10) +
             "\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) + "</text>\n";
        s += "<text x=\"" + num(x0_ + w_ / 2) + "\" y=\"" + num(y0_ + h_ + 36) +
             "\" text-anchor=\"middle\" font-size=\"12\">" + escape(xlabel) + "</text>\n";
        s += "<text x=\"" + num(x0_ - 52) + "\" y=\"" + num(y0_ + h_ / 2) + "\" text-anchor=\"middle\" font-size=\"12\" "
             "transform=\"rotate(-90 " + num(x0_ - 52) + " " + num(y0_ + h_ / 2) + ")\">" + escape(ylabel) + "</text>\n";
        s += ticks(true) + ticks(false);
        return s;
    }

private:
    std::string ticks(bool xaxis) const {
        const bool log = xaxis ? logx_ : logy_;
        const double lo = xaxis ? xmin_ : ymin_, hi = xaxis ? xmax_ : ymax_;
        std::vector<double> at;
        if (log) {
            for (double e = lo; e <= hi + 1e-9; e += 1.0) at.push_back(e);
        } else {
            for (int k = 0; k <= 4; ++k) at.push_back(lo + (hi - lo) * k / 4.0);
        }
        std::string s;
        for (double t : at) {
            const double v = log ? std::pow(10.0, t) : t;
            if (xaxis) {
                const double x = x0_ + w_ * (t - lo) / (hi - lo);
                s += "<line x1=\"" + num(x) + "\" y1=\"" + num(y0_ + h_) + "\" x2=\"" + num(x) + "\" y2=\"" +
                     num(y0_ + h_ + 5) + "\" stroke=\"#333\"/>\n";
                s += "<text x=\"" + num(x) + "\" y=\"" + num(y0_ + h_ + 18) +
                     "\" text-anchor=\"middle\" font-size=\"10\">" + label(v) + "</text>\n";
            } else {
                const double y = y0_ + h_ - h_ * (t - lo) / (hi - lo);
                s += "<line x1=\"" + num(x0_ - 5) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x0_) + "\" y2=\"" + num(y) +
                     "\" stroke=\"#333\"/>\n";
                s += "<text x=\"" + num(x0_ - 8) + "\" y=\"" + num(y + 3) +
                     "\" text-anchor=\"end\" font-size=\"10\">" + label(v) + "</text>\n";
            }
        }
        return s;
    }

    double x0_, y0_, w_, h_;
    bool logx_, logy_;
    double xmin_ = std::numeric_limits<double>::infinity(), xmax_ = -std::numeric_limits<double>::infinity();
    double ymin_ = std::numeric_limits<double>::infinity(), ymax_ = -std::numeric_limits<double>::infinity();
};

inline std::string header(int w, int h) {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           std::to_string(w) + "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
           std::to_string(h) + "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline std::string footer() { return "</svg>\n"; }

inline std::string polyline(const Panel& p, const std::vector<double>& x, const std::vector<double>& y,
                            const char* stroke, const char* dash = nullptr) {
    std::string pts;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!p.visible_y(y[i])) continue;
        if (!pts.empty()) pts += ' ';
        pts += num(p.px(x[i])) + "," + num(p.py(y[i]));
    }
    std::string s = "<polyline fill=\"none\" stroke=\"" + std::string(stroke) + "\" stroke-width=\"1.5\"";
    if (dash) s += " stroke-dasharray=\"" + std::string(dash) + "\"";
    return s + " points=\"" + pts + "\"/>\n";
}

inline std::string marker(const Panel& p, double x, double y, double err, const char* fill) {
    if (!p.visible_y(y)) return "";
    std::string s;
    if (err > 0.0) {
        const double lo = p.visible_y(y - err) ? y - err : y;
        s += "<line x1=\"" + num(p.px(x)) + "\" y1=\"" + num(p.py(lo)) + "\" x2=\"" + num(p.px(x)) + "\" y2=\"" +
             num(p.py(y + err)) + "\" stroke=\"" + fill + "\"/>\n";
    }
    s += "<circle cx=\"" + num(p.px(x)) + "\" cy=\"" + num(p.py(y)) + "\" r=\"3.5\" fill=\"" + fill + "\"/>\n";
    return s;
}

inline std::string legend(double x, double y, const std::vector<std::pair<std::string, const char*>>& items) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const double yy = y + 16.0 * static_cast<double>(i);
        s += "<rect x=\"" + num(x) + "\" y=\"" + num(yy - 8) + "\" width=\"12\" height=\"3\" fill=\"" + items[i].second +
             "\"/>\n";
        s += "<text x=\"" + num(x + 18) + "\" y=\"" + num(yy - 3) + "\" font-size=\"11\">" + escape(items[i].first) +
             "</text>\n";
    }
    return s;
}

/// Viridis-like ramp sampled at five anchors.
inline std::string heat(double t) {
    static constexpr double c[5][3] = {
        {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
    t = std::clamp(t, 0.0, 1.0) * 4.0;
    const int k = std::min(3, static_cast<int>(t));
    const double f = t - k;
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(c[k][0] + f * (c[k + 1][0] - c[k][0]))),
                  static_cast<int>(std::lround(c[k][1] + f * (c[k + 1][1] - c[k][1]))),
                  static_cast<int>(std::lround(c[k][2] + f * (c[k + 1][2] - c[k][2]))));
    return buf;
}

/// Heatmap of a 2D periodic grid function (values in x-fastest order).
inline std::string heatmap(double x0, double y0, double size, int N, const std::vector<double>& v,
                           const std::string& title) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double a : v) lo = std::min(lo, a), hi = std::max(hi, a);
    const double span = hi > lo ? hi - lo : 1.0;
    const double cell = size / N;
    std::string s = "<text x=\"" + num(x0 + size / 2) + "\" y=\"" + num(y0 - 10) +
                    "\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) + "</text>\n";
    for (int j = 0; j < N; ++j)
        for (int i = 0; i < N; ++i) {
            const double val = v[static_cast<std::size_t>(j) * N + i];
            s += "<rect x=\"" + num(x0 + i * cell) + "\" y=\"" + num(y0 + size - (j + 1) * cell) + "\" width=\"" +
                 num(cell + 0.05) + "\" height=\"" + num(cell + 0.05) + "\" fill=\"" + heat((val - lo) / span) + "\"/>\n";
        }
    s += "<rect x=\"" + num(x0) + "\" y=\"" + num(y0) + "\" width=\"" + num(size) + "\" height=\"" + num(size) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
    s += "<text x=\"" + num(x0) + "\" y=\"" + num(y0 + size + 16) + "\" font-size=\"10\">min " + label(lo) + ", max " +
         label(hi) + "</text>\n";
    return s;
}

}  // namespace svg

/// Log-log plot of the maximal error against eps with one-SE bars.
inline std::string convergence_svg(const ConvergenceReport& r) {
    svg::Panel p(80, 50, 480, 320, true, true);
    for (const auto& row : r.rows) {
        p.include_x(row.eps);
        p.include_y(row.max_error);
        p.include_y(row.max_error + row.max_error_se);
    }
    p.include_y(r.final_threshold);
    p.finalize();
    std::string s = svg::header(640, 440);
    s += p.frame("Error vs eps (" + r.prelimit_source + " vs " + r.limit_source + ")", "eps", "max |u_eps - u|");
    std::vector<double> x, y;
    for (const auto& row : r.rows) {
        x.push_back(row.eps);
        y.push_back(row.max_error);
    }
    s += svg::polyline(p, x, y, svg::color(0));
    for (const auto& row : r.rows) s += svg::marker(p, row.eps, row.max_error, row.max_error_se, svg::color(0));
    if (!r.rows.empty() && r.final_threshold > 0.0) {
        std::vector<double> tx{r.rows.front().eps, r.rows.back().eps}, ty{r.final_threshold, r.final_threshold};
        s += svg::polyline(p, tx, ty, svg::color(1), "5,4");
    }
    s += svg::legend(420, 70, {{"max error", svg::color(0)}, {"final bound", svg::color(1)}});
    char buf[96];
    std::snprintf(buf, sizeof buf, "Spearman %.3f, %s", r.spearman, r.pass ? "pass" : "fail");
    s += "<text x=\"80\" y=\"425\" font-size=\"11\">" + std::string(buf) + "</text>\n";
    return s + svg::footer();
}

/// Invariant density and corrector: line profiles in d = 1, heatmaps in d = 2
/// and a mid-plane slice in d = 3.
inline std::string cell_profiles_svg(const MeasureEstimate& m, const CorrectorField& c) {
    const int d = m.grid.dim, N = m.grid.N;
    const double vol = std::pow(m.grid.spacing(), d);
    if (d == 1) {
        std::string s = svg::header(1000, 440);
        std::vector<double> x, dens, b;
        for (std::size_t k = 0; k < m.grid.size(); ++k) {
            x.push_back(m.grid.center(k)[0]);
            dens.push_back(m.weights[k] / vol);
            b.push_back(c.bhat(static_cast<Eigen::Index>(k), 0));
        }
        svg::Panel p1(80, 50, 380, 320), p2(580, 50, 380, 320);
        for (std::size_t k = 0; k < x.size(); ++k) {
            p1.include_x(x[k]);
            p1.include_y(dens[k]);
            p2.include_x(x[k]);
            p2.include_y(b[k]);
        }
        p1.include_y(0.0);
        p1.finalize();
        p2.finalize();
        s += p1.frame("Invariant density (" + std::string(to_string(m.backend)) + ")", "x", "m(x)");
        s += svg::polyline(p1, x, dens, svg::color(0));
        s += p2.frame("Corrector (" + std::string(to_string(c.backend)) + ")", "x", "bhat(x)");
        s += svg::polyline(p2, x, b, svg::color(1));
        return s + svg::footer();
    }
    // Two-dimensional view; d = 3 shows the plane through the middle index.
    std::vector<double> dens(static_cast<std::size_t>(N) * N), b(static_cast<std::size_t>(N) * N);
    for (int j = 0; j < N; ++j)
        for (int i = 0; i < N; ++i) {
            std::size_t flat = static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * N;
            if (d == 3) flat += static_cast<std::size_t>(N / 2) * N * N;
            dens[static_cast<std::size_t>(j) * N + i] = m.weights[flat] / vol;
            b[static_cast<std::size_t>(j) * N + i] = c.bhat(static_cast<Eigen::Index>(flat), 0);
        }
    std::string s = svg::header(860, 460);
    const std::string suffix = d == 3 ? " (x3 mid-plane)" : "";
    s += svg::heatmap(40, 50, 360, N, dens, "Invariant density" + suffix);
    s += svg::heatmap(460, 50, 360, N, b, "Corrector bhat_1" + suffix);
    return s + svg::footer();
}

/// Prelimit and limit value functions: FD profiles as lines and Monte Carlo
/// values as markers with one-SE bars. For d > 1 the abscissa is the query
/// point index.
inline std::string value_overlay_svg(const std::vector<EpsSolutions>& prelimit, const EpsSolutions* limit) {
    std::vector<std::pair<std::string, const EpsSolutions*>> series;
    for (const auto& s : prelimit) series.push_back({"eps = " + svg::label(s.eps), &s});
    if (limit) series.push_back({"limit", limit});
    bool one_d = true;
    for (const auto& [name, s] : series)
        for (const auto& r : s->records)
            if (!r.value.points.empty() && r.value.points.front().size() != 1) one_d = false;

    auto abscissa = [&](const ValueEstimate& v, std::size_t q) { return one_d ? v.points[q][0] : static_cast<double>(q + 1); };

    svg::Panel p(80, 50, 560, 340);
    for (const auto& [name, s] : series)
        for (const auto& r : s->records) {
            for (std::size_t k = 0; k < r.profile_x.size(); ++k) {
                if (!one_d) break;
                p.include_x(r.profile_x[k]);
                p.include_y(r.profile_u[k]);
            }
            for (std::size_t q = 0; q < r.value.values.size(); ++q) {
                p.include_x(abscissa(r.value, q));
                p.include_y(r.value.values[q] - r.value.se[q]);
                p.include_y(r.value.values[q] + r.value.se[q]);
            }
        }
    p.finalize();
    std::string out = svg::header(820, 460);
    out += p.frame("Value functions: lines FD, markers MC", one_d ? "x" : "query point", "u");
    std::vector<std::pair<std::string, const char*>> items;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* col = svg::color(i);
        const bool is_limit = limit && i + 1 == series.size();
        items.push_back({series[i].first, col});
        for (const auto& r : series[i].second->records) {
            if (r.method == "fd") {
                if (one_d && !r.profile_x.empty()) {
                    out += svg::polyline(p, r.profile_x, r.profile_u, col, is_limit ? "6,3" : nullptr);
                } else {
                    std::vector<double> x, y;
                    for (std::size_t q = 0; q < r.value.values.size(); ++q) {
                        x.push_back(abscissa(r.value, q));
                        y.push_back(r.value.values[q]);
                    }
                    out += svg::polyline(p, x, y, col, is_limit ? "6,3" : nullptr);
                }
            } else {
                for (std::size_t q = 0; q < r.value.values.size(); ++q)
                    out += svg::marker(p, abscissa(r.value, q), r.value.values[q], r.value.se[q], col);
            }
        }
    }
    out += svg::legend(660, 70, items);
    return out + svg::footer();
}

inline constexpr const char* kConvergencePlot = "convergence.svg";
inline constexpr const char* kCellPlot = "cell_profiles.svg";
inline constexpr const char* kValuePlot = "value_overlay.svg";

struct PlotOutcome {
    std::vector<std::string> written;
    std::vector<std::string> notices;
};

/// Regenerates the plots from the artifacts of a previous run in `out`.
inline PlotOutcome emit_plots(const std::filesystem::path& out) {
    namespace fs = std::filesystem;
    PlotOutcome res;
    const fs::path manifest_path = out / "manifest.json";
    if (!fs::exists(manifest_path)) throw Error(ErrorCode::Io, "no manifest.json in " + out.string() + "; run a stage first");
    const Json manifest = read_json(manifest_path);
    const Json& art = manifest.at("artifacts");

    const fs::path report_path = out / "report.json";
    std::optional<ConvergenceReport> report;
    if (art.contains("converge") && fs::exists(report_path)) {
        const Json j = read_json(report_path);
        ConvergenceReport r;
        r.prelimit_source = j.at("prelimit_source").get<std::string>();
        r.limit_source = j.at("limit_source").get<std::string>();
        r.spearman = j.at("spearman").get<double>();
        r.final_threshold = j.at("final_threshold").get<double>();
        r.pass = j.at("pass").get<bool>();
        for (const auto& row : j.at("rows")) {
            ConvergenceRow cr;
            cr.eps = row.at("eps").get<double>();
            cr.max_error = row.at("max_error").get<double>();
            cr.max_error_se = row.at("max_error_se").get<double>();
            r.rows.push_back(cr);
        }
        report = r;
    }
    if (report && !report->rows.empty()) {
        atomic_write(out / kConvergencePlot, convergence_svg(*report));
        res.written.push_back(kConvergencePlot);
    } else {
        res.notices.push_back("no convergence rows (empty eps list or converge not run): " + std::string(kConvergencePlot) +
                              " not written");
    }

    if (art.contains("measure") && art.contains("cell")) {
        auto stem = [](const std::string& json_path) { return json_path.substr(0, json_path.size() - 5); };
        const auto m = load_measure(stem(art.at("measure").get<std::string>()));
        const auto c = load_corrector(stem(art.at("cell").get<std::string>()));
        atomic_write(out / kCellPlot, cell_profiles_svg(m, c));
        res.written.push_back(kCellPlot);
    } else {
        res.notices.push_back("measure or cell stage not run: " + std::string(kCellPlot) + " not written");
    }

    std::vector<EpsSolutions> pre;
    for (std::size_t i = 0; art.contains("solve-eps"); ++i) {
        const fs::path p = out / "solve-eps" / ("eps_" + std::to_string(i) + ".json");
        if (!fs::exists(p)) break;
        pre.push_back(eps_solutions_from_json(read_json(p)));
    }
    std::optional<EpsSolutions> lim;
    if (art.contains("solve-limit") && fs::exists(out / "solve-limit.json")) lim = eps_solutions_from_json(read_json(out / "solve-limit.json"));
    if (!pre.empty() || lim) {
        atomic_write(out / kValuePlot, value_overlay_svg(pre, lim ? &*lim : nullptr));
        res.written.push_back(kValuePlot);
    } else {
        res.notices.push_back("no value functions: " + std::string(kValuePlot) + " not written");
    }
    return res;
}

}  // namespace phom
