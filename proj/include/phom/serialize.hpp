#pragma once

#include "phom/bsde.hpp"
#include "phom/coefficients.hpp"
#include "phom/core.hpp"
#include "phom/ergodic_cell.hpp"
#include "phom/pde_oracle.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace phom {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kToolVersion = "phom 1.0.0";

// ---------------------------------------------------------------------------
// Hashing and atomic files
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Hash of the canonical serialization (sorted keys, shortest round-trip numbers).
inline std::string content_hash(const Json& j) { return hex64(fnv1a64(j.dump())); }

/// Writes to a sibling temporary file and renames it over the target.
inline void atomic_write(const std::filesystem::path& path, std::string_view content) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_json(const std::filesystem::path& path, const Json& j) { atomic_write(path, j.dump(2) + "\n"); }

inline Json read_json(const std::filesystem::path& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::Io, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Array bundles: <stem>.json (metadata) + <stem>.bin (little-endian doubles)
// ---------------------------------------------------------------------------

struct NamedArray {
    std::string name;
    Eigen::MatrixXd data;
};

namespace detail {

inline void append_le(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double read_le(const std::string& in, std::size_t pos) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

inline Eigen::MatrixXd column(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_vector(const Eigen::MatrixXd& m) {
    return std::vector<double>(m.data(), m.data() + m.size());
}

inline Json vec_json(const Vec& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Json mat_json(const Mat& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        a.push_back(row);
    }
    return a;
}

inline Vec json_vec(const Json& a) {
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
}

inline Mat json_mat(const Json& a) {
    const auto r = static_cast<Eigen::Index>(a.size());
    const auto c = r ? static_cast<Eigen::Index>(a[0].size()) : 0;
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
    return m;
}

}  // namespace detail

/// Writes `<stem>.bin` (column-major arrays back to back) and `<stem>.json`
/// holding `meta` plus the array directory.
inline void write_bundle(const std::filesystem::path& stem, const std::string& kind, Json meta,
                         const std::vector<NamedArray>& arrays) {
    std::string bin;
    Json dir = Json::array();
    std::size_t offset = 0;
    for (const auto& a : arrays) {
        dir.push_back({{"name", a.name}, {"rows", a.data.rows()}, {"cols", a.data.cols()}, {"offset", offset}});
        for (Eigen::Index k = 0; k < a.data.size(); ++k) detail::append_le(bin, a.data.data()[k]);
        offset += static_cast<std::size_t>(a.data.size());
    }
    const std::filesystem::path bin_path = stem.string() + ".bin";
    atomic_write(bin_path, bin);
    Json doc;
    doc["format"] = "phom-bundle";
    doc["format_version"] = kFormatVersion;
    doc["kind"] = kind;
    doc["data_file"] = bin_path.filename().string();
    doc["data_hash"] = hex64(fnv1a64(bin));
    doc["arrays"] = dir;
    doc["meta"] = std::move(meta);
    write_json(stem.string() + ".json", doc);
}

struct Bundle {
    std::string kind;
    Json meta;
    std::vector<NamedArray> arrays;

    const Eigen::MatrixXd& array(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return a.data;
        throw Error(ErrorCode::Io, "bundle '" + kind + "' has no array '" + name + "'");
    }
};

inline Bundle read_bundle(const std::filesystem::path& stem) {
    const Json doc = read_json(stem.string() + ".json");
    if (doc.value("format", "") != "phom-bundle" || doc.value("format_version", 0) != kFormatVersion)
        throw Error(ErrorCode::Io, stem.string() + ".json: unsupported bundle format");
    const std::filesystem::path bin_path = stem.parent_path() / doc.at("data_file").get<std::string>();
    const std::string bin = read_file(bin_path);
    if (hex64(fnv1a64(bin)) != doc.at("data_hash").get<std::string>())
        throw Error(ErrorCode::Io, bin_path.string() + ": data hash mismatch");
    Bundle b;
    b.kind = doc.at("kind").get<std::string>();
    b.meta = doc.at("meta");
    for (const auto& e : doc.at("arrays")) {
        NamedArray a;
        a.name = e.at("name").get<std::string>();
        const auto rows = e.at("rows").get<Eigen::Index>(), cols = e.at("cols").get<Eigen::Index>();
        const auto off = e.at("offset").get<std::size_t>();
        if ((off + static_cast<std::size_t>(rows * cols)) * 8 > bin.size())
            throw Error(ErrorCode::Io, bin_path.string() + ": truncated data");
        a.data.resize(rows, cols);
        for (Eigen::Index k = 0; k < rows * cols; ++k) a.data.data()[k] = detail::read_le(bin, (off + static_cast<std::size_t>(k)) * 8);
        b.arrays.push_back(std::move(a));
    }
    return b;
}

// ---------------------------------------------------------------------------
// Domain objects
// ---------------------------------------------------------------------------

inline void save_measure(const std::filesystem::path& stem, const MeasureEstimate& m) {
    Json meta{{"dim", m.grid.dim},
              {"N", m.grid.N},
              {"backend", std::string(to_string(m.backend))},
              {"eps", m.eps},
              {"closed_classes", m.closed_classes}};
    std::vector<NamedArray> arrays{{"weights", detail::column(m.weights)}, {"se", detail::column(m.se)}};
    if (m.path_weights.size() > 0) arrays.push_back({"path_weights", m.path_weights});
    write_bundle(stem, "measure", meta, arrays);
}

inline MeasureEstimate load_measure(const std::filesystem::path& stem) {
    const Bundle b = read_bundle(stem);
    if (b.kind != "measure") throw Error(ErrorCode::Io, stem.string() + ": not a measure bundle");
    MeasureEstimate m;
    m.grid = TorusGrid{b.meta.at("dim").get<int>(), b.meta.at("N").get<int>()};
    m.backend = b.meta.at("backend").get<std::string>() == "occupation-mc" ? MeasureBackend::OccupationMc
                                                                           : MeasureBackend::StationaryGrid;
    m.eps = b.meta.at("eps").get<double>();
    m.closed_classes = b.meta.at("closed_classes").get<std::size_t>();
    m.weights = detail::to_vector(b.array("weights"));
    m.se = detail::to_vector(b.array("se"));
    for (const auto& a : b.arrays)
        if (a.name == "path_weights") m.path_weights = a.data;
    return m;
}

inline void save_corrector(const std::filesystem::path& stem, const CorrectorField& c) {
    Json meta{{"dim", c.dim},
              {"N", c.grid.N},
              {"backend", std::string(to_string(c.backend))},
              {"residual_norm", c.residual_norm},
              {"solve_residual", c.solve_residual},
              {"centering_defect", c.centering_defect},
              {"t_max", c.t_max}};
    std::vector<NamedArray> arrays{{"bhat", c.bhat}, {"dbhat", c.dbhat}};
    if (c.se.size() > 0) arrays.push_back({"se", c.se});
    write_bundle(stem, "corrector", meta, arrays);
}

inline CorrectorField load_corrector(const std::filesystem::path& stem) {
    const Bundle b = read_bundle(stem);
    if (b.kind != "corrector") throw Error(ErrorCode::Io, stem.string() + ": not a corrector bundle");
    CorrectorField c;
    c.dim = b.meta.at("dim").get<int>();
    c.grid = TorusGrid{c.dim, b.meta.at("N").get<int>()};
    c.backend = b.meta.at("backend").get<std::string>() == "grid" ? CellBackend::Grid : CellBackend::FeynmanKac;
    c.residual_norm = b.meta.at("residual_norm").get<double>();
    c.solve_residual = b.meta.at("solve_residual").get<double>();
    c.centering_defect = b.meta.at("centering_defect").get<std::vector<double>>();
    c.t_max = b.meta.at("t_max").get<double>();
    c.bhat = b.array("bhat");
    c.dbhat = b.array("dbhat");
    for (const auto& a : b.arrays)
        if (a.name == "se") c.se = a.data;
    return c;
}

inline Json to_json(const EffectiveModel& e) {
    Json j{{"A", detail::mat_json(e.A)},
           {"C", detail::vec_json(e.C)},
           {"eigenvalues", detail::vec_json(e.eigenvalues)},
           {"spd", e.spd},
           {"spd_tol", e.spd_tol},
           {"measure_backend", e.measure_backend},
           {"cell_backend", e.cell_backend},
           {"warnings", e.warnings},
           {"fbar_z_independent", e.fbar.z_independent()},
           {"fbar_mu", e.fbar.mu()}};
    if (e.A_se.size() > 0) j["A_se"] = detail::mat_json(e.A_se);
    return j;
}

inline Json to_json(const ValidationReport& r) {
    Json checks = Json::array();
    for (const auto& c : r.checks)
        checks.push_back({{"name", c.name},
                          {"pass", c.pass},
                          {"residual", c.residual},
                          {"tolerance", c.tolerance},
                          {"note", c.note},
                          {"informational", c.informational}});
    return Json{{"overall", r.overall()}, {"checks", checks}};
}

inline Json to_json(const ValueEstimate& v) {
    Json pts = Json::array();
    for (const auto& p : v.points) pts.push_back(detail::vec_json(p));
    return Json{{"points", pts},
                {"values", v.values},
                {"se", v.se},
                {"iterations_used", v.iterations_used},
                {"contraction_log", v.contraction_log},
                {"contraction_monotone", v.contraction_monotone},
                {"noise_floor", v.noise_floor},
                {"censored_fraction", v.censored_fraction},
                {"n_paths", v.n_paths}};
}

inline ValueEstimate value_from_json(const Json& j) {
    ValueEstimate v;
    for (const auto& p : j.at("points")) v.points.push_back(detail::json_vec(p));
    v.values = j.at("values").get<std::vector<double>>();
    v.se = j.at("se").get<std::vector<double>>();
    v.iterations_used = j.at("iterations_used").get<int>();
    v.contraction_log = j.at("contraction_log").get<std::vector<double>>();
    v.contraction_monotone = j.at("contraction_monotone").get<bool>();
    v.noise_floor = j.at("noise_floor").get<double>();
    v.censored_fraction = j.at("censored_fraction").get<double>();
    v.n_paths = j.at("n_paths").get<std::size_t>();
    return v;
}

// ---------------------------------------------------------------------------
// CSV with metadata sidecar
// ---------------------------------------------------------------------------

/// Writes `path` and `path.meta.json`; the sidecar always carries the tool
/// version and format version in addition to `meta`.
inline void write_csv_with_meta(const std::filesystem::path& path, const std::string& csv, Json meta) {
    atomic_write(path, csv);
    meta["tool_version"] = kToolVersion;
    meta["format_version"] = kFormatVersion;
    meta["file"] = path.filename().string();
    write_json(path.string() + ".meta.json", meta);
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace phom
