#pragma once

// File formats: numeric CSV, JSON configuration and reports, SVG
// dendrograms, and atomic file replacement.

#include "hiertest/cluster_tree.hpp"
#include "hiertest/engine.hpp"
#include "hiertest/linalg.hpp"
#include "hiertest/simulation.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#if defined(__unix__) || defined(__APPLE__)
#include <unistd.h>
#endif

namespace hiertest {

using json = nlohmann::json;

/// Malformed input: unreadable file, bad CSV cell, bad JSON, invalid field.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Inputs that parse but do not fit together (row counts, leaf counts).
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- files

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes to a sibling temporary file and renames it over `path`, so the
/// destination is either the old file, absent, or the complete new content.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content)
{
    namespace fs = std::filesystem;
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    long pid = 0;
#if defined(__unix__) || defined(__APPLE__)
    pid = static_cast<long>(::getpid());
#endif
    const fs::path tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(pid));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            throw std::runtime_error("write failed for '" + path.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw std::runtime_error("cannot replace '" + path.string() + "': " + ec.message());
    }
}

// ---------------------------------------------------------------- CSV

struct CsvTable {
    std::vector<std::string> header; // empty when the file has none
    Matrix values;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// Splits one record; double quotes may wrap a cell ("" is a literal quote).
inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no)
{
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell += c;
            }
        } else if (c == '"' && trim(cell).empty()) {
            quoted = was_quoted = true;
            cell.clear();
        } else if (c == ',') {
            cells.emplace_back(was_quoted ? cell : std::string(trim(cell)));
            cell.clear();
            was_quoted = false;
        } else {
            cell += c;
        }
    }
    if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quoted cell");
    cells.emplace_back(was_quoted ? cell : std::string(trim(cell)));
    return cells;
}

inline bool parse_double(std::string_view s, double& out)
{
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

} // namespace detail

/// Comma-separated numbers, one record per line. The first line is a header
/// when any of its cells is not a number. Blank lines are skipped.
inline CsvTable parse_csv_text(std::string_view text, const std::string& source = "input")
{
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::size_t line_no = 0, start = 0;
    if (text.substr(0, 3) == "\xEF\xBB\xBF") start = 3;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        const std::string_view line = text.substr(start, end - start);
        if (!detail::trim(line).empty()) rows.emplace_back(line_no, detail::split_csv_line(line, line_no));
        start = end + 1;
    }
    if (rows.empty()) throw ParseError(source + ": empty file");

    CsvTable table;
    std::size_t first = 0;
    {
        double v = 0.0;
        for (const auto& cell : rows[0].second)
            if (!detail::parse_double(cell, v)) {
                table.header = rows[0].second;
                first = 1;
                break;
            }
    }
    if (first == rows.size()) throw ParseError(source + ": header but no data rows");
    const std::size_t cols = rows[first].second.size();
    if (!table.header.empty() && table.header.size() != cols)
        throw ParseError(source + ": line " + std::to_string(rows[first].first) + " has " + std::to_string(cols) +
                         " fields, header has " + std::to_string(table.header.size()));

    table.values.resize(static_cast<Eigen::Index>(rows.size() - first), static_cast<Eigen::Index>(cols));
    for (std::size_t r = first; r < rows.size(); ++r) {
        const auto& [no, cells] = rows[r];
        if (cells.size() != cols)
            throw ParseError(source + ": ragged row at line " + std::to_string(no) + " (" + std::to_string(cells.size()) +
                             " fields, expected " + std::to_string(cols) + ")");
        for (std::size_t c = 0; c < cols; ++c) {
            double v = 0.0;
            if (!detail::parse_double(cells[c], v))
                throw ParseError(source + ": line " + std::to_string(no) + ", field " + std::to_string(c + 1) +
                                 ": not a number: '" + cells[c] + "'");
            if (!std::isfinite(v))
                throw ParseError(source + ": line " + std::to_string(no) + ", field " + std::to_string(c + 1) + ": not finite");
            table.values(static_cast<Eigen::Index>(r - first), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return table;
}

inline Matrix parse_matrix_csv(const std::filesystem::path& path)
{
    return parse_csv_text(read_file(path), path.string()).values;
}

/// A response vector: a single column (n x 1) or a single row (1 x n).
inline Vector parse_vector_csv(const std::filesystem::path& path)
{
    const Matrix m = parse_matrix_csv(path);
    if (m.cols() == 1) return m.col(0);
    if (m.rows() == 1) return m.row(0).transpose();
    throw ParseError(path.string() + ": expected a single column or a single row, got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
}

inline std::string format_double(double v, int digits = 17)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline std::string matrix_to_csv(const Matrix& m, const std::vector<std::string>& header = {})
{
    std::string out;
    for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
    if (!header.empty()) out += '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_double(m(i, j));
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------- JSON config

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) throw ParseError(where + ": unknown field '" + key + "'");
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParseError(where + ": field '" + std::string(key) + "' has the wrong type");
    }
}

// Non-negative integer that must fit T.
template <typename T>
void read_count(const json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ParseError(where + ": field '" + std::string(key) + "' must be a non-negative integer");
    out = static_cast<T>(v.get<unsigned long long>());
}

} // namespace detail

inline EngineConfig engine_config_from_json(const json& j, const std::string& where = "engine")
{
    detail::reject_unknown(j,
                           {"B", "gamma_min", "gamma_step", "alpha", "shaffer", "mode", "seed", "cv_folds", "cv_rule",
                            "cv_grid_ratio", "cv_max_deviance_ratio", "center_per_split", "threads"},
                           where);
    EngineConfig c;
    detail::read_count(j, "B", c.B, where);
    detail::read_field(j, "gamma_min", c.gamma_min, where);
    detail::read_field(j, "gamma_step", c.gamma_step, where);
    detail::read_field(j, "alpha", c.alpha, where);
    detail::read_field(j, "shaffer", c.shaffer, where);
    detail::read_count(j, "seed", c.seed, where);
    detail::read_count(j, "cv_folds", c.cv_folds, where);
    detail::read_field(j, "cv_grid_ratio", c.cv_grid_ratio, where);
    detail::read_field(j, "cv_max_deviance_ratio", c.cv_max_deviance_ratio, where);
    detail::read_field(j, "center_per_split", c.center_per_split, where);
    detail::read_count(j, "threads", c.threads, where);
    if (j.contains("mode")) {
        std::string m;
        detail::read_field(j, "mode", m, where);
        try {
            c.mode = parse_adjust_mode(m);
        } catch (const std::invalid_argument& e) {
            throw ParseError(where + ": field 'mode': " + e.what());
        }
    }
    if (j.contains("cv_rule")) {
        std::string r;
        detail::read_field(j, "cv_rule", r, where);
        if (r == "min_error")
            c.cv_rule = CvRule::min_error;
        else if (r == "one_se")
            c.cv_rule = CvRule::one_se;
        else
            throw ParseError(where + ": field 'cv_rule' must be min_error or one_se");
    }
    try {
        validate(c);
    } catch (const std::invalid_argument& e) {
        throw ParseError(where + ": " + e.what());
    }
    return c;
}

inline json to_json(const EngineConfig& c)
{
    return {{"B", c.B},
            {"gamma_min", c.gamma_min},
            {"gamma_step", c.gamma_step},
            {"alpha", c.alpha},
            {"shaffer", c.shaffer},
            {"mode", to_string(c.mode)},
            {"seed", c.seed},
            {"cv_folds", c.cv_folds},
            {"cv_rule", c.cv_rule == CvRule::min_error ? "min_error" : "one_se"},
            {"cv_grid_ratio", c.cv_grid_ratio},
            {"cv_max_deviance_ratio", c.cv_max_deviance_ratio},
            {"center_per_split", c.center_per_split},
            {"threads", c.threads}};
}

/// Scenario file. `external_matrix` is a CSV path resolved against `base_dir`.
inline ScenarioSpec scenario_from_json(const json& j, const std::filesystem::path& base_dir = {})
{
    const std::string where = "scenario";
    detail::reject_unknown(j,
                           {"design", "n", "p", "rho", "s0", "snr", "n_runs", "engine", "vary_beta", "seed",
                            "external_matrix", "compare_single", "compare_bottom_up", "threads"},
                           where);
    ScenarioSpec s;
    if (j.contains("design")) {
        std::string d;
        detail::read_field(j, "design", d, where);
        try {
            s.design = parse_design(d);
        } catch (const std::invalid_argument& e) {
            throw ParseError(where + ": field 'design': " + e.what());
        }
    }
    s.rho = default_rho(s.design);
    const bool semi_real = s.design == Design::semi_real_normal || s.design == Design::semi_real_blocks;
    if (semi_real) s.n = 0;
    detail::read_count(j, "n", s.n, where);
    detail::read_count(j, "p", s.p, where);
    detail::read_field(j, "rho", s.rho, where);
    detail::read_count(j, "s0", s.s0, where);
    detail::read_field(j, "snr", s.snr, where);
    detail::read_count(j, "n_runs", s.n_runs, where);
    detail::read_field(j, "vary_beta", s.vary_beta, where);
    detail::read_count(j, "seed", s.seed, where);
    detail::read_field(j, "compare_single", s.compare_single, where);
    detail::read_field(j, "compare_bottom_up", s.compare_bottom_up, where);
    detail::read_count(j, "threads", s.threads, where);
    if (j.contains("engine")) s.engine = engine_config_from_json(j.at("engine"), "scenario.engine");
    if (j.contains("external_matrix")) {
        std::string path;
        detail::read_field(j, "external_matrix", path, where);
        std::filesystem::path full(path);
        if (full.is_relative() && !base_dir.empty()) full = base_dir / full;
        s.external_matrix = parse_matrix_csv(full);
    }
    try {
        validate(s);
    } catch (const std::invalid_argument& e) {
        throw ParseError(e.what());
    }
    return s;
}

inline json parse_json_text(const std::string& text, const std::string& source)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(source + ": " + e.what());
    }
}

inline json to_json(const ScenarioSpec& s)
{
    json j = {{"design", to_string(s.design)}, {"n", s.n},       {"p", s.p},
              {"rho", s.rho},                  {"s0", s.s0},     {"snr", s.snr},
              {"n_runs", s.n_runs},            {"vary_beta", s.vary_beta},
              {"seed", s.seed},                {"compare_single", s.compare_single},
              {"compare_bottom_up", s.compare_bottom_up},        {"engine", to_json(s.engine)}};
    if (s.external_matrix) j["external_matrix_shape"] = {s.external_matrix->rows(), s.external_matrix->cols()};
    return j;
}

// ---------------------------------------------------------------- reports

inline json to_json(const MetricsReport& r)
{
    json buckets = json::object();
    for (std::size_t b = 0; b < kCardinalityBuckets.size(); ++b) buckets[kCardinalityBuckets[b]] = r.mtd_by_cardinality[b];
    json per_run = {{"perf1", json::array()},    {"perf2", json::array()},     {"mtd_total", json::array()},
                    {"fwer", json::array()},     {"tpr", json::array()},       {"fpr", json::array()},
                    {"screening_failures", json::array()}};
    for (const auto& m : r.runs) {
        per_run["perf1"].push_back(m.perf1);
        per_run["perf2"].push_back(m.perf2);
        per_run["mtd_total"].push_back(m.mtd_total);
        per_run["fwer"].push_back(m.fwer_event);
        per_run["tpr"].push_back(m.tpr);
        per_run["fpr"].push_back(m.fpr);
        per_run["screening_failures"].push_back(m.screening_failures);
    }
    return {{"method", r.method},
            {"fwer_count", r.fwer_count},
            {"n_runs", r.n_runs},
            {"perf1_mean", r.perf1_mean},
            {"perf2_mean", r.perf2_mean},
            {"mtd_total_mean", r.mtd_total_mean},
            {"mtd_by_cardinality", buckets},
            {"tpr", r.tpr},
            {"fpr", r.fpr},
            {"screening_failure_rate", r.screening_failure_rate},
            {"per_run", per_run}};
}

inline json to_json(const ScenarioReport& r)
{
    json j = {{"hierarchical", to_json(r.hierarchical)}, {"engine_warnings", r.engine_warnings}};
    if (r.single_variable) j["single_variable"] = to_json(*r.single_variable);
    if (r.bottom_up) j["bottom_up"] = to_json(*r.bottom_up);
    return j;
}

/// One line per (method, run).
inline std::string runs_to_csv(const ScenarioReport& r)
{
    std::string out = "method,run,perf1,perf2,mtd_1,mtd_2,mtd_3_10,mtd_11_20,mtd_gt20,mtd_total,fwer,"
                      "screening_failures,tpr,fpr,hierarchy_violations\n";
    auto add = [&](const MetricsReport& m) {
        for (std::size_t k = 0; k < m.runs.size(); ++k) {
            const auto& run = m.runs[k];
            out += m.method + "," + std::to_string(k) + "," + format_double(run.perf1, 6) + "," + format_double(run.perf2, 6);
            for (auto c : run.mtd_by_cardinality) out += "," + std::to_string(c);
            out += "," + std::to_string(run.mtd_total) + "," + (run.fwer_event ? "1" : "0") + "," +
                   std::to_string(run.screening_failures) + "," + format_double(run.tpr, 6) + "," +
                   format_double(run.fpr, 6) + "," + std::to_string(run.hierarchy_violations) + "\n";
        }
    };
    add(r.hierarchical);
    if (r.single_variable) add(*r.single_variable);
    if (r.bottom_up) add(*r.bottom_up);
    return out;
}

/// Per-cluster records. Variables are reported 1-based, matching Newick leaf labels.
inline json result_records(const HierTestResult& result, double alpha)
{
    const ClusterTree& tree = *result.tree;
    const Detections det = significant_clusters(result, alpha);
    std::vector<bool> minimal(tree.size(), false);
    for (auto c : det.minimal) minimal[c] = true;
    json arr = json::array();
    for (NodeId c : tree.preorder()) {
        const auto& node = tree.nodes()[c];
        json vars = json::array();
        for (auto v : node.variables) vars.push_back(v + 1);
        arr.push_back({{"id", c},
                       {"parent", node.parent ? json(*node.parent) : json(nullptr)},
                       {"height", node.height},
                       {"size", node.variables.size()},
                       {"variables", vars},
                       {"p_c", result.p_c[c]},
                       {"p_h", result.p_h[c]},
                       {"rejected", result.p_h[c] <= alpha},
                       {"minimal", static_cast<bool>(minimal[c])}});
    }
    return arr;
}

inline std::string significant_clusters_csv(const HierTestResult& result, double alpha)
{
    const ClusterTree& tree = *result.tree;
    const Detections det = significant_clusters(result, alpha);
    std::vector<bool> minimal(tree.size(), false);
    for (auto c : det.minimal) minimal[c] = true;
    std::string out = "cluster,size,p_h,minimal,variables\n";
    for (NodeId c : det.rejected) {
        const auto& v = tree.nodes()[c].variables;
        std::string vars;
        for (std::size_t k = 0; k < v.size(); ++k) vars += (k ? " " : "") + std::to_string(v[k] + 1);
        out += std::to_string(c) + "," + std::to_string(v.size()) + "," + format_double(result.p_h[c], 6) + "," +
               (minimal[c] ? "1" : "0") + "," + vars + "\n";
    }
    return out;
}

// ---------------------------------------------------------------- SVG

/// Dendrogram with leaves equally spaced in tree order and node heights on
/// the vertical axis. Nodes with p_h <= alpha are drawn solid black and
/// labeled with p_h; the rest are thin and grey. Without p-values every
/// edge is drawn grey.
inline std::string dendrogram_svg(const ClusterTree& tree, std::span<const double> p_h = {}, double alpha = 0.05)
{
    const double width = 40.0 + 18.0 * static_cast<double>(tree.num_variables()), height = 420.0;
    const double left = 30.0, top = 30.0, bottom = 360.0;
    const auto leaves = tree.leaf_order();
    std::vector<double> xpos(tree.size(), 0.0);
    for (std::size_t k = 0; k < leaves.size(); ++k) xpos[tree.leaf_of(leaves[k])] = left + 18.0 * static_cast<double>(k) + 9.0;

    double max_height = tree.nodes()[tree.root()].height;
    if (!(max_height > 0.0)) max_height = 1.0;
    auto ypos = [&](double h) { return bottom - (bottom - top) * h / max_height; };
    auto rejected = [&](NodeId c) { return !p_h.empty() && p_h[c] <= alpha; };

    const auto& order = tree.preorder();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& n = tree.nodes()[*it];
        if (n.children.empty()) continue;
        double sum = 0.0;
        for (auto ch : n.children) sum += xpos[ch];
        xpos[*it] = sum / static_cast<double>(n.children.size());
    }

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"9\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    auto line = [&](double x1, double y1, double x2, double y2, bool solid) {
        svg << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2 << "\" stroke=\""
            << (solid ? "black" : "#aaaaaa") << "\" stroke-width=\"" << (solid ? 2 : 1) << "\"/>\n";
    };
    for (NodeId c : order) {
        const auto& n = tree.nodes()[c];
        const double y = ypos(n.height);
        if (!n.children.empty()) {
            double lo = xpos[n.children.front()], hi = lo;
            for (auto ch : n.children) {
                lo = std::min(lo, xpos[ch]);
                hi = std::max(hi, xpos[ch]);
                line(xpos[ch], ypos(tree.nodes()[ch].height), xpos[ch], y, rejected(ch));
            }
            line(lo, y, hi, y, rejected(c));
        } else {
            svg << "<text x=\"" << xpos[c] << "\" y=\"" << bottom + 14 << "\" text-anchor=\"middle\">" << n.variables.front() + 1
                << "</text>\n";
        }
        if (rejected(c))
            svg << "<text x=\"" << xpos[c] + 3 << "\" y=\"" << y - 3 << "\" fill=\"black\">" << format_double(p_h[c], 3)
                << "</text>\n";
    }
    line(xpos[tree.root()], ypos(max_height), xpos[tree.root()], top - 10.0, rejected(tree.root()));
    svg << "</svg>\n";
    return svg.str();
}

} // namespace hiertest
