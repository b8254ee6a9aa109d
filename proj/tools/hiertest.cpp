// hiertest command-line front end.
//
//   hiertest analyze  --x X.csv --y y.csv [--tree T.nwk] [--out DIR] ...
//   hiertest simulate --config scenario.json [--out DIR] ...
//   hiertest cluster  --x X.csv [--out DIR]
//   hiertest version
//
// Exit status: 0 success, 1 runtime failure, 2 unparsable input or
// configuration, 3 inconsistent dimensions.

#include "hiertest/hiertest.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>

namespace fs = std::filesystem;
using namespace hiertest;

namespace {

struct EngineFlags {
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha;
    std::optional<int> splits;
    bool no_shaffer = false;
    std::optional<std::string> mode;
    std::optional<unsigned> threads;

    void add_to(CLI::App& cmd)
    {
        cmd.add_option("--seed", seed, "Random seed (default: fresh entropy, echoed in the output)");
        cmd.add_option("--alpha", alpha, "Significance level");
        cmd.add_option("--splits", splits, "Number of sample splits B");
        cmd.add_flag("--no-shaffer", no_shaffer, "Disable the Shaffer adjustment");
        cmd.add_option("--mode", mode, "top_down or bottom_up");
        cmd.add_option("--threads", threads, "Worker threads (0 = all cores)");
    }

    // Flags override the configuration; returns the seed in effect.
    std::uint64_t apply(EngineConfig& c, bool config_has_seed) const
    {
        if (alpha) c.alpha = *alpha;
        if (splits) c.B = *splits;
        if (no_shaffer) c.shaffer = false;
        if (mode) {
            try {
                c.mode = parse_adjust_mode(*mode);
            } catch (const std::invalid_argument& e) {
                throw ParseError(std::string("--mode: ") + e.what());
            }
        }
        if (threads) c.threads = *threads;
        if (seed)
            c.seed = *seed;
        else if (!config_has_seed)
            c.seed = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
        try {
            validate(c);
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what());
        }
        return c.seed;
    }
};

Linkage parse_linkage(const std::string& s)
{
    if (s == "complete") return Linkage::complete;
    if (s == "single") return Linkage::single;
    if (s == "average") return Linkage::average;
    throw ParseError("--linkage must be complete, single or average");
}

json load_json_file(const fs::path& path) { return parse_json_text(read_file(path), path.string()); }

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
}

struct AnalyzeArgs {
    std::string x_path, y_path, tree_path, config_path, out_dir = ".", linkage = "complete";
    EngineFlags flags;
};

int analyze(const AnalyzeArgs& a)
{
    EngineConfig config;
    bool config_seed = false;
    std::string x_path = a.x_path, y_path = a.y_path, tree_path = a.tree_path, out_dir = a.out_dir, linkage = a.linkage;
    if (!a.config_path.empty()) {
        const fs::path cfg_path(a.config_path);
        const json cfg = load_json_file(cfg_path);
        detail::reject_unknown(cfg, {"x_path", "y_path", "tree", "output_dir", "linkage", "engine"}, "config");
        const fs::path base = cfg_path.parent_path();
        auto path_field = [&](const char* key, std::string& target) {
            if (!cfg.contains(key) || !target.empty()) return;
            std::string v;
            detail::read_field(cfg, key, v, "config");
            target = (fs::path(v).is_relative() ? base / v : fs::path(v)).string();
        };
        path_field("x_path", x_path);
        path_field("y_path", y_path);
        path_field("tree", tree_path);
        if (cfg.contains("linkage") && a.linkage == "complete") detail::read_field(cfg, "linkage", linkage, "config");
        if (a.out_dir == ".") {
            std::string configured;
            path_field("output_dir", configured);
            if (!configured.empty()) out_dir = configured;
        }
        if (cfg.contains("engine")) {
            config = engine_config_from_json(cfg.at("engine"), "config.engine");
            config_seed = cfg.at("engine").contains("seed");
        }
    }
    if (x_path.empty() || y_path.empty()) throw ParseError("analyze needs --x and --y (or x_path/y_path in --config)");
    a.flags.apply(config, config_seed);

    Matrix x = parse_matrix_csv(x_path);
    Vector y = parse_vector_csv(y_path);
    if (x.rows() != y.size())
        throw DimensionError("X has " + std::to_string(x.rows()) + " rows but y has " + std::to_string(y.size()) + " entries");
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        if ((x.col(j).array() - x.col(j).mean()).abs().maxCoeff() == 0.0)
            throw ParseError("column " + std::to_string(j + 1) + " of X is constant");
    std::shared_ptr<const ClusterTree> tree;
    if (!tree_path.empty()) {
        try {
            tree = std::make_shared<const ClusterTree>(parse_newick(read_file(tree_path)));
        } catch (const NewickError& e) {
            throw ParseError(tree_path + ": " + e.what());
        }
        if (tree->num_variables() != static_cast<std::size_t>(x.cols()))
            throw DimensionError("tree has " + std::to_string(tree->num_variables()) + " leaves but X has " +
                                 std::to_string(x.cols()) + " columns");
    } else {
        tree = std::make_shared<const ClusterTree>(build_correlation_tree(x, parse_linkage(linkage)));
    }
    standardize_columns(x);
    center(y);

    std::cerr << "seed " << config.seed << "\n";
    const HierTestResult result = run(tree, x, y, config);

    const json run_info = {{"version", kVersion},
                           {"seed", config.seed},
                           {"n", x.rows()},
                           {"p", x.cols()},
                           {"config", to_json(config)},
                           {"shaffer_applied", result.shaffer_applied},
                           {"tree_source", tree_path.empty() ? "hclust_" + linkage : tree_path},
                           {"warnings", result.warnings}};
    const fs::path out(out_dir);
    ensure_dir(out);
    write_file_atomic(out / "results.json", result_records(result, config.alpha).dump(2) + "\n");
    write_file_atomic(out / "run.json", run_info.dump(2) + "\n");
    write_file_atomic(out / "tree.nwk", to_newick(*tree));
    write_file_atomic(out / "significant_clusters.csv", significant_clusters_csv(result, config.alpha));
    write_file_atomic(out / "dendrogram.svg", dendrogram_svg(*tree, result.p_h, config.alpha));
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    const auto det = significant_clusters(result, config.alpha);
    std::cout << det.rejected.size() << " clusters rejected at alpha " << config.alpha << ", " << det.minimal.size()
              << " minimal; results in " << out.string() << "\n";
    return 0;
}

int simulate(const std::string& config_path, const std::string& out_dir, const EngineFlags& flags,
             std::optional<std::size_t> runs)
{
    if (config_path.empty()) throw ParseError("simulate needs --config");
    const fs::path cfg_path(config_path);
    const json cfg = load_json_file(cfg_path);
    ScenarioSpec spec = scenario_from_json(cfg, cfg_path.parent_path());
    const bool config_seed = cfg.contains("seed");
    if (runs) spec.n_runs = *runs;
    // --seed sets the scenario seed; the engine seed stays as configured.
    EngineFlags engine_flags = flags;
    engine_flags.seed.reset();
    engine_flags.apply(spec.engine, true);
    if (flags.seed)
        spec.seed = *flags.seed;
    else if (!config_seed)
        spec.seed = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
    if (flags.threads) spec.threads = *flags.threads;
    try {
        validate(spec);
    } catch (const std::invalid_argument& e) {
        throw ParseError(e.what());
    }

    std::cerr << "seed " << spec.seed << "\n";
    const ScenarioReport report = run_scenario(spec);
    json metrics = to_json(report);
    metrics["scenario"] = to_json(spec);
    metrics["version"] = kVersion;

    const fs::path out(out_dir);
    ensure_dir(out);
    write_file_atomic(out / "metrics.json", metrics.dump(2) + "\n");
    write_file_atomic(out / "runs.csv", runs_to_csv(report));
    auto line = [](const MetricsReport& m) {
        std::cout << m.method << ": FWER " << m.fwer_count << "/" << m.n_runs << ", Performance 1 " << m.perf1_mean
                  << ", mean MTDs " << m.mtd_total_mean << ", singleton MTDs " << m.mtd_by_cardinality[0] << "\n";
    };
    line(report.hierarchical);
    if (report.single_variable) line(*report.single_variable);
    if (report.bottom_up) line(*report.bottom_up);
    return 0;
}

int cluster(const std::string& x_path, const std::string& out_dir, const std::string& linkage)
{
    if (x_path.empty()) throw ParseError("cluster needs --x");
    const Matrix x = parse_matrix_csv(x_path);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        if ((x.col(j).array() - x.col(j).mean()).abs().maxCoeff() == 0.0)
            throw ParseError("column " + std::to_string(j + 1) + " of X is constant");
    const ClusterTree tree = build_correlation_tree(x, parse_linkage(linkage));
    const fs::path out(out_dir);
    ensure_dir(out);
    write_file_atomic(out / "tree.nwk", to_newick(tree));
    write_file_atomic(out / "dendrogram.svg", dendrogram_svg(tree));
    std::cout << "tree over " << tree.num_variables() << " variables written to " << out.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Hierarchical testing of variable clusters in high-dimensional linear models"};
    app.require_subcommand(1);

    AnalyzeArgs an;
    auto* analyze_cmd = app.add_subcommand("analyze", "Test all clusters of a hierarchy for association with y");
    analyze_cmd->add_option("--x", an.x_path, "Design matrix CSV (rows = observations)");
    analyze_cmd->add_option("--y", an.y_path, "Response CSV (one column)");
    analyze_cmd->add_option("--tree", an.tree_path, "Newick hierarchy; default: complete-linkage clustering of X");
    analyze_cmd->add_option("--config", an.config_path, "JSON configuration");
    analyze_cmd->add_option("--out", an.out_dir, "Output directory");
    analyze_cmd->add_option("--linkage", an.linkage, "complete, single or average");
    an.flags.add_to(*analyze_cmd);

    std::string sim_config, sim_out = ".";
    std::optional<std::size_t> sim_runs;
    EngineFlags sim_flags;
    auto* simulate_cmd = app.add_subcommand("simulate", "Run a simulation scenario");
    simulate_cmd->add_option("--config", sim_config, "Scenario JSON");
    simulate_cmd->add_option("--out", sim_out, "Output directory");
    simulate_cmd->add_option("--runs", sim_runs, "Override n_runs");
    sim_flags.add_to(*simulate_cmd);

    std::string cl_x, cl_out = ".", cl_linkage = "complete";
    auto* cluster_cmd = app.add_subcommand("cluster", "Build the variable hierarchy only");
    cluster_cmd->add_option("--x", cl_x, "Design matrix CSV");
    cluster_cmd->add_option("--out", cl_out, "Output directory");
    cluster_cmd->add_option("--linkage", cl_linkage, "complete, single or average");

    auto* version_cmd = app.add_subcommand("version", "Print the version");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*analyze_cmd) return analyze(an);
        if (*simulate_cmd) return simulate(sim_config, sim_out, sim_flags, sim_runs);
        if (*cluster_cmd) return cluster(cl_x, cl_out, cl_linkage);
        if (*version_cmd) {
            std::cout << "hiertest " << kVersion << "\n";
            return 0;
        }
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
