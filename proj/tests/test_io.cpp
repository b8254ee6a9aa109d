#include "hiertest/io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace hiertest;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("hiertest_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

HierTestResult small_result()
{
    std::mt19937_64 rng(1);
    Matrix x = hiertest::testing::random_matrix(40, 6, rng);
    standardize_columns(x);
    Vector y = 3.0 * x.col(2) + hiertest::testing::random_vector(40, rng);
    center(y);
    EngineConfig cfg;
    cfg.B = 10;
    return run(build_correlation_tree(x), x, y, cfg);
}

} // namespace

TEST(Csv, HeaderDetected)
{
    const auto t = parse_csv_text("a,b\n1,2\n3,4");
    EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
    Matrix expected(2, 2);
    expected << 1, 2, 3, 4;
    EXPECT_EQ(t.values, expected);
}

TEST(Csv, NoHeaderQuotesCrlfAndBom)
{
    const auto t = parse_csv_text("\xEF\xBB\xBF" "1,\"2.5\"\r\n\r\n-3e2, 4\r\n");
    EXPECT_TRUE(t.header.empty());
    Matrix expected(2, 2);
    expected << 1, 2.5, -300, 4;
    EXPECT_EQ(t.values, expected);
}

TEST(Csv, RaggedRowNamesLine)
{
    try {
        parse_csv_text("1,2\n3");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}

TEST(Csv, RejectsBadCells)
{
    EXPECT_THROW(parse_csv_text(""), ParseError);
    EXPECT_THROW(parse_csv_text("a,b\n"), ParseError);
    EXPECT_THROW(parse_csv_text("1,2\n3,x\n"), ParseError);
    EXPECT_THROW(parse_csv_text("1,2\n3,nan\n"), ParseError);
    EXPECT_THROW(parse_csv_text("a,b,c\n1,2\n"), ParseError);
}

TEST(Csv, RoundTripAtFullPrecision)
{
    std::mt19937_64 rng(2);
    Matrix m = hiertest::testing::random_matrix(50, 10, rng);
    m(0, 0) = 1e-300;
    m(1, 1) = -123456789.123456789;
    const auto dir = scratch_dir("roundtrip");
    write_file_atomic(dir / "m.csv", matrix_to_csv(m));
    EXPECT_EQ(parse_matrix_csv(dir / "m.csv"), m);
    std::vector<std::string> header;
    for (int j = 0; j < 10; ++j) header.push_back("v" + std::to_string(j));
    const auto t = parse_csv_text(matrix_to_csv(m, header));
    EXPECT_EQ(t.header, header);
    EXPECT_EQ(t.values, m);
}

TEST(Csv, VectorFromColumnOrRow)
{
    const auto dir = scratch_dir("vector");
    write_file_atomic(dir / "col.csv", "y\n1\n2\n3\n");
    write_file_atomic(dir / "row.csv", "1,2,3\n");
    write_file_atomic(dir / "bad.csv", "1,2\n3,4\n");
    Vector expected(3);
    expected << 1, 2, 3;
    EXPECT_EQ(parse_vector_csv(dir / "col.csv"), expected);
    EXPECT_EQ(parse_vector_csv(dir / "row.csv"), expected);
    EXPECT_THROW(parse_vector_csv(dir / "bad.csv"), ParseError);
    EXPECT_THROW(parse_vector_csv(dir / "missing.csv"), ParseError);
}

TEST(AtomicWrite, ReplacesAndLeavesNoTemporaries)
{
    const auto dir = scratch_dir("atomic");
    write_file_atomic(dir / "out.txt", "first");
    write_file_atomic(dir / "out.txt", "second");
    EXPECT_EQ(read_file(dir / "out.txt"), "second");
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
    EXPECT_EQ(files, 1u);
    EXPECT_THROW(write_file_atomic(dir / "no_such_dir" / "x.txt", "x"), std::runtime_error);
}

TEST(EngineConfigJson, RoundTripAndDefaults)
{
    const auto c = engine_config_from_json(json::object());
    EXPECT_EQ(c.B, 50);
    EXPECT_EQ(c.alpha, 0.05);
    EXPECT_TRUE(c.shaffer);
    EngineConfig d;
    d.B = 7;
    d.seed = 123456789012345ULL;
    d.mode = AdjustMode::bottom_up;
    d.cv_rule = CvRule::one_se;
    const auto back = engine_config_from_json(to_json(d));
    EXPECT_EQ(to_json(back), to_json(d));
}

TEST(EngineConfigJson, RejectsUnknownAndInvalidFields)
{
    auto expect_message = [](const json& j, const std::string& needle) {
        try {
            engine_config_from_json(j);
            FAIL() << j.dump();
        } catch (const ParseError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    expect_message({{"alpah", 0.1}}, "alpah");
    expect_message({{"B", -3}}, "'B'");
    expect_message({{"B", "ten"}}, "'B'");
    expect_message({{"alpha", 1.5}}, "alpha");
    expect_message({{"mode", "diagonal"}}, "mode");
    expect_message({{"cv_rule", "best"}}, "cv_rule");
}

TEST(ScenarioJson, ParsesAndValidates)
{
    const json j = {{"design", "large_blocks"}, {"n", 50}, {"p", 40}, {"s0", 4}, {"n_runs", 3},
                    {"engine", {{"B", 5}}}};
    const auto s = scenario_from_json(j);
    EXPECT_EQ(s.design, Design::large_blocks);
    EXPECT_EQ(s.rho, 0.9);
    EXPECT_EQ(s.engine.B, 5);
    EXPECT_EQ(to_json(scenario_from_json(to_json(s))), to_json(s));

    json bad = j;
    bad["p"] = 45;
    try {
        scenario_from_json(bad);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("'p'"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("divisible by 10"), std::string::npos) << e.what();
    }
    EXPECT_THROW(scenario_from_json({{"colour", "red"}}), ParseError);
    EXPECT_THROW(scenario_from_json({{"design", "triangle"}}), ParseError);
    EXPECT_THROW(scenario_from_json({{"engine", {{"B", 0}}}}), ParseError);
}

TEST(ScenarioJson, ExternalMatrixRelativeToBase)
{
    const auto dir = scratch_dir("external");
    std::mt19937_64 rng(3);
    write_file_atomic(dir / "data.csv", matrix_to_csv(hiertest::testing::random_matrix(30, 25, rng)));
    const json j = {{"design", "semi_real_normal"}, {"p", 20}, {"s0", 2}, {"external_matrix", "data.csv"}};
    const auto s = scenario_from_json(j, dir);
    ASSERT_TRUE(s.external_matrix);
    EXPECT_EQ(s.external_matrix->rows(), 30);
    EXPECT_EQ(s.n, 0u);
}

TEST(JsonText, ParseErrorsNameSource)
{
    try {
        parse_json_text("{\"a\": ", "cfg.json");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("cfg.json"), std::string::npos);
    }
}

TEST(Reports, ResultRecordsOnePerNodeAndMonotone)
{
    const auto r = small_result();
    const json rec = result_records(r, 0.05);
    ASSERT_EQ(rec.size(), r.tree->size());
    std::map<std::size_t, double> p_h;
    for (const auto& e : rec) p_h[e["id"].get<std::size_t>()] = e["p_h"].get<double>();
    for (const auto& e : rec) {
        EXPECT_EQ(e["size"].get<std::size_t>(), e["variables"].size());
        EXPECT_EQ(e["rejected"].get<bool>(), e["p_h"].get<double>() <= 0.05);
        if (!e["parent"].is_null()) EXPECT_LE(p_h.at(e["parent"].get<std::size_t>()), e["p_h"].get<double>());
        for (const auto& v : e["variables"]) EXPECT_GE(v.get<std::size_t>(), 1u);
    }
    // Doubles survive a text round trip exactly.
    const json back = json::parse(rec.dump());
    for (std::size_t k = 0; k < rec.size(); ++k) EXPECT_EQ(back[k]["p_h"].get<double>(), rec[k]["p_h"].get<double>());
}

TEST(Reports, SignificantClustersCsv)
{
    const auto r = small_result();
    const std::string csv = significant_clusters_csv(r, 0.05);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "cluster,size,p_h,minimal,variables");
    const auto det = significant_clusters(r, 0.05);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), std::ptrdiff_t(det.rejected.size() + 1));
    ASSERT_FALSE(det.rejected.empty());
}

TEST(Reports, MetricsJsonAndRunsCsv)
{
    ScenarioSpec spec;
    spec.n = 40;
    spec.p = 20;
    spec.s0 = 2;
    spec.n_runs = 2;
    spec.engine.B = 5;
    spec.compare_bottom_up = true;
    const auto report = run_scenario(spec);
    const json j = to_json(report);
    for (const char* key : {"fwer_count", "n_runs", "perf1_mean", "perf2_mean", "mtd_total_mean", "mtd_by_cardinality",
                            "tpr", "fpr", "screening_failure_rate", "per_run"})
        EXPECT_TRUE(j["hierarchical"].contains(key)) << key;
    EXPECT_EQ(j["hierarchical"]["n_runs"], 2);
    EXPECT_EQ(j["hierarchical"]["mtd_by_cardinality"].size(), 5u);
    EXPECT_TRUE(j.contains("single_variable"));
    EXPECT_TRUE(j.contains("bottom_up"));
    const std::string csv = runs_to_csv(report);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Svg, MarksRejectedClusters)
{
    const auto r = small_result();
    const std::string svg = dendrogram_svg(*r.tree, r.p_h, 0.05);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_NE(svg.find("black"), std::string::npos);
    const std::string plain = dendrogram_svg(*r.tree);
    EXPECT_EQ(plain.find("black"), std::string::npos);
}
