#pragma once

// Monte Carlo harness: synthetic and semi-real designs, SNR calibration,
// and the detection metrics (FWER, Performance 1/2, minimal true detections
// by cardinality, TPR/FPR, screening failure rate).

#include "hiertest/cluster_tree.hpp"
#include "hiertest/engine.hpp"
#include "hiertest/linalg.hpp"
#include "hiertest/parallel.hpp"
#include "hiertest/standardize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hiertest {

enum class Design { equi_corr, small_blocks, large_blocks, semi_real_normal, semi_real_blocks };

inline const char* to_string(Design d)
{
    switch (d) {
    case Design::equi_corr: return "equi_corr";
    case Design::small_blocks: return "small_blocks";
    case Design::large_blocks: return "large_blocks";
    case Design::semi_real_normal: return "semi_real_normal";
    case Design::semi_real_blocks: return "semi_real_blocks";
    }
    return "?";
}

inline Design parse_design(const std::string& s)
{
    for (auto d : {Design::equi_corr, Design::small_blocks, Design::large_blocks, Design::semi_real_normal,
                   Design::semi_real_blocks})
        if (s == to_string(d)) return d;
    throw std::invalid_argument("unknown design '" + s + "'");
}

/// Correlation used when a scenario does not set rho.
inline double default_rho(Design d) { return d == Design::equi_corr ? 0.3 : 0.9; }

struct ScenarioSpec {
    Design design = Design::equi_corr;
    std::size_t n = 100;
    std::size_t p = 200;
    double rho = 0.3;
    std::size_t s0 = 10;
    double snr = 8.0;
    std::size_t n_runs = 100;
    EngineConfig engine;
    bool vary_beta = false;
    std::uint64_t seed = 1;
    /// Semi-real designs only: the source design matrix (rows = observations).
    std::optional<Matrix> external_matrix;
    /// Also run single-variable testing (flat tree, no Shaffer) on the same splits.
    bool compare_single = true;
    /// Also run the bottom-up adjustment on the same splits.
    bool compare_bottom_up = false;
    /// Workers over runs; 0 = hardware concurrency.
    unsigned threads = 1;
};

inline void validate(const ScenarioSpec& s)
{
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("scenario field '" + field + "': " + why);
    };
    const bool semi_real = s.design == Design::semi_real_normal || s.design == Design::semi_real_blocks;
    if (s.p < 2) fail("p", "must be at least 2");
    if (s.s0 > s.p) fail("s0", "must not exceed p");
    if (!(s.rho >= 0.0 && s.rho < 1.0)) fail("rho", "must lie in [0, 1)");
    if (!(s.snr > 0.0) || !std::isfinite(s.snr)) fail("snr", "must be positive");
    if (s.n_runs < 1) fail("n_runs", "must be at least 1");
    if (!semi_real && s.n < 4) fail("n", "must be at least 4");
    if (s.design == Design::small_blocks && 2 * s.s0 > s.p) fail("s0", "small_blocks needs 2*s0 <= p");
    if (s.design == Design::large_blocks || s.design == Design::semi_real_blocks) {
        if (s.p % 10 != 0) fail("p", "must be divisible by 10 for block designs (10 blocks of p/10)");
    }
    if (s.design == Design::large_blocks && s.s0 > 10) fail("s0", "large_blocks places at most one active variable per block");
    if (s.design == Design::semi_real_blocks && s.s0 > s.p / 10) fail("s0", "semi_real_blocks places actives on block leaders only");
    if (semi_real) {
        if (!s.external_matrix) fail("external_matrix", "required for semi-real designs");
        if (static_cast<std::size_t>(s.external_matrix->cols()) < s.p) fail("p", "exceeds the columns of the external matrix");
        if (s.external_matrix->rows() < 4) fail("external_matrix", "needs at least 4 rows");
        if (s.n != 0 && s.n != static_cast<std::size_t>(s.external_matrix->rows()))
            fail("n", "must be 0 or equal the row count of the external matrix");
    } else if (s.external_matrix) {
        fail("external_matrix", "only used by semi-real designs");
    }
    try {
        validate(s.engine);
    } catch (const std::invalid_argument& e) {
        fail("engine", e.what());
    }
}

struct GroundTruth {
    Vector beta0;
    IndexSet s0_set;
    double sigma = 1.0;
};

namespace detail {

inline std::vector<std::size_t> sample_without_replacement(std::size_t from, std::size_t count, std::mt19937_64& rng)
{
    std::vector<std::size_t> all(from);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(count);
    std::sort(all.begin(), all.end());
    return all;
}

// Greedy block construction: a random leader plus the nine remaining columns
// most correlated with it in absolute value, repeated until p columns.
inline std::vector<std::size_t> correlated_blocks(const Matrix& source, std::size_t p, std::mt19937_64& rng)
{
    const auto total = static_cast<std::size_t>(source.cols());
    Matrix z = source;
    standardize_columns(z);
    std::vector<bool> used(total, false);
    std::vector<std::size_t> order;
    while (order.size() < p) {
        std::vector<std::size_t> remaining;
        for (std::size_t j = 0; j < total; ++j)
            if (!used[j]) remaining.push_back(j);
        const std::size_t leader = remaining[std::uniform_int_distribution<std::size_t>(0, remaining.size() - 1)(rng)];
        used[leader] = true;
        order.push_back(leader);
        std::vector<std::pair<double, std::size_t>> scored;
        for (auto j : remaining)
            if (j != leader) scored.emplace_back(-std::fabs(z.col(static_cast<Eigen::Index>(j)).dot(z.col(static_cast<Eigen::Index>(leader)))), j);
        std::sort(scored.begin(), scored.end());
        for (std::size_t k = 0; k < 9 && k < scored.size() && order.size() < p; ++k) {
            used[scored[k].second] = true;
            order.push_back(scored[k].second);
        }
    }
    return order;
}

} // namespace detail

/// Places the active set and draws +-1 coefficients for the design.
inline GroundTruth draw_truth(const ScenarioSpec& spec, std::mt19937_64& rng)
{
    GroundTruth t;
    t.beta0 = Vector::Zero(static_cast<Eigen::Index>(spec.p));
    const std::size_t s0 = spec.s0;
    switch (spec.design) {
    case Design::equi_corr:
    case Design::semi_real_normal:
        t.s0_set = detail::sample_without_replacement(spec.p, s0, rng);
        break;
    case Design::small_blocks:
        for (std::size_t k = 0; k < s0; ++k) t.s0_set.push_back(2 * k + (rng() & 1ULL));
        break;
    case Design::large_blocks: {
        const std::size_t block = spec.p / 10;
        for (auto b : detail::sample_without_replacement(10, s0, rng))
            t.s0_set.push_back(b * block + std::uniform_int_distribution<std::size_t>(0, block - 1)(rng));
        break;
    }
    case Design::semi_real_blocks:
        for (auto b : detail::sample_without_replacement(spec.p / 10, s0, rng)) t.s0_set.push_back(10 * b);
        break;
    }
    std::sort(t.s0_set.begin(), t.s0_set.end());
    for (auto j : t.s0_set) t.beta0(static_cast<Eigen::Index>(j)) = (rng() & 1ULL) ? 1.0 : -1.0;
    return t;
}

/// Noise level giving the requested SNR = sqrt(b' X' X b / (n sigma^2)).
inline double calibrate_sigma(const Matrix& x, const Vector& beta0, double snr)
{
    if (!(snr > 0.0)) throw std::invalid_argument("calibrate_sigma: snr must be positive");
    if (beta0.size() != x.cols()) throw std::invalid_argument("calibrate_sigma: beta0 length must equal column count");
    const double signal = (x * beta0).squaredNorm() / static_cast<double>(x.rows());
    if (!(signal > 0.0)) throw std::domain_error("calibrate_sigma: zero signal");
    return std::sqrt(signal) / snr;
}

inline double signal_to_noise(const Matrix& x, const Vector& beta0, double sigma)
{
    return std::sqrt((x * beta0).squaredNorm() / (static_cast<double>(x.rows()) * sigma * sigma));
}

/// Samples the design matrix (column-standardized) and a ground truth.
/// With s0 = 0 the truth is the global null and sigma is 1.
inline std::pair<Matrix, GroundTruth> generate_design(const ScenarioSpec& spec, std::uint64_t seed)
{
    validate(spec);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const auto p = static_cast<Eigen::Index>(spec.p);
    Matrix x;

    switch (spec.design) {
    case Design::equi_corr: {
        const auto n = static_cast<Eigen::Index>(spec.n);
        x.resize(n, p);
        const double shared = std::sqrt(spec.rho), own = std::sqrt(1.0 - spec.rho);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double common = normal(rng);
            for (Eigen::Index j = 0; j < p; ++j) x(i, j) = shared * common + own * normal(rng);
        }
        break;
    }
    case Design::small_blocks: {
        const auto n = static_cast<Eigen::Index>(spec.n);
        x.resize(n, p);
        const double own = std::sqrt(1.0 - spec.rho * spec.rho);
        const auto paired = static_cast<Eigen::Index>(2 * spec.s0);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < p; ++j) x(i, j) = normal(rng);
            for (Eigen::Index j = 0; j + 1 < paired; j += 2) x(i, j + 1) = spec.rho * x(i, j) + own * x(i, j + 1);
        }
        break;
    }
    case Design::large_blocks: {
        const auto n = static_cast<Eigen::Index>(spec.n);
        x.resize(n, p);
        const auto block = p / 10;
        const double shared = std::sqrt(spec.rho), own = std::sqrt(1.0 - spec.rho);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index b = 0; b < 10; ++b) {
                const double common = normal(rng);
                for (Eigen::Index j = b * block; j < (b + 1) * block; ++j) x(i, j) = shared * common + own * normal(rng);
            }
        break;
    }
    case Design::semi_real_normal: {
        const auto cols = detail::sample_without_replacement(static_cast<std::size_t>(spec.external_matrix->cols()), spec.p, rng);
        x = detail::select_columns(*spec.external_matrix, cols);
        break;
    }
    case Design::semi_real_blocks: {
        const auto cols = detail::correlated_blocks(*spec.external_matrix, spec.p, rng);
        x = detail::select_columns(*spec.external_matrix, cols);
        break;
    }
    }
    standardize_columns(x);

    GroundTruth truth = draw_truth(spec, rng);
    truth.sigma = spec.s0 == 0 ? 1.0 : calibrate_sigma(x, truth.beta0, spec.snr);
    return {std::move(x), std::move(truth)};
}

/// Minimal detection summary used by the performance measures.
struct LabeledDetection {
    std::size_t size = 0;   // |C|
    bool is_true = false;   // C meets the active set
};

/// (1/s0) * sum over true minimal detections of 1/|C|.
inline double performance1(std::span<const LabeledDetection> mtds, std::size_t s0)
{
    if (s0 == 0) return 0.0;
    double sum = 0.0;
    for (const auto& d : mtds)
        if (d.is_true) sum += 1.0 / static_cast<double>(d.size);
    return sum / static_cast<double>(s0);
}

/// (1/s0) * sum over true minimal detections with |C| <= 20 of (1/|C| + 1)/2.
inline double performance2(std::span<const LabeledDetection> mtds, std::size_t s0)
{
    if (s0 == 0) return 0.0;
    double sum = 0.0;
    for (const auto& d : mtds)
        if (d.is_true && d.size <= 20) sum += 0.5 * (1.0 / static_cast<double>(d.size) + 1.0);
    return sum / static_cast<double>(s0);
}

/// TPR = true minimal detections / s0, FPR = false minimal detections / (p - s0).
inline std::pair<double, double> tpr_fpr(std::span<const LabeledDetection> mtds, std::size_t s0, std::size_t p)
{
    double tp = 0.0, fp = 0.0;
    for (const auto& d : mtds) (d.is_true ? tp : fp) += 1.0;
    return {s0 == 0 ? 0.0 : tp / static_cast<double>(s0), p == s0 ? 0.0 : fp / static_cast<double>(p - s0)};
}

/// Cardinality buckets {1}, {2}, [3, 10], [11, 20], > 20.
inline constexpr std::array<const char*, 5> kCardinalityBuckets{"1", "2", "3-10", "11-20", ">20"};

inline std::size_t cardinality_bucket(std::size_t size)
{
    if (size <= 1) return 0;
    if (size == 2) return 1;
    if (size <= 10) return 2;
    if (size <= 20) return 3;
    return 4;
}

struct RunMetrics {
    double perf1 = 0.0;
    double perf2 = 0.0;
    std::size_t mtd_total = 0;
    std::array<std::size_t, 5> mtd_by_cardinality{};
    std::size_t false_minimal = 0;
    std::size_t rejected = 0;
    bool fwer_event = false;
    double tpr = 0.0;
    double fpr = 0.0;
    std::size_t screening_failures = 0; // splits with s_hat not containing S0
    std::size_t splits = 0;
    std::size_t hierarchy_violations = 0; // edges with p_h(parent) > p_h(child)
};

struct MetricsReport {
    std::string method;
    std::size_t fwer_count = 0;
    std::size_t n_runs = 0;
    double perf1_mean = 0.0;
    double perf2_mean = 0.0;
    double mtd_total_mean = 0.0;
    std::array<double, 5> mtd_by_cardinality{};
    double tpr = 0.0;
    double fpr = 0.0;
    double screening_failure_rate = 0.0;
    std::vector<RunMetrics> runs;
};

/// Metrics of one analysis result against the truth.
inline RunMetrics evaluate_run(const HierTestResult& result, const IndexSet& s0_set, double alpha)
{
    const ClusterTree& tree = *result.tree;
    RunMetrics m;
    const Detections det = significant_clusters(result, alpha, s0_set);
    m.rejected = det.rejected.size();

    std::vector<bool> active(tree.num_variables(), false);
    for (auto j : s0_set) active[j] = true;
    for (auto c : det.rejected) {
        const auto& v = tree.nodes()[c].variables;
        if (std::none_of(v.begin(), v.end(), [&](std::size_t j) { return active[j]; })) m.fwer_event = true;
    }

    std::vector<LabeledDetection> labeled;
    for (std::size_t k = 0; k < det.minimal.size(); ++k) {
        const std::size_t size = tree.nodes()[det.minimal[k]].variables.size();
        labeled.push_back({size, static_cast<bool>(det.minimal_is_true[k])});
        if (det.minimal_is_true[k]) {
            ++m.mtd_total;
            ++m.mtd_by_cardinality[cardinality_bucket(size)];
        } else {
            ++m.false_minimal;
        }
    }
    m.perf1 = performance1(labeled, s0_set.size());
    m.perf2 = performance2(labeled, s0_set.size());
    std::tie(m.tpr, m.fpr) = tpr_fpr(labeled, s0_set.size(), tree.num_variables());

    for (const auto& s : result.screened) {
        ++m.splits;
        if (!std::includes(s.begin(), s.end(), s0_set.begin(), s0_set.end())) ++m.screening_failures;
    }
    for (std::size_t c = 0; c < tree.size(); ++c) {
        const auto& parent = tree.nodes()[c].parent;
        if (parent && result.p_h[*parent] > result.p_h[c]) ++m.hierarchy_violations;
    }
    return m;
}

inline MetricsReport summarize(std::string method, std::vector<RunMetrics> runs)
{
    MetricsReport r;
    r.method = std::move(method);
    r.n_runs = runs.size();
    std::size_t failures = 0, splits = 0;
    for (const auto& m : runs) {
        r.fwer_count += m.fwer_event ? 1 : 0;
        r.perf1_mean += m.perf1;
        r.perf2_mean += m.perf2;
        r.mtd_total_mean += static_cast<double>(m.mtd_total);
        for (std::size_t b = 0; b < 5; ++b) r.mtd_by_cardinality[b] += static_cast<double>(m.mtd_by_cardinality[b]);
        r.tpr += m.tpr;
        r.fpr += m.fpr;
        failures += m.screening_failures;
        splits += m.splits;
    }
    if (!runs.empty()) {
        const auto k = static_cast<double>(runs.size());
        r.perf1_mean /= k;
        r.perf2_mean /= k;
        r.mtd_total_mean /= k;
        for (auto& v : r.mtd_by_cardinality) v /= k;
        r.tpr /= k;
        r.fpr /= k;
    }
    r.screening_failure_rate = splits ? static_cast<double>(failures) / static_cast<double>(splits) : 0.0;
    r.runs = std::move(runs);
    return r;
}

struct ScenarioReport {
    MetricsReport hierarchical;
    std::optional<MetricsReport> single_variable;
    std::optional<MetricsReport> bottom_up;
    std::size_t engine_warnings = 0;
};

/// Seed of the design matrix and the fixed ground truth.
inline std::uint64_t design_seed(const ScenarioSpec& spec) { return mix_seed(spec.seed, 0xDE51); }

/// Repeats the experiment n_runs times: X stays fixed, the noise (and the
/// coefficient vector when vary_beta) is redrawn every run.
inline ScenarioReport run_scenario(const ScenarioSpec& spec)
{
    validate(spec);
    const auto [x, fixed_truth] = generate_design(spec, design_seed(spec));
    const auto n = static_cast<Eigen::Index>(x.rows());

    std::vector<AnalysisSpec> analyses;
    analyses.push_back({std::make_shared<const ClusterTree>(build_correlation_tree(x)), AdjustMode::top_down,
                        spec.engine.shaffer});
    std::optional<std::size_t> single_at, bottom_at;
    if (spec.compare_single) {
        single_at = analyses.size();
        analyses.push_back({std::make_shared<const ClusterTree>(flat_tree(spec.p)), AdjustMode::top_down, false});
    }
    if (spec.compare_bottom_up) {
        bottom_at = analyses.size();
        analyses.push_back({analyses.front().tree, AdjustMode::bottom_up, false});
    }

    std::vector<std::vector<RunMetrics>> metrics(analyses.size(), std::vector<RunMetrics>(spec.n_runs));
    std::vector<std::size_t> warnings(spec.n_runs, 0);
    parallel_for(spec.n_runs, spec.threads, [&](std::size_t r) {
        std::mt19937_64 rng(mix_seed(spec.seed, 1000 + r));
        GroundTruth truth = fixed_truth;
        if (spec.vary_beta) {
            truth = draw_truth(spec, rng);
            truth.sigma = spec.s0 == 0 ? 1.0 : calibrate_sigma(x, truth.beta0, spec.snr);
        }
        std::normal_distribution<double> normal;
        Vector y = x * truth.beta0;
        for (Eigen::Index i = 0; i < n; ++i) y(i) += truth.sigma * normal(rng);
        center(y);

        EngineConfig config = spec.engine;
        config.seed = mix_seed(spec.engine.seed ^ spec.seed, r);
        config.threads = 1;
        const auto results = run_shared(analyses, x, y, config);
        for (std::size_t a = 0; a < analyses.size(); ++a) {
            metrics[a][r] = evaluate_run(results[a], truth.s0_set, config.alpha);
            warnings[r] += results[a].warnings.size();
        }
    });

    ScenarioReport report{summarize("hierarchical", std::move(metrics[0])), std::nullopt, std::nullopt, 0};
    if (single_at) report.single_variable = summarize("single_variable", std::move(metrics[*single_at]));
    if (bottom_at) report.bottom_up = summarize("bottom_up", std::move(metrics[*bottom_at]));
    report.engine_warnings = std::accumulate(warnings.begin(), warnings.end(), std::size_t{0});
    return report;
}

} // namespace hiertest
