#pragma once

// Hierarchical multi sample-splitting: per-split screening and cluster
// p-values, multiplicity adjustment, quantile aggregation over splits,
// elimination of the quantile level and the hierarchical (ancestor max)
// adjustment. A bottom-up variant is available through AdjustMode.

#include "hiertest/cluster_tree.hpp"
#include "hiertest/lasso.hpp"
#include "hiertest/linalg.hpp"
#include "hiertest/parallel.hpp"
#include "hiertest/standardize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hiertest {

enum class AdjustMode { top_down, bottom_up };

inline const char* to_string(AdjustMode m) { return m == AdjustMode::top_down ? "top_down" : "bottom_up"; }

inline AdjustMode parse_adjust_mode(const std::string& s)
{
    if (s == "top_down") return AdjustMode::top_down;
    if (s == "bottom_up") return AdjustMode::bottom_up;
    throw std::invalid_argument("mode must be top_down or bottom_up, got '" + s + "'");
}

struct EngineConfig {
    int B = 50;
    double gamma_min = 0.05;
    double gamma_step = 0.025;
    double alpha = 0.05;
    bool shaffer = true;
    AdjustMode mode = AdjustMode::top_down;
    std::uint64_t seed = 0;
    int cv_folds = 10;
    CvRule cv_rule = CvRule::min_error;
    /// Screening path: lambda_max down to cv_grid_ratio * lambda_max, cut at the
    /// first fit explaining cv_max_deviance_ratio of the in-sample variance.
    double cv_grid_ratio = 0.01;
    double cv_max_deviance_ratio = 0.999;
    /// Fit an intercept in every out-sample F-test instead of relying on global centering.
    bool center_per_split = false;
    /// Worker threads over splits; 0 = hardware concurrency.
    unsigned threads = 1;
};

inline void validate(const EngineConfig& c)
{
    if (c.B < 1) throw std::invalid_argument("B must be at least 1");
    if (!(c.gamma_min > 0.0 && c.gamma_min < 1.0)) throw std::invalid_argument("gamma_min must lie in (0, 1)");
    if (!(c.gamma_step > 0.0 && c.gamma_step <= 1.0)) throw std::invalid_argument("gamma_step must lie in (0, 1]");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (c.cv_folds < 2) throw std::invalid_argument("cv_folds must be at least 2");
    if (!(c.cv_grid_ratio > 0.0 && c.cv_grid_ratio < 1.0)) throw std::invalid_argument("cv_grid_ratio must lie in (0, 1)");
    if (!(c.cv_max_deviance_ratio > 0.0 && c.cv_max_deviance_ratio <= 1.0))
        throw std::invalid_argument("cv_max_deviance_ratio must lie in (0, 1]");
}

/// SplitMix64 finalizer; used to derive independent substreams from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct SampleSplit {
    IndexSet in;   // sorted
    IndexSet out;  // sorted
};

struct SplitPlan {
    std::vector<SampleSplit> splits;
    std::uint64_t seed = 0;
};

/// B random half-splits of {0, ..., n-1}; |out| = |in| + (n mod 2).
inline SplitPlan make_splits(std::size_t n, int B, std::uint64_t seed)
{
    if (n < 4) throw std::invalid_argument("make_splits: need at least 4 observations");
    if (B < 1) throw std::invalid_argument("make_splits: B must be at least 1");
    SplitPlan plan;
    plan.seed = seed;
    plan.splits.resize(static_cast<std::size_t>(B));
    const std::size_t n_in = n / 2;
    for (std::size_t b = 0; b < plan.splits.size(); ++b) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::mt19937_64 rng(mix_seed(seed, b));
        std::shuffle(perm.begin(), perm.end(), rng);
        auto& s = plan.splits[b];
        s.in.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_in));
        s.out.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_in), perm.end());
        std::sort(s.in.begin(), s.in.end());
        std::sort(s.out.begin(), s.out.end());
    }
    return plan;
}

/// Closed grid gamma_min, gamma_min + step, ..., 1. Points are rounded to 12
/// decimals so that e.g. 0.3 is the double nearest to 3/10.
inline std::vector<double> gamma_grid(double gamma_min, double step)
{
    if (!(gamma_min > 0.0 && gamma_min < 1.0)) throw std::invalid_argument("gamma grid: gamma_min must lie in (0, 1)");
    if (!(step > 0.0)) throw std::invalid_argument("gamma grid: step must be positive");
    std::vector<double> grid;
    for (std::size_t k = 0;; ++k) {
        double g = gamma_min + static_cast<double>(k) * step;
        g = std::round(g * 1e12) / 1e12;
        if (g >= 1.0 - 1e-12) break;
        grid.push_back(g);
    }
    grid.push_back(1.0);
    return grid;
}

namespace detail {

inline std::size_t quantile_rank(std::size_t B, double gamma)
{
    const double target = gamma * static_cast<double>(B);
    auto k = static_cast<std::size_t>(std::ceil(target - 1e-9));
    return std::clamp<std::size_t>(k, 1, B);
}

} // namespace detail

/// min(1, q_gamma(values / gamma)) with q_gamma the ceil(gamma B)-th smallest value.
inline double aggregate_q(std::span<const double> values, double gamma)
{
    if (values.empty()) throw std::invalid_argument("aggregate_q: no values");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("aggregate_q: gamma must lie in (0, 1]");
    std::vector<double> v(values.begin(), values.end());
    const std::size_t k = detail::quantile_rank(v.size(), gamma);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end());
    return std::min(1.0, v[k - 1] / gamma);
}

/// min(1, (1 - log gamma_min) * min over the grid of Q(gamma)).
inline double gamma_eliminate(std::span<const double> q_values, double gamma_min)
{
    if (q_values.empty()) throw std::invalid_argument("gamma_eliminate: empty grid");
    if (!(gamma_min > 0.0 && gamma_min < 1.0)) throw std::invalid_argument("gamma_eliminate: gamma_min must lie in (0, 1)");
    const double inf = *std::min_element(q_values.begin(), q_values.end());
    return std::min(1.0, (1.0 - std::log(gamma_min)) * inf);
}

/// out[C] = max of values[D] over D = C and all ancestors of C.
inline std::vector<double> hierarchical_adjust(std::span<const double> values, const ClusterTree& tree)
{
    if (values.size() != tree.size()) throw std::invalid_argument("hierarchical_adjust: one value per node required");
    std::vector<double> out(values.begin(), values.end());
    for (auto id : tree.preorder()) {
        const auto& parent = tree.nodes()[id].parent;
        if (parent) out[id] = std::max(out[id], out[*parent]);
    }
    return out;
}

/// Per-split cluster p-values, indexed by node id.
struct SplitPValues {
    std::size_t split_index = 0;
    IndexSet s_hat;
    std::vector<double> raw;
    std::vector<double> adjusted;
    std::vector<std::string> warnings;
};

/// Largest screened set the engine accepts for sample size n.
inline std::size_t screening_cap(std::size_t n) { return n / 2 >= 1 ? n / 2 - 1 : 0; }

/// Lasso screening on the in-half of a split.
inline IndexSet screen_split(const Matrix& x, const Vector& y, const SampleSplit& split, std::size_t split_index,
                             const EngineConfig& config)
{
    CvOptions cv;
    cv.folds = config.cv_folds;
    cv.rule = config.cv_rule;
    cv.grid_ratio = config.cv_grid_ratio;
    cv.max_deviance_ratio = config.cv_max_deviance_ratio;
    cv.lasso.tolerance = 1e-7;
    const Matrix x_in = select_rows(x, split.in);
    const Vector y_in = select_rows(y, split.in);
    const std::uint64_t seed = mix_seed(config.seed ^ 0x5C4EE7A1D3B2F001ULL, split_index);
    if (x_in.rows() < config.cv_folds) throw std::invalid_argument("screening: fewer in-sample rows than CV folds");
    return screen_detailed(x_in, y_in, seed, screening_cap(static_cast<std::size_t>(x.rows())), cv).selected;
}

namespace detail {

// Positions (into s_hat) of C ∩ s_hat for every node.
inline std::vector<IndexSet> screened_positions(const ClusterTree& tree, const IndexSet& s_hat)
{
    std::vector<std::size_t> pos_of(tree.num_variables(), SIZE_MAX);
    for (std::size_t k = 0; k < s_hat.size(); ++k) pos_of[s_hat[k]] = k;
    std::vector<IndexSet> out(tree.size());
    const auto& order = tree.preorder();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& n = tree.nodes()[*it];
        if (n.children.empty()) {
            const auto pos = pos_of[n.variables.front()];
            if (pos != SIZE_MAX) out[*it].push_back(pos);
            continue;
        }
        auto& dst = out[*it];
        for (auto c : n.children) dst.insert(dst.end(), out[c].begin(), out[c].end());
        std::sort(dst.begin(), dst.end());
    }
    return out;
}

} // namespace detail

/// Raw partial F-test p-values on the out-half for a given screened set,
/// followed by the multiplicity adjustment selected by `config`.
inline SplitPValues split_pvalues_screened(const ClusterTree& tree, const Matrix& x, const Vector& y,
                                           const SampleSplit& split, std::size_t split_index, const IndexSet& s_hat,
                                           const EngineConfig& config, bool shaffer, AdjustMode mode)
{
    const std::size_t nodes = tree.size();
    SplitPValues out;
    out.split_index = split_index;
    out.s_hat = s_hat;
    out.raw.assign(nodes, 1.0);
    out.adjusted.assign(nodes, 1.0);
    if (s_hat.empty()) return out;

    const std::size_t fitted = s_hat.size() + (config.center_per_split ? 1 : 0);
    if (fitted >= split.out.size()) {
        out.warnings.push_back("split " + std::to_string(split_index) + ": screened set of size " +
                               std::to_string(s_hat.size()) + " leaves no residual degrees of freedom");
        return out;
    }

    const Matrix x_out = select_rows(detail::select_columns(x, s_hat), split.out);
    const Vector y_out = select_rows(y, split.out);
    IndexSet all(s_hat.size());
    std::iota(all.begin(), all.end(), std::size_t{0});

    std::optional<PartialFTest> test;
    try {
        test.emplace(x_out, y_out, all, config.center_per_split);
    } catch (const std::exception& e) {
        out.warnings.push_back("split " + std::to_string(split_index) + ": " + e.what());
        return out;
    }

    const auto positions = detail::screened_positions(tree, s_hat);
    std::map<IndexSet, double> cache;
    for (std::size_t c = 0; c < nodes; ++c) {
        const auto& drop = positions[c];
        if (drop.empty()) continue;
        auto it = cache.find(drop);
        if (it == cache.end()) {
            double p = 1.0;
            try {
                p = test->pvalue(drop);
            } catch (const std::exception& e) {
                out.warnings.push_back("split " + std::to_string(split_index) + ", node " + std::to_string(c) + ": " + e.what());
            }
            it = cache.emplace(drop, p).first;
        }
        out.raw[c] = it->second;
    }

    const auto s = static_cast<double>(s_hat.size());
    if (mode == AdjustMode::bottom_up) {
        // 2|S| times the smallest raw p-value among the node and its descendants.
        std::vector<double> below(out.raw);
        const auto& order = tree.preorder();
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            for (auto ch : tree.nodes()[*it].children) below[*it] = std::min(below[*it], below[ch]);
        for (std::size_t c = 0; c < nodes; ++c) out.adjusted[c] = std::min(1.0, 2.0 * s * below[c]);
        return out;
    }

    std::vector<std::size_t> counts(nodes);
    for (std::size_t c = 0; c < nodes; ++c) counts[c] = positions[c].size();
    const bool use_shaffer = shaffer && tree.is_binary();
    for (std::size_t c = 0; c < nodes; ++c) {
        if (counts[c] == 0) continue;
        const std::size_t denom = use_shaffer ? effective_cluster_size_from_counts(tree, c, counts) : counts[c];
        out.adjusted[c] = std::min(1.0, out.raw[c] * s / static_cast<double>(denom));
    }
    return out;
}

/// Screening on the in-half plus cluster p-values on the out-half.
inline SplitPValues split_pvalues(const ClusterTree& tree, const Matrix& x, const Vector& y, const SampleSplit& split,
                                  std::size_t split_index, const EngineConfig& config)
{
    const IndexSet s_hat = screen_split(x, y, split, split_index, config);
    return split_pvalues_screened(tree, x, y, split, split_index, s_hat, config, config.shaffer, config.mode);
}

struct HierTestResult {
    std::shared_ptr<const ClusterTree> tree;
    std::vector<double> gammas;
    Matrix q_grid;              // nodes x gammas: Q^C(gamma), or its bottom-up analogue
    std::vector<double> p_c;    // after gamma elimination
    std::vector<double> p_h;    // hierarchically adjusted; final p-values
    EngineConfig config;
    bool shaffer_applied = false;
    AdjustMode mode = AdjustMode::top_down;
    std::vector<IndexSet> screened; // s_hat per split
    std::vector<std::string> warnings;
};

/// One analysis sharing splits and screening with others in run_shared().
struct AnalysisSpec {
    std::shared_ptr<const ClusterTree> tree;
    AdjustMode mode = AdjustMode::top_down;
    bool shaffer = true;
};

namespace detail {

inline void check_inputs(const ClusterTree& tree, const Matrix& x, const Vector& y)
{
    if (x.rows() != y.size()) throw std::invalid_argument("row count of X does not match length of y");
    if (x.cols() < 2) throw std::invalid_argument("need at least two variables");
    if (tree.num_variables() != static_cast<std::size_t>(x.cols()))
        throw std::invalid_argument("tree covers " + std::to_string(tree.num_variables()) + " variables but X has " +
                                    std::to_string(x.cols()) + " columns");
    if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("non-finite values in X or y");
}

inline HierTestResult aggregate(const AnalysisSpec& spec, const std::vector<SplitPValues>& per_split,
                                const EngineConfig& config)
{
    const ClusterTree& tree = *spec.tree;
    HierTestResult r;
    r.tree = spec.tree;
    r.config = config;
    r.mode = spec.mode;
    r.shaffer_applied = spec.mode == AdjustMode::top_down && spec.shaffer && tree.is_binary();
    r.gammas = gamma_grid(config.gamma_min, config.gamma_step);
    const std::size_t nodes = tree.size();
    const std::size_t B = per_split.size();
    r.q_grid.resize(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(r.gammas.size()));
    r.p_c.resize(nodes);

    std::vector<double> values(B);
    std::vector<double> q(r.gammas.size());
    for (std::size_t c = 0; c < nodes; ++c) {
        for (std::size_t b = 0; b < B; ++b) values[b] = per_split[b].adjusted[c];
        std::sort(values.begin(), values.end());
        for (std::size_t g = 0; g < r.gammas.size(); ++g) {
            const std::size_t k = quantile_rank(B, r.gammas[g]);
            q[g] = std::min(1.0, values[k - 1] / r.gammas[g]);
            r.q_grid(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(g)) = q[g];
        }
        r.p_c[c] = gamma_eliminate(q, config.gamma_min);
    }
    r.p_h = spec.mode == AdjustMode::top_down ? hierarchical_adjust(r.p_c, tree) : r.p_c;
    for (const auto& s : per_split) {
        r.screened.push_back(s.s_hat);
        r.warnings.insert(r.warnings.end(), s.warnings.begin(), s.warnings.end());
    }
    return r;
}

} // namespace detail

/// Runs several analyses on the same splits and screened sets. Screening
/// dominates the cost, so sharing it makes method comparisons cheap and
/// exactly paired.
inline std::vector<HierTestResult> run_shared(std::span<const AnalysisSpec> analyses, const Matrix& x, const Vector& y,
                                              const EngineConfig& config)
{
    validate(config);
    for (const auto& a : analyses) {
        if (!a.tree) throw std::invalid_argument("analysis without a tree");
        detail::check_inputs(*a.tree, x, y);
    }
    const auto n = static_cast<std::size_t>(x.rows());
    const SplitPlan plan = make_splits(n, config.B, config.seed);
    if (plan.splits.front().in.size() < static_cast<std::size_t>(config.cv_folds))
        throw std::invalid_argument("sample too small: in-half has fewer rows than CV folds");

    const std::size_t B = plan.splits.size();
    std::vector<std::vector<SplitPValues>> per_split(analyses.size(), std::vector<SplitPValues>(B));
    parallel_for(B, config.threads, [&](std::size_t b) {
        const auto& split = plan.splits[b];
        const IndexSet s_hat = screen_split(x, y, split, b, config);
        for (std::size_t a = 0; a < analyses.size(); ++a)
            per_split[a][b] = split_pvalues_screened(*analyses[a].tree, x, y, split, b, s_hat, config,
                                                     analyses[a].shaffer, analyses[a].mode);
    });

    std::vector<HierTestResult> out;
    out.reserve(analyses.size());
    for (std::size_t a = 0; a < analyses.size(); ++a) out.push_back(detail::aggregate(analyses[a], per_split[a], config));
    return out;
}

/// The full pipeline with the adjustment mode taken from config.
inline HierTestResult run(std::shared_ptr<const ClusterTree> tree, const Matrix& x, const Vector& y,
                          const EngineConfig& config)
{
    const AnalysisSpec spec{std::move(tree), config.mode, config.shaffer};
    return std::move(run_shared(std::span(&spec, 1), x, y, config).front());
}

inline HierTestResult run(const ClusterTree& tree, const Matrix& x, const Vector& y, const EngineConfig& config)
{
    return run(std::make_shared<const ClusterTree>(tree), x, y, config);
}

inline HierTestResult bottom_up_run(const ClusterTree& tree, const Matrix& x, const Vector& y, EngineConfig config)
{
    config.mode = AdjustMode::bottom_up;
    return run(tree, x, y, config);
}

struct Detections {
    std::vector<NodeId> rejected;          // p_h <= alpha
    std::vector<NodeId> minimal;           // rejected, with no rejected descendant
    std::vector<bool> minimal_is_true;     // per minimal detection; empty without a truth set
};

/// Rejected clusters at level alpha and the minimal ones among them. With a
/// truth set, each minimal detection is labelled by whether it meets it.
inline Detections significant_clusters(const ClusterTree& tree, std::span<const double> p_h, double alpha,
                                       const std::optional<IndexSet>& truth = std::nullopt)
{
    if (p_h.size() != tree.size()) throw std::invalid_argument("significant_clusters: one p-value per node required");
    Detections d;
    std::vector<bool> rejected(tree.size(), false), rejected_below(tree.size(), false);
    for (std::size_t c = 0; c < tree.size(); ++c) rejected[c] = p_h[c] <= alpha;
    const auto& order = tree.preorder();
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        for (auto ch : tree.nodes()[*it].children)
            if (rejected[ch] || rejected_below[ch]) rejected_below[*it] = true;

    std::vector<bool> active;
    if (truth) {
        active.assign(tree.num_variables(), false);
        for (auto j : *truth) {
            if (j >= active.size()) throw std::out_of_range("significant_clusters: truth index out of range");
            active[j] = true;
        }
    }
    for (std::size_t c = 0; c < tree.size(); ++c) {
        if (!rejected[c]) continue;
        d.rejected.push_back(c);
        if (rejected_below[c]) continue;
        d.minimal.push_back(c);
        if (truth) {
            const auto& vars = tree.nodes()[c].variables;
            d.minimal_is_true.push_back(std::any_of(vars.begin(), vars.end(), [&](std::size_t j) { return active[j]; }));
        }
    }
    return d;
}

inline Detections significant_clusters(const HierTestResult& result, double alpha,
                                       const std::optional<IndexSet>& truth = std::nullopt)
{
    return significant_clusters(*result.tree, result.p_h, alpha, truth);
}

} // namespace hiertest
