#pragma once

// Lasso by cyclic coordinate descent, K-fold cross-validation over a
// log-spaced lambda path, and the screening step built on both.
//
// Objective: (1/(2n)) ||y - X b||^2 + lambda ||b||_1, no intercept.

#include "hiertest/linalg.hpp"
#include "hiertest/standardize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace hiertest {

struct LassoOptions {
    /// Sweeps stop once max_j (||X_j||^2/n) * (change in b_j)^2 falls below
    /// tolerance * ||y||^2/n.
    double tolerance = 1e-14;
    int max_sweeps = 100000;
};

struct LassoFit {
    double lambda = 0.0;
    Vector coefficients;
    IndexSet support;
    int n_iter = 0;
    bool converged = true;
};

struct CvResult {
    std::vector<double> lambda_grid;   // decreasing
    std::vector<double> cv_error;      // mean held-out squared error per grid point
    std::vector<double> cv_se;         // standard error of cv_error across folds
    double chosen_lambda = 0.0;
    std::size_t chosen_index = 0;
    std::vector<int> fold_assignment;  // fold of each row
};

/// Smallest lambda for which the all-zero vector solves the problem.
inline double lambda_max(const Matrix& x, const Vector& y)
{
    if (x.cols() == 0) return 0.0;
    return (x.transpose() * y).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

inline double lasso_objective(const Matrix& x, const Vector& y, const Vector& beta, double lambda)
{
    return 0.5 * (y - x * beta).squaredNorm() / static_cast<double>(x.rows()) + lambda * beta.lpNorm<1>();
}

/// Coordinate descent state for one (X, y). Successive solve() calls warm
/// start from the previous solution, which is how paths are computed.
class LassoSolver {
public:
    LassoSolver(const Matrix& x, const Vector& y, LassoOptions options = {})
        : x_(x), y_(y), opt_(options), n_(static_cast<double>(x.rows())), beta_(Vector::Zero(x.cols())), r_(y),
          xx_(x.cols()), in_working_(static_cast<std::size_t>(x.cols()), false)
    {
        if (x.rows() != y.size()) throw std::invalid_argument("lasso: row count does not match response length");
        if (x.rows() < 1) throw std::invalid_argument("lasso: no observations");
        if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("lasso: non-finite input");
        for (Eigen::Index j = 0; j < x.cols(); ++j) xx_(j) = x.col(j).squaredNorm() / n_;
        threshold_ = opt_.tolerance * std::max(y.squaredNorm() / n_, std::numeric_limits<double>::min());
        prev_lambda_ = lambda_max(x, y);
    }

    void warm_start(const Vector& beta)
    {
        if (beta.size() != x_.cols()) throw std::invalid_argument("lasso: warm start has wrong length");
        beta_ = beta;
        r_ = y_ - x_ * beta_;
        std::fill(in_working_.begin(), in_working_.end(), false);
        working_.clear();
    }

    const Vector& coefficients() const { return beta_; }
    const Vector& residual() const { return r_; }

    LassoFit solve(double lambda)
    {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lasso: lambda must be positive");
        const auto p = static_cast<std::size_t>(x_.cols());

        // Sequential strong rule: screen out coordinates unlikely to enter.
        const double strong = 2.0 * lambda - std::max(prev_lambda_, lambda);
        for (std::size_t j = 0; j < p; ++j) {
            if (in_working_[j]) continue;
            const auto jj = static_cast<Eigen::Index>(j);
            if (beta_(jj) != 0.0 || std::fabs(x_.col(jj).dot(r_)) / n_ >= strong) add_working(j);
        }

        int sweeps = 0;
        bool converged = false;
        while (sweeps < opt_.max_sweeps) {
            // Converge on the working set: full working sweeps alternated with active-only sweeps.
            while (sweeps < opt_.max_sweeps) {
                ++sweeps;
                if (sweep(working_, lambda) < threshold_) break;
                while (sweeps < opt_.max_sweeps) {
                    active_.clear();
                    for (auto j : working_)
                        if (beta_(static_cast<Eigen::Index>(j)) != 0.0) active_.push_back(j);
                    ++sweeps;
                    if (sweep(active_, lambda) < threshold_) break;
                }
            }
            // KKT check outside the working set.
            bool violated = false;
            for (std::size_t j = 0; j < p; ++j) {
                if (in_working_[j]) continue;
                if (std::fabs(x_.col(static_cast<Eigen::Index>(j)).dot(r_)) / n_ > lambda) {
                    add_working(j);
                    violated = true;
                }
            }
            if (!violated) {
                converged = sweeps < opt_.max_sweeps;
                break;
            }
        }

        prev_lambda_ = lambda;
        LassoFit fit;
        fit.lambda = lambda;
        fit.coefficients = beta_;
        for (std::size_t j = 0; j < p; ++j)
            if (beta_(static_cast<Eigen::Index>(j)) != 0.0) fit.support.push_back(j);
        fit.n_iter = sweeps;
        fit.converged = converged;
        return fit;
    }

private:
    void add_working(std::size_t j)
    {
        in_working_[j] = true;
        working_.insert(std::lower_bound(working_.begin(), working_.end(), j), j);
    }

    double sweep(const std::vector<std::size_t>& coords, double lambda)
    {
        double max_change = 0.0;
        for (auto j : coords) {
            const auto jj = static_cast<Eigen::Index>(j);
            const double xxj = xx_(jj);
            if (xxj <= 0.0) continue;
            const double old = beta_(jj);
            const double z = x_.col(jj).dot(r_) / n_ + xxj * old;
            double updated = 0.0;
            if (z > lambda)
                updated = (z - lambda) / xxj;
            else if (z < -lambda)
                updated = (z + lambda) / xxj;
            const double delta = updated - old;
            if (delta != 0.0) {
                r_.noalias() -= delta * x_.col(jj);
                beta_(jj) = updated;
                max_change = std::max(max_change, xxj * delta * delta);
            }
        }
        return max_change;
    }

    const Matrix& x_;
    const Vector& y_;
    LassoOptions opt_;
    double n_;
    Vector beta_;
    Vector r_;
    Vector xx_;
    double threshold_ = 0.0;
    double prev_lambda_ = 0.0;
    std::vector<bool> in_working_;
    std::vector<std::size_t> working_;
    std::vector<std::size_t> active_;
};

/// Lasso fit at a single lambda.
inline LassoFit lasso_fit(const Matrix& x, const Vector& y, double lambda, const std::optional<Vector>& warm_start = {},
                          LassoOptions options = {})
{
    LassoSolver solver(x, y, options);
    if (warm_start) solver.warm_start(*warm_start);
    return solver.solve(lambda);
}

/// Fits along a decreasing grid with warm starts.
inline std::vector<LassoFit> lasso_path(const Matrix& x, const Vector& y, const std::vector<double>& grid,
                                        LassoOptions options = {})
{
    LassoSolver solver(x, y, options);
    std::vector<LassoFit> out;
    out.reserve(grid.size());
    for (double lambda : grid) out.push_back(solver.solve(lambda));
    return out;
}

/// `count` values log-spaced from lmax down to ratio * lmax.
inline std::vector<double> lambda_grid(double lmax, std::size_t count = 100, double ratio = 1e-3)
{
    if (!(lmax > 0.0)) throw std::domain_error("lambda grid: lambda_max must be positive");
    if (count < 2) throw std::invalid_argument("lambda grid: need at least two points");
    std::vector<double> grid(count);
    const double step = std::log(ratio) / static_cast<double>(count - 1);
    for (std::size_t k = 0; k < count; ++k) grid[k] = lmax * std::exp(step * static_cast<double>(k));
    grid.front() = lmax;
    return grid;
}

/// min_error: the grid point with the smallest CV error. one_se: the largest
/// lambda whose CV error is within one standard error of that minimum.
enum class CvRule { min_error, one_se };

struct CvOptions {
    int folds = 10;
    CvRule rule = CvRule::min_error;
    std::size_t grid_size = 100;
    double grid_ratio = 1e-3;
    /// The path stops at the first lambda whose full-data fit explains at
    /// least this fraction of the variance of y (1 = full grid).
    double max_deviance_ratio = 1.0;
    LassoOptions lasso{1e-10, 100000};
};

/// K-fold cross-validation of the Lasso penalty. Folds come from a seeded
/// permutation: row perm[i] goes to fold i mod K. The chosen lambda minimizes
/// the mean held-out squared error (largest lambda among exact ties).
inline CvResult cv_select_lambda(const Matrix& x, const Vector& y, std::uint64_t seed, CvOptions options = {})
{
    const auto n = static_cast<std::size_t>(x.rows());
    const auto k = options.folds;
    if (k < 2) throw std::invalid_argument("cross-validation: need at least two folds");
    if (n < static_cast<std::size_t>(k)) throw std::invalid_argument("cross-validation: fewer rows than folds");
    if (x.rows() != y.size()) throw std::invalid_argument("cross-validation: row count does not match response length");

    CvResult result;
    result.lambda_grid = lambda_grid(lambda_max(x, y), options.grid_size, options.grid_ratio);
    if (options.max_deviance_ratio < 1.0) {
        const double tss = y.squaredNorm();
        LassoSolver full(x, y, options.lasso);
        for (std::size_t g = 0; g < result.lambda_grid.size(); ++g) {
            full.solve(result.lambda_grid[g]);
            if (g >= 1 && full.residual().squaredNorm() <= (1.0 - options.max_deviance_ratio) * tss) {
                result.lambda_grid.resize(g + 1);
                break;
            }
        }
    }
    const auto& grid = result.lambda_grid;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    result.fold_assignment.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) result.fold_assignment[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

    std::vector<double> sse(grid.size(), 0.0);
    std::vector<double> fold_mse(grid.size() * static_cast<std::size_t>(k), 0.0);
    for (int fold = 0; fold < k; ++fold) {
        IndexSet train, test;
        for (std::size_t i = 0; i < n; ++i) (result.fold_assignment[i] == fold ? test : train).push_back(i);
        // Each fold is standardized on its own training rows and fitted with an intercept.
        Matrix x_train = select_rows(x, train);
        Vector y_train = select_rows(y, train);
        Matrix x_test = select_rows(x, test);
        const Vector y_test = select_rows(y, test);
        const ColumnScaling scaling = standardize_columns(x_train);
        const double y_mean = center(y_train);
        for (Eigen::Index j = 0; j < x_test.cols(); ++j) {
            if (scaling.scale(j) > 0.0)
                x_test.col(j) = (x_test.col(j).array() - scaling.mean(j)) / scaling.scale(j);
            else
                x_test.col(j).setZero();
        }

        LassoSolver solver(x_train, y_train, options.lasso);
        Vector pred(x_test.rows());
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const LassoFit fit = solver.solve(grid[g]);
            pred.setConstant(y_mean);
            for (auto j : fit.support)
                pred.noalias() += fit.coefficients(static_cast<Eigen::Index>(j)) * x_test.col(static_cast<Eigen::Index>(j));
            const double e = (y_test - pred).squaredNorm();
            sse[g] += e;
            fold_mse[g * static_cast<std::size_t>(k) + static_cast<std::size_t>(fold)] = e / static_cast<double>(test.size());
        }
    }

    result.cv_error.resize(grid.size());
    result.cv_se.resize(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        result.cv_error[g] = sse[g] / static_cast<double>(n);
        double var = 0.0;
        for (int fold = 0; fold < k; ++fold) {
            const double d = fold_mse[g * static_cast<std::size_t>(k) + static_cast<std::size_t>(fold)] - result.cv_error[g];
            var += d * d;
        }
        result.cv_se[g] = std::sqrt(var / static_cast<double>(k - 1) / static_cast<double>(k));
    }
    const auto best = static_cast<std::size_t>(
        std::min_element(result.cv_error.begin(), result.cv_error.end()) - result.cv_error.begin());
    result.chosen_index = best;
    if (options.rule == CvRule::one_se) {
        const double bound = result.cv_error[best] + result.cv_se[best];
        for (std::size_t g = 0; g <= best; ++g)
            if (result.cv_error[g] <= bound) {
                result.chosen_index = g;
                break;
            }
    }
    result.chosen_lambda = grid[result.chosen_index];
    return result;
}

/// Keeps the `cap` largest |coefficient| entries of the support (lower index
/// first among ties). The result is sorted by index.
inline IndexSet truncate_support(const Vector& coefficients, const IndexSet& support, std::size_t cap)
{
    if (support.size() <= cap) return support;
    IndexSet ranked = support;
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        return std::fabs(coefficients(static_cast<Eigen::Index>(a))) > std::fabs(coefficients(static_cast<Eigen::Index>(b)));
    });
    ranked.resize(cap);
    std::sort(ranked.begin(), ranked.end());
    return ranked;
}

struct ScreenResult {
    IndexSet selected;
    double lambda = 0.0;
    std::size_t support_before_cap = 0;
};

/// Lasso screening with a cross-validated penalty. X_in is standardized on
/// its own rows and y_in centered before fitting; at most `cap` variables
/// are returned.
inline ScreenResult screen_detailed(const Matrix& x_in, const Vector& y_in, std::uint64_t seed, std::size_t cap,
                                    CvOptions options = {})
{
    if (x_in.rows() != y_in.size()) throw std::invalid_argument("screen: row count does not match response length");
    Matrix x = x_in;
    Vector y = y_in;
    standardize_columns(x);
    center(y);

    ScreenResult out;
    const double lmax = lambda_max(x, y);
    const double rms = std::sqrt(y_in.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(y_in.size(), 1)));
    if (!(lmax > 1e-13 * rms)) return out;

    const CvResult cv = cv_select_lambda(x, y, seed, options);
    LassoSolver solver(x, y, options.lasso);
    LassoFit fit;
    for (std::size_t g = 0; g <= cv.chosen_index; ++g) fit = solver.solve(cv.lambda_grid[g]);

    out.lambda = cv.chosen_lambda;
    out.support_before_cap = fit.support.size();
    out.selected = truncate_support(fit.coefficients, fit.support, cap);
    return out;
}

inline IndexSet screen(const Matrix& x_in, const Vector& y_in, std::uint64_t seed, std::size_t cap)
{
    return screen_detailed(x_in, y_in, seed, cap).selected;
}

} // namespace hiertest
