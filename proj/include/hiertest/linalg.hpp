#pragma once

// Least squares, partial F-tests and the noncentrality diagnostic for
// misspecified screened models.

#include "hiertest/fdist.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hiertest {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexSet = std::vector<std::size_t>;

/// Relative pivot threshold below which a column counts as linearly dependent.
inline constexpr double kRankTolerance = 1e-8;

struct LeastSquaresFit {
    Vector coefficients;   // one entry per kept column, in kept_columns order
    double rss = 0.0;
    int df_resid = 0;
    int rank = 0;
    IndexSet kept_columns; // positions in the fitted sub-matrix, strictly increasing
};

struct NoncentralityReport {
    Vector bias;
    double lambda_noncentral = 0.0;
    int q = 0;
    int df2 = 0;
};

namespace detail {

inline void require_finite(const Matrix& m, const char* what)
{
    if (!m.allFinite()) throw std::invalid_argument(std::string(what) + " contains non-finite entries");
}

inline void require_finite(const Vector& v, const char* what)
{
    if (!v.allFinite()) throw std::invalid_argument(std::string(what) + " contains non-finite entries");
}

inline Matrix select_columns(const Matrix& x, std::span<const std::size_t> cols)
{
    Matrix out(x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] >= static_cast<std::size_t>(x.cols()))
            throw std::out_of_range("column index " + std::to_string(cols[k]) + " out of range");
        out.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(cols[k]));
    }
    return out;
}

// Least squares without input validation; the caller has checked shapes.
inline LeastSquaresFit fit_unchecked(const Matrix& x, const Vector& y)
{
    LeastSquaresFit fit;
    const auto n = x.rows();
    if (x.cols() == 0) {
        fit.rss = y.squaredNorm();
        fit.df_resid = static_cast<int>(n);
        return fit;
    }

    Eigen::ColPivHouseholderQR<Matrix> pivoted(x);
    pivoted.setThreshold(kRankTolerance);
    const auto rank = pivoted.rank();
    fit.rank = static_cast<int>(rank);
    fit.df_resid = static_cast<int>(n - rank);

    const auto& perm = pivoted.colsPermutation().indices();
    for (Eigen::Index k = 0; k < rank; ++k) fit.kept_columns.push_back(static_cast<std::size_t>(perm(k)));
    std::sort(fit.kept_columns.begin(), fit.kept_columns.end());

    if (rank == 0) {
        fit.rss = y.squaredNorm();
        return fit;
    }

    Matrix kept = select_columns(x, fit.kept_columns);
    Eigen::HouseholderQR<Matrix> qr(kept);
    fit.coefficients = qr.solve(y);
    fit.rss = (y - kept * fit.coefficients).squaredNorm();
    return fit;
}

} // namespace detail

/// Ordinary least squares without intercept. Columns found to be linearly
/// dependent by pivoted QR are dropped and reported through kept_columns.
inline LeastSquaresFit ols_fit(const Matrix& x_sub, const Vector& y)
{
    if (x_sub.rows() != y.size()) throw std::invalid_argument("ols_fit: row count does not match response length");
    if (x_sub.rows() <= x_sub.cols())
        throw std::invalid_argument("ols_fit: need more observations than columns");
    detail::require_finite(x_sub, "ols_fit: design");
    detail::require_finite(y, "ols_fit: response");
    return detail::fit_unchecked(x_sub, y);
}

/// Partial F-test of a set of columns against a fixed full model. The full
/// model is factorized once; each call to pvalue() fits one submodel.
class PartialFTest {
public:
    /// `with_intercept` adds a constant column that is never dropped.
    PartialFTest(const Matrix& x, const Vector& y, IndexSet full_cols, bool with_intercept = false)
        : y_(y), full_cols_(std::move(full_cols)), intercept_(with_intercept)
    {
        if (x.rows() != y.size())
            throw std::invalid_argument("partial F-test: row count does not match response length");
        std::sort(full_cols_.begin(), full_cols_.end());
        if (std::adjacent_find(full_cols_.begin(), full_cols_.end()) != full_cols_.end())
            throw std::invalid_argument("partial F-test: duplicate column in full model");
        const std::size_t fitted = full_cols_.size() + (intercept_ ? 1 : 0);
        if (fitted >= static_cast<std::size_t>(x.rows()))
            throw std::invalid_argument("partial F-test: full model has at least as many columns as observations");
        detail::require_finite(y, "partial F-test: response");

        design_ = Matrix(x.rows(), static_cast<Eigen::Index>(fitted));
        Eigen::Index k = 0;
        if (intercept_) design_.col(k++).setOnes();
        for (auto c : full_cols_) {
            if (c >= static_cast<std::size_t>(x.cols()))
                throw std::out_of_range("partial F-test: column index out of range");
            design_.col(k++) = x.col(static_cast<Eigen::Index>(c));
        }
        detail::require_finite(design_, "partial F-test: design");
        full_ = detail::fit_unchecked(design_, y_);
        scale_ = y_.squaredNorm();
    }

    const LeastSquaresFit& full_fit() const { return full_; }
    const IndexSet& full_cols() const { return full_cols_; }

    double pvalue(std::span<const std::size_t> drop_cols) const
    {
        if (drop_cols.empty()) throw std::invalid_argument("partial F-test: drop set is empty");
        std::vector<bool> dropped(full_cols_.size(), false);
        for (auto c : drop_cols) {
            auto it = std::lower_bound(full_cols_.begin(), full_cols_.end(), c);
            if (it == full_cols_.end() || *it != c)
                throw std::invalid_argument("partial F-test: drop set is not contained in the full model");
            dropped[static_cast<std::size_t>(it - full_cols_.begin())] = true;
        }

        IndexSet keep;
        const std::size_t offset = intercept_ ? 1 : 0;
        if (intercept_) keep.push_back(0);
        for (std::size_t k = 0; k < full_cols_.size(); ++k)
            if (!dropped[k]) keep.push_back(k + offset);

        const LeastSquaresFit sub = detail::fit_unchecked(detail::select_columns(design_, keep), y_);
        return pvalue_from_fits(sub);
    }

private:
    double pvalue_from_fits(const LeastSquaresFit& sub) const
    {
        const int q = full_.rank - sub.rank;
        if (q <= 0) return 1.0;
        if (scale_ == 0.0) return 1.0;

        // Residual sums below this fraction of ||y||^2 are treated as exact fits.
        const double zero = 1e-24 * scale_;
        const double rss_full = full_.rss <= zero ? 0.0 : full_.rss;
        const double rss_sub = sub.rss <= zero ? 0.0 : sub.rss;
        if (rss_sub == 0.0) return 1.0;
        if (rss_full == 0.0) return 0.0;

        const double numerator = std::max(rss_sub - rss_full, 0.0) / q;
        const double f = numerator / (rss_full / full_.df_resid);
        return f_sf(f, q, full_.df_resid);
    }

    Vector y_;
    IndexSet full_cols_;
    bool intercept_;
    Matrix design_;
    LeastSquaresFit full_;
    double scale_ = 0.0;
};

/// p-value of the partial F-test comparing the model on full_cols with the
/// model on full_cols minus drop_cols. Column indices refer to x_out.
inline double partial_f_pvalue(const Matrix& x_out, const Vector& y_out, std::span<const std::size_t> full_cols,
                               std::span<const std::size_t> drop_cols)
{
    PartialFTest test(x_out, y_out, IndexSet(full_cols.begin(), full_cols.end()));
    return test.pvalue(drop_cols);
}

/// Bias vector and noncentrality parameter of the partial F statistic for the
/// hypothesis A beta_S = A beta0_S when the screened model S misses active
/// columns.
inline NoncentralityReport noncentrality_report(const Matrix& x_i2, const IndexSet& s_hat, const Matrix& a,
                                                const Vector& beta0, double sigma)
{
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw std::invalid_argument("noncentrality_report: sigma must be positive");
    const auto p = x_i2.cols();
    if (beta0.size() != p) throw std::invalid_argument("noncentrality_report: beta0 length must equal column count");
    if (a.cols() != static_cast<Eigen::Index>(s_hat.size()))
        throw std::invalid_argument("noncentrality_report: contrast matrix must have |s_hat| columns");
    if (a.rows() < 1 || a.rows() > a.cols())
        throw std::invalid_argument("noncentrality_report: contrast matrix needs between 1 and |s_hat| rows");
    detail::require_finite(x_i2, "noncentrality_report: design");
    detail::require_finite(a, "noncentrality_report: contrast");

    IndexSet sorted = s_hat;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw std::invalid_argument("noncentrality_report: duplicate index in s_hat");
    std::vector<bool> in_s(static_cast<std::size_t>(p), false);
    for (auto j : s_hat) {
        if (j >= static_cast<std::size_t>(p)) throw std::out_of_range("noncentrality_report: s_hat index out of range");
        in_s[j] = true;
    }
    IndexSet complement;
    for (std::size_t j = 0; j < static_cast<std::size_t>(p); ++j)
        if (!in_s[j]) complement.push_back(j);

    const Matrix xs = detail::select_columns(x_i2, s_hat);
    const Matrix gram = xs.transpose() * xs;
    Eigen::ColPivHouseholderQR<Matrix> rank_check(xs);
    rank_check.setThreshold(kRankTolerance);
    if (rank_check.rank() != xs.cols())
        throw std::domain_error("noncentrality_report: screened design does not have full column rank");

    Eigen::LLT<Matrix> chol(gram);
    if (chol.info() != Eigen::Success) throw std::domain_error("noncentrality_report: singular Gram matrix");

    Vector omitted_signal = Vector::Zero(x_i2.rows());
    for (auto j : complement) omitted_signal += x_i2.col(static_cast<Eigen::Index>(j)) * beta0(static_cast<Eigen::Index>(j));

    const Matrix gram_inv_at = chol.solve(a.transpose());
    const Matrix m = a * gram_inv_at;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0)
        throw std::domain_error("noncentrality_report: contrast covariance is not positive definite");
    const Matrix inv_sqrt =
        eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();

    const Vector projected = chol.solve(xs.transpose() * omitted_signal);

    NoncentralityReport report;
    report.bias = inv_sqrt * (a * projected) / sigma;
    report.lambda_noncentral = report.bias.squaredNorm();
    report.q = static_cast<int>(a.rows());
    report.df2 = static_cast<int>(x_i2.rows() - xs.cols());
    return report;
}

} // namespace hiertest
