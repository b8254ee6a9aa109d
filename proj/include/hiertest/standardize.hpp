#pragma once

#include "hiertest/linalg.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

namespace hiertest {

/// Column means and standard deviations (1/n convention) removed by standardize_columns().
struct ColumnScaling {
    Vector mean;
    Vector scale;
};

/// Centers every column and scales it to unit variance with divisor n.
/// Columns with zero variance are set to zero and keep scale 0.
inline ColumnScaling standardize_columns(Matrix& x)
{
    const auto n = static_cast<double>(x.rows());
    ColumnScaling s{Vector(x.cols()), Vector(x.cols())};
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double mean = x.col(j).sum() / n;
        x.col(j).array() -= mean;
        const double sd = std::sqrt(x.col(j).squaredNorm() / n);
        s.mean(j) = mean;
        if (sd > 0.0 && sd > 1e-13 * std::fabs(mean)) {
            x.col(j) /= sd;
            s.scale(j) = sd;
        } else {
            x.col(j).setZero();
            s.scale(j) = 0.0;
        }
    }
    return s;
}

/// Subtracts the mean; returns it.
inline double center(Vector& y)
{
    const double mean = y.mean();
    y.array() -= mean;
    return mean;
}

inline Matrix select_rows(const Matrix& x, std::span<const std::size_t> rows)
{
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= static_cast<std::size_t>(x.rows())) throw std::out_of_range("row index out of range");
        out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

inline Vector select_rows(const Vector& y, std::span<const std::size_t> rows)
{
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= static_cast<std::size_t>(y.size())) throw std::out_of_range("row index out of range");
        out(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

} // namespace hiertest
