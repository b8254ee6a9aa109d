#pragma once

#include "hiertest/linalg.hpp"

#include <random>

namespace hiertest::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
}

inline Vector random_vector(Eigen::Index n, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
}

// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
inline double ks_uniform(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        d = std::max(d, static_cast<double>(i + 1) / n - v[i]);
        d = std::max(d, v[i] - static_cast<double>(i) / n);
    }
    return d;
}

} // namespace hiertest::testing
