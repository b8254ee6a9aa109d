#pragma once

// Regularized incomplete beta function and the central F distribution.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace hiertest {

namespace detail {

// Continued fraction for I_x(a, b), modified Lentz evaluation.
inline double betacf(double a, double b, double x)
{
    constexpr int max_iter = 1000;
    constexpr double eps = 1e-15;
    constexpr double tiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double log_beta_prefactor(double a, double b, double x)
{
    return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
           b * std::log1p(-x);
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double incomplete_beta(double x, double a, double b)
{
    if (!(a > 0.0) || !(b > 0.0))
        throw std::invalid_argument("incomplete_beta: shape parameters must be positive");
    if (std::isnan(x) || x < 0.0 || x > 1.0)
        throw std::invalid_argument("incomplete_beta: x must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;

    const double front = std::exp(detail::log_beta_prefactor(a, b, x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
    return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

/// Upper tail 1 - I_x(a, b), evaluated without cancellation.
inline double incomplete_beta_complement(double x, double a, double b)
{
    if (!(a > 0.0) || !(b > 0.0))
        throw std::invalid_argument("incomplete_beta: shape parameters must be positive");
    if (std::isnan(x) || x < 0.0 || x > 1.0)
        throw std::invalid_argument("incomplete_beta: x must lie in [0, 1]");
    if (x == 0.0) return 1.0;
    if (x == 1.0) return 0.0;

    const double front = std::exp(detail::log_beta_prefactor(a, b, x));
    if (x < (a + 1.0) / (a + b + 2.0)) return 1.0 - front * detail::betacf(a, b, x) / a;
    return front * detail::betacf(b, a, 1.0 - x) / b;
}

/// P(F <= x) for F ~ F(d1, d2).
inline double f_cdf(double x, int d1, int d2)
{
    if (d1 < 1 || d2 < 1) throw std::invalid_argument("f_cdf: degrees of freedom must be positive");
    if (std::isnan(x) || x < 0.0) throw std::invalid_argument("f_cdf: x must be nonnegative");
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    const double a = 0.5 * d1;
    const double b = 0.5 * d2;
    // d1 x / (d1 x + d2) loses precision when x is huge; use the complement form then.
    const double denom = d1 * x + d2;
    const double z = d1 * x / denom;
    const double w = d2 / denom;
    if (z <= 0.5) return incomplete_beta(z, a, b);
    return incomplete_beta_complement(w, b, a);
}

/// P(F > x) for F ~ F(d1, d2).
inline double f_sf(double x, int d1, int d2)
{
    if (d1 < 1 || d2 < 1) throw std::invalid_argument("f_sf: degrees of freedom must be positive");
    if (std::isnan(x) || x < 0.0) throw std::invalid_argument("f_sf: x must be nonnegative");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    const double a = 0.5 * d1;
    const double b = 0.5 * d2;
    const double denom = d1 * x + d2;
    const double z = d1 * x / denom;
    const double w = d2 / denom;
    if (z <= 0.5) return incomplete_beta_complement(z, a, b);
    return incomplete_beta(w, b, a);
}

} // namespace hiertest
