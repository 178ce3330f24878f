#pragma once

// Paired t-test support.  The Student-t CDF is evaluated through the
// regularized incomplete beta function, computed with Lentz's continued
// fraction; absolute error is well below 1e-8 over the df range used here.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "crab/errors.hpp"

namespace crab {

namespace detail {

// Continued-fraction kernel for the regularized incomplete beta function
// (modified Lentz method).  Converges quickly for x < (a + 1) / (a + b + 2);
// the caller applies the symmetry relation otherwise.
inline double beta_cont_fraction(double a, double b, double x) {
    const double tiny = 1e-300;
    const double eps = 1e-15;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        double m2 = 2.0 * m;
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
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) return h;
    }
    throw NumericError("incomplete beta continued fraction failed to converge (a=" +
                       std::to_string(a) + ", b=" + std::to_string(b) + ", x=" +
                       std::to_string(x) + ")");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0))
        throw ContractError("incomplete_beta requires positive shape parameters");
    if (!(x >= 0.0 && x <= 1.0))
        throw ContractError("incomplete_beta requires x in [0, 1], got " + std::to_string(x));
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cont_fraction(a, b, x) / a;
    return 1.0 - front * detail::beta_cont_fraction(b, a, 1.0 - x) / b;
}

// P(T <= t) for Student's t distribution with df degrees of freedom.
inline double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) throw ContractError("student_t_cdf requires positive degrees of freedom");
    if (t == 0.0) return 0.5;
    if (std::isinf(t)) return t > 0.0 ? 1.0 : 0.0;
    double x = df / (df + t * t);
    double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);  // P(T >= |t|)
    return t > 0.0 ? 1.0 - tail : tail;
}

struct TTestResult {
    double t = 0;        // paired t statistic for differences a - b
    double p_one_sided = 0;  // P(T >= t) under H0: mean difference is zero
    double mean_diff = 0;
    std::size_t n = 0;
};

// Paired t-test on matched score lists.  The statistic uses the sample
// standard deviation of the differences; the one-sided p-value is the upper
// tail, so small p supports "a scores higher than b".
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw ContractError("paired_t_test requires equal-length lists, got " +
                            std::to_string(a.size()) + " and " + std::to_string(b.size()));
    std::size_t n = a.size();
    if (n < 2)
        throw ContractError("paired_t_test requires at least 2 pairs, got " + std::to_string(n));

    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = 0;
    for (double v : d) mean += v;
    mean /= double(n);
    double ss = 0;
    for (double v : d) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / double(n - 1));

    TTestResult r;
    r.mean_diff = mean;
    r.n = n;
    if (sd == 0.0) {
        // Identical lists: no evidence either way.  A constant nonzero
        // difference is a degenerate certainty in that direction.
        if (mean == 0.0) {
            r.t = 0.0;
            r.p_one_sided = 0.5;
        } else {
            r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
            r.p_one_sided = mean > 0.0 ? 0.0 : 1.0;
        }
        return r;
    }
    r.t = mean / (sd / std::sqrt(double(n)));
    r.p_one_sided = 1.0 - student_t_cdf(r.t, double(n - 1));
    return r;
}

}  // namespace crab
