#pragma once

#include "simplexci/core.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace simplexci {

namespace detail {

// Regularized lower incomplete gamma P(a, x). Series below x = a + 1,
// Lentz continued fraction for the upper tail above.
inline double regularized_gamma_p(double a, double x) {
    if (x <= 0.0) return 0.0;
    const double eps = std::numeric_limits<double>::epsilon();
    const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a;
        double term = 1.0 / a;
        double sum = term;
        for (int i = 0; i < 10000; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * eps) break;
        }
        return sum * std::exp(log_prefix);
    }
    const double tiny = std::numeric_limits<double>::min() / eps;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < eps) break;
    }
    return 1.0 - std::exp(log_prefix) * h;
}

inline void require_probability(double p, const char* what) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError(std::string(what) + ": probability must lie in (0, 1)");
}

}  // namespace detail

/// CDF of the chi-squared distribution with k degrees of freedom.
inline double chi2_cdf(double x, int k) {
    if (k < 1) throw ValidationError("chi2_cdf: degrees of freedom must be >= 1");
    if (x <= 0.0) return 0.0;
    return detail::regularized_gamma_p(0.5 * k, 0.5 * x);
}

inline double chi2_pdf(double x, int k) {
    if (k < 1) throw ValidationError("chi2_pdf: degrees of freedom must be >= 1");
    if (x <= 0.0) return k == 2 ? 0.5 : 0.0;
    const double half = 0.5 * k;
    return std::exp((half - 1.0) * std::log(x) - 0.5 * x - half * std::log(2.0) - std::lgamma(half));
}

/// G^{-1}(p; k). Newton iteration on the CDF inside a shrinking bracket;
/// a step that leaves the bracket falls back to bisection.
inline double chi2_quantile(double p, int k) {
    detail::require_probability(p, "chi2_quantile");
    if (k < 1) throw ValidationError("chi2_quantile: degrees of freedom must be >= 1");

    double lo = 0.0;
    double hi = std::max(1.0, 2.0 * k);
    while (chi2_cdf(hi, k) < p) {
        lo = hi;
        hi *= 2.0;
    }
    double x = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        const double f = chi2_cdf(x, k) - p;
        if (f == 0.0) return x;
        if (f < 0.0) lo = x; else hi = x;
        const double dens = chi2_pdf(x, k);
        double next = (dens > 0.0 && std::isfinite(dens)) ? x - f / dens : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-15 * std::max(1.0, x) || hi - lo <= 1e-15 * std::max(1.0, hi)) {
            return next;
        }
        x = next;
    }
    return x;
}

/// Standard normal quantile: Wichura's AS 241 followed by one Halley step.
/// The upper half is mapped to the lower one (1 - p is exact for p >= 0.5),
/// so the refinement always works on the accurate lower tail of erfc and
/// z_p = -z_{1-p} holds exactly.
inline double normal_quantile(double p) {
    detail::require_probability(p, "normal_quantile");
    if (p > 0.5) return -normal_quantile(1.0 - p);
    const double q = p - 0.5;
    double x;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        x = q *
            (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r + 6.7265770927008700853e+4) * r +
                 4.5921953931549871457e+4) * r + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
              1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
            (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r + 3.9307895800092710610e+4) * r +
                 2.1213794301586595867e+4) * r + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
              4.2313330701600911252e+1) * r + 1.0);
    } else {
        double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
        if (r <= 5.0) {
            r -= 1.6;
            x = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
                     1.27045825245236838258e+0) * r + 3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
                  4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
                (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
                     1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
                  2.05319162663775882187e+0) * r + 1.0);
        } else {
            r -= 5.0;
            x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
                     2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
                  5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
                (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
                     7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                  5.99832206555887937690e-1) * r + 1.0);
        }
        if (q < 0.0) x = -x;
    }
    // Halley refinement against the normal CDF.
    const double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
    const double err = cdf - p;
    const double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

/// Critical values G^{-1}(1 - alpha; k) for k = 1..max_k, computed once.
class ChiSquareTable {
public:
    ChiSquareTable(double alpha, int max_k) : alpha_(alpha) {
        detail::require_probability(alpha, "ChiSquareTable");
        if (max_k < 1) throw ValidationError("ChiSquareTable: max_k must be >= 1");
        values_.reserve(static_cast<std::size_t>(max_k));
        for (int k = 1; k <= max_k; ++k) values_.push_back(chi2_quantile(1.0 - alpha, k));
    }

    double alpha() const { return alpha_; }
    int max_k() const { return static_cast<int>(values_.size()); }
    double operator()(int k) const {
        if (k < 1 || k > max_k()) return chi2_quantile(1.0 - alpha_, k);
        return values_[static_cast<std::size_t>(k - 1)];
    }

private:
    double alpha_;
    std::vector<double> values_;
};

}  // namespace simplexci
