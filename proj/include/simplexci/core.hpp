#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace simplexci {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Bad input: wrong dimensions, values outside their domain, malformed data.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown: ill-conditioned matrices, solver iteration caps.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kSimplexTol = 1e-10;

/// Membership in {w : w >= 0, sum(w) = 1} up to `tol`.
inline bool on_simplex(const Vector& w, double tol = kSimplexTol) {
    if (w.size() == 0 || !w.allFinite()) return false;
    if (w.minCoeff() < -tol) return false;
    return std::abs(w.sum() - 1.0) <= tol;
}

inline void require_simplex(const Vector& w, const char* what) {
    if (!on_simplex(w)) {
        throw ValidationError(std::string(what) + ": point is not on the simplex");
    }
}

inline std::string format_point(const Vector& w) {
    std::string s = "(";
    for (Index i = 0; i < w.size(); ++i) {
        if (i) s += ", ";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.10g", w[i]);
        s += buf;
    }
    return s + ")";
}

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// visited exactly once, so writes into a pre-sized output keep their order.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (count + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace simplexci
