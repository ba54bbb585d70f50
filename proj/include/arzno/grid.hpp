#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace arzno {

using Field = std::vector<double>;

/// Uniform grid on the normalized road x in [0,1] plus the time stepping.
/// Nodes sit at x_i = i / n_x, i = 0..n_x.
struct GridSpec {
    std::size_t n_x = 60;
    double dt = 0.1;
    double t_end = 300.0;

    std::size_t nodes() const { return n_x + 1; }
    double dx() const { return 1.0 / static_cast<double>(n_x); }
    double x(std::size_t i) const { return static_cast<double>(i) / static_cast<double>(n_x); }
    std::size_t steps() const { return static_cast<std::size_t>(std::llround(t_end / dt)); }

    void validate() const {
        if (n_x < 16) throw DomainError("grid: n_x must be >= 16, got " + std::to_string(n_x));
        if (!(dt > 0.0)) throw DomainError("grid: dt must be positive");
        if (!(t_end > 0.0)) throw DomainError("grid: t_end must be positive");
    }

    /// Rejects timesteps violating dt * max(speed) / dx <= 1. Speeds are in
    /// normalized units (domain lengths per second).
    void check_cfl(double lambda_n, double mu_n) const {
        validate();
        const double courant = dt * std::max(lambda_n, mu_n) / dx();
        if (courant > 1.0 + 1e-12) {
            throw DomainError("grid: CFL violated, courant number " + std::to_string(courant) +
                              " > 1 (reduce dt or n_x)");
        }
    }
};

/// Composite trapezoid weights for n uniform nodes spanning [0, (n-1) h].
inline std::vector<double> trapezoid_weights(std::size_t n, double h) {
    std::vector<double> w(n, h);
    if (n == 1) {
        w[0] = 0.0;
        return w;
    }
    w.front() = 0.5 * h;
    w.back() = 0.5 * h;
    return w;
}

/// Trapezoid integral of f over the first `count` nodes (x_0 .. x_{count-1}).
inline double trapezoid(std::span<const double> f, double h, std::size_t count) {
    if (count < 2) return 0.0;
    double s = 0.5 * (f[0] + f[count - 1]);
    for (std::size_t i = 1; i + 1 < count; ++i) s += f[i];
    return s * h;
}

inline double trapezoid(std::span<const double> f, double h) { return trapezoid(f, h, f.size()); }

/// (int_0^1 f^2 dx)^{1/2} by the trapezoid rule; f sampled on uniform nodes over [0,1].
inline double l2_norm(std::span<const double> f) {
    if (f.size() < 2) return 0.0;
    const double h = 1.0 / static_cast<double>(f.size() - 1);
    double s = 0.5 * (f.front() * f.front() + f.back() * f.back());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i] * f[i];
    return std::sqrt(s * h);
}

inline double l2_norm_squared(std::span<const double> f) {
    const double n = l2_norm(f);
    return n * n;
}

inline double l1_norm(std::span<const double> f) {
    if (f.size() < 2) return 0.0;
    const double h = 1.0 / static_cast<double>(f.size() - 1);
    double s = 0.5 * (std::abs(f.front()) + std::abs(f.back()));
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += std::abs(f[i]);
    return s * h;
}

inline double sup_norm(std::span<const double> f) {
    double m = 0.0;
    for (double v : f) m = std::max(m, std::abs(v));
    return m;
}

/// Piecewise-linear interpolation of uniform samples over [0,1] at x (clamped).
inline double interp_uniform(std::span<const double> samples, double x) {
    const std::size_t n = samples.size();
    if (n == 1) return samples[0];
    const double pos = std::clamp(x, 0.0, 1.0) * static_cast<double>(n - 1);
    std::size_t i = static_cast<std::size_t>(pos);
    if (i >= n - 1) i = n - 2;
    const double t = pos - static_cast<double>(i);
    return samples[i] + t * (samples[i + 1] - samples[i]);
}

/// Resamples a uniform-node field onto `n_out` uniform nodes by linear interpolation.
inline Field resample(std::span<const double> f, std::size_t n_out) {
    Field out(n_out);
    if (n_out == f.size()) {
        std::copy(f.begin(), f.end(), out.begin());
        return out;
    }
    for (std::size_t i = 0; i < n_out; ++i) {
        out[i] = interp_uniform(f, n_out == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n_out - 1));
    }
    return out;
}

inline bool all_finite(std::span<const double> f) {
    return std::all_of(f.begin(), f.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace arzno
