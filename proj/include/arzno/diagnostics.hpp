#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "errors.hpp"
#include "grid.hpp"
#include "model.hpp"

// Runtime monitors for the closed-loop stability certificate. All functionals
// use the trapezoid rule on the uniform grid over x in [0,1]. The c_tilde
// field requires the true c(x), so these monitors only make sense in
// simulation.

namespace arzno {

namespace detail {

/// int_0^1 exp(rate x) f(x)^2 dx by the trapezoid rule.
inline double weighted_square_integral(std::span<const double> f, double rate) {
    if (f.size() < 2) return 0.0;
    const std::size_t n = f.size() - 1;
    const double h = 1.0 / static_cast<double>(n);
    double s = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
        const double w = (i == 0 || i == n) ? 0.5 : 1.0;
        s += w * std::exp(rate * static_cast<double>(i) * h) * f[i] * f[i];
    }
    return s * h;
}

}  // namespace detail

struct LyapunovV {
    double v1 = 0.0;
    double v2 = 0.0;
    double v = 0.0;  // v1 + a v2
};

/// V1 = int e^{-delta x} w^2, V2 = int e^{k x} z^2, V = V1 + a V2.
inline LyapunovV lyapunov_v1_v2(std::span<const double> w, std::span<const double> z, double delta, double k,
                                double a) {
    if (!(a > 0.0)) throw DomainError("lyapunov_v1_v2: a must be positive");
    if (w.size() != z.size()) throw DomainError("lyapunov_v1_v2: w and z sizes differ");
    LyapunovV out;
    out.v1 = detail::weighted_square_integral(w, -delta);
    out.v2 = detail::weighted_square_integral(z, k);
    out.v = out.v1 + a * out.v2;
    return out;
}

/// V3 = int e^{-gamma x} e^2 + int e^{gamma x} eps^2 + ||c_tilde||^2 / gamma1.
inline double lyapunov_v3(std::span<const double> e, std::span<const double> eps, std::span<const double> c_tilde,
                          double gamma, double gamma1) {
    if (!(gamma > 0.0 && gamma1 > 0.0)) throw DomainError("lyapunov_v3: gains must be positive");
    return detail::weighted_square_integral(e, -gamma) + detail::weighted_square_integral(eps, gamma) +
           l2_norm_squared(c_tilde) / gamma1;
}

/// S = ||u||^2 + ||v||^2 + ||u_hat||^2 + ||v_hat||^2 + ||c_tilde||^2.
inline double global_norm_S(std::span<const double> u, std::span<const double> v, std::span<const double> u_hat,
                            std::span<const double> v_hat, std::span<const double> c_tilde) {
    return l2_norm_squared(u) + l2_norm_squared(v) + l2_norm_squared(u_hat) + l2_norm_squared(v_hat) +
           l2_norm_squared(c_tilde);
}

/// Admissible kernel-approximation accuracy
///   eps0 = sqrt(2d - 1) / (2 sqrt(mu e^k L1)),  L1 = 2 Lbar^2 + 3 Lbar + 1.
inline double epsilon0_report(double d, double mu, double k, double l_bar) {
    if (!(d > 0.5)) throw DomainError("epsilon0_report: decay rate d must exceed 1/2, got " + std::to_string(d));
    if (!(mu > 0.0)) throw DomainError("epsilon0_report: mu must be positive");
    const double l1 = 2.0 * l_bar * l_bar + 3.0 * l_bar + 1.0;
    return std::sqrt(2.0 * d - 1.0) / (2.0 * std::sqrt(mu * std::exp(k) * l1));
}

/// Weights of the target-system Lyapunov functional.
struct CertificateConstants {
    double a = 0.0;
    double delta = 0.0;
    double k = 0.0;
    double d = 0.0;  // guaranteed decay rate of V = V1 + a V2 (exact kernels)
};

/// a = (lambda r^2 + 1)/mu; delta and k are set `margin` above their lower
/// bounds; d = min(decay coefficient of V1, decay coefficient of V2 / a).
/// Speeds are taken in m/s.
inline CertificateConstants certificate_constants(const LinearizedParams& lp, double a3 = 1.0, double a4 = 1.0,
                                                  double margin = 0.1) {
    const double lam = lp.lambda;
    const double mu = lp.mu;
    CertificateConstants c;
    c.a = (lam * lp.r * lp.r + 1.0) / mu;
    const double v1_loss = 4.0 + 8.0 * a3 * a3 + 4.0 * c.a * (1.0 + a3) * (1.0 + a3);
    c.delta = (1.0 + margin) * std::max(1.0, v1_loss / lam);
    const double k_min = (8.0 * std::exp(-c.delta) * a4 * a4 + c.a * (3.0 + 4.0 * a4 * a4)) / (c.a * mu);
    c.k = (1.0 + margin) * k_min;
    const double rate1 = lam * c.delta - v1_loss;
    const double rate2 = c.a * c.k * mu - c.a * (3.0 + 4.0 * a4 * a4) - 8.0 * std::exp(-c.delta) * a4 * a4;
    c.d = std::min(rate1, rate2 / c.a);
    return c;
}

/// Constants with k1 S <= V4 <= k2 S, where V4 = V3 + V1 + a V2, derived from
/// the weight ranges and the sup-norms of the forward (k_bar) and inverse
/// (l_bar) transform kernels.
struct NormEquivalence {
    double k1 = 0.0;
    double k2 = 0.0;
};

inline NormEquivalence norm_equivalence(const CertificateConstants& cc, double gamma, double gamma1, double k_bar,
                                        double l_bar) {
    const double eg = std::exp(gamma);
    const double ek = std::exp(cc.k);
    NormEquivalence ne;
    ne.k2 = std::max({2.0, 2.0 * eg, 3.0 + 3.0 * cc.a * ek * k_bar * k_bar,
                      2.0 * eg + 3.0 * cc.a * ek * (1.0 + k_bar * k_bar), 1.0 / gamma1});
    const double inv_k1 = std::max({2.0 * eg, 2.0, (3.0 + 9.0 * l_bar * l_bar) * std::exp(cc.delta),
                                    9.0 * (1.0 + l_bar * l_bar) / cc.a, gamma1});
    ne.k1 = 1.0 / inv_k1;
    return ne;
}

}  // namespace arzno
