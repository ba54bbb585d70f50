#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "errors.hpp"
#include "grid.hpp"

namespace arzno {

/// Physical constants of the ARZ model (SI: m, s, veh/m).
struct TrafficParams {
    double v_f = 40.0;       // free-flow speed
    double rho_m = 0.160;    // maximum density
    double rho_star = 0.120; // equilibrium density
    double tau = 60.0;       // relaxation time
    double gamma0 = 1.0;     // pressure exponent
    double length = 600.0;   // road length

    /// Pressure scale making V(rho) = v_f - p(rho).
    double c0() const { return v_f / std::pow(rho_m, gamma0); }

    void validate() const {
        auto need = [](bool ok, const char* what) {
            if (!ok) throw DomainError(std::string("traffic params: ") + what);
        };
        need(v_f > 0.0, "v_f must be positive");
        need(rho_m > 0.0, "rho_m must be positive");
        need(rho_star > 0.0 && rho_star < rho_m, "rho_star must lie in (0, rho_m)");
        need(tau > 0.0, "tau must be positive");
        need(gamma0 > 0.0, "gamma0 must be positive");
        need(length > 0.0, "length must be positive");
    }
};

/// Greenshields equilibrium speed V(rho) = v_f (1 - (rho/rho_m)^gamma0).
inline double equilibrium_velocity(const TrafficParams& p, double rho) {
    if (!(rho >= 0.0 && rho <= p.rho_m)) {
        throw DomainError("equilibrium_velocity: density " + std::to_string(rho) + " outside [0, rho_m]");
    }
    return p.v_f * (1.0 - std::pow(rho / p.rho_m, p.gamma0));
}

/// Constants of the linearized 2x2 system in Riemann coordinates.
///
/// Speeds are stored in m/s; the simulator and the kernel equations work on
/// the normalized road x in [0,1] and use lambda_n() / mu_n() (1/s).
struct LinearizedParams {
    double lambda = 0.0;  // u transport speed, v*
    double mu = 0.0;      // v transport speed, gamma0 p* - v*
    double r = 0.0;       // boundary reflection u(0) = r v(0)
    double c_bar = 0.0;   // bound on |c|
    double tau = 0.0;
    double v_star = 0.0;
    double length = 0.0;
    double pressure_slope = 0.0;  // p'(rho*)

    double lambda_n() const { return lambda / length; }
    double mu_n() const { return mu / length; }

    /// c(x) = -(1/tau) exp(-x L / (tau v*)) on normalized x.
    double c_true(double x) const { return -std::exp(-x * length / (tau * v_star)) / tau; }
};

inline LinearizedParams derive_linearized(const TrafficParams& p) {
    p.validate();
    const double v_star = equilibrium_velocity(p, p.rho_star);
    if (!(v_star > 0.0)) throw DomainError("derive_linearized: equilibrium speed must be positive");
    const double p_star = p.c0() * std::pow(p.rho_star, p.gamma0);

    LinearizedParams lp;
    lp.lambda = v_star;
    lp.mu = p.gamma0 * p_star - v_star;
    if (!(lp.mu > 0.0)) {
        throw DomainError("derive_linearized: free-flow regime unsupported (mu = " + std::to_string(lp.mu) +
                          " m/s <= 0)");
    }
    // Reflection coefficient evaluated in SI units exactly as printed.
    lp.r = (p.rho_star * v_star + v_star) / v_star;
    lp.tau = p.tau;
    lp.v_star = v_star;
    lp.length = p.length;
    lp.c_bar = 1.0 / p.tau;
    lp.pressure_slope = p.gamma0 * p_star / p.rho_star;
    return lp;
}

/// c(x_i) at every node of the grid.
inline Field true_c_sampler(const LinearizedParams& lp, const GridSpec& g) {
    Field c(g.nodes());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = lp.c_true(g.x(i));
    return c;
}

inline Field true_c_sampler(const LinearizedParams& lp, std::size_t nodes) {
    Field c(nodes);
    for (std::size_t i = 0; i < nodes; ++i) {
        c[i] = lp.c_true(static_cast<double>(i) / static_cast<double>(nodes - 1));
    }
    return c;
}

// Change of coordinates between physical perturbations (rho - rho*, speed - v*)
// and the Riemann variables (u, v):
//   u = (dv + p'(rho*) drho) exp(x L / (tau v*)),   v = dv.

inline std::pair<double, double> to_riemann(const LinearizedParams& lp, double x, double rho_dev, double speed_dev) {
    const double weight = std::exp(x * lp.length / (lp.tau * lp.v_star));
    return {(speed_dev + lp.pressure_slope * rho_dev) * weight, speed_dev};
}

inline std::pair<double, double> to_physical(const LinearizedParams& lp, double x, double u, double v) {
    const double weight = std::exp(-x * lp.length / (lp.tau * lp.v_star));
    return {(u * weight - v) / lp.pressure_slope, v};
}

/// Riemann fields for the sinusoidal stop-and-go initial condition
/// rho = rho* (1 + amp_rho sin(3 pi x)), speed = v* (1 - amp_v sin(3 pi x)).
inline std::pair<Field, Field> sinusoidal_initial_state(const TrafficParams& p, const LinearizedParams& lp,
                                                        const GridSpec& g, double amp_rho = 0.1,
                                                        double amp_v = 0.01) {
    Field u(g.nodes()), v(g.nodes());
    const double pi = std::acos(-1.0);
    for (std::size_t i = 0; i < g.nodes(); ++i) {
        const double x = g.x(i);
        const double s = std::sin(3.0 * pi * x);
        const auto [uu, vv] = to_riemann(lp, x, amp_rho * s * p.rho_star, -amp_v * s * lp.v_star);
        u[i] = uu;
        v[i] = vv;
    }
    return {u, v};
}

}  // namespace arzno
