#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>

#include "errors.hpp"
#include "grid.hpp"
#include "model.hpp"

namespace arzno {

/// Riemann-coordinate plant fields on the grid nodes.
struct PlantState {
    Field u;
    Field v;
    double t = 0.0;
};

/// Passive identifier: estimates of (u, v) and of the coefficient c(x).
struct IdentifierState {
    Field u_hat;
    Field v_hat;
    Field c_hat;
    double rho_gain = 0.01;
    double gamma = 1.0;
    double gamma1 = 1e-2;
};

namespace detail {

inline void require_size(std::span<const double> f, const GridSpec& g, const char* name) {
    if (f.size() != g.nodes()) {
        throw DomainError(std::string("field ") + name + " has " + std::to_string(f.size()) +
                          " nodes, grid expects " + std::to_string(g.nodes()));
    }
}

inline void require_finite(std::span<const double> f, double t, const char* name) {
    if (!all_finite(f)) throw InstabilityError(std::string("non-finite values in ") + name, t);
}

}  // namespace detail

/// Estimation errors e = u - u_hat, eps = v - v_hat.
inline std::pair<Field, Field> identifier_errors(const PlantState& s, const IdentifierState& id) {
    Field e(s.u.size()), eps(s.v.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] = s.u[i] - id.u_hat[i];
        eps[i] = s.v[i] - id.v_hat[i];
    }
    return {e, eps};
}

/// One explicit first-order upwind step of
///   u_t = -lambda u_x,  v_t = mu v_x + c(x) u,  u(0) = r v(0),  v(1) = U.
inline PlantState step_plant(const PlantState& s, const LinearizedParams& lp, double control, const GridSpec& g) {
    detail::require_size(s.u, g, "u");
    detail::require_size(s.v, g, "v");
    const std::size_t n = g.n_x;
    const double a = lp.lambda_n() * g.dt / g.dx();
    const double b = lp.mu_n() * g.dt / g.dx();

    PlantState next{Field(n + 1), Field(n + 1), s.t + g.dt};
    for (std::size_t i = 1; i <= n; ++i) next.u[i] = s.u[i] - a * (s.u[i] - s.u[i - 1]);
    for (std::size_t i = 0; i < n; ++i) {
        const double source = lp.c_true(g.x(i)) * s.u[i];
        next.v[i] = s.v[i] + b * (s.v[i + 1] - s.v[i]) + g.dt * source;
    }
    next.v[n] = control;
    next.u[0] = lp.r * next.v[0];

    detail::require_finite(next.u, next.t, "plant u");
    detail::require_finite(next.v, next.t, "plant v");
    return next;
}

/// Advances u_hat and v_hat with the same upwind scheme as the plant, driven by
/// the measured plant state and the correction rho * error * ||(u,v)||^2.
/// Only the field estimates change; c_hat is advanced by update_c_hat.
inline IdentifierState step_identifier(const IdentifierState& id, const PlantState& s, double control,
                                       const LinearizedParams& lp, const GridSpec& g) {
    detail::require_size(id.u_hat, g, "u_hat");
    detail::require_size(id.v_hat, g, "v_hat");
    detail::require_size(id.c_hat, g, "c_hat");
    const std::size_t n = g.n_x;
    const double a = lp.lambda_n() * g.dt / g.dx();
    const double b = lp.mu_n() * g.dt / g.dx();
    const double state_sq = l2_norm_squared(s.u) + l2_norm_squared(s.v);

    IdentifierState next = id;
    for (std::size_t i = 1; i <= n; ++i) {
        const double e = s.u[i] - id.u_hat[i];
        next.u_hat[i] = id.u_hat[i] - a * (id.u_hat[i] - id.u_hat[i - 1]) + g.dt * (id.rho_gain * e * state_sq);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double eps = s.v[i] - id.v_hat[i];
        next.v_hat[i] = id.v_hat[i] + b * (id.v_hat[i + 1] - id.v_hat[i]) +
                        g.dt * (id.c_hat[i] * s.u[i] + id.rho_gain * eps * state_sq);
    }
    next.v_hat[n] = control;
    next.u_hat[0] = lp.r * next.v_hat[0];

    detail::require_finite(next.u_hat, s.t + g.dt, "identifier u_hat");
    detail::require_finite(next.v_hat, s.t + g.dt, "identifier v_hat");
    return next;
}

/// Pointwise projection onto [-c_bar, c_bar]: the raw update passes unless the
/// estimate sits on the bound and the update points outward.
inline double project_update(double update, double estimate, double c_bar) {
    if ((estimate >= c_bar && update > 0.0) || (estimate <= -c_bar && update < 0.0)) return 0.0;
    return update;
}

/// Forward-Euler step of c_hat_t = Proj{gamma1 e^{gamma x} eps u, c_hat}.
/// The result is clamped to the bound so a finite step cannot overshoot it.
inline IdentifierState update_c_hat(const IdentifierState& id, const PlantState& s, const GridSpec& g,
                                    double c_bar) {
    detail::require_size(id.c_hat, g, "c_hat");
    if (!(id.gamma > 0.0 && id.gamma1 > 0.0)) throw DomainError("update_c_hat: gains must be positive");
    IdentifierState next = id;
    for (std::size_t i = 0; i < g.nodes(); ++i) {
        const double eps = s.v[i] - id.v_hat[i];
        const double direction = id.gamma1 * std::exp(id.gamma * g.x(i)) * eps * s.u[i];
        const double c = id.c_hat[i] + g.dt * project_update(direction, id.c_hat[i], c_bar);
        next.c_hat[i] = std::clamp(c, -c_bar, c_bar);
    }
    return next;
}

}  // namespace arzno
