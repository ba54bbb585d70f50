#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deeponet.hpp"
#include "diagnostics.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "kernel.hpp"
#include "model.hpp"
#include "simulation.hpp"

namespace arzno {

enum class KernelSource { ClassicalSolver, NeuralOperator };

struct ControllerConfig {
    KernelSource kernel_source = KernelSource::ClassicalSolver;
    bool open_loop = false;          // U = 0; the identifier still runs
    double kernel_refresh_dt = 0.1;  // seconds between kernel acquisitions
    double rho_gain = 0.01;
    double gamma = 1.0;
    double gamma1 = 1e-2;
    double tau_guess = 60.0;         // c_hat(0) = -1/(2 tau_guess)
    bool identifier_from_state = true;  // u_hat(0) = u(0), v_hat(0) = v(0); zeros otherwise
    TriMesh mesh{41};
    double tol = 1e-8;
    std::size_t max_iter = 200;
    double snapshot_every = 1.0;     // seconds between stored field snapshots; 0 disables
    bool monitor_inverse = true;     // inverse kernels each refresh, for the norm-equivalence constants
    double amp_rho = 0.1;
    double amp_v = 0.01;
    double a3 = 1.0;                 // free constants of the certificate
    double a4 = 1.0;
    double margin = 0.1;

    void validate(const GridSpec& g) const {
        if (!(kernel_refresh_dt >= g.dt * (1.0 - 1e-12))) {
            throw ConfigError("controller: kernel_refresh_dt must be >= dt");
        }
        if (!(rho_gain > 0.0 && gamma > 0.0 && gamma1 > 0.0)) throw ConfigError("controller: gains must be positive");
        if (!(tau_guess > 0.0)) throw ConfigError("controller: tau_guess must be positive");
        if (snapshot_every < 0.0) throw ConfigError("controller: snapshot_every must be non-negative");
        if (!(a3 > 0.0 && a4 > 0.0 && margin > 0.0)) throw ConfigError("diagnostics: a3, a4, margin must be positive");
        mesh.validate();
    }
};

/// sum_k w_ik (K^u(x_i, xi_k) u_hat_k + K^v(x_i, xi_k) v_hat_k): the Volterra
/// integral of row i by the trapezoid rule on [0, x_i].
inline double kernel_row_integral(const GridKernels& gk, std::size_t i, std::span<const double> u_hat,
                                  std::span<const double> v_hat) {
    const double h = 1.0 / static_cast<double>(gk.nodes - 1);
    double s = 0.0;
    for (std::size_t k = 0; k <= i; ++k) {
        s += partial_trapezoid_weight(i, k, h) * (gk.u(i, k) * u_hat[k] + gk.v(i, k) * v_hat[k]);
    }
    return s;
}

namespace detail {

inline void require_grid_kernels(const GridKernels& gk, const IdentifierState& id) {
    if (gk.nodes != id.u_hat.size() || gk.nodes != id.v_hat.size() || gk.ku.size() != gk.nodes * gk.nodes) {
        throw DomainError("controller: kernels sampled on " + std::to_string(gk.nodes) +
                          " nodes, identifier state has " + std::to_string(id.u_hat.size()));
    }
}

}  // namespace detail

/// U = int_0^1 K^u(1,xi) u_hat(xi) + K^v(1,xi) v_hat(xi) dxi.
inline double control_value(const GridKernels& gk, const IdentifierState& id) {
    detail::require_grid_kernels(gk, id);
    return kernel_row_integral(gk, gk.nodes - 1, id.u_hat, id.v_hat);
}

inline double control_value(const KernelPair& kp, const IdentifierState& id, const GridSpec& g) {
    if (id.u_hat.size() != g.nodes()) throw DomainError("control_value: identifier does not match grid");
    return control_value(kernels_on_grid(kp, g.nodes()), id);
}

/// w = u_hat, z = v_hat - int_0^x K^u u_hat - int_0^x K^v v_hat.
inline std::pair<Field, Field> backstepping_transform(const GridKernels& gk, const IdentifierState& id) {
    detail::require_grid_kernels(gk, id);
    Field z(gk.nodes);
    for (std::size_t i = 0; i < gk.nodes; ++i) z[i] = id.v_hat[i] - kernel_row_integral(gk, i, id.u_hat, id.v_hat);
    return {id.u_hat, z};
}

inline std::pair<Field, Field> backstepping_transform(const KernelPair& kp, const IdentifierState& id,
                                                      const GridSpec& g) {
    if (id.u_hat.size() != g.nodes()) throw DomainError("backstepping_transform: identifier does not match grid");
    return backstepping_transform(kernels_on_grid(kp, g.nodes()), id);
}

/// v_hat = z + int_0^x L^u w + int_0^x L^v z with the inverse kernels on the same grid.
inline Field inverse_transform(const GridKernels& inv, std::span<const double> w, std::span<const double> z) {
    if (w.size() != inv.nodes || z.size() != inv.nodes) throw DomainError("inverse_transform: size mismatch");
    Field v(inv.nodes);
    for (std::size_t i = 0; i < inv.nodes; ++i) v[i] = z[i] + kernel_row_integral(inv, i, w, z);
    return v;
}

struct TraceRow {
    double t = 0.0;
    double u_norm = 0.0, v_norm = 0.0;
    double e_norm = 0.0, eps_norm = 0.0;
    double control = 0.0;
    double v1 = 0.0, v2 = 0.0, v3 = 0.0, v4 = 0.0, v = 0.0;
    double s = 0.0;
    double rho_dev_norm = 0.0;    // ||rho - rho*||, veh/m
    double speed_dev_norm = 0.0;  // ||v - v*||, m/s
    double z1 = 0.0;              // z(1,t); v_hat(1,t) holds the previous U, so this is O(dt) with exact kernels
    double c_err_norm = 0.0;      // ||c_hat - c||
    double c_hat_max = 0.0;       // max |c_hat|
    double kernel_ns = 0.0;       // wall time of the kernel acquisition at this step (0 between refreshes)
    double kt_norm = 0.0;         // ||K^u_t|| over the triangle at refreshes
    double k_bar = 0.0;           // sup of the current kernels
    double l_bar = 0.0;           // sup of the current inverse kernels
};

struct Snapshot {
    double t = 0.0;
    Field rho_dev;    // veh/m
    Field speed_dev;  // m/s
};

struct SimTrace {
    std::vector<TraceRow> rows;
    std::vector<Snapshot> snapshots;
    Field x;                     // grid nodes
    double rho0_dev_norm = 0.0;
    double speed0_dev_norm = 0.0;
    double kernel_total_ns = 0.0;
    std::size_t kernel_refreshes = 0;
    double wall_ns = 0.0;
    bool c_hat_bound_ok = true;  // |c_hat| <= c_bar at every node and step
    double v3_max_increase = 0.0;  // max_k (V3(t_{k+1}) - V3(t_k)) / V3(0)
    CertificateConstants constants;
    NormEquivalence norm_eq;     // from the largest K_bar, L_bar seen
    double max_s_ratio = 0.0;    // max_t S(t) / S(0)
    double ku_t_sq_sum = 0.0;    // sum over refreshes of ||K^u_t||^2 dt_refresh
    PlantState final_state;
    IdentifierState final_identifier;
};

/// Called at every kernel refresh with c_hat on the kernel mesh and the kernels acquired from it.
using RefreshHook = std::function<void(double t, std::span<const double> c_mesh, const KernelPair& kp)>;

namespace detail {

inline std::pair<Field, Field> physical_fields(const LinearizedParams& lp, const GridSpec& g, const PlantState& s) {
    Field rho(g.nodes()), sp(g.nodes());
    for (std::size_t i = 0; i < g.nodes(); ++i) std::tie(rho[i], sp[i]) = to_physical(lp, g.x(i), s.u[i], s.v[i]);
    return {rho, sp};
}

}  // namespace detail

/// Closed-loop adaptive backstepping run from the sinusoidal stop-and-go
/// initial condition. Each step: acquire kernels if a refresh is due (c_hat
/// resampled to the kernel mesh), evaluate U from the identifier state, record
/// the diagnostics at t, then step plant and identifier from the state at t
/// and update c_hat from the new errors (semi-implicit in the c_hat / eps
/// coupling). The NO path needs `model`.
inline SimTrace run_closed_loop(const TrafficParams& p, const ControllerConfig& cfg, const GridSpec& g,
                                const DeepONetModel* model = nullptr, const RefreshHook& on_refresh = {}) {
    using clock = std::chrono::steady_clock;
    const auto wall_start = clock::now();

    const LinearizedParams lp = derive_linearized(p);
    g.check_cfl(lp.lambda_n(), lp.mu_n());
    cfg.validate(g);
    const bool use_no = !cfg.open_loop && cfg.kernel_source == KernelSource::NeuralOperator;
    if (use_no && !model) throw ConfigError("controller: neural-operator kernel source needs a trained model");
    std::optional<MeshEvaluator> evaluator;
    if (use_no) evaluator.emplace(*model, cfg.mesh);

    const std::size_t nodes = g.nodes();
    PlantState s;
    std::tie(s.u, s.v) = sinusoidal_initial_state(p, lp, g, cfg.amp_rho, cfg.amp_v);
    IdentifierState id;
    id.rho_gain = cfg.rho_gain;
    id.gamma = cfg.gamma;
    id.gamma1 = cfg.gamma1;
    id.u_hat = cfg.identifier_from_state ? s.u : Field(nodes, 0.0);
    id.v_hat = cfg.identifier_from_state ? s.v : Field(nodes, 0.0);
    id.c_hat = Field(nodes, std::clamp(-1.0 / (2.0 * cfg.tau_guess), -lp.c_bar, lp.c_bar));
    const Field c_true = true_c_sampler(lp, g);

    SimTrace trace;
    trace.x.resize(nodes);
    for (std::size_t i = 0; i < nodes; ++i) trace.x[i] = g.x(i);
    trace.constants = certificate_constants(lp, cfg.a3, cfg.a4, cfg.margin);
    {
        const auto [rho, sp] = detail::physical_fields(lp, g, s);
        trace.rho0_dev_norm = l2_norm(rho);
        trace.speed0_dev_norm = l2_norm(sp);
    }

    const std::size_t steps = g.steps();
    const auto refresh_every = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.kernel_refresh_dt / g.dt)));
    const auto snapshot_every =
        cfg.snapshot_every > 0.0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.snapshot_every / g.dt)))
                                 : 0;
    trace.rows.reserve(steps + 1);

    KernelPair kp = KernelPair::zeros(cfg.mesh);
    std::optional<KernelPair> kp_prev;
    GridKernels gk{nodes, Field(nodes * nodes, 0.0), Field(nodes * nodes, 0.0)};
    double k_bar = 0.0, l_bar = 0.0, k_bar_max = 0.0, l_bar_max = 0.0;
    double v3_0 = 0.0, v3_prev = 0.0, s_0 = 0.0;
    const double c_bar_tol = lp.c_bar * (1.0 + 1e-12);

    for (std::size_t step = 0; step <= steps; ++step) {
        TraceRow row;
        row.t = s.t;

        if (!cfg.open_loop && step % refresh_every == 0 && step < steps) {
            const Field c_mesh = resample(id.c_hat, cfg.mesh.n);
            const auto t0 = clock::now();
            kp = use_no ? evaluator->evaluate(c_mesh) : solve_kernels(c_mesh, lp, cfg.mesh, cfg.tol, cfg.max_iter);
            const auto t1 = clock::now();
            row.kernel_ns = static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
            trace.kernel_total_ns += row.kernel_ns;
            ++trace.kernel_refreshes;
            gk = kernels_on_grid(kp, nodes);
            k_bar = std::max(sup_norm(kp.ku), sup_norm(kp.kv));
            if (kp_prev) {
                const double dt_ref = static_cast<double>(refresh_every) * g.dt;
                row.kt_norm = triangle_l2_norm(kernel_time_derivative(*kp_prev, kp, dt_ref).ku, kp.mesh);
                trace.ku_t_sq_sum += row.kt_norm * row.kt_norm * dt_ref;
            }
            kp_prev = kp;
            if (cfg.monitor_inverse) {
                const GridKernels inv = resolvent_on_grid(gk, cfg.tol, cfg.max_iter);
                l_bar = std::max(sup_norm(inv.ku), sup_norm(inv.kv));
            }
            k_bar_max = std::max(k_bar_max, k_bar);
            l_bar_max = std::max(l_bar_max, l_bar);
            if (on_refresh) on_refresh(s.t, c_mesh, kp);
        }

        const double control = cfg.open_loop ? 0.0 : control_value(gk, id);
        row.control = control;

        // Diagnostics at time t.
        const auto [e, eps] = identifier_errors(s, id);
        Field c_tilde(nodes);
        double c_max = 0.0;
        for (std::size_t i = 0; i < nodes; ++i) {
            c_tilde[i] = c_true[i] - id.c_hat[i];
            c_max = std::max(c_max, std::abs(id.c_hat[i]));
        }
        if (c_max > c_bar_tol) trace.c_hat_bound_ok = false;
        const auto [w, z] = backstepping_transform(gk, id);
        const auto lv = lyapunov_v1_v2(w, z, trace.constants.delta, trace.constants.k, trace.constants.a);
        row.u_norm = l2_norm(s.u);
        row.v_norm = l2_norm(s.v);
        row.e_norm = l2_norm(e);
        row.eps_norm = l2_norm(eps);
        row.v1 = lv.v1;
        row.v2 = lv.v2;
        row.v = lv.v;
        row.v3 = lyapunov_v3(e, eps, c_tilde, cfg.gamma, cfg.gamma1);
        row.v4 = row.v3 + lv.v;
        row.s = global_norm_S(s.u, s.v, id.u_hat, id.v_hat, c_tilde);
        row.z1 = z.back();
        row.c_err_norm = l2_norm(c_tilde);
        row.c_hat_max = c_max;
        row.k_bar = k_bar;
        row.l_bar = l_bar;
        {
            const auto [rho, sp] = detail::physical_fields(lp, g, s);
            row.rho_dev_norm = l2_norm(rho);
            row.speed_dev_norm = l2_norm(sp);
            if (snapshot_every && (step % snapshot_every == 0 || step == steps)) {
                trace.snapshots.push_back({s.t, rho, sp});
            }
        }
        if (step == 0) {
            v3_0 = row.v3;
            s_0 = row.s;
        } else if (v3_0 > 0.0) {
            trace.v3_max_increase = std::max(trace.v3_max_increase, (row.v3 - v3_prev) / v3_0);
        }
        v3_prev = row.v3;
        if (s_0 > 0.0) trace.max_s_ratio = std::max(trace.max_s_ratio, row.s / s_0);
        trace.rows.push_back(row);

        if (step == steps) break;

        IdentifierState next_id = step_identifier(id, s, control, lp, g);
        s = step_plant(s, lp, control, g);
        id = update_c_hat(next_id, s, g, lp.c_bar);
    }

    trace.norm_eq = norm_equivalence(trace.constants, cfg.gamma, cfg.gamma1, k_bar_max, l_bar_max);
    trace.final_state = s;
    trace.final_identifier = id;
    trace.wall_ns = static_cast<double>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - wall_start).count());
    return trace;
}

/// Per-time relative L2 gap between two runs on the same grid and schedule:
/// max(||rho_a - rho_b|| / ||rho_b||, ||v_a - v_b|| / ||v_b||) with full
/// (equilibrium + perturbation) density and speed, taken at the stored snapshots.
inline std::vector<std::pair<double, double>> trajectory_gap(const SimTrace& a, const SimTrace& b,
                                                             const TrafficParams& p) {
    if (a.snapshots.size() != b.snapshots.size()) throw DomainError("trajectory_gap: snapshot schedules differ");
    const double v_star = equilibrium_velocity(p, p.rho_star);
    std::vector<std::pair<double, double>> out;
    out.reserve(a.snapshots.size());
    for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
        const auto& sa = a.snapshots[k];
        const auto& sb = b.snapshots[k];
        if (sa.rho_dev.size() != sb.rho_dev.size()) throw DomainError("trajectory_gap: grids differ");
        Field dr(sa.rho_dev.size()), dv(dr.size()), rb(dr.size()), vb(dr.size());
        for (std::size_t i = 0; i < dr.size(); ++i) {
            dr[i] = sa.rho_dev[i] - sb.rho_dev[i];
            dv[i] = sa.speed_dev[i] - sb.speed_dev[i];
            rb[i] = p.rho_star + sb.rho_dev[i];
            vb[i] = v_star + sb.speed_dev[i];
        }
        out.emplace_back(sa.t, std::max(l2_norm(dr) / l2_norm(rb), l2_norm(dv) / l2_norm(vb)));
    }
    return out;
}

/// Table-style state errors between two runs: max and mean absolute
/// difference over all snapshot nodes, density in veh/km, speed in km/h.
struct StateErrorReport {
    double density_max = 0.0, density_mean = 0.0;
    double speed_max = 0.0, speed_mean = 0.0;
};

inline StateErrorReport state_errors(const SimTrace& a, const SimTrace& b) {
    if (a.snapshots.size() != b.snapshots.size()) throw DomainError("state_errors: snapshot schedules differ");
    StateErrorReport r;
    double sd = 0.0, ss = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
        for (std::size_t i = 0; i < a.snapshots[k].rho_dev.size(); ++i) {
            const double d = std::abs(a.snapshots[k].rho_dev[i] - b.snapshots[k].rho_dev[i]) * 1000.0;
            const double s = std::abs(a.snapshots[k].speed_dev[i] - b.snapshots[k].speed_dev[i]) * 3.6;
            r.density_max = std::max(r.density_max, d);
            r.speed_max = std::max(r.speed_max, s);
            sd += d;
            ss += s;
            ++count;
        }
    }
    if (count) {
        r.density_mean = sd / static_cast<double>(count);
        r.speed_mean = ss / static_cast<double>(count);
    }
    return r;
}

}  // namespace arzno
