#pragma once

#include <cstdio>
#include <ostream>
#include <string>

#include <json.hpp>

#include "controller.hpp"

// Plot-ready CSV writers (long format, header row) and the run summary.

namespace arzno {

namespace detail {

inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace detail

/// One row per time step. The kernel_ns column is the only timing-dependent one.
inline void write_trace_csv(std::ostream& os, const SimTrace& tr, const std::string& hash) {
    os << "# config_hash=" << hash << "\n";
    os << "t,u_norm,v_norm,e_norm,eps_norm,U,V1,V2,V3,V4,V,S,rho_dev_norm,speed_dev_norm,z1,c_err_norm,"
          "c_hat_max,ku_t_norm,k_bar,l_bar,kernel_ns\n";
    for (const auto& r : tr.rows) {
        using detail::csv_num;
        os << csv_num(r.t) << ',' << csv_num(r.u_norm) << ',' << csv_num(r.v_norm) << ',' << csv_num(r.e_norm) << ','
           << csv_num(r.eps_norm) << ',' << csv_num(r.control) << ',' << csv_num(r.v1) << ',' << csv_num(r.v2) << ','
           << csv_num(r.v3) << ',' << csv_num(r.v4) << ',' << csv_num(r.v) << ',' << csv_num(r.s) << ','
           << csv_num(r.rho_dev_norm) << ',' << csv_num(r.speed_dev_norm) << ',' << csv_num(r.z1) << ','
           << csv_num(r.c_err_norm) << ',' << csv_num(r.c_hat_max) << ',' << csv_num(r.kt_norm) << ','
           << csv_num(r.k_bar) << ',' << csv_num(r.l_bar) << ',' << csv_num(r.kernel_ns) << '\n';
    }
}

/// x-t field snapshots in long format: t, x (m), density (veh/km), speed (m/s).
inline void write_snapshots_csv(std::ostream& os, const SimTrace& tr, const TrafficParams& p, const std::string& hash) {
    const double v_star = equilibrium_velocity(p, p.rho_star);
    os << "# config_hash=" << hash << "\n";
    os << "t,x,density,speed\n";
    for (const auto& s : tr.snapshots) {
        for (std::size_t i = 0; i < s.rho_dev.size(); ++i) {
            using detail::csv_num;
            os << csv_num(s.t) << ',' << csv_num(tr.x[i] * p.length) << ','
               << csv_num((p.rho_star + s.rho_dev[i]) * 1000.0) << ',' << csv_num(v_star + s.speed_dev[i]) << '\n';
        }
    }
}

/// Convergence flags, final norms and timing totals.
inline nlohmann::json run_summary(const SimTrace& tr, const std::string& mode, const std::string& hash) {
    const auto& first = tr.rows.front();
    const auto& last = tr.rows.back();
    double e_peak = 0.0, eps_peak = 0.0;
    for (const auto& r : tr.rows) {
        e_peak = std::max(e_peak, r.e_norm);
        eps_peak = std::max(eps_peak, r.eps_norm);
    }
    const double rho_rel = tr.rho0_dev_norm > 0.0 ? last.rho_dev_norm / tr.rho0_dev_norm : 0.0;
    const double speed_rel = tr.speed0_dev_norm > 0.0 ? last.speed_dev_norm / tr.speed0_dev_norm : 0.0;
    const double amp0 = std::max(first.u_norm, first.v_norm);
    const double amp_end = std::max(last.u_norm, last.v_norm);
    nlohmann::json j;
    j["config_hash"] = hash;
    j["mode"] = mode;
    j["t_end"] = last.t;
    j["final"] = {{"rho_dev_rel", rho_rel},
                  {"speed_dev_rel", speed_rel},
                  {"amplitude_ratio", amp0 > 0.0 ? amp_end / amp0 : 0.0},
                  {"u_norm", last.u_norm},
                  {"v_norm", last.v_norm},
                  {"e_norm", last.e_norm},
                  {"eps_norm", last.eps_norm},
                  {"c_err_norm", last.c_err_norm},
                  {"V_ratio", first.v > 0.0 ? last.v / first.v : 0.0}};
    j["converged"] = rho_rel <= 0.02 && speed_rel <= 0.02;
    j["identifier"] = {{"e_peak", e_peak},
                       {"eps_peak", eps_peak},
                       {"e_final_over_peak", e_peak > 0.0 ? last.e_norm / e_peak : 0.0},
                       {"eps_final_over_peak", eps_peak > 0.0 ? last.eps_norm / eps_peak : 0.0}};
    j["certificate"] = {{"a", tr.constants.a},
                        {"delta", tr.constants.delta},
                        {"k", tr.constants.k},
                        {"d", tr.constants.d},
                        {"k1", tr.norm_eq.k1},
                        {"k2", tr.norm_eq.k2},
                        {"c_hat_bound_ok", tr.c_hat_bound_ok},
                        {"V3_max_step_increase_rel", tr.v3_max_increase},
                        {"S_max_over_S0", tr.max_s_ratio},
                        {"ku_t_l2_squared_sum", tr.ku_t_sq_sum}};
    j["timing"] = {{"kernel_refreshes", tr.kernel_refreshes},
                   {"kernel_total_s", tr.kernel_total_ns * 1e-9},
                   {"kernel_mean_us", tr.kernel_refreshes ? tr.kernel_total_ns * 1e-3 / tr.kernel_refreshes : 0.0},
                   {"wall_s", tr.wall_ns * 1e-9}};
    return j;
}

}  // namespace arzno
