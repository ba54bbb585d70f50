#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "controller.hpp"
#include "deeponet.hpp"
#include "errors.hpp"
#include "kernel.hpp"
#include "model.hpp"

namespace arzno {

struct TimingStats {
    std::size_t n = 0;
    double median_ns = 0.0;
    double p10_ns = 0.0;
    double p90_ns = 0.0;
    double mean_ns = 0.0;
};

/// Nearest-rank percentiles of a sample of wall times.
inline TimingStats summarize_timings(std::vector<double> ns) {
    TimingStats s;
    s.n = ns.size();
    if (ns.empty()) return s;
    std::sort(ns.begin(), ns.end());
    auto pct = [&](double q) {
        const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(ns.size())));
        return ns[std::clamp<std::size_t>(rank, 1, ns.size()) - 1];
    };
    s.median_ns = ns.size() % 2 ? ns[ns.size() / 2] : 0.5 * (ns[ns.size() / 2 - 1] + ns[ns.size() / 2]);
    s.p10_ns = pct(0.10);
    s.p90_ns = pct(0.90);
    double sum = 0.0;
    for (double v : ns) sum += v;
    s.mean_ns = sum / static_cast<double>(ns.size());
    return s;
}

/// c_hat on the kernel mesh at n kernel refreshes spread evenly over an
/// exact-kernel closed-loop run, i.e. the inputs the controller actually sees.
inline std::vector<Field> closed_loop_inputs(const TrafficParams& p, ControllerConfig ctrl, const GridSpec& g,
                                             std::size_t n) {
    if (n == 0) return {};
    ctrl.kernel_source = KernelSource::ClassicalSolver;
    ctrl.open_loop = false;
    ctrl.monitor_inverse = false;
    ctrl.snapshot_every = 0.0;
    std::vector<Field> all;
    run_closed_loop(p, ctrl, g, nullptr,
                    [&](double, std::span<const double> c, const KernelPair&) { all.emplace_back(c.begin(), c.end()); });
    std::vector<Field> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = all[(k * all.size()) / n];
    return out;
}

struct KernelBenchReport {
    std::size_t n = 0;
    TimingStats solver;
    TimingStats no;
    double speedup = 0.0;       // solver median / NO median
    double max_abs_diff = 0.0;  // largest |K_NO - K_solver| over all inputs, nodes and both heads
    double mean_abs_diff = 0.0;
};

/// Times solve_kernels against the cached-trunk DeepONet evaluator on the
/// same inputs and mesh. Each path runs as its own block of N calls after
/// `warmup` untimed calls; the outputs are then compared pairwise.
inline KernelBenchReport bench_kernels(const DeepONetModel& model, const LinearizedParams& lp, const TriMesh& mesh,
                                       const std::vector<Field>& inputs, std::size_t warmup, double tol,
                                       std::size_t max_iter) {
    using clock = std::chrono::steady_clock;
    KernelBenchReport rep;
    rep.n = inputs.size();
    if (inputs.empty()) return rep;
    const MeshEvaluator eval(model, mesh);
    auto ns_since = [](clock::time_point t0) {
        return static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count());
    };

    std::vector<KernelPair> solved, inferred;
    solved.reserve(inputs.size());
    inferred.reserve(inputs.size());
    std::vector<double> ts, tn;
    ts.reserve(inputs.size());
    tn.reserve(inputs.size());

    for (std::size_t w = 0; w < warmup; ++w) solve_kernels(inputs[w % inputs.size()], lp, mesh, tol, max_iter);
    for (const auto& c : inputs) {
        const auto t0 = clock::now();
        solved.push_back(solve_kernels(c, lp, mesh, tol, max_iter));
        ts.push_back(ns_since(t0));
    }
    for (std::size_t w = 0; w < warmup; ++w) eval.evaluate(inputs[w % inputs.size()]);
    for (const auto& c : inputs) {
        const auto t0 = clock::now();
        inferred.push_back(eval.evaluate(c));
        tn.push_back(ns_since(t0));
    }

    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        for (std::size_t q = 0; q < solved[s].ku.size(); ++q) {
            const double du = std::abs(inferred[s].ku[q] - solved[s].ku[q]);
            const double dv = std::abs(inferred[s].kv[q] - solved[s].kv[q]);
            rep.max_abs_diff = std::max({rep.max_abs_diff, du, dv});
            sum += du + dv;
            count += 2;
        }
    }
    rep.solver = summarize_timings(std::move(ts));
    rep.no = summarize_timings(std::move(tn));
    rep.speedup = rep.no.median_ns > 0.0 ? rep.solver.median_ns / rep.no.median_ns : 0.0;
    rep.mean_abs_diff = count ? sum / static_cast<double>(count) : 0.0;
    return rep;
}

}  // namespace arzno
