#include <arzno/arzno.hpp>

#include <gtest/gtest.h>

#include <cmath>

#include "property_checks.hpp"

using namespace arzno;

namespace {

const double pi = std::acos(-1.0);

// Pure transport: c is ~1e-300 (tau huge) and no boundary reflection.
LinearizedParams transport_params(double lambda_n, double mu_n) {
    LinearizedParams lp;
    lp.lambda = lambda_n;
    lp.mu = mu_n;
    lp.length = 1.0;
    lp.r = 0.0;
    lp.tau = 1e300;
    lp.v_star = 1.0;
    lp.c_bar = 1.0;
    return lp;
}

}  // namespace

TEST(Norms, L2Trivial) {
    EXPECT_EQ(l2_norm(Field(61, 0.0)), 0.0);
    EXPECT_NEAR(l2_norm(Field(61, 1.0)), 1.0, 1e-15);
}

TEST(Norms, L2OfSineAgainstFineQuadrature) {
    auto sampled = [](std::size_t n) {
        Field f(n + 1);
        for (std::size_t i = 0; i <= n; ++i) f[i] = std::sin(3.0 * pi * static_cast<double>(i) / static_cast<double>(n));
        return f;
    };
    // Oracle: Simpson's rule on 2e5 intervals, independent of the trapezoid code path.
    const std::size_t m = 200000;
    double s = 0.0;
    for (std::size_t i = 0; i <= m; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(m);
        const double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * std::pow(std::sin(3.0 * pi * x), 2);
    }
    const double oracle = std::sqrt(s / (3.0 * static_cast<double>(m)));
    EXPECT_NEAR(oracle, std::sqrt(0.5), 1e-12);
    EXPECT_NEAR(l2_norm(sampled(60)), oracle, 1e-3);
    EXPECT_NEAR(l2_norm(sampled(6000)), oracle, 1e-9);
}

TEST(Grid, CflGuard) {
    GridSpec g;
    const auto lp = derive_linearized(TrafficParams{});
    EXPECT_NO_THROW(g.check_cfl(lp.lambda_n(), lp.mu_n()));
    // dt * mu_n / dx = 0.2 at the defaults; 6 s pushes it above 1
    g.dt = 6.0;
    EXPECT_THROW(g.check_cfl(lp.lambda_n(), lp.mu_n()), DomainError);
    g = GridSpec{};
    g.n_x = 8;
    EXPECT_THROW(g.validate(), DomainError);
}

TEST(Grid, ClosedLoopRejectsCflViolationBeforeStepping) {
    GridSpec g;
    g.dt = 6.0;
    g.t_end = 60.0;
    ControllerConfig cfg;
    cfg.kernel_refresh_dt = 6.0;
    EXPECT_THROW(run_closed_loop(TrafficParams{}, cfg, g), DomainError);
}

TEST(StepPlant, ZeroIsEquilibrium) {
    const auto lp = derive_linearized(TrafficParams{});
    GridSpec g;
    PlantState s{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), 0.0};
    for (int k = 0; k < 10; ++k) s = step_plant(s, lp, 0.0, g);
    EXPECT_EQ(sup_norm(s.u), 0.0);
    EXPECT_EQ(sup_norm(s.v), 0.0);
    EXPECT_NEAR(s.t, 1.0, 1e-12);
}

TEST(StepPlant, PulseAtRightEdgeMovesLeftByMuDt) {
    GridSpec g;
    g.n_x = 100;
    const auto lp = transport_params(1.0, 2.0);
    for (double dt : {0.005, 0.0025}) {  // Courant 1 and 1/2
        g.dt = dt;
        PlantState s{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), 0.0};
        s.v[g.n_x] = 1.0;
        const PlantState next = step_plant(s, lp, 0.0, g);
        double mass = 0.0, moment = 0.0;
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            mass += next.v[i];
            moment += next.v[i] * g.x(i);
        }
        ASSERT_GT(mass, 0.0);
        EXPECT_LE(std::abs(moment / mass - (1.0 - lp.mu_n() * dt)), g.dx() + 1e-12);
    }
}

TEST(StepPlant, BoundaryConditionsApplied) {
    const auto lp = derive_linearized(TrafficParams{});
    GridSpec g;
    PlantState s;
    std::tie(s.u, s.v) = sinusoidal_initial_state(TrafficParams{}, lp, g);
    const PlantState next = step_plant(s, lp, 0.37, g);
    EXPECT_EQ(next.v.back(), 0.37);
    EXPECT_DOUBLE_EQ(next.u.front(), lp.r * next.v.front());
}

TEST(StepPlant, NonFiniteStateRaisesInstabilityWithTime) {
    const auto lp = derive_linearized(TrafficParams{});
    GridSpec g;
    PlantState s{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), 4.2};
    s.u[10] = std::nan("");
    try {
        step_plant(s, lp, 0.0, g);
        FAIL() << "expected InstabilityError";
    } catch (const InstabilityError& e) {
        EXPECT_NEAR(e.time(), 4.3, 1e-12);
        EXPECT_EQ(e.exit_code(), ExitCode::instability);
    }
}

TEST(StepPlant, UpwindConvergesAtFirstOrder) {
    // Smooth compactly supported bumps, fixed Courant number 0.5; error at t = 0.2.
    auto bump = [](double x, double c) {
        const double d = (x - c) / 0.15;
        return std::abs(d) < 1.0 ? std::pow(std::cos(0.5 * pi * d), 4) : 0.0;
    };
    const auto lp = transport_params(1.0, 1.0);
    auto error = [&](std::size_t n) {
        GridSpec g;
        g.n_x = n;
        g.dt = 0.5 / static_cast<double>(n);
        g.t_end = 0.2;
        PlantState s{Field(g.nodes()), Field(g.nodes()), 0.0};
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            s.u[i] = bump(g.x(i), 0.3);
            s.v[i] = bump(g.x(i), 0.7);
        }
        for (std::size_t k = 0; k < g.steps(); ++k) s = step_plant(s, lp, 0.0, g);
        Field eu(g.nodes()), ev(g.nodes());
        for (std::size_t i = 0; i < g.nodes(); ++i) {
            eu[i] = s.u[i] - bump(g.x(i), 0.5);
            ev[i] = s.v[i] - bump(g.x(i), 0.5);
        }
        return std::hypot(l2_norm(eu), l2_norm(ev));
    };
    const double e1 = error(200), e2 = error(400), e3 = error(800);
    EXPECT_GE(e1 / e2, 1.8);
    EXPECT_GE(e2 / e3, 1.8);
}

TEST(StepIdentifier, ZeroStaysZero) {
    const auto lp = derive_linearized(TrafficParams{});
    GridSpec g;
    PlantState s{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), 0.0};
    IdentifierState id{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), Field(g.nodes(), -0.01)};
    for (int k = 0; k < 20; ++k) id = update_c_hat(step_identifier(id, s, 0.0, lp, g), s, g, lp.c_bar);
    EXPECT_EQ(sup_norm(id.u_hat), 0.0);
    EXPECT_EQ(sup_norm(id.v_hat), 0.0);
}

TEST(StepIdentifier, ExactKnowledgeInvariance) {
    const auto c = checks::exact_knowledge_invariance(TrafficParams{}, 64, 100);
    EXPECT_TRUE(c.pass) << "max |e|,|eps| = " << c.measured;
}

TEST(StepIdentifier, RejectsSizeMismatch) {
    const auto lp = derive_linearized(TrafficParams{});
    GridSpec g;
    PlantState s{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), 0.0};
    IdentifierState id{Field(g.nodes() - 1, 0.0), Field(g.nodes(), 0.0), Field(g.nodes(), 0.0)};
    EXPECT_THROW(step_identifier(id, s, 0.0, lp, g), DomainError);
}

TEST(UpdateCHat, ZeroEpsilonLeavesEstimateUnchanged) {
    GridSpec g;
    PlantState s{Field(g.nodes(), 0.3), Field(g.nodes(), 0.2), 0.0};
    IdentifierState id{Field(g.nodes(), 0.0), s.v, Field(g.nodes(), -0.005)};
    const auto next = update_c_hat(id, s, g, 1.0 / 60.0);
    EXPECT_EQ(next.c_hat, id.c_hat);
}

TEST(UpdateCHat, ProjectionHoldsAtLowerBound) {
    GridSpec g;
    const double c_bar = 1.0 / 60.0;
    // eps * u < 0 everywhere: the raw update points further below -c_bar.
    PlantState s{Field(g.nodes(), 1.0), Field(g.nodes(), -1.0), 0.0};
    IdentifierState id{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), Field(g.nodes(), -c_bar)};
    const auto next = update_c_hat(id, s, g, c_bar);
    for (double c : next.c_hat) EXPECT_EQ(c, -c_bar);
    EXPECT_EQ(project_update(-0.5, -c_bar, c_bar), 0.0);
    EXPECT_EQ(project_update(0.5, c_bar, c_bar), 0.0);
    EXPECT_EQ(project_update(0.5, -c_bar, c_bar), 0.5);
}

TEST(UpdateCHat, ForwardEulerArithmetic) {
    // gamma1 e^{gamma x} eps u = 0.01 at node 0 (x = 0); dt = 0.1 -> +0.001
    GridSpec g;
    PlantState s{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), 0.0};
    IdentifierState id{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), Field(g.nodes(), -0.005)};
    id.gamma1 = 1e-2;
    s.u[0] = 1.0;
    s.v[0] = 1.0;  // eps = 1
    const auto next = update_c_hat(id, s, g, 1.0 / 60.0);
    EXPECT_NEAR(next.c_hat[0] - id.c_hat[0], 0.001, 1e-15);
    for (std::size_t i = 1; i < g.nodes(); ++i) EXPECT_EQ(next.c_hat[i], id.c_hat[i]);
}

TEST(UpdateCHat, FiniteStepNeverOvershootsBound) {
    GridSpec g;
    const double c_bar = 1.0 / 60.0;
    PlantState s{Field(g.nodes(), 5.0), Field(g.nodes(), 5.0), 0.0};
    IdentifierState id{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), Field(g.nodes(), 0.0)};
    id.gamma1 = 1.0;
    const auto next = update_c_hat(id, s, g, c_bar);
    for (double c : next.c_hat) EXPECT_LE(std::abs(c), c_bar);
}

TEST(UpdateCHat, RejectsNonPositiveGains) {
    GridSpec g;
    PlantState s{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), 0.0};
    IdentifierState id{Field(g.nodes(), 0.0), Field(g.nodes(), 0.0), Field(g.nodes(), 0.0)};
    id.gamma1 = 0.0;
    EXPECT_THROW(update_c_hat(id, s, g, 1.0), DomainError);
}
