#include "dcmg/dispatch.hpp"
#include "dcmg/errors.hpp"
#include "dcmg/sim_engine.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <random>

using namespace dcmg;

namespace {

// Network steady state without CPLs is linear. Unknowns [I_G; I_E; V_N; u];
// with `closed_loop` the extra rows are equal incremental costs and the
// weighted voltage average, otherwise u = 0.
Eigen::VectorXd linear_oracle(const MicrogridSpec& s, const LoadProfile& loads, bool closed_loop) {
    const int ng = s.n_gens(), ne = s.n_lines(), nb = s.n_buses();
    const int n = 2 * ng + ne + nb;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    const int oE = ng, oV = ng + ne, oU = ng + ne + nb;
    for (int i = 0; i < ng; ++i) {
        A(i, i) = -(s.gens[i].droop + s.gens[i].r_conn);
        A(i, oV + s.graph.gen_bus[i]) = -1.0;
        A(i, oU + i) = 1.0;
        rhs[i] = -s.v_nom;
    }
    for (int j = 0; j < ne; ++j) {
        const auto [a, b] = s.graph.line_endpoints[j];
        A(oE + j, oV + a) = 1.0;
        A(oE + j, oV + b) = -1.0;
        A(oE + j, oE + j) = -s.lines[j].resistance;
    }
    for (int k = 0; k < nb; ++k) {
        A(oV + k, oV + k) = -loads[k].active_conductance();
        rhs[oV + k] = loads[k].active_current();
    }
    for (int i = 0; i < ng; ++i) A(oV + s.graph.gen_bus[i], i) += 1.0;
    for (int j = 0; j < ne; ++j) {
        A(oV + s.graph.line_endpoints[j].first, oE + j) -= 1.0;
        A(oV + s.graph.line_endpoints[j].second, oE + j) += 1.0;
    }
    if (closed_loop) {
        for (int i = 1; i < ng; ++i) {
            A(oU + i - 1, i) = 2.0 * s.gens[i].alpha;
            A(oU + i - 1, 0) = -2.0 * s.gens[0].alpha;
            rhs[oU + i - 1] = s.gens[0].beta - s.gens[i].beta;
        }
        for (int i = 0; i < ng; ++i) {
            const double w = 1.0 / (2.0 * s.gens[i].alpha);
            A(oU + ng - 1, oU + i) = w;
            A(oU + ng - 1, i) = -w * s.gens[i].droop;
        }
    } else {
        for (int i = 0; i < ng; ++i) A(oU + i, oU + i) = 1.0;
    }
    return A.fullPivLu().solve(rhs);
}

}  // namespace

TEST_CASE("two-unit dispatch against the closed form") {
    const MicrogridSpec s = fixtures::two_bus();
    // lambda = (D + sum beta/2a) / sum 1/2a = (10 + 1.25) / 7.5
    const DispatchSolution d = solve_eic(s.gens, 10.0);
    CHECK(d.lambda_opt == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(d.currents[0] == doctest::Approx(6.5).epsilon(1e-14));
    CHECK(d.currents[1] == doctest::Approx(3.5).epsilon(1e-14));
    CHECK(d.total_cost == doctest::Approx(8.325).epsilon(1e-14));
    CHECK(total_cost(s.gens, d.currents) == doctest::Approx(8.325).epsilon(1e-14));
    CHECK(kkt_residual(s.gens, d.currents).spread < 1e-14);
}

TEST_CASE("proportional cost preset shares the load in proportion to ratings") {
    std::vector<GeneratorSpec> gens(3);
    const double rated[] = {15.0, 6.0, 12.0};
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        gens[i].alpha = 0.5 / rated[i];
        gens[i].beta = 0.0;
        sum += rated[i];
    }
    const DispatchSolution d = solve_eic(gens, sum);
    CHECK(d.lambda_opt == doctest::Approx(1.0).epsilon(1e-14));
    for (int i = 0; i < 3; ++i) CHECK(d.currents[i] == doctest::Approx(rated[i]).epsilon(1e-14));
}

TEST_CASE("dispatch optimum is a minimum on the constraint set") {
    const auto b = fixtures::canonical();
    std::mt19937 rng(2);
    std::normal_distribution<double> nd;
    const DispatchSolution d = solve_eic(b.spec.gens, 30.0);
    CHECK(d.currents.sum() == doctest::Approx(30.0).epsilon(1e-13));
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd dir(6);
        for (auto& v : dir) v = nd(rng);
        dir.array() -= dir.mean();
        CHECK(total_cost(b.spec.gens, d.currents + 0.1 * dir) > d.total_cost);
    }
}

TEST_CASE("KKT spread ignores inactive units") {
    const MicrogridSpec s = fixtures::two_bus();
    const Eigen::Vector2d i(1.0, 7.0);
    CHECK(kkt_residual(s.gens, i).spread == doctest::Approx(std::abs(0.4 - 2.9)));
    CHECK(kkt_residual(s.gens, i, {true, false}).spread == 0.0);
    CHECK(weighted_average_voltage(s.gens, Eigen::Vector2d(50, 44)) ==
          doctest::Approx((5 * 50.0 + 2.5 * 44.0) / 7.5));
    CHECK(weighted_average_voltage(s.gens, Eigen::Vector2d(50, 44), {false, true}) == doctest::Approx(44.0));
}

TEST_CASE("closed-loop equilibrium without CPLs matches an independent linear solve") {
    const auto b = fixtures::canonical();
    const LoadProfile loads = nominal_loads(b.spec, true, true, false);
    const EquilibriumPoint eq = solve_closed_loop_equilibrium(b.spec, b.cfg, loads);
    const Eigen::VectorXd ref = linear_oracle(b.spec, loads, true);
    for (int i = 0; i < 6; ++i) CHECK(eq.i_gen[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    for (int j = 0; j < 8; ++j) CHECK(eq.i_line[j] == doctest::Approx(ref[6 + j]).epsilon(1e-9));
    for (int k = 0; k < 8; ++k) CHECK(eq.v_bus[k] == doctest::Approx(ref[14 + k]).epsilon(1e-12));

    // Equal incremental costs at the dispatch optimum of the delivered current.
    const DispatchSolution d = solve_eic(b.spec.gens, eq.i_gen.sum());
    CHECK(eq.lambda_opt == doctest::Approx(d.lambda_opt).epsilon(1e-11));
    CHECK(kkt_residual(b.spec.gens, eq.i_gen).spread < 1e-11);
    CHECK(weighted_average_voltage(b.spec.gens, eq.v_gen) == doctest::Approx(48.0).epsilon(1e-13));

    // Frozen from the linear solve above.
    CHECK(eq.lambda_opt == doctest::Approx(1.160961129).epsilon(1e-9));
    CHECK(eq.v_bus[0] == doctest::Approx(50.84).epsilon(1e-4));
    CHECK(eq.v_bus[7] == doctest::Approx(43.02).epsilon(1e-4));
    CHECK(eq.i_gen[0] == doctest::Approx(6.631).epsilon(1e-4));
    CHECK_FALSE(eq.low_voltage_branch);
}

TEST_CASE("droop equilibrium without CPLs matches an independent linear solve") {
    const auto b = fixtures::canonical();
    const LoadProfile loads = nominal_loads(b.spec, true, true, false);
    const EquilibriumPoint eq = solve_droop_equilibrium(b.spec, loads);
    const Eigen::VectorXd ref = linear_oracle(b.spec, loads, false);
    for (int i = 0; i < 6; ++i) CHECK(eq.i_gen[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    for (int k = 0; k < 8; ++k) CHECK(eq.v_bus[k] == doctest::Approx(ref[14 + k]).epsilon(1e-12));
    for (int i = 0; i < 6; ++i) {
        CHECK(eq.v_gen[i] == doctest::Approx(48.0 - b.spec.gens[i].droop * eq.i_gen[i]).epsilon(1e-13));
    }
    // Primary droop alone leaves the costs unequal and the average below nominal.
    CHECK(kkt_residual(b.spec.gens, eq.i_gen).spread > 0.1);
    CHECK(weighted_average_voltage(b.spec.gens, eq.v_gen) < 48.0);
}

TEST_CASE("closed-loop equilibrium with CPLs and with a unit out") {
    const auto b = fixtures::canonical();
    const EquilibriumPoint on = solve_closed_loop_equilibrium(b.spec, b.cfg, nominal_loads(b.spec));
    CHECK(on.lambda_opt == doctest::Approx(1.934313741).epsilon(1e-9));
    CHECK(on.v_bus[7] == doctest::Approx(38.47).epsilon(1e-3));
    CHECK(on.residual_norm < 1e-10);

    std::vector<bool> active(6, true);
    active[3] = false;
    const EquilibriumPoint out =
        solve_closed_loop_equilibrium(b.spec, b.cfg, nominal_loads(b.spec, true, true, false), active);
    CHECK(out.i_gen[3] == 0.0);
    CHECK(out.lambda_opt == doctest::Approx(1.297869077).epsilon(1e-9));
    CHECK(kkt_residual(b.spec.gens, out.i_gen, active).spread < 1e-11);
    CHECK(weighted_average_voltage(b.spec.gens, out.v_gen, active) == doctest::Approx(48.0).epsilon(1e-13));
}

TEST_CASE("disconnected communication subgraph has no closed-loop equilibrium") {
    const auto b = fixtures::canonical();
    ControllerConfig cfg = b.cfg;
    // Unit 4 only talks to 3 and 6; taking out 3 and 6 isolates it.
    std::vector<bool> active(6, true);
    active[2] = false;
    active[5] = false;
    CHECK_THROWS_AS(solve_closed_loop_equilibrium(b.spec, cfg, nominal_loads(b.spec, true, true, false), active),
                    EquilibriumError);
    cfg.comm = CommGraph::from_links(6, {{0, 1}, {1, 2}, {3, 4}, {4, 5}});
    CHECK_THROWS_AS(solve_closed_loop_equilibrium(b.spec, cfg, nominal_loads(b.spec, true, true, false)),
                    EquilibriumError);
}

TEST_CASE("equilibrium control input and controller state") {
    const auto b = fixtures::canonical();
    ControllerConfig cfg = b.cfg;
    cfg.enabled = true;
    const LoadProfile loads = nominal_loads(b.spec, true, true, false);
    const EquilibriumPoint eq = solve_closed_loop_equilibrium(b.spec, cfg, loads);
    const EquilibriumControl ec = equilibrium_control(b.spec, cfg, eq);
    for (int i = 0; i < 6; ++i) {
        CHECK(ec.u_bar[i] ==
              doctest::Approx(eq.v_gen[i] - 48.0 + b.spec.gens[i].droop * eq.i_gen[i]).epsilon(1e-12));
    }
    Eigen::VectorXd x_now(6);
    x_now << 0.3, -0.1, 0.7, 0.2, 0.0, -0.4;
    const Eigen::VectorXd xc = ec.matching(b.spec.gens, x_now);
    double s0 = 0.0, s1 = 0.0;
    for (int i = 0; i < 6; ++i) {
        s0 += x_now[i] / b.spec.gens[i].k_i;
        s1 += xc[i] / b.spec.gens[i].k_i;
    }
    CHECK(s1 == doctest::Approx(s0).epsilon(1e-12));

    // (xbar, xbar_c) is a rest point of the time-domain right-hand side.
    const ControllerOutput co = controller_rhs(cfg, b.spec.gens, xc, eq.i_gen);
    for (int i = 0; i < 6; ++i) CHECK(co.u[i] == doctest::Approx(ec.u_bar[i]).epsilon(1e-9));

    SystemState st = initial_state(b.spec, b.cfg, b.scenario);
    st.secondary_enabled = true;
    st.phys = to_physical_state(b.spec, eq);
    st.ctrl.x_c = xc;
    const Eigen::VectorXd f = closed_loop_rhs(b.spec, cfg, b.scenario, st, stack_state(st));
    CHECK(f.cwiseAbs().maxCoeff() < 1e-8);
}
