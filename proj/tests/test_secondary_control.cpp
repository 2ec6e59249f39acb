#include "dcmg/dispatch.hpp"
#include "dcmg/errors.hpp"
#include "dcmg/secondary_control.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <random>

using namespace dcmg;

TEST_CASE("incremental cost is 2 alpha I + beta; proportional preset gives 1 at rated current") {
    GeneratorSpec g;
    g.alpha = 0.08;
    g.beta = 0.1;
    CHECK(incremental_cost(g, 5.0) == doctest::Approx(0.9));
    for (double rated : {15.0, 6.0, 12.0}) {
        GeneratorSpec p;
        p.alpha = 0.5 / rated;
        p.beta = 0.0;
        CHECK(incremental_cost(p, rated) == doctest::Approx(1.0));
    }
}

TEST_CASE("agent law against a hand-computed two-neighbour case") {
    GeneratorSpec g;
    g.droop = 0.3;
    g.alpha = 0.1;
    g.beta = 0.2;
    g.k_i = 40.0;
    ControllerConfig cfg;
    cfg.k_p = 2.0;
    cfg.enabled = true;
    // own lambda = 2*0.1*3 + 0.2 = 0.8
    const NeighborView view{{1, 1.0, 1.0, 0.5}, {2, 0.5, 0.6, -0.2}};
    const AgentOutput out = agent_step(g, cfg, 0.1, 3.0, view);
    const double z_l = 1.0 * (1.0 - 0.8) + 0.5 * (0.6 - 0.8);   // 0.1
    const double z_c = 1.0 * (0.5 - 0.1) + 0.5 * (-0.2 - 0.1);  // 0.25
    CHECK(out.u == doctest::Approx(0.3 * 3.0 + 0.2 * (2.0 * z_l - z_c)).epsilon(1e-14));
    CHECK(out.dx_c == doctest::Approx(40.0 * z_l).epsilon(1e-14));

    cfg.enabled = false;
    const AgentOutput off = agent_step(g, cfg, 0.1, 3.0, view);
    CHECK(off.u == 0.0);
    CHECK(off.dx_c == 0.0);
}

TEST_CASE("scalar law equals the control-by-interconnection matrix form") {
    const auto b = fixtures::canonical();
    ControllerConfig cfg = b.cfg;
    cfg.enabled = true;
    const CbiMatrices m = cbi_matrices(b.spec.gens, cfg);
    const Eigen::MatrixXd lap = laplacian(cfg.comm);
    Eigen::VectorXd k_i(6);
    for (int i = 0; i < 6; ++i) k_i[i] = b.spec.gens[i].k_i;
    std::mt19937 rng(11);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd I(6), xc(6);
        for (int i = 0; i < 6; ++i) {
            I[i] = 8.0 * nd(rng);
            xc[i] = 2.0 * nd(rng);
        }
        const ControllerOutput s = controller_rhs(cfg, b.spec.gens, xc, I);
        const InterconnectionOutput c = interconnect(m, I, controller_output(lap, xc));
        const Eigen::VectorXd dxc = -(k_i.asDiagonal() * (lap * c.u_c)).eval();
        CHECK((s.u - c.u).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, s.u.cwiseAbs().maxCoeff()));
        CHECK((s.dx_c - dxc).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, s.dx_c.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("R_D + r equals k_P (2 alpha) L (2 alpha) and is positive semidefinite") {
    const auto b = fixtures::canonical();
    for (double kp : {0.0, 0.5, 2.0, 10.0}) {
        const CbiMatrices m = cbi_matrices(b.spec.gens, kp, laplacian(b.cfg.comm));
        Eigen::MatrixXd sum = m.r;
        for (int i = 0; i < 6; ++i) sum(i, i) += b.spec.gens[i].droop;
        CHECK((sum - sum.transpose()).cwiseAbs().maxCoeff() < 1e-15);
        CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sum).eigenvalues().minCoeff() > -1e-12);
        CHECK(m.w(0, 0) == doctest::Approx(1.0 / 0.16));
    }
}

TEST_CASE("controller conserves sum x_c / k_I and keeps the weighted voltage average at nominal") {
    const auto b = fixtures::canonical();
    ControllerConfig cfg = b.cfg;
    cfg.enabled = true;
    std::mt19937 rng(5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd I(6), xc(6);
        for (int i = 0; i < 6; ++i) {
            I[i] = 5.0 + 3.0 * nd(rng);
            xc[i] = nd(rng);
        }
        const ControllerOutput out = controller_rhs(cfg, b.spec.gens, xc, I);
        double flow = 0.0;
        Eigen::VectorXd v(6);
        for (int i = 0; i < 6; ++i) {
            flow += out.dx_c[i] / b.spec.gens[i].k_i;
            v[i] = b.spec.v_nom - b.spec.gens[i].droop * I[i] + out.u[i];
        }
        CHECK(std::abs(flow) < 1e-12);
        CHECK(weighted_average_voltage(b.spec.gens, v) == doctest::Approx(48.0).epsilon(1e-13));
    }
}

TEST_CASE("inactive agents and cut links drop out of the exchange") {
    const auto b = fixtures::canonical();
    ControllerConfig cfg = b.cfg;
    cfg.enabled = true;
    Eigen::VectorXd I = Eigen::VectorXd::LinSpaced(6, 1.0, 6.0);
    Eigen::VectorXd xc = Eigen::VectorXd::LinSpaced(6, -1.0, 1.0);
    std::vector<bool> active(6, true);
    active[3] = false;
    const ControllerOutput out = controller_rhs(cfg, b.spec.gens, xc, I, active);
    CHECK(out.u[3] == 0.0);
    CHECK(out.dx_c[3] == 0.0);

    // Unit 3's result must match a run where its links to 4 are simply absent.
    Eigen::MatrixXd link_on = Eigen::MatrixXd::Ones(6, 6);
    link_on(2, 3) = link_on(3, 2) = 0.0;
    const ControllerOutput cut = controller_rhs(cfg, b.spec.gens, xc, I, {}, link_on);
    const ControllerOutput masked = controller_rhs(cfg, b.spec.gens, xc, I, active);
    CHECK(cut.u[2] == doctest::Approx(masked.u[2]));
    CHECK(cut.dx_c[2] == doctest::Approx(masked.dx_c[2]));
}

TEST_CASE("controller configuration validation") {
    const auto b = fixtures::canonical();
    ControllerConfig cfg = b.cfg;
    cfg.k_p = -0.1;
    CHECK_THROWS_AS(cfg.validate(b.spec.gens), ValidationError);
    cfg.k_p = 2.0;
    cfg.sample_period = 0.0;
    CHECK_THROWS_AS(cfg.validate(b.spec.gens), ValidationError);
    cfg.sample_period.reset();
    cfg.comm = CommGraph::from_links(3, {{0, 1}});
    CHECK_THROWS_AS(cfg.validate(b.spec.gens), ValidationError);
}
