#include "dcmg/errors.hpp"
#include "dcmg/mg_model.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <random>

using namespace dcmg;

namespace {

PhysicalState random_state(const MicrogridSpec& s, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd ig(s.n_gens()), il(s.n_lines()), vb(s.n_buses());
    for (auto& v : ig) v = 5.0 * u(rng);
    for (auto& v : il) v = 3.0 * u(rng);
    for (auto& v : vb) v = s.v_nom + 5.0 * u(rng);
    return PhysicalState::from_coenergy(s, ig, il, vb);
}

}  // namespace

TEST_CASE("two-bus right-hand side against hand-computed branch and node equations") {
    const MicrogridSpec s = fixtures::two_bus();
    const LoadProfile loads = nominal_loads(s);
    // I_G = (4, 2) A, I_E = 1.5 A, V = (47, 46) V, u = (0.3, -0.1) V
    const PhysicalState x = PhysicalState::from_coenergy(s, Eigen::Vector2d(4, 2), Eigen::VectorXd::Constant(1, 1.5),
                                                         Eigen::Vector2d(47, 46));
    const PhysicalState dx = dynamics_rhs(s, x, Eigen::Vector2d(0.3, -0.1), loads);
    // gen 1: 48 - 0.5*4 + 0.3 - 47 - 0.1*4 = -1.1
    CHECK(dx.phi_gen[0] == doctest::Approx(-1.1).epsilon(1e-14));
    // gen 2: 48 - 0.25*2 - 0.1 - 46 - 0.2*2 = 1.0
    CHECK(dx.phi_gen[1] == doctest::Approx(1.0).epsilon(1e-14));
    // line: 47 - 46 - 0.4*1.5 = 0.4
    CHECK(dx.phi_line[0] == doctest::Approx(0.4).epsilon(1e-14));
    // bus 1: 4 - 1.5 - (0.05*47 + 0.5 + 20/47)
    CHECK(dx.q_bus[0] == doctest::Approx(4.0 - 1.5 - (0.05 * 47 + 0.5 + 20.0 / 47)).epsilon(1e-14));
    // bus 2: 2 + 1.5 - (0.1*46 + 1.0)
    CHECK(dx.q_bus[1] == doctest::Approx(2.0 + 1.5 - (0.1 * 46 + 1.0)).epsilon(1e-14));
}

TEST_CASE("port-Hamiltonian matrices: J skew, R symmetric positive semidefinite") {
    const auto b = fixtures::canonical();
    const PortHamiltonian ph = assemble_ph(b.spec, nominal_loads(b.spec));
    const Eigen::MatrixXd J = ph.J();
    const Eigen::MatrixXd R = ph.R();
    CHECK((J + J.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((R - R.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(R).eigenvalues().minCoeff() >= 0.0);
    CHECK(ph.Q.rows() == 22);
    // DG 1 connector: R = 0.25 ohm, droop 0.2
    CHECK(R(0, 0) == doctest::Approx(0.45));
    CHECK(ph.E[0] == 48.0);
}

TEST_CASE("direct right-hand side equals the port-Hamiltonian form with the CPL input map") {
    const auto b = fixtures::canonical();
    const LoadProfile loads = nominal_loads(b.spec, true, true, true);
    const PortHamiltonian ph = assemble_ph(b.spec, loads);
    Eigen::VectorXd p(b.spec.n_buses());
    for (int k = 0; k < p.size(); ++k) p[k] = loads[k].power;
    std::mt19937 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const PhysicalState x = random_state(b.spec, rng);
        Eigen::VectorXd u(6);
        for (auto& v : u) v = std::uniform_real_distribution<double>(-2, 2)(rng);
        const Eigen::VectorXd pdot = ph.F * ph.Q * x.stacked() + cpl_input_map(b.spec, x) * p + ph.g * u + ph.E;
        const Eigen::VectorXd direct = dynamics_rhs(b.spec, x, u, loads).stacked();
        CHECK((pdot - direct).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, direct.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("canonical parameters in SI units after the per-unit conversion") {
    const auto b = fixtures::canonical();
    CHECK(b.spec.gens[0].r_conn == doctest::Approx(0.25));
    CHECK(b.spec.gens[0].l_conn == doctest::Approx(25e-6));
    CHECK(b.spec.lines[1].resistance == doctest::Approx(1.0));
    CHECK(b.spec.lines[5].inductance == doctest::Approx(150e-6));
    CHECK(b.spec.buses[0].power == doctest::Approx(61.44));
    CHECK(b.spec.buses[1].power == doctest::Approx(92.16));
    CHECK(b.spec.buses[7].power == doctest::Approx(184.32));
    CHECK(b.spec.buses[6].conductance == doctest::Approx(0.1));
}

TEST_CASE("constant-power load at or below the voltage floor is an error") {
    const MicrogridSpec s = fixtures::two_bus();
    const PhysicalState x = PhysicalState::from_coenergy(s, Eigen::Vector2d::Zero(), Eigen::VectorXd::Zero(1),
                                                         Eigen::Vector2d(0.5, 48));
    CHECK_THROWS_AS(dynamics_rhs(s, x, Eigen::Vector2d::Zero(), nominal_loads(s), {}, 1.25), SingularityError);
    try {
        dynamics_rhs(s, x, Eigen::Vector2d::Zero(), nominal_loads(s), {}, 1.25);
    } catch (const SingularityError& e) {
        CHECK(e.bus() == 0);
        CHECK(e.time() == 1.25);
    }
    // Bus 2 has no CPL, so a low voltage there is fine.
    const PhysicalState y = PhysicalState::from_coenergy(s, Eigen::Vector2d::Zero(), Eigen::VectorXd::Zero(1),
                                                         Eigen::Vector2d(48, 0.5));
    CHECK_NOTHROW(dynamics_rhs(s, y, Eigen::Vector2d::Zero(), nominal_loads(s)));
}

TEST_CASE("unplugged generator neither moves nor injects") {
    const MicrogridSpec s = fixtures::two_bus();
    const PhysicalState x = PhysicalState::from_coenergy(s, Eigen::Vector2d(0, 3), Eigen::VectorXd::Constant(1, 1.0),
                                                         Eigen::Vector2d(47, 46));
    const PhysicalState dx = dynamics_rhs(s, x, Eigen::Vector2d(5, 0), nominal_loads(s), {false, true});
    CHECK(dx.phi_gen[0] == 0.0);
    CHECK(dx.q_bus[0] == doctest::Approx(-1.0 - (0.05 * 47 + 0.5 + 20.0 / 47)));
    const Eigen::VectorXd v = generator_voltages(s, x, Eigen::Vector2d(5, 0.5), {false, true});
    CHECK(v[0] == doctest::Approx(47.0));
    CHECK(v[1] == doctest::Approx(48 - 0.25 * 3 + 0.5));
}

TEST_CASE("incremental dissipation and the passivity domain") {
    const MicrogridSpec s = fixtures::two_bus();
    const LoadProfile loads = nominal_loads(s);
    const PhysicalState eq = PhysicalState::from_coenergy(s, Eigen::Vector2d(1, 1), Eigen::VectorXd::Zero(1),
                                                          Eigen::Vector2d(40, 40));
    const PhysicalState x = PhysicalState::from_coenergy(s, Eigen::Vector2d(1, 1), Eigen::VectorXd::Zero(1),
                                                         Eigen::Vector2d(9, 40));
    const Eigen::MatrixXd r = incremental_dissipation(s, x, eq, loads);
    CHECK(r(0, 0) == doctest::Approx(0.6));
    CHECK(r(2, 2) == doctest::Approx(0.4));
    CHECK(r(3, 3) == doctest::Approx(0.05 - 20.0 / (40 * 9)));
    CHECK(r(4, 4) == doctest::Approx(0.1));

    DomainCheck d = in_passivity_domain(s, x, eq, loads);
    CHECK(d.margins[0] == doctest::Approx(0.05 - 20.0 / 360));
    CHECK_FALSE(d.inside);
    const PhysicalState y = PhysicalState::from_coenergy(s, Eigen::Vector2d(1, 1), Eigen::VectorXd::Zero(1),
                                                         Eigen::Vector2d(41, 40));
    d = in_passivity_domain(s, y, eq, loads);
    CHECK(d.inside);
    CHECK(d.margins[0] == doctest::Approx(0.05 - 20.0 / (40 * 41)));

    // Without the CPL every state is inside.
    const LoadProfile no_p = nominal_loads(s, true, true, false);
    const PhysicalState z = PhysicalState::from_coenergy(s, Eigen::Vector2d(1, 1), Eigen::VectorXd::Zero(1),
                                                         Eigen::Vector2d(-5, 40));
    CHECK(in_passivity_domain(s, z, eq, no_p).inside);
    CHECK_FALSE(in_passivity_domain(s, z, eq, loads).inside);

    PhysicalState bad = eq;
    bad.q_bus[1] = -1.0;
    CHECK_THROWS_AS(incremental_dissipation(s, x, bad, loads), EquilibriumError);
}

TEST_CASE("stored energy is one half x^T Q x") {
    const MicrogridSpec s = fixtures::two_bus();
    const PhysicalState x = PhysicalState::from_coenergy(s, Eigen::Vector2d(2, -1), Eigen::VectorXd::Constant(1, 3),
                                                         Eigen::Vector2d(10, 20));
    const double expected = 0.5 * (1e-3 * 4 + 2e-3 * 1 + 4e-4 * 9 + 1e-2 * 100 + 2e-2 * 400);
    CHECK(hamiltonian(s, x) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(incremental_hamiltonian(s, x, x) == 0.0);
    const PortHamiltonian ph = assemble_ph(s);
    const Eigen::VectorXd xs = x.stacked();
    CHECK(hamiltonian(s, x) == doctest::Approx(0.5 * xs.dot(ph.Q * xs)).epsilon(1e-14));
}

TEST_CASE("model validation rejects nonphysical parameters") {
    MicrogridSpec s = fixtures::two_bus();
    s.buses[0].capacitance = 0.0;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = fixtures::two_bus();
    s.gens[1].alpha = -0.1;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = fixtures::two_bus();
    s.lines.clear();
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = fixtures::two_bus();
    s.graph.line_endpoints = {{0, 0}};
    CHECK_THROWS_AS(s.validate(), StructuralError);
}
