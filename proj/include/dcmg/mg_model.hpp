#pragma once

// Physical model of a droop-controlled DC microgrid with ZIP loads.
//
// State is kept in energy coordinates x = [phi_G; phi_E; q_N] (flux linkages
// of generator connectors and lines, bus charges). The co-energy variables
// Qx = [I_G; I_E; V_N] are recovered with the accessors on PhysicalState.
// Everything is SI.

#include "dcmg/grid_graph.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace dcmg {

/// CPL current is not evaluated at or below this bus voltage.
inline constexpr double kVoltageFloor = 1.0;

struct GeneratorSpec {
    double droop = 0.0;          // R_D, V/A
    double r_conn = 0.0;         // output connector resistance, ohm
    double l_conn = 0.0;         // output connector inductance, H
    double alpha = 0.0;          // cost quadratic coefficient, $/A^2
    double beta = 0.0;           // cost linear coefficient, $/A
    double gamma = 0.0;          // cost constant, $
    double rated_current = 0.0;  // A
    double k_i = 0.0;            // consensus integral gain
};

struct LineSpec {
    double resistance = 0.0;
    double inductance = 0.0;
};

struct BusSpec {
    double capacitance = 0.0;
    double conductance = 0.0;  // Z part, S
    double current = 0.0;      // I part, A
    double power = 0.0;        // P part, W
};

struct MicrogridSpec {
    ElectricalGraph graph;
    std::vector<GeneratorSpec> gens;
    std::vector<LineSpec> lines;
    std::vector<BusSpec> buses;
    double v_nom = 0.0;

    int n_gens() const { return graph.n_gens(); }
    int n_lines() const { return graph.n_lines(); }
    int n_buses() const { return graph.n_buses; }
    int state_size() const { return n_gens() + n_lines() + n_buses(); }

    /// Throws StructuralError / ValidationError.
    void validate() const;
};

/// ZIP load of one bus with per-component on/off switches.
struct ZipLoad {
    double conductance = 0.0;
    double current = 0.0;
    double power = 0.0;
    bool z_on = true;
    bool i_on = true;
    bool p_on = true;

    double active_conductance() const { return z_on ? conductance : 0.0; }
    double active_current() const { return i_on ? current : 0.0; }
    double active_power() const { return p_on ? power : 0.0; }
};

using LoadProfile = std::vector<ZipLoad>;

/// Bus loads as specified, with the requested components switched on.
LoadProfile nominal_loads(const MicrogridSpec& spec, bool z_on = true, bool i_on = true,
                          bool p_on = true);

struct PhysicalState {
    Eigen::VectorXd phi_gen;
    Eigen::VectorXd phi_line;
    Eigen::VectorXd q_bus;

    static PhysicalState zero(const MicrogridSpec& spec);
    static PhysicalState from_coenergy(const MicrogridSpec& spec, const Eigen::VectorXd& i_gen,
                                       const Eigen::VectorXd& i_line,
                                       const Eigen::VectorXd& v_bus);
    static PhysicalState from_stacked(const MicrogridSpec& spec, std::span<const double> x);

    Eigen::VectorXd gen_currents(const MicrogridSpec& spec) const;
    Eigen::VectorXd line_currents(const MicrogridSpec& spec) const;
    Eigen::VectorXd bus_voltages(const MicrogridSpec& spec) const;

    Eigen::VectorXd stacked() const;
    Eigen::VectorXd coenergy(const MicrogridSpec& spec) const;  // Qx
    bool all_finite() const;
};

/// Matrices of the port-Hamiltonian form  xdot = F dH + g_P(x) P + g u + E.
struct PortHamiltonian {
    Eigen::MatrixXd Q;  // diagonal energy matrix
    Eigen::MatrixXd F;  // J - R
    Eigen::MatrixXd g;  // input map of u (generator rows)
    Eigen::VectorXd E;  // constant sources

    Eigen::MatrixXd J() const { return 0.5 * (F - F.transpose()); }
    Eigen::MatrixXd R() const { return -0.5 * (F + F.transpose()); }
};

PortHamiltonian assemble_ph(const MicrogridSpec& spec);
PortHamiltonian assemble_ph(const MicrogridSpec& spec, const LoadProfile& loads);

/// CPL input map g_P(x): zero except diag{-1/V_k} in the bus block, so that
/// g_P(x) P reproduces the -P_k/V_k term of the charge balance.
Eigen::MatrixXd cpl_input_map(const MicrogridSpec& spec, const PhysicalState& state);

/// Generator terminal voltages V_i = V_nom - R_D I_i + u_i for active units.
/// An unplugged unit reports the voltage of the bus it synchronizes to.
Eigen::VectorXd generator_voltages(const MicrogridSpec& spec, const PhysicalState& state,
                                   const Eigen::VectorXd& u,
                                   const std::vector<bool>& gen_active = {});

/// Time derivative of the physical state, evaluated from the branch and node
/// equations directly. Unplugged generators have zero flux derivative and no
/// current injection. Throws SingularityError when an active CPL sees a bus
/// voltage at or below kVoltageFloor; `t` only labels that error.
PhysicalState dynamics_rhs(const MicrogridSpec& spec, const PhysicalState& state,
                           const Eigen::VectorXd& u, const LoadProfile& loads,
                           const std::vector<bool>& gen_active = {}, double t = 0.0);

/// Allocation-free form over the stacked layout [phi_G; phi_E; q_N].
void dynamics_rhs(const MicrogridSpec& spec, std::span<const double> x,
                  std::span<const double> u, const LoadProfile& loads,
                  const std::vector<bool>& gen_active, double t, std::span<double> dx);

/// Dissipation matrix of the incremental model about `equilibrium`:
/// blockdiag(R_G + R_D, R_E, G - diag(P_k / (Vbar_k V_k))).
/// Throws EquilibriumError if an equilibrium bus charge is not positive.
Eigen::MatrixXd incremental_dissipation(const MicrogridSpec& spec, const PhysicalState& state,
                                        const PhysicalState& equilibrium,
                                        const LoadProfile& loads);

struct DomainCheck {
    bool inside = true;
    Eigen::VectorXd margins;  // G_k - P_k / (Vbar_k V_k), S
};

/// Passivity-domain membership: every bus conductance must dominate the
/// incremental CPL conductance.
DomainCheck in_passivity_domain(const MicrogridSpec& spec, const PhysicalState& state,
                                const PhysicalState& equilibrium, const LoadProfile& loads);

double hamiltonian(const MicrogridSpec& spec, const PhysicalState& state);
double incremental_hamiltonian(const MicrogridSpec& spec, const PhysicalState& state,
                               const PhysicalState& equilibrium);

}  // namespace dcmg
