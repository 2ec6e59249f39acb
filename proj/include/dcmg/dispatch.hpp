#pragma once

// Economic dispatch and the closed-loop equilibrium oracle.
//
// The oracle solves the steady-state algebraic equations of the network
// directly (its own residuals and Jacobian); it shares no code path with the
// time-domain right-hand side so the two can check each other.

#include "dcmg/errors.hpp"
#include "dcmg/mg_model.hpp"
#include "dcmg/secondary_control.hpp"

#include <Eigen/Dense>

#include <vector>

namespace dcmg {

struct DispatchSolution {
    double lambda_opt = 0.0;
    Eigen::VectorXd currents;
    double total_cost = 0.0;
};

/// Equal-incremental-cost dispatch for a total current demand (closed form,
/// no generator limits; negative currents are allowed).
DispatchSolution solve_eic(const std::vector<GeneratorSpec>& gens, double demand);

double total_cost(const std::vector<GeneratorSpec>& gens, const Eigen::VectorXd& currents);

struct KktResidual {
    double spread = 0.0;  // max_ij |lambda_i - lambda_j| over active units
    Eigen::VectorXd lambdas;
};

KktResidual kkt_residual(const std::vector<GeneratorSpec>& gens, const Eigen::VectorXd& currents,
                         const std::vector<bool>& gen_active = {});

/// sum w_i V_i / sum w_i with w_i = 1 / (2 alpha_i), over active units.
double weighted_average_voltage(const std::vector<GeneratorSpec>& gens,
                                const Eigen::VectorXd& v_gen,
                                const std::vector<bool>& gen_active = {});

struct NewtonOptions {
    int max_iterations = 50;
    int max_halvings = 8;
    double tolerance = 1e-10;  // infinity norm of the residual
};

struct EquilibriumPoint {
    Eigen::VectorXd v_gen;
    Eigen::VectorXd i_gen;
    Eigen::VectorXd i_line;
    Eigen::VectorXd v_bus;
    double lambda_opt = 0.0;  // NaN for the pure-droop equilibrium
    double residual_norm = 0.0;
    int iterations = 0;
    /// Some bus settled below 0.7 V_nom; CPL networks can have a second root.
    bool low_voltage_branch = false;
    std::vector<bool> gen_active;
};

/// Newton failed to reach the tolerance; carries the last iterate.
class NoEquilibriumError : public EquilibriumError {
public:
    NoEquilibriumError(const std::string& what, EquilibriumPoint last)
        : EquilibriumError(what), last_(std::move(last)) {}

    const EquilibriumPoint& last_iterate() const noexcept { return last_; }

private:
    EquilibriumPoint last_;
};

/// Steady state reached under the consensus controller: equal incremental
/// costs for active units, weighted-average voltage at V_nom, network
/// equations with the given ZIP loads. Inactive units carry no current.
/// Throws EquilibriumError if the active communication subgraph is not
/// connected or an iterate leaves (kVoltageFloor, inf); NoEquilibriumError
/// on divergence.
EquilibriumPoint solve_closed_loop_equilibrium(const MicrogridSpec& spec,
                                               const ControllerConfig& cfg,
                                               const LoadProfile& loads,
                                               const std::vector<bool>& gen_active = {},
                                               const NewtonOptions& opts = {});

/// Steady state with u = 0 (primary droop only).
EquilibriumPoint solve_droop_equilibrium(const MicrogridSpec& spec, const LoadProfile& loads,
                                         const std::vector<bool>& gen_active = {},
                                         const NewtonOptions& opts = {});

PhysicalState to_physical_state(const MicrogridSpec& spec, const EquilibriumPoint& eq);

struct EquilibriumControl {
    Eigen::VectorXd u_bar;
    /// Minimum-norm member of the family x_c = particular + c 1 (active units).
    Eigen::VectorXd x_c_particular;
    std::vector<bool> gen_active;

    /// Family member with the same sum_i x_c,i / k_I,i over active units as
    /// `x_c_now` (that sum is invariant under the controller). Inactive
    /// entries are copied from `x_c_now`.
    Eigen::VectorXd matching(const std::vector<GeneratorSpec>& gens,
                             const Eigen::VectorXd& x_c_now) const;
};

/// Equilibrium input and controller state. `link_on` as in controller_rhs.
/// Throws EquilibriumError if the equilibrium is inconsistent with the
/// interconnection (ybar_c not in the range of the Laplacian).
EquilibriumControl equilibrium_control(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                       const EquilibriumPoint& eq,
                                       const Eigen::MatrixXd& link_on = {});

}  // namespace dcmg
