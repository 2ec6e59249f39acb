#pragma once

// Distributed consensus-based secondary controller.
//
// Each generator agent i sees only its own measurements plus the pairs
// (lambda_j, x_c_j) received from active neighbours, and produces
//   u_i    = R_D,i I_i + 2 alpha_i (k_P z_i^lambda - z_i^c)
//   xdot_i = k_I,i z_i^lambda
// with z_i^lambda = sum_j a_ij (lambda_j - lambda_i) and
//      z_i^c      = sum_j a_ij (x_c_j - x_c_i).

#include "dcmg/grid_graph.hpp"
#include "dcmg/mg_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace dcmg {

struct ControllerConfig {
    double k_p = 0.0;
    CommGraph comm;
    bool enabled = false;
    /// Sample-and-hold period for neighbour data. Empty means the exchange is
    /// continuous. This goes beyond the ideal-communication controller and is
    /// off unless a scenario asks for it.
    std::optional<double> sample_period;

    /// k_P >= 0, comm size matches, k_I > 0 for every generator.
    void validate(const std::vector<GeneratorSpec>& gens) const;
};

struct ControllerState {
    Eigen::VectorXd x_c;
    std::vector<bool> active_mask;
};

struct NeighborMessage {
    int j = 0;
    double weight = 0.0;
    double lambda = 0.0;
    double x_c = 0.0;
};

using NeighborView = std::vector<NeighborMessage>;

/// lambda = dC/dI = 2 alpha I + beta.
double incremental_cost(const GeneratorSpec& gen, double current);

struct AgentOutput {
    double u = 0.0;
    double dx_c = 0.0;
};

/// One agent's control law. Returns (0, 0) while the controller is disabled.
AgentOutput agent_step(const GeneratorSpec& gen, const ControllerConfig& cfg, double x_c,
                       double current, const NeighborView& view);

/// View of agent i over its active neighbours in `effective` (a graph whose
/// inactive nodes and links have already been zeroed).
void build_neighbor_view(int i, const CommGraph& effective, const Eigen::VectorXd& lambda,
                         const Eigen::VectorXd& x_c, NeighborView& out);

struct ControllerOutput {
    Eigen::VectorXd u;
    Eigen::VectorXd dx_c;
};

/// All agents evaluated synchronously. Inactive agents output u = 0, xdot = 0.
/// `link_on` (n x n, nonzero = up) may be empty for "all links up".
ControllerOutput controller_rhs(const ControllerConfig& cfg,
                                const std::vector<GeneratorSpec>& gens,
                                const Eigen::VectorXd& x_c, const Eigen::VectorXd& i_gen,
                                const std::vector<bool>& gen_active = {},
                                const Eigen::MatrixXd& link_on = {});

/// Control-by-interconnection matrices for the selection
///   w = (2 alpha)^-1, r = -R_D + k_P (2a) L (2a), b = -k_P (2a) L beta, b_c = beta.
struct CbiMatrices {
    Eigen::MatrixXd w;
    Eigen::MatrixXd r;
    Eigen::VectorXd b;
    Eigen::VectorXd b_c;
};

CbiMatrices cbi_matrices(const std::vector<GeneratorSpec>& gens, const ControllerConfig& cfg);
CbiMatrices cbi_matrices(const std::vector<GeneratorSpec>& gens, double k_p,
                         const Eigen::MatrixXd& laplacian);

/// Output of the controller port-Hamiltonian system, y_c = g_c^T dH_c = -L x_c.
Eigen::VectorXd controller_output(const Eigen::MatrixXd& laplacian, const Eigen::VectorXd& x_c);

struct InterconnectionOutput {
    Eigen::VectorXd u;
    Eigen::VectorXd u_c;
};

/// u = -r y - w^-1 y_c + b,  u_c = (w^-1)^T y + b_c.
InterconnectionOutput interconnect(const CbiMatrices& m, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& y_c);

}  // namespace dcmg
