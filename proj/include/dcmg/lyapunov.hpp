#pragma once

// Passivity and Lyapunov diagnostics about a known equilibrium.
//
// With the consensus controller engaged the closed loop has storage
//   H_t = 1/2 xt^T Q xt + 1/2 xt_c^T k_I^-1 xt_c
// (tildes are deviations from the equilibrium) and
//   dH_t/dt = -dH^T T dH,  dH = [I_G; I_E; V_N] deviations,
//   T = blockdiag(R_G + k_P (2a) L (2a), R_E, G - P / (Vbar V)).
// With the controller off the storage is the plant part alone and the
// generator block of T is R_G + R_D.

#include "dcmg/mg_model.hpp"
#include "dcmg/secondary_control.hpp"

#include <Eigen/Dense>

#include <vector>

namespace dcmg {

struct LyapunovContext {
    const MicrogridSpec* spec = nullptr;
    PhysicalState equilibrium;
    Eigen::VectorXd x_c_bar;  // deviation reference for the controller state
    std::vector<bool> gen_active;
    LoadProfile loads;
    bool secondary_enabled = false;

    Eigen::MatrixXd t_gen;    // generator block of T over active units
    double t_gen_min_eig = 0.0;
    double t_line_min = 0.0;
    std::vector<int> active;
    Eigen::VectorXd v_bar;

    /// `laplacian` is the effective (masked) Laplacian over all generators.
    static LyapunovContext make(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                const Eigen::MatrixXd& laplacian, const PhysicalState& equilibrium,
                                const Eigen::VectorXd& x_c_bar, const std::vector<bool>& gen_active,
                                const LoadProfile& loads, bool secondary_enabled);
};

struct LyapunovPoint {
    double h = 0.0;        // plant storage about the equilibrium, J
    double h_c = 0.0;      // controller storage, J
    double h_t = 0.0;      // total, J
    double dh_t = 0.0;     // analytic rate, W
    double min_t_eig = 0.0;
    double min_margin = 0.0;
    bool in_domain = true;
    Eigen::VectorXd margins;
};

/// Evaluates into `out` (reuses its storage).
void evaluate_lyapunov(const LyapunovContext& ctx, const PhysicalState& state,
                       const Eigen::VectorXd& x_c, LyapunovPoint& out);

LyapunovPoint evaluate_lyapunov(const LyapunovContext& ctx, const PhysicalState& state,
                                const Eigen::VectorXd& x_c);

}  // namespace dcmg
