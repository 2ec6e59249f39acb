#include "dcmg/secondary_control.hpp"

#include "dcmg/errors.hpp"

#include <cmath>
#include <string>

namespace dcmg {

void ControllerConfig::validate(const std::vector<GeneratorSpec>& gens) const {
    if (!(k_p >= 0.0) || !std::isfinite(k_p)) {
        throw ValidationError("controller.k_p must be finite and >= 0");
    }
    if (comm.n_nodes() != static_cast<int>(gens.size())) {
        throw ValidationError("communication graph size does not match the generator count");
    }
    for (std::size_t i = 0; i < gens.size(); ++i) {
        if (!(gens[i].k_i > 0.0)) {
            throw ValidationError("generator " + std::to_string(i + 1) + " k_i must be positive");
        }
    }
    if (sample_period && !(*sample_period > 0.0)) {
        throw ValidationError("controller.sample_period must be positive");
    }
}

double incremental_cost(const GeneratorSpec& gen, double current) {
    return 2.0 * gen.alpha * current + gen.beta;
}

AgentOutput agent_step(const GeneratorSpec& gen, const ControllerConfig& cfg, double x_c,
                       double current, const NeighborView& view) {
    if (!cfg.enabled) return {};
    const double lambda = incremental_cost(gen, current);
    double z_lambda = 0.0;
    double z_c = 0.0;
    for (const auto& m : view) {
        z_lambda += m.weight * (m.lambda - lambda);
        z_c += m.weight * (m.x_c - x_c);
    }
    return {gen.droop * current + 2.0 * gen.alpha * (cfg.k_p * z_lambda - z_c), gen.k_i * z_lambda};
}

void build_neighbor_view(int i, const CommGraph& effective, const Eigen::VectorXd& lambda,
                         const Eigen::VectorXd& x_c, NeighborView& out) {
    out.clear();
    for (int j = 0; j < effective.n_nodes(); ++j) {
        const double a = effective.weight(i, j);
        if (a > 0.0) out.push_back({j, a, lambda[j], x_c[j]});
    }
}

ControllerOutput controller_rhs(const ControllerConfig& cfg,
                                const std::vector<GeneratorSpec>& gens,
                                const Eigen::VectorXd& x_c, const Eigen::VectorXd& i_gen,
                                const std::vector<bool>& gen_active,
                                const Eigen::MatrixXd& link_on) {
    const int n = static_cast<int>(gens.size());
    const std::vector<bool> mask = gen_active.empty() ? std::vector<bool>(n, true) : gen_active;
    const CommGraph effective = link_on.size() == 0 ? cfg.comm.masked(mask)
                                                    : cfg.comm.masked(mask, link_on);
    Eigen::VectorXd lambda(n);
    for (int i = 0; i < n; ++i) lambda[i] = incremental_cost(gens[i], i_gen[i]);

    ControllerOutput out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    NeighborView view;
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        build_neighbor_view(i, effective, lambda, x_c, view);
        const AgentOutput a = agent_step(gens[i], cfg, x_c[i], i_gen[i], view);
        out.u[i] = a.u;
        out.dx_c[i] = a.dx_c;
    }
    return out;
}

CbiMatrices cbi_matrices(const std::vector<GeneratorSpec>& gens, const ControllerConfig& cfg) {
    return cbi_matrices(gens, cfg.k_p, laplacian(cfg.comm));
}

CbiMatrices cbi_matrices(const std::vector<GeneratorSpec>& gens, double k_p,
                         const Eigen::MatrixXd& lap) {
    const auto n = static_cast<Eigen::Index>(gens.size());
    Eigen::VectorXd two_alpha(n);
    Eigen::VectorXd beta(n);
    Eigen::VectorXd droop(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        two_alpha[i] = 2.0 * gens[i].alpha;
        beta[i] = gens[i].beta;
        droop[i] = gens[i].droop;
    }
    const Eigen::MatrixXd w_inv = two_alpha.asDiagonal();
    CbiMatrices m;
    m.w = two_alpha.cwiseInverse().asDiagonal();
    m.r = -Eigen::MatrixXd(droop.asDiagonal()) + k_p * w_inv * lap * w_inv;
    m.b = -k_p * w_inv * lap * beta;
    m.b_c = beta;
    return m;
}

Eigen::VectorXd controller_output(const Eigen::MatrixXd& lap, const Eigen::VectorXd& x_c) {
    return -lap * x_c;
}

InterconnectionOutput interconnect(const CbiMatrices& m, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& y_c) {
    const Eigen::MatrixXd w_inv = m.w.diagonal().cwiseInverse().asDiagonal();
    return {-m.r * y - w_inv * y_c + m.b, w_inv.transpose() * y + m.b_c};
}

}  // namespace dcmg
