#include "dcmg/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dcmg {

LyapunovContext LyapunovContext::make(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                      const Eigen::MatrixXd& lap, const PhysicalState& equilibrium,
                                      const Eigen::VectorXd& x_c_bar,
                                      const std::vector<bool>& gen_active,
                                      const LoadProfile& loads, bool secondary_enabled) {
    LyapunovContext ctx;
    ctx.spec = &spec;
    ctx.equilibrium = equilibrium;
    ctx.x_c_bar = x_c_bar;
    ctx.gen_active = gen_active.empty() ? std::vector<bool>(spec.n_gens(), true) : gen_active;
    ctx.loads = loads;
    ctx.secondary_enabled = secondary_enabled;
    for (int i = 0; i < spec.n_gens(); ++i) {
        if (ctx.gen_active[i]) ctx.active.push_back(i);
    }
    const auto na = static_cast<Eigen::Index>(ctx.active.size());
    ctx.t_gen = Eigen::MatrixXd::Zero(na, na);
    for (Eigen::Index a = 0; a < na; ++a) {
        const auto& g = spec.gens[ctx.active[a]];
        ctx.t_gen(a, a) = g.r_conn + (secondary_enabled ? 0.0 : g.droop);
        if (!secondary_enabled) continue;
        for (Eigen::Index b = 0; b < na; ++b) {
            const auto& h = spec.gens[ctx.active[b]];
            ctx.t_gen(a, b) +=
                cfg.k_p * 2.0 * g.alpha * lap(ctx.active[a], ctx.active[b]) * 2.0 * h.alpha;
        }
    }
    ctx.t_gen_min_eig = na > 0 ? Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                                     ctx.t_gen, Eigen::EigenvaluesOnly)
                                     .eigenvalues()
                                     .minCoeff()
                               : std::numeric_limits<double>::infinity();
    ctx.t_line_min = std::numeric_limits<double>::infinity();
    for (const auto& l : spec.lines) ctx.t_line_min = std::min(ctx.t_line_min, l.resistance);
    ctx.v_bar = equilibrium.bus_voltages(spec);
    return ctx;
}

void evaluate_lyapunov(const LyapunovContext& ctx, const PhysicalState& state,
                       const Eigen::VectorXd& x_c, LyapunovPoint& out) {
    const MicrogridSpec& spec = *ctx.spec;
    const auto na = static_cast<Eigen::Index>(ctx.active.size());
    double h = 0.0;
    double rate = 0.0;

    // Generator connectors: quadratic form with the full T block.
    double gen_form = 0.0;
    for (Eigen::Index a = 0; a < na; ++a) {
        const int i = ctx.active[a];
        const double l = spec.gens[i].l_conn;
        const double di = (state.phi_gen[i] - ctx.equilibrium.phi_gen[i]) / l;
        h += 0.5 * l * di * di;
        for (Eigen::Index b = 0; b < na; ++b) {
            const int k = ctx.active[b];
            const double dk = (state.phi_gen[k] - ctx.equilibrium.phi_gen[k]) / spec.gens[k].l_conn;
            gen_form += di * ctx.t_gen(a, b) * dk;
        }
    }
    rate -= gen_form;

    for (int j = 0; j < spec.n_lines(); ++j) {
        const double l = spec.lines[j].inductance;
        const double dj = (state.phi_line[j] - ctx.equilibrium.phi_line[j]) / l;
        h += 0.5 * l * dj * dj;
        rate -= spec.lines[j].resistance * dj * dj;
    }

    out.margins.resize(spec.n_buses());
    out.in_domain = true;
    double min_bus = std::numeric_limits<double>::infinity();
    for (int k = 0; k < spec.n_buses(); ++k) {
        const double c = spec.buses[k].capacitance;
        const double v = state.q_bus[k] / c;
        const double dv = v - ctx.v_bar[k];
        h += 0.5 * c * dv * dv;
        const double p = ctx.loads[k].active_power();
        const double g = ctx.loads[k].active_conductance();
        double entry = g;
        if (p != 0.0) {
            const double denom = ctx.v_bar[k] * v;
            entry = denom > 0.0 ? g - p / denom : -std::numeric_limits<double>::infinity();
            if (!(entry > 0.0)) out.in_domain = false;
        }
        out.margins[k] = entry;
        min_bus = std::min(min_bus, entry);
        rate -= entry * dv * dv;
    }

    double h_c = 0.0;
    if (ctx.secondary_enabled) {
        for (int i : ctx.active) {
            const double d = x_c[i] - ctx.x_c_bar[i];
            h_c += 0.5 * d * d / spec.gens[i].k_i;
        }
    }

    out.h = h;
    out.h_c = h_c;
    out.h_t = h + h_c;
    out.dh_t = rate;
    out.min_margin = min_bus;
    out.min_t_eig = std::min({ctx.t_gen_min_eig, ctx.t_line_min, min_bus});
}

LyapunovPoint evaluate_lyapunov(const LyapunovContext& ctx, const PhysicalState& state,
                                const Eigen::VectorXd& x_c) {
    LyapunovPoint p;
    evaluate_lyapunov(ctx, state, x_c, p);
    return p;
}

}  // namespace dcmg
