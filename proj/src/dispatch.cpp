#include "dcmg/dispatch.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace dcmg {

namespace {

std::vector<bool> full_mask(const std::vector<bool>& mask, int n) {
    return mask.empty() ? std::vector<bool>(n, true) : mask;
}

std::vector<int> active_indices(const std::vector<bool>& mask) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(mask.size()); ++i) {
        if (mask[i]) idx.push_back(i);
    }
    return idx;
}

// Residual and Jacobian of a square algebraic system.
using NewtonSystem = std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd*)>;
using Feasible = std::function<bool(const Eigen::VectorXd&)>;

struct NewtonResult {
    Eigen::VectorXd z;
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
};

NewtonResult damped_newton(const NewtonSystem& system, const Feasible& feasible,
                           Eigen::VectorXd z, const NewtonOptions& opts) {
    const auto n = z.size();
    Eigen::VectorXd r(n);
    Eigen::MatrixXd jac(n, n);
    system(z, r, nullptr);
    NewtonResult out{z, r.lpNorm<Eigen::Infinity>(), 0, false};
    if (out.residual < opts.tolerance) {
        out.converged = true;
        return out;
    }
    for (int it = 1; it <= opts.max_iterations; ++it) {
        system(z, r, &jac);
        const Eigen::VectorXd step = jac.fullPivLu().solve(-r);
        const double norm0 = r.lpNorm<Eigen::Infinity>();

        double scale = 1.0;
        Eigen::VectorXd trial = z + step;
        Eigen::VectorXd r_trial(n);
        bool accepted = false;
        for (int h = 0; h <= opts.max_halvings; ++h) {
            if (feasible(trial)) {
                system(trial, r_trial, nullptr);
                if (r_trial.allFinite() && r_trial.lpNorm<Eigen::Infinity>() < norm0) {
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
            trial = z + scale * step;
        }
        if (!accepted) {
            // No decrease along the Newton direction: keep the full step only
            // if it stays feasible, otherwise report the infeasible iterate.
            trial = z + step;
            if (!feasible(trial)) {
                out.z = trial;
                out.iterations = it;
                throw EquilibriumError("equilibrium iterate left the admissible voltage range");
            }
            system(trial, r_trial, nullptr);
        }
        z = trial;
        out = {z, r_trial.lpNorm<Eigen::Infinity>(), it, false};
        if (out.residual < opts.tolerance) {
            out.converged = true;
            return out;
        }
    }
    return out;
}

// Shared network part of the steady-state equations:
//   line:  V_from - V_to - R_E I_E = 0
//   bus:   sum_j b_kj I_E,j + sum_i b_ki I_G,i - G V - I - P / V = 0
// Unknown layout is caller-defined; offsets select the pieces.
struct NetworkOffsets {
    int i_gen;   // start of active generator currents
    int i_line;  // start of line currents
    int v_bus;   // start of bus voltages
    int row_line;
    int row_bus;
};

void network_residual(const MicrogridSpec& spec, const LoadProfile& loads,
                      const std::vector<int>& act, const NetworkOffsets& o,
                      const Eigen::VectorXd& z, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    const int ne = spec.n_lines();
    const int nn = spec.n_buses();
    for (int j = 0; j < ne; ++j) {
        const auto [from, to] = spec.graph.line_endpoints[j];
        r[o.row_line + j] = z[o.v_bus + from] - z[o.v_bus + to] -
                            spec.lines[j].resistance * z[o.i_line + j];
        if (jac) {
            (*jac)(o.row_line + j, o.v_bus + from) = 1.0;
            (*jac)(o.row_line + j, o.v_bus + to) = -1.0;
            (*jac)(o.row_line + j, o.i_line + j) = -spec.lines[j].resistance;
        }
    }
    for (int k = 0; k < nn; ++k) {
        const double v = z[o.v_bus + k];
        const double p = loads[k].active_power();
        r[o.row_bus + k] = -loads[k].active_conductance() * v - loads[k].active_current() -
                           (p != 0.0 ? p / v : 0.0);
        if (jac) {
            (*jac)(o.row_bus + k, o.v_bus + k) =
                -loads[k].active_conductance() + (p != 0.0 ? p / (v * v) : 0.0);
        }
    }
    for (int j = 0; j < ne; ++j) {
        const auto [from, to] = spec.graph.line_endpoints[j];
        r[o.row_bus + from] -= z[o.i_line + j];
        r[o.row_bus + to] += z[o.i_line + j];
        if (jac) {
            (*jac)(o.row_bus + from, o.i_line + j) = -1.0;
            (*jac)(o.row_bus + to, o.i_line + j) = 1.0;
        }
    }
    for (std::size_t a = 0; a < act.size(); ++a) {
        const int k = spec.graph.gen_bus[act[a]];
        r[o.row_bus + k] += z[o.i_gen + static_cast<int>(a)];
        if (jac) (*jac)(o.row_bus + k, o.i_gen + static_cast<int>(a)) = 1.0;
    }
}

bool bus_voltages_feasible(const Eigen::VectorXd& z, int offset, int nn) {
    for (int k = 0; k < nn; ++k) {
        const double v = z[offset + k];
        if (!std::isfinite(v) || !(v > kVoltageFloor)) return false;
    }
    return true;
}

double load_demand_at(const LoadProfile& loads, double v) {
    double d = 0.0;
    for (const auto& l : loads) {
        d += l.active_conductance() * v + l.active_current() + l.active_power() / v;
    }
    return d;
}

std::vector<GeneratorSpec> subset(const std::vector<GeneratorSpec>& gens,
                                  const std::vector<int>& idx) {
    std::vector<GeneratorSpec> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(gens[i]);
    return out;
}

void flag_low_voltage(const MicrogridSpec& spec, EquilibriumPoint& eq) {
    eq.low_voltage_branch = (eq.v_bus.array() < 0.7 * spec.v_nom).any();
}

}  // namespace

DispatchSolution solve_eic(const std::vector<GeneratorSpec>& gens, double demand) {
    if (gens.empty()) throw ValidationError("dispatch needs at least one generator");
    double sum_w = 0.0;
    double sum_bw = 0.0;
    for (const auto& g : gens) {
        if (!(g.alpha > 0.0)) throw ValidationError("dispatch requires alpha > 0");
        sum_w += 1.0 / (2.0 * g.alpha);
        sum_bw += g.beta / (2.0 * g.alpha);
    }
    DispatchSolution s;
    s.lambda_opt = (demand + sum_bw) / sum_w;
    s.currents.resize(static_cast<Eigen::Index>(gens.size()));
    for (std::size_t i = 0; i < gens.size(); ++i) {
        s.currents[static_cast<Eigen::Index>(i)] = (s.lambda_opt - gens[i].beta) / (2.0 * gens[i].alpha);
    }
    s.total_cost = total_cost(gens, s.currents);
    return s;
}

double total_cost(const std::vector<GeneratorSpec>& gens, const Eigen::VectorXd& currents) {
    double c = 0.0;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        const double x = currents[static_cast<Eigen::Index>(i)];
        c += gens[i].alpha * x * x + gens[i].beta * x + gens[i].gamma;
    }
    return c;
}

KktResidual kkt_residual(const std::vector<GeneratorSpec>& gens, const Eigen::VectorXd& currents,
                         const std::vector<bool>& gen_active) {
    const int n = static_cast<int>(gens.size());
    const auto mask = full_mask(gen_active, n);
    KktResidual out{0.0, Eigen::VectorXd(n)};
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int i = 0; i < n; ++i) {
        out.lambdas[i] = incremental_cost(gens[i], currents[i]);
        if (!mask[i]) continue;
        lo = std::min(lo, out.lambdas[i]);
        hi = std::max(hi, out.lambdas[i]);
    }
    out.spread = hi >= lo ? hi - lo : 0.0;
    return out;
}

double weighted_average_voltage(const std::vector<GeneratorSpec>& gens,
                                const Eigen::VectorXd& v_gen,
                                const std::vector<bool>& gen_active) {
    const int n = static_cast<int>(gens.size());
    const auto mask = full_mask(gen_active, n);
    double num = 0.0;
    double den = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const double w = 1.0 / (2.0 * gens[i].alpha);
        num += w * v_gen[i];
        den += w;
    }
    return num / den;
}

EquilibriumPoint solve_closed_loop_equilibrium(const MicrogridSpec& spec,
                                               const ControllerConfig& cfg,
                                               const LoadProfile& loads,
                                               const std::vector<bool>& gen_active,
                                               const NewtonOptions& opts) {
    spec.validate();
    const int ng = spec.n_gens();
    const int ne = spec.n_lines();
    const int nn = spec.n_buses();
    const auto mask = full_mask(gen_active, ng);
    const auto act = active_indices(mask);
    const int na = static_cast<int>(act.size());
    if (na == 0) throw EquilibriumError("no active generator");
    if (cfg.comm.n_nodes() != ng) {
        throw ValidationError("communication graph size does not match the generator count");
    }
    if (!is_connected(cfg.comm, mask)) {
        throw EquilibriumError(
            "communication graph over the active generators is not connected; consensus "
            "equilibrium is not unique");
    }

    // z = [V_gen(active); I_G(active); I_E; V_N; lambda]
    const NetworkOffsets o{na, 2 * na, 2 * na + ne, 2 * na + 1, 2 * na + 1 + ne};
    const int n = 2 * na + ne + nn + 1;
    const int lam = n - 1;

    const auto make_system = [&](const LoadProfile& ld) -> NewtonSystem {
        return [&, ld](const Eigen::VectorXd& z, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
            r.setZero(n);
            if (jac) jac->setZero(n, n);
            double avg = 0.0;
            for (int a = 0; a < na; ++a) {
                const auto& g = spec.gens[act[a]];
                const int k = spec.graph.gen_bus[act[a]];
                // equal incremental costs
                r[a] = 2.0 * g.alpha * z[na + a] + g.beta - z[lam];
                // connector: V_i - V_bus - R_G I_i
                r[na + 1 + a] = z[a] - z[o.v_bus + k] - g.r_conn * z[na + a];
                avg += (z[a] - spec.v_nom) / (2.0 * g.alpha);
                if (jac) {
                    (*jac)(a, na + a) = 2.0 * g.alpha;
                    (*jac)(a, lam) = -1.0;
                    (*jac)(na + 1 + a, a) = 1.0;
                    (*jac)(na + 1 + a, o.v_bus + k) = -1.0;
                    (*jac)(na + 1 + a, na + a) = -g.r_conn;
                    (*jac)(na, a) = 1.0 / (2.0 * g.alpha);
                }
            }
            // weighted-average voltage formation
            r[na] = avg;
            network_residual(spec, ld, act, o, z, r, jac);
        };
    };
    const Feasible feasible = [&](const Eigen::VectorXd& z) {
        return bus_voltages_feasible(z, o.v_bus, nn);
    };

    const auto active_gens = subset(spec.gens, act);
    const auto guess = [&](const LoadProfile& ld) {
        Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
        const DispatchSolution eic = solve_eic(active_gens, load_demand_at(ld, spec.v_nom));
        for (int a = 0; a < na; ++a) {
            z[a] = spec.v_nom;
            z[na + a] = eic.currents[a];
        }
        for (int k = 0; k < nn; ++k) z[o.v_bus + k] = spec.v_nom;
        z[lam] = eic.lambda_opt;
        return z;
    };

    // Linear (CPL-masked) solve first, then the full problem from there.
    LoadProfile no_cpl = loads;
    bool has_cpl = false;
    for (auto& l : no_cpl) {
        has_cpl = has_cpl || l.active_power() != 0.0;
        l.p_on = false;
    }
    Eigen::VectorXd z0 = guess(loads);
    if (has_cpl) {
        const auto lin = damped_newton(make_system(no_cpl), [](const Eigen::VectorXd&) { return true; },
                                       guess(no_cpl), opts);
        // Keep the network currents of the linear solve; voltages, unit
        // currents and lambda restart from nominal / EIC with the full demand.
        z0.segment(o.i_line, ne) = lin.z.segment(o.i_line, ne);
    }

    const auto res = damped_newton(make_system(loads), feasible, z0, opts);

    EquilibriumPoint eq;
    eq.gen_active = mask;
    eq.v_gen = Eigen::VectorXd::Constant(ng, std::numeric_limits<double>::quiet_NaN());
    eq.i_gen = Eigen::VectorXd::Zero(ng);
    for (int a = 0; a < na; ++a) {
        eq.v_gen[act[a]] = res.z[a];
        eq.i_gen[act[a]] = res.z[na + a];
    }
    eq.i_line = res.z.segment(o.i_line, ne);
    eq.v_bus = res.z.segment(o.v_bus, nn);
    for (int i = 0; i < ng; ++i) {
        if (!mask[i]) eq.v_gen[i] = eq.v_bus[spec.graph.gen_bus[i]];
    }
    eq.lambda_opt = res.z[lam];
    eq.residual_norm = res.residual;
    eq.iterations = res.iterations;
    flag_low_voltage(spec, eq);
    if (!res.converged) {
        throw NoEquilibriumError("closed-loop equilibrium: Newton did not converge (residual " +
                                     std::to_string(res.residual) + ")",
                                 eq);
    }
    return eq;
}

EquilibriumPoint solve_droop_equilibrium(const MicrogridSpec& spec, const LoadProfile& loads,
                                         const std::vector<bool>& gen_active,
                                         const NewtonOptions& opts) {
    spec.validate();
    const int ng = spec.n_gens();
    const int ne = spec.n_lines();
    const int nn = spec.n_buses();
    const auto mask = full_mask(gen_active, ng);
    const auto act = active_indices(mask);
    const int na = static_cast<int>(act.size());

    // z = [I_G(active); I_E; V_N]
    const NetworkOffsets o{0, na, na + ne, na, na + ne};
    const int n = na + ne + nn;
    const NewtonSystem system = [&](const Eigen::VectorXd& z, Eigen::VectorXd& r,
                                    Eigen::MatrixXd* jac) {
        r.setZero(n);
        if (jac) jac->setZero(n, n);
        for (int a = 0; a < na; ++a) {
            const auto& g = spec.gens[act[a]];
            const int k = spec.graph.gen_bus[act[a]];
            r[a] = spec.v_nom - (g.droop + g.r_conn) * z[a] - z[o.v_bus + k];
            if (jac) {
                (*jac)(a, a) = -(g.droop + g.r_conn);
                (*jac)(a, o.v_bus + k) = -1.0;
            }
        }
        network_residual(spec, loads, act, o, z, r, jac);
    };
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < nn; ++k) z[o.v_bus + k] = spec.v_nom;
    const auto res = damped_newton(
        system, [&](const Eigen::VectorXd& zz) { return bus_voltages_feasible(zz, o.v_bus, nn); },
        z, opts);

    EquilibriumPoint eq;
    eq.gen_active = mask;
    eq.i_gen = Eigen::VectorXd::Zero(ng);
    eq.v_gen.resize(ng);
    for (int a = 0; a < na; ++a) eq.i_gen[act[a]] = res.z[a];
    eq.i_line = res.z.segment(o.i_line, ne);
    eq.v_bus = res.z.segment(o.v_bus, nn);
    for (int i = 0; i < ng; ++i) {
        eq.v_gen[i] = mask[i] ? spec.v_nom - spec.gens[i].droop * eq.i_gen[i]
                              : eq.v_bus[spec.graph.gen_bus[i]];
    }
    eq.lambda_opt = std::numeric_limits<double>::quiet_NaN();
    eq.residual_norm = res.residual;
    eq.iterations = res.iterations;
    flag_low_voltage(spec, eq);
    if (!res.converged) {
        throw NoEquilibriumError("droop equilibrium: Newton did not converge", eq);
    }
    return eq;
}

PhysicalState to_physical_state(const MicrogridSpec& spec, const EquilibriumPoint& eq) {
    return PhysicalState::from_coenergy(spec, eq.i_gen, eq.i_line, eq.v_bus);
}

Eigen::VectorXd EquilibriumControl::matching(const std::vector<GeneratorSpec>& gens,
                                             const Eigen::VectorXd& x_c_now) const {
    Eigen::VectorXd x = x_c_now;
    double target = 0.0;
    double base = 0.0;
    double weight = 0.0;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        if (!gen_active[i]) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        target += x_c_now[ii] / gens[i].k_i;
        base += x_c_particular[ii] / gens[i].k_i;
        weight += 1.0 / gens[i].k_i;
    }
    const double shift = (target - base) / weight;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        if (gen_active[i]) x[ii] = x_c_particular[ii] + shift;
    }
    return x;
}

EquilibriumControl equilibrium_control(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                       const EquilibriumPoint& eq,
                                       const Eigen::MatrixXd& link_on) {
    const int ng = spec.n_gens();
    const auto mask = full_mask(eq.gen_active, ng);
    const auto act = active_indices(mask);
    const int na = static_cast<int>(act.size());

    EquilibriumControl out;
    out.gen_active = mask;
    out.u_bar = Eigen::VectorXd::Zero(ng);
    out.x_c_particular = Eigen::VectorXd::Zero(ng);
    for (int i : act) {
        out.u_bar[i] = eq.v_gen[i] - spec.v_nom + spec.gens[i].droop * eq.i_gen[i];
    }

    const CommGraph effective =
        link_on.size() == 0 ? cfg.comm.masked(mask) : cfg.comm.masked(mask, link_on);
    const CommGraph sub = effective.subgraph(act);
    const Eigen::MatrixXd lap = laplacian(sub);
    const auto gens = subset(spec.gens, act);
    const CbiMatrices m = cbi_matrices(gens, cfg.k_p, lap);

    Eigen::VectorXd y(na);
    Eigen::VectorXd u(na);
    for (int a = 0; a < na; ++a) {
        y[a] = eq.i_gen[act[a]];
        u[a] = out.u_bar[act[a]];
    }
    // u = -r y - w^-1 y_c + b  =>  y_c = w (b - r y - u)
    const Eigen::VectorXd y_c = m.w * (m.b - m.r * y - u);
    // y_c = -L x_c
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(lap);
    const Eigen::VectorXd x_c = cod.solve(-y_c);
    const double scale = std::max(1.0, y_c.lpNorm<Eigen::Infinity>());
    const double mismatch = (lap * x_c + y_c).lpNorm<Eigen::Infinity>();
    if (!(mismatch <= 1e-8 * scale)) {
        throw EquilibriumError("equilibrium is inconsistent with the interconnection (|L x_c + y_c| = " +
                               std::to_string(mismatch) + ")");
    }
    for (int a = 0; a < na; ++a) out.x_c_particular[act[a]] = x_c[a];
    return out;
}

}  // namespace dcmg
