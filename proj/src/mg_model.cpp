#include "dcmg/mg_model.hpp"

#include "dcmg/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dcmg {

namespace {

std::string item(const char* what, int index) {
    return std::string(what) + " " + std::to_string(index + 1);
}

void require_positive(double v, const std::string& name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(name + " must be positive");
}

bool active(const std::vector<bool>& mask, int i) { return mask.empty() || mask[i]; }

}  // namespace

void MicrogridSpec::validate() const {
    graph.validate();
    if (static_cast<int>(gens.size()) != n_gens()) {
        throw ValidationError("generator list length does not match the graph");
    }
    if (static_cast<int>(lines.size()) != n_lines()) {
        throw ValidationError("line list length does not match the graph");
    }
    if (static_cast<int>(buses.size()) != n_buses()) {
        throw ValidationError("bus list length does not match the graph");
    }
    require_positive(v_nom, "v_nom");
    for (int i = 0; i < n_gens(); ++i) {
        const auto& g = gens[i];
        require_positive(g.droop, item("generator", i) + " droop");
        require_positive(g.r_conn, item("generator", i) + " connector resistance");
        require_positive(g.l_conn, item("generator", i) + " connector inductance");
        require_positive(g.alpha, item("generator", i) + " alpha");
        require_positive(g.k_i, item("generator", i) + " k_i");
        if (!std::isfinite(g.beta) || !std::isfinite(g.gamma)) {
            throw ValidationError(item("generator", i) + " cost coefficients must be finite");
        }
    }
    for (int j = 0; j < n_lines(); ++j) {
        require_positive(lines[j].resistance, item("line", j) + " resistance");
        require_positive(lines[j].inductance, item("line", j) + " inductance");
    }
    for (int k = 0; k < n_buses(); ++k) {
        const auto& b = buses[k];
        require_positive(b.capacitance, item("bus", k) + " capacitance");
        if (!(b.conductance >= 0.0) || !std::isfinite(b.conductance)) {
            throw ValidationError(item("bus", k) + " conductance must be nonnegative");
        }
        if (!std::isfinite(b.current) || !std::isfinite(b.power)) {
            throw ValidationError(item("bus", k) + " load values must be finite");
        }
    }
}

LoadProfile nominal_loads(const MicrogridSpec& spec, bool z_on, bool i_on, bool p_on) {
    LoadProfile loads;
    loads.reserve(spec.buses.size());
    for (const auto& b : spec.buses) {
        loads.push_back({b.conductance, b.current, b.power, z_on, i_on, p_on});
    }
    return loads;
}

PhysicalState PhysicalState::zero(const MicrogridSpec& spec) {
    return {Eigen::VectorXd::Zero(spec.n_gens()), Eigen::VectorXd::Zero(spec.n_lines()),
            Eigen::VectorXd::Zero(spec.n_buses())};
}

PhysicalState PhysicalState::from_coenergy(const MicrogridSpec& spec,
                                           const Eigen::VectorXd& i_gen,
                                           const Eigen::VectorXd& i_line,
                                           const Eigen::VectorXd& v_bus) {
    PhysicalState s = zero(spec);
    for (int i = 0; i < spec.n_gens(); ++i) s.phi_gen[i] = spec.gens[i].l_conn * i_gen[i];
    for (int j = 0; j < spec.n_lines(); ++j) s.phi_line[j] = spec.lines[j].inductance * i_line[j];
    for (int k = 0; k < spec.n_buses(); ++k) s.q_bus[k] = spec.buses[k].capacitance * v_bus[k];
    return s;
}

PhysicalState PhysicalState::from_stacked(const MicrogridSpec& spec, std::span<const double> x) {
    const int ng = spec.n_gens();
    const int ne = spec.n_lines();
    const int nn = spec.n_buses();
    PhysicalState s;
    s.phi_gen = Eigen::Map<const Eigen::VectorXd>(x.data(), ng);
    s.phi_line = Eigen::Map<const Eigen::VectorXd>(x.data() + ng, ne);
    s.q_bus = Eigen::Map<const Eigen::VectorXd>(x.data() + ng + ne, nn);
    return s;
}

Eigen::VectorXd PhysicalState::gen_currents(const MicrogridSpec& spec) const {
    Eigen::VectorXd out(spec.n_gens());
    for (int i = 0; i < spec.n_gens(); ++i) out[i] = phi_gen[i] / spec.gens[i].l_conn;
    return out;
}

Eigen::VectorXd PhysicalState::line_currents(const MicrogridSpec& spec) const {
    Eigen::VectorXd out(spec.n_lines());
    for (int j = 0; j < spec.n_lines(); ++j) out[j] = phi_line[j] / spec.lines[j].inductance;
    return out;
}

Eigen::VectorXd PhysicalState::bus_voltages(const MicrogridSpec& spec) const {
    Eigen::VectorXd out(spec.n_buses());
    for (int k = 0; k < spec.n_buses(); ++k) out[k] = q_bus[k] / spec.buses[k].capacitance;
    return out;
}

Eigen::VectorXd PhysicalState::stacked() const {
    Eigen::VectorXd x(phi_gen.size() + phi_line.size() + q_bus.size());
    x << phi_gen, phi_line, q_bus;
    return x;
}

Eigen::VectorXd PhysicalState::coenergy(const MicrogridSpec& spec) const {
    Eigen::VectorXd e(spec.state_size());
    e << gen_currents(spec), line_currents(spec), bus_voltages(spec);
    return e;
}

bool PhysicalState::all_finite() const {
    return phi_gen.allFinite() && phi_line.allFinite() && q_bus.allFinite();
}

PortHamiltonian assemble_ph(const MicrogridSpec& spec) {
    return assemble_ph(spec, nominal_loads(spec));
}

PortHamiltonian assemble_ph(const MicrogridSpec& spec, const LoadProfile& loads) {
    spec.validate();
    const int ng = spec.n_gens();
    const int ne = spec.n_lines();
    const int nn = spec.n_buses();
    const int n = ng + ne + nn;
    const auto inc = incidence_matrices(spec.graph);

    PortHamiltonian ph;
    ph.Q = Eigen::MatrixXd::Zero(n, n);
    ph.F = Eigen::MatrixXd::Zero(n, n);
    ph.g = Eigen::MatrixXd::Zero(n, ng);
    ph.E = Eigen::VectorXd::Zero(n);

    for (int i = 0; i < ng; ++i) {
        ph.Q(i, i) = 1.0 / spec.gens[i].l_conn;
        ph.F(i, i) = -(spec.gens[i].r_conn + spec.gens[i].droop);
        ph.g(i, i) = 1.0;
        ph.E[i] = spec.v_nom;
    }
    for (int j = 0; j < ne; ++j) {
        ph.Q(ng + j, ng + j) = 1.0 / spec.lines[j].inductance;
        ph.F(ng + j, ng + j) = -spec.lines[j].resistance;
    }
    for (int k = 0; k < nn; ++k) {
        ph.Q(ng + ne + k, ng + ne + k) = 1.0 / spec.buses[k].capacitance;
        ph.F(ng + ne + k, ng + ne + k) = -loads[k].active_conductance();
        ph.E[ng + ne + k] = -loads[k].active_current();
    }
    ph.F.block(0, ng + ne, ng, nn) = -inc.bus_gen.transpose();
    ph.F.block(ng, ng + ne, ne, nn) = -inc.bus_line.transpose();
    ph.F.block(ng + ne, 0, nn, ng) = inc.bus_gen;
    ph.F.block(ng + ne, ng, nn, ne) = inc.bus_line;
    return ph;
}

Eigen::MatrixXd cpl_input_map(const MicrogridSpec& spec, const PhysicalState& state) {
    const int off = spec.n_gens() + spec.n_lines();
    Eigen::MatrixXd gp = Eigen::MatrixXd::Zero(spec.state_size(), spec.n_buses());
    const Eigen::VectorXd v = state.bus_voltages(spec);
    for (int k = 0; k < spec.n_buses(); ++k) gp(off + k, k) = -1.0 / v[k];
    return gp;
}

Eigen::VectorXd generator_voltages(const MicrogridSpec& spec, const PhysicalState& state,
                                   const Eigen::VectorXd& u, const std::vector<bool>& gen_active) {
    Eigen::VectorXd v(spec.n_gens());
    for (int i = 0; i < spec.n_gens(); ++i) {
        const auto& g = spec.gens[i];
        if (active(gen_active, i)) {
            v[i] = spec.v_nom - g.droop * state.phi_gen[i] / g.l_conn + u[i];
        } else {
            const int k = spec.graph.gen_bus[i];
            v[i] = state.q_bus[k] / spec.buses[k].capacitance;
        }
    }
    return v;
}

void dynamics_rhs(const MicrogridSpec& spec, std::span<const double> x,
                  std::span<const double> u, const LoadProfile& loads,
                  const std::vector<bool>& gen_active, double t, std::span<double> dx) {
    const int ng = spec.n_gens();
    const int ne = spec.n_lines();
    const int nn = spec.n_buses();
    const double* phi_g = x.data();
    const double* phi_e = x.data() + ng;
    const double* q = x.data() + ng + ne;
    double* dphi_g = dx.data();
    double* dphi_e = dx.data() + ng;
    double* dq = dx.data() + ng + ne;

    // Bus voltages first; the charge balance starts from the ZIP draw.
    for (int k = 0; k < nn; ++k) {
        const double v = q[k] / spec.buses[k].capacitance;
        const ZipLoad& load = loads[k];
        double draw = load.active_conductance() * v + load.active_current();
        const double p = load.active_power();
        if (p != 0.0) {
            if (!(v > kVoltageFloor)) throw SingularityError(k, t, v);
            draw += p / v;
        }
        dq[k] = -draw;
    }

    for (int i = 0; i < ng; ++i) {
        if (!active(gen_active, i)) {
            dphi_g[i] = 0.0;
            continue;
        }
        const auto& g = spec.gens[i];
        const int k = spec.graph.gen_bus[i];
        const double current = phi_g[i] / g.l_conn;
        const double v_bus = q[k] / spec.buses[k].capacitance;
        const double v_gen = spec.v_nom - g.droop * current + u[i];
        dphi_g[i] = v_gen - v_bus - g.r_conn * current;
        dq[k] += current;
    }

    for (int j = 0; j < ne; ++j) {
        const auto [from, to] = spec.graph.line_endpoints[j];
        const auto& line = spec.lines[j];
        const double current = phi_e[j] / line.inductance;
        const double v_from = q[from] / spec.buses[from].capacitance;
        const double v_to = q[to] / spec.buses[to].capacitance;
        // -sum_k b_kj V_k with b = -1 at the from-bus and +1 at the to-bus.
        dphi_e[j] = v_from - v_to - line.resistance * current;
        dq[from] -= current;
        dq[to] += current;
    }
}

PhysicalState dynamics_rhs(const MicrogridSpec& spec, const PhysicalState& state,
                           const Eigen::VectorXd& u, const LoadProfile& loads,
                           const std::vector<bool>& gen_active, double t) {
    const Eigen::VectorXd x = state.stacked();
    Eigen::VectorXd dx(x.size());
    dynamics_rhs(spec, std::span<const double>(x.data(), x.size()),
                 std::span<const double>(u.data(), u.size()), loads, gen_active, t,
                 std::span<double>(dx.data(), dx.size()));
    return PhysicalState::from_stacked(spec, std::span<const double>(dx.data(), dx.size()));
}

Eigen::MatrixXd incremental_dissipation(const MicrogridSpec& spec, const PhysicalState& state,
                                        const PhysicalState& equilibrium,
                                        const LoadProfile& loads) {
    const int ng = spec.n_gens();
    const int ne = spec.n_lines();
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(spec.state_size(), spec.state_size());
    for (int i = 0; i < ng; ++i) r(i, i) = spec.gens[i].r_conn + spec.gens[i].droop;
    for (int j = 0; j < ne; ++j) r(ng + j, ng + j) = spec.lines[j].resistance;
    for (int k = 0; k < spec.n_buses(); ++k) {
        if (!(equilibrium.q_bus[k] > 0.0)) {
            throw EquilibriumError("equilibrium charge at bus " + std::to_string(k + 1) +
                                   " is not positive");
        }
        const double c = spec.buses[k].capacitance;
        const double p = loads[k].active_power();
        // P C^2 / (qbar q) = P / (Vbar V)
        const double g_p = p == 0.0 ? 0.0 : p * c * c / (equilibrium.q_bus[k] * state.q_bus[k]);
        r(ng + ne + k, ng + ne + k) = loads[k].active_conductance() - g_p;
    }
    return r;
}

DomainCheck in_passivity_domain(const MicrogridSpec& spec, const PhysicalState& state,
                                const PhysicalState& equilibrium, const LoadProfile& loads) {
    DomainCheck out;
    out.margins.resize(spec.n_buses());
    for (int k = 0; k < spec.n_buses(); ++k) {
        const double c = spec.buses[k].capacitance;
        const double p = loads[k].active_power();
        const double g = loads[k].active_conductance();
        double margin = g;
        if (p != 0.0) {
            const double denom = equilibrium.q_bus[k] * state.q_bus[k];
            margin = denom > 0.0 ? g - p * c * c / denom
                                 : -std::numeric_limits<double>::infinity();
        }
        out.margins[k] = margin;
        // P = 0 buses are always inside (G >= 0 suffices there).
        if (p != 0.0 && !(margin > 0.0)) out.inside = false;
    }
    return out;
}

double hamiltonian(const MicrogridSpec& spec, const PhysicalState& state) {
    double h = 0.0;
    for (int i = 0; i < spec.n_gens(); ++i) {
        h += state.phi_gen[i] * state.phi_gen[i] / spec.gens[i].l_conn;
    }
    for (int j = 0; j < spec.n_lines(); ++j) {
        h += state.phi_line[j] * state.phi_line[j] / spec.lines[j].inductance;
    }
    for (int k = 0; k < spec.n_buses(); ++k) {
        h += state.q_bus[k] * state.q_bus[k] / spec.buses[k].capacitance;
    }
    return 0.5 * h;
}

double incremental_hamiltonian(const MicrogridSpec& spec, const PhysicalState& state,
                               const PhysicalState& equilibrium) {
    const PhysicalState d{state.phi_gen - equilibrium.phi_gen,
                          state.phi_line - equilibrium.phi_line, state.q_bus - equilibrium.q_bus};
    return hamiltonian(spec, d);
}

}  // namespace dcmg
