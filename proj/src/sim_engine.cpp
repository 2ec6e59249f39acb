#include "dcmg/sim_engine.hpp"

#include "dcmg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

namespace dcmg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct KindName {
    EventKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {EventKind::EnableSecondary, "enable_secondary"},
    {EventKind::DisableSecondary, "disable_secondary"},
    {EventKind::SetCplMask, "set_cpl_mask"},
    {EventKind::SetZipValues, "set_zip_values"},
    {EventKind::UnplugGen, "unplug_gen"},
    {EventKind::ReplugGen, "replug_gen"},
    {EventKind::SetCommLink, "set_comm_link"},
};

std::string describe(const ScenarioEvent& ev) {
    std::ostringstream os;
    switch (ev.kind) {
        case EventKind::SetCplMask:
            os << (ev.on ? "on" : "off") << " buses=";
            if (ev.buses.empty()) os << "all";
            for (std::size_t n = 0; n < ev.buses.size(); ++n) os << (n ? ";" : "") << ev.buses[n] + 1;
            break;
        case EventKind::SetZipValues:
            os << "buses=";
            if (ev.buses.empty()) os << "all";
            for (std::size_t n = 0; n < ev.buses.size(); ++n) os << (n ? ";" : "") << ev.buses[n] + 1;
            if (ev.conductance) os << " G=" << *ev.conductance;
            if (ev.current) os << " I=" << *ev.current;
            if (ev.power) os << " P=" << *ev.power;
            break;
        case EventKind::UnplugGen:
        case EventKind::ReplugGen:
            os << "gen=" << ev.gen + 1;
            break;
        case EventKind::SetCommLink:
            os << "link=" << ev.node_a + 1 << "-" << ev.node_b + 1 << (ev.on ? " up" : " down");
            break;
        default:
            break;
    }
    return os.str();
}

std::vector<int> bus_list(const ScenarioEvent& ev, int n_buses) {
    if (!ev.buses.empty()) return ev.buses;
    std::vector<int> all(n_buses);
    for (int k = 0; k < n_buses; ++k) all[k] = k;
    return all;
}

void close_breaker(SystemState& s, int gen) {
    s.ctrl.active_mask[gen] = true;
    s.pending_replug[gen] = false;
    s.phys.phi_gen[gen] = 0.0;
}

}  // namespace

std::string to_string(EventKind kind) {
    for (const auto& kn : kKindNames) {
        if (kn.kind == kind) return kn.name;
    }
    return "unknown";
}

std::optional<EventKind> parse_event_kind(const std::string& name) {
    for (const auto& kn : kKindNames) {
        if (name == kn.name) return kn.kind;
    }
    return std::nullopt;
}

void Scenario::validate(const MicrogridSpec& spec, const ControllerConfig& cfg) const {
    const auto& in = integrator;
    if (!(in.step > 0.0) || !(in.t_end > 0.0) || !(in.record_interval > 0.0)) {
        throw ScenarioError("integrator step, t_end and record_interval must be positive");
    }
    if (in.record_interval < in.step) {
        throw ScenarioError("integrator.record_interval must not be shorter than the step");
    }
    if (!(in.h_min > 0.0) || in.h_min > in.step) {
        throw ScenarioError("integrator.h_min must be in (0, step]");
    }
    if (!(in.sync_tol > 0.0)) throw ScenarioError("integrator.sync_tol must be positive");
    if (static_cast<int>(initial_loads.size()) != spec.n_buses()) {
        throw ScenarioError("initial load profile does not match the bus count");
    }

    std::vector<bool> plugged(spec.n_gens(), true);
    bool ever_enabled = initial == InitialCondition::ClosedLoopEquilibrium;
    double last = 0.0;
    for (std::size_t n = 0; n < events.size(); ++n) {
        const auto& ev = events[n];
        const std::string where = "events[" + std::to_string(n) + "]";
        if (!(ev.time >= 0.0) || ev.time > in.t_end) {
            throw ScenarioError(where + ".time is outside [0, t_end]");
        }
        if (ev.time < last) throw ScenarioError(where + ".time is out of order");
        last = ev.time;
        for (int k : ev.buses) {
            if (k < 0 || k >= spec.n_buses()) throw ScenarioError(where + ".buses has an unknown bus");
        }
        switch (ev.kind) {
            case EventKind::EnableSecondary:
                ever_enabled = true;
                break;
            case EventKind::UnplugGen:
            case EventKind::ReplugGen: {
                if (ev.gen < 0 || ev.gen >= spec.n_gens()) {
                    throw ScenarioError(where + ".gen is not a generator index");
                }
                const bool unplug = ev.kind == EventKind::UnplugGen;
                if (unplug && !plugged[ev.gen]) {
                    throw ScenarioError(where + ": generator " + std::to_string(ev.gen + 1) +
                                        " is already unplugged");
                }
                if (!unplug && plugged[ev.gen]) {
                    throw ScenarioError(where + ": replug of generator " +
                                        std::to_string(ev.gen + 1) + " without prior unplug");
                }
                plugged[ev.gen] = !unplug;
                break;
            }
            case EventKind::SetCommLink:
                if (ev.node_a < 0 || ev.node_b < 0 || ev.node_a >= spec.n_gens() ||
                    ev.node_b >= spec.n_gens() || ev.node_a == ev.node_b) {
                    throw ScenarioError(where + " names an invalid link");
                }
                if (cfg.comm.weight(ev.node_a, ev.node_b) <= 0.0) {
                    throw ScenarioError(where + " names a link absent from the communication graph");
                }
                break;
            case EventKind::SetZipValues:
                if ((ev.conductance && !(*ev.conductance >= 0.0))) {
                    throw ScenarioError(where + ".conductance must be nonnegative");
                }
                break;
            default:
                break;
        }
    }
    if ((ever_enabled || cfg.enabled) && !is_connected(cfg.comm)) {
        throw ScenarioError(
            "secondary control is enabled but the communication graph is disconnected; "
            "consensus needs a connected graph");
    }
}

SystemState initial_state(const MicrogridSpec& spec, const ControllerConfig& cfg,
                          const Scenario& scenario) {
    const int ng = spec.n_gens();
    SystemState s;
    s.t = 0.0;
    s.loads = scenario.initial_loads;
    s.link_on = (cfg.comm.weights().array() > 0.0).cast<double>().matrix();
    s.secondary_enabled = cfg.enabled;
    s.pending_replug.assign(ng, false);
    s.ctrl.active_mask.assign(ng, true);
    s.ctrl.x_c = Eigen::VectorXd::Zero(ng);

    switch (scenario.initial) {
        case InitialCondition::DroopEquilibrium:
            s.phys = to_physical_state(spec, solve_droop_equilibrium(spec, s.loads));
            break;
        case InitialCondition::ClosedLoopEquilibrium: {
            const auto eq = solve_closed_loop_equilibrium(spec, cfg, s.loads);
            s.phys = to_physical_state(spec, eq);
            s.ctrl.x_c = equilibrium_control(spec, cfg, eq).x_c_particular;
            s.secondary_enabled = true;
            break;
        }
        case InitialCondition::NoLoadNominal:
            s.phys = PhysicalState::from_coenergy(spec, Eigen::VectorXd::Zero(ng),
                                                  Eigen::VectorXd::Zero(spec.n_lines()),
                                                  Eigen::VectorXd::Constant(spec.n_buses(), spec.v_nom));
            break;
        case InitialCondition::Zero:
            s.phys = PhysicalState::zero(spec);
            break;
    }
    return s;
}

double breaker_gen_side_voltage(const MicrogridSpec& spec, const Scenario& scenario,
                                const SystemState& state, int gen) {
    const int k = spec.graph.gen_bus[gen];
    if (scenario.unplugged_tracks_bus) return state.phys.q_bus[k] / spec.buses[k].capacitance;
    return spec.v_nom;
}

SystemState apply_event(const MicrogridSpec& spec, const ControllerConfig& cfg,
                        const Scenario& scenario, const SystemState& state,
                        const ScenarioEvent& ev, std::vector<EventRecord>* log) {
    SystemState s = state;
    std::string status = "applied";
    switch (ev.kind) {
        case EventKind::EnableSecondary:
            s.secondary_enabled = true;
            break;
        case EventKind::DisableSecondary:
            s.secondary_enabled = false;
            break;
        case EventKind::SetCplMask:
            for (int k : bus_list(ev, spec.n_buses())) s.loads[k].p_on = ev.on;
            break;
        case EventKind::SetZipValues:
            for (int k : bus_list(ev, spec.n_buses())) {
                if (ev.conductance) s.loads[k].conductance = *ev.conductance;
                if (ev.current) s.loads[k].current = *ev.current;
                if (ev.power) s.loads[k].power = *ev.power;
            }
            break;
        case EventKind::UnplugGen: {
            const int i = ev.gen;
            if (!s.ctrl.active_mask[i]) {
                throw ScenarioError("unplug of generator " + std::to_string(i + 1) +
                                    " which is not connected");
            }
            s.ctrl.active_mask[i] = false;
            s.phys.phi_gen[i] = 0.0;
            s.link_on.row(i).setZero();
            s.link_on.col(i).setZero();
            break;
        }
        case EventKind::ReplugGen: {
            const int i = ev.gen;
            if (s.ctrl.active_mask[i] || s.pending_replug[i]) {
                throw ScenarioError("replug of generator " + std::to_string(i + 1) +
                                    " without prior unplug");
            }
            // Links first, then the breaker.
            for (int j = 0; j < spec.n_gens(); ++j) {
                if (cfg.comm.weight(i, j) > 0.0) {
                    s.link_on(i, j) = 1.0;
                    s.link_on(j, i) = 1.0;
                }
            }
            const int k = spec.graph.gen_bus[i];
            const double v_bus = s.phys.q_bus[k] / spec.buses[k].capacitance;
            if (std::abs(breaker_gen_side_voltage(spec, scenario, s, i) - v_bus) <
                scenario.integrator.sync_tol) {
                close_breaker(s, i);
            } else {
                s.pending_replug[i] = true;
                status = "deferred";
            }
            break;
        }
        case EventKind::SetCommLink:
            s.link_on(ev.node_a, ev.node_b) = ev.on ? 1.0 : 0.0;
            s.link_on(ev.node_b, ev.node_a) = ev.on ? 1.0 : 0.0;
            break;
    }
    if (log) log->push_back({state.t, to_string(ev.kind), describe(ev), status});
    return s;
}

bool retry_pending_replugs(const MicrogridSpec& spec, const Scenario& scenario,
                           SystemState& state, std::vector<EventRecord>* log) {
    bool closed = false;
    for (int i = 0; i < spec.n_gens(); ++i) {
        if (!state.pending_replug[i]) continue;
        const int k = spec.graph.gen_bus[i];
        const double v_bus = state.phys.q_bus[k] / spec.buses[k].capacitance;
        if (std::abs(breaker_gen_side_voltage(spec, scenario, state, i) - v_bus) <
            scenario.integrator.sync_tol) {
            close_breaker(state, i);
            closed = true;
            if (log) {
                log->push_back({state.t, "replug_gen", "gen=" + std::to_string(i + 1),
                                "applied-after-deferral"});
            }
        }
    }
    return closed;
}

Eigen::VectorXd stack_state(const SystemState& state) {
    Eigen::VectorXd y(state.phys.phi_gen.size() + state.phys.phi_line.size() +
                      state.phys.q_bus.size() + state.ctrl.x_c.size());
    y << state.phys.phi_gen, state.phys.phi_line, state.phys.q_bus, state.ctrl.x_c;
    return y;
}

int Trajectory::segment_at(double t) const {
    for (int n = static_cast<int>(segments.size()) - 1; n >= 0; --n) {
        if (t >= segments[n].t_begin) return n;
    }
    return 0;
}

namespace {

// Closed-loop stepping machinery shared by both integrators.
class Engine {
public:
    Engine(const MicrogridSpec& spec, const ControllerConfig& cfg, const Scenario& scenario,
           const SystemState& init)
        : spec_(spec), cfg_(cfg), scenario_(scenario), state_(init) {
        ng_ = spec.n_gens();
        nx_ = spec.state_size();
        n_ = nx_ + ng_;
        y_ = stack_state(init);
        dy_.resize(n_);
        k1_.resize(n_);
        k2_.resize(n_);
        k3_.resize(n_);
        k4_.resize(n_);
        tmp_.resize(n_);
        lambda_.resize(ng_);
        u_.resize(ng_);
        dxc_.resize(ng_);
        held_lambda_.resize(ng_);
        held_xc_.resize(ng_);
        z_lambda_.resize(ng_);
        z_c_.resize(ng_);
        work_phys_ = PhysicalState::zero(spec);
        traj_.n_gens = ng_;
        traj_.n_lines = spec.n_lines();
        traj_.n_buses = spec.n_buses();
        typical_.resize(n_);
        for (int i = 0; i < ng_; ++i) typical_[i] = spec.gens[i].l_conn;
        for (int j = 0; j < spec.n_lines(); ++j) typical_[ng_ + j] = spec.lines[j].inductance;
        for (int k = 0; k < spec.n_buses(); ++k) {
            typical_[ng_ + spec.n_lines() + k] = spec.buses[k].capacitance;
        }
        for (int i = 0; i < ng_; ++i) typical_[nx_ + i] = 1e-2;
    }

    Trajectory run(IntegratorKind method) {
        const auto& in = scenario_.integrator;
        const auto& events = scenario_.events;
        std::size_t next_event = 0;
        double t = 0.0;
        state_.t = 0.0;

        // Events stamped at t = 0 apply before the first sample.
        bool changed = false;
        while (next_event < events.size() && events[next_event].time <= 0.0) {
            sync_state_from_y(t);
            state_ = apply_event(spec_, cfg_, scenario_, state_, events[next_event++], &traj_.events);
            changed = true;
        }
        if (changed) y_ = stack_state(state_);
        refresh_masks();
        refresh_holds();

        auto planned_end = [&]() {
            return next_event < events.size() ? std::min(events[next_event].time, in.t_end) : in.t_end;
        };

        begin_segment(t, planned_end());
        long record_index = 1;
        record(t);
        double seg_t0 = t;
        long k = 0;
        double next_tick = cfg_.sample_period ? *cfg_.sample_period : kInf;

        while (t < in.t_end) {
            const double stop = planned_end();
            double t_next = seg_t0 + static_cast<double>(k + 1) * in.step;
            if (stop - t_next < 1e-6 * in.step) t_next = stop;
            const double h = t_next - t;
            if (method == IntegratorKind::Rk4) {
                step_rk4(t, h);
            } else {
                advance_trapezoidal(t, h);
            }
            t = t_next;
            ++k;
            check_finite(t, h);

            if (cfg_.sample_period && t >= next_tick - 1e-6 * in.step) {
                refresh_holds();
                next_tick += *cfg_.sample_period;
            }
            monitor(t, std::abs(h - in.step) <= 1e-9 * in.step);

            bool recorded = false;
            if (t >= static_cast<double>(record_index) * in.record_interval - 1e-6 * in.step) {
                record(t);
                recorded = true;
                while (static_cast<double>(record_index) * in.record_interval <= t + 1e-6 * in.step) {
                    ++record_index;
                }
            }

            if (t == stop && t < in.t_end) {
                end_segment(t);
                sync_state_from_y(t);
                while (next_event < events.size() && events[next_event].time <= t) {
                    state_ = apply_event(spec_, cfg_, scenario_, state_, events[next_event++],
                                         &traj_.events);
                }
                after_mask_change(t, planned_end());
                seg_t0 = t;
                k = 0;
            } else if (recorded && has_pending()) {
                sync_state_from_y(t);
                if (retry_pending_replugs(spec_, scenario_, state_, &traj_.events)) {
                    end_segment(t);
                    after_mask_change(t, planned_end());
                    seg_t0 = t;
                    k = 0;
                }
            }
        }
        end_segment(t);
        if (traj_.samples.empty() || traj_.samples.back().t != t) record(t);
        sync_state_from_y(t);
        traj_.final_state = state_;
        return std::move(traj_);
    }

private:
    static constexpr double kInf = std::numeric_limits<double>::infinity();

    bool has_pending() const {
        return std::any_of(state_.pending_replug.begin(), state_.pending_replug.end(),
                           [](bool b) { return b; });
    }

    void after_mask_change(double t, double planned_end) {
        y_ = stack_state(state_);
        refresh_masks();
        refresh_holds();
        begin_segment(t, planned_end);
        record(t);
    }

    void sync_state_from_y(double t) {
        state_.phys = PhysicalState::from_stacked(spec_, std::span<const double>(y_.data(), nx_));
        state_.ctrl.x_c = y_.segment(nx_, ng_);
        state_.t = t;
    }

    void refresh_masks() {
        effective_ = cfg_.comm.masked(state_.ctrl.active_mask, state_.link_on);
        lap_ = laplacian(effective_);
        enabled_cfg_ = cfg_;
        enabled_cfg_.enabled = state_.secondary_enabled;
        rhs_valid_ = false;
    }

    void refresh_holds() {
        for (int i = 0; i < ng_; ++i) {
            held_lambda_[i] = incremental_cost(spec_.gens[i], y_[i] / spec_.gens[i].l_conn);
            held_xc_[i] = y_[nx_ + i];
        }
    }

    // f(t, y) for the closed loop; fills u_ and lambda_ as by-products.
    void rhs(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        for (int i = 0; i < ng_; ++i) {
            lambda_[i] = incremental_cost(spec_.gens[i], y[i] / spec_.gens[i].l_conn);
        }
        const Eigen::VectorXd& xc_now = y;  // x_c lives at offset nx_
        const bool held = cfg_.sample_period.has_value();
        for (int i = 0; i < ng_; ++i) {
            u_[i] = 0.0;
            dxc_[i] = 0.0;
            if (!state_.ctrl.active_mask[i] || !state_.secondary_enabled) continue;
            view_.clear();
            for (int j = 0; j < ng_; ++j) {
                const double a = effective_.weight(i, j);
                if (a > 0.0) {
                    view_.push_back({j, a, held ? held_lambda_[j] : lambda_[j],
                                     held ? held_xc_[j] : xc_now[nx_ + j]});
                }
            }
            const AgentOutput out = agent_step(spec_.gens[i], enabled_cfg_, xc_now[nx_ + i],
                                               y[i] / spec_.gens[i].l_conn, view_);
            u_[i] = out.u;
            dxc_[i] = out.dx_c;
        }
        dynamics_rhs(spec_, std::span<const double>(y.data(), nx_),
                     std::span<const double>(u_.data(), ng_), state_.loads,
                     state_.ctrl.active_mask, t, std::span<double>(dy.data(), nx_));
        for (int i = 0; i < ng_; ++i) dy[nx_ + i] = dxc_[i];
    }

    void step_rk4(double t, double h) {
        if (rhs_valid_) {
            k1_ = dy_;
        } else {
            rhs(t, y_, k1_);
        }
        tmp_ = y_ + 0.5 * h * k1_;
        rhs(t + 0.5 * h, tmp_, k2_);
        tmp_ = y_ + 0.5 * h * k2_;
        rhs(t + 0.5 * h, tmp_, k3_);
        tmp_ = y_ + h * k3_;
        rhs(t + h, tmp_, k4_);
        y_ += (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
        rhs_valid_ = false;
    }

    bool try_trapezoidal(double t, double h) {
        const auto& in = scenario_.integrator;
        rhs(t, y_, k1_);
        // Finite-difference Jacobian at the step start (modified Newton).
        Eigen::MatrixXd jac(n_, n_);
        for (int c = 0; c < n_; ++c) {
            tmp_ = y_;
            const double d = 1e-7 * std::max(std::abs(y_[c]), typical_[c]);
            tmp_[c] += d;
            rhs(t, tmp_, k2_);
            jac.col(c) = (k2_ - k1_) / d;
        }
        const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n_, n_) - 0.5 * h * jac;
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);

        Eigen::VectorXd z = y_ + h * k1_;
        for (int it = 0; it < 12; ++it) {
            try {
                rhs(t + h, z, k3_);
            } catch (const SingularityError&) {
                return false;
            }
            const Eigen::VectorXd g = z - y_ - 0.5 * h * (k1_ + k3_);
            const Eigen::VectorXd dz = lu.solve(-g);
            if (!dz.allFinite()) return false;
            z += dz;
            double err = 0.0;
            for (int c = 0; c < n_; ++c) {
                err = std::max(err, std::abs(dz[c]) / std::max(std::abs(z[c]), typical_[c]));
            }
            if (err < in.newton_tolerance) {
                y_ = z;
                rhs_valid_ = false;
                return true;
            }
        }
        return false;
    }

    void advance_trapezoidal(double t, double h) {
        if (try_trapezoidal(t, h)) return;
        if (0.5 * h < scenario_.integrator.h_min) {
            throw DivergenceError("trapezoidal Newton failed at step floor", t);
        }
        advance_trapezoidal(t, 0.5 * h);
        advance_trapezoidal(t + 0.5 * h, 0.5 * h);
    }

    void check_finite(double t, double h) {
        if (!y_.allFinite()) {
            throw DivergenceError("state became non-finite at t = " + std::to_string(t), t - h);
        }
    }

    // ---- monitors -------------------------------------------------------

    void begin_segment(double t, double planned_end) {
        SegmentReport seg;
        seg.t_begin = t;
        seg.t_end = t;
        seg.gen_active = state_.ctrl.active_mask;
        seg.secondary_enabled = state_.secondary_enabled;
        seg.loads = state_.loads;
        seg.link_on = state_.link_on;
        seg.cpl_active = std::any_of(state_.loads.begin(), state_.loads.end(),
                                     [](const ZipLoad& l) { return l.active_power() != 0.0; });
        seg_planned_end_ = planned_end;
        tail_start_ = planned_end - scenario_.integrator.tail_window;
        tail_count_ = 0;
        tail_t0_ = kInf;
        tail_sums_ = Eigen::VectorXd::Zero(nx_ + 2 * ng_);
        have_prev_ = 0;
        lyap_.reset();

        if (scenario_.integrator.monitors) {
            try {
                EquilibriumPoint eq =
                    state_.secondary_enabled
                        ? solve_closed_loop_equilibrium(spec_, cfg_, state_.loads,
                                                        state_.ctrl.active_mask)
                        : solve_droop_equilibrium(spec_, state_.loads, state_.ctrl.active_mask);
                Eigen::VectorXd xc_bar = y_.segment(nx_, ng_);
                if (state_.secondary_enabled) {
                    xc_bar = equilibrium_control(spec_, cfg_, eq, state_.link_on)
                                 .matching(spec_.gens, y_.segment(nx_, ng_));
                }
                lyap_ = LyapunovContext::make(spec_, cfg_, lap_, to_physical_state(spec_, eq),
                                              xc_bar, state_.ctrl.active_mask, state_.loads,
                                              state_.secondary_enabled);
                seg.equilibrium = std::move(eq);
            } catch (const Error& e) {
                seg.equilibrium_error = e.what();
            }
        }
        traj_.segments.push_back(std::move(seg));
        monitor(t, false);
        traj_.segments.back().h_t_begin = lyap_ ? point_.h_t : 0.0;
    }

    void end_segment(double t) {
        auto& seg = traj_.segments.back();
        seg.t_end = t;
        const int ne = spec_.n_lines();
        const int nn = spec_.n_buses();
        if (tail_count_ > 0) {
            const Eigen::VectorXd mean = tail_sums_ / static_cast<double>(tail_count_);
            seg.tail_i_gen = mean.segment(0, ng_);
            seg.tail_i_line = mean.segment(ng_, ne);
            seg.tail_v_bus = mean.segment(ng_ + ne, nn);
            seg.tail_v_gen = mean.segment(nx_, ng_);
            seg.tail_lambda = mean.segment(nx_ + ng_, ng_);
            seg.tail_duration = t - tail_t0_;
        } else {
            seg.tail_duration = 0.0;
        }
        seg.final_spread = active_spread();
        if (seg.steps > 0 && seg.dh_rms > 0.0) {
            seg.dh_rms = std::sqrt(seg.dh_rms / static_cast<double>(rms_count_));
            seg.dh_rms_error = std::sqrt(seg.dh_rms_error / static_cast<double>(rms_count_));
        }
        rms_count_ = 0;
    }

    double active_spread() const {
        double lo = kInf;
        double hi = -kInf;
        for (int i = 0; i < ng_; ++i) {
            if (!state_.ctrl.active_mask[i]) continue;
            const double l = incremental_cost(spec_.gens[i], y_[i] / spec_.gens[i].l_conn);
            lo = std::min(lo, l);
            hi = std::max(hi, l);
        }
        return hi >= lo ? hi - lo : 0.0;
    }

    // Runs at every integration grid point; also leaves f(t, y) in dy_ for reuse by RK4.
    void monitor(double t, bool uniform_step) {
        rhs(t, y_, dy_);
        rhs_valid_ = true;
        auto& seg = traj_.segments.back();
        if (t > seg.t_begin) ++seg.steps;

        // Droop cancellation identity, matrix route.
        if (state_.secondary_enabled && !cfg_.sample_period) {
            z_lambda_ = -lap_ * lambda_;
            z_c_ = -lap_ * y_.segment(nx_, ng_);
            for (int i = 0; i < ng_; ++i) {
                if (!state_.ctrl.active_mask[i]) continue;
                const auto& g = spec_.gens[i];
                const double v = spec_.v_nom - g.droop * y_[i] / g.l_conn + u_[i];
                const double expected = spec_.v_nom + 2.0 * g.alpha * (cfg_.k_p * z_lambda_[i] - z_c_[i]);
                seg.max_droop_identity_error =
                    std::max(seg.max_droop_identity_error, std::abs(v - expected));
            }
        }

        if (t >= tail_start_ - 1e-9) {
            if (tail_count_ == 0) tail_t0_ = t;
            ++tail_count_;
            tail_sums_.head(nx_) += coenergy();
            for (int i = 0; i < ng_; ++i) {
                tail_sums_[nx_ + i] += gen_voltage(i);
                tail_sums_[nx_ + ng_ + i] = tail_sums_[nx_ + ng_ + i] + lambda_[i];
            }
        }

        if (!lyap_) return;
        work_phys_.phi_gen = y_.segment(0, ng_);
        work_phys_.phi_line = y_.segment(ng_, spec_.n_lines());
        work_phys_.q_bus = y_.segment(ng_ + spec_.n_lines(), spec_.n_buses());
        evaluate_lyapunov(*lyap_, work_phys_, y_.segment(nx_, ng_), point_);

        const double scale = std::max(seg.h_t_begin, 1.0);
        seg.max_dh_t = std::max(seg.max_dh_t, point_.dh_t);
        seg.max_dh_t_scaled = std::max(seg.max_dh_t_scaled, point_.dh_t / scale);
        seg.min_t_eig = std::min(seg.min_t_eig, point_.min_t_eig);
        seg.min_margin = std::min(seg.min_margin, point_.min_margin);
        if (!point_.in_domain) ++seg.domain_exit_steps;

        if (have_prev_ >= 1 && uniform_step) {
            seg.max_h_t_increase = std::max(seg.max_h_t_increase, point_.h_t - prev_h_[1]);
        }
        if (have_prev_ >= 2 && uniform_step && prev_uniform_) {
            const double h = scenario_.integrator.step;
            const double numeric = (point_.h_t - prev_h_[0]) / (2.0 * h);
            const double err = numeric - prev_dh_;
            seg.dh_rms += prev_dh_ * prev_dh_;
            seg.dh_rms_error += err * err;
            ++rms_count_;
        }
        prev_h_[0] = prev_h_[1];
        prev_h_[1] = point_.h_t;
        prev_dh_ = point_.dh_t;
        prev_uniform_ = uniform_step || have_prev_ == 0;
        have_prev_ = std::min(have_prev_ + 1, 2);
    }

    Eigen::VectorXd coenergy() const {
        Eigen::VectorXd e(nx_);
        for (int i = 0; i < ng_; ++i) e[i] = y_[i] / spec_.gens[i].l_conn;
        for (int j = 0; j < spec_.n_lines(); ++j) e[ng_ + j] = y_[ng_ + j] / spec_.lines[j].inductance;
        const int off = ng_ + spec_.n_lines();
        for (int k = 0; k < spec_.n_buses(); ++k) e[off + k] = y_[off + k] / spec_.buses[k].capacitance;
        return e;
    }

    // Requires u_ for the current y_ (monitor() has just evaluated rhs).
    double gen_voltage(int i) const {
        const auto& g = spec_.gens[i];
        if (state_.ctrl.active_mask[i]) return spec_.v_nom - g.droop * y_[i] / g.l_conn + u_[i];
        if (!scenario_.unplugged_tracks_bus) return spec_.v_nom;
        const int k = spec_.graph.gen_bus[i];
        return y_[ng_ + spec_.n_lines() + k] / spec_.buses[k].capacitance;
    }

    void record(double t) {
        if (!rhs_valid_) {
            rhs(t, y_, dy_);
            rhs_valid_ = true;
        }
        Sample s;
        s.t = t;
        const Eigen::VectorXd e = coenergy();
        s.i_gen = e.segment(0, ng_);
        s.i_line = e.segment(ng_, spec_.n_lines());
        s.v_bus = e.segment(ng_ + spec_.n_lines(), spec_.n_buses());
        s.v_gen.resize(ng_);
        for (int i = 0; i < ng_; ++i) s.v_gen[i] = gen_voltage(i);
        s.lambda = lambda_;
        s.x_c = y_.segment(nx_, ng_);
        s.u = u_;
        s.wavg = weighted_average_voltage(spec_.gens, s.v_gen, state_.ctrl.active_mask);
        s.spread = active_spread();
        work_phys_.phi_gen = y_.segment(0, ng_);
        work_phys_.phi_line = y_.segment(ng_, spec_.n_lines());
        work_phys_.q_bus = y_.segment(ng_ + spec_.n_lines(), spec_.n_buses());
        s.h = hamiltonian(spec_, work_phys_);
        if (lyap_) {
            s.h_t = point_.h_t;
            s.dh_t = point_.dh_t;
            s.margins = point_.margins;
        } else {
            s.margins = Eigen::VectorXd::Constant(spec_.n_buses(), kNaN);
        }
        traj_.samples.push_back(std::move(s));
    }

    const MicrogridSpec& spec_;
    const ControllerConfig& cfg_;
    const Scenario& scenario_;
    SystemState state_;
    Trajectory traj_;

    int ng_ = 0;
    int nx_ = 0;
    int n_ = 0;
    Eigen::VectorXd y_, dy_, k1_, k2_, k3_, k4_, tmp_, typical_;
    Eigen::VectorXd lambda_, u_, dxc_, held_lambda_, held_xc_, z_lambda_, z_c_;
    bool rhs_valid_ = false;
    NeighborView view_;
    CommGraph effective_;
    Eigen::MatrixXd lap_;
    ControllerConfig enabled_cfg_;
    PhysicalState work_phys_;

    std::optional<LyapunovContext> lyap_;
    LyapunovPoint point_;
    double seg_planned_end_ = 0.0;
    double tail_start_ = 0.0;
    double tail_t0_ = 0.0;
    long tail_count_ = 0;
    Eigen::VectorXd tail_sums_;
    double prev_h_[2] = {0.0, 0.0};
    double prev_dh_ = 0.0;
    bool prev_uniform_ = false;
    int have_prev_ = 0;
    long rms_count_ = 0;
};

}  // namespace

Trajectory integrate(const MicrogridSpec& spec, const ControllerConfig& cfg,
                     const Scenario& scenario, const SystemState& init) {
    scenario.validate(spec, cfg);
    return Engine(spec, cfg, scenario, init).run(IntegratorKind::Rk4);
}

Trajectory integrate_implicit(const MicrogridSpec& spec, const ControllerConfig& cfg,
                              const Scenario& scenario, const SystemState& init) {
    scenario.validate(spec, cfg);
    return Engine(spec, cfg, scenario, init).run(IntegratorKind::Trapezoidal);
}

Trajectory simulate(const MicrogridSpec& spec, const ControllerConfig& cfg,
                    const Scenario& scenario, const SystemState& init) {
    return scenario.integrator.method == IntegratorKind::Rk4
               ? integrate(spec, cfg, scenario, init)
               : integrate_implicit(spec, cfg, scenario, init);
}

Eigen::VectorXd closed_loop_rhs(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                const Scenario& scenario, const SystemState& state,
                                const Eigen::VectorXd& y, double t) {
    const int ng = spec.n_gens();
    const int nx = spec.state_size();
    ControllerConfig live = cfg;
    live.enabled = state.secondary_enabled;
    const Eigen::VectorXd i_gen = y.head(ng).cwiseQuotient(
        Eigen::VectorXd::NullaryExpr(ng, [&](Eigen::Index i) { return spec.gens[i].l_conn; }));
    const ControllerOutput c =
        controller_rhs(live, spec.gens, y.segment(nx, ng), i_gen, state.ctrl.active_mask, state.link_on);
    Eigen::VectorXd dy(nx + ng);
    dynamics_rhs(spec, std::span<const double>(y.data(), nx), std::span<const double>(c.u.data(), ng),
                 state.loads, state.ctrl.active_mask, t, std::span<double>(dy.data(), nx));
    dy.segment(nx, ng) = c.dx_c;
    (void)scenario;
    return dy;
}

LyapunovReport monitor_lyapunov(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                const Trajectory& traj, const EquilibriumPoint& eq,
                                double t_begin, double t_end, double eps) {
    for (const auto& seg : traj.segments) {
        if (seg.t_begin > t_begin && seg.t_begin < t_end) {
            throw ScenarioError("monitor_lyapunov interval spans an event at t = " +
                                std::to_string(seg.t_begin) + "; call it per segment");
        }
    }
    const SegmentReport& seg = traj.segments[traj.segment_at(t_begin)];
    const CommGraph effective = cfg.comm.masked(seg.gen_active, seg.link_on);
    const Eigen::MatrixXd lap = laplacian(effective);

    LyapunovReport out;
    std::optional<LyapunovContext> ctx;
    LyapunovPoint p;
    for (std::size_t n = 0; n < traj.samples.size(); ++n) {
        const Sample& s = traj.samples[n];
        if (s.t < t_begin || s.t > t_end) continue;
        // Skip the pre-event copy recorded at the segment start time.
        if (n + 1 < traj.samples.size() && traj.samples[n + 1].t == s.t) continue;
        const PhysicalState phys = PhysicalState::from_coenergy(spec, s.i_gen, s.i_line, s.v_bus);
        if (!ctx) {
            Eigen::VectorXd xc_bar = s.x_c;
            if (seg.secondary_enabled) {
                xc_bar = equilibrium_control(spec, cfg, eq, seg.link_on).matching(spec.gens, s.x_c);
            }
            ctx = LyapunovContext::make(spec, cfg, lap, to_physical_state(spec, eq), xc_bar,
                                        seg.gen_active, seg.loads, seg.secondary_enabled);
        }
        evaluate_lyapunov(*ctx, phys, s.x_c, p);
        out.t.push_back(s.t);
        out.h_t.push_back(p.h_t);
        out.dh_t.push_back(p.dh_t);
        out.min_t_eig.push_back(p.min_t_eig);
        const double scale = std::max(out.h_t.front(), 1.0);
        if (p.dh_t / scale > eps || !p.in_domain) out.violations.push_back(out.t.size() - 1);
    }
    return out;
}

}  // namespace dcmg
