#pragma once

// Time integration of the coupled plant + consensus controller with a
// scenario event timeline, trajectory recording and runtime monitors.

#include "dcmg/dispatch.hpp"
#include "dcmg/lyapunov.hpp"
#include "dcmg/mg_model.hpp"
#include "dcmg/secondary_control.hpp"

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace dcmg {

enum class EventKind {
    EnableSecondary,
    DisableSecondary,
    SetCplMask,
    SetZipValues,
    UnplugGen,
    ReplugGen,
    SetCommLink,
};

std::string to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(const std::string& name);

struct ScenarioEvent {
    double time = 0.0;
    EventKind kind = EventKind::EnableSecondary;
    std::vector<int> buses;  // SetCplMask / SetZipValues; empty means every bus
    bool on = true;          // SetCplMask / SetCommLink
    std::optional<double> conductance;
    std::optional<double> current;
    std::optional<double> power;
    int gen = -1;            // UnplugGen / ReplugGen
    int node_a = -1;         // SetCommLink
    int node_b = -1;
};

enum class IntegratorKind { Rk4, Trapezoidal };

struct IntegratorSettings {
    IntegratorKind method = IntegratorKind::Rk4;
    double step = 1e-5;
    double t_end = 1.0;
    double record_interval = 1e-3;
    double h_min = 1e-9;           // trapezoidal step-rejection floor
    double newton_tolerance = 1e-10;
    double sync_tol = 0.1;         // replug voltage synchronisation, V
    double tail_window = 1.0;      // steady-state averaging window per segment, s
    bool monitors = true;
};

enum class InitialCondition { DroopEquilibrium, ClosedLoopEquilibrium, NoLoadNominal, Zero };

struct Scenario {
    std::string name;
    LoadProfile initial_loads;
    InitialCondition initial = InitialCondition::DroopEquilibrium;
    /// While a unit is unplugged its converter follows the bus voltage it
    /// would reconnect to; otherwise it idles at V_nom.
    bool unplugged_tracks_bus = true;
    std::vector<ScenarioEvent> events;  // sorted by time
    IntegratorSettings integrator;

    /// Throws ScenarioError (ordering, horizon, indices, replug without unplug).
    void validate(const MicrogridSpec& spec, const ControllerConfig& cfg) const;
};

struct SystemState {
    PhysicalState phys;
    ControllerState ctrl;
    double t = 0.0;
    LoadProfile loads;
    Eigen::MatrixXd link_on;  // n_gens x n_gens, 1 = link up
    bool secondary_enabled = false;
    std::vector<bool> pending_replug;

    std::vector<bool> gen_active() const { return ctrl.active_mask; }
};

/// Initial state per the scenario's InitialCondition and initial masks.
SystemState initial_state(const MicrogridSpec& spec, const ControllerConfig& cfg,
                          const Scenario& scenario);

struct EventRecord {
    double time = 0.0;
    std::string kind;
    std::string detail;
    std::string status;  // applied | deferred | applied-after-deferral
};

/// Applies one event. A replug restores the unit's links and closes the
/// breaker only when both sides agree within `sync_tol`; otherwise the unit
/// is left pending (see SystemState::pending_replug).
SystemState apply_event(const MicrogridSpec& spec, const ControllerConfig& cfg,
                        const Scenario& scenario, const SystemState& state,
                        const ScenarioEvent& ev, std::vector<EventRecord>* log = nullptr);

/// Retries pending replugs; returns true if any breaker closed.
bool retry_pending_replugs(const MicrogridSpec& spec, const Scenario& scenario,
                           SystemState& state, std::vector<EventRecord>* log = nullptr);

/// Generator-side voltage of a unit across its open breaker.
double breaker_gen_side_voltage(const MicrogridSpec& spec, const Scenario& scenario,
                                const SystemState& state, int gen);

struct Sample {
    double t = 0.0;
    Eigen::VectorXd v_gen;
    Eigen::VectorXd i_gen;
    Eigen::VectorXd i_line;
    Eigen::VectorXd v_bus;
    Eigen::VectorXd lambda;
    Eigen::VectorXd x_c;
    Eigen::VectorXd u;
    Eigen::VectorXd margins;
    double wavg = 0.0;
    double spread = 0.0;
    double h = 0.0;    // absolute stored energy, J
    double h_t = std::numeric_limits<double>::quiet_NaN();
    double dh_t = std::numeric_limits<double>::quiet_NaN();
};

/// Monitor summary of one inter-event segment, evaluated on the integration grid.
struct SegmentReport {
    double t_begin = 0.0;
    double t_end = 0.0;
    std::vector<bool> gen_active;
    bool secondary_enabled = false;
    bool cpl_active = false;
    LoadProfile loads;
    Eigen::MatrixXd link_on;
    long steps = 0;

    std::optional<EquilibriumPoint> equilibrium;
    std::string equilibrium_error;

    double h_t_begin = 0.0;
    double max_dh_t = -std::numeric_limits<double>::infinity();  // W
    double max_dh_t_scaled = -std::numeric_limits<double>::infinity();
    double max_h_t_increase = 0.0;  // largest one-step rise, J
    double dh_rms = 0.0;            // RMS of the analytic rate
    double dh_rms_error = 0.0;      // RMS of (central difference - analytic)
    double min_t_eig = std::numeric_limits<double>::infinity();
    double min_margin = std::numeric_limits<double>::infinity();
    long domain_exit_steps = 0;
    double max_droop_identity_error = 0.0;  // V

    // Averages over the last tail_window seconds (integration grid).
    double tail_duration = 0.0;
    Eigen::VectorXd tail_v_gen;
    Eigen::VectorXd tail_i_gen;
    Eigen::VectorXd tail_i_line;
    Eigen::VectorXd tail_v_bus;
    Eigen::VectorXd tail_lambda;
    double final_spread = 0.0;

    bool inside_domain() const { return domain_exit_steps == 0; }
};

struct Trajectory {
    int n_gens = 0;
    int n_lines = 0;
    int n_buses = 0;
    std::vector<Sample> samples;
    std::vector<EventRecord> events;
    std::vector<SegmentReport> segments;
    SystemState final_state;

    /// Index of the segment containing time t (the later one at a boundary).
    int segment_at(double t) const;
};

/// Fixed-step RK4; events split steps exactly at their timestamps.
Trajectory integrate(const MicrogridSpec& spec, const ControllerConfig& cfg,
                     const Scenario& scenario, const SystemState& init);

/// Trapezoidal rule with a modified-Newton inner solve; failed steps halve
/// down to h_min before giving up.
Trajectory integrate_implicit(const MicrogridSpec& spec, const ControllerConfig& cfg,
                              const Scenario& scenario, const SystemState& init);

/// Dispatches on scenario.integrator.method.
Trajectory simulate(const MicrogridSpec& spec, const ControllerConfig& cfg,
                    const Scenario& scenario, const SystemState& init);

/// Closed-loop right-hand side over the stacked vector [phi_G; phi_E; q_N; x_c]
/// for the masks in `state` (continuous neighbour exchange).
Eigen::VectorXd closed_loop_rhs(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                const Scenario& scenario, const SystemState& state,
                                const Eigen::VectorXd& y, double t = 0.0);

Eigen::VectorXd stack_state(const SystemState& state);

struct LyapunovReport {
    std::vector<double> t;
    std::vector<double> h_t;
    std::vector<double> dh_t;
    std::vector<double> min_t_eig;
    std::vector<std::size_t> violations;  // sample indices with dh_t > eps or outside D
};

/// Per-sample storage, analytic rate and min eigenvalue of T for the recorded
/// samples in [t_begin, t_end]. The interval must not straddle an event.
LyapunovReport monitor_lyapunov(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                const Trajectory& traj, const EquilibriumPoint& eq,
                                double t_begin, double t_end, double eps = 1e-9);

}  // namespace dcmg
