#pragma once

// Acceptance checks over a scenario run, shared by `dcmg verify` and the
// acceptance test binary.

#include "dcmg/scenario_io.hpp"
#include "dcmg/sim_engine.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dcmg {

enum class Verdict { Pass, Fail, NotApplicable };

struct CriterionResult {
    int id = 0;
    std::string title;
    Verdict verdict = Verdict::NotApplicable;
    std::string measured;
    std::string required;
    std::vector<std::string> details;

    bool passed() const { return verdict == Verdict::Pass; }
};

struct VerificationOptions {
    int dispatch_trials = 20;
    int stability_runs = 50;
    double stability_horizon = 30.0;     // s
    double stability_step = 1e-3;        // trapezoidal step for the random runs
    double stability_energy_factor = 5.0;
    std::uint64_t seed = 20240611;
    bool parallel = true;
};

struct VerificationReport {
    std::vector<CriterionResult> criteria;
    double simulation_seconds = 0.0;
    Trajectory trajectory;

    /// NotApplicable entries do not count as failures here.
    bool all_pass() const;
    std::string table() const;
};

/// Segment-level features of a timeline run that the criteria refer to.
struct TimelineIndex {
    int activation = -1;     // first enabled segment after a disabled one
    int cpl_on = -1;         // first enabled segment with CPLs active
    int cpl_before = -1;     // enabled segment right before cpl_on
    int cpl_after = -1;      // enabled segment right after cpl_on
    int unplugged = -1;      // first enabled segment with a unit out
    int before_unplug = -1;
    int after_replug = -1;
    int unplugged_gen = -1;
};

TimelineIndex index_timeline(const Trajectory& traj);

/// Mean incremental cost of the active units over the segment tail.
double tail_lambda(const SegmentReport& seg);

/// Largest relative deviation of the segment tail from an equilibrium,
/// taken per group (V_gen, I_G, I_E, V_N) as ||d||_inf / ||ref||_inf.
double tail_relative_error(const SegmentReport& seg, const EquilibriumPoint& eq);

CriterionResult check_kkt_consensus(const ScenarioBundle& b, const Trajectory& traj,
                                    double sim_seconds);
CriterionResult check_voltage_formation(const ScenarioBundle& b, const Trajectory& traj);
CriterionResult check_load_step(const ScenarioBundle& b, const Trajectory& traj);
CriterionResult check_plug_and_play(const ScenarioBundle& b, const Trajectory& traj);
CriterionResult check_passivity(const ScenarioBundle& b, const Trajectory& traj);
CriterionResult check_oracle_equivalence(const ScenarioBundle& b, const Trajectory& traj);
CriterionResult check_dispatch_bruteforce(int trials, std::uint64_t seed, bool parallel);
CriterionResult check_structure(const ScenarioBundle& b, const Trajectory& traj, std::uint64_t seed);
CriterionResult check_global_stability(const ScenarioBundle& b, const VerificationOptions& opts);

/// Runs the scenario and evaluates every criterion.
VerificationReport verify_scenario(const ScenarioBundle& b, const VerificationOptions& opts = {});

/// Plain-text per-segment steady-state table with oracle deltas.
std::string summary_report(const ScenarioBundle& b, const Trajectory& traj);

}  // namespace dcmg
