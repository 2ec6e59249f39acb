#include "dcmg/verification.hpp"

#include "dcmg/batch.hpp"
#include "dcmg/dispatch.hpp"
#include "dcmg/errors.hpp"
#include "dcmg/lyapunov.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

namespace dcmg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string sci(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

std::string fix(double v, int digits = 6) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string span(const SegmentReport& s) {
    return "[" + fix(s.t_begin, 3) + ", " + fix(s.t_end, 3) + "] s";
}

CriterionResult make(int id, const char* title) {
    CriterionResult r;
    r.id = id;
    r.title = title;
    return r;
}

bool all_active(const SegmentReport& s) {
    return std::all_of(s.gen_active.begin(), s.gen_active.end(), [](bool b) { return b; });
}

// Segment owning sample n; the pre-event copy recorded at a boundary belongs
// to the segment that ends there.
int sample_segment(const Trajectory& traj, std::size_t n) {
    const double t = traj.samples[n].t;
    int seg = traj.segment_at(t);
    if (n + 1 < traj.samples.size() && traj.samples[n + 1].t == t && seg > 0 &&
        traj.segments[seg].t_begin == t) {
        --seg;
    }
    return seg;
}

double group_error(const Eigen::VectorXd& got, const Eigen::VectorXd& ref) {
    if (ref.size() == 0) return 0.0;
    const double scale = ref.cwiseAbs().maxCoeff();
    return (got - ref).cwiseAbs().maxCoeff() / (scale > 0.0 ? scale : 1.0);
}

SystemState equilibrium_system_state(const ScenarioBundle& b, const SegmentReport& seg,
                                     const EquilibriumPoint& eq) {
    SystemState s;
    s.phys = to_physical_state(b.spec, eq);
    s.ctrl.active_mask = seg.gen_active;
    s.ctrl.x_c = seg.secondary_enabled
                     ? equilibrium_control(b.spec, b.cfg, eq, seg.link_on).x_c_particular
                     : Eigen::VectorXd::Zero(b.spec.n_gens());
    s.loads = seg.loads;
    s.link_on = seg.link_on;
    s.secondary_enabled = seg.secondary_enabled;
    s.pending_replug.assign(b.spec.n_gens(), false);
    return s;
}

double active_wavg(const ScenarioBundle& b, const SegmentReport& seg) {
    return weighted_average_voltage(b.spec.gens, seg.tail_v_gen, seg.gen_active);
}

}  // namespace

bool VerificationReport::all_pass() const {
    return std::none_of(criteria.begin(), criteria.end(),
                        [](const CriterionResult& c) { return c.verdict == Verdict::Fail; });
}

std::string VerificationReport::table() const {
    std::ostringstream os;
    for (const auto& c : criteria) {
        const char* tag = c.verdict == Verdict::Pass ? "PASS" : c.verdict == Verdict::Fail ? "FAIL" : "N/A ";
        os << "criterion " << c.id << " " << tag << "  " << c.title << "\n";
        os << "    measured: " << c.measured << "\n";
        os << "    required: " << c.required << "\n";
        for (const auto& d : c.details) os << "    - " << d << "\n";
    }
    return os.str();
}

TimelineIndex index_timeline(const Trajectory& traj) {
    TimelineIndex ix;
    const auto& segs = traj.segments;
    const int n = static_cast<int>(segs.size());
    for (int s = 1; s < n; ++s) {
        if (segs[s].secondary_enabled && !segs[s - 1].secondary_enabled) {
            ix.activation = s;
            break;
        }
    }
    for (int s = 0; s < n; ++s) {
        if (segs[s].secondary_enabled && segs[s].cpl_active && ix.cpl_on < 0) {
            ix.cpl_on = s;
            if (s > 0 && segs[s - 1].secondary_enabled && !segs[s - 1].cpl_active) ix.cpl_before = s - 1;
            if (s + 1 < n && segs[s + 1].secondary_enabled && !segs[s + 1].cpl_active) ix.cpl_after = s + 1;
        }
        if (segs[s].secondary_enabled && !all_active(segs[s]) && ix.unplugged < 0) {
            ix.unplugged = s;
            for (std::size_t i = 0; i < segs[s].gen_active.size(); ++i) {
                if (!segs[s].gen_active[i]) {
                    ix.unplugged_gen = static_cast<int>(i);
                    break;
                }
            }
            if (s > 0 && segs[s - 1].secondary_enabled && all_active(segs[s - 1])) ix.before_unplug = s - 1;
            if (s + 1 < n && segs[s + 1].secondary_enabled && all_active(segs[s + 1])) ix.after_replug = s + 1;
        }
    }
    return ix;
}

double tail_lambda(const SegmentReport& seg) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < seg.gen_active.size(); ++i) {
        if (!seg.gen_active[i]) continue;
        sum += seg.tail_lambda[static_cast<Eigen::Index>(i)];
        ++n;
    }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

double tail_relative_error(const SegmentReport& seg, const EquilibriumPoint& eq) {
    Eigen::VectorXd vg = seg.tail_v_gen;
    Eigen::VectorXd vg_ref = eq.v_gen;
    // Unplugged units do not take part in the comparison.
    for (std::size_t i = 0; i < seg.gen_active.size(); ++i) {
        if (!seg.gen_active[i]) vg[static_cast<Eigen::Index>(i)] = vg_ref[static_cast<Eigen::Index>(i)];
    }
    return std::max({group_error(vg, vg_ref), group_error(seg.tail_i_gen, eq.i_gen),
                     group_error(seg.tail_i_line, eq.i_line), group_error(seg.tail_v_bus, eq.v_bus)});
}

CriterionResult check_kkt_consensus(const ScenarioBundle& /*b*/, const Trajectory& traj,
                                    double sim_seconds) {
    auto r = make(1, "KKT consensus within 5 s of activation");
    r.required = "spread < 1e-3 $/A on [t_on+5 s, segment end]; |lambda - lambda_opt| < 1e-4 $/A; runtime <= 60 s";
    const TimelineIndex ix = index_timeline(traj);
    if (ix.activation < 0) {
        r.measured = "no secondary activation in the timeline";
        return r;
    }
    const SegmentReport& seg = traj.segments[ix.activation];
    if (!seg.equilibrium) {
        r.verdict = Verdict::Fail;
        r.measured = "oracle failed: " + seg.equilibrium_error;
        return r;
    }
    const double t_check = seg.t_begin + 5.0;
    double worst = 0.0;
    double at_check = std::numeric_limits<double>::quiet_NaN();
    double first_below = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t n = 0; n < traj.samples.size(); ++n) {
        if (sample_segment(traj, n) != ix.activation) continue;
        const Sample& s = traj.samples[n];
        if (s.t >= t_check - 1e-9) {
            worst = std::max(worst, s.spread);
            if (std::isnan(at_check)) at_check = s.spread;
        }
        if (s.spread >= 1e-3) first_below = std::numeric_limits<double>::quiet_NaN();
        else if (std::isnan(first_below)) first_below = s.t;
    }
    const double lam = tail_lambda(seg);
    const double dlam = std::abs(lam - seg.equilibrium->lambda_opt);
    const bool window = seg.t_end >= t_check;
    r.measured = "spread at t_on+5 s = " + sci(at_check) + ", max after = " + sci(worst) +
                 ", |tail lambda - lambda_opt| = " + sci(dlam) + ", runtime = " + fix(sim_seconds, 2) + " s";
    r.details.push_back("activation at " + fix(seg.t_begin, 3) + " s, lambda_opt = " +
                        fix(seg.equilibrium->lambda_opt, 9) + " $/A, tail lambda = " + fix(lam, 9));
    if (!std::isnan(first_below)) {
        r.details.push_back("spread stays below 1e-3 from t = " + fix(first_below, 3) + " s (" +
                            fix(first_below - seg.t_begin, 3) + " s after activation)");
    }
    r.verdict = window && worst < 1e-3 && dlam < 1e-4 && sim_seconds <= 60.0 ? Verdict::Pass : Verdict::Fail;
    if (!window) r.details.push_back("segment ends before t_on + 5 s");
    return r;
}

CriterionResult check_voltage_formation(const ScenarioBundle& b, const Trajectory& traj) {
    auto r = make(2, "weighted-average voltage formation");
    r.required = "|sum w V / sum w - V_nom| <= 1e-3 V on every enabled segment tail";
    double worst = 0.0;
    int count = 0;
    for (const auto& seg : traj.segments) {
        if (!seg.secondary_enabled || seg.tail_duration <= 0.0) continue;
        const double dev = std::abs(active_wavg(b, seg) - b.spec.v_nom);
        worst = std::max(worst, dev);
        ++count;
        r.details.push_back(span(seg) + ": weighted average " + fix(active_wavg(b, seg), 9) + " V");
    }
    double inst = 0.0;
    for (std::size_t n = 0; n < traj.samples.size(); ++n) {
        const SegmentReport& seg = traj.segments[sample_segment(traj, n)];
        if (!seg.secondary_enabled) continue;
        inst = std::max(inst, std::abs(traj.samples[n].wavg - b.spec.v_nom));
    }
    if (count == 0) {
        r.measured = "no enabled segment";
        return r;
    }
    r.measured = "max tail deviation " + sci(worst) + " V over " + std::to_string(count) +
                 " segments (max instantaneous " + sci(inst) + " V)";
    r.verdict = worst <= 1e-3 ? Verdict::Pass : Verdict::Fail;
    return r;
}

CriterionResult check_load_step(const ScenarioBundle& b, const Trajectory& traj) {
    (void)b;
    auto r = make(3, "optimal incremental cost shift under CPL step");
    r.required = "lambda(CPL on) > lambda(before); |lambda(after) - lambda(before)| < 1e-4 $/A";
    const TimelineIndex ix = index_timeline(traj);
    if (ix.cpl_on < 0 || ix.cpl_before < 0 || ix.cpl_after < 0) {
        r.measured = "timeline has no enabled CPL on/off sequence";
        return r;
    }
    const double before = tail_lambda(traj.segments[ix.cpl_before]);
    const double during = tail_lambda(traj.segments[ix.cpl_on]);
    const double after = tail_lambda(traj.segments[ix.cpl_after]);
    const double back = std::abs(after - before);
    r.measured = "tail lambda before/on/after = " + fix(before, 7) + " / " + fix(during, 7) + " / " +
                 fix(after, 7) + " $/A, |after - before| = " + sci(back);
    for (int s : {ix.cpl_before, ix.cpl_on, ix.cpl_after}) {
        const auto& seg = traj.segments[s];
        if (seg.equilibrium) {
            r.details.push_back(span(seg) + ": oracle lambda_opt = " + fix(seg.equilibrium->lambda_opt, 9));
        }
    }
    r.verdict = during > before && back < 1e-4 ? Verdict::Pass : Verdict::Fail;
    return r;
}

CriterionResult check_plug_and_play(const ScenarioBundle& b, const Trajectory& traj) {
    auto r = make(4, "plug-and-play");
    r.required = "lambda(unplugged) > lambda(before); V_gen tracks its bus while out; "
                 "post-replug tail within 1e-4 relative of the pre-unplug oracle";
    const TimelineIndex ix = index_timeline(traj);
    if (ix.unplugged < 0 || ix.before_unplug < 0 || ix.after_replug < 0) {
        r.measured = "timeline has no enabled unplug/replug sequence";
        return r;
    }
    const auto& before = traj.segments[ix.before_unplug];
    const auto& out = traj.segments[ix.unplugged];
    const auto& after = traj.segments[ix.after_replug];
    const int g = ix.unplugged_gen;
    const int k = b.spec.graph.gen_bus[g];

    double track = 0.0;
    for (std::size_t n = 0; n < traj.samples.size(); ++n) {
        if (sample_segment(traj, n) != ix.unplugged) continue;
        const auto& s = traj.samples[n];
        if (s.t == out.t_begin) continue;
        track = std::max(track, std::abs(s.v_gen[g] - s.v_bus[k]));
    }
    const double lam_before = tail_lambda(before);
    const double lam_out = tail_lambda(out);
    double rel = kInf;
    if (before.equilibrium) rel = tail_relative_error(after, *before.equilibrium);

    r.measured = "tail lambda " + fix(lam_before, 7) + " -> " + fix(lam_out, 7) +
                 " $/A, max |V_gen - V_bus| while out = " + sci(track) +
                 " V, post-replug relative error = " + sci(rel);
    if (out.equilibrium) {
        r.details.push_back("oracle lambda_opt with unit " + std::to_string(g + 1) + " out = " +
                            fix(out.equilibrium->lambda_opt, 9) + " $/A");
        r.details.push_back("weighted average of the remaining units (tail) = " + fix(active_wavg(b, out), 9) + " V");
    }
    if (!before.equilibrium) r.details.push_back("pre-unplug oracle failed: " + before.equilibrium_error);
    r.verdict = lam_out > lam_before && track < 1e-9 && rel < 1e-4 ? Verdict::Pass : Verdict::Fail;
    return r;
}

CriterionResult check_passivity(const ScenarioBundle& b, const Trajectory& traj) {
    auto r = make(5, "passivity / Lyapunov decrease");
    r.required = "segments inside D: max scaled dH_t <= 1e-9, one-step H_t rise <= h^2 * scale, "
                 "differenced H_t vs analytic rate <= 1% RMS";
    const double h = b.scenario.integrator.step;
    int checked = 0;
    bool ok = true;
    double worst_rate = -kInf;
    double worst_rise = 0.0;
    double worst_rms = 0.0;
    for (const auto& seg : traj.segments) {
        if (!seg.equilibrium) {
            r.details.push_back(span(seg) + ": skipped, oracle failed (" + seg.equilibrium_error + ")");
            continue;
        }
        if (!seg.inside_domain()) {
            r.details.push_back(span(seg) + ": skipped, leaves D on " + std::to_string(seg.domain_exit_steps) +
                                " of " + std::to_string(seg.steps + 1) + " grid points (min margin " +
                                sci(seg.min_margin) + " S)");
            continue;
        }
        ++checked;
        const double scale = std::max(seg.h_t_begin, 1.0);
        const double ratio = seg.dh_rms > 1e-9 ? seg.dh_rms_error / seg.dh_rms : 0.0;
        worst_rate = std::max(worst_rate, seg.max_dh_t_scaled);
        worst_rise = std::max(worst_rise, seg.max_h_t_increase / scale);
        worst_rms = std::max(worst_rms, ratio);
        const bool seg_ok = seg.max_dh_t_scaled <= 1e-9 && seg.max_h_t_increase <= h * h * scale && ratio <= 0.01;
        ok = ok && seg_ok;
        r.details.push_back(span(seg) + ": H_t(start) = " + sci(seg.h_t_begin) + " J, max dH_t = " +
                            sci(seg.max_dh_t) + " W, RMS mismatch " + sci(ratio) +
                            ", min eig T = " + sci(seg.min_t_eig) + (seg_ok ? "" : "  <-- violation"));
    }
    if (checked == 0) {
        r.measured = "no segment stays inside D";
        return r;
    }
    r.measured = std::to_string(checked) + " segments in D: max scaled dH_t = " + sci(worst_rate) +
                 ", max scaled rise = " + sci(worst_rise) + ", worst RMS mismatch = " + sci(worst_rms);
    r.verdict = ok ? Verdict::Pass : Verdict::Fail;
    return r;
}

CriterionResult check_oracle_equivalence(const ScenarioBundle& b, const Trajectory& traj) {
    auto r = make(6, "oracle equivalence");
    r.required = "||closed-loop RHS at oracle||_inf < 1e-9; tail within 1e-6 relative of the oracle (every enabled segment)";
    double worst_rhs = 0.0;
    double worst_rel = 0.0;
    int count = 0;
    bool ok = true;
    for (const auto& seg : traj.segments) {
        if (!seg.secondary_enabled) continue;
        ++count;
        if (!seg.equilibrium) {
            ok = false;
            r.details.push_back(span(seg) + ": oracle failed (" + seg.equilibrium_error + ")");
            continue;
        }
        const SystemState s = equilibrium_system_state(b, seg, *seg.equilibrium);
        const Eigen::VectorXd f = closed_loop_rhs(b.spec, b.cfg, b.scenario, s, stack_state(s));
        const double rhs = f.cwiseAbs().maxCoeff();
        const double rel = tail_relative_error(seg, *seg.equilibrium);
        worst_rhs = std::max(worst_rhs, rhs);
        worst_rel = std::max(worst_rel, rel);
        ok = ok && rhs < 1e-9 && rel < 1e-6;
        r.details.push_back(span(seg) + ": ||RHS|| = " + sci(rhs) + ", tail relative error = " + sci(rel));
    }
    if (count == 0) {
        r.measured = "no enabled segment";
        return r;
    }
    r.measured = "max ||RHS||_inf = " + sci(worst_rhs) + ", max tail relative error = " + sci(worst_rel) +
                 " over " + std::to_string(count) + " segments";
    r.verdict = ok ? Verdict::Pass : Verdict::Fail;
    return r;
}

CriterionResult check_dispatch_bruteforce(int trials, std::uint64_t seed, bool parallel) {
    auto r = make(7, "dispatch vs brute-force grid search");
    r.required = "|C(eic) - C(grid)| <= 1e-6 $ and lambda spread < 1e-12 $/A";
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ua(0.05, 0.3), ub(0.05, 0.3), ug(0.0, 0.5), ud(2.0, 40.0);
    double worst_gap = 0.0;
    double worst_spread = 0.0;
    bool ok = true;
    for (int t = 0; t < trials; ++t) {
        const int n = 2 + (t % 2);
        std::vector<GeneratorSpec> gens(n);
        for (auto& g : gens) {
            g.alpha = ua(rng);
            g.beta = ub(rng);
            g.gamma = ug(rng);
        }
        const double demand = ud(rng);
        const DispatchSolution eic = solve_eic(gens, demand);
        const GridSearchResult grid =
            parallel ? grid_search_dispatch(gens, demand) : grid_search_dispatch_serial(gens, demand);
        const double gap = std::abs(eic.total_cost - grid.cost);
        const double spread = kkt_residual(gens, eic.currents).spread;
        worst_gap = std::max(worst_gap, gap);
        worst_spread = std::max(worst_spread, spread);
        if (!(gap <= 1e-6 && spread < 1e-12 && eic.total_cost <= grid.cost + 1e-9)) {
            ok = false;
            r.details.push_back("trial " + std::to_string(t) + " (" + std::to_string(n) + " units, demand " +
                                fix(demand, 3) + " A): gap " + sci(gap) + ", spread " + sci(spread));
        }
    }
    r.measured = std::to_string(trials) + " trials: max cost gap " + sci(worst_gap) + " $, max spread " +
                 sci(worst_spread) + " $/A";
    r.verdict = ok ? Verdict::Pass : Verdict::Fail;
    return r;
}

namespace {

double rk4_order_ratio(const ScenarioBundle& b, std::vector<std::string>& details) {
    ScenarioBundle local = b;
    local.cfg.enabled = true;
    local.scenario.events.clear();
    local.scenario.initial = InitialCondition::DroopEquilibrium;
    local.scenario.initial_loads = nominal_loads(b.spec, true, true, false);
    auto& in = local.scenario.integrator;
    in.method = IntegratorKind::Rk4;
    in.monitors = false;
    in.t_end = 5e-4;
    in.record_interval = in.t_end;
    const SystemState init = initial_state(local.spec, local.cfg, local.scenario);

    auto final_coenergy = [&](double h) {
        in.step = h;
        const Trajectory tr = integrate(local.spec, local.cfg, local.scenario, init);
        Eigen::VectorXd e(tr.final_state.phys.phi_gen.size() * 2 + tr.final_state.phys.phi_line.size() +
                          tr.final_state.phys.q_bus.size());
        e << tr.final_state.phys.coenergy(local.spec), tr.final_state.ctrl.x_c;
        return e;
    };
    const double h = 1e-5;
    const Eigen::VectorXd y1 = final_coenergy(h);
    const Eigen::VectorXd y2 = final_coenergy(h / 2);
    const Eigen::VectorXd y4 = final_coenergy(h / 4);
    const double d1 = (y1 - y2).cwiseAbs().maxCoeff();
    const double d2 = (y2 - y4).cwiseAbs().maxCoeff();
    details.push_back("RK4 step halving from h = 1e-5 s over 0.5 ms after activation: |y_h - y_h/2| = " + sci(d1) +
                      ", |y_h/2 - y_h/4| = " + sci(d2));
    return d1 / d2;
}

}  // namespace

CriterionResult check_structure(const ScenarioBundle& b, const Trajectory& traj, std::uint64_t seed) {
    auto r = make(8, "structural and property suite");
    r.required = "J skew and R symmetric (exact); 1^T L = 0, L >= 0; scalar law = CbI form (1e-12 rel); "
                 "droop identity each step; R_D + r >= 0; RK4 ratio 16 +- 20%";
    bool ok = true;
    auto note = [&](bool pass, const std::string& what) {
        ok = ok && pass;
        r.details.push_back(std::string(pass ? "ok   " : "FAIL ") + what);
    };

    const PortHamiltonian ph = assemble_ph(b.spec, nominal_loads(b.spec));
    const Eigen::MatrixXd J = ph.J();
    const Eigen::MatrixXd R = ph.R();
    const double skew = (J + J.transpose()).cwiseAbs().maxCoeff();
    const double sym = (R - R.transpose()).cwiseAbs().maxCoeff();
    const double f_split = (J - R - ph.F).cwiseAbs().maxCoeff();
    note(skew == 0.0 && sym == 0.0, "J + J^T = " + sci(skew) + ", R - R^T = " + sci(sym) +
                                        ", |J - R - F| = " + sci(f_split));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double worst_sum = 0.0;
    double worst_eig = kInf;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(u01(rng) * 9);
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                if (u01(rng) < 0.5) w(i, j) = w(j, i) = 0.1 + 5.0 * u01(rng);
            }
        }
        const Eigen::MatrixXd lap = laplacian(CommGraph(w));
        const double scale = std::max(1.0, lap.cwiseAbs().maxCoeff());
        worst_sum = std::max(worst_sum, (Eigen::RowVectorXd::Ones(n) * lap).cwiseAbs().maxCoeff() / scale);
        worst_eig = std::min(worst_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lap).eigenvalues().minCoeff() / scale);
    }
    note(worst_sum <= 1e-14 && worst_eig >= -1e-12,
         "200 random graphs: max |1^T L| / scale = " + sci(worst_sum) + ", min eig(L) / scale = " + sci(worst_eig));

    ControllerConfig live = b.cfg;
    live.enabled = true;
    const int ng = b.spec.n_gens();
    const CbiMatrices m = cbi_matrices(b.spec.gens, live);
    const Eigen::MatrixXd lap = laplacian(live.comm);
    Eigen::VectorXd k_i(ng);
    for (int i = 0; i < ng; ++i) k_i[i] = b.spec.gens[i].k_i;
    std::normal_distribution<double> nd(0.0, 1.0);
    double worst_law = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd I(ng), xc(ng);
        for (int i = 0; i < ng; ++i) {
            I[i] = 10.0 * nd(rng);
            xc[i] = 3.0 * nd(rng);
        }
        const ControllerOutput scalar = controller_rhs(live, b.spec.gens, xc, I);
        const InterconnectionOutput mat = interconnect(m, I, controller_output(lap, xc));
        const Eigen::VectorXd dxc = -(k_i.asDiagonal() * (lap * mat.u_c)).eval();
        const double du = (scalar.u - mat.u).cwiseAbs().maxCoeff() / std::max(1.0, scalar.u.cwiseAbs().maxCoeff());
        const double dx = (scalar.dx_c - dxc).cwiseAbs().maxCoeff() / std::max(1.0, scalar.dx_c.cwiseAbs().maxCoeff());
        worst_law = std::max({worst_law, du, dx});
    }
    note(worst_law <= 1e-12, "200 random inputs: scalar law vs CbI form relative gap = " + sci(worst_law));

    double droop_id = 0.0;
    bool any_enabled = false;
    for (const auto& seg : traj.segments) {
        if (!seg.secondary_enabled) continue;
        any_enabled = true;
        droop_id = std::max(droop_id, seg.max_droop_identity_error);
    }
    note(any_enabled && droop_id <= 1e-9,
         "droop cancellation identity on every integration step: max error " + sci(droop_id) + " V");

    Eigen::VectorXd two_alpha(ng), droop(ng);
    for (int i = 0; i < ng; ++i) {
        two_alpha[i] = 2.0 * b.spec.gens[i].alpha;
        droop[i] = b.spec.gens[i].droop;
    }
    const Eigen::MatrixXd sum = Eigen::MatrixXd(droop.asDiagonal()) + m.r;
    const Eigen::MatrixXd expect = live.k_p * two_alpha.asDiagonal() * lap * two_alpha.asDiagonal();
    const double sum_gap = (sum - expect).cwiseAbs().maxCoeff() / std::max(1.0, expect.cwiseAbs().maxCoeff());
    const double sum_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (sum + sum.transpose()))
                               .eigenvalues()
                               .minCoeff();
    note(sum_gap <= 1e-12 && sum_eig >= -1e-12,
         "R_D + r = k_P (2a) L (2a): gap " + sci(sum_gap) + ", min eig " + sci(sum_eig));

    const double ratio = rk4_order_ratio(b, r.details);
    note(std::abs(ratio - 16.0) <= 0.2 * 16.0, "RK4 convergence ratio " + fix(ratio, 3));

    r.measured = ok ? "all properties hold" : "see failing items";
    r.verdict = ok ? Verdict::Pass : Verdict::Fail;
    return r;
}

CriterionResult check_global_stability(const ScenarioBundle& b, const VerificationOptions& opts) {
    auto r = make(9, "global stability without CPLs (random large perturbations)");
    r.required = std::to_string(opts.stability_runs) +
                 " runs with P = 0 reach the oracle (final spread < 1e-6 $/A); T constant and positive definite";
    ControllerConfig cfg = b.cfg;
    cfg.enabled = true;
    const LoadProfile loads = nominal_loads(b.spec, true, true, false);
    const EquilibriumPoint eq = solve_closed_loop_equilibrium(b.spec, cfg, loads);
    const PhysicalState eq_state = to_physical_state(b.spec, eq);
    const double h_nom = hamiltonian(b.spec, eq_state);
    const int ng = b.spec.n_gens();

    Scenario sc;
    sc.name = b.scenario.name + "-perturbed";
    sc.initial_loads = loads;
    sc.integrator.method = IntegratorKind::Trapezoidal;
    sc.integrator.step = opts.stability_step;
    sc.integrator.t_end = opts.stability_horizon;
    sc.integrator.record_interval = opts.stability_horizon / 10.0;
    sc.integrator.h_min = opts.stability_step * 1e-4;

    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> energy(0.2, opts.stability_energy_factor);
    std::vector<BatchJob> jobs;
    std::vector<double> energy_ratio;
    for (int run = 0; run < opts.stability_runs; ++run) {
        Eigen::VectorXd ig(ng), il(b.spec.n_lines()), vb(b.spec.n_buses());
        for (int i = 0; i < ng; ++i) ig[i] = 2.0 * u(rng) * std::max(1.0, b.spec.gens[i].rated_current);
        for (int j = 0; j < il.size(); ++j) il[j] = 10.0 * u(rng);
        for (int k = 0; k < vb.size(); ++k) vb[k] = b.spec.v_nom * (0.5 + 1.5 * u(rng));
        PhysicalState p = PhysicalState::from_coenergy(b.spec, ig, il, vb);
        const double target = energy(rng) * h_nom;
        const double c = std::sqrt(target / hamiltonian(b.spec, p));
        p = PhysicalState::from_coenergy(b.spec, c * ig, c * il, c * vb);
        energy_ratio.push_back(hamiltonian(b.spec, p) / h_nom);

        SystemState s;
        s.phys = p;
        s.ctrl.active_mask.assign(ng, true);
        s.ctrl.x_c.resize(ng);
        for (int i = 0; i < ng; ++i) s.ctrl.x_c[i] = 5.0 * u(rng);
        s.loads = loads;
        s.link_on = (cfg.comm.weights().array() > 0.0).cast<double>().matrix();
        s.secondary_enabled = true;
        s.pending_replug.assign(ng, false);
        jobs.push_back({sc, s});
    }

    const auto outcomes = opts.parallel ? run_batch(b.spec, cfg, jobs) : run_batch_serial(b.spec, cfg, jobs);
    int converged = 0;
    double worst_spread = 0.0;
    double worst_err = 0.0;
    double min_eig = kInf;
    double eig_span = 0.0;
    double worst_rate = -kInf;
    for (std::size_t n = 0; n < outcomes.size(); ++n) {
        const auto& o = outcomes[n];
        if (!o.ok) {
            r.details.push_back("run " + std::to_string(n) + " failed: " + o.error);
            continue;
        }
        const Sample& last = o.last_sample;
        const double err = std::max({group_error(last.v_bus, eq.v_bus), group_error(last.i_gen, eq.i_gen),
                                     group_error(last.i_line, eq.i_line)});
        worst_spread = std::max(worst_spread, last.spread);
        worst_err = std::max(worst_err, err);
        for (const auto& seg : o.segments) {
            min_eig = std::min(min_eig, seg.min_t_eig);
            worst_rate = std::max(worst_rate, seg.max_dh_t_scaled);
        }
        if (last.spread < 1e-6) ++converged;
        else r.details.push_back("run " + std::to_string(n) + ": final spread " + sci(last.spread));
    }

    // T does not depend on the state when P = 0.
    const CommGraph eff = cfg.comm;
    const LyapunovContext ctx = LyapunovContext::make(b.spec, cfg, laplacian(eff), eq_state,
                                                      Eigen::VectorXd::Zero(ng), std::vector<bool>(ng, true),
                                                      loads, true);
    for (const auto& o : outcomes) {
        if (!o.ok) continue;
        const PhysicalState p = PhysicalState::from_coenergy(b.spec, o.last_sample.i_gen, o.last_sample.i_line,
                                                             o.last_sample.v_bus);
        eig_span = std::max(eig_span, std::abs(evaluate_lyapunov(ctx, p, o.last_sample.x_c).min_t_eig -
                                               evaluate_lyapunov(ctx, eq_state, o.last_sample.x_c).min_t_eig));
    }
    const double e_max = *std::max_element(energy_ratio.begin(), energy_ratio.end());
    r.measured = std::to_string(converged) + "/" + std::to_string(opts.stability_runs) +
                 " converged, max final spread " + sci(worst_spread) + " $/A, max state error " + sci(worst_err) +
                 ", min eig T = " + sci(min_eig);
    r.details.push_back("initial energy up to " + fix(e_max, 2) + "x the equilibrium storage, horizon " +
                        fix(opts.stability_horizon, 1) + " s, trapezoidal h = " + sci(opts.stability_step) + " s");
    r.details.push_back("max scaled dH_t over all runs = " + sci(worst_rate) +
                        ", variation of min eig T across states = " + sci(eig_span));
    r.verdict = converged == opts.stability_runs && min_eig > 0.0 && eig_span == 0.0 ? Verdict::Pass : Verdict::Fail;
    return r;
}

VerificationReport verify_scenario(const ScenarioBundle& b, const VerificationOptions& opts) {
    VerificationReport rep;
    const SystemState init = initial_state(b.spec, b.cfg, b.scenario);
    const auto t0 = std::chrono::steady_clock::now();
    rep.trajectory = simulate(b.spec, b.cfg, b.scenario, init);
    rep.simulation_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Trajectory& tr = rep.trajectory;

    rep.criteria.push_back(check_kkt_consensus(b, tr, rep.simulation_seconds));
    rep.criteria.push_back(check_voltage_formation(b, tr));
    rep.criteria.push_back(check_load_step(b, tr));
    rep.criteria.push_back(check_plug_and_play(b, tr));
    rep.criteria.push_back(check_passivity(b, tr));
    rep.criteria.push_back(check_oracle_equivalence(b, tr));
    rep.criteria.push_back(check_dispatch_bruteforce(opts.dispatch_trials, opts.seed, opts.parallel));
    rep.criteria.push_back(check_structure(b, tr, opts.seed));
    rep.criteria.push_back(check_global_stability(b, opts));
    return rep;
}

std::string summary_report(const ScenarioBundle& b, const Trajectory& traj) {
    std::ostringstream os;
    const int ng = b.spec.n_gens();
    os << "scenario " << b.scenario.name << ": " << traj.samples.size() << " samples, "
       << traj.segments.size() << " segments\n\n";
    for (const auto& e : traj.events) {
        os << "event t = " << fix(e.time, 6) << " s  " << e.kind << " " << e.detail << " (" << e.status << ")\n";
    }
    for (const auto& seg : traj.segments) {
        os << "\nsegment " << span(seg) << "  secondary " << (seg.secondary_enabled ? "on" : "off")
           << ", CPL " << (seg.cpl_active ? "on" : "off") << ", units out:";
        bool none = true;
        for (int i = 0; i < ng; ++i) {
            if (!seg.gen_active[i]) {
                os << " " << i + 1;
                none = false;
            }
        }
        os << (none ? " none" : "") << "\n";
        if (seg.tail_duration <= 0.0) continue;
        os << "  tail average over the last " << fix(seg.tail_duration, 3) << " s\n";
        os << "  unit      V_gen[V]       I_G[A]   lambda[$/A]";
        if (seg.equilibrium) os << "   oracle V_gen   oracle I_G";
        os << "\n";
        for (int i = 0; i < ng; ++i) {
            char line[160];
            std::snprintf(line, sizeof line, "  %4d  %12.6f %12.6f %13.9f", i + 1, seg.tail_v_gen[i],
                          seg.tail_i_gen[i], seg.tail_lambda[i]);
            os << line;
            if (seg.equilibrium) {
                std::snprintf(line, sizeof line, "  %13.6f %12.6f", seg.equilibrium->v_gen[i], seg.equilibrium->i_gen[i]);
                os << line;
            }
            os << "\n";
        }
        os << "  final lambda spread " << sci(seg.final_spread) << " $/A, weighted average "
           << fix(active_wavg(b, seg), 9) << " V\n";
        if (seg.equilibrium) {
            os << "  oracle lambda_opt "
               << (std::isnan(seg.equilibrium->lambda_opt) ? std::string("n/a (droop)") : fix(seg.equilibrium->lambda_opt, 9))
               << ", tail relative deviation " << sci(tail_relative_error(seg, *seg.equilibrium)) << "\n";
            os << "  Lyapunov: " << (seg.inside_domain() ? "inside D" : "leaves D") << ", steps outside D "
               << seg.domain_exit_steps << ", max dH_t " << sci(seg.max_dh_t) << " W, min eig T "
               << sci(seg.min_t_eig) << "\n";
        } else {
            os << "  oracle failed: " << seg.equilibrium_error << "\n";
        }
    }
    return os.str();
}

}  // namespace dcmg
