// dcmg: command-line front end (simulate / dispatch / equilibrium / verify).

#include "dcmg/csv.hpp"
#include "dcmg/dispatch.hpp"
#include "dcmg/errors.hpp"
#include "dcmg/scenario_io.hpp"
#include "dcmg/verification.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace dcmg;

namespace {

constexpr int kExitCriterion = 1;
constexpr int kExitUsage = 2;

void print_vector(const char* name, const Eigen::VectorXd& v, const char* unit) {
    std::printf("%-8s", name);
    for (Eigen::Index i = 0; i < v.size(); ++i) std::printf(" %12.6f", v[i]);
    std::printf("  [%s]\n", unit);
}

int cmd_simulate(const std::string& path, const std::string& out_dir, double dt,
                 const std::string& integrator) {
    ScenarioBundle b = parse_scenario(path);
    auto& in = b.scenario.integrator;
    if (!integrator.empty()) {
        in.method = integrator == "rk4" ? IntegratorKind::Rk4 : IntegratorKind::Trapezoidal;
    }
    if (dt > 0.0) {
        in.step = dt;
        in.h_min = std::min(in.h_min, dt);
        in.record_interval = std::max(in.record_interval, dt);
    }
    b.scenario.validate(b.spec, b.cfg);

    const Trajectory traj = simulate(b.spec, b.cfg, b.scenario, initial_state(b.spec, b.cfg, b.scenario));
    fs::create_directories(out_dir);
    emit_csv(traj, fs::path(out_dir) / b.output.trajectory, fs::path(out_dir) / b.output.events);
    const std::string summary = summary_report(b, traj);
    std::ofstream(fs::path(out_dir) / b.output.summary) << summary;
    std::cout << summary;
    return 0;
}

int cmd_dispatch(const std::string& path, double demand) {
    const ScenarioBundle b = parse_scenario(path);
    const DispatchSolution s = solve_eic(b.spec.gens, demand);
    std::printf("demand %.6f A, lambda_opt %.12f $/A, total cost %.9f $\n", demand, s.lambda_opt, s.total_cost);
    for (Eigen::Index i = 0; i < s.currents.size(); ++i) {
        std::printf("  unit %2d  I = %12.6f A\n", static_cast<int>(i + 1), s.currents[i]);
    }
    return 0;
}

int cmd_equilibrium(const std::string& path, int unplug, bool cpl, bool droop) {
    const ScenarioBundle b = parse_scenario(path);
    const int ng = b.spec.n_gens();
    std::vector<bool> active(ng, true);
    if (unplug != 0) {
        if (unplug < 1 || unplug > ng) throw ValidationError("--unplug must be in 1.." + std::to_string(ng));
        active[unplug - 1] = false;
    }
    LoadProfile loads = b.scenario.initial_loads;
    for (auto& l : loads) l.p_on = cpl;
    const EquilibriumPoint eq = droop ? solve_droop_equilibrium(b.spec, loads, active)
                                      : solve_closed_loop_equilibrium(b.spec, b.cfg, loads, active);
    std::printf("%s equilibrium, CPL %s, Newton iterations %d, residual %.3e\n",
                droop ? "droop" : "closed-loop", cpl ? "on" : "off", eq.iterations, eq.residual_norm);
    if (!droop) std::printf("lambda_opt %.12f $/A\n", eq.lambda_opt);
    if (eq.low_voltage_branch) std::printf("warning: low-voltage branch\n");
    print_vector("V_gen", eq.v_gen, "V");
    print_vector("I_G", eq.i_gen, "A");
    print_vector("I_E", eq.i_line, "A");
    print_vector("V_N", eq.v_bus, "V");
    std::printf("weighted average %.9f V\n", weighted_average_voltage(b.spec.gens, eq.v_gen, active));
    return 0;
}

int cmd_verify(const std::string& path, int runs, bool serial) {
    const ScenarioBundle b = parse_scenario(path);
    VerificationOptions opts;
    if (runs > 0) opts.stability_runs = runs;
    opts.parallel = !serial;
    VerificationReport rep;
    try {
        rep = verify_scenario(b, opts);
    } catch (const Error& e) {
        std::cerr << "verification aborted: " << e.what() << "\n";
        return kExitCriterion;
    }
    std::cout << rep.table();
    std::cout << (rep.all_pass() ? "all criteria pass\n" : "one or more criteria FAIL\n");
    return rep.all_pass() ? 0 : kExitCriterion;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DC microgrid simulator with distributed consensus secondary control"};
    app.require_subcommand(1);

    std::string scenario;
    std::string out_dir;
    std::string integrator;
    double dt = 0.0;
    double demand = 0.0;
    int unplug = 0;
    bool cpl = false;
    bool droop = false;
    int runs = 0;
    bool serial = false;

    auto* sim = app.add_subcommand("simulate", "run a scenario and write CSV + summary");
    sim->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", out_dir, "output directory")->required();
    sim->add_option("--dt", dt, "integration step, s")->check(CLI::PositiveNumber);
    sim->add_option("--integrator", integrator, "rk4 or trapezoidal")
        ->check(CLI::IsMember({"rk4", "trapezoidal"}));

    auto* disp = app.add_subcommand("dispatch", "equal-incremental-cost dispatch for a demand");
    disp->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
    disp->add_option("--demand", demand, "total current demand, A")->required();

    auto* eqc = app.add_subcommand("equilibrium", "steady state from the Newton oracle");
    eqc->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
    eqc->add_option("--unplug", unplug, "unit to leave out (1-based)");
    eqc->add_flag("--cpl", cpl, "switch constant-power loads on");
    eqc->add_flag("--droop", droop, "primary droop only (u = 0)");

    auto* ver = app.add_subcommand("verify", "run the acceptance criteria");
    ver->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
    ver->add_option("--runs", runs, "random runs for the global-stability check")->check(CLI::PositiveNumber);
    ver->add_flag("--serial", serial, "use the serial batch runner");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*sim) return cmd_simulate(scenario, out_dir, dt, integrator);
        if (*disp) return cmd_dispatch(scenario, demand);
        if (*eqc) return cmd_equilibrium(scenario, unplug, cpl, droop);
        if (*ver) return cmd_verify(scenario, runs, serial);
    } catch (const ScenarioError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const StructuralError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCriterion;
    }
    return kExitUsage;
}
