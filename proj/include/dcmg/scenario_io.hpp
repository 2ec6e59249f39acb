#pragma once

// Scenario files: JSON text holding the network, controller, event timeline
// and integrator settings. Generator, bus and line numbers in files are
// one-based.

#include "dcmg/mg_model.hpp"
#include "dcmg/secondary_control.hpp"
#include "dcmg/sim_engine.hpp"

#include <filesystem>
#include <string>

namespace dcmg {

struct OutputSettings {
    std::string trajectory = "trajectory.csv";
    std::string events = "events.csv";
    std::string summary = "summary.txt";
};

struct ScenarioBundle {
    MicrogridSpec spec;
    ControllerConfig cfg;
    Scenario scenario;
    OutputSettings output;
    /// Per-unit bases applied to r_pu / l_pu entries.
    double base_resistance = 1.0;
    double base_inductance = 1.0;
};

/// Throws ScenarioError with a line number (syntax) or a field path
/// (content), or the validation error of the module that rejected it.
ScenarioBundle parse_scenario(const std::filesystem::path& path);
ScenarioBundle parse_scenario_text(const std::string& text);

}  // namespace dcmg
