#pragma once

#include "dcmg/mg_model.hpp"
#include "dcmg/scenario_io.hpp"
#include "dcmg/secondary_control.hpp"

#include <string>

namespace fixtures {

inline dcmg::ScenarioBundle canonical() {
    return dcmg::parse_scenario(std::string(DCMG_SCENARIO_DIR) + "/table1_fig4.json");
}

// Two buses, one line, two units, round numbers.
inline dcmg::MicrogridSpec two_bus() {
    dcmg::MicrogridSpec s;
    s.graph.n_buses = 2;
    s.graph.line_endpoints = {{0, 1}};
    s.graph.gen_bus = {0, 1};
    s.gens = {{0.5, 0.1, 1e-3, 0.1, 0.2, 0.0, 10.0, 50.0},
              {0.25, 0.2, 2e-3, 0.2, 0.1, 0.0, 10.0, 20.0}};
    s.lines = {{0.4, 4e-4}};
    s.buses = {{1e-2, 0.05, 0.5, 20.0}, {2e-2, 0.1, 1.0, 0.0}};
    s.v_nom = 48.0;
    return s;
}

inline dcmg::ControllerConfig two_bus_controller(bool enabled = true) {
    dcmg::ControllerConfig c;
    c.k_p = 1.5;
    c.comm = dcmg::CommGraph::from_links(2, {{0, 1}});
    c.enabled = enabled;
    return c;
}

}  // namespace fixtures
