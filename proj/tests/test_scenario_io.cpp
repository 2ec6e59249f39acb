#include "dcmg/errors.hpp"
#include "dcmg/scenario_io.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

using namespace dcmg;

namespace {

std::string canonical_text() {
    std::ifstream in(std::string(DCMG_SCENARIO_DIR) + "/table1_fig4.json");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
    const auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    return text.replace(pos, from.size(), to);
}

std::string error_of(const std::string& text) {
    try {
        parse_scenario_text(text);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("canonical scenario file") {
    const ScenarioBundle b = fixtures::canonical();
    CHECK(b.scenario.name == "table1_fig4");
    CHECK(b.spec.n_gens() == 6);
    CHECK(b.spec.n_lines() == 8);
    CHECK(b.spec.n_buses() == 8);
    CHECK(b.cfg.comm.links().size() == 7);
    CHECK(b.scenario.events.size() == 6);
    CHECK(b.spec.lines[0].resistance == doctest::Approx(0.5));
    CHECK(b.spec.lines[1].resistance == doctest::Approx(1.0));
    // Line 6 runs from bus 5 to bus 7.
    CHECK(b.spec.graph.line_endpoints[5] == std::pair<int, int>{4, 6});
    CHECK(b.spec.graph.gen_bus[3] == 3);
    CHECK(b.spec.buses[0].conductance == doctest::Approx(1.0 / 30));
    CHECK(b.cfg.k_p == 2.0);
    CHECK_FALSE(b.cfg.enabled);
    CHECK(b.scenario.events[4].kind == EventKind::UnplugGen);
    CHECK(b.scenario.events[4].gen == 3);
    CHECK(b.scenario.events[2].buses.empty());
    CHECK(b.scenario.integrator.method == IntegratorKind::Rk4);
    CHECK(b.scenario.integrator.t_end == 35.0);
    CHECK(b.scenario.initial == InitialCondition::DroopEquilibrium);
    CHECK_FALSE(b.scenario.initial_loads[0].p_on);
    CHECK(b.scenario.initial_loads[0].z_on);
}

TEST_CASE("content errors name the offending field") {
    const std::string base = canonical_text();
    CHECK(error_of(replace(base, "\"k_p\": 2.0,", "\"k_p\": 2.0, \"kp_typo\": 1,")).find("controller.kp_typo: unknown field") !=
          std::string::npos);
    CHECK(error_of(replace(base, "{\"bus\": 4,", "{\"bus\": 9,")).find("generators[3].bus") != std::string::npos);
    CHECK(error_of(replace(base, "\"kind\": \"unplug_gen\"", "\"kind\": \"explode\"")).find("unknown event kind") !=
          std::string::npos);
    CHECK(error_of(replace(base, "\"method\": \"rk4\"", "\"method\": \"euler\"")).find("unknown integrator") !=
          std::string::npos);
    CHECK(error_of(replace(base, "\"load_resistance\": 30, \"current\": 0.5,",
                           "\"load_resistance\": 30, \"conductance\": 0.1, \"current\": 0.5,"))
              .find("not both") != std::string::npos);
}

TEST_CASE("syntax errors carry a line number") {
    const std::string base = canonical_text();
    const std::string broken = replace(base, "\"k_p\": 2.0,", "\"k_p\": 2.0,,");
    int line = 1;
    for (char c : broken.substr(0, broken.find(",,"))) line += c == '\n';
    const std::string msg = error_of(broken);
    CHECK(msg.rfind("line " + std::to_string(line) + ":", 0) == 0);
}

TEST_CASE("invalid controller settings are rejected") {
    const std::string base = canonical_text();
    CHECK_THROWS_AS(parse_scenario_text(replace(base, "\"k_p\": 2.0", "\"k_p\": -1.0")), ValidationError);

    // Asymmetric explicit weights.
    const std::string links_start = "\"comm_links\": [";
    const auto a = base.find(links_start);
    const auto e = base.find(']', a);
    std::string asym = base;
    asym.replace(a, e - a + 1,
                 "\"comm_weights\": [[0,1,0,0,0,0],[2,0,1,0,1,0],[0,1,0,1,1,0],"
                 "[0,0,1,0,0,1],[0,1,1,0,0,1],[0,0,0,1,1,0]]");
    CHECK(error_of(asym).find("controller") != std::string::npos);
    std::string sym = asym;
    sym.replace(sym.find("[2,0,1"), 6, "[1,0,1");
    CHECK_NOTHROW(parse_scenario_text(sym));

    // Secondary control on a disconnected communication graph.
    std::string cut = replace(base, "{\"a\": 2, \"b\": 3}, {\"a\": 2, \"b\": 5}, ", "");
    CHECK(error_of(cut).find("disconnected") != std::string::npos);
}

TEST_CASE("per-unit and SI entries are equivalent") {
    const std::string base = canonical_text();
    const ScenarioBundle pu = parse_scenario_text(base);
    const ScenarioBundle si = parse_scenario_text(
        replace(base, "{\"from\": 1, \"to\": 2, \"r_pu\": 1, \"l_pu\": 1}",
                "{\"from\": 1, \"to\": 2, \"resistance\": 0.5, \"inductance\": 50e-6}"));
    CHECK(si.spec.lines[0].resistance == pu.spec.lines[0].resistance);
    CHECK(si.spec.lines[0].inductance == pu.spec.lines[0].inductance);
    CHECK(error_of(replace(base, "\"r_pu\": 1, \"l_pu\": 1}", "\"r_pu\": 1, \"resistance\": 1, \"l_pu\": 1}"))
              .find("not both") != std::string::npos);
}

TEST_CASE("missing file") {
    CHECK_THROWS_AS(parse_scenario("/nonexistent/scenario.json"), ScenarioError);
}

TEST_CASE("mutated scenario text only ever raises library errors") {
    const std::string base = canonical_text();
    std::mt19937 rng(99);
    const std::string alphabet = "{}[]\",:0123456789.-eE truefalsnul\n";
    int accepted = 0;
    for (int trial = 0; trial < 400; ++trial) {
        std::string t = base;
        const int edits = 1 + trial % 4;
        for (int k = 0; k < edits; ++k) {
            const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng);
            const char c = alphabet[std::uniform_int_distribution<std::size_t>(0, alphabet.size() - 1)(rng)];
            switch (rng() % 3) {
                case 0: t[pos] = c; break;
                case 1: t.erase(pos, 1); break;
                default: t.insert(pos, 1, c); break;
            }
        }
        try {
            parse_scenario_text(t);
            ++accepted;
        } catch (const Error&) {
        } catch (const std::exception& e) {
            FAIL("non-library exception: " << e.what());
        }
    }
    CHECK(accepted < 400);
}
