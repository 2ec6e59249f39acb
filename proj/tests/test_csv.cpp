#include "dcmg/csv.hpp"
#include "dcmg/sim_engine.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace dcmg;
namespace fs = std::filesystem;

namespace {

Trajectory short_run(double t_end, double record_interval) {
    const MicrogridSpec s = fixtures::two_bus();
    const ControllerConfig cfg = fixtures::two_bus_controller(true);
    Scenario sc;
    sc.initial_loads = nominal_loads(s);
    sc.integrator.step = 1e-5;
    sc.integrator.t_end = t_end;
    sc.integrator.record_interval = record_interval;
    ScenarioEvent ev;
    ev.time = t_end / 2;
    ev.kind = EventKind::SetCplMask;
    ev.on = false;
    sc.events = {ev};
    return simulate(s, cfg, sc, initial_state(s, cfg, sc));
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dcmg_csv_test";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("column names carry units and follow the network size") {
    const auto cols = csv_columns(2, 1, 2);
    CHECK(cols.front() == "t[s]");
    CHECK(cols[1] == "V_gen_1[V]");
    CHECK(std::find(cols.begin(), cols.end(), "I_E_1[A]") != cols.end());
    CHECK(std::find(cols.begin(), cols.end(), "margin_2[S]") != cols.end());
    CHECK(cols.back() == "dH_t[W]");
    CHECK(csv_columns(6, 8, 8).size() == 1 + 6 * 5 + 8 * 3 + 5);
}

TEST_CASE("trajectory written and read back bit for bit") {
    const Trajectory tr = short_run(0.01, 1e-3);
    const fs::path csv = scratch("traj.csv");
    const fs::path ev = scratch("events.csv");
    emit_csv(tr, csv, ev);
    const CsvTable t = read_csv(csv);
    CHECK(t.header == csv_columns(2, 1, 2));
    REQUIRE(t.rows.size() == tr.samples.size());
    const std::vector<Sample> back = samples_from_csv(t, 2, 1, 2);
    for (std::size_t n = 0; n < back.size(); ++n) {
        CHECK(back[n].t == tr.samples[n].t);
        CHECK(back[n].v_bus == tr.samples[n].v_bus);
        CHECK(back[n].i_line == tr.samples[n].i_line);
        CHECK(back[n].x_c == tr.samples[n].x_c);
        CHECK(back[n].h == tr.samples[n].h);
    }
    std::ifstream in(ev);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "t[s],kind,detail,status");
    CHECK(row.find("set_cpl_mask") != std::string::npos);
}

TEST_CASE("a single-sample trajectory gives a two-line file") {
    Trajectory tr = short_run(0.01, 1e-3);
    tr.samples.resize(1);
    const fs::path csv = scratch("one.csv");
    emit_csv(tr, csv, scratch("one_events.csv"));
    std::ifstream in(csv);
    int lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == 2);
}

TEST_CASE("unwritable destination raises an I/O error") {
    const Trajectory tr = short_run(0.002, 1e-3);
    CHECK_THROWS_AS(emit_csv(tr, "/nonexistent/dir/traj.csv", scratch("e.csv")), std::runtime_error);
    CHECK_THROWS_AS(read_csv("/nonexistent/dir/traj.csv"), std::runtime_error);
}
