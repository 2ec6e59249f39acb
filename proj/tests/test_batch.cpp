#include "dcmg/batch.hpp"
#include "dcmg/dispatch.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <random>

using namespace dcmg;

TEST_CASE("parallel batch equals the serial reference bit for bit") {
    const MicrogridSpec s = fixtures::two_bus();
    const ControllerConfig cfg = fixtures::two_bus_controller(true);
    std::mt19937 rng(8);
    std::normal_distribution<double> nd;
    std::vector<BatchJob> jobs;
    for (int n = 0; n < 8; ++n) {
        Scenario sc;
        sc.initial_loads = nominal_loads(s);
        sc.integrator.method = n % 2 ? IntegratorKind::Trapezoidal : IntegratorKind::Rk4;
        sc.integrator.step = n % 2 ? 1e-3 : 1e-5;
        sc.integrator.t_end = 0.2;
        SystemState init = initial_state(s, cfg, sc);
        for (auto& v : init.phys.q_bus) v *= 1.0 + 0.1 * nd(rng);
        init.ctrl.x_c << nd(rng), nd(rng);
        jobs.push_back({sc, init});
    }
    // One job that cannot run: CPL at a bus starting on the voltage floor.
    jobs[3].init.phys.q_bus[0] = 0.5 * s.buses[0].capacitance;

    const auto a = run_batch_serial(s, cfg, jobs);
    const auto b = run_batch(s, cfg, jobs);
    REQUIRE(a.size() == jobs.size());
    REQUIRE(b.size() == jobs.size());
    for (std::size_t n = 0; n < jobs.size(); ++n) {
        CHECK(a[n].ok == b[n].ok);
        CHECK(a[n].error == b[n].error);
        if (!a[n].ok) continue;
        CHECK(stack_state(a[n].final_state) == stack_state(b[n].final_state));
        CHECK(a[n].last_sample.v_bus == b[n].last_sample.v_bus);
        CHECK(a[n].segments.size() == b[n].segments.size());
    }
    CHECK_FALSE(a[3].ok);
    CHECK(a[0].ok);
}

TEST_CASE("grid search recovers the dispatch optimum") {
    const auto canon = fixtures::canonical();
    for (int ng : {2, 3}) {
        const std::vector<GeneratorSpec> gens(canon.spec.gens.begin(), canon.spec.gens.begin() + ng);
        for (double demand : {4.0, 17.5, 30.0}) {
            const DispatchSolution d = solve_eic(gens, demand);
            GridSearchOptions opts;
            opts.points = ng == 2 ? 2001 : 201;
            const GridSearchResult g = grid_search_dispatch(gens, demand, opts);
            const GridSearchResult gs = grid_search_dispatch_serial(gens, demand, opts);
            CHECK(g.currents == gs.currents);
            CHECK(g.cost == gs.cost);
            CHECK(g.evaluations == gs.evaluations);
            CHECK(g.currents.sum() == doctest::Approx(demand).epsilon(1e-12));
            CHECK((g.currents - d.currents).cwiseAbs().maxCoeff() < 1e-6);
            CHECK(g.cost >= d.total_cost - 1e-12);
            CHECK(g.cost - d.total_cost < 1e-9);
        }
    }
}

TEST_CASE("grid search rejects unsupported sizes") {
    const auto canon = fixtures::canonical();
    CHECK_THROWS(grid_search_dispatch(canon.spec.gens, 30.0));
    CHECK_THROWS(grid_search_dispatch_serial({canon.spec.gens[0]}, 30.0));
}
