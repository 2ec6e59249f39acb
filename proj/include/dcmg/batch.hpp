#pragma once

// Embarrassingly parallel kernels. Each comes as an OpenMP version and a
// serial reference with identical results, which the tests compare.

#include "dcmg/mg_model.hpp"
#include "dcmg/secondary_control.hpp"
#include "dcmg/sim_engine.hpp"

#include <string>
#include <vector>

namespace dcmg {

struct BatchJob {
    Scenario scenario;
    SystemState init;
};

/// Outcome of one run with the sample log dropped.
struct BatchOutcome {
    bool ok = false;
    std::string error;
    SystemState final_state;
    std::vector<SegmentReport> segments;
    Sample last_sample;
};

std::vector<BatchOutcome> run_batch_serial(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                           const std::vector<BatchJob>& jobs);
std::vector<BatchOutcome> run_batch(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                    const std::vector<BatchJob>& jobs);

struct GridSearchResult {
    Eigen::VectorXd currents;
    double cost = 0.0;
    long evaluations = 0;
};

struct GridSearchOptions {
    int points = 2001;       // per free axis on each level
    int levels = 8;          // zoom levels after the first full sweep
    double half_width = 0.0; // initial box half width, A; 0 picks |demand| + 10
};

/// Exhaustive grid search of the dispatch problem on the constraint set
/// sum I = demand (2 or 3 generators: the last current is eliminated).
/// Each level sweeps every grid point of the box, then the box shrinks to
/// four cells either side of the best point.
GridSearchResult grid_search_dispatch_serial(const std::vector<GeneratorSpec>& gens, double demand,
                                             const GridSearchOptions& opts = {});
GridSearchResult grid_search_dispatch(const std::vector<GeneratorSpec>& gens, double demand,
                                      const GridSearchOptions& opts = {});

}  // namespace dcmg
