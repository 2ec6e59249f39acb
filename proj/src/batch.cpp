#include "dcmg/batch.hpp"

#include "dcmg/dispatch.hpp"
#include "dcmg/errors.hpp"

#include <omp.h>

#include <cmath>
#include <limits>

namespace dcmg {

namespace {

BatchOutcome run_one(const MicrogridSpec& spec, const ControllerConfig& cfg, const BatchJob& job) {
    BatchOutcome out;
    try {
        Trajectory tr = simulate(spec, cfg, job.scenario, job.init);
        out.final_state = std::move(tr.final_state);
        out.segments = std::move(tr.segments);
        out.last_sample = tr.samples.back();
        out.ok = true;
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    return out;
}

struct Best {
    double cost = std::numeric_limits<double>::infinity();
    long index = -1;
};

// Smaller cost wins; ties go to the lower grid index so the result does not
// depend on the thread count.
bool better(const Best& a, const Best& b) {
    return a.cost < b.cost || (a.cost == b.cost && a.index < b.index);
}

struct Box {
    Eigen::VectorXd lo;
    double step = 0.0;
    int points = 0;
    int free_dims = 0;
    long count() const { return free_dims == 1 ? points : static_cast<long>(points) * points; }
};

void point_at(const Box& box, long idx, double demand, Eigen::VectorXd& I) {
    if (box.free_dims == 1) {
        I[0] = box.lo[0] + box.step * static_cast<double>(idx);
        I[1] = demand - I[0];
    } else {
        I[0] = box.lo[0] + box.step * static_cast<double>(idx / box.points);
        I[1] = box.lo[1] + box.step * static_cast<double>(idx % box.points);
        I[2] = demand - I[0] - I[1];
    }
}

double cost_at(const std::vector<GeneratorSpec>& gens, const Eigen::VectorXd& I) {
    double c = 0.0;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        c += gens[i].alpha * I[i] * I[i] + gens[i].beta * I[i] + gens[i].gamma;
    }
    return c;
}

Best sweep_serial(const std::vector<GeneratorSpec>& gens, double demand, const Box& box) {
    Best best;
    Eigen::VectorXd I(gens.size());
    for (long idx = 0; idx < box.count(); ++idx) {
        point_at(box, idx, demand, I);
        const Best cand{cost_at(gens, I), idx};
        if (better(cand, best)) best = cand;
    }
    return best;
}

Best sweep_parallel(const std::vector<GeneratorSpec>& gens, double demand, const Box& box) {
    Best best;
    const long n = box.count();
#pragma omp parallel
    {
        Best local;
        Eigen::VectorXd I(gens.size());
#pragma omp for schedule(static) nowait
        for (long idx = 0; idx < n; ++idx) {
            point_at(box, idx, demand, I);
            const Best cand{cost_at(gens, I), idx};
            if (better(cand, local)) local = cand;
        }
#pragma omp critical
        if (better(local, best)) best = local;
    }
    return best;
}

template <class Sweep>
GridSearchResult grid_search(const std::vector<GeneratorSpec>& gens, double demand,
                             const GridSearchOptions& opts, Sweep sweep) {
    const int n = static_cast<int>(gens.size());
    if (n < 2 || n > 3) throw ValidationError("grid search supports 2 or 3 generators");
    if (opts.points < 3 || opts.levels < 0) throw ValidationError("grid search needs >= 3 points");
    const double hw = opts.half_width > 0.0 ? opts.half_width : std::abs(demand) + 10.0;

    Box box;
    box.free_dims = n - 1;
    box.points = opts.points;
    box.step = 2.0 * hw / (opts.points - 1);
    box.lo = Eigen::VectorXd::Constant(box.free_dims, demand / n - hw);

    GridSearchResult res;
    res.currents.resize(n);
    for (int level = 0; level <= opts.levels; ++level) {
        const Best best = sweep(gens, demand, box);
        res.evaluations += box.count();
        point_at(box, best.index, demand, res.currents);
        res.cost = best.cost;
        const double new_step = 8.0 * box.step / (opts.points - 1);
        for (int d = 0; d < box.free_dims; ++d) box.lo[d] = res.currents[d] - 4.0 * box.step;
        box.step = new_step;
    }
    return res;
}

}  // namespace

std::vector<BatchOutcome> run_batch_serial(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                           const std::vector<BatchJob>& jobs) {
    std::vector<BatchOutcome> out(jobs.size());
    for (std::size_t n = 0; n < jobs.size(); ++n) out[n] = run_one(spec, cfg, jobs[n]);
    return out;
}

std::vector<BatchOutcome> run_batch(const MicrogridSpec& spec, const ControllerConfig& cfg,
                                    const std::vector<BatchJob>& jobs) {
    std::vector<BatchOutcome> out(jobs.size());
    const long n = static_cast<long>(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (long k = 0; k < n; ++k) out[k] = run_one(spec, cfg, jobs[k]);
    return out;
}

GridSearchResult grid_search_dispatch_serial(const std::vector<GeneratorSpec>& gens, double demand,
                                             const GridSearchOptions& opts) {
    return grid_search(gens, demand, opts, sweep_serial);
}

GridSearchResult grid_search_dispatch(const std::vector<GeneratorSpec>& gens, double demand,
                                      const GridSearchOptions& opts) {
    return grid_search(gens, demand, opts, sweep_parallel);
}

}  // namespace dcmg
