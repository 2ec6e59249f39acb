#include "dcmg/grid_graph.hpp"

#include "dcmg/errors.hpp"

#include <cmath>
#include <queue>
#include <string>

namespace dcmg {

void ElectricalGraph::validate() const {
    if (n_buses <= 0) {
        throw StructuralError("electrical graph needs at least one bus");
    }
    for (int j = 0; j < n_lines(); ++j) {
        const auto [from, to] = line_endpoints[j];
        if (from < 0 || from >= n_buses || to < 0 || to >= n_buses) {
            throw StructuralError("line " + std::to_string(j + 1) + " has a dangling endpoint");
        }
        if (from == to) {
            throw StructuralError("line " + std::to_string(j + 1) + " is a self-loop");
        }
    }
    for (int i = 0; i < n_gens(); ++i) {
        if (gen_bus[i] < 0 || gen_bus[i] >= n_buses) {
            throw StructuralError("generator " + std::to_string(i + 1) +
                                  " attaches to a nonexistent bus");
        }
    }
}

IncidenceMatrices incidence_matrices(const ElectricalGraph& g) {
    g.validate();
    IncidenceMatrices m{Eigen::MatrixXd::Zero(g.n_buses, g.n_lines()),
                        Eigen::MatrixXd::Zero(g.n_buses, g.n_gens())};
    for (int j = 0; j < g.n_lines(); ++j) {
        m.bus_line(g.line_endpoints[j].first, j) = -1.0;
        m.bus_line(g.line_endpoints[j].second, j) = 1.0;
    }
    for (int i = 0; i < g.n_gens(); ++i) {
        m.bus_gen(g.gen_bus[i], i) = 1.0;
    }
    return m;
}

CommGraph::CommGraph(Eigen::MatrixXd weights) : weights_(std::move(weights)) {
    if (weights_.rows() != weights_.cols()) {
        throw ValidationError("communication weight matrix must be square");
    }
    const auto n = weights_.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (weights_(i, i) != 0.0) {
            throw ValidationError("communication weight a_" + std::to_string(i + 1) +
                                  std::to_string(i + 1) + " must be zero");
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            const double a = weights_(i, j);
            if (!std::isfinite(a) || a < 0.0) {
                throw ValidationError("communication weight (" + std::to_string(i + 1) + "," +
                                      std::to_string(j + 1) + ") must be finite and nonnegative");
            }
            if (a != weights_(j, i)) {
                throw ValidationError("communication weights are asymmetric at (" +
                                      std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
            }
        }
    }
}

CommGraph CommGraph::from_links(int n_nodes, const std::vector<std::pair<int, int>>& links,
                                double weight) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_nodes, n_nodes);
    for (const auto& [i, j] : links) {
        if (i < 0 || j < 0 || i >= n_nodes || j >= n_nodes || i == j) {
            throw ValidationError("invalid communication link (" + std::to_string(i + 1) + "," +
                                  std::to_string(j + 1) + ")");
        }
        a(i, j) = weight;
        a(j, i) = weight;
    }
    return CommGraph(std::move(a));
}

std::vector<int> CommGraph::neighbors(int i) const {
    std::vector<int> out;
    for (int j = 0; j < n_nodes(); ++j) {
        if (weights_(i, j) > 0.0) out.push_back(j);
    }
    return out;
}

CommGraph CommGraph::masked(const std::vector<bool>& node_active,
                            const Eigen::MatrixXd& link_on) const {
    Eigen::MatrixXd a = weights_;
    for (int i = 0; i < n_nodes(); ++i) {
        for (int j = 0; j < n_nodes(); ++j) {
            if (!node_active[i] || !node_active[j] || link_on(i, j) == 0.0) a(i, j) = 0.0;
        }
    }
    return CommGraph(std::move(a));
}

CommGraph CommGraph::masked(const std::vector<bool>& node_active) const {
    return masked(node_active, Eigen::MatrixXd::Ones(n_nodes(), n_nodes()));
}

CommGraph CommGraph::subgraph(const std::vector<int>& nodes) const {
    const auto n = static_cast<Eigen::Index>(nodes.size());
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) a(r, c) = weights_(nodes[r], nodes[c]);
    }
    return CommGraph(std::move(a));
}

std::vector<std::pair<int, int>> CommGraph::links() const {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < n_nodes(); ++i) {
        for (int j = i + 1; j < n_nodes(); ++j) {
            if (weights_(i, j) > 0.0) out.emplace_back(i, j);
        }
    }
    return out;
}

Eigen::MatrixXd laplacian(const CommGraph& g) {
    const Eigen::MatrixXd& a = g.weights();
    Eigen::MatrixXd l = -a;
    for (int i = 0; i < g.n_nodes(); ++i) {
        // Row sum computed from the off-diagonal entries so that L1 = 0 holds exactly.
        double d = 0.0;
        for (int j = 0; j < g.n_nodes(); ++j) d += a(i, j);
        l(i, i) = d;
    }
    return l;
}

bool is_connected(const CommGraph& g, const std::vector<bool>& node_active) {
    const int n = g.n_nodes();
    int start = -1;
    int n_active = 0;
    for (int i = 0; i < n; ++i) {
        if (node_active[i]) {
            ++n_active;
            if (start < 0) start = i;
        }
    }
    if (n_active == 0) return true;

    std::vector<bool> seen(n, false);
    std::queue<int> frontier;
    frontier.push(start);
    seen[start] = true;
    int reached = 1;
    while (!frontier.empty()) {
        const int i = frontier.front();
        frontier.pop();
        for (int j = 0; j < n; ++j) {
            if (!seen[j] && node_active[j] && g.weight(i, j) > 0.0) {
                seen[j] = true;
                ++reached;
                frontier.push(j);
            }
        }
    }
    return reached == n_active;
}

bool is_connected(const CommGraph& g) {
    return is_connected(g, std::vector<bool>(g.n_nodes(), true));
}

}  // namespace dcmg
