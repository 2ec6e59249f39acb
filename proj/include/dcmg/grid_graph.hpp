#pragma once

// Electrical and communication graphs of a DC microgrid.
//
// Buses, lines and generators are indexed from zero internally; files and
// reports use one-based numbering.

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace dcmg {

/// Bus/line/generator topology of the electrical network.
///
/// Line current is taken to flow from `first` to `second` of its endpoint
/// pair, so the incidence column carries -1 at the from-bus and +1 at the
/// to-bus. Generators only inject current into their attachment bus.
struct ElectricalGraph {
    int n_buses = 0;
    std::vector<std::pair<int, int>> line_endpoints;
    std::vector<int> gen_bus;

    int n_lines() const { return static_cast<int>(line_endpoints.size()); }
    int n_gens() const { return static_cast<int>(gen_bus.size()); }

    /// Throws StructuralError on dangling indices or self-loops.
    void validate() const;
};

struct IncidenceMatrices {
    Eigen::MatrixXd bus_line;  // n_buses x n_lines
    Eigen::MatrixXd bus_gen;   // n_buses x n_gens
};

IncidenceMatrices incidence_matrices(const ElectricalGraph& g);

/// Weighted undirected communication graph between generator agents.
class CommGraph {
public:
    CommGraph() = default;

    /// Validates symmetry, nonnegativity and a zero diagonal.
    explicit CommGraph(Eigen::MatrixXd weights);

    /// Unit-weight graph from a list of undirected links.
    static CommGraph from_links(int n_nodes, const std::vector<std::pair<int, int>>& links,
                                double weight = 1.0);

    int n_nodes() const { return static_cast<int>(weights_.rows()); }
    const Eigen::MatrixXd& weights() const { return weights_; }
    double weight(int i, int j) const { return weights_(i, j); }
    double degree(int i) const { return weights_.row(i).sum(); }
    std::vector<int> neighbors(int i) const;

    /// Same node set with the links of inactive nodes (and disabled links) removed.
    /// `link_on(i, j)` nonzero keeps the link.
    CommGraph masked(const std::vector<bool>& node_active, const Eigen::MatrixXd& link_on) const;
    CommGraph masked(const std::vector<bool>& node_active) const;

    /// Induced subgraph over the listed nodes, in the given order.
    CommGraph subgraph(const std::vector<int>& nodes) const;

    std::vector<std::pair<int, int>> links() const;

private:
    Eigen::MatrixXd weights_;
};

/// L = D - A.
Eigen::MatrixXd laplacian(const CommGraph& g);

/// Breadth-first reachability over positive-weight edges.
bool is_connected(const CommGraph& g);

/// Connectivity restricted to the nodes flagged active.
bool is_connected(const CommGraph& g, const std::vector<bool>& node_active);

}  // namespace dcmg
