#include "dcmg/errors.hpp"
#include "dcmg/grid_graph.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace dcmg;

TEST_CASE("incidence columns carry -1 at the from-bus and +1 at the to-bus") {
    ElectricalGraph g;
    g.n_buses = 3;
    g.line_endpoints = {{0, 1}, {1, 2}, {2, 0}};
    g.gen_bus = {0, 2};
    const auto m = incidence_matrices(g);
    CHECK(m.bus_line(0, 0) == -1.0);
    CHECK(m.bus_line(1, 0) == 1.0);
    CHECK(m.bus_line(2, 0) == 0.0);
    CHECK(m.bus_line(2, 2) == -1.0);
    CHECK(m.bus_line(0, 2) == 1.0);
    for (int j = 0; j < 3; ++j) CHECK(m.bus_line.col(j).sum() == 0.0);
    CHECK(m.bus_gen(0, 0) == 1.0);
    CHECK(m.bus_gen(2, 1) == 1.0);
    CHECK(m.bus_gen.sum() == 2.0);
}

TEST_CASE("electrical graph validation") {
    ElectricalGraph g;
    g.n_buses = 2;
    g.line_endpoints = {{0, 0}};
    CHECK_THROWS_AS(g.validate(), StructuralError);
    g.line_endpoints = {{0, 2}};
    CHECK_THROWS_AS(g.validate(), StructuralError);
    g.line_endpoints = {{0, 1}};
    g.gen_bus = {5};
    CHECK_THROWS_AS(g.validate(), StructuralError);
    g.gen_bus = {1};
    CHECK_NOTHROW(g.validate());
}

TEST_CASE("communication graph rejects asymmetric, negative and self weights") {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3, 3);
    w(0, 1) = 1.0;
    CHECK_THROWS_AS(CommGraph{w}, ValidationError);
    w(1, 0) = 1.0;
    CHECK_NOTHROW(CommGraph{w});
    w(2, 2) = 1.0;
    CHECK_THROWS_AS(CommGraph{w}, ValidationError);
    w(2, 2) = 0.0;
    w(0, 2) = w(2, 0) = -1.0;
    CHECK_THROWS_AS(CommGraph{w}, ValidationError);
}

TEST_CASE("path graph Laplacian spectrum matches the closed form 2 - 2 cos(k pi / n)") {
    const int n = 7;
    std::vector<std::pair<int, int>> links;
    for (int i = 0; i + 1 < n; ++i) links.emplace_back(i, i + 1);
    const Eigen::MatrixXd lap = laplacian(CommGraph::from_links(n, links));
    Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lap).eigenvalues();
    for (int k = 0; k < n; ++k) {
        CHECK(ev[k] == doctest::Approx(2.0 - 2.0 * std::cos(k * std::numbers::pi / n)).epsilon(1e-12));
    }
}

TEST_CASE("random Laplacians have zero row and column sums and are positive semidefinite") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + trial % 9;
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (u(rng) < 0.4) w(i, j) = w(j, i) = 3.0 * u(rng);
        const Eigen::MatrixXd lap = laplacian(CommGraph(w));
        CHECK((lap * Eigen::VectorXd::Ones(n)).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((Eigen::RowVectorXd::Ones(n) * lap).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lap).eigenvalues().minCoeff() > -1e-13);
    }
}

TEST_CASE("connectivity, masking and subgraphs") {
    // 0-1-2-3 chain plus 1-3
    const CommGraph g = CommGraph::from_links(4, {{0, 1}, {1, 2}, {2, 3}, {1, 3}});
    CHECK(is_connected(g));
    CHECK(g.neighbors(1) == std::vector<int>{0, 2, 3});
    CHECK(g.degree(1) == 3.0);
    CHECK(g.links().size() == 4);

    const std::vector<bool> without_1{true, false, true, true};
    CHECK_FALSE(is_connected(g, without_1));
    const CommGraph m = g.masked(without_1);
    CHECK(m.weight(0, 1) == 0.0);
    CHECK(m.weight(1, 3) == 0.0);
    CHECK(m.weight(2, 3) == 1.0);

    const std::vector<bool> without_0{false, true, true, true};
    CHECK(is_connected(g, without_0));

    Eigen::MatrixXd link_on = Eigen::MatrixXd::Ones(4, 4);
    link_on(2, 3) = link_on(3, 2) = 0.0;
    const CommGraph cut = g.masked(std::vector<bool>(4, true), link_on);
    CHECK(cut.weight(2, 3) == 0.0);
    CHECK(is_connected(cut));

    const CommGraph sub = g.subgraph({3, 1});
    CHECK(sub.n_nodes() == 2);
    CHECK(sub.weight(0, 1) == 1.0);
}
