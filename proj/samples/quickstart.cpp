// Minimal library use: cluster the columns of X, test every cluster, print
// the minimal significant ones.

#include "hiertest/hiertest.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    using namespace hiertest;
    const std::string dir = argc > 1 ? argv[1] : "samples/demo";
    Matrix x = parse_matrix_csv(dir + "/X.csv");
    Vector y = parse_vector_csv(dir + "/y.csv");

    auto tree = std::make_shared<const ClusterTree>(build_correlation_tree(x));
    standardize_columns(x);
    center(y);

    EngineConfig config;
    config.seed = 7;
    const HierTestResult result = run(tree, x, y, config);

    for (NodeId c : significant_clusters(result, config.alpha).minimal) {
        std::cout << "{";
        const auto& vars = tree->node(c).variables;
        for (std::size_t k = 0; k < vars.size(); ++k) std::cout << (k ? "," : "") << vars[k] + 1;
        std::cout << "}  p_h = " << result.p_h[c] << "\n";
    }
}
