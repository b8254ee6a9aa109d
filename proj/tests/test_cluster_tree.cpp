#include "hiertest/cluster_tree.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <set>

using namespace hiertest;
using hiertest::testing::random_matrix;

namespace {

// ((1,2),(3,4)) with 0-based variables.
ClusterTree four_leaf_tree()
{
    const std::vector<Merge> merges{{0, 1, 0.1}, {2, 3, 0.2}, {4, 5, 0.5}};
    return tree_from_merges(4, merges);
}

NodeId node_with(const ClusterTree& tree, IndexSet vars)
{
    for (const auto& n : tree.nodes())
        if (n.variables == vars) return n.id;
    throw std::runtime_error("no such node");
}

// Naive complete linkage: recompute every inter-cluster maximum each step.
std::vector<std::pair<IndexSet, double>> naive_complete(const Matrix& d)
{
    const auto p = static_cast<std::size_t>(d.rows());
    std::vector<IndexSet> clusters;
    for (std::size_t j = 0; j < p; ++j) clusters.push_back({j});
    std::vector<std::pair<IndexSet, double>> out;
    while (clusters.size() > 1) {
        double best = 1e300;
        std::size_t bi = 0, bj = 0;
        std::pair<std::size_t, std::size_t> best_key{p, p};
        for (std::size_t a = 0; a < clusters.size(); ++a)
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                double m = 0.0;
                for (auto u : clusters[a])
                    for (auto v : clusters[b]) m = std::max(m, d(Eigen::Index(u), Eigen::Index(v)));
                const std::pair<std::size_t, std::size_t> key = std::minmax(clusters[a].front(), clusters[b].front());
                if (m < best || (m == best && key < best_key)) {
                    best = m;
                    bi = a;
                    bj = b;
                    best_key = key;
                }
            }
        IndexSet merged = clusters[bi];
        merged.insert(merged.end(), clusters[bj].begin(), clusters[bj].end());
        std::sort(merged.begin(), merged.end());
        out.emplace_back(merged, best);
        clusters.erase(clusters.begin() + std::ptrdiff_t(bj));
        clusters[bi] = merged;
    }
    return out;
}

ClusterTree random_binary_tree(std::size_t p, std::mt19937_64& rng)
{
    std::vector<NodeId> pool(p);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<Merge> merges;
    for (std::size_t k = 0; k + 1 < p; ++k) {
        std::shuffle(pool.begin(), pool.end(), rng);
        const NodeId a = pool.back();
        pool.pop_back();
        const NodeId b = pool.back();
        pool.pop_back();
        merges.push_back({a, b, double(k + 1)});
        pool.push_back(p + k);
    }
    return tree_from_merges(p, merges);
}

} // namespace

TEST(BuildCorrelationTree, TwoVariables)
{
    std::mt19937_64 rng(1);
    const Matrix x = random_matrix(30, 2, rng);
    const auto tree = build_correlation_tree(x);
    ASSERT_EQ(tree.size(), 3u);
    const auto& root = tree.node(tree.root());
    EXPECT_EQ(root.variables, (IndexSet{0, 1}));
    Vector a = x.col(0).array() - x.col(0).mean();
    Vector b = x.col(1).array() - x.col(1).mean();
    const double r = a.dot(b) / (a.norm() * b.norm());
    EXPECT_NEAR(root.height, 1.0 - std::fabs(r), 1e-12);
    EXPECT_TRUE(tree.is_leaf(tree.leaf_of(0)));
}

TEST(BuildCorrelationTree, DuplicateColumnsMergeFirstAtZero)
{
    std::mt19937_64 rng(2);
    Matrix x = random_matrix(30, 4, rng);
    x.col(3) = x.col(1);
    const auto merges = agglomerate(correlation_dissimilarity(x));
    EXPECT_EQ(std::min(merges[0].left, merges[0].right), 1u);
    EXPECT_EQ(std::max(merges[0].left, merges[0].right), 3u);
    EXPECT_NEAR(merges[0].height, 0.0, 1e-12);
}

TEST(BuildCorrelationTree, MatchesNaiveCompleteLinkage)
{
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t p = 6 + std::size_t(rep % 5);
        const Matrix x = random_matrix(12, Eigen::Index(p), rng);
        const Matrix d = correlation_dissimilarity(x);
        const auto tree = build_correlation_tree(x);
        const auto oracle = naive_complete(d);
        for (std::size_t k = 0; k < oracle.size(); ++k) {
            const auto& n = tree.node(p + k);
            EXPECT_EQ(n.variables, oracle[k].first) << "merge " << k;
            EXPECT_DOUBLE_EQ(n.height, oracle[k].second);
        }
    }
}

TEST(BuildCorrelationTree, TiesBrokenByLowestIndices)
{
    // All off-diagonal dissimilarities equal.
    Matrix d = Matrix::Constant(4, 4, 0.5);
    d.diagonal().setZero();
    const auto merges = agglomerate(d);
    EXPECT_EQ(merges[0].left, 0u);
    EXPECT_EQ(merges[0].right, 1u);
    EXPECT_EQ(merges[1].left, 4u);
    EXPECT_EQ(merges[1].right, 2u);
}

TEST(BuildCorrelationTree, InvariantToColumnSignFlips)
{
    std::mt19937_64 rng(4);
    Matrix x = random_matrix(25, 8, rng);
    const auto before = build_correlation_tree(x);
    x.col(2) *= -1.0;
    x.col(5) *= -3.0;
    const auto after = build_correlation_tree(x);
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_EQ(before.node(i).variables, after.node(i).variables);
        EXPECT_NEAR(before.node(i).height, after.node(i).height, 1e-12);
    }
}

TEST(BuildCorrelationTree, RejectsConstantColumn)
{
    std::mt19937_64 rng(5);
    Matrix x = random_matrix(10, 3, rng);
    x.col(1).setConstant(2.0);
    EXPECT_THROW(build_correlation_tree(x), std::invalid_argument);
    EXPECT_THROW(build_correlation_tree(Matrix(random_matrix(10, 1, rng))), std::invalid_argument);
}

TEST(BuildCorrelationTree, OtherLinkagesGiveValidTrees)
{
    std::mt19937_64 rng(6);
    const Matrix x = random_matrix(20, 7, rng);
    for (auto l : {Linkage::single, Linkage::average}) {
        const auto tree = build_correlation_tree(x, l);
        EXPECT_TRUE(tree.is_binary());
        EXPECT_EQ(tree.size(), 13u);
    }
}

TEST(ClusterTree, StructuralInvariants)
{
    std::mt19937_64 rng(7);
    const auto tree = build_correlation_tree(random_matrix(20, 9, rng));
    EXPECT_EQ(tree.num_variables(), 9u);
    const auto& nodes = tree.nodes();
    for (const auto& a : nodes)
        for (const auto& b : nodes) {
            IndexSet common;
            std::set_intersection(a.variables.begin(), a.variables.end(), b.variables.begin(), b.variables.end(),
                                  std::back_inserter(common));
            const bool nested = common == a.variables || common == b.variables;
            EXPECT_TRUE(nested || common.empty());
        }
    for (const auto& n : nodes) {
        if (!n.parent) continue;
        const auto sib = tree.siblings(n.id);
        ASSERT_EQ(sib.size(), 1u);
        IndexSet u = n.variables;
        const auto& s = tree.node(sib.front()).variables;
        u.insert(u.end(), s.begin(), s.end());
        std::sort(u.begin(), u.end());
        EXPECT_EQ(u, tree.node(*n.parent).variables);
        EXPECT_EQ(u.size(), n.variables.size() + s.size());
    }
}

TEST(ClusterTree, Navigation)
{
    const auto tree = four_leaf_tree();
    const auto root = tree.navigate(tree.root());
    EXPECT_FALSE(root.parent);
    EXPECT_TRUE(root.ancestors.empty());
    EXPECT_TRUE(root.siblings.empty());

    const auto leaf = tree.navigate(tree.leaf_of(2));
    ASSERT_TRUE(leaf.parent);
    EXPECT_EQ(tree.node(*leaf.parent).variables, (IndexSet{2, 3}));
    EXPECT_EQ(leaf.siblings, std::vector<NodeId>{tree.leaf_of(3)});
    ASSERT_EQ(leaf.ancestors.size(), 2u);
    EXPECT_EQ(leaf.ancestors.front(), tree.root());
    for (const auto& n : tree.nodes())
        for (auto a : tree.ancestors(n.id)) {
            const auto& av = tree.node(a).variables;
            EXPECT_GT(av.size(), n.variables.size());
            EXPECT_TRUE(std::includes(av.begin(), av.end(), n.variables.begin(), n.variables.end()));
        }
    EXPECT_THROW(tree.navigate(99), std::out_of_range);
}

TEST(ClusterTree, RejectsMalformedTrees)
{
    std::vector<ClusterNode> nodes(3);
    nodes[0].variables = {0};
    nodes[1].variables = {1};
    nodes[2].variables = {0, 1, 2};
    nodes[2].children = {0, 1};
    EXPECT_THROW(ClusterTree(nodes, 2), std::invalid_argument);
    nodes[2].variables = {0, 1};
    nodes[2].children = {0};
    EXPECT_THROW(ClusterTree(nodes, 2), std::invalid_argument);
    nodes[2].children = {0, 1};
    EXPECT_NO_THROW(ClusterTree(nodes, 2));
}

TEST(ClusterTree, FlatTreeIsNotBinary)
{
    const auto tree = flat_tree(5);
    EXPECT_FALSE(tree.is_binary());
    EXPECT_EQ(tree.node(tree.root()).children.size(), 5u);
    EXPECT_EQ(tree.leaf_order(), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(EffectiveClusterSize, SiblingChildMeetsScreen)
{
    const auto tree = four_leaf_tree();
    const std::vector<std::size_t> s{0, 2};
    EXPECT_EQ(effective_cluster_size(tree, node_with(tree, {0, 1}), s), 1u);
}

TEST(EffectiveClusterSize, SiblingChildrenOutsideScreen)
{
    const auto tree = four_leaf_tree();
    const std::vector<std::size_t> s{0, 1};
    EXPECT_EQ(effective_cluster_size(tree, node_with(tree, {0, 1}), s), 2u);
}

TEST(EffectiveClusterSize, LeafSibling)
{
    const auto tree = four_leaf_tree();
    const std::vector<std::size_t> s{0, 1};
    EXPECT_EQ(effective_cluster_size(tree, tree.leaf_of(0), s), 2u);
    EXPECT_EQ(effective_cluster_size(tree, tree.root(), s), 2u);
}

TEST(EffectiveClusterSize, RefusesNonBinaryAndBadIds)
{
    const std::vector<std::size_t> s{0};
    EXPECT_THROW(effective_cluster_size(flat_tree(3), 0, s), std::domain_error);
    EXPECT_THROW(effective_cluster_size(four_leaf_tree(), 42, s), std::out_of_range);
}

TEST(EffectiveClusterSize, AtLeastScreenedClusterSize)
{
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t p = 2 + std::size_t(rep % 7);
        const auto tree = random_binary_tree(p, rng);
        for (unsigned mask = 0; mask < (1u << p); ++mask) {
            std::vector<bool> in(p);
            for (std::size_t j = 0; j < p; ++j) in[j] = (mask >> j) & 1u;
            const auto counts = screened_counts(tree, in);
            for (NodeId c = 0; c < tree.size(); ++c)
                EXPECT_GE(effective_cluster_size_from_counts(tree, c, counts), counts[c]);
        }
    }
}

TEST(EffectiveClusterSize, MaximalNullFamilyFitsInScreenedSet)
{
    // For every active set S and screened set Ŝ, the maximal clusters that
    // miss S and meet Ŝ have effective sizes summing to at most |Ŝ|.
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 40; ++rep) {
        const std::size_t p = 2 + std::size_t(rep % 7);
        const auto tree = random_binary_tree(p, rng);
        for (unsigned screen = 1; screen < (1u << p); ++screen) {
            std::vector<bool> in(p);
            std::size_t s_size = 0;
            for (std::size_t j = 0; j < p; ++j) s_size += (in[j] = (screen >> j) & 1u);
            const auto counts = screened_counts(tree, in);
            for (unsigned active = 0; active < (1u << p); ++active) {
                std::vector<bool> act(p);
                for (std::size_t j = 0; j < p; ++j) act[j] = (active >> j) & 1u;
                const auto active_counts = screened_counts(tree, act);
                std::size_t total = 0;
                for (const auto& n : tree.nodes()) {
                    if (active_counts[n.id] != 0 || counts[n.id] == 0) continue;
                    if (n.parent && active_counts[*n.parent] == 0) continue;
                    total += effective_cluster_size_from_counts(tree, n.id, counts);
                }
                EXPECT_LE(total, s_size) << "p=" << p << " screen=" << screen << " active=" << active;
            }
        }
    }
}
