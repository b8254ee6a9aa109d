#pragma once

// Cluster hierarchies over the variables {0, ..., p-1}: construction by
// agglomerative clustering on 1 - |correlation|, navigation, and the
// effective cluster size used by the Shaffer-type adjustment.

#include "hiertest/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hiertest {

using NodeId = std::size_t;

struct ClusterNode {
    NodeId id = 0;
    IndexSet variables;   // sorted, 0-based
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    double height = 0.0;  // merge dissimilarity; 0 for leaves
};

struct Navigation {
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    std::vector<NodeId> siblings;
    std::vector<NodeId> ancestors; // root first
};

enum class Linkage { complete, single, average };

class ClusterTree {
public:
    ClusterTree() = default;

    /// Takes nodes with variables, children and heights filled in. Parent
    /// links and ids are (re)derived; all structural invariants are checked.
    ClusterTree(std::vector<ClusterNode> nodes, NodeId root) : nodes_(std::move(nodes)), root_(root)
    {
        validate_and_link();
    }

    std::size_t size() const { return nodes_.size(); }
    std::size_t num_variables() const { return num_variables_; }
    NodeId root() const { return root_; }
    const std::vector<ClusterNode>& nodes() const { return nodes_; }

    const ClusterNode& node(NodeId id) const
    {
        check(id);
        return nodes_[id];
    }

    bool is_leaf(NodeId id) const { return node(id).children.empty(); }

    /// Every internal node has exactly two children.
    bool is_binary() const { return binary_; }

    /// Leaf node holding the single variable `variable`.
    NodeId leaf_of(std::size_t variable) const
    {
        if (variable >= leaf_of_.size()) throw std::out_of_range("variable index out of range");
        return leaf_of_[variable];
    }

    /// Node ids with every parent before its children (depth-first, children in stored order).
    const std::vector<NodeId>& preorder() const { return preorder_; }

    std::vector<NodeId> siblings(NodeId id) const
    {
        const auto& n = node(id);
        std::vector<NodeId> out;
        if (!n.parent) return out;
        for (auto c : nodes_[*n.parent].children)
            if (c != id) out.push_back(c);
        return out;
    }

    std::vector<NodeId> ancestors(NodeId id) const
    {
        std::vector<NodeId> out;
        auto p = node(id).parent;
        while (p) {
            out.push_back(*p);
            p = nodes_[*p].parent;
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    Navigation navigate(NodeId id) const
    {
        const auto& n = node(id);
        return Navigation{n.parent, n.children, siblings(id), ancestors(id)};
    }

    /// Leaf variables in left-to-right order of the stored children.
    std::vector<std::size_t> leaf_order() const
    {
        std::vector<std::size_t> out;
        for (auto id : preorder_)
            if (nodes_[id].children.empty()) out.push_back(nodes_[id].variables.front());
        return out;
    }

private:
    void check(NodeId id) const
    {
        if (id >= nodes_.size()) throw std::out_of_range("node id " + std::to_string(id) + " not in tree");
    }

    void validate_and_link()
    {
        if (nodes_.empty()) throw std::invalid_argument("cluster tree: no nodes");
        check(root_);
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            nodes_[i].id = i;
            nodes_[i].parent.reset();
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            auto& n = nodes_[i];
            if (n.variables.empty()) throw std::invalid_argument("cluster tree: node with empty variable set");
            std::sort(n.variables.begin(), n.variables.end());
            if (std::adjacent_find(n.variables.begin(), n.variables.end()) != n.variables.end())
                throw std::invalid_argument("cluster tree: duplicate variable inside a node");
            if (n.children.size() == 1) throw std::invalid_argument("cluster tree: internal node with a single child");
            for (auto c : n.children) {
                check(c);
                if (c == i) throw std::invalid_argument("cluster tree: node is its own child");
                if (nodes_[c].parent) throw std::invalid_argument("cluster tree: node with two parents");
                nodes_[c].parent = i;
            }
        }
        if (nodes_[root_].parent) throw std::invalid_argument("cluster tree: root has a parent");

        // Reachability from the root, and the disjoint-union rule at every internal node.
        preorder_.clear();
        std::vector<NodeId> stack{root_};
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            preorder_.push_back(id);
            const auto& n = nodes_[id];
            if (n.children.empty()) {
                if (n.variables.size() != 1) throw std::invalid_argument("cluster tree: leaf is not a singleton");
                continue;
            }
            IndexSet merged;
            for (auto c : n.children) merged.insert(merged.end(), nodes_[c].variables.begin(), nodes_[c].variables.end());
            std::sort(merged.begin(), merged.end());
            if (merged != n.variables)
                throw std::invalid_argument("cluster tree: node " + std::to_string(id) +
                                            " is not the disjoint union of its children");
            for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
        }
        if (preorder_.size() != nodes_.size()) throw std::invalid_argument("cluster tree: unreachable nodes");

        const auto& all = nodes_[root_].variables;
        num_variables_ = all.size();
        for (std::size_t j = 0; j < all.size(); ++j)
            if (all[j] != j) throw std::invalid_argument("cluster tree: root must contain exactly variables 0..p-1");

        leaf_of_.assign(num_variables_, 0);
        binary_ = true;
        for (const auto& n : nodes_) {
            if (n.children.empty())
                leaf_of_[n.variables.front()] = n.id;
            else if (n.children.size() != 2)
                binary_ = false;
        }
    }

    std::vector<ClusterNode> nodes_;
    NodeId root_ = 0;
    std::size_t num_variables_ = 0;
    std::vector<NodeId> leaf_of_;
    std::vector<NodeId> preorder_;
    bool binary_ = true;
};

/// One agglomeration step: clusters `left` and `right` (node ids) merged at `height`.
struct Merge {
    NodeId left;
    NodeId right;
    double height;
};

/// Agglomerative clustering of a symmetric dissimilarity matrix. Leaves are
/// node ids 0..p-1, merge k creates node p+k, the root is the last node.
/// Among pairs at exactly the minimal dissimilarity, the pair whose smaller
/// cluster minimum is lowest wins, then the lower larger minimum.
inline std::vector<Merge> agglomerate(const Matrix& dissimilarity, Linkage linkage = Linkage::complete)
{
    const auto p = static_cast<std::size_t>(dissimilarity.rows());
    if (dissimilarity.cols() != dissimilarity.rows()) throw std::invalid_argument("agglomerate: matrix not square");
    if (p < 2) throw std::invalid_argument("agglomerate: need at least two variables");
    if (!dissimilarity.allFinite()) throw std::invalid_argument("agglomerate: non-finite dissimilarity");

    // Working copy indexed by slot; slot i holds the active cluster with node id node_of[i].
    Matrix d = dissimilarity;
    std::vector<NodeId> node_of(p);
    std::vector<std::size_t> min_var(p), count(p, 1);
    std::vector<bool> active(p, true);
    for (std::size_t i = 0; i < p; ++i) {
        node_of[i] = i;
        min_var[i] = i;
    }

    std::vector<Merge> merges;
    merges.reserve(p - 1);
    for (std::size_t step = 0; step + 1 < p; ++step) {
        std::size_t best_i = p, best_j = p;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < p; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < p; ++j) {
                if (!active[j]) continue;
                const double v = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (v < best) {
                    best = v;
                    best_i = i;
                    best_j = j;
                } else if (v == best) {
                    const auto lo = std::minmax(min_var[i], min_var[j]);
                    const auto cur = std::minmax(min_var[best_i], min_var[best_j]);
                    if (lo < cur) {
                        best_i = i;
                        best_j = j;
                    }
                }
            }
        }

        const NodeId new_id = p + step;
        merges.push_back({node_of[best_i], node_of[best_j], best});

        // Slot best_i receives the merged cluster.
        for (std::size_t k = 0; k < p; ++k) {
            if (!active[k] || k == best_i || k == best_j) continue;
            const auto ki = static_cast<Eigen::Index>(k);
            const double di = d(ki, static_cast<Eigen::Index>(best_i));
            const double dj = d(ki, static_cast<Eigen::Index>(best_j));
            double v = 0.0;
            switch (linkage) {
            case Linkage::complete: v = std::max(di, dj); break;
            case Linkage::single: v = std::min(di, dj); break;
            case Linkage::average:
                v = (static_cast<double>(count[best_i]) * di + static_cast<double>(count[best_j]) * dj) /
                    static_cast<double>(count[best_i] + count[best_j]);
                break;
            }
            d(ki, static_cast<Eigen::Index>(best_i)) = v;
            d(static_cast<Eigen::Index>(best_i), ki) = v;
        }
        active[best_j] = false;
        node_of[best_i] = new_id;
        min_var[best_i] = std::min(min_var[best_i], min_var[best_j]);
        count[best_i] += count[best_j];
    }
    return merges;
}

/// Builds the binary tree described by a merge sequence over p leaves.
inline ClusterTree tree_from_merges(std::size_t p, std::span<const Merge> merges)
{
    if (merges.size() + 1 != p) throw std::invalid_argument("tree_from_merges: need exactly p-1 merges");
    std::vector<ClusterNode> nodes(2 * p - 1);
    for (std::size_t j = 0; j < p; ++j) nodes[j].variables = {j};
    for (std::size_t k = 0; k < merges.size(); ++k) {
        auto& n = nodes[p + k];
        const auto& m = merges[k];
        if (m.left >= p + k || m.right >= p + k) throw std::invalid_argument("tree_from_merges: merge refers to a later node");
        n.children = {m.left, m.right};
        n.height = m.height;
        n.variables = nodes[m.left].variables;
        n.variables.insert(n.variables.end(), nodes[m.right].variables.begin(), nodes[m.right].variables.end());
        std::sort(n.variables.begin(), n.variables.end());
    }
    return ClusterTree(std::move(nodes), 2 * p - 2);
}

/// Pairwise 1 - |cor(X_j, X_k)|. Throws on a constant column.
inline Matrix correlation_dissimilarity(const Matrix& x)
{
    const auto n = x.rows();
    const auto p = x.cols();
    if (n < 2) throw std::invalid_argument("correlation: need at least two rows");
    if (!x.allFinite()) throw std::invalid_argument("correlation: non-finite entries");
    Matrix z(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double mean = x.col(j).mean();
        Vector centered = x.col(j).array() - mean;
        const double norm = centered.norm();
        if (!(norm > 0.0) || norm <= 1e-12 * std::max(1.0, x.col(j).cwiseAbs().maxCoeff()) * std::sqrt(double(n)))
            throw std::invalid_argument("correlation: column " + std::to_string(j + 1) + " is constant");
        z.col(j) = centered / norm;
    }
    Matrix d = Matrix::Zero(p, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        for (Eigen::Index k = j + 1; k < p; ++k) {
            const double r = std::clamp(z.col(j).dot(z.col(k)), -1.0, 1.0);
            const double v = std::max(0.0, 1.0 - std::fabs(r));
            d(j, k) = v;
            d(k, j) = v;
        }
    }
    return d;
}

/// Hierarchical clustering of the columns of X with dissimilarity
/// 1 - |correlation| (complete linkage unless requested otherwise).
inline ClusterTree build_correlation_tree(const Matrix& x, Linkage linkage = Linkage::complete)
{
    if (x.cols() < 2) throw std::invalid_argument("build_correlation_tree: need at least two columns");
    const auto merges = agglomerate(correlation_dissimilarity(x), linkage);
    return tree_from_merges(static_cast<std::size_t>(x.cols()), merges);
}

/// Root over p leaves and nothing in between; testing on it reproduces
/// single-variable multi sample-splitting.
inline ClusterTree flat_tree(std::size_t p)
{
    if (p < 2) throw std::invalid_argument("flat_tree: need at least two variables");
    std::vector<ClusterNode> nodes(p + 1);
    for (std::size_t j = 0; j < p; ++j) nodes[j].variables = {j};
    auto& root = nodes[p];
    root.height = 1.0;
    for (std::size_t j = 0; j < p; ++j) {
        root.variables.push_back(j);
        root.children.push_back(j);
    }
    return ClusterTree(std::move(nodes), p);
}

/// Counts |C ∩ S| for every node. `in_screen[j]` flags membership of variable j.
inline std::vector<std::size_t> screened_counts(const ClusterTree& tree, const std::vector<bool>& in_screen)
{
    if (in_screen.size() != tree.num_variables()) throw std::invalid_argument("screened_counts: mask length mismatch");
    std::vector<std::size_t> counts(tree.size(), 0);
    const auto& order = tree.preorder();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& n = tree.nodes()[*it];
        if (n.children.empty())
            counts[*it] = in_screen[n.variables.front()] ? 1 : 0;
        else
            for (auto c : n.children) counts[*it] += counts[c];
    }
    return counts;
}

/// Effective size of node c given precomputed screened counts.
inline std::size_t effective_cluster_size_from_counts(const ClusterTree& tree, NodeId c, const std::vector<std::size_t>& counts)
{
    if (!tree.is_binary()) throw std::domain_error("effective cluster size requires a binary hierarchy");
    const auto& n = tree.node(c);
    if (!n.parent) return counts[c];
    const NodeId sib = tree.siblings(c).front();
    for (auto e : tree.node(sib).children)
        if (counts[e] > 0) return counts[c];
    return counts[c] + counts[sib];
}

/// Effective cluster size of node c restricted to the screened set s_hat.
inline std::size_t effective_cluster_size(const ClusterTree& tree, NodeId c, std::span<const std::size_t> s_hat)
{
    tree.node(c);
    std::vector<bool> mask(tree.num_variables(), false);
    for (auto j : s_hat) {
        if (j >= mask.size()) throw std::out_of_range("effective_cluster_size: screened index out of range");
        mask[j] = true;
    }
    return effective_cluster_size_from_counts(tree, c, screened_counts(tree, mask));
}

} // namespace hiertest
