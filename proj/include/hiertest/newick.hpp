#pragma once

// Newick serialization of cluster trees. Leaf labels are 1-based variable
// indices; branch lengths are height differences between a node and its
// parent, so node heights are recovered as distances down to the leaves.

#include "hiertest/cluster_tree.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hiertest {

class NewickError : public std::runtime_error {
public:
    NewickError(const std::string& what, std::size_t pos)
        : std::runtime_error("newick: " + what + " at offset " + std::to_string(pos)), pos_(pos)
    {
    }
    std::size_t position() const { return pos_; }

private:
    std::size_t pos_;
};

namespace detail {

inline std::string format_length(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_newick_node(const ClusterTree& tree, NodeId id, std::string& out)
{
    const auto& n = tree.node(id);
    if (n.children.empty()) {
        out += std::to_string(n.variables.front() + 1);
    } else {
        out += '(';
        for (std::size_t k = 0; k < n.children.size(); ++k) {
            if (k) out += ',';
            write_newick_node(tree, n.children[k], out);
        }
        out += ')';
    }
    if (n.parent) {
        out += ':';
        out += format_length(std::max(0.0, tree.node(*n.parent).height - n.height));
    }
}

class NewickParser {
public:
    explicit NewickParser(std::string_view text) : s_(text) {}

    ClusterTree parse()
    {
        skip();
        const NodeId root = subtree();
        skip();
        if (pos_ < s_.size() && s_[pos_] == ':') {
            ++pos_;
            number();
            skip();
        }
        if (pos_ >= s_.size() || s_[pos_] != ';') fail("expected ';'");
        ++pos_;
        skip();
        if (pos_ != s_.size()) fail("trailing characters after ';'");

        // Heights: distance from each node down to its deepest leaf.
        std::vector<double> height(raw_.size(), 0.0);
        std::vector<std::vector<std::size_t>> vars(raw_.size());
        for (std::size_t i = 0; i < raw_.size(); ++i) { // children are created before parents
            const auto& r = raw_[i];
            if (r.children.empty()) {
                vars[i] = {r.variable};
                continue;
            }
            for (auto c : r.children) {
                height[i] = std::max(height[i], height[c] + raw_[c].length);
                vars[i].insert(vars[i].end(), vars[c].begin(), vars[c].end());
            }
        }

        std::vector<std::size_t> seen;
        for (const auto& r : raw_)
            if (r.children.empty()) seen.push_back(r.variable);
        std::sort(seen.begin(), seen.end());
        for (std::size_t j = 0; j < seen.size(); ++j) {
            if (j > 0 && seen[j] == seen[j - 1]) throw NewickError("leaf label " + std::to_string(seen[j] + 1) + " repeated", pos_);
            if (seen[j] != j) throw NewickError("leaf labels must be exactly 1..p", pos_);
        }

        std::vector<ClusterNode> nodes(raw_.size());
        for (std::size_t i = 0; i < raw_.size(); ++i) {
            nodes[i].variables = std::move(vars[i]);
            nodes[i].children = raw_[i].children;
            nodes[i].height = height[i];
        }
        try {
            return ClusterTree(std::move(nodes), root);
        } catch (const std::invalid_argument& e) {
            throw NewickError(e.what(), pos_);
        }
    }

private:
    struct RawNode {
        std::vector<NodeId> children;
        std::size_t variable = 0;
        double length = 0.0;
    };

    [[noreturn]] void fail(const std::string& what) const { throw NewickError(what, pos_); }

    void skip()
    {
        while (pos_ < s_.size()) {
            if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
                ++pos_;
            } else if (s_[pos_] == '[') {
                const auto close = s_.find(']', pos_);
                if (close == std::string_view::npos) fail("unterminated comment");
                pos_ = close + 1;
            } else {
                break;
            }
        }
    }

    std::string label()
    {
        skip();
        std::string out;
        if (pos_ < s_.size() && s_[pos_] == '\'') {
            ++pos_;
            while (true) {
                if (pos_ >= s_.size()) fail("unterminated quoted label");
                if (s_[pos_] == '\'') {
                    if (pos_ + 1 < s_.size() && s_[pos_ + 1] == '\'') {
                        out += '\'';
                        pos_ += 2;
                        continue;
                    }
                    ++pos_;
                    break;
                }
                out += s_[pos_++];
            }
            return out;
        }
        while (pos_ < s_.size()) {
            const char c = s_[pos_];
            if (c == '(' || c == ')' || c == ',' || c == ':' || c == ';' || c == '[' ||
                std::isspace(static_cast<unsigned char>(c)))
                break;
            out += c;
            ++pos_;
        }
        return out;
    }

    double number()
    {
        skip();
        const auto start = pos_;
        while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                    s_[pos_] == '-' || s_[pos_] == '+' || s_[pos_] == 'e' || s_[pos_] == 'E'))
            ++pos_;
        double v = 0.0;
        const auto res = std::from_chars(s_.data() + start, s_.data() + pos_, v);
        if (res.ec != std::errc() || res.ptr != s_.data() + pos_ || start == pos_) {
            pos_ = start;
            fail("malformed branch length");
        }
        if (v < 0.0) {
            pos_ = start;
            fail("negative branch length");
        }
        return v;
    }

    NodeId subtree()
    {
        skip();
        RawNode node;
        if (pos_ < s_.size() && s_[pos_] == '(') {
            ++pos_;
            while (true) {
                node.children.push_back(subtree());
                skip();
                if (pos_ >= s_.size()) fail("unbalanced parenthesis");
                if (s_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                if (s_[pos_] == ')') {
                    ++pos_;
                    break;
                }
                fail("expected ',' or ')'");
            }
            if (node.children.size() < 2) fail("internal node with a single child");
            label(); // internal labels are ignored
        } else {
            const auto at = pos_;
            const std::string text = label();
            if (text.empty()) fail("empty leaf label");
            std::size_t v = 0;
            const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
            if (res.ec != std::errc() || res.ptr != text.data() + text.size() || v == 0) {
                pos_ = at;
                fail("leaf label '" + text + "' is not a positive variable index");
            }
            node.variable = v - 1;
        }
        skip();
        if (pos_ < s_.size() && s_[pos_] == ':') {
            ++pos_;
            node.length = number();
        }
        raw_.push_back(std::move(node));
        return raw_.size() - 1;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    std::vector<RawNode> raw_;
};

} // namespace detail

inline std::string to_newick(const ClusterTree& tree)
{
    std::string out;
    detail::write_newick_node(tree, tree.root(), out);
    out += ";\n";
    return out;
}

/// Parses a Newick tree whose leaves are labelled 1..p. Node ids in the
/// returned tree follow post-order of the text.
inline ClusterTree parse_newick(std::string_view text)
{
    return detail::NewickParser(text).parse();
}

} // namespace hiertest
