#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smartpq {

// Workload features fed to the classifier.
struct FeatureVector {
    double n_threads = 0;
    double size = 0;
    double key_range = 0;
    double insert_pct = 0;  // fraction in [0,1]

    std::array<double, 4> as_array() const {
        return {n_threads, size, key_range, insert_pct};
    }
};

// Classes: 0 = neutral (tie), 1 = NUMA-oblivious wins, 2 = NUMA-aware wins.
enum class ModeClass : int { neutral = 0, oblivious = 1, aware = 2 };

inline constexpr double kDefaultTieThreshold = 1.5e6;  // ops/s

// Labels a throughput pair: neutral when the two modes are within the tie
// threshold, otherwise the class of the faster mode.
inline ModeClass label(double thr_oblivious, double thr_aware,
                       double threshold = kDefaultTieThreshold) {
    if (thr_oblivious < 0 || thr_aware < 0)
        throw std::invalid_argument("label: throughputs must be non-negative");
    double diff = thr_oblivious - thr_aware;
    if (diff < 0)
        diff = -diff;
    if (diff < threshold)
        return ModeClass::neutral;
    return thr_oblivious > thr_aware ? ModeClass::oblivious : ModeClass::aware;
}

struct LabeledSample {
    FeatureVector features;
    double thr_oblivious = 0;
    double thr_aware = 0;
    int label = 0;
};

struct TrainConfig {
    int max_depth = 8;
    int min_leaf = 5;
};

// Binary CART tree. Internal nodes route `feature <= threshold` to the left
// child. Stored flat; node 0 is the root.
class DecisionTree {
  public:
    struct Node {
        bool is_leaf = true;
        int feature = 0;
        double threshold = 0;
        int left = -1;
        int right = -1;
        int cls = 0;

        bool operator==(const Node&) const = default;
    };

    static constexpr int kFeatureCount = 4;

    DecisionTree() = default;
    explicit DecisionTree(std::vector<Node> nodes) : nodes_(std::move(nodes)) {
        validate();
    }

    int predict(const FeatureVector& f) const {
        if (nodes_.empty())
            throw std::runtime_error("DecisionTree: empty tree");
        auto x = f.as_array();
        int i = 0;
        while (!nodes_[i].is_leaf)
            i = (x[nodes_[i].feature] <= nodes_[i].threshold) ? nodes_[i].left
                                                              : nodes_[i].right;
        return nodes_[i].cls;
    }

    int node_count() const { return static_cast<int>(nodes_.size()); }

    int depth() const { return depth_from(0); }

    const std::vector<Node>& nodes() const { return nodes_; }

    bool operator==(const DecisionTree& other) const = default;

    // Line-oriented text format, preorder, one node per line:
    //   header:  "dtree v1 <node-count> <depth>"
    //   split:   "S <feature> <threshold>"
    //   leaf:    "L <class>"
    std::string serialize() const {
        std::ostringstream out;
        out << "dtree v1 " << node_count() << ' ' << depth() << '\n';
        serialize_node(out, 0);
        return out.str();
    }

    static DecisionTree deserialize(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        int lineno = 1;
        if (!std::getline(in, line))
            throw std::runtime_error("tree parse error at line 1: missing header");
        std::istringstream hs(line);
        std::string magic, version;
        int count = 0, depth = 0;
        if (!(hs >> magic >> version >> count >> depth) || magic != "dtree")
            throw std::runtime_error("tree parse error at line 1: bad header");
        if (version != "v1")
            throw std::runtime_error("tree parse error at line 1: unsupported version " + version);
        std::vector<Node> nodes;
        nodes.reserve(static_cast<size_t>(count));
        parse_node(in, nodes, lineno, count);
        std::string rest;
        if (std::getline(in, rest) && !rest.empty())
            throw std::runtime_error("tree parse error at line " + std::to_string(lineno + 1) +
                                     ": trailing content");
        if (static_cast<int>(nodes.size()) != count)
            throw std::runtime_error("tree parse error: header count mismatch");
        return DecisionTree(std::move(nodes));
    }

  private:
    void validate() const {
        if (nodes_.empty())
            throw std::runtime_error("DecisionTree: empty tree");
        for (const Node& n : nodes_) {
            if (n.is_leaf) {
                if (n.cls < 0 || n.cls > 2)
                    throw std::runtime_error("DecisionTree: leaf class out of range");
            } else {
                if (n.feature < 0 || n.feature >= kFeatureCount)
                    throw std::runtime_error("DecisionTree: feature index out of range");
                if (n.left < 0 || n.right < 0 ||
                    n.left >= static_cast<int>(nodes_.size()) ||
                    n.right >= static_cast<int>(nodes_.size()))
                    throw std::runtime_error("DecisionTree: dangling child link");
            }
        }
    }

    int depth_from(int i) const {
        if (nodes_[i].is_leaf)
            return 0;
        return 1 + std::max(depth_from(nodes_[i].left), depth_from(nodes_[i].right));
    }

    void serialize_node(std::ostream& out, int i) const {
        const Node& n = nodes_[i];
        if (n.is_leaf) {
            out << "L " << n.cls << '\n';
            return;
        }
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", n.threshold);
        out << "S " << n.feature << ' ' << buf << '\n';
        serialize_node(out, n.left);
        serialize_node(out, n.right);
    }

    // Reads one preorder subtree; appends nodes and returns the root index.
    static int parse_node(std::istream& in, std::vector<Node>& nodes, int& lineno,
                          int declared_count) {
        std::string line;
        if (!std::getline(in, line))
            throw std::runtime_error("tree parse error at line " + std::to_string(lineno + 1) +
                                     ": unexpected end of input");
        ++lineno;
        int my_line = lineno;
        if (static_cast<int>(nodes.size()) >= declared_count)
            throw std::runtime_error("tree parse error at line " + std::to_string(my_line) +
                                     ": more nodes than declared");
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        int idx = static_cast<int>(nodes.size());
        nodes.emplace_back();
        if (tag == "L") {
            int cls;
            if (!(ls >> cls) || cls < 0 || cls > 2)
                throw std::runtime_error("tree parse error at line " + std::to_string(my_line) +
                                         ": bad leaf");
            nodes[idx].is_leaf = true;
            nodes[idx].cls = cls;
        } else if (tag == "S") {
            int feature;
            double threshold;
            if (!(ls >> feature >> threshold) || feature < 0 || feature >= kFeatureCount)
                throw std::runtime_error("tree parse error at line " + std::to_string(my_line) +
                                         ": bad split");
            nodes[idx].is_leaf = false;
            nodes[idx].feature = feature;
            nodes[idx].threshold = threshold;
            nodes[idx].left = parse_node(in, nodes, lineno, declared_count);
            nodes[idx].right = parse_node(in, nodes, lineno, declared_count);
        } else {
            throw std::runtime_error("tree parse error at line " + std::to_string(my_line) +
                                     ": unknown node tag '" + tag + "'");
        }
        return idx;
    }

    std::vector<Node> nodes_;
};

namespace detail {

inline double gini(const std::array<int, 3>& counts, int total) {
    if (total == 0)
        return 0.0;
    double g = 1.0;
    for (int c : counts) {
        double p = static_cast<double>(c) / total;
        g -= p * p;
    }
    return g;
}

struct SplitChoice {
    bool found = false;
    int feature = 0;
    double threshold = 0;
    double impurity = 0;  // weighted child Gini
};

}  // namespace detail

// Greedy CART with Gini impurity. Candidate thresholds are the midpoints
// between consecutive distinct feature values; ties break deterministically
// on (feature index, threshold). Splits that would leave a child smaller
// than min_leaf are rejected. Identical input order and config produce an
// identical tree.
inline DecisionTree train(const std::vector<LabeledSample>& samples, TrainConfig config = {}) {
    if (samples.empty())
        throw std::invalid_argument("train: need at least one sample");
    for (const auto& s : samples)
        if (s.label < 0 || s.label > 2)
            throw std::invalid_argument("train: label out of range");
    if (config.min_leaf < 1)
        config.min_leaf = 1;

    std::vector<DecisionTree::Node> nodes;

    struct Builder {
        const std::vector<LabeledSample>& samples;
        const TrainConfig& cfg;
        std::vector<DecisionTree::Node>& nodes;

        int majority(const std::vector<int>& idx) const {
            std::array<int, 3> counts{};
            for (int i : idx)
                ++counts[static_cast<size_t>(samples[i].label)];
            int best = 0;
            for (int c = 1; c < 3; ++c)
                if (counts[c] > counts[best])
                    best = c;
            return best;
        }

        detail::SplitChoice best_split(const std::vector<int>& idx) const {
            detail::SplitChoice best;
            int n = static_cast<int>(idx.size());
            std::vector<std::pair<double, int>> vals(idx.size());
            for (int f = 0; f < DecisionTree::kFeatureCount; ++f) {
                for (size_t i = 0; i < idx.size(); ++i) {
                    vals[i] = {samples[idx[i]].features.as_array()[static_cast<size_t>(f)],
                               samples[idx[i]].label};
                }
                std::sort(vals.begin(), vals.end());
                std::array<int, 3> left{};
                std::array<int, 3> right{};
                for (auto& [v, lab] : vals)
                    ++right[static_cast<size_t>(lab)];
                int nleft = 0;
                for (int i = 0; i + 1 < n; ++i) {
                    ++left[static_cast<size_t>(vals[i].second)];
                    --right[static_cast<size_t>(vals[i].second)];
                    ++nleft;
                    if (vals[i].first == vals[i + 1].first)
                        continue;  // midpoint only between distinct values
                    if (nleft < cfg.min_leaf || n - nleft < cfg.min_leaf)
                        continue;
                    double thr = vals[i].first + (vals[i + 1].first - vals[i].first) / 2.0;
                    double imp = (static_cast<double>(nleft) / n) * detail::gini(left, nleft) +
                                 (static_cast<double>(n - nleft) / n) *
                                     detail::gini(right, n - nleft);
                    if (!best.found || imp < best.impurity) {
                        best.found = true;
                        best.feature = f;
                        best.threshold = thr;
                        best.impurity = imp;
                    }
                }
            }
            return best;
        }

        int build(std::vector<int> idx, int depth) {
            std::array<int, 3> counts{};
            for (int i : idx)
                ++counts[static_cast<size_t>(samples[i].label)];
            int n = static_cast<int>(idx.size());
            bool pure = false;
            for (int c = 0; c < 3; ++c)
                if (counts[c] == n)
                    pure = true;

            int me = static_cast<int>(nodes.size());
            nodes.emplace_back();
            if (pure || depth >= cfg.max_depth || n < 2 * cfg.min_leaf) {
                nodes[me].is_leaf = true;
                nodes[me].cls = majority(idx);
                return me;
            }
            // Split whenever one is admissible, even at zero Gini gain
            // (XOR-style rules need gainless intermediate splits).
            auto split = best_split(idx);
            if (!split.found) {
                nodes[me].is_leaf = true;
                nodes[me].cls = majority(idx);
                return me;
            }
            std::vector<int> li, ri;
            for (int i : idx) {
                double v = samples[i].features.as_array()[static_cast<size_t>(split.feature)];
                (v <= split.threshold ? li : ri).push_back(i);
            }
            nodes[me].is_leaf = false;
            nodes[me].feature = split.feature;
            nodes[me].threshold = split.threshold;
            nodes[me].left = build(std::move(li), depth + 1);
            nodes[me].right = build(std::move(ri), depth + 1);
            return me;
        }
    };

    std::vector<int> all(samples.size());
    for (size_t i = 0; i < samples.size(); ++i)
        all[i] = static_cast<int>(i);
    Builder b{samples, config, nodes};
    b.build(std::move(all), 0);
    return DecisionTree(std::move(nodes));
}

}  // namespace smartpq
