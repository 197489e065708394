#pragma once

#include <algorithm>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace iwbench {

/// Static k-d tree over the rows of a point matrix, for exact Euclidean
/// k-nearest-neighbor queries. Candidates are ordered by (distance, row
/// index), so distance ties resolve to the lower index and results match a
/// lexicographic brute-force scan exactly.
class KdTree {
public:
    explicit KdTree(Eigen::MatrixXd points, int leaf_size = 16)
        : points_(std::move(points)), leaf_size_(std::max(1, leaf_size)) {
        if (points_.rows() == 0) {
            throw std::invalid_argument("KdTree: empty point set");
        }
        order_.resize(static_cast<std::size_t>(points_.rows()));
        for (std::size_t i = 0; i < order_.size(); ++i) {
            order_[i] = static_cast<Eigen::Index>(i);
        }
        nodes_.reserve(order_.size() / static_cast<std::size_t>(leaf_size_) * 2 + 1);
        build(0, static_cast<Eigen::Index>(order_.size()));
    }

    const Eigen::MatrixXd& points() const { return points_; }

    /// k smallest rows by (squared distance, index); k must be <= row count.
    std::vector<Eigen::Index> knearest(const Eigen::VectorXd& query, int k) const {
        if (k < 1 || k > points_.rows()) {
            throw std::invalid_argument("KdTree::knearest: k out of range");
        }
        Heap heap;
        search(0, query, static_cast<std::size_t>(k), heap);
        std::vector<Eigen::Index> out(heap.size());
        for (std::size_t i = out.size(); i-- > 0;) {
            out[i] = heap.top().second;
            heap.pop();
        }
        return out;
    }

private:
    using Candidate = std::pair<double, Eigen::Index>;  // (squared distance, row)
    using Heap = std::priority_queue<Candidate>;        // top = worst kept

    struct Node {
        int dim = -1;           // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        Eigen::Index begin = 0, end = 0;  // leaf range into order_
    };

    int build(Eigen::Index begin, Eigen::Index end) {
        const int node_id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        if (end - begin <= leaf_size_) {
            nodes_[node_id].begin = begin;
            nodes_[node_id].end = end;
            return node_id;
        }
        // Split along the dimension with the largest spread; ties pick the
        // lowest dimension.
        int best_dim = 0;
        double best_spread = -1.0;
        for (Eigen::Index d = 0; d < points_.cols(); ++d) {
            double lo = points_(order_[static_cast<std::size_t>(begin)], d);
            double hi = lo;
            for (Eigen::Index i = begin + 1; i < end; ++i) {
                const double v = points_(order_[static_cast<std::size_t>(i)], d);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                best_dim = static_cast<int>(d);
            }
        }
        if (best_spread <= 0.0) {
            // all points identical over every dimension
            nodes_[node_id].begin = begin;
            nodes_[node_id].end = end;
            return node_id;
        }
        const Eigen::Index mid = begin + (end - begin) / 2;
        auto cmp = [this, best_dim](Eigen::Index a, Eigen::Index b) {
            const double va = points_(a, best_dim);
            const double vb = points_(b, best_dim);
            return va < vb || (va == vb && a < b);
        };
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, cmp);
        nodes_[node_id].dim = best_dim;
        nodes_[node_id].split = points_(order_[static_cast<std::size_t>(mid)], best_dim);
        const int left = build(begin, mid);
        const int right = build(mid, end);
        nodes_[node_id].left = left;
        nodes_[node_id].right = right;
        return node_id;
    }

    static bool better(const Candidate& a, const Candidate& b) {
        return a.first < b.first || (a.first == b.first && a.second < b.second);
    }

    void scan_leaf(const Node& node, const Eigen::VectorXd& query, std::size_t k,
                   Heap& heap) const {
        for (Eigen::Index i = node.begin; i < node.end; ++i) {
            const Eigen::Index row = order_[static_cast<std::size_t>(i)];
            const Candidate cand{(points_.row(row).transpose() - query).squaredNorm(), row};
            if (heap.size() < k) {
                heap.push(cand);
            } else if (better(cand, heap.top())) {
                heap.pop();
                heap.push(cand);
            }
        }
    }

    void search(int node_id, const Eigen::VectorXd& query, std::size_t k, Heap& heap) const {
        const Node& node = nodes_[static_cast<std::size_t>(node_id)];
        if (node.dim < 0) {
            scan_leaf(node, query, k, heap);
            return;
        }
        const double delta = query[node.dim] - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search(near, query, k, heap);
        // The far side can still hold an equal-distance lower-index candidate,
        // so prune only on strict excess.
        if (heap.size() < k || delta * delta <= heap.top().first) {
            search(far, query, k, heap);
        }
    }

    Eigen::MatrixXd points_;
    int leaf_size_;
    std::vector<Eigen::Index> order_;
    std::vector<Node> nodes_;
};

/// Exact k-NN by full scan, same (distance, index) ordering as KdTree.
inline std::vector<Eigen::Index> brute_force_knearest(const Eigen::MatrixXd& points,
                                                      const Eigen::VectorXd& query, int k) {
    if (k < 1 || k > points.rows()) {
        throw std::invalid_argument("brute_force_knearest: k out of range");
    }
    std::vector<std::pair<double, Eigen::Index>> all(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        all[static_cast<std::size_t>(i)] = {(points.row(i).transpose() - query).squaredNorm(), i};
    }
    std::partial_sort(all.begin(), all.begin() + k, all.end());
    std::vector<Eigen::Index> out(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        out[static_cast<std::size_t>(i)] = all[static_cast<std::size_t>(i)].second;
    }
    return out;
}

}  // namespace iwbench
