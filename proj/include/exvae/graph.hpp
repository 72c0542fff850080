#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "exvae/errors.hpp"

namespace exvae {

using Mat = Eigen::MatrixXd;

// Handle into a Graph. Cheap to copy; only meaningful for the graph that
// produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices.
//
// Values are computed eagerly as ops are recorded, so intermediate results
// can be inspected (e.g. to run a kNN query) while the graph is still being
// built. backward() then walks the tape once in reverse creation order and
// accumulates exact adjoints.
//
// The op set is closed: affine maps, elementwise tanh/sigmoid/softplus/
// exp/log/square/relu/clamp, reductions (sum/mean/row_sum), (masked) row-wise
// log-sum-exp, pairwise squared distances, and scalar broadcasts. Anything
// else is out of contract.
class Graph {
public:
    // Leaf with gradient tracking; name shows up in numeric error messages.
    Var leaf(Mat value, std::string name = {});
    // Leaf without gradient tracking (data, noise, targets).
    Var constant(Mat value);

    const Mat& value(Var v) const;
    // Gradient of the last backward() target w.r.t. v; zeros if no flow.
    Mat grad(Var v) const;
    double scalar(Var v) const;

    // y = x. Elementwise unary.
    Var sigmoid(Var x);
    Var tanh_(Var x);
    Var softplus(Var x);
    Var exp_(Var x);
    Var log_(Var x);
    Var square(Var x);
    Var relu(Var x);
    Var clamp(Var x, double lo, double hi);
    Var scale(Var x, double c);
    Var add_const(Var x, double c);
    Var neg(Var x) { return scale(x, -1.0); }

    // Binary, same shape.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b); // Hadamard

    // x: (B,I), w: (I,O), b: (1,O) -> (B,O)
    Var affine(Var x, Var w, Var b);
    Var matmul(Var a, Var b);

    // Reductions.
    Var sum(Var x);      // -> 1x1
    Var mean(Var x);     // -> 1x1
    Var row_sum(Var x);  // (B,M) -> (B,1)

    // (B,M) -> (B,1), numerically stable; rows of all -inf yield -inf.
    Var row_log_sum_exp(Var x);
    // Same, restricted to entries where mask != 0. Every row must select at
    // least one entry.
    Var masked_row_log_sum_exp(Var x, Mat mask);

    // z: (B,d), u: (M,d) -> (B,M) of squared Euclidean distances, computed
    // as |z|^2 - 2 z.u + |u|^2 with one matrix product.
    Var pairwise_sqdist(Var z, Var u);

    // Broadcast a 1x1 scalar variable over a matrix.
    Var mul_scalar(Var x, Var s);
    Var add_scalar(Var x, Var s);

    // x: (B,M) minus column c: (B,1), broadcast across columns.
    Var sub_colvec(Var x, Var c);

    // Accumulates adjoints of `loss` (must be 1x1) into every reachable node.
    // Throws NumericError naming the offending leaf if a non-finite gradient
    // lands in a named leaf.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat val;
        Mat grad;                  // empty until touched by backward
        bool requires_grad = false;
        std::string name;          // set for named leaves only
        std::function<void(Graph&, int)> back; // null for leaves/constants
    };

    std::vector<Node> nodes_;

    Var push(Mat val, bool requires_grad, std::function<void(Graph&, int)> back);
    const Node& node(Var v) const;
    Mat& grad_buf(int id);
    void accumulate(int id, const Mat& delta);
    void check_same_shape(Var a, Var b, const char* op) const;

    friend struct GraphOps;
};

} // namespace exvae
