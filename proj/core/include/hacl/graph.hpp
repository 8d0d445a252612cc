#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hacl/tensor.hpp"

namespace hacl::diff {

enum class Op : uint8_t {
    leaf,
    add,           // same shape, or (RxC) + (C) broadcast over rows
    mul,           // elementwise, same shape
    matmul,        // (RxK) x (KxC)
    transpose,     // rank-2
    concat_rows,   // variadic; rank-1 inputs count as single rows
    slice_row,     // (RxC, i) -> rank-1 of length C
    embedding,     // (table VxD, ids) -> (nxD)
    softmax_rows,  // rank-2, rowwise
    log,
    exp,
    l2norm_rows,   // rank-1 or rank-2, rowwise x / ||x||
    layernorm,     // (x, gain, bias) rowwise
    gelu,          // tanh approximation
    cross_entropy, // (logits RxV, labels[R], optional extra logit column) -> scalar mean
    mean,          // full reduction -> scalar
    scale,         // x * constant
};

const char* op_name(Op op);

/// Handle to a node in a Graph. Valid only for the graph that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over tensor ops. Forward values are computed eagerly
/// at node creation; creation order is the topological order, and
/// backward() walks it in exact reverse. Single-threaded by contract.
class Graph {
  public:
    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var scalar(double v) { return leaf(Tensor::scalar(v), false); }

    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var concat_rows(std::span<const Var> parts);
    Var slice_row(Var a, int row);
    Var embedding(Var table, std::span<const int> ids);
    Var softmax_rows(Var a);
    Var log(Var a);
    Var exp(Var a);
    Var l2norm_rows(Var a);
    Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
    Var gelu(Var a);
    /// Mean over rows of -log softmax(row)[label]. When `extra_col` is
    /// valid it must be a (Rx1) matrix appended as one more logit per row
    /// before the softmax; a -inf entry contributes exactly nothing.
    Var cross_entropy(Var logits, std::span<const int> labels, Var extra_col = {});
    Var mean(Var a);
    Var scale(Var a, double c);

    // Composite helpers built from the ops above.
    Var sum(Var a);                          // scale(mean, numel)
    Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
    Var dot(Var a, Var b);                   // rank-1: scale(mean(mul), n)

    const Tensor& value(Var v) const { return node_at(v).value; }
    bool requires_grad(Var v) const { return node_at(v).requires_grad; }

    /// Accumulates d(loss)/d(node) for every node reachable from `loss`
    /// whose subgraph contains a differentiable leaf. Loss must be scalar.
    void backward(Var loss);

    /// Gradient of the most recent backward() pass. Zero tensor of the
    /// node's shape if the node did not participate.
    const Tensor& grad(Var v);

    size_t size() const { return nodes_.size(); }
    void clear();

  private:
    struct Node {
        Op op = Op::leaf;
        std::vector<int> inputs;
        std::vector<int> ints;  // slice index / embedding ids / labels
        double attr = 0.0;      // scale factor or layernorm eps
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
    };

    std::vector<Node> nodes_;

    Node& node_at(Var v);
    const Node& node_at(Var v) const;
    Var push(Node n);
    void backprop_node(int id);
    Tensor& grad_buf(int id);
};

/// Max relative error between reverse-mode and central-difference gradients,
/// using denominator max(1, |a|, |n|) so near-zero coordinates are compared
/// absolutely.
struct GradCheckReport {
    double max_rel_error = 0.0;
    bool passed = false;
    int worst_input = -1;   // index into the inputs span
    size_t worst_coord = 0; // flat index within that input
};

/// `f` must rebuild the same scalar function of the leaves on every call.
GradCheckReport grad_check(const std::function<Var(Graph&, std::span<const Var>)>& f,
                           std::span<const Tensor> inputs, double step = 1e-5,
                           double tolerance = 1e-4);

}  // namespace hacl::diff
