#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse::ad {

// Dense row-major 2-D f64 array. Every numeric value in the engine lives in
// one of these; learnable parameters carry a persistent gradient buffer.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // same size as data iff requires_grad

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }
    static Tensor full(std::size_t r, std::size_t c, double v);
    static Tensor scalar(double v) { return full(1, 1, v); }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return rows * cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    double scalar_value() const { return data[0]; }

    // Marks the tensor learnable and allocates its gradient buffer.
    void enable_grad();
    void zero_grad();

    bool all_finite() const;
    // Throws NumericError if any stored value is NaN/Inf.
    void check_finite(const char* context) const;
};

enum class Op : std::uint8_t {
    Leaf,
    Matmul,
    Transpose,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Neg,
    Relu,
    Sigmoid,
    Log,
    Exp,
    Softplus,
    ConcatCols,
    BroadcastRows,
    L2NormalizeRows,
    ReduceSum,
    ReduceMean,
    ReduceSumSym,
};

// Handle to a node in a Graph. Plain index; valid only for the graph that
// produced it.
struct Var {
    std::size_t id = 0;
};

// Define-by-run tape. Nodes are appended in topological order and backward
// visits them in strict reverse insertion order. A graph lives for one
// forward/backward pass; parameters outlive it and are bound via param().
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // -- leaves ------------------------------------------------------------
    // Constant: no gradient is tracked through it.
    Var constant(Tensor t);
    // Input: gradient is tracked and queryable via grad() after backward.
    Var input(Tensor t);
    // Bound parameter: backward accumulates into t.grad, which persists
    // across graphs until explicitly zeroed. t must outlive the graph.
    Var param(Tensor& t);

    // -- ops ---------------------------------------------------------------
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    // Binary elementwise ops accept equal shapes or a 1x1 scalar on either
    // side (scalar-vs-matrix broadcast).
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scalar_mul(Var a, double c);
    Var neg(Var a);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var log(Var a);
    Var exp(Var a);
    Var softplus(Var a);
    Var concat_cols(Var a, Var b);
    // Repeats a 1xd row vector n times into an nxd matrix.
    Var broadcast_rows(Var a, std::size_t n);
    Var l2_normalize_rows(Var a);
    Var reduce_sum(Var a);
    Var reduce_mean(Var a);
    // Sum of a square matrix accumulated in a transpose-invariant order:
    // reduce_sum_sym(M) and reduce_sum_sym(M^T) are bitwise equal.
    Var reduce_sum_sym(Var a);

    // -- execution ---------------------------------------------------------
    // Seeds d(loss)/d(loss) = 1, propagates in reverse insertion order, and
    // adds leaf contributions into bound parameter grads. Node-local grads
    // are scratch per call; bound grads accumulate across calls.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    // Node-local gradient captured by the most recent backward().
    const std::vector<double>& grad(Var v) const;
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Op op = Op::Leaf;
        std::size_t a = 0, b = 0; // input node ids
        std::size_t n_inputs = 0;
        Tensor value;
        std::vector<double> grad;
        bool requires_grad = false;
        Tensor* bound = nullptr; // external parameter for bound leaves
        double aux = 0.0;        // op payload (ScalarMul factor)
        std::size_t aux_n = 0;   // op payload (ConcatCols split, BroadcastRows n)
    };

    Var push(Node n);
    Node& node(Var v) {
        if (v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        if (v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
        return nodes_[v.id];
    }
    void ensure_grad_buffer(std::size_t id);
    void add_into(std::size_t id, const std::vector<double>& contribution);

    std::vector<Node> nodes_;
};

// Matches softplus(x) = log(1 + e^x) without overflow for large |x|.
double stable_softplus(double x);

} // namespace mmfuse::ad
