#include "mmfuse/autodiff.hpp"

#include <cmath>
#include <string>

namespace mmfuse::ad {

namespace {

std::string shape_str(const Tensor& t) {
    return "(" + std::to_string(t.rows) + "x" + std::to_string(t.cols) + ")";
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

double stable_softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

Tensor Tensor::full(std::size_t r, std::size_t c, double v) {
    Tensor t(r, c);
    for (auto& x : t.data) x = v;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t;
    t.rows = rows.size();
    t.cols = rows.size() ? rows.begin()->size() : 0;
    t.data.reserve(t.rows * t.cols);
    for (const auto& row : rows) {
        if (row.size() != t.cols) {
            throw DimensionError("from_rows: ragged initializer, expected " +
                                 std::to_string(t.cols) + " columns");
        }
        t.data.insert(t.data.end(), row.begin(), row.end());
    }
    return t;
}

void Tensor::enable_grad() {
    requires_grad = true;
    grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    grad.assign(data.size(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::check_finite(const char* context) const {
    if (!all_finite()) {
        throw NumericError(std::string(context) + ": non-finite value in " + shape_str(*this) +
                           " tensor");
    }
}

Var Graph::push(Node n) {
#ifndef NDEBUG
    // Debug-only guard: no NaN/Inf admitted into the graph.
    n.value.check_finite("graph op");
#endif
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::constant(Tensor t) {
    t.check_finite("constant");
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(t);
    n.requires_grad = false;
    return push(std::move(n));
}

Var Graph::input(Tensor t) {
    t.check_finite("input");
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(t);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Graph::param(Tensor& t) {
    t.check_finite("param");
    if (!t.requires_grad || t.grad.size() != t.data.size()) {
        throw ContractError("param: tensor must have requires_grad with an allocated grad buffer");
    }
    Node n;
    n.op = Op::Leaf;
    n.value = t; // snapshot of the current values
    n.requires_grad = true;
    n.bound = &t;
    return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (A.cols != B.rows) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(A) + " x " +
                             shape_str(B));
    }
    Node n;
    n.op = Op::Matmul;
    n.a = a.id;
    n.b = b.id;
    n.n_inputs = 2;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = A.data[i * A.cols + k];
            if (aik == 0.0) continue;
            const double* brow = &B.data[k * B.cols];
            double* crow = &n.value.data[i * B.cols];
            for (std::size_t j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return push(std::move(n));
}

Var Graph::transpose(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(A.cols, A.rows);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < A.cols; ++j) n.value.data[j * A.rows + i] = A.data[i * A.cols + j];
    return push(std::move(n));
}

namespace {

enum class BinaryShape { Equal, ScalarLeft, ScalarRight };

BinaryShape classify_binary(const Tensor& A, const Tensor& B, const char* op_name) {
    if (A.rows == B.rows && A.cols == B.cols) return BinaryShape::Equal;
    if (A.is_scalar()) return BinaryShape::ScalarLeft;
    if (B.is_scalar()) return BinaryShape::ScalarRight;
    throw DimensionError(std::string(op_name) + ": shape mismatch, " + shape_str(A) + " vs " +
                         shape_str(B));
}

} // namespace

Var Graph::add(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    const BinaryShape bs = classify_binary(A, B, "add");
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.n_inputs = 2;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    if (bs == BinaryShape::ScalarLeft) {
        n.value = Tensor(B.rows, B.cols);
        for (std::size_t i = 0; i < B.size(); ++i) n.value.data[i] = A.data[0] + B.data[i];
    } else if (bs == BinaryShape::ScalarRight) {
        n.value = Tensor(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] + B.data[0];
    } else {
        n.value = Tensor(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] + B.data[i];
    }
    return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    const BinaryShape bs = classify_binary(A, B, "sub");
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.n_inputs = 2;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    if (bs == BinaryShape::ScalarLeft) {
        n.value = Tensor(B.rows, B.cols);
        for (std::size_t i = 0; i < B.size(); ++i) n.value.data[i] = A.data[0] - B.data[i];
    } else if (bs == BinaryShape::ScalarRight) {
        n.value = Tensor(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] - B.data[0];
    } else {
        n.value = Tensor(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] - B.data[i];
    }
    return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    const BinaryShape bs = classify_binary(A, B, "mul");
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.n_inputs = 2;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    if (bs == BinaryShape::ScalarLeft) {
        n.value = Tensor(B.rows, B.cols);
        for (std::size_t i = 0; i < B.size(); ++i) n.value.data[i] = A.data[0] * B.data[i];
    } else if (bs == BinaryShape::ScalarRight) {
        n.value = Tensor(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] * B.data[0];
    } else {
        n.value = Tensor(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] * B.data[i];
    }
    return push(std::move(n));
}

Var Graph::scalar_mul(Var a, double c) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::ScalarMul;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.aux = c;
    n.value = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = c * A.data[i];
    return push(std::move(n));
}

Var Graph::neg(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::Neg;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = -A.data[i];
    return push(std::move(n));
}

Var Graph::relu(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::Relu;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = A.data[i] > 0.0 ? A.data[i] : 0.0;
    return push(std::move(n));
}

Var Graph::sigmoid(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = stable_sigmoid(A.data[i]);
    return push(std::move(n));
}

Var Graph::log(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::Log;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) {
        if (!(A.data[i] > 0.0)) {
            throw DomainError("log: non-positive input " + std::to_string(A.data[i]));
        }
        n.value.data[i] = std::log(A.data[i]);
    }
    return push(std::move(n));
}

Var Graph::exp(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::Exp;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = std::exp(A.data[i]);
    return push(std::move(n));
}

Var Graph::softplus(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::Softplus;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] = stable_softplus(A.data[i]);
    return push(std::move(n));
}

Var Graph::concat_cols(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (A.rows != B.rows) {
        throw DimensionError("concat_cols: row counts disagree, " + shape_str(A) + " vs " +
                             shape_str(B));
    }
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.id;
    n.b = b.id;
    n.n_inputs = 2;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.aux_n = A.cols; // split point
    n.value = Tensor(A.rows, A.cols + B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        double* out = &n.value.data[i * n.value.cols];
        const double* arow = &A.data[i * A.cols];
        const double* brow = &B.data[i * B.cols];
        for (std::size_t j = 0; j < A.cols; ++j) out[j] = arow[j];
        for (std::size_t j = 0; j < B.cols; ++j) out[A.cols + j] = brow[j];
    }
    return push(std::move(n));
}

Var Graph::broadcast_rows(Var a, std::size_t n_rows) {
    const Tensor& A = node(a).value;
    if (A.rows != 1) {
        throw DimensionError("broadcast_rows: expected a 1-row vector, got " + shape_str(A));
    }
    Node n;
    n.op = Op::BroadcastRows;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.aux_n = n_rows;
    n.value = Tensor(n_rows, A.cols);
    for (std::size_t i = 0; i < n_rows; ++i)
        for (std::size_t j = 0; j < A.cols; ++j) n.value.data[i * A.cols + j] = A.data[j];
    return push(std::move(n));
}

Var Graph::l2_normalize_rows(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::L2NormalizeRows;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor(A.rows, A.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* x = &A.data[i * A.cols];
        double sq = 0.0;
        for (std::size_t j = 0; j < A.cols; ++j) sq += x[j] * x[j];
        const double norm = std::sqrt(sq);
        if (norm < 1e-12) {
            throw DomainError("l2_normalize_rows: degenerate row " + std::to_string(i) +
                              " with norm " + std::to_string(norm));
        }
        for (std::size_t j = 0; j < A.cols; ++j) n.value.data[i * A.cols + j] = x[j] / norm;
    }
    return push(std::move(n));
}

Var Graph::reduce_sum(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::ReduceSum;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    double acc = 0.0;
    for (double v : A.data) acc += v;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

Var Graph::reduce_mean(Var a) {
    const Tensor& A = node(a).value;
    Node n;
    n.op = Op::ReduceMean;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    double acc = 0.0;
    for (double v : A.data) acc += v;
    n.value = Tensor::scalar(A.size() ? acc / static_cast<double>(A.size()) : 0.0);
    return push(std::move(n));
}

Var Graph::reduce_sum_sym(Var a) {
    const Tensor& A = node(a).value;
    if (A.rows != A.cols) {
        throw DimensionError("reduce_sum_sym: matrix must be square, got " + shape_str(A));
    }
    Node n;
    n.op = Op::ReduceSumSym;
    n.a = a.id;
    n.n_inputs = 1;
    n.requires_grad = node(a).requires_grad;
    // Diagonal first, then each off-diagonal pair added before joining the
    // accumulator, so the result is invariant under transposition.
    double acc = 0.0;
    const std::size_t m = A.rows;
    for (std::size_t u = 0; u < m; ++u) {
        acc += A.data[u * m + u];
        for (std::size_t v = u + 1; v < m; ++v) {
            acc += A.data[u * m + v] + A.data[v * m + u];
        }
    }
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

const Tensor& Graph::value(Var v) const {
    return node(v).value;
}

const std::vector<double>& Graph::grad(Var v) const {
    const Node& n = node(v);
    if (!n.requires_grad) {
        throw ContractError("grad: node does not track gradients");
    }
    return n.grad;
}

void Graph::ensure_grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

void Graph::backward(Var loss) {
    Node& root = node(loss);
    if (!root.value.is_scalar()) {
        throw ContractError("backward: loss must be a 1x1 scalar, got (" +
                            std::to_string(root.value.rows) + "x" +
                            std::to_string(root.value.cols) + ")");
    }

    // Node-local grads are scratch for this call.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].requires_grad) {
            ensure_grad_buffer(i);
            std::fill(nodes_[i].grad.begin(), nodes_[i].grad.end(), 0.0);
        }
    }
    if (!root.requires_grad) return; // loss independent of every leaf
    root.grad[0] = 1.0;

    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
        Node& n = nodes_[idx];
        if (!n.requires_grad || n.op == Op::Leaf) continue;
        const std::vector<double>& g = n.grad;

        Node& na = nodes_[n.a];
        const bool need_a = na.requires_grad;
        Node* nb = n.n_inputs == 2 ? &nodes_[n.b] : nullptr;
        const bool need_b = nb && nb->requires_grad;

        switch (n.op) {
        case Op::Matmul: {
            const Tensor& A = na.value;
            const Tensor& B = nb->value;
            if (need_a) { // dA += dC * B^T
                for (std::size_t i = 0; i < A.rows; ++i) {
                    for (std::size_t k = 0; k < A.cols; ++k) {
                        double acc = 0.0;
                        const double* grow = &g[i * B.cols];
                        const double* brow = &B.data[k * B.cols];
                        for (std::size_t j = 0; j < B.cols; ++j) acc += grow[j] * brow[j];
                        na.grad[i * A.cols + k] += acc;
                    }
                }
            }
            if (need_b) { // dB += A^T * dC
                for (std::size_t i = 0; i < A.rows; ++i) {
                    for (std::size_t k = 0; k < A.cols; ++k) {
                        const double aik = A.data[i * A.cols + k];
                        if (aik == 0.0) continue;
                        const double* grow = &g[i * B.cols];
                        double* brow = &nb->grad[k * B.cols];
                        for (std::size_t j = 0; j < B.cols; ++j) brow[j] += aik * grow[j];
                    }
                }
            }
            break;
        }
        case Op::Transpose: {
            if (need_a) {
                const Tensor& A = na.value;
                for (std::size_t i = 0; i < A.rows; ++i)
                    for (std::size_t j = 0; j < A.cols; ++j)
                        na.grad[i * A.cols + j] += g[j * A.rows + i];
            }
            break;
        }
        case Op::Add: {
            if (need_a) {
                if (na.value.is_scalar() && !n.value.is_scalar()) {
                    double acc = 0.0;
                    for (double v : g) acc += v;
                    na.grad[0] += acc;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
                }
            }
            if (need_b) {
                if (nb->value.is_scalar() && !n.value.is_scalar()) {
                    double acc = 0.0;
                    for (double v : g) acc += v;
                    nb->grad[0] += acc;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i];
                }
            }
            break;
        }
        case Op::Sub: {
            if (need_a) {
                if (na.value.is_scalar() && !n.value.is_scalar()) {
                    double acc = 0.0;
                    for (double v : g) acc += v;
                    na.grad[0] += acc;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
                }
            }
            if (need_b) {
                if (nb->value.is_scalar() && !n.value.is_scalar()) {
                    double acc = 0.0;
                    for (double v : g) acc += v;
                    nb->grad[0] -= acc;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] -= g[i];
                }
            }
            break;
        }
        case Op::Mul: {
            const Tensor& A = na.value;
            const Tensor& B = nb->value;
            const bool a_scalar = A.is_scalar() && !n.value.is_scalar();
            const bool b_scalar = B.is_scalar() && !n.value.is_scalar();
            if (need_a) {
                if (a_scalar) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * B.data[i];
                    na.grad[0] += acc;
                } else if (b_scalar) {
                    for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * B.data[0];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * B.data[i];
                }
            }
            if (need_b) {
                if (b_scalar) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * A.data[i];
                    nb->grad[0] += acc;
                } else if (a_scalar) {
                    for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i] * A.data[0];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i] * A.data[i];
                }
            }
            break;
        }
        case Op::ScalarMul: {
            if (need_a)
                for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += n.aux * g[i];
            break;
        }
        case Op::Neg: {
            if (need_a)
                for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] -= g[i];
            break;
        }
        case Op::Relu: {
            if (need_a)
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (na.value.data[i] > 0.0) na.grad[i] += g[i];
            break;
        }
        case Op::Sigmoid: {
            if (need_a)
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double s = n.value.data[i];
                    na.grad[i] += g[i] * s * (1.0 - s);
                }
            break;
        }
        case Op::Log: {
            if (need_a)
                for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] / na.value.data[i];
            break;
        }
        case Op::Exp: {
            if (need_a)
                for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * n.value.data[i];
            break;
        }
        case Op::Softplus: {
            if (need_a)
                for (std::size_t i = 0; i < g.size(); ++i)
                    na.grad[i] += g[i] * stable_sigmoid(na.value.data[i]);
            break;
        }
        case Op::ConcatCols: {
            const std::size_t p = n.aux_n;
            const std::size_t cols = n.value.cols;
            const std::size_t rows = n.value.rows;
            if (need_a) {
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < p; ++j) na.grad[i * p + j] += g[i * cols + j];
            }
            if (need_b) {
                const std::size_t q = cols - p;
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < q; ++j) nb->grad[i * q + j] += g[i * cols + p + j];
            }
            break;
        }
        case Op::BroadcastRows: {
            if (need_a) {
                const std::size_t cols = n.value.cols;
                for (std::size_t i = 0; i < n.value.rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) na.grad[j] += g[i * cols + j];
            }
            break;
        }
        case Op::L2NormalizeRows: {
            if (need_a) {
                const Tensor& A = na.value;
                for (std::size_t i = 0; i < A.rows; ++i) {
                    const double* x = &A.data[i * A.cols];
                    const double* y = &n.value.data[i * A.cols];
                    const double* gy = &g[i * A.cols];
                    double sq = 0.0;
                    for (std::size_t j = 0; j < A.cols; ++j) sq += x[j] * x[j];
                    const double norm = std::sqrt(sq);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < A.cols; ++j) dot += y[j] * gy[j];
                    for (std::size_t j = 0; j < A.cols; ++j)
                        na.grad[i * A.cols + j] += (gy[j] - y[j] * dot) / norm;
                }
            }
            break;
        }
        case Op::ReduceSum:
        case Op::ReduceSumSym: {
            if (need_a) {
                const double gy = g[0];
                for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += gy;
            }
            break;
        }
        case Op::ReduceMean: {
            if (need_a) {
                const double gy = g[0] / static_cast<double>(na.value.size());
                for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += gy;
            }
            break;
        }
        case Op::Leaf:
            break;
        }
    }

    // Flush bound-parameter contributions; these accumulate across backward
    // calls until the caller zeroes them.
    for (Node& n : nodes_) {
        if (n.op == Op::Leaf && n.bound != nullptr && !n.grad.empty()) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }
}

} // namespace mmfuse::ad
