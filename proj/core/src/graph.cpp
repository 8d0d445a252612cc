#include "hacl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace hacl::diff {

namespace {

constexpr double kGeluCoef = 0.044715;
const double kGeluScale = std::sqrt(2.0 / M_PI);

[[noreturn]] void fail(Op op, const std::string& what) {
    throw std::invalid_argument(std::string(op_name(op)) + ": " + what);
}

void require_rank2(Op op, const Tensor& t, const char* name) {
    if (t.rank() != 2) fail(op, std::string(name) + " must be rank-2, got " + t.shape_str());
}

// C += A(RxK) * B(KxC)
void mm_acc(const double* a, const double* b, double* c, int r, int k, int n) {
    for (int i = 0; i < r; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C += A(RxK) * B(CxK)^T  -> (RxC)
void mm_abt_acc(const double* a, const double* b, double* c, int r, int k, int n) {
    for (int i = 0; i < r; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// C += A(RxK)^T * B(RxC) -> (KxC)
void mm_atb_acc(const double* a, const double* b, double* c, int r, int k, int n) {
    for (int i = 0; i < r; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        const double* bi = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::add: return "add";
        case Op::mul: return "mul";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::concat_rows: return "concat-rows";
        case Op::slice_row: return "slice-row";
        case Op::embedding: return "embedding-lookup";
        case Op::softmax_rows: return "softmax-rows";
        case Op::log: return "log";
        case Op::exp: return "exp";
        case Op::l2norm_rows: return "l2-normalize-rows";
        case Op::layernorm: return "layernorm";
        case Op::gelu: return "gelu";
        case Op::cross_entropy: return "cross-entropy";
        case Op::mean: return "mean";
        case Op::scale: return "scale";
    }
    return "?";
}

Graph::Node& Graph::node_at(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw std::out_of_range("Graph: invalid Var");
    return nodes_[v.id];
}

const Graph::Node& Graph::node_at(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw std::out_of_range("Graph: invalid Var");
    return nodes_[v.id];
}

Var Graph::push(Node n) {
    for (int in : n.inputs) {
        if (nodes_[in].requires_grad) {
            n.requires_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::clear() { nodes_.clear(); }

Var Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::add(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    Node n;
    n.op = Op::add;
    n.inputs = {a.id, b.id};
    if (x.same_shape(y)) {
        n.value = x;
        for (size_t i = 0; i < y.data.size(); ++i) n.value.data[i] += y.data[i];
    } else if (x.rank() == 2 && y.rank() == 1 && x.shape[1] == y.shape[0]) {
        // row-wise broadcast: (RxC) + (C)
        n.value = x;
        const int r = x.shape[0], c = x.shape[1];
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) n.value.at(i, j) += y.data[j];
    } else {
        fail(Op::add, "shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    }
    return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (!x.same_shape(y)) fail(Op::mul, "shape mismatch " + x.shape_str() + " vs " + y.shape_str());
    Node n;
    n.op = Op::mul;
    n.inputs = {a.id, b.id};
    n.value = x;
    for (size_t i = 0; i < y.data.size(); ++i) n.value.data[i] *= y.data[i];
    return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require_rank2(Op::matmul, x, "lhs");
    require_rank2(Op::matmul, y, "rhs");
    if (x.shape[1] != y.shape[0])
        fail(Op::matmul, "inner dimension mismatch " + x.shape_str() + " vs " + y.shape_str());
    Node n;
    n.op = Op::matmul;
    n.inputs = {a.id, b.id};
    n.value = Tensor({x.shape[0], y.shape[1]});
    mm_acc(x.data.data(), y.data.data(), n.value.data.data(), x.shape[0], x.shape[1], y.shape[1]);
    return push(std::move(n));
}

Var Graph::transpose(Var a) {
    const Tensor& x = value(a);
    require_rank2(Op::transpose, x, "input");
    Node n;
    n.op = Op::transpose;
    n.inputs = {a.id};
    n.value = Tensor({x.shape[1], x.shape[0]});
    for (int i = 0; i < x.shape[0]; ++i)
        for (int j = 0; j < x.shape[1]; ++j) n.value.at(j, i) = x.at(i, j);
    return push(std::move(n));
}

Var Graph::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) fail(Op::concat_rows, "no inputs");
    int cols = -1, rows = 0;
    for (Var p : parts) {
        const Tensor& t = value(p);
        if (t.rank() != 1 && t.rank() != 2)
            fail(Op::concat_rows, "inputs must be rank-1 or rank-2, got " + t.shape_str());
        const int c = t.rank() == 1 ? t.shape[0] : t.shape[1];
        if (cols < 0) cols = c;
        if (c != cols) fail(Op::concat_rows, "column mismatch " + std::to_string(c) + " vs " +
                                                 std::to_string(cols));
        rows += t.rank() == 1 ? 1 : t.shape[0];
    }
    Node n;
    n.op = Op::concat_rows;
    n.value = Tensor({rows, cols});
    double* out = n.value.data.data();
    for (Var p : parts) {
        n.inputs.push_back(p.id);
        const Tensor& t = value(p);
        std::memcpy(out, t.data.data(), t.data.size() * sizeof(double));
        out += t.data.size();
    }
    return push(std::move(n));
}

Var Graph::slice_row(Var a, int row) {
    const Tensor& x = value(a);
    require_rank2(Op::slice_row, x, "input");
    if (row < 0 || row >= x.shape[0])
        fail(Op::slice_row, "row " + std::to_string(row) + " out of range for " + x.shape_str());
    Node n;
    n.op = Op::slice_row;
    n.inputs = {a.id};
    n.ints = {row};
    n.value = Tensor({x.shape[1]});
    std::memcpy(n.value.data.data(), x.data.data() + static_cast<size_t>(row) * x.shape[1],
                x.shape[1] * sizeof(double));
    return push(std::move(n));
}

Var Graph::embedding(Var table, std::span<const int> ids) {
    const Tensor& t = value(table);
    require_rank2(Op::embedding, t, "table");
    if (ids.empty()) fail(Op::embedding, "empty id list");
    Node n;
    n.op = Op::embedding;
    n.inputs = {table.id};
    n.ints.assign(ids.begin(), ids.end());
    const int d = t.shape[1];
    n.value = Tensor({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= t.shape[0])
            fail(Op::embedding, "id " + std::to_string(ids[i]) + " out of range for table " +
                                    t.shape_str());
        std::memcpy(n.value.data.data() + i * d,
                    t.data.data() + static_cast<size_t>(ids[i]) * d, d * sizeof(double));
    }
    return push(std::move(n));
}

Var Graph::softmax_rows(Var a) {
    const Tensor& x = value(a);
    require_rank2(Op::softmax_rows, x, "input");
    Node n;
    n.op = Op::softmax_rows;
    n.inputs = {a.id};
    n.value = Tensor(x.shape);
    const int r = x.shape[0], c = x.shape[1];
    for (int i = 0; i < r; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) m = std::max(m, x.at(i, j));
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(x.at(i, j) - m);
            n.value.at(i, j) = e;
            s += e;
        }
        for (int j = 0; j < c; ++j) n.value.at(i, j) /= s;
    }
    return push(std::move(n));
}

Var Graph::log(Var a) {
    const Tensor& x = value(a);
    Node n;
    n.op = Op::log;
    n.inputs = {a.id};
    n.value = x;
    for (double& v : n.value.data) v = std::log(v);
    return push(std::move(n));
}

Var Graph::exp(Var a) {
    const Tensor& x = value(a);
    Node n;
    n.op = Op::exp;
    n.inputs = {a.id};
    n.value = x;
    for (double& v : n.value.data) v = std::exp(v);
    return push(std::move(n));
}

Var Graph::l2norm_rows(Var a) {
    const Tensor& x = value(a);
    if (x.rank() != 1 && x.rank() != 2)
        fail(Op::l2norm_rows, "input must be rank-1 or rank-2, got " + x.shape_str());
    const int r = x.rank() == 1 ? 1 : x.shape[0];
    const int c = x.rank() == 1 ? x.shape[0] : x.shape[1];
    Node n;
    n.op = Op::l2norm_rows;
    n.inputs = {a.id};
    n.value = Tensor(x.shape);
    for (int i = 0; i < r; ++i) {
        const double* xi = x.data.data() + static_cast<size_t>(i) * c;
        double* yi = n.value.data.data() + static_cast<size_t>(i) * c;
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += xi[j] * xi[j];
        if (s == 0.0) fail(Op::l2norm_rows, "zero row " + std::to_string(i));
        const double inv = 1.0 / std::sqrt(s);
        for (int j = 0; j < c; ++j) yi[j] = xi[j] * inv;
    }
    return push(std::move(n));
}

Var Graph::layernorm(Var x, Var gain, Var bias, double eps) {
    const Tensor& xv = value(x);
    const Tensor& g = value(gain);
    const Tensor& b = value(bias);
    if (xv.rank() != 1 && xv.rank() != 2)
        fail(Op::layernorm, "input must be rank-1 or rank-2, got " + xv.shape_str());
    const int r = xv.rank() == 1 ? 1 : xv.shape[0];
    const int c = xv.rank() == 1 ? xv.shape[0] : xv.shape[1];
    if (g.rank() != 1 || g.shape[0] != c || b.rank() != 1 || b.shape[0] != c)
        fail(Op::layernorm, "gain/bias must be rank-1 of length " + std::to_string(c));
    Node n;
    n.op = Op::layernorm;
    n.inputs = {x.id, gain.id, bias.id};
    n.attr = eps;
    n.value = Tensor(xv.shape);
    for (int i = 0; i < r; ++i) {
        const double* xi = xv.data.data() + static_cast<size_t>(i) * c;
        double* yi = n.value.data.data() + static_cast<size_t>(i) * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += xi[j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j) yi[j] = (xi[j] - mu) * inv * g.data[j] + b.data[j];
    }
    return push(std::move(n));
}

Var Graph::gelu(Var a) {
    const Tensor& x = value(a);
    Node n;
    n.op = Op::gelu;
    n.inputs = {a.id};
    n.value = x;
    for (double& v : n.value.data) {
        const double t = std::tanh(kGeluScale * (v + kGeluCoef * v * v * v));
        v = 0.5 * v * (1.0 + t);
    }
    return push(std::move(n));
}

Var Graph::cross_entropy(Var logits, std::span<const int> labels, Var extra_col) {
    const Tensor& z = value(logits);
    require_rank2(Op::cross_entropy, z, "logits");
    const int r = z.shape[0], c = z.shape[1];
    if (static_cast<int>(labels.size()) != r)
        fail(Op::cross_entropy, "label count " + std::to_string(labels.size()) +
                                    " does not match " + std::to_string(r) + " rows");
    const Tensor* extra = nullptr;
    if (extra_col.valid()) {
        extra = &value(extra_col);
        const bool ok_shape = (extra->rank() == 2 && extra->shape[0] == r && extra->shape[1] == 1) ||
                              (extra->rank() == 1 && extra->shape[0] == r);
        if (!ok_shape)
            fail(Op::cross_entropy, "extra column must be (" + std::to_string(r) + "x1), got " +
                                        extra->shape_str());
    }
    Node n;
    n.op = Op::cross_entropy;
    n.inputs = {logits.id};
    if (extra) n.inputs.push_back(extra_col.id);
    n.ints.assign(labels.begin(), labels.end());
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
        const int lbl = labels[i];
        if (lbl < 0 || lbl >= c)
            fail(Op::cross_entropy, "label " + std::to_string(lbl) + " out of range [0," +
                                        std::to_string(c) + ")");
        const double* zi = z.data.data() + static_cast<size_t>(i) * c;
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) m = std::max(m, zi[j]);
        if (extra) m = std::max(m, extra->data[i]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += std::exp(zi[j] - m);
        if (extra) s += std::exp(extra->data[i] - m);
        // ordered so a one-term row gives exactly 0: (m - z) is 0, log(1) is 0
        total += std::log(s) + (m - zi[lbl]);
    }
    n.value = Tensor::scalar(total / r);
    return push(std::move(n));
}

Var Graph::mean(Var a) {
    const Tensor& x = value(a);
    Node n;
    n.op = Op::mean;
    n.inputs = {a.id};
    double s = 0.0;
    for (double v : x.data) s += v;
    n.value = Tensor::scalar(s / static_cast<double>(x.numel()));
    return push(std::move(n));
}

Var Graph::scale(Var a, double c) {
    const Tensor& x = value(a);
    Node n;
    n.op = Op::scale;
    n.inputs = {a.id};
    n.attr = c;
    n.value = x;
    for (double& v : n.value.data) v *= c;
    return push(std::move(n));
}

Var Graph::sum(Var a) { return scale(mean(a), static_cast<double>(value(a).numel())); }

Var Graph::dot(Var a, Var b) {
    const Tensor& x = value(a);
    if (x.rank() != 1) fail(Op::mul, "dot expects rank-1 inputs, got " + x.shape_str());
    return sum(mul(a, b));
}

Tensor& Graph::grad_buf(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape);
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::backward(Var loss) {
    Node& top = node_at(loss);
    if (!top.value.is_scalar() && top.value.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + top.value.shape_str());
    for (Node& n : nodes_) n.has_grad = false;
    grad_buf(loss.id).data[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        const Node& n = nodes_[id];
        if (!n.has_grad || !n.requires_grad || n.op == Op::leaf) continue;
        backprop_node(id);
    }
}

const Tensor& Graph::grad(Var v) {
    Node& n = node_at(v);
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape);
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::backprop_node(int id) {
    Node& n = nodes_[id];
    const Tensor& g = n.grad;

    auto wants = [&](int idx) { return nodes_[n.inputs[idx]].requires_grad; };
    auto gin = [&](int idx) -> Tensor& { return grad_buf(n.inputs[idx]); };
    auto vin = [&](int idx) -> const Tensor& { return nodes_[n.inputs[idx]].value; };

    switch (n.op) {
        case Op::leaf:
            break;
        case Op::add: {
            const Tensor& x = vin(0);
            const Tensor& y = vin(1);
            if (wants(0)) {
                Tensor& gx = gin(0);
                for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[i];
            }
            if (wants(1)) {
                Tensor& gy = gin(1);
                if (x.same_shape(y)) {
                    for (size_t i = 0; i < gy.data.size(); ++i) gy.data[i] += g.data[i];
                } else {  // broadcast row vector: accumulate column sums
                    const int r = x.shape[0], c = x.shape[1];
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) gy.data[j] += g.at(i, j);
                }
            }
            break;
        }
        case Op::mul: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                const Tensor& y = vin(1);
                for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[i] * y.data[i];
            }
            if (wants(1)) {
                Tensor& gy = gin(1);
                const Tensor& x = vin(0);
                for (size_t i = 0; i < gy.data.size(); ++i) gy.data[i] += g.data[i] * x.data[i];
            }
            break;
        }
        case Op::matmul: {
            const Tensor& a = vin(0);
            const Tensor& b = vin(1);
            const int r = a.shape[0], k = a.shape[1], c = b.shape[1];
            if (wants(0))
                mm_abt_acc(g.data.data(), b.data.data(), gin(0).data.data(), r, c, k);
            if (wants(1))
                mm_atb_acc(a.data.data(), g.data.data(), gin(1).data.data(), r, k, c);
            break;
        }
        case Op::transpose: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                const int r = gx.shape[0], c = gx.shape[1];
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gx.at(i, j) += g.at(j, i);
            }
            break;
        }
        case Op::concat_rows: {
            size_t off = 0;
            for (size_t p = 0; p < n.inputs.size(); ++p) {
                const Tensor& part = vin(static_cast<int>(p));
                if (wants(static_cast<int>(p))) {
                    Tensor& gp = gin(static_cast<int>(p));
                    for (size_t i = 0; i < part.data.size(); ++i)
                        gp.data[i] += g.data[off + i];
                }
                off += part.data.size();
            }
            break;
        }
        case Op::slice_row: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                const int c = gx.shape[1];
                double* row = gx.data.data() + static_cast<size_t>(n.ints[0]) * c;
                for (int j = 0; j < c; ++j) row[j] += g.data[j];
            }
            break;
        }
        case Op::embedding: {
            if (wants(0)) {
                Tensor& gt = gin(0);
                const int d = gt.shape[1];
                for (size_t i = 0; i < n.ints.size(); ++i) {
                    double* row = gt.data.data() + static_cast<size_t>(n.ints[i]) * d;
                    const double* gi = g.data.data() + i * d;
                    for (int j = 0; j < d; ++j) row[j] += gi[j];
                }
            }
            break;
        }
        case Op::softmax_rows: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                const Tensor& y = n.value;
                const int r = y.shape[0], c = y.shape[1];
                for (int i = 0; i < r; ++i) {
                    double dy = 0.0;
                    for (int j = 0; j < c; ++j) dy += g.at(i, j) * y.at(i, j);
                    for (int j = 0; j < c; ++j) gx.at(i, j) += y.at(i, j) * (g.at(i, j) - dy);
                }
            }
            break;
        }
        case Op::log: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                const Tensor& x = vin(0);
                for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[i] / x.data[i];
            }
            break;
        }
        case Op::exp: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                for (size_t i = 0; i < gx.data.size(); ++i)
                    gx.data[i] += g.data[i] * n.value.data[i];
            }
            break;
        }
        case Op::l2norm_rows: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                const Tensor& x = vin(0);
                const int r = x.rank() == 1 ? 1 : x.shape[0];
                const int c = x.rank() == 1 ? x.shape[0] : x.shape[1];
                for (int i = 0; i < r; ++i) {
                    const double* xi = x.data.data() + static_cast<size_t>(i) * c;
                    const double* yi = n.value.data.data() + static_cast<size_t>(i) * c;
                    const double* gi = g.data.data() + static_cast<size_t>(i) * c;
                    double* go = gx.data.data() + static_cast<size_t>(i) * c;
                    double norm = 0.0;
                    for (int j = 0; j < c; ++j) norm += xi[j] * xi[j];
                    norm = std::sqrt(norm);
                    double gy = 0.0;
                    for (int j = 0; j < c; ++j) gy += gi[j] * yi[j];
                    for (int j = 0; j < c; ++j) go[j] += (gi[j] - yi[j] * gy) / norm;
                }
            }
            break;
        }
        case Op::layernorm: {
            const Tensor& x = vin(0);
            const Tensor& gain = vin(1);
            const int r = x.rank() == 1 ? 1 : x.shape[0];
            const int c = x.rank() == 1 ? x.shape[0] : x.shape[1];
            const double eps = n.attr;
            for (int i = 0; i < r; ++i) {
                const double* xi = x.data.data() + static_cast<size_t>(i) * c;
                const double* gi = g.data.data() + static_cast<size_t>(i) * c;
                double mu = 0.0;
                for (int j = 0; j < c; ++j) mu += xi[j];
                mu /= c;
                double var = 0.0;
                for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
                var /= c;
                const double inv = 1.0 / std::sqrt(var + eps);
                if (wants(2)) {
                    Tensor& gb = gin(2);
                    for (int j = 0; j < c; ++j) gb.data[j] += gi[j];
                }
                if (wants(1)) {
                    Tensor& gg = gin(1);
                    for (int j = 0; j < c; ++j) gg.data[j] += gi[j] * (xi[j] - mu) * inv;
                }
                if (wants(0)) {
                    Tensor& gx = gin(0);
                    double* go = gx.data.data() + static_cast<size_t>(i) * c;
                    double mean_gn = 0.0, mean_gnn = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double nj = (xi[j] - mu) * inv;
                        const double gn = gi[j] * gain.data[j];
                        mean_gn += gn;
                        mean_gnn += gn * nj;
                    }
                    mean_gn /= c;
                    mean_gnn /= c;
                    for (int j = 0; j < c; ++j) {
                        const double nj = (xi[j] - mu) * inv;
                        const double gn = gi[j] * gain.data[j];
                        go[j] += (gn - mean_gn - nj * mean_gnn) * inv;
                    }
                }
            }
            break;
        }
        case Op::gelu: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                const Tensor& x = vin(0);
                for (size_t i = 0; i < gx.data.size(); ++i) {
                    const double v = x.data[i];
                    const double inner = kGeluScale * (v + kGeluCoef * v * v * v);
                    const double t = std::tanh(inner);
                    const double d = 0.5 * (1.0 + t) +
                                     0.5 * v * (1.0 - t * t) * kGeluScale *
                                         (1.0 + 3.0 * kGeluCoef * v * v);
                    gx.data[i] += g.data[i] * d;
                }
            }
            break;
        }
        case Op::cross_entropy: {
            const Tensor& z = vin(0);
            const Tensor* extra = n.inputs.size() > 1 ? &vin(1) : nullptr;
            const int r = z.shape[0], c = z.shape[1];
            const double go = g.data[0] / r;
            for (int i = 0; i < r; ++i) {
                const double* zi = z.data.data() + static_cast<size_t>(i) * c;
                double m = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < c; ++j) m = std::max(m, zi[j]);
                if (extra) m = std::max(m, extra->data[i]);
                double s = 0.0;
                for (int j = 0; j < c; ++j) s += std::exp(zi[j] - m);
                double se = 0.0;
                if (extra) {
                    se = std::exp(extra->data[i] - m);
                    s += se;
                }
                if (wants(0)) {
                    Tensor& gz = gin(0);
                    double* gzi = gz.data.data() + static_cast<size_t>(i) * c;
                    for (int j = 0; j < c; ++j) {
                        const double p = std::exp(zi[j] - m) / s;
                        gzi[j] += go * (p - (j == n.ints[i] ? 1.0 : 0.0));
                    }
                }
                if (extra && wants(1)) gin(1).data[i] += go * (se / s);
            }
            break;
        }
        case Op::mean: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                const double go = g.data[0] / static_cast<double>(gx.numel());
                for (double& v : gx.data) v += go;
            }
            break;
        }
        case Op::scale: {
            if (wants(0)) {
                Tensor& gx = gin(0);
                for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[i] * n.attr;
            }
            break;
        }
    }
}

GradCheckReport grad_check(const std::function<Var(Graph&, std::span<const Var>)>& f,
                           std::span<const Tensor> inputs, double step, double tolerance) {
    std::vector<Tensor> work(inputs.begin(), inputs.end());

    auto eval = [&](bool with_grad, std::vector<Tensor>* grads) {
        Graph g;
        std::vector<Var> leaves;
        leaves.reserve(work.size());
        for (const Tensor& t : work) leaves.push_back(g.leaf(t, with_grad));
        Var out = f(g, leaves);
        const double v = g.value(out).data[0];
        if (with_grad) {
            g.backward(out);
            grads->clear();
            for (Var l : leaves) grads->push_back(g.grad(l));
        }
        return v;
    };

    std::vector<Tensor> analytic;
    eval(true, &analytic);

    GradCheckReport rep;
    for (size_t i = 0; i < work.size(); ++i) {
        for (size_t j = 0; j < work[i].data.size(); ++j) {
            const double orig = work[i].data[j];
            work[i].data[j] = orig + step;
            const double fp = eval(false, nullptr);
            work[i].data[j] = orig - step;
            const double fm = eval(false, nullptr);
            work[i].data[j] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[i].data[j];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_input = static_cast<int>(i);
                rep.worst_coord = j;
            }
        }
    }
    rep.passed = rep.max_rel_error < tolerance;
    return rep;
}

}  // namespace hacl::diff
