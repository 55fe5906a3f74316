#include "macfm/tape.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "macfm/errors.hpp"

namespace macfm::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor2& t) { return MapC(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
Map view(Tensor2& t) { return Map(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void accumulate(Tensor2& into, const Tensor2& delta) {
    if (into.size() == 0) {
        into = delta;
        return;
    }
    double* dst = into.data();
    const double* src = delta.data();
    for (std::size_t i = 0; i < into.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var Tape::push(Node node) {
    m_nodes.push_back(std::move(node));
    return Var{static_cast<std::int32_t>(m_nodes.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= m_nodes.size()) {
        throw std::out_of_range("Tape: invalid variable id " + std::to_string(v.id));
    }
    return m_nodes[static_cast<std::size_t>(v.id)];
}

bool Tape::any_grad(Var a, Var b) const { return node(a).requires_grad || node(b).requires_grad; }

const Tensor2& Tape::value(Var v) const {
    const Node& n = node(v);
    return n.external ? *n.external : n.value;
}

double Tape::scalar(Var v) const {
    const Tensor2& t = value(v);
    if (t.size() != 1) throw DimensionError("Tape::scalar: expected 1x1, got " + t.shape_string());
    return t[0];
}

Var Tape::constant(Tensor2 value) { return push(Node{.op = Op::leaf, .value = std::move(value)}); }

Var Tape::constant_ref(const Tensor2& value) { return push(Node{.op = Op::leaf, .external = &value}); }

Var Tape::variable_ref(const Tensor2& value) {
    return push(Node{.op = Op::leaf, .external = &value, .requires_grad = true});
}

Var Tape::variable(Tensor2 value) {
    return push(Node{.op = Op::leaf, .value = std::move(value), .requires_grad = true});
}

Var Tape::matmul(Var a, Var b) {
    const Tensor2& A = value(a);
    const Tensor2& B = value(b);
    if (A.cols() != B.rows()) {
        throw DimensionError("matmul: inner dimensions differ, " + A.shape_string() + " * " + B.shape_string());
    }
    Tensor2 out(A.rows(), B.cols());
    view(out).noalias() = view(A) * view(B);
    return push(Node{.op = Op::matmul, .inputs = {a.id, b.id}, .value = std::move(out), .requires_grad = any_grad(a, b)});
}

Var Tape::add(Var a, Var b) {
    const Tensor2& A = value(a);
    const Tensor2& B = value(b);
    require_same_shape(A, B, "add");
    Tensor2 out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push(Node{.op = Op::add, .inputs = {a.id, b.id}, .value = std::move(out), .requires_grad = any_grad(a, b)});
}

Var Tape::sub(Var a, Var b) {
    const Tensor2& A = value(a);
    const Tensor2& B = value(b);
    require_same_shape(A, B, "sub");
    Tensor2 out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    return push(Node{.op = Op::sub, .inputs = {a.id, b.id}, .value = std::move(out), .requires_grad = any_grad(a, b)});
}

Var Tape::hadamard(Var a, Var b) {
    const Tensor2& A = value(a);
    const Tensor2& B = value(b);
    require_same_shape(A, B, "hadamard");
    Tensor2 out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push(
        Node{.op = Op::hadamard, .inputs = {a.id, b.id}, .value = std::move(out), .requires_grad = any_grad(a, b)});
}

Var Tape::scale(Var a, double factor) {
    Tensor2 out = value(a);
    for (double& x : out.flat()) x *= factor;
    return push(Node{.op = Op::scale,
                     .inputs = {a.id, -1},
                     .value = std::move(out),
                     .factor = factor,
                     .requires_grad = node(a).requires_grad});
}

Var Tape::silu(Var a) {
    Tensor2 out = value(a);
    for (double& x : out.flat()) x = x * sigmoid(x);
    return push(Node{.op = Op::silu, .inputs = {a.id, -1}, .value = std::move(out), .requires_grad = node(a).requires_grad});
}

Var Tape::sum_sq_masked(Var x, Var m) {
    const Tensor2& X = value(x);
    const Tensor2& M = value(m);
    require_same_shape(X, M, "sum_sq_masked");
    double acc = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double v = X[i] * M[i];
        acc += v * v;
    }
    return push(Node{.op = Op::sum_sq_masked,
                     .inputs = {x.id, m.id},
                     .value = Tensor2(1, 1, acc),
                     .requires_grad = node(x).requires_grad});
}

Var Tape::broadcast_add_row(Var a, Var row) {
    const Tensor2& A = value(a);
    const Tensor2& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) {
        throw DimensionError("broadcast_add_row: row " + R.shape_string() + " does not broadcast over " +
                             A.shape_string());
    }
    Tensor2 out = A;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double* dst = out.row_span(r).data();
        for (std::size_t c = 0; c < out.cols(); ++c) dst[c] += R[c];
    }
    return push(Node{.op = Op::broadcast_add_row,
                     .inputs = {a.id, row.id},
                     .value = std::move(out),
                     .requires_grad = any_grad(a, row)});
}

void Tape::backward(Var out) {
    const Tensor2& seed = value(out);
    if (seed.size() != 1) throw DimensionError("backward: output must be 1x1, got " + seed.shape_string());

    m_grads.assign(m_nodes.size(), Tensor2{});
    m_grads[static_cast<std::size_t>(out.id)] = Tensor2(1, 1, 1.0);

    for (std::int32_t id = out.id; id >= 0; --id) {
        const Node& n = m_nodes[static_cast<std::size_t>(id)];
        Tensor2& g = m_grads[static_cast<std::size_t>(id)];
        if (n.op == Op::leaf || !n.requires_grad || g.size() == 0) continue;

        const auto wants = [&](int slot) {
            const std::int32_t in = n.inputs[static_cast<std::size_t>(slot)];
            return in >= 0 && m_nodes[static_cast<std::size_t>(in)].requires_grad;
        };
        const auto send = [&](int slot, const Tensor2& delta) {
            accumulate(m_grads[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(slot)])], delta);
        };
        const Tensor2& a = value(Var{n.inputs[0]});

        switch (n.op) {
            case Op::matmul: {
                const Tensor2& b = value(Var{n.inputs[1]});
                if (wants(0)) {
                    Tensor2 da(a.rows(), a.cols());
                    view(da).noalias() = view(g) * view(b).transpose();
                    send(0, da);
                }
                if (wants(1)) {
                    Tensor2 db(b.rows(), b.cols());
                    view(db).noalias() = view(a).transpose() * view(g);
                    send(1, db);
                }
                break;
            }
            case Op::add:
                if (wants(0)) send(0, g);
                if (wants(1)) send(1, g);
                break;
            case Op::sub:
                if (wants(0)) send(0, g);
                if (wants(1)) {
                    Tensor2 neg = g;
                    for (double& x : neg.flat()) x = -x;
                    send(1, neg);
                }
                break;
            case Op::hadamard: {
                const Tensor2& b = value(Var{n.inputs[1]});
                if (wants(0)) {
                    Tensor2 da = g;
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] *= b[i];
                    send(0, da);
                }
                if (wants(1)) {
                    Tensor2 db = g;
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] *= a[i];
                    send(1, db);
                }
                break;
            }
            case Op::scale: {
                Tensor2 da = g;
                for (double& x : da.flat()) x *= n.factor;
                send(0, da);
                break;
            }
            case Op::silu: {
                Tensor2 da = g;
                for (std::size_t i = 0; i < da.size(); ++i) {
                    const double s = sigmoid(a[i]);
                    da[i] *= s * (1.0 + a[i] * (1.0 - s));
                }
                send(0, da);
                break;
            }
            case Op::sum_sq_masked: {
                const Tensor2& m = value(Var{n.inputs[1]});
                if (wants(0)) {
                    Tensor2 da(a.rows(), a.cols());
                    const double upstream = g[0];
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] = 2.0 * upstream * a[i] * m[i] * m[i];
                    send(0, da);
                }
                break;
            }
            case Op::broadcast_add_row:
                if (wants(0)) send(0, g);
                if (wants(1)) {
                    Tensor2 dr(1, g.cols());
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        for (std::size_t c = 0; c < g.cols(); ++c) dr[c] += g(r, c);
                    }
                    send(1, dr);
                }
                break;
            case Op::leaf:
                break;
        }
    }

    for (std::size_t i = 0; i < m_nodes.size(); ++i) {
        if (m_nodes[i].requires_grad && m_grads[i].size() == 0) {
            const Tensor2& v = value(Var{static_cast<std::int32_t>(i)});
            m_grads[i] = Tensor2(v.rows(), v.cols());
        }
    }
}

const Tensor2& Tape::grad(Var v) const {
    if (!node(v).requires_grad) throw std::logic_error("Tape::grad: node does not require gradients");
    if (static_cast<std::size_t>(v.id) >= m_grads.size()) throw std::logic_error("Tape::grad: call backward() first");
    return m_grads[static_cast<std::size_t>(v.id)];
}

}  // namespace macfm::ad
