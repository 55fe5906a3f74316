#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "macfm/tensor.hpp"

namespace macfm::ad {

/// Handle to a node recorded on a Tape.
struct Var {
    std::int32_t id = -1;
};

enum class Op : std::uint8_t {
    leaf,
    matmul,
    add,
    sub,
    hadamard,
    scale,
    silu,
    sum_sq_masked,
    broadcast_add_row,
};

/// Dynamic reverse-mode tape over Tensor2 values.
///
/// Nodes are appended in evaluation order, so the record list is already
/// topologically sorted and backward() walks it once in reverse. Leaves may
/// either own their value or reference an external tensor (model parameters),
/// which must outlive the tape.
class Tape {
public:
    Var constant(Tensor2 value);
    Var constant_ref(const Tensor2& value);
    /// Leaf whose gradient is collected by backward().
    Var variable_ref(const Tensor2& value);
    Var variable(Tensor2 value);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double factor);
    Var silu(Var a);
    /// sum((x ⊙ m)^2) as a 1x1 tensor. Gradient flows to x only.
    Var sum_sq_masked(Var x, Var m);
    /// a (n x k) plus row (1 x k) added to every row.
    Var broadcast_add_row(Var a, Var row);

    const Tensor2& value(Var v) const;
    double scalar(Var v) const;
    bool requires_grad(Var v) const { return m_nodes.at(v.id).requires_grad; }
    std::size_t size() const { return m_nodes.size(); }

    /// Seeds d(out)/d(out) = 1 and accumulates gradients of every node that
    /// requires them. Previous gradients are discarded.
    void backward(Var out);
    /// Gradient of the last backward() output w.r.t. v (zeros if unreachable).
    const Tensor2& grad(Var v) const;

private:
    struct Node {
        Op op = Op::leaf;
        std::array<std::int32_t, 2> inputs{-1, -1};
        Tensor2 value;
        const Tensor2* external = nullptr;
        double factor = 0.0;
        bool requires_grad = false;
    };

    Var push(Node node);
    const Node& node(Var v) const;
    bool any_grad(Var a, Var b) const;

    std::vector<Node> m_nodes;
    std::vector<Tensor2> m_grads;
};

}  // namespace macfm::ad
