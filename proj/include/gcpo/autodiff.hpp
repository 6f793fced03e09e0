#pragma once

// Small reverse-mode tape over scalars.
//
// The surrogate objectives are cheap scalar expressions over a handful of
// per-token log-probabilities; only the network underneath is expensive.
// The tape records the expression once, re-evaluates it for new leaf values,
// and back-propagates d(output)/d(leaf) so the network backward pass can be
// chained in separately.

#include <cmath>
#include <cstdint>
#include <vector>

#include "gcpo/errors.hpp"

namespace gcpo {

class Tape {
 public:
  using Var = int32_t;

  Var leaf(double v = 0.0) { return push(Op::kLeaf, -1, -1, v, 0.0); }
  Var constant(double v) { return push(Op::kConst, -1, -1, v, 0.0); }

  Var add(Var a, Var b) { return push(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return push(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return push(Op::kMul, a, b); }
  Var div(Var a, Var b) { return push(Op::kDiv, a, b); }
  Var add_const(Var a, double c) { return push(Op::kAddC, a, -1, c, 0.0); }
  Var mul_const(Var a, double c) { return push(Op::kMulC, a, -1, c, 0.0); }
  Var neg(Var a) { return mul_const(a, -1.0); }
  Var exp(Var a) { return push(Op::kExp, a, -1); }
  // exp(a) - 1 evaluated without cancellation; keeps exp(d)-d-1 >= 0 when
  // written as expm1(d)-d.
  Var expm1(Var a) { return push(Op::kExpm1, a, -1); }
  Var log(Var a) { return push(Op::kLog, a, -1); }
  Var min(Var a, Var b) { return push(Op::kMin, a, b); }
  Var max(Var a, Var b) { return push(Op::kMax, a, b); }
  // Clamp with constant bounds; gradient 1 on [lo, hi], 0 outside.
  Var clamp(Var a, double lo, double hi) {
    return push(Op::kClamp, a, -1, lo, hi);
  }

  void set_leaf(Var v, double value) { nodes_[v].val = value; }
  double value(Var v) const { return nodes_[v].val; }
  double gradient(Var v) const { return nodes_[v].grad; }
  size_t size() const { return nodes_.size(); }

  // Recomputes every node from current leaf values, in recording order.
  void forward() {
    for (auto& n : nodes_) {
      switch (n.op) {
        case Op::kLeaf:
        case Op::kConst:
          break;
        case Op::kAdd:
          n.val = nodes_[n.a].val + nodes_[n.b].val;
          break;
        case Op::kSub:
          n.val = nodes_[n.a].val - nodes_[n.b].val;
          break;
        case Op::kMul:
          n.val = nodes_[n.a].val * nodes_[n.b].val;
          break;
        case Op::kDiv:
          n.val = nodes_[n.a].val / nodes_[n.b].val;
          break;
        case Op::kAddC:
          n.val = nodes_[n.a].val + n.c0;
          break;
        case Op::kMulC:
          n.val = nodes_[n.a].val * n.c0;
          break;
        case Op::kExp:
          n.val = std::exp(nodes_[n.a].val);
          break;
        case Op::kExpm1:
          n.val = std::expm1(nodes_[n.a].val);
          break;
        case Op::kLog:
          n.val = std::log(nodes_[n.a].val);
          break;
        case Op::kMin:
          n.val = std::min(nodes_[n.a].val, nodes_[n.b].val);
          break;
        case Op::kMax:
          n.val = std::max(nodes_[n.a].val, nodes_[n.b].val);
          break;
        case Op::kClamp:
          n.val = std::min(std::max(nodes_[n.a].val, n.c0), n.c1);
          break;
      }
    }
  }

  // Accumulates d(root)/d(node) into every node's grad slot.
  void backward(Var root) {
    if (root < 0 || static_cast<size_t>(root) >= nodes_.size())
      throw ValidationError("backward: bad root");
    for (auto& n : nodes_) n.grad = 0.0;
    nodes_[root].grad = 1.0;
    for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad == 0.0) continue;
      switch (n.op) {
        case Op::kLeaf:
        case Op::kConst:
          break;
        case Op::kAdd:
          nodes_[n.a].grad += n.grad;
          nodes_[n.b].grad += n.grad;
          break;
        case Op::kSub:
          nodes_[n.a].grad += n.grad;
          nodes_[n.b].grad -= n.grad;
          break;
        case Op::kMul:
          nodes_[n.a].grad += n.grad * nodes_[n.b].val;
          nodes_[n.b].grad += n.grad * nodes_[n.a].val;
          break;
        case Op::kDiv:
          nodes_[n.a].grad += n.grad / nodes_[n.b].val;
          nodes_[n.b].grad -=
              n.grad * n.val / nodes_[n.b].val;
          break;
        case Op::kAddC:
          nodes_[n.a].grad += n.grad;
          break;
        case Op::kMulC:
          nodes_[n.a].grad += n.grad * n.c0;
          break;
        case Op::kExp:
          nodes_[n.a].grad += n.grad * n.val;
          break;
        case Op::kExpm1:
          nodes_[n.a].grad += n.grad * (n.val + 1.0);
          break;
        case Op::kLog:
          nodes_[n.a].grad += n.grad / nodes_[n.a].val;
          break;
        case Op::kMin:
          // Ties route to the first argument.
          if (nodes_[n.a].val <= nodes_[n.b].val)
            nodes_[n.a].grad += n.grad;
          else
            nodes_[n.b].grad += n.grad;
          break;
        case Op::kMax:
          if (nodes_[n.a].val >= nodes_[n.b].val)
            nodes_[n.a].grad += n.grad;
          else
            nodes_[n.b].grad += n.grad;
          break;
        case Op::kClamp:
          if (nodes_[n.a].val >= n.c0 && nodes_[n.a].val <= n.c1)
            nodes_[n.a].grad += n.grad;
          break;
      }
    }
  }

 private:
  enum class Op : uint8_t {
    kLeaf,
    kConst,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kAddC,
    kMulC,
    kExp,
    kExpm1,
    kLog,
    kMin,
    kMax,
    kClamp,
  };

  struct Node {
    Op op;
    Var a, b;
    double c0, c1;
    double val = 0.0;
    double grad = 0.0;
  };

  Var push(Op op, Var a, Var b, double c0 = 0.0, double c1 = 0.0) {
    double val = 0.0;
    if (op == Op::kLeaf || op == Op::kConst) val = c0;
    nodes_.push_back(Node{op, a, b, c0, c1, val, 0.0});
    return static_cast<Var>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace gcpo
