#pragma once

// Differentiable scalar losses over a policy.
//
// A LossGraph owns a scalar tape plus a list of scored paths (context,
// continuation).  Tape leaves may be bound to per-token log-probabilities of
// a path's realized tokens, or directly to parameter coordinates.  Gradients
// flow tape -> per-token coefficients -> network backward.

#include <vector>

#include "gcpo/autodiff.hpp"
#include "gcpo/errors.hpp"
#include "gcpo/policy.hpp"

namespace gcpo {

class LossGraph {
 public:
  using Var = Tape::Var;

  Tape& tape() { return tape_; }

  int add_path(std::vector<int> ctx, std::vector<int> cont) {
    paths_.push_back(Path{std::move(ctx), std::move(cont), {}});
    paths_.back().token_vars.assign(paths_.back().cont.size(), -1);
    return static_cast<int>(paths_.size()) - 1;
  }

  size_t path_count() const { return paths_.size(); }
  size_t path_len(int path) const { return paths_[path].cont.size(); }

  // Leaf carrying log pi_theta(cont[j] | ctx, cont[<j]) of the given path.
  Var token_logp(int path, int j) {
    auto& pv = paths_.at(path).token_vars;
    if (j < 0 || static_cast<size_t>(j) >= pv.size())
      throw ValidationError("token_logp: token index out of range");
    if (pv[j] < 0) pv[j] = tape_.leaf();
    return pv[j];
  }

  // Leaf carrying the raw parameter coordinate w[index].
  Var param(size_t index) {
    param_leaves_.push_back({index, tape_.leaf()});
    return param_leaves_.back().var;
  }

  void set_root(Var v) { root_ = v; }
  Var root() const { return root_; }

  // Value of a non-root tape node after the last evaluation (for metrics).
  double node_value(Var v) const { return tape_.value(v); }

  // Evaluates the loss at the given parameters.  No gradient work; usable
  // as a finite-difference oracle since it recomputes the path forwards.
  double value(const PolicyParams& p) {
    if (root_ < 0) throw StateError("loss graph has no root");
    for (auto& path : paths_) {
      if (!needs_forward(path)) continue;
      auto fwd = policy_score_path(p, path.ctx, path.cont, nullptr);
      bind(path, fwd.cont_logps);
    }
    for (auto& pl : param_leaves_) tape_.set_leaf(pl.var, p.w.at(pl.index));
    tape_.forward();
    return tape_.value(root_);
  }

  // Evaluates the loss and accumulates its exact gradient into grad, which
  // must be zero-initialized by the caller (size = param_count).
  double value_and_grad(const PolicyParams& p, std::vector<double>& grad) {
    if (root_ < 0) throw StateError("loss graph has no root");
    if (grad.size() != p.dims.param_count())
      throw SizeError("value_and_grad: gradient buffer size mismatch");
    std::vector<PathForward> fwds(paths_.size());
    std::vector<ForwardCache> caches;
    caches.reserve(paths_.size());
    for (size_t i = 0; i < paths_.size(); ++i) {
      caches.emplace_back(p.dims);
      if (!needs_forward(paths_[i])) continue;
      fwds[i] = policy_score_path(p, paths_[i].ctx, paths_[i].cont, &caches[i]);
      bind(paths_[i], fwds[i].cont_logps);
    }
    for (auto& pl : param_leaves_) tape_.set_leaf(pl.var, p.w.at(pl.index));
    tape_.forward();
    double loss = tape_.value(root_);
    if (!std::isfinite(loss)) throw NumericError("loss is not finite");
    tape_.backward(root_);
    std::vector<double> coef;
    for (size_t i = 0; i < paths_.size(); ++i) {
      const auto& path = paths_[i];
      if (!needs_forward(path)) continue;
      coef.assign(path.cont.size(), 0.0);
      bool any = false;
      for (size_t j = 0; j < path.cont.size(); ++j) {
        if (path.token_vars[j] >= 0) {
          coef[j] = tape_.gradient(path.token_vars[j]);
          any |= coef[j] != 0.0;
        }
      }
      if (!any) continue;
      policy_backward_path(p, fwds[i], caches[i], coef, grad);
    }
    for (auto& pl : param_leaves_) grad.at(pl.index) += tape_.gradient(pl.var);
    return loss;
  }

 private:
  struct Path {
    std::vector<int> ctx, cont;
    std::vector<Var> token_vars;
  };
  struct ParamLeaf {
    size_t index;
    Var var;
  };

  static bool needs_forward(const Path& path) {
    for (auto v : path.token_vars)
      if (v >= 0) return true;
    return false;
  }

  void bind(const Path& path, const std::vector<double>& logps) {
    for (size_t j = 0; j < path.token_vars.size(); ++j)
      if (path.token_vars[j] >= 0) tape_.set_leaf(path.token_vars[j], logps[j]);
  }

  Tape tape_;
  std::vector<Path> paths_;
  std::vector<ParamLeaf> param_leaves_;
  Var root_ = -1;
};

}  // namespace gcpo
