#pragma once
// Group-normalized clipped surrogate objective with a token-level KL
// penalty against a frozen reference policy.

#include <cmath>
#include <cstddef>
#include <vector>

#include "gcpo/errors.hpp"
#include "gcpo/loss_graph.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rollout.hpp"

namespace gcpo {

struct AdvantageRecord {
  std::vector<double> rewards;
  std::vector<double> advantages;
  double group_mean = 0.0;
  double group_std = 0.0;
};

struct SurrogateConfig {
  double eps = 0.2;   // clip half-width on the importance ratio
  double beta = 0.04; // weight of the token-level reference KL

  void validate() const {
    if (!(eps > 0.0 && eps < 1.0))
      throw ValidationError("surrogate eps must lie in (0, 1)");
    if (!(beta >= 0.0)) throw ValidationError("surrogate beta must be >= 0");
  }
};

// Centers and scales rewards within one group using the population std.
// Near-constant groups carry no preference signal and get all-zero
// advantages instead of a divide-by-epsilon blowup.
inline AdvantageRecord group_advantage(const std::vector<double>& rewards) {
  if (rewards.size() < 2)
    throw ValidationError("group_advantage needs at least 2 rewards");
  AdvantageRecord rec;
  rec.rewards = rewards;
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  rec.group_mean = mean;
  rec.group_std = std::sqrt(var);
  rec.advantages.assign(rewards.size(), 0.0);
  if (rec.group_std > 1e-8) {
    for (size_t i = 0; i < rewards.size(); ++i)
      rec.advantages[i] = (rewards[i] - mean) / rec.group_std;
  }
  return rec;
}

// exp(logp_theta - logp_old), formed in log space.
inline double importance_ratio(double logp_theta, double logp_old) {
  if (!std::isfinite(logp_theta) || !std::isfinite(logp_old))
    throw NumericError("importance_ratio: non-finite log-prob");
  return std::exp(logp_theta - logp_old);
}

// min(R*A, clip(R, 1-eps, 1+eps)*A).
inline double clipped_term(double R, double A, double eps) {
  const double clipped = std::min(std::max(R, 1.0 - eps), 1.0 + eps);
  return std::min(R * A, clipped * A);
}

// r - log r - 1 with r = exp(logp_ref - logp_theta), written as
// expm1(d) - d so the value is nonnegative under floating point.
inline double kl_token(double logp_ref, double logp_theta) {
  const double d = logp_ref - logp_theta;
  return std::expm1(d) - d;
}

// Tape handles for one generated token's surrogate pieces; kept so callers
// can read clip decisions and KL values off the evaluated graph.
struct TokenVars {
  LossGraph::Var unclipped = -1; // R * coeff
  LossGraph::Var term = -1;      // min(R*coeff, clip(R)*coeff)
  LossGraph::Var kl = -1;        // expm1(d) - d against the reference
};

// One group's contribution to the batch surrogate: the response paths, the
// per-response ratio coefficients (advantages, possibly reweighted), and the
// reference log-probs each token's KL is measured against.
struct GroupTerms {
  const Group* group = nullptr;
  std::vector<double> coeff;
  std::vector<std::vector<double>> ref_logps;
};

struct BatchSurrogate {
  LossGraph::Var root = -1;                // mean over groups
  std::vector<LossGraph::Var> group_vars;  // per-group surrogate value
  std::vector<std::vector<int>> path_ids;  // [group][response] -> graph path
  std::vector<TokenVars> tokens;           // flattened over groups/tokens
};

inline std::vector<std::vector<double>> reference_logps(
    const PolicyParams& ref, const Group& group) {
  std::vector<std::vector<double>> out;
  out.reserve(group.responses.size());
  for (const auto& y : group.responses) out.push_back(log_prob(ref, group.q, y));
  return out;
}

// Builds mean_groups (1/n) sum_i (1/T_i) sum_j
//   [ min(R_ij c_i, clip(R_ij) c_i) - beta * kl_ij ]
// on the graph.  Both objectives assemble their policy term through this one
// function so that equal coefficients yield an identical tape.
inline BatchSurrogate build_batch_surrogate(LossGraph& g,
                                            const std::vector<GroupTerms>& terms,
                                            const SurrogateConfig& cfg) {
  cfg.validate();
  if (terms.empty()) throw ValidationError("surrogate needs at least one group");
  Tape& t = g.tape();
  BatchSurrogate out;
  for (const auto& gt : terms) {
    const Group& grp = *gt.group;
    const int n = grp.n();
    if (n < 2) throw ValidationError("surrogate group needs at least 2 responses");
    if (static_cast<int>(grp.old_logps.size()) != n)
      throw StateError("old log-probs missing; responses must come from a sampling snapshot");
    if (static_cast<int>(gt.coeff.size()) != n ||
        static_cast<int>(gt.ref_logps.size()) != n)
      throw SizeError("surrogate coefficient or reference size mismatch");

    std::vector<int> paths;
    Tape::Var group_sum = -1;
    for (int i = 0; i < n; ++i) {
      const TokenSeq& y = grp.responses[i];
      if (y.ids.empty()) throw ValidationError("empty response in group");
      if (grp.old_logps[i].size() != y.ids.size() ||
          gt.ref_logps[i].size() != y.ids.size())
        throw SizeError("per-token log-prob length mismatch");
      const int path = g.add_path(grp.q.ids, y.ids);
      paths.push_back(path);

      Tape::Var resp_sum = -1;
      for (size_t j = 0; j < y.ids.size(); ++j) {
        const Tape::Var lp = g.token_logp(path, static_cast<int>(j));
        TokenVars tv;
        const Tape::Var ratio = t.exp(t.add_const(lp, -grp.old_logps[i][j]));
        tv.unclipped = t.mul_const(ratio, gt.coeff[i]);
        // Ties in min route the gradient through the unclipped ratio, which
        // is the correct branch when the ratio sits inside the clip range.
        tv.term = t.min(tv.unclipped,
                        t.mul_const(t.clamp(ratio, 1.0 - cfg.eps, 1.0 + cfg.eps),
                                    gt.coeff[i]));
        const Tape::Var d =
            t.add_const(t.mul_const(lp, -1.0), gt.ref_logps[i][j]);
        tv.kl = t.sub(t.expm1(d), d);
        Tape::Var tok = t.sub(tv.term, t.mul_const(tv.kl, cfg.beta));
        resp_sum = (resp_sum < 0) ? tok : t.add(resp_sum, tok);
        out.tokens.push_back(tv);
      }
      Tape::Var scaled =
          t.mul_const(resp_sum, 1.0 / static_cast<double>(y.ids.size()));
      group_sum = (group_sum < 0) ? scaled : t.add(group_sum, scaled);
    }
    Tape::Var group_mean = t.mul_const(group_sum, 1.0 / static_cast<double>(n));
    out.group_vars.push_back(group_mean);
    out.path_ids.push_back(std::move(paths));
  }
  Tape::Var batch_sum = -1;
  for (Tape::Var gv : out.group_vars)
    batch_sum = (batch_sum < 0) ? gv : t.add(batch_sum, gv);
  out.root =
      t.mul_const(batch_sum, 1.0 / static_cast<double>(out.group_vars.size()));
  return out;
}

struct ScoredGroup {
  Group group;
  std::vector<double> rewards;
};

struct SurrogateStats {
  double objective = 0.0;
  double mean_kl = 0.0;        // token-level reference KL, batch mean
  double clip_fraction = 0.0;  // tokens where clipping changed the min
  size_t token_count = 0;
};

// Reads token-level diagnostics off an evaluated graph.
inline void collect_surrogate_stats(const LossGraph& g, const BatchSurrogate& bs,
                                    SurrogateStats* stats) {
  if (!stats) return;
  stats->token_count = bs.tokens.size();
  double kl_sum = 0.0;
  size_t clipped = 0;
  for (const auto& tv : bs.tokens) {
    kl_sum += g.node_value(tv.kl);
    if (g.node_value(tv.term) < g.node_value(tv.unclipped)) ++clipped;
  }
  const double denom = bs.tokens.empty() ? 1.0 : static_cast<double>(bs.tokens.size());
  stats->mean_kl = kl_sum / denom;
  stats->clip_fraction = static_cast<double>(clipped) / denom;
}

// Clipped-ratio surrogate averaged over the batch, maximized by the trainer.
// Advantages are group-normalized rewards and enter as constants; gradients
// flow only through the ratios and the KL term.  Writes the exact gradient
// into grad when given (grad must be zero-initialized, size param_count).
inline double grpo_objective(const std::vector<ScoredGroup>& batch,
                             const PolicyParams& params,
                             const PolicyParams& ref,
                             const SurrogateConfig& cfg,
                             SurrogateStats* stats = nullptr,
                             std::vector<double>* grad = nullptr) {
  LossGraph g;
  std::vector<GroupTerms> terms;
  terms.reserve(batch.size());
  for (const auto& sg : batch) {
    GroupTerms gt;
    gt.group = &sg.group;
    gt.coeff = group_advantage(sg.rewards).advantages;
    gt.ref_logps = reference_logps(ref, sg.group);
    terms.push_back(std::move(gt));
  }
  BatchSurrogate bs = build_batch_surrogate(g, terms, cfg);
  g.set_root(bs.root);
  const double val = grad ? g.value_and_grad(params, *grad) : g.value(params);
  collect_surrogate_stats(g, bs, stats);
  if (stats) stats->objective = val;
  return val;
}

}  // namespace gcpo
