#pragma once
// Causally reweighted surrogate: representation-space projection weights
// (upsilon), reweighted advantages B_i = A_i * upsilon_i, and a second KL
// penalty against a causally corrected per-token reference probability.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "gcpo/errors.hpp"
#include "gcpo/grpo.hpp"
#include "gcpo/loss_graph.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rollout.hpp"

namespace gcpo {

enum class SimilarityMetric { cosine, euclidean, gaussian };
enum class PhiMode { mean, sum };

inline constexpr double kRefProbFloor = 1e-8;

struct CausalConfig {
  double kappa = 0.06;  // weight of the causal KL penalty
  double alpha = 2.0;   // similarity scale
  int m = 2;            // Monte Carlo width per conditioning context
  SimilarityMetric metric = SimilarityMetric::cosine;
  PhiMode phi_mode = PhiMode::mean;
  // Optional lower bound on upsilon; -inf leaves values untouched.
  double upsilon_floor = -std::numeric_limits<double>::infinity();
  // Test hook: pin every upsilon to exactly 1 so the objective reduces to
  // the plain clipped surrogate.
  bool force_upsilon_one = false;

  void validate() const {
    if (!(kappa >= 0.0)) throw ValidationError("kappa must be >= 0");
    if (!(alpha > 0.0)) throw ValidationError("alpha must be > 0");
    if (m < 1) throw ValidationError("m must be >= 1");
  }
};

struct CausalReps {
  std::vector<HiddenRep> z;       // final-token reps of each response alone
  HiddenRep z_bar;                // mean of z
  std::vector<HiddenRep> Z_bar;   // conditional reps from x_i
  std::vector<HiddenRep> Zp_bar;  // collider-averaged reps from {x_{i,j}}
  std::vector<HiddenRep> target;  // Z_bar - Zp_bar + z_bar, per response
};

struct CausalWeights {
  double alpha = 2.0;
  std::vector<double> upsilon;
  std::vector<double> b;  // A_i * upsilon_i
};

struct CausalRefTokens {
  std::vector<std::vector<double>> probs;  // clamped to [1e-8, 1], per (i, j)
  size_t clamp_count = 0;
  double raw_min = std::numeric_limits<double>::infinity();
  double raw_max = -std::numeric_limits<double>::infinity();
};

inline HiddenRep rep_query_baseline(const std::vector<HiddenRep>& z) {
  if (z.size() < 2)
    throw ValidationError("rep_query_baseline needs at least 2 representations");
  const size_t d = z[0].size();
  HiddenRep mean(d, 0.0);
  for (const auto& v : z) {
    if (v.size() != d) throw SizeError("representation dimension mismatch");
    for (size_t c = 0; c < d; ++c) mean[c] += v[c];
  }
  for (double& c : mean) c /= static_cast<double>(z.size());
  return mean;
}

// Mean final-token representation over m sampled continuations of the
// context.  Each sample replays an independent derived stream, so the
// result is a pure function of (snapshot, context, m, seed).
inline HiddenRep rep_conditional(const PolicySnapshot& snapshot,
                                 const LooContext& x, int m, int max_len,
                                 double temperature, uint64_t seed,
                                 GenCounter* counter = nullptr) {
  if (m < 1) throw ValidationError("rep_conditional: m must be >= 1");
  const PolicyParams& p = snapshot.params;
  if (1 + x.tokens.ids.size() + static_cast<size_t>(max_len) >
      static_cast<size_t>(p.dims.max_context))
    throw LengthError("conditioning context of " +
                      std::to_string(x.tokens.ids.size()) +
                      " tokens plus max_len exceeds max_context; reduce n or max_len");
  SeqState base = prefill(p, x.tokens.ids);
  HiddenRep acc(static_cast<size_t>(p.dims.d), 0.0);
  for (int k = 0; k < m; ++k) {
    SeqState st = base;
    Rng rng(derive_seed(seed, Stream::rep_cond, static_cast<uint64_t>(k)));
    HiddenRep rep;
    sample_from_state(p, st, max_len, temperature, rng, &rep);
    if (counter) counter->aux += 1;
    for (size_t c = 0; c < acc.size(); ++c) acc[c] += rep[c];
  }
  for (double& c : acc) c /= static_cast<double>(m);
  return acc;
}

// Mean of rep_conditional over the collider-variant contexts.
inline HiddenRep rep_collider(const PolicySnapshot& snapshot,
                              const std::vector<LooContext>& xs, int m,
                              int max_len, double temperature, uint64_t seed,
                              GenCounter* counter = nullptr) {
  if (xs.empty()) throw ValidationError("rep_collider: no contexts");
  HiddenRep acc;
  for (size_t j = 0; j < xs.size(); ++j) {
    HiddenRep r = rep_conditional(snapshot, xs[j], m, max_len, temperature,
                                  derive_seed(seed, Stream::rep_loo, j), counter);
    if (acc.empty()) acc.assign(r.size(), 0.0);
    for (size_t c = 0; c < acc.size(); ++c) acc[c] += r[c];
  }
  for (double& c : acc) c /= static_cast<double>(xs.size());
  return acc;
}

namespace detail {
inline double l2_norm(const HiddenRep& v) {
  double s = 0.0;
  for (double c : v) s += c * c;
  return std::sqrt(s);
}
}  // namespace detail

// alpha times a similarity in [-1, 1] between the candidate representation
// and its causal target.  Near-zero vectors make the similarity ill-defined
// and score 0, bumping the degeneracy counter.
inline double upsilon(const HiddenRep& z, const HiddenRep& target, double alpha,
                      SimilarityMetric metric = SimilarityMetric::cosine,
                      size_t* degenerate = nullptr) {
  if (z.size() != target.size())
    throw SizeError("upsilon: dimension mismatch");
  const double nz = detail::l2_norm(z);
  const double nt = detail::l2_norm(target);
  if (nz < 1e-12 || nt < 1e-12) {
    if (degenerate) ++*degenerate;
    return 0.0;
  }
  double s = 0.0;
  switch (metric) {
    case SimilarityMetric::cosine: {
      double dot = 0.0;
      for (size_t c = 0; c < z.size(); ++c) dot += z[c] * target[c];
      s = dot / (nz * nt);
      break;
    }
    case SimilarityMetric::euclidean: {
      HiddenRep diff(z.size());
      for (size_t c = 0; c < z.size(); ++c) diff[c] = z[c] - target[c];
      s = 2.0 / (1.0 + detail::l2_norm(diff)) - 1.0;
      break;
    }
    case SimilarityMetric::gaussian: {
      double d2 = 0.0;
      for (size_t c = 0; c < z.size(); ++c)
        d2 += (z[c] - target[c]) * (z[c] - target[c]);
      s = 2.0 * std::exp(-0.5 * d2) - 1.0;
      break;
    }
  }
  s = std::min(1.0, std::max(-1.0, s));
  return alpha * s;
}

inline std::vector<double> causal_advantage(const std::vector<double>& A,
                                            const std::vector<double>& ups) {
  if (A.size() != ups.size())
    throw SizeError("causal_advantage: length mismatch");
  std::vector<double> b(A.size());
  for (size_t i = 0; i < A.size(); ++i) b[i] = A[i] * ups[i];
  return b;
}

// Per-token probability of each response token averaged (or summed) over
// the collider-variant contexts.
inline std::vector<double> phi_token_probs(const PolicyParams& params,
                                           const std::vector<LooContext>& xs,
                                           const TokenSeq& y,
                                           PhiMode mode = PhiMode::mean) {
  if (xs.empty()) throw ValidationError("phi_token_probs: no contexts");
  std::vector<double> acc(y.ids.size(), 0.0);
  for (const auto& x : xs) {
    auto probs = token_probs(params, x.tokens, y);
    for (size_t j = 0; j < acc.size(); ++j) acc[j] += probs[j];
  }
  if (mode == PhiMode::mean)
    for (double& a : acc) a /= static_cast<double>(xs.size());
  return acc;
}

struct RefProb {
  double clamped = 0.0;
  double raw = 0.0;
};

// raw = pi(y | x_i, y_<j) - phi + pi(y | q, y_<j), clamped into [1e-8, 1]
// so the KL's log stays finite.
inline RefProb causal_ref_prob(double pi_xi, double phi_term, double pi_q,
                               size_t* clamp_count = nullptr) {
  RefProb out;
  out.raw = pi_xi - phi_term + pi_q;
  out.clamped = std::min(std::max(out.raw, kRefProbFloor), 1.0);
  if ((out.raw < kRefProbFloor || out.raw > 1.0) && clamp_count) ++*clamp_count;
  return out;
}

// Plain-double evaluation of the causal KL for one group:
// (1/n) sum_i (1/T_i) sum_j kl_token(log ref_ij, theta_logps_ij).
inline double kl_causal_value(const std::vector<std::vector<double>>& ref_probs,
                              const std::vector<std::vector<double>>& theta_logps) {
  if (ref_probs.size() != theta_logps.size())
    throw SizeError("kl_causal_value: group size mismatch");
  if (ref_probs.empty()) throw ValidationError("kl_causal_value: empty group");
  double total = 0.0;
  for (size_t i = 0; i < ref_probs.size(); ++i) {
    if (ref_probs[i].size() != theta_logps[i].size())
      throw SizeError("kl_causal_value: token count mismatch");
    double s = 0.0;
    for (size_t j = 0; j < ref_probs[i].size(); ++j)
      s += kl_token(std::log(ref_probs[i][j]), theta_logps[i][j]);
    total += s / static_cast<double>(ref_probs[i].size());
  }
  return total / static_cast<double>(ref_probs.size());
}

// Everything the objective needs about one group beyond rewards, computed
// once per step under the frozen sampling snapshot.
struct CausalGroupData {
  CausalReps reps;
  CausalWeights weights;  // upsilon filled here; b filled by the objective
  CausalRefTokens ref_tokens;
  std::vector<std::vector<int>> xi_tokens;  // x_i context ids per response
  size_t degenerate_reps = 0;
};

inline CausalGroupData causal_pipeline(const PolicySnapshot& snapshot,
                                       const Group& group,
                                       const ColliderSet& colliders,
                                       const CausalConfig& cfg, int max_len,
                                       double temperature, uint64_t seed,
                                       GenCounter* counter = nullptr) {
  cfg.validate();
  const int n = group.n();
  if (static_cast<int>(group.old_logps.size()) != n)
    throw StateError("causal pipeline needs sampled old log-probs");
  CausalGroupData out;
  out.weights.alpha = cfg.alpha;

  for (int i = 0; i < n; ++i)
    out.reps.z.push_back(final_hidden(snapshot.params, group.responses[i]));
  out.reps.z_bar = rep_query_baseline(out.reps.z);

  for (int i = 0; i < n; ++i) {
    LooContext x_i = build_x_i(group.q, group, colliders, i);
    std::vector<LooContext> xs;
    for (int j = 0; j < n; ++j)
      xs.push_back(build_x_ij(group.q, group, colliders, i, j));

    HiddenRep Zb = rep_conditional(
        snapshot, x_i, cfg.m, max_len, temperature,
        derive_seed(seed, Stream::rep_cond, static_cast<uint64_t>(i)), counter);
    HiddenRep Zpb = rep_collider(
        snapshot, xs, cfg.m, max_len, temperature,
        derive_seed(seed, Stream::rep_loo, static_cast<uint64_t>(i)), counter);
    HiddenRep tgt(Zb.size());
    for (size_t c = 0; c < tgt.size(); ++c)
      tgt[c] = Zb[c] - Zpb[c] + out.reps.z_bar[c];

    double u = cfg.force_upsilon_one
                   ? 1.0
                   : std::max(cfg.upsilon_floor,
                              upsilon(out.reps.z[i], tgt, cfg.alpha, cfg.metric,
                                      &out.degenerate_reps));
    out.weights.upsilon.push_back(u);
    out.reps.Z_bar.push_back(std::move(Zb));
    out.reps.Zp_bar.push_back(std::move(Zpb));
    out.reps.target.push_back(std::move(tgt));

    // Causally corrected reference probability per token, all under the
    // frozen snapshot.  The query-conditioned term reuses the log-probs
    // cached at sampling time.
    const TokenSeq& y = group.responses[i];
    std::vector<std::vector<double>> variant_probs;
    for (const auto& x : xs)
      variant_probs.push_back(token_probs(snapshot.params, x.tokens, y));
    std::vector<double> row(y.ids.size());
    for (size_t j = 0; j < y.ids.size(); ++j) {
      double phi = 0.0;
      for (const auto& vp : variant_probs) phi += vp[j];
      if (cfg.phi_mode == PhiMode::mean) phi /= static_cast<double>(n);
      const double pi_xi = variant_probs[0][j];  // x_{i,0} is x_i itself
      const double pi_q = std::exp(group.old_logps[i][j]);
      RefProb rp = causal_ref_prob(pi_xi, phi, pi_q, &out.ref_tokens.clamp_count);
      row[j] = rp.clamped;
      out.ref_tokens.raw_min = std::min(out.ref_tokens.raw_min, rp.raw);
      out.ref_tokens.raw_max = std::max(out.ref_tokens.raw_max, rp.raw);
    }
    out.ref_tokens.probs.push_back(std::move(row));
    out.xi_tokens.push_back(x_i.tokens.ids);
  }
  return out;
}

struct CausalDiagnostics {
  double upsilon_mean = 0.0;
  double upsilon_min = 0.0;
  double upsilon_max = 0.0;
  double upsilon_neg_frac = 0.0;
  size_t clamp_count = 0;
  double raw_min = std::numeric_limits<double>::infinity();
  double raw_max = -std::numeric_limits<double>::infinity();
  double mean_kl_causal = 0.0;
  size_t degenerate_reps = 0;
};

// Clipped surrogate with upsilon-reweighted advantages minus kappa times
// the causal KL.  With kappa == 0 and all upsilon == 1 this builds exactly
// the same tape as grpo_objective, value and gradient bit for bit.
inline double gcpo_objective(const std::vector<ScoredGroup>& batch,
                             const std::vector<CausalGroupData>& causal,
                             const PolicyParams& params,
                             const PolicyParams& ref,
                             const SurrogateConfig& cfg, double kappa,
                             SurrogateStats* stats = nullptr,
                             CausalDiagnostics* diag = nullptr,
                             std::vector<double>* grad = nullptr) {
  if (!(kappa >= 0.0)) throw ValidationError("kappa must be >= 0");
  if (causal.size() != batch.size())
    throw StateError("causal components missing for the batch");

  LossGraph g;
  std::vector<GroupTerms> terms;
  terms.reserve(batch.size());
  for (size_t gi = 0; gi < batch.size(); ++gi) {
    const auto& sg = batch[gi];
    const auto& cd = causal[gi];
    const size_t n = sg.group.responses.size();
    if (cd.weights.upsilon.size() != n || cd.ref_tokens.probs.size() != n ||
        cd.xi_tokens.size() != n)
      throw StateError("causal components incomplete for a group");
    GroupTerms gt;
    gt.group = &sg.group;
    gt.coeff = causal_advantage(group_advantage(sg.rewards).advantages,
                                cd.weights.upsilon);
    gt.ref_logps = reference_logps(ref, sg.group);
    terms.push_back(std::move(gt));
  }
  BatchSurrogate bs = build_batch_surrogate(g, terms, cfg);

  Tape& t = g.tape();
  std::vector<Tape::Var> klc_vars;
  if (kappa != 0.0) {
    for (size_t gi = 0; gi < batch.size(); ++gi) {
      const auto& sg = batch[gi];
      const auto& cd = causal[gi];
      Tape::Var gsum = -1;
      for (size_t i = 0; i < sg.group.responses.size(); ++i) {
        const TokenSeq& y = sg.group.responses[i];
        if (cd.ref_tokens.probs[i].size() != y.ids.size())
          throw StateError("causal reference token count mismatch");
        const int path = g.add_path(cd.xi_tokens[i], y.ids);
        Tape::Var rsum = -1;
        for (size_t j = 0; j < y.ids.size(); ++j) {
          const Tape::Var lp = g.token_logp(path, static_cast<int>(j));
          const Tape::Var d = t.add_const(t.mul_const(lp, -1.0),
                                          std::log(cd.ref_tokens.probs[i][j]));
          const Tape::Var kl = t.sub(t.expm1(d), d);
          rsum = (rsum < 0) ? kl : t.add(rsum, kl);
        }
        Tape::Var scaled =
            t.mul_const(rsum, 1.0 / static_cast<double>(y.ids.size()));
        gsum = (gsum < 0) ? scaled : t.add(gsum, scaled);
      }
      klc_vars.push_back(t.mul_const(
          gsum, 1.0 / static_cast<double>(sg.group.responses.size())));
    }
    Tape::Var bsum = -1;
    for (size_t gi = 0; gi < batch.size(); ++gi) {
      Tape::Var v = t.sub(bs.group_vars[gi], t.mul_const(klc_vars[gi], kappa));
      bsum = (bsum < 0) ? v : t.add(bsum, v);
    }
    g.set_root(t.mul_const(bsum, 1.0 / static_cast<double>(batch.size())));
  } else {
    g.set_root(bs.root);
  }

  const double val = grad ? g.value_and_grad(params, *grad) : g.value(params);
  collect_surrogate_stats(g, bs, stats);
  if (stats) stats->objective = val;

  if (diag) {
    *diag = CausalDiagnostics{};
    diag->upsilon_min = std::numeric_limits<double>::infinity();
    diag->upsilon_max = -std::numeric_limits<double>::infinity();
    size_t count = 0, neg = 0;
    for (const auto& cd : causal) {
      for (double u : cd.weights.upsilon) {
        diag->upsilon_mean += u;
        diag->upsilon_min = std::min(diag->upsilon_min, u);
        diag->upsilon_max = std::max(diag->upsilon_max, u);
        if (u < 0.0) ++neg;
        ++count;
      }
      diag->clamp_count += cd.ref_tokens.clamp_count;
      diag->raw_min = std::min(diag->raw_min, cd.ref_tokens.raw_min);
      diag->raw_max = std::max(diag->raw_max, cd.ref_tokens.raw_max);
      diag->degenerate_reps += cd.degenerate_reps;
    }
    if (count) {
      diag->upsilon_mean /= static_cast<double>(count);
      diag->upsilon_neg_frac = static_cast<double>(neg) / static_cast<double>(count);
    }
    if (kappa != 0.0) {
      for (Tape::Var v : klc_vars) diag->mean_kl_causal += g.node_value(v);
      diag->mean_kl_causal /= static_cast<double>(klc_vars.size());
    }
  }
  return val;
}

}  // namespace gcpo
