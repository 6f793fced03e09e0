#pragma once

// Small causal token policy.
//
// Architecture: token embedding + fixed sinusoidal position signal, then L
// pre-norm blocks (single-head causal self-attention, then a ReLU MLP of
// width 4d, both with residuals), then a linear output projection.  The
// output projection starts at zero so an untrained policy is exactly uniform.
//
// Everything runs in double precision, but parameter values are kept
// representable in 32-bit floats (init and optimizer round through float),
// which makes the f32 checkpoint round-trip bit-exact.
//
// There is exactly one forward implementation: an incremental step over a
// growing key/value state.  Sampling, scoring and the cached pass used by
// the backward all share it, so a quantity computed twice is computed
// identically.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gcpo/errors.hpp"
#include "gcpo/rng.hpp"
#include "gcpo/vocab.hpp"

namespace gcpo {

struct PolicyDims {
  int d = 0;
  int layers = 0;
  int vocab_size = 0;
  int max_context = 256;
  uint64_t vocab_hash = 0;

  size_t block_params() const { return 12ull * d * d; }
  size_t param_count() const {
    return 2ull * vocab_size * d + static_cast<size_t>(layers) * block_params();
  }
  size_t embed_offset() const { return 0; }
  size_t block_offset(int b) const {
    return static_cast<size_t>(vocab_size) * d + b * block_params();
  }
  size_t out_offset() const { return block_offset(layers); }
};

struct PolicyParams {
  PolicyDims dims;
  std::vector<double> w;

  const double* embed() const { return w.data() + dims.embed_offset(); }
  const double* block(int b) const { return w.data() + dims.block_offset(b); }
  const double* out_proj() const { return w.data() + dims.out_offset(); }
};

// Within a block the weight order is: Wq, Wk, Wv, Wo (each d x d, row-major,
// output index major), then W1 (4d x d), then W2 (d x 4d).
namespace blockw {
inline size_t wq(int) { return 0; }
inline size_t wk(int d) { return 1ull * d * d; }
inline size_t wv(int d) { return 2ull * d * d; }
inline size_t wo(int d) { return 3ull * d * d; }
inline size_t w1(int d) { return 4ull * d * d; }
inline size_t w2(int d) { return 8ull * d * d; }
}  // namespace blockw

struct PolicySnapshot {
  PolicyParams params;
  uint64_t version = 0;
};

using HiddenRep = std::vector<double>;

inline double f32_round(double x) {
  return static_cast<double>(static_cast<float>(x));
}

inline PolicyParams init_policy(int d, int layers, const Vocab& vocab,
                                uint64_t seed, int max_context = 256) {
  if (d < 1 || layers < 1) throw ValidationError("init_policy: d and L must be >= 1");
  if (vocab.size() < 4) throw ValidationError("init_policy: vocab too small");
  if (max_context < 2) throw ValidationError("init_policy: max_context too small");
  PolicyParams p;
  p.dims = PolicyDims{d, layers, vocab.size(), max_context, vocab.content_hash()};
  p.w.assign(p.dims.param_count(), 0.0);
  Rng rng(derive_seed(seed, Stream::init));
  double scale = 0.5 / std::sqrt(static_cast<double>(d));
  size_t out_off = p.dims.out_offset();
  for (size_t i = 0; i < out_off; ++i) p.w[i] = f32_round(rng.normal() * scale);
  return p;
}

namespace detail {

inline void matvec(const double* W, const double* x, double* y, int rows,
                   int cols) {
  for (int i = 0; i < rows; ++i) {
    const double* row = W + static_cast<size_t>(i) * cols;
    double acc = 0.0;
    for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

inline void matvec_t_acc(const double* W, const double* x, double* y, int rows,
                         int cols) {
  for (int i = 0; i < rows; ++i) {
    const double* row = W + static_cast<size_t>(i) * cols;
    double c = x[i];
    for (int j = 0; j < cols; ++j) y[j] += row[j] * c;
  }
}

inline void outer_acc(const double* a, const double* b, double* W, int rows,
                      int cols) {
  for (int i = 0; i < rows; ++i) {
    double c = a[i];
    double* row = W + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) row[j] += c * b[j];
  }
}

constexpr double kNormEps = 1e-5;

inline void rmsnorm(const double* x, double* y, int d) {
  double ss = 0.0;
  for (int i = 0; i < d; ++i) ss += x[i] * x[i];
  double r = 1.0 / std::sqrt(ss / d + kNormEps);
  for (int i = 0; i < d; ++i) y[i] = x[i] * r;
}

inline void rmsnorm_backward(const double* x, const double* dy, double* dx_acc,
                             int d) {
  double ss = 0.0, dot = 0.0;
  for (int i = 0; i < d; ++i) {
    ss += x[i] * x[i];
    dot += dy[i] * x[i];
  }
  double r = 1.0 / std::sqrt(ss / d + kNormEps);
  double k = r * r * r * dot / d;
  for (int i = 0; i < d; ++i) dx_acc[i] += r * dy[i] - k * x[i];
}

inline double pos_signal(int pos, int i, int d) {
  double expo = static_cast<double>(2 * (i / 2)) / d;
  double freq = std::pow(10000.0, -expo);
  double angle = pos * freq;
  return (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

}  // namespace detail

// Growing key/value state for one sequence.  Copyable; a copy extends
// independently, which lets callers share a common prefix cheaply.
struct SeqState {
  int len = 0;
  // keys[b] and vals[b] hold len * d doubles.
  std::vector<std::vector<double>> keys, vals;
  std::vector<double> last_hidden;

  explicit SeqState(const PolicyDims& dims)
      : keys(dims.layers), vals(dims.layers), last_hidden(dims.d, 0.0) {}
};

// Per-position activation record kept only when a backward pass will follow.
struct ForwardCache {
  int d = 0, layers = 0;
  int positions = 0;
  std::vector<int> tokens;
  // Per block, per position: input to the block, normed input, query vector,
  // attention row (ragged), attention output, post-attention stream, normed
  // post-attention stream, MLP hidden (post ReLU).
  std::vector<std::vector<double>> x_in, a_norm, q_vec, att, u_vec, x_mid,
      b_norm, m1;
  std::vector<double> h_final;  // positions * d

  ForwardCache(const PolicyDims& dims)
      : d(dims.d),
        layers(dims.layers),
        x_in(dims.layers),
        a_norm(dims.layers),
        q_vec(dims.layers),
        att(dims.layers),
        u_vec(dims.layers),
        x_mid(dims.layers),
        b_norm(dims.layers),
        m1(dims.layers) {}
};

// Advances the state by one token.  The residual stream after the final
// block lands in st.last_hidden; logits are a separate matvec on demand.
inline void policy_step(const PolicyParams& p, int token, SeqState& st,
                        ForwardCache* cache = nullptr) {
  const int d = p.dims.d;
  const int dm = 4 * d;
  if (token < 0 || token >= p.dims.vocab_size)
    throw ValidationError("policy_step: token id out of range");
  if (st.len + 1 > p.dims.max_context)
    throw LengthError("policy_step: sequence exceeds max_context");
  const int pos = st.len;

  std::vector<double> x(d), a(d), q(d), k(d), v(d), u(d), bn(d), m1(dm), m2(d);
  const double* emb = p.embed() + static_cast<size_t>(token) * d;
  for (int i = 0; i < d; ++i) x[i] = emb[i] + detail::pos_signal(pos, i, d);

  for (int b = 0; b < p.dims.layers; ++b) {
    const double* W = p.block(b);
    if (cache) cache->x_in[b].insert(cache->x_in[b].end(), x.begin(), x.end());
    detail::rmsnorm(x.data(), a.data(), d);
    detail::matvec(W + blockw::wq(d), a.data(), q.data(), d, d);
    detail::matvec(W + blockw::wk(d), a.data(), k.data(), d, d);
    detail::matvec(W + blockw::wv(d), a.data(), v.data(), d, d);
    auto& K = st.keys[b];
    auto& V = st.vals[b];
    K.insert(K.end(), k.begin(), k.end());
    V.insert(V.end(), v.begin(), v.end());

    std::vector<double> scores(pos + 1);
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    double mx = -std::numeric_limits<double>::infinity();
    for (int s = 0; s <= pos; ++s) {
      const double* ks = K.data() + static_cast<size_t>(s) * d;
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += q[i] * ks[i];
      scores[s] = acc * inv_sqrt_d;
      mx = std::max(mx, scores[s]);
    }
    double z = 0.0;
    for (int s = 0; s <= pos; ++s) {
      scores[s] = std::exp(scores[s] - mx);
      z += scores[s];
    }
    for (int s = 0; s <= pos; ++s) scores[s] /= z;
    std::fill(u.begin(), u.end(), 0.0);
    for (int s = 0; s <= pos; ++s) {
      const double* vs = V.data() + static_cast<size_t>(s) * d;
      double w = scores[s];
      for (int i = 0; i < d; ++i) u[i] += w * vs[i];
    }
    std::vector<double> o(d);
    detail::matvec(W + blockw::wo(d), u.data(), o.data(), d, d);
    for (int i = 0; i < d; ++i) x[i] += o[i];

    if (cache) {
      cache->a_norm[b].insert(cache->a_norm[b].end(), a.begin(), a.end());
      cache->q_vec[b].insert(cache->q_vec[b].end(), q.begin(), q.end());
      cache->att[b].insert(cache->att[b].end(), scores.begin(), scores.end());
      cache->u_vec[b].insert(cache->u_vec[b].end(), u.begin(), u.end());
      cache->x_mid[b].insert(cache->x_mid[b].end(), x.begin(), x.end());
    }

    detail::rmsnorm(x.data(), bn.data(), d);
    detail::matvec(W + blockw::w1(d), bn.data(), m1.data(), dm, d);
    for (int i = 0; i < dm; ++i) m1[i] = std::max(0.0, m1[i]);
    detail::matvec(W + blockw::w2(d), m1.data(), m2.data(), d, dm);
    for (int i = 0; i < d; ++i) x[i] += m2[i];

    if (cache) {
      cache->b_norm[b].insert(cache->b_norm[b].end(), bn.begin(), bn.end());
      cache->m1[b].insert(cache->m1[b].end(), m1.begin(), m1.end());
    }
  }

  st.last_hidden = x;
  st.len += 1;
  if (cache) {
    cache->tokens.push_back(token);
    cache->h_final.insert(cache->h_final.end(), x.begin(), x.end());
    cache->positions += 1;
  }
}

inline void logits_from_hidden(const PolicyParams& p, const double* hidden,
                               double* logits) {
  detail::matvec(p.out_proj(), hidden, logits, p.dims.vocab_size, p.dims.d);
}

inline void log_softmax(const double* logits, double* out, int n) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
  double lz = std::log(z) + mx;
  for (int i = 0; i < n; ++i) out[i] = logits[i] - lz;
}

// One scored path: a context and a continuation whose per-token
// log-probabilities (and, optionally, backward caches) are needed.
struct PathForward {
  std::vector<int> full_ids;          // bos + context + continuation
  int cont_start = 0;                 // index of first continuation token
  std::vector<double> cont_logps;     // log pi(tok | prefix), per cont token
  std::vector<double> pred_probs;     // softmax rows at prediction positions
  std::vector<double> pred_logits;    // raw logits at prediction positions
};

inline void check_path_fits(const PolicyParams& p, size_t ctx, size_t cont) {
  if (1 + ctx + cont > static_cast<size_t>(p.dims.max_context))
    throw LengthError("sequence of " + std::to_string(1 + ctx + cont) +
                      " tokens exceeds max_context " +
                      std::to_string(p.dims.max_context));
}

// Teacher-forced pass over bos+context+continuation.  Records softmax rows
// at the positions that predict continuation tokens; fills cache if given.
inline PathForward policy_score_path(const PolicyParams& p,
                                     std::span<const int> ctx,
                                     std::span<const int> cont,
                                     ForwardCache* cache = nullptr) {
  check_path_fits(p, ctx.size(), cont.size());
  const int V = p.dims.vocab_size;
  PathForward out;
  out.full_ids.reserve(1 + ctx.size() + cont.size());
  out.full_ids.push_back(1);  // bos id is fixed at 1 by Vocab convention
  out.full_ids.insert(out.full_ids.end(), ctx.begin(), ctx.end());
  out.cont_start = static_cast<int>(out.full_ids.size());
  out.full_ids.insert(out.full_ids.end(), cont.begin(), cont.end());

  SeqState st(p.dims);
  std::vector<double> logits(V), lsm(V);
  for (size_t pos = 0; pos < out.full_ids.size(); ++pos) {
    policy_step(p, out.full_ids[pos], st, cache);
    // Position pos predicts the token at pos+1 when that token belongs to
    // the continuation.
    bool predicts = pos + 1 >= static_cast<size_t>(out.cont_start) &&
                    pos + 1 < out.full_ids.size();
    if (predicts) {
      logits_from_hidden(p, st.last_hidden.data(), logits.data());
      log_softmax(logits.data(), lsm.data(), V);
      int target = out.full_ids[pos + 1];
      out.cont_logps.push_back(lsm[target]);
      out.pred_logits.insert(out.pred_logits.end(), logits.begin(), logits.end());
      // Direct softmax normalization, not exp(log_softmax): keeps exact
      // rational values (e.g. 1/V at uniform init) exactly representable.
      double mx = logits[0];
      for (int t = 1; t < V; ++t) mx = std::max(mx, logits[t]);
      double z = 0.0;
      size_t row = out.pred_probs.size();
      for (int t = 0; t < V; ++t) {
        out.pred_probs.push_back(std::exp(logits[t] - mx));
        z += out.pred_probs[row + t];
      }
      for (int t = 0; t < V; ++t) out.pred_probs[row + t] /= z;
    }
  }
  return out;
}

inline std::vector<double> log_prob(const PolicyParams& p,
                                    const TokenSeq& context,
                                    const TokenSeq& continuation) {
  auto fwd = policy_score_path(p, context.ids, continuation.ids, nullptr);
  return fwd.cont_logps;
}

// Per-token probabilities of the continuation, pulled from the softmax rows.
inline std::vector<double> token_probs(const PolicyParams& p,
                                       const TokenSeq& context,
                                       const TokenSeq& continuation) {
  auto fwd = policy_score_path(p, context.ids, continuation.ids, nullptr);
  const int V = p.dims.vocab_size;
  std::vector<double> out(continuation.ids.size());
  for (size_t j = 0; j < out.size(); ++j)
    out[j] = fwd.pred_probs[j * V + static_cast<size_t>(continuation.ids[j])];
  return out;
}

inline HiddenRep final_hidden(const PolicyParams& p, const TokenSeq& seq) {
  if (seq.empty()) throw ValidationError("final_hidden: empty sequence");
  check_path_fits(p, seq.ids.size(), 0);
  SeqState st(p.dims);
  policy_step(p, 1, st);
  for (int id : seq.ids) policy_step(p, id, st);
  return st.last_hidden;
}

// Structural tokens are never generated: sampling renormalizes over the
// rest.  Probability evaluation (log_prob) stays a plain full softmax.
inline bool generation_banned(int token) { return token == 0 || token == 1 || token == 3; }

// Draws the next token from softmax(logits / temperature) with structural
// tokens masked; temperature 0 selects the masked argmax (lowest index wins).
inline int draw_token(const PolicyParams& p, const double* logits,
                      double temperature, Rng& rng) {
  const int V = p.dims.vocab_size;
  for (int t = 0; t < V; ++t)
    if (!std::isfinite(logits[t]))
      throw NumericError("sample: non-finite logits");
  if (temperature == 0.0) {
    int best = -1;
    for (int t = 0; t < V; ++t) {
      if (generation_banned(t)) continue;
      if (best < 0 || logits[t] > logits[best]) best = t;
    }
    return best;
  }
  std::vector<double> scaled(V);
  double mx = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < V; ++t) {
    scaled[t] = generation_banned(t)
                    ? -std::numeric_limits<double>::infinity()
                    : logits[t] / temperature;
    mx = std::max(mx, scaled[t]);
  }
  double z = 0.0;
  std::vector<double> probs(V);
  for (int t = 0; t < V; ++t) {
    probs[t] = std::exp(scaled[t] - mx);
    z += probs[t];
  }
  for (int t = 0; t < V; ++t) probs[t] /= z;
  return rng.categorical(probs);
}

// Continues sampling from an existing state.  Stops after emitting EOS or
// max_len tokens.  If rep_out is non-null the final sampled token is fed
// through the network and the last hidden state is returned, making the
// result identical to final_hidden over the whole sequence.
inline TokenSeq sample_from_state(const PolicyParams& p, SeqState& st,
                                  int max_len, double temperature, Rng& rng,
                                  HiddenRep* rep_out = nullptr) {
  if (max_len < 1) throw ValidationError("sample: max_len must be >= 1");
  if (temperature < 0.0) throw ValidationError("sample: negative temperature");
  if (st.len + max_len > p.dims.max_context)
    throw LengthError("sample: context plus max_len exceeds max_context");
  TokenSeq out;
  out.role = Role::response;
  std::vector<double> logits(p.dims.vocab_size);
  for (int step = 0; step < max_len; ++step) {
    logits_from_hidden(p, st.last_hidden.data(), logits.data());
    int tok = draw_token(p, logits.data(), temperature, rng);
    out.ids.push_back(tok);
    bool stop = (tok == 2) || (step + 1 == max_len);
    if (!stop || rep_out != nullptr) policy_step(p, tok, st);
    if (stop) break;
  }
  if (rep_out) *rep_out = st.last_hidden;
  return out;
}

inline SeqState prefill(const PolicyParams& p, std::span<const int> ctx) {
  SeqState st(p.dims);
  policy_step(p, 1, st);
  for (int id : ctx) policy_step(p, id, st);
  return st;
}

inline TokenSeq sample(const PolicySnapshot& snap, const TokenSeq& context,
                       int max_len, double temperature, uint64_t seed,
                       HiddenRep* rep_out = nullptr) {
  const PolicyParams& p = snap.params;
  if (1 + context.ids.size() + max_len > static_cast<size_t>(p.dims.max_context))
    throw LengthError("sample: context plus max_len exceeds max_context");
  SeqState st = prefill(p, context.ids);
  Rng rng(seed);
  return sample_from_state(p, st, max_len, temperature, rng, rep_out);
}

// Backward through one scored path.  coef[j] = dLoss/d(cont_logps[j]).
// Accumulates dLoss/dparams into grad (size = param_count).
inline void policy_backward_path(const PolicyParams& p, const PathForward& fwd,
                                 const ForwardCache& cache,
                                 std::span<const double> coef,
                                 std::span<double> grad) {
  const int d = p.dims.d;
  const int dm = 4 * d;
  const int V = p.dims.vocab_size;
  const int T = cache.positions;
  const int n_pred = static_cast<int>(fwd.cont_logps.size());
  if (coef.size() != static_cast<size_t>(n_pred))
    throw SizeError("backward: coefficient count mismatch");
  if (grad.size() != p.dims.param_count())
    throw SizeError("backward: gradient buffer size mismatch");

  // d(residual stream after final block) per position.
  std::vector<double> dx(static_cast<size_t>(T) * d, 0.0);
  double* dWout = grad.data() + p.dims.out_offset();
  for (int j = 0; j < n_pred; ++j) {
    if (coef[j] == 0.0) continue;
    int pos = fwd.cont_start - 1 + j;
    const double* probs = fwd.pred_probs.data() + static_cast<size_t>(j) * V;
    const double* h = cache.h_final.data() + static_cast<size_t>(pos) * d;
    int target = fwd.full_ids[pos + 1];
    for (int t = 0; t < V; ++t) {
      double dl = coef[j] * ((t == target ? 1.0 : 0.0) - probs[t]);
      if (dl == 0.0) continue;
      const double* wrow = p.out_proj() + static_cast<size_t>(t) * d;
      double* grow = dWout + static_cast<size_t>(t) * d;
      double* dxp = dx.data() + static_cast<size_t>(pos) * d;
      for (int i = 0; i < d; ++i) {
        grow[i] += dl * h[i];
        dxp[i] += dl * wrow[i];
      }
    }
  }

  std::vector<double> da(static_cast<size_t>(T) * d), dq(static_cast<size_t>(T) * d),
      dk(static_cast<size_t>(T) * d), dv(static_cast<size_t>(T) * d),
      dmid(static_cast<size_t>(T) * d);
  std::vector<double> dbn(d), dm1(dm), du(d), dsc;

  for (int b = p.dims.layers - 1; b >= 0; --b) {
    const double* W = p.block(b);
    double* G = grad.data() + p.dims.block_offset(b);
    const auto& x_in = cache.x_in[b];
    const auto& a_norm = cache.a_norm[b];
    const auto& q_vec = cache.q_vec[b];
    const auto& att = cache.att[b];
    const auto& u_vec = cache.u_vec[b];
    const auto& x_mid = cache.x_mid[b];
    const auto& b_norm = cache.b_norm[b];
    const auto& m1 = cache.m1[b];

    std::fill(dmid.begin(), dmid.end(), 0.0);
    // MLP sublayer.
    for (int pos = 0; pos < T; ++pos) {
      const double* dxp = dx.data() + static_cast<size_t>(pos) * d;
      double* dmidp = dmid.data() + static_cast<size_t>(pos) * d;
      // Residual passthrough.
      for (int i = 0; i < d; ++i) dmidp[i] += dxp[i];
      const double* m1p = m1.data() + static_cast<size_t>(pos) * dm;
      const double* bnp = b_norm.data() + static_cast<size_t>(pos) * d;
      // dm2 = dxp; dW2 += dm2 (x) m1; dm1 = W2^T dm2 masked by relu.
      detail::outer_acc(dxp, m1p, G + blockw::w2(d), d, dm);
      std::fill(dm1.begin(), dm1.end(), 0.0);
      detail::matvec_t_acc(W + blockw::w2(d), dxp, dm1.data(), d, dm);
      for (int i = 0; i < dm; ++i)
        if (m1p[i] <= 0.0) dm1[i] = 0.0;
      detail::outer_acc(dm1.data(), bnp, G + blockw::w1(d), dm, d);
      std::fill(dbn.begin(), dbn.end(), 0.0);
      detail::matvec_t_acc(W + blockw::w1(d), dm1.data(), dbn.data(), dm, d);
      const double* xmidp = x_mid.data() + static_cast<size_t>(pos) * d;
      detail::rmsnorm_backward(xmidp, dbn.data(), dmidp, d);
    }

    // Attention sublayer.
    std::fill(da.begin(), da.end(), 0.0);
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    size_t att_row_off = 0;
    // Rebuild K/V rows from caches: k = Wk a, v = Wv a were not cached, so
    // recompute them from a_norm (cheap relative to backward matmuls).
    std::vector<double> Kr(static_cast<size_t>(T) * d), Vr(static_cast<size_t>(T) * d);
    for (int pos = 0; pos < T; ++pos) {
      const double* ap = a_norm.data() + static_cast<size_t>(pos) * d;
      detail::matvec(W + blockw::wk(d), ap, Kr.data() + static_cast<size_t>(pos) * d, d, d);
      detail::matvec(W + blockw::wv(d), ap, Vr.data() + static_cast<size_t>(pos) * d, d, d);
    }
    for (int pos = 0; pos < T; ++pos) {
      const double* dmidp = dmid.data() + static_cast<size_t>(pos) * d;
      const double* up = u_vec.data() + static_cast<size_t>(pos) * d;
      // do = dmid (residual already handled via dmid accumulation order):
      // x_mid = x_in + Wo u, so d(Wo u) = dmid.
      detail::outer_acc(dmidp, up, G + blockw::wo(d), d, d);
      std::fill(du.begin(), du.end(), 0.0);
      detail::matvec_t_acc(W + blockw::wo(d), dmidp, du.data(), d, d);

      const double* attp = att.data() + att_row_off;
      dsc.assign(pos + 1, 0.0);
      double dot = 0.0;
      for (int s = 0; s <= pos; ++s) {
        const double* vs = Vr.data() + static_cast<size_t>(s) * d;
        double dat = 0.0;
        for (int i = 0; i < d; ++i) dat += du[i] * vs[i];
        dsc[s] = dat;
        dot += attp[s] * dat;
        double* dvs = dv.data() + static_cast<size_t>(s) * d;
        double w = attp[s];
        for (int i = 0; i < d; ++i) dvs[i] += w * du[i];
      }
      double* dqp = dq.data() + static_cast<size_t>(pos) * d;
      const double* qp = q_vec.data() + static_cast<size_t>(pos) * d;
      for (int s = 0; s <= pos; ++s) {
        double g = attp[s] * (dsc[s] - dot) * inv_sqrt_d;
        if (g == 0.0) continue;
        const double* ks = Kr.data() + static_cast<size_t>(s) * d;
        double* dks = dk.data() + static_cast<size_t>(s) * d;
        for (int i = 0; i < d; ++i) {
          dqp[i] += g * ks[i];
          dks[i] += g * qp[i];
        }
      }
      att_row_off += pos + 1;
    }
    for (int pos = 0; pos < T; ++pos) {
      const double* ap = a_norm.data() + static_cast<size_t>(pos) * d;
      const double* dqp = dq.data() + static_cast<size_t>(pos) * d;
      const double* dkp = dk.data() + static_cast<size_t>(pos) * d;
      const double* dvp = dv.data() + static_cast<size_t>(pos) * d;
      detail::outer_acc(dqp, ap, G + blockw::wq(d), d, d);
      detail::outer_acc(dkp, ap, G + blockw::wk(d), d, d);
      detail::outer_acc(dvp, ap, G + blockw::wv(d), d, d);
      double* dap = da.data() + static_cast<size_t>(pos) * d;
      detail::matvec_t_acc(W + blockw::wq(d), dqp, dap, d, d);
      detail::matvec_t_acc(W + blockw::wk(d), dkp, dap, d, d);
      detail::matvec_t_acc(W + blockw::wv(d), dvp, dap, d, d);
      const double* xinp = x_in.data() + static_cast<size_t>(pos) * d;
      // dx_in = rmsnorm_backward(da) + residual passthrough (dmid).
      double* dxp = dx.data() + static_cast<size_t>(pos) * d;
      const double* dmidp = dmid.data() + static_cast<size_t>(pos) * d;
      for (int i = 0; i < d; ++i) dxp[i] = dmidp[i];
      detail::rmsnorm_backward(xinp, dap, dxp, d);
    }
  }

  double* dEmb = grad.data() + p.dims.embed_offset();
  for (int pos = 0; pos < T; ++pos) {
    int tok = cache.tokens[pos];
    const double* dxp = dx.data() + static_cast<size_t>(pos) * d;
    double* row = dEmb + static_cast<size_t>(tok) * d;
    for (int i = 0; i < d; ++i) row[i] += dxp[i];
  }
}

// ---- Checkpoint I/O -------------------------------------------------------

constexpr const char* kCheckpointMagic = "GCPOCKPT1";

inline void save_checkpoint(const PolicyParams& p, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("save_checkpoint: cannot open " + path);
  f << kCheckpointMagic << "\n"
    << p.dims.d << "\n"
    << p.dims.layers << "\n"
    << p.dims.vocab_size << "\n"
    << p.dims.vocab_hash << "\n"
    << p.dims.param_count() << "\n";
  std::vector<float> buf(p.w.size());
  for (size_t i = 0; i < p.w.size(); ++i) buf[i] = static_cast<float>(p.w[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw FormatError("save_checkpoint: write failed for " + path);
}

inline PolicyParams load_checkpoint(const std::string& path, const Vocab& vocab,
                                    int max_context = 256) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_checkpoint: cannot open " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != kCheckpointMagic)
    throw FormatError("load_checkpoint: bad magic in " + path);
  long long d = 0, layers = 0, vsize = 0;
  unsigned long long hash = 0, count = 0;
  f >> d >> layers >> vsize >> hash >> count;
  if (!f) throw FormatError("load_checkpoint: malformed header in " + path);
  f.ignore(1);  // newline after header
  if (vsize != vocab.size() || hash != vocab.content_hash())
    throw FormatError("load_checkpoint: vocab mismatch in " + path);
  PolicyParams p;
  p.dims = PolicyDims{static_cast<int>(d), static_cast<int>(layers),
                      static_cast<int>(vsize), max_context, vocab.content_hash()};
  if (count != p.dims.param_count())
    throw FormatError("load_checkpoint: parameter count mismatch in " + path);
  std::vector<float> buf(count);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<unsigned long long>(f.gcount()) !=
      count * sizeof(float))
    throw FormatError("load_checkpoint: truncated file " + path);
  p.w.resize(count);
  for (size_t i = 0; i < buf.size(); ++i) {
    p.w[i] = static_cast<double>(buf[i]);
    if (!std::isfinite(p.w[i]))
      throw FormatError("load_checkpoint: non-finite parameter in " + path);
  }
  return p;
}

}  // namespace gcpo
