#pragma once

// Group sampling, collider outputs, and leave-one-out context assembly.
//
// All generations here run against a frozen snapshot; nothing differentiates
// through a rollout.  Contexts are encoded canonically as segments joined by
// single SEP tokens: q SEP y_0 SEP ... SEP y_{n-1} SEP y_n (with the indexed
// response left out).  Sampling never emits SEP, so splitting on SEP recovers
// the exact segments.

#include <cstdint>
#include <string>
#include <vector>

#include "gcpo/errors.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rng.hpp"
#include "gcpo/vocab.hpp"

namespace gcpo {

struct Group {
  TokenSeq q;
  std::vector<TokenSeq> responses;
  std::vector<std::vector<double>> old_logps;
  uint64_t snapshot_version = 0;

  int n() const { return static_cast<int>(responses.size()); }
};

struct ColliderSet {
  TokenSeq y_n;
  std::vector<TokenSeq> extras;  // y_{n,1} .. y_{n,n-1}
  uint64_t snapshot_version = 0;

  // variant(0) is y_n itself.
  const TokenSeq& variant(int j) const {
    if (j == 0) return y_n;
    if (j < 0 || static_cast<size_t>(j) > extras.size())
      throw ValidationError("collider variant index out of range");
    return extras[static_cast<size_t>(j) - 1];
  }
};

struct LooContext {
  int i = 0;          // response left out
  int j = 0;          // collider variant in the final slot
  TokenSeq tokens;
  std::vector<size_t> segment_sizes;
};

// Counts sampled sequences; the trainer reconciles the auxiliary count
// against the closed form n + n*m + n*n*m per query per step.
struct GenCounter {
  uint64_t group = 0;
  uint64_t aux = 0;
};

inline std::vector<int> join_segments(const std::vector<const TokenSeq*>& segs) {
  std::vector<int> out;
  for (size_t s = 0; s < segs.size(); ++s) {
    if (s > 0) out.push_back(3);  // sep id per Vocab convention
    out.insert(out.end(), segs[s]->ids.begin(), segs[s]->ids.end());
  }
  return out;
}

inline std::vector<std::vector<int>> split_on_sep(const std::vector<int>& ids) {
  std::vector<std::vector<int>> out(1);
  for (int id : ids) {
    if (id == 3)
      out.emplace_back();
    else
      out.back().push_back(id);
  }
  return out;
}

inline Group sample_group(const PolicySnapshot& snapshot, const TokenSeq& q,
                          int n, int max_len, double temperature,
                          uint64_t seed, GenCounter* counter = nullptr) {
  if (n < 2) throw ValidationError("sample_group: n must be >= 2");
  Group g;
  g.q = q;
  g.snapshot_version = snapshot.version;
  for (int i = 0; i < n; ++i) {
    uint64_t member_seed = derive_seed(seed, Stream::group, static_cast<uint64_t>(i));
    TokenSeq y = sample(snapshot, q, max_len, temperature, member_seed);
    g.old_logps.push_back(log_prob(snapshot.params, q, y));
    g.responses.push_back(std::move(y));
    if (counter) counter->group += 1;
  }
  return g;
}

inline TokenSeq collider_context(const Group& group) {
  std::vector<const TokenSeq*> segs = {&group.q};
  for (const auto& y : group.responses) segs.push_back(&y);
  TokenSeq ctx;
  ctx.role = Role::context;
  ctx.ids = join_segments(segs);
  return ctx;
}

inline ColliderSet sample_collider_outputs(const PolicySnapshot& snapshot,
                                           const Group& group, int max_len,
                                           double temperature, uint64_t seed,
                                           GenCounter* counter = nullptr) {
  if (group.n() < 2) throw ValidationError("sample_collider_outputs: bad group");
  TokenSeq ctx = collider_context(group);
  if (1 + ctx.ids.size() + static_cast<size_t>(max_len) >
      static_cast<size_t>(snapshot.params.dims.max_context))
    throw LengthError(
        "collider context of " + std::to_string(ctx.ids.size()) +
        " tokens plus max_len exceeds max_context; reduce n or max_len");
  SeqState base = prefill(snapshot.params, ctx.ids);
  ColliderSet out;
  out.snapshot_version = snapshot.version;
  for (int i = 0; i < group.n(); ++i) {
    SeqState branch = base;
    Rng rng(derive_seed(seed, Stream::collider, static_cast<uint64_t>(i)));
    TokenSeq y = sample_from_state(snapshot.params, branch, max_len,
                                   temperature, rng);
    if (counter) counter->aux += 1;
    if (i == 0)
      out.y_n = std::move(y);
    else
      out.extras.push_back(std::move(y));
  }
  return out;
}

// x_{i,j}: q, then every group response except y_i, then collider variant j.
inline LooContext build_x_ij(const TokenSeq& q, const Group& group,
                             const ColliderSet& collider, int i, int j) {
  int n = group.n();
  if (i < 0 || i >= n) throw ValidationError("build_x_ij: i out of range");
  if (j < 0 || j >= n) throw ValidationError("build_x_ij: j out of range");
  LooContext ctx;
  ctx.i = i;
  ctx.j = j;
  ctx.tokens.role = Role::context;
  std::vector<const TokenSeq*> segs = {&q};
  for (int k = 0; k < n; ++k)
    if (k != i) segs.push_back(&group.responses[k]);
  segs.push_back(&collider.variant(j));
  ctx.tokens.ids = join_segments(segs);
  for (auto* s : segs) ctx.segment_sizes.push_back(s->ids.size());
  return ctx;
}

inline LooContext build_x_i(const TokenSeq& q, const Group& group,
                            const ColliderSet& collider, int i) {
  return build_x_ij(q, group, collider, i, 0);
}

}  // namespace gcpo
