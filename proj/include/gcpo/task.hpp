#pragma once

// Synthetic verifiable tasks.
//
// The default task is k-digit modular addition: the query encodes
// "a+b=" and the correct answer is the decimal rendering of (a+b) mod 10^k.
// Responses may spend tokens freely before the answer delimiter '#'; the
// first delimiter occurrence is the one that counts.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gcpo/errors.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rng.hpp"
#include "gcpo/vocab.hpp"

namespace gcpo {

struct TaskSpec {
  std::string name;
  int digits = 1;
  std::string answer_delimiter = "#";
  Vocab vocab;
};

struct QueryInstance {
  TokenSeq q;
  std::string canonical_answer;
  uint64_t seed = 0;
};

struct RewardBreakdown {
  double accuracy = 0.0;
  double format = 0.0;
  double total = 0.0;
};

inline TaskSpec make_task(const std::string& name, int digits) {
  if (name != "modadd") throw ValidationError("unknown task '" + name + "'");
  if (digits < 1 || digits > 6)
    throw ValidationError("modadd: digits must be in [1, 6]");
  return TaskSpec{name, digits, "#", make_task_vocab()};
}

namespace detail {

inline void append_number(const Vocab& v, uint64_t value, std::vector<int>& ids) {
  std::string s = std::to_string(value);
  for (char c : s) ids.push_back(v.id_of(std::string(1, c)));
}

inline bool is_digit_token(const Vocab& v, int id) {
  const std::string& t = v.tokens[id];
  return t.size() == 1 && t[0] >= '0' && t[0] <= '9';
}

}  // namespace detail

inline QueryInstance make_modadd_instance(const TaskSpec& task, uint64_t a,
                                          uint64_t b, uint64_t seed) {
  uint64_t mod = 1;
  for (int i = 0; i < task.digits; ++i) mod *= 10;
  QueryInstance inst;
  inst.seed = seed;
  inst.q.role = Role::query;
  detail::append_number(task.vocab, a, inst.q.ids);
  inst.q.ids.push_back(task.vocab.id_of("+"));
  detail::append_number(task.vocab, b, inst.q.ids);
  inst.q.ids.push_back(task.vocab.id_of("="));
  inst.canonical_answer = std::to_string((a + b) % mod);
  return inst;
}

inline QueryInstance gen_query(const TaskSpec& task, uint64_t seed) {
  uint64_t mod = 1;
  for (int i = 0; i < task.digits; ++i) mod *= 10;
  Rng rng(derive_seed(seed, Stream::query, static_cast<uint64_t>(task.digits)));
  uint64_t a = rng.next_u64() % mod;
  uint64_t b = rng.next_u64() % mod;
  return make_modadd_instance(task, a, b, seed);
}

// Scoring is total: anything that fails the shape check lands on (0, 0, 0).
// Format pays 0.1 when the response holds exactly one delimiter followed by
// at least one digit; accuracy pays 1.0 when that maximal digit run matches
// the canonical answer exactly.
inline RewardBreakdown reward(const TaskSpec& task, const QueryInstance& query,
                              const TokenSeq& response) {
  const Vocab& v = task.vocab;
  int delim = v.id_of(task.answer_delimiter);
  int count = 0;
  size_t first = response.ids.size();
  for (size_t i = 0; i < response.ids.size(); ++i) {
    if (response.ids[i] == delim) {
      if (count == 0) first = i;
      ++count;
    }
  }
  RewardBreakdown out;
  if (count != 1) return out;
  std::string run;
  for (size_t i = first + 1; i < response.ids.size(); ++i) {
    if (!detail::is_digit_token(v, response.ids[i])) break;
    run += v.tokens[response.ids[i]];
  }
  if (run.empty()) return out;
  out.format = 0.1;
  if (run == query.canonical_answer) out.accuracy = 1.0;
  out.total = out.accuracy + out.format;
  return out;
}

// Core evaluator over an arbitrary decoder; the snapshot overload wires in
// a single greedy decode per query.
inline double pass_at_1(
    const std::function<TokenSeq(const QueryInstance&)>& decode,
    const TaskSpec& task, int n_eval, uint64_t seed) {
  if (n_eval < 1) throw ValidationError("pass_at_1: n_eval must be >= 1");
  int hits = 0;
  for (int i = 0; i < n_eval; ++i) {
    QueryInstance inst = gen_query(task, seed + static_cast<uint64_t>(i));
    TokenSeq resp = decode(inst);
    if (reward(task, inst, resp).accuracy == 1.0) ++hits;
  }
  return static_cast<double>(hits) / n_eval;
}

inline double pass_at_1(const PolicySnapshot& snapshot, const TaskSpec& task,
                        int n_eval, uint64_t seed, int max_len = 8) {
  return pass_at_1(
      [&](const QueryInstance& inst) {
        return sample(snapshot, inst.q, max_len, 0.0, 0);
      },
      task, n_eval, seed);
}

}  // namespace gcpo
