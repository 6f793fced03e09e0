#pragma once

// Token vocabulary and sequence types shared by the policy, the tasks and
// the rollout assembly.

#include <cstdint>
#include <string>
#include <vector>

#include "gcpo/errors.hpp"

namespace gcpo {

enum class Role : uint8_t { query, response, context };

struct TokenSeq {
  std::vector<int> ids;
  Role role = Role::context;

  size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

struct Vocab {
  std::vector<std::string> tokens;
  int pad = 0;
  int bos = 1;
  int eos = 2;
  int sep = 3;

  int size() const { return static_cast<int>(tokens.size()); }

  int id_of(const std::string& tok) const {
    for (int i = 0; i < size(); ++i)
      if (tokens[i] == tok) return i;
    throw ValidationError("vocab: unknown token '" + tok + "'");
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id < 0 || id >= size()) throw ValidationError("decode: id out of range");
      out += tokens[id];
    }
    return out;
  }

  // FNV-1a over the token strings; pinned in checkpoints so a model is never
  // silently loaded against a different vocabulary.
  uint64_t content_hash() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](unsigned char c) {
      h ^= c;
      h *= 1099511628211ull;
    };
    for (const auto& t : tokens) {
      for (unsigned char c : t) mix(c);
      mix(0x1f);
    }
    return h;
  }
};

// Vocabulary used by the arithmetic tasks: specials, digits and operators.
inline Vocab make_task_vocab() {
  Vocab v;
  v.tokens = {"<pad>", "<bos>", "<eos>", "<sep>", "0", "1", "2", "3", "4",
              "5", "6", "7", "8", "9", "+", "=", "#"};
  return v;
}

}  // namespace gcpo
