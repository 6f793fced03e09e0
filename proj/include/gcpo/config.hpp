#pragma once
// Plain-text run configuration: [section] headers, key = value pairs, UTF-8,
// '#' comments.  Unknown sections or keys are errors, reported with line
// numbers, so a typo can never silently fall back to a default.

#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>

#include "gcpo/errors.hpp"
#include "gcpo/gcpo.hpp"
#include "gcpo/grpo.hpp"
#include "gcpo/optimizer.hpp"

namespace gcpo {

enum class Algorithm { grpo, gcpo };

inline std::string algorithm_name(Algorithm a) {
  return a == Algorithm::grpo ? "grpo" : "gcpo";
}

struct TrainConfig {
  // run
  Algorithm algorithm = Algorithm::grpo;
  uint64_t seed = 1;
  long steps = 50;
  long checkpoint_every = 0;   // 0: only the final checkpoint
  long eval_every = 0;         // 0: evaluate only after the final step
  int eval_queries = 32;
  uint64_t eval_seed_start = uint64_t{1} << 30;
  // model
  int d = 64;
  int layers = 2;
  int max_context = 256;
  // sampling
  int n = 4;
  int batch_queries = 8;
  int max_len = 8;
  double temperature = 1.0;
  // objective
  double eps = 0.2;
  double beta = 0.04;
  double kappa = 0.06;
  double alpha = 2.0;
  int m = 2;
  SimilarityMetric metric = SimilarityMetric::cosine;
  PhiMode phi_sum_mode = PhiMode::mean;
  double upsilon_floor = -std::numeric_limits<double>::infinity();
  // optim
  double lr = 3e-3;
  Schedule schedule = Schedule::constant;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  // task
  std::string task_name = "modadd";
  int digits = 1;
  // test hooks
  bool force_upsilon_one = false;
  long nan_inject_step = -1;  // -1: disabled

  SurrogateConfig surrogate() const { return SurrogateConfig{eps, beta}; }

  CausalConfig causal() const {
    CausalConfig c;
    c.kappa = kappa;
    c.alpha = alpha;
    c.m = m;
    c.metric = metric;
    c.phi_mode = phi_sum_mode;
    c.upsilon_floor = upsilon_floor;
    c.force_upsilon_one = force_upsilon_one;
    return c;
  }

  void validate() const {
    if (n < 2) throw ValidationError("config: n must be >= 2");
    if (!(lr > 0.0)) throw ValidationError("config: lr must be > 0");
    if (steps < 1) throw ValidationError("config: steps must be >= 1");
    if (batch_queries < 1)
      throw ValidationError("config: batch_queries must be >= 1");
    if (max_len < 1) throw ValidationError("config: max_len must be >= 1");
    if (!(temperature >= 0.0))
      throw ValidationError("config: temperature must be >= 0");
    if (eval_queries < 1)
      throw ValidationError("config: eval_queries must be >= 1");
    if (checkpoint_every < 0 || eval_every < 0)
      throw ValidationError("config: cadences must be >= 0");
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0))
      throw ValidationError("config: warmup_ratio must lie in [0, 1]");
    if (!(weight_decay >= 0.0))
      throw ValidationError("config: weight_decay must be >= 0");
    surrogate().validate();
    causal().validate();
    // Training queries use instance seeds [0, steps * batch_queries);
    // the held-out evaluation range must not intersect them.
    const uint64_t train_end =
        static_cast<uint64_t>(steps) * static_cast<uint64_t>(batch_queries);
    if (eval_seed_start < train_end)
      throw ValidationError(
          "config: evaluation seed range overlaps training seeds");
  }
};

namespace detail {

struct ConfigEntry {
  std::string value;
  int line = 0;
  bool used = false;
};

class ConfigMap {
 public:
  std::map<std::pair<std::string, std::string>, ConfigEntry> entries;

  const ConfigEntry* find(const std::string& sec, const std::string& key) {
    auto it = entries.find({sec, key});
    if (it == entries.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }
};

inline long parse_long(const ConfigEntry& e, const std::string& key) {
  std::istringstream ss(e.value);
  long v = 0;
  std::string extra;
  if (!(ss >> v) || (ss >> extra))
    throw FormatError("config line " + std::to_string(e.line) + ": '" + key +
                      "' expects an integer");
  return v;
}

inline double parse_double(const ConfigEntry& e, const std::string& key) {
  std::istringstream ss(e.value);
  double v = 0.0;
  std::string extra;
  if (!(ss >> v) || (ss >> extra))
    throw FormatError("config line " + std::to_string(e.line) + ": '" + key +
                      "' expects a number");
  return v;
}

inline bool parse_bool(const ConfigEntry& e, const std::string& key) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw FormatError("config line " + std::to_string(e.line) + ": '" + key +
                    "' expects true or false");
}

}  // namespace detail

inline TrainConfig parse_config_text(std::istream& in) {
  detail::ConfigMap cm;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (first.front() == '[') {
      std::string extra;
      if (first.back() != ']' || (ls >> extra))
        throw FormatError("config line " + std::to_string(lineno) +
                          ": malformed section header");
      section = first.substr(1, first.size() - 2);
      continue;
    }
    if (section.empty())
      throw FormatError("config line " + std::to_string(lineno) +
                        ": entry before any section");
    std::string eq, value, extra;
    if (!(ls >> eq) || eq != "=" || !(ls >> value))
      throw FormatError("config line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    if (ls >> extra)
      throw FormatError("config line " + std::to_string(lineno) +
                        ": trailing text after value");
    auto ins = cm.entries.emplace(std::make_pair(section, first),
                                  detail::ConfigEntry{value, lineno, false});
    if (!ins.second)
      throw FormatError("config line " + std::to_string(lineno) +
                        ": duplicate key '" + first + "'");
  }

  TrainConfig cfg;
  auto str = [&cm](const char* sec, const char* key, std::string& out) {
    if (const auto* e = cm.find(sec, key)) out = e->value;
  };
  auto num = [&cm](const char* sec, const char* key, auto& out) {
    if (const auto* e = cm.find(sec, key)) {
      using T = std::decay_t<decltype(out)>;
      if constexpr (std::is_floating_point_v<T>)
        out = detail::parse_double(*e, key);
      else
        out = static_cast<T>(detail::parse_long(*e, key));
    }
  };
  auto flag = [&cm](const char* sec, const char* key, bool& out) {
    if (const auto* e = cm.find(sec, key)) out = detail::parse_bool(*e, key);
  };

  if (const auto* e = cm.find("run", "algorithm")) {
    if (e->value == "grpo") cfg.algorithm = Algorithm::grpo;
    else if (e->value == "gcpo") cfg.algorithm = Algorithm::gcpo;
    else
      throw FormatError("config line " + std::to_string(e->line) +
                        ": algorithm must be grpo or gcpo");
  }
  num("run", "seed", cfg.seed);
  num("run", "steps", cfg.steps);
  num("run", "checkpoint_every", cfg.checkpoint_every);
  num("run", "eval_every", cfg.eval_every);
  num("run", "eval_queries", cfg.eval_queries);
  num("run", "eval_seed_start", cfg.eval_seed_start);
  num("model", "d", cfg.d);
  num("model", "layers", cfg.layers);
  num("model", "max_context", cfg.max_context);
  num("sampling", "n", cfg.n);
  num("sampling", "batch_queries", cfg.batch_queries);
  num("sampling", "max_len", cfg.max_len);
  num("sampling", "temperature", cfg.temperature);
  num("objective", "eps", cfg.eps);
  num("objective", "beta", cfg.beta);
  num("objective", "kappa", cfg.kappa);
  num("objective", "alpha", cfg.alpha);
  num("objective", "m", cfg.m);
  if (const auto* e = cm.find("objective", "metric")) {
    if (e->value == "cosine") cfg.metric = SimilarityMetric::cosine;
    else if (e->value == "euclidean") cfg.metric = SimilarityMetric::euclidean;
    else if (e->value == "gaussian") cfg.metric = SimilarityMetric::gaussian;
    else
      throw FormatError("config line " + std::to_string(e->line) +
                        ": metric must be cosine, euclidean, or gaussian");
  }
  if (const auto* e = cm.find("objective", "phi_sum_mode")) {
    if (e->value == "mean") cfg.phi_sum_mode = PhiMode::mean;
    else if (e->value == "sum") cfg.phi_sum_mode = PhiMode::sum;
    else
      throw FormatError("config line " + std::to_string(e->line) +
                        ": phi_sum_mode must be mean or sum");
  }
  num("objective", "upsilon_floor", cfg.upsilon_floor);
  num("optim", "lr", cfg.lr);
  if (const auto* e = cm.find("optim", "schedule")) {
    if (e->value == "constant") cfg.schedule = Schedule::constant;
    else if (e->value == "cosine") cfg.schedule = Schedule::cosine;
    else
      throw FormatError("config line " + std::to_string(e->line) +
                        ": schedule must be constant or cosine");
  }
  num("optim", "warmup_ratio", cfg.warmup_ratio);
  num("optim", "weight_decay", cfg.weight_decay);
  str("task", "name", cfg.task_name);
  num("task", "digits", cfg.digits);
  flag("test", "force_upsilon_one", cfg.force_upsilon_one);
  num("test", "nan_inject_step", cfg.nan_inject_step);

  for (const auto& [sk, entry] : cm.entries)
    if (!entry.used)
      throw FormatError("config line " + std::to_string(entry.line) +
                        ": unknown key '" + sk.second + "' in [" + sk.first +
                        "]");
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file: " + path);
  return parse_config_text(in);
}

}  // namespace gcpo
