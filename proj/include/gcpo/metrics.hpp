#pragma once
// Per-step training metrics and their JSONL serialization.  One JSON object
// per line, flushed per step, so a crashed run still leaves a usable stream.
// Fields that do not apply (causal diagnostics on the plain algorithm,
// pass_at_1 off the evaluation cadence) serialize as null.

#include <json.hpp>

#include <optional>
#include <ostream>
#include <string>

#include "gcpo/config.hpp"

namespace gcpo {

struct MetricsRecord {
  long step = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double mean_reward = 0.0;
  std::optional<double> pass_at_1;
  double mean_kl_ref = 0.0;
  std::optional<double> mean_kl_causal;
  double clip_fraction = 0.0;
  std::optional<double> upsilon_mean;
  std::optional<double> upsilon_min;
  std::optional<double> upsilon_max;
  std::optional<double> upsilon_neg_frac;
  std::optional<long> clamp_count;
  std::optional<long> degenerate_reps;
  double lr = 0.0;
};

namespace detail {
template <typename T>
inline nlohmann::ordered_json opt_json(const std::optional<T>& v) {
  if (!v) return nullptr;
  return *v;
}
}  // namespace detail

inline nlohmann::ordered_json metrics_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["objective"] = r.objective;
  j["grad_norm"] = r.grad_norm;
  j["mean_reward"] = r.mean_reward;
  j["pass_at_1"] = detail::opt_json(r.pass_at_1);
  j["mean_kl_ref"] = r.mean_kl_ref;
  j["mean_kl_causal"] = detail::opt_json(r.mean_kl_causal);
  j["clip_fraction"] = r.clip_fraction;
  j["upsilon_mean"] = detail::opt_json(r.upsilon_mean);
  j["upsilon_min"] = detail::opt_json(r.upsilon_min);
  j["upsilon_max"] = detail::opt_json(r.upsilon_max);
  j["upsilon_neg_frac"] = detail::opt_json(r.upsilon_neg_frac);
  j["clamp_count"] = detail::opt_json(r.clamp_count);
  j["degenerate_reps"] = detail::opt_json(r.degenerate_reps);
  j["lr"] = r.lr;
  return j;
}

inline void write_metrics_line(std::ostream& out, const MetricsRecord& r) {
  out << metrics_json(r).dump() << "\n";
  out.flush();
}

inline nlohmann::ordered_json config_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["run"] = {{"algorithm", algorithm_name(c.algorithm)},
              {"seed", c.seed},
              {"steps", c.steps},
              {"checkpoint_every", c.checkpoint_every},
              {"eval_every", c.eval_every},
              {"eval_queries", c.eval_queries},
              {"eval_seed_start", c.eval_seed_start}};
  j["model"] = {{"d", c.d}, {"layers", c.layers}, {"max_context", c.max_context}};
  j["sampling"] = {{"n", c.n},
                   {"batch_queries", c.batch_queries},
                   {"max_len", c.max_len},
                   {"temperature", c.temperature}};
  nlohmann::ordered_json obj = {{"eps", c.eps},       {"beta", c.beta},
                                {"kappa", c.kappa},   {"alpha", c.alpha},
                                {"m", c.m}};
  obj["metric"] = c.metric == SimilarityMetric::cosine      ? "cosine"
                  : c.metric == SimilarityMetric::euclidean ? "euclidean"
                                                            : "gaussian";
  obj["phi_sum_mode"] = c.phi_sum_mode == PhiMode::mean ? "mean" : "sum";
  if (std::isfinite(c.upsilon_floor)) obj["upsilon_floor"] = c.upsilon_floor;
  else obj["upsilon_floor"] = nullptr;
  j["objective"] = obj;
  j["optim"] = {{"lr", c.lr},
                {"schedule", c.schedule == Schedule::constant ? "constant" : "cosine"},
                {"warmup_ratio", c.warmup_ratio},
                {"weight_decay", c.weight_decay}};
  j["task"] = {{"name", c.task_name}, {"digits", c.digits}};
  j["test"] = {{"force_upsilon_one", c.force_upsilon_one},
               {"nan_inject_step", c.nan_inject_step}};
  return j;
}

}  // namespace gcpo
