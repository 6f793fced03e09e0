#pragma once
// The training loop: per step it snapshots the policy, samples a query
// batch with groups (plus collider sets and causal components when the
// causal objective is active), scores rewards, evaluates the objective and
// its gradient at the snapshot point, takes one ascent step, and logs one
// metrics record.  Rollouts fan out across worker threads; every random
// draw uses a seed derived from (run seed, stream, step, query), so the
// metrics stream is identical regardless of thread count.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "gcpo/config.hpp"
#include "gcpo/gcpo.hpp"
#include "gcpo/grpo.hpp"
#include "gcpo/metrics.hpp"
#include "gcpo/optimizer.hpp"
#include "gcpo/rollout.hpp"
#include "gcpo/task.hpp"

namespace gcpo {

// Worker cap: GCPO_THREADS if set, else the hardware count, never above the
// job count.  Results land in per-index slots, so scheduling order cannot
// affect any output.
inline size_t worker_count(size_t jobs) {
  size_t k = std::thread::hardware_concurrency();
  if (k == 0) k = 1;
  if (const char* env = std::getenv("GCPO_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 1) k = static_cast<size_t>(v);
  }
  return std::min(std::max<size_t>(k, 1), std::max<size_t>(jobs, 1));
}

template <typename Fn>
inline void parallel_for(size_t count, Fn&& fn) {
  const size_t workers = worker_count(count);
  if (workers <= 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto body = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct EvalReport {
  double pass_at_1 = 0.0;
  double mean_reward = 0.0;
};

// Greedy decode over the held-out query range; deterministic given the
// snapshot, so repeated calls agree bitwise.
inline EvalReport evaluate(const PolicySnapshot& snapshot,
                           const TrainConfig& cfg) {
  cfg.validate();
  const TaskSpec task = make_task(cfg.task_name, cfg.digits);
  EvalReport out;
  int hits = 0;
  double total = 0.0;
  for (int i = 0; i < cfg.eval_queries; ++i) {
    const QueryInstance inst =
        gen_query(task, cfg.eval_seed_start + static_cast<uint64_t>(i));
    const TokenSeq resp = sample(snapshot, inst.q, cfg.max_len, 0.0, 0);
    const RewardBreakdown rb = reward(task, inst, resp);
    if (rb.accuracy == 1.0) ++hits;
    total += rb.total;
  }
  out.pass_at_1 = static_cast<double>(hits) / cfg.eval_queries;
  out.mean_reward = total / cfg.eval_queries;
  return out;
}

struct TrainHooks {
  std::ostream* metrics_out = nullptr;
  std::string checkpoint_dir;  // empty: keep no checkpoints
  std::string report_dir;      // empty: abort dumps go nowhere
};

struct TrainResult {
  PolicyParams params;
  std::vector<MetricsRecord> metrics;
  EvalReport final_eval;
};

namespace detail {

inline void write_abort_dump(const TrainHooks& hooks, long step,
                             double objective, double grad_norm,
                             const std::string& reason) {
  if (hooks.report_dir.empty()) return;
  nlohmann::ordered_json j;
  j["reason"] = reason;
  j["step"] = step;
  j["objective"] = std::isfinite(objective) ? nlohmann::ordered_json(objective)
                                            : nlohmann::ordered_json(nullptr);
  j["grad_norm"] = std::isfinite(grad_norm) ? nlohmann::ordered_json(grad_norm)
                                            : nlohmann::ordered_json(nullptr);
  std::ofstream out(hooks.report_dir + "/abort_dump.json");
  if (out) out << j.dump(2) << "\n";
}

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  const TaskSpec task = make_task(cfg.task_name, cfg.digits);
  const SurrogateConfig scfg = cfg.surrogate();
  const CausalConfig ccfg = cfg.causal();
  const bool causal_run = cfg.algorithm == Algorithm::gcpo;
  const size_t B = static_cast<size_t>(cfg.batch_queries);

  TrainResult result;
  result.params = init_policy(cfg.d, cfg.layers, task.vocab, cfg.seed,
                              cfg.max_context);
  AdamConfig acfg;
  acfg.weight_decay = cfg.weight_decay;
  AdamState state(result.params.w.size());

  for (long step = 0; step < cfg.steps; ++step) {
    const PolicySnapshot snap{result.params, static_cast<uint64_t>(step) + 1};
    std::vector<ScoredGroup> batch(B);
    std::vector<CausalGroupData> causal(causal_run ? B : 0);
    std::vector<GenCounter> counters(B);

    parallel_for(B, [&](size_t b) {
      const uint64_t query_index =
          static_cast<uint64_t>(step) * B + static_cast<uint64_t>(b);
      const QueryInstance inst = gen_query(task, query_index);
      Group grp = sample_group(
          snap, inst.q, cfg.n, cfg.max_len, cfg.temperature,
          derive_seed(cfg.seed, Stream::group, static_cast<uint64_t>(step), b),
          &counters[b]);
      std::vector<double> rewards;
      rewards.reserve(grp.responses.size());
      for (const TokenSeq& resp : grp.responses)
        rewards.push_back(reward(task, inst, resp).total);
      if (causal_run) {
        const ColliderSet cs = sample_collider_outputs(
            snap, grp, cfg.max_len, cfg.temperature,
            derive_seed(cfg.seed, Stream::collider, static_cast<uint64_t>(step),
                        b),
            &counters[b]);
        causal[b] = causal_pipeline(
            snap, grp, cs, ccfg, cfg.max_len, cfg.temperature,
            derive_seed(cfg.seed, Stream::causal, static_cast<uint64_t>(step),
                        b),
            &counters[b]);
      }
      batch[b] = ScoredGroup{std::move(grp), std::move(rewards)};
    });

    // Reconcile the generation ledger against the closed form.
    {
      const uint64_t n64 = static_cast<uint64_t>(cfg.n);
      const uint64_t m64 = static_cast<uint64_t>(cfg.m);
      const uint64_t want_aux =
          causal_run ? n64 + n64 * m64 + n64 * n64 * m64 : 0;
      uint64_t got_group = 0, got_aux = 0;
      for (const GenCounter& c : counters) {
        got_group += c.group;
        got_aux += c.aux;
      }
      if (got_group != n64 * B || got_aux != want_aux * B)
        throw StateError("generation counter mismatch after step " +
                         std::to_string(step));
    }

    SurrogateStats stats;
    CausalDiagnostics diag;
    std::vector<double> grad(result.params.w.size(), 0.0);
    double objective = 0.0;
    if (causal_run) {
      objective = gcpo_objective(batch, causal, result.params, snap.params,
                                 scfg, cfg.kappa, &stats, &diag, &grad);
    } else {
      objective = grpo_objective(batch, result.params, snap.params, scfg,
                                 &stats, &grad);
    }
    if (cfg.nan_inject_step == step && !grad.empty())
      grad[0] = std::numeric_limits<double>::quiet_NaN();

    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double grad_norm = std::sqrt(sq);
    if (!std::isfinite(objective) || !std::isfinite(grad_norm)) {
      const std::string reason =
          "non-finite objective or gradient at step " + std::to_string(step);
      detail::write_abort_dump(hooks, step, objective, grad_norm, reason);
      throw NumericError(reason);
    }

    double reward_sum = 0.0;
    size_t reward_count = 0;
    for (const ScoredGroup& sg : batch) {
      for (double r : sg.rewards) reward_sum += r;
      reward_count += sg.rewards.size();
    }

    const double lr_t =
        schedule_lr(cfg.schedule, cfg.lr, step, cfg.steps, cfg.warmup_ratio);
    for (double& g : grad) g = -g;  // ascend on the objective
    optimizer_step(result.params, grad, state, acfg, lr_t);

    MetricsRecord rec;
    rec.step = step;
    rec.objective = objective;
    rec.grad_norm = grad_norm;
    rec.mean_reward = reward_sum / static_cast<double>(reward_count);
    rec.mean_kl_ref = stats.mean_kl;
    rec.clip_fraction = stats.clip_fraction;
    rec.lr = lr_t;
    if (causal_run) {
      rec.mean_kl_causal = diag.mean_kl_causal;
      rec.upsilon_mean = diag.upsilon_mean;
      rec.upsilon_min = diag.upsilon_min;
      rec.upsilon_max = diag.upsilon_max;
      rec.upsilon_neg_frac = diag.upsilon_neg_frac;
      rec.clamp_count = static_cast<long>(diag.clamp_count);
      rec.degenerate_reps = static_cast<long>(diag.degenerate_reps);
    }

    const bool last = step + 1 == cfg.steps;
    if (last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0)) {
      const PolicySnapshot post{result.params, snap.version};
      const EvalReport er = evaluate(post, cfg);
      rec.pass_at_1 = er.pass_at_1;
      if (last) result.final_eval = er;
    }

    result.metrics.push_back(rec);
    if (hooks.metrics_out) write_metrics_line(*hooks.metrics_out, rec);

    if (!hooks.checkpoint_dir.empty() &&
        (last || (cfg.checkpoint_every > 0 &&
                  (step + 1) % cfg.checkpoint_every == 0)))
      save_checkpoint(result.params, hooks.checkpoint_dir + "/step_" +
                                         std::to_string(step + 1) + ".ckpt");
  }
  return result;
}

struct CompareRow {
  std::string arm;
  uint64_t seed = 0;
  bool ok = false;
  double pass_at_1 = 0.0;
  double mean_reward = 0.0;
  double objective = 0.0;
  std::string error;
  std::vector<MetricsRecord> metrics;
};

struct CompareReport {
  std::vector<CompareRow> rows;
  double mean_pass_a = 0.0, mean_pass_b = 0.0;
  double mean_reward_a = 0.0, mean_reward_b = 0.0;
  bool all_ok = false;
};

// Runs both configurations across the seed list and tabulates final pass@1
// and final-step mean reward per seed plus per-arm means.  A failed run
// marks its row and the report, but the other rows still complete.
inline CompareReport run_compare(const TrainConfig& cfg_a,
                                 const TrainConfig& cfg_b,
                                 const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw ValidationError("compare needs at least one seed");
  CompareReport report;
  report.all_ok = true;
  auto run_arm = [&](const TrainConfig& base, const std::string& arm,
                     double& mean_pass, double& mean_reward) {
    double pass_sum = 0.0, reward_sum = 0.0;
    int ok_count = 0;
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      CompareRow row;
      row.arm = arm;
      row.seed = seed;
      try {
        TrainResult res = train(cfg);
        row.ok = true;
        row.pass_at_1 = res.final_eval.pass_at_1;
        row.mean_reward = res.metrics.back().mean_reward;
        row.objective = res.metrics.back().objective;
        row.metrics = std::move(res.metrics);
        pass_sum += row.pass_at_1;
        reward_sum += row.mean_reward;
        ++ok_count;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
        report.all_ok = false;
      }
      report.rows.push_back(std::move(row));
    }
    mean_pass = ok_count ? pass_sum / ok_count : 0.0;
    mean_reward = ok_count ? reward_sum / ok_count : 0.0;
  };
  run_arm(cfg_a, "a:" + algorithm_name(cfg_a.algorithm), report.mean_pass_a,
          report.mean_reward_a);
  run_arm(cfg_b, "b:" + algorithm_name(cfg_b.algorithm), report.mean_pass_b,
          report.mean_reward_b);
  return report;
}

}  // namespace gcpo
