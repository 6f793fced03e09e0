#pragma once
// Adam with decoupled weight decay and the learning-rate schedules used by
// the trainer.  The update direction is descent on the supplied gradient;
// callers maximizing an objective pass its negated gradient.

#include <cmath>
#include <cstddef>
#include <vector>

#include "gcpo/errors.hpp"
#include "gcpo/policy.hpp"

namespace gcpo {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled: applied as p -= weight_decay * p

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ValidationError("adam eps must be > 0");
    if (!(weight_decay >= 0.0))
      throw ValidationError("weight decay must be >= 0");
  }
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  uint64_t t = 0;

  explicit AdamState(size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
};

// One bias-corrected moment update plus decoupled decay; parameters are
// rounded back to f32-representable doubles so checkpoints are lossless.
inline void optimizer_step(PolicyParams& params, const std::vector<double>& grad,
                           AdamState& state, const AdamConfig& cfg,
                           double lr_t) {
  cfg.validate();
  if (grad.size() != params.w.size())
    throw SizeError("optimizer_step: gradient size does not match parameters");
  if (state.m.size() != params.w.size())
    throw SizeError("optimizer_step: state size does not match parameters");
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.w.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    const double p = params.w[i];
    params.w[i] = f32_round(p - lr_t * mhat / (std::sqrt(vhat) + cfg.eps) -
                            cfg.weight_decay * p);
  }
}

enum class Schedule { constant, cosine };

// lr at 0-based step t of total_steps, with linear warmup over the first
// warmup_ratio fraction of steps.
inline double schedule_lr(Schedule schedule, double lr, long t, long total_steps,
                          double warmup_ratio) {
  if (!(lr > 0.0)) throw ValidationError("lr must be > 0");
  if (total_steps < 1) throw ValidationError("total_steps must be >= 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0))
    throw ValidationError("warmup_ratio must lie in [0, 1]");
  if (t < 0 || t >= total_steps)
    throw ValidationError("schedule step out of range");
  const long warmup = static_cast<long>(warmup_ratio * static_cast<double>(total_steps));
  if (t < warmup)
    return lr * static_cast<double>(t + 1) / static_cast<double>(warmup);
  if (schedule == Schedule::constant) return lr;
  const long span = total_steps - warmup;
  if (span <= 1) return lr;
  const double progress =
      static_cast<double>(t - warmup) / static_cast<double>(span - 1);
  const double pi = 3.14159265358979323846;
  return lr * 0.5 * (1.0 + std::cos(pi * progress));
}

}  // namespace gcpo
