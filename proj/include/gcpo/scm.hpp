#pragma once
// Finite fork-collider structural causal models with exact enumeration:
// q -> y_0..y_{n-1} independently, y_n <- (q, y_0..y_{n-1}).  Provides the
// conditional-expectation projection onto functions of (q, y_1..y_{n-1}),
// its complement, risk gaps between predictors, and the verification
// drivers for the projection identities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gcpo/errors.hpp"
#include "gcpo/rng.hpp"

namespace gcpo {

// Variable order everywhere: index 0 is q, index 1+i is y_i, so the
// collider y_n lives at index n+1 and the prediction target y_0 at 1.
struct FiniteScm {
  int query_card = 2;
  int response_card = 2;
  int n = 2;
  std::vector<double> query_prior;
  std::vector<std::vector<double>> response_kernel;  // [q][y]
  std::vector<std::vector<double>> collider_kernel;  // [row(q, y_0..y_{n-1})][y_n]

  int var_count() const { return n + 2; }

  size_t collider_rows() const {
    size_t rows = static_cast<size_t>(query_card);
    for (int i = 0; i < n; ++i) rows *= static_cast<size_t>(response_card);
    return rows;
  }

  size_t collider_row(int q, const std::vector<int>& ys) const {
    size_t idx = static_cast<size_t>(q);
    for (int i = 0; i < n; ++i)
      idx = idx * static_cast<size_t>(response_card) + static_cast<size_t>(ys[i]);
    return idx;
  }

  void validate() const {
    if (query_card < 1 || response_card < 1)
      throw ValidationError("scm: cardinalities must be positive");
    if (n < 2) throw ValidationError("scm: n must be >= 2");
    auto check_row = [](const std::vector<double>& row, const std::string& what,
                        size_t want) {
      if (row.size() != want)
        throw ValidationError("scm: " + what + " has wrong length");
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0 && p <= 1.0))
          throw ValidationError("scm: " + what + " entry outside [0, 1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw ValidationError("scm: " + what + " does not sum to 1");
    };
    check_row(query_prior, "query prior", static_cast<size_t>(query_card));
    if (response_kernel.size() != static_cast<size_t>(query_card))
      throw ValidationError("scm: response kernel has wrong row count");
    for (const auto& row : response_kernel)
      check_row(row, "response kernel row", static_cast<size_t>(response_card));
    if (collider_kernel.size() != collider_rows())
      throw ValidationError("scm: collider kernel has wrong row count");
    for (const auto& row : collider_kernel)
      check_row(row, "collider kernel row", static_cast<size_t>(response_card));
  }
};

struct JointTable {
  std::vector<int> dims;      // cardinality per variable, variable 0 slowest
  std::vector<double> probs;

  size_t cells() const { return probs.size(); }

  size_t index(const std::vector<int>& a) const {
    size_t idx = 0;
    for (size_t v = 0; v < dims.size(); ++v)
      idx = idx * static_cast<size_t>(dims[v]) + static_cast<size_t>(a[v]);
    return idx;
  }
};

// Odometer over mixed-radix assignments; returns false after the last one.
inline bool next_assignment(std::vector<int>& a, const std::vector<int>& dims) {
  for (size_t v = a.size(); v-- > 0;) {
    if (++a[v] < dims[v]) return true;
    a[v] = 0;
  }
  return false;
}

inline JointTable build_joint(const FiniteScm& scm, size_t cell_budget = 10000000) {
  scm.validate();
  JointTable t;
  t.dims.push_back(scm.query_card);
  for (int i = 0; i <= scm.n; ++i) t.dims.push_back(scm.response_card);
  size_t cells = 1;
  for (int d : t.dims) {
    cells *= static_cast<size_t>(d);
    if (cells > cell_budget)
      throw SizeError("joint table exceeds the cell budget");
  }
  t.probs.assign(cells, 0.0);
  std::vector<int> a(t.dims.size(), 0);
  std::vector<int> ys(static_cast<size_t>(scm.n));
  do {
    const int q = a[0];
    double p = scm.query_prior[q];
    for (int i = 0; i < scm.n; ++i) {
      p *= scm.response_kernel[q][a[1 + i]];
      ys[i] = a[1 + i];
    }
    p *= scm.collider_kernel[scm.collider_row(q, ys)][a[1 + scm.n]];
    t.probs[t.index(a)] = p;
  } while (next_assignment(a, t.dims));
  double total = 0.0;
  for (double p : t.probs) total += p;
  if (std::abs(total - 1.0) > 1e-10)
    throw NumericError("joint table mass deviates from 1");
  return t;
}

// A real-valued function of a subset of SCM variables, stored densely over
// the conditioning set (listed in increasing variable order, first slowest).
struct Predictor {
  std::vector<int> cond;
  std::vector<double> values;

  size_t slot(const std::vector<int>& assignment,
              const std::vector<int>& dims) const {
    size_t idx = 0;
    for (int v : cond)
      idx = idx * static_cast<size_t>(dims[v]) + static_cast<size_t>(assignment[v]);
    return idx;
  }

  double eval(const std::vector<int>& assignment,
              const std::vector<int>& dims) const {
    return values[slot(assignment, dims)];
  }

  static size_t table_size(const std::vector<int>& cond,
                           const std::vector<int>& dims) {
    size_t s = 1;
    for (int v : cond) s *= static_cast<size_t>(dims[v]);
    return s;
  }
};

// x = (q, y_1..y_n): every variable except the target y_0.
inline std::vector<int> x_vars(const JointTable& t) {
  std::vector<int> v = {0};
  for (size_t i = 2; i < t.dims.size(); ++i) v.push_back(static_cast<int>(i));
  return v;
}

// The projection's conditioning set (q, y_1..y_{n-1}): x minus the collider.
inline std::vector<int> sstar_vars(const JointTable& t) {
  std::vector<int> v = {0};
  for (size_t i = 2; i + 1 < t.dims.size(); ++i) v.push_back(static_cast<int>(i));
  return v;
}

inline double target_value(int code, const std::vector<double>* value_map) {
  if (!value_map) return static_cast<double>(code);
  return value_map->at(static_cast<size_t>(code));
}

// E[value(target) | given] by direct enumeration.
inline double cond_expect(const JointTable& t, int target,
                          const std::vector<std::pair<int, int>>& given,
                          const std::vector<double>* value_map = nullptr) {
  double mass = 0.0, acc = 0.0;
  std::vector<int> a(t.dims.size(), 0);
  do {
    bool match = true;
    for (const auto& [v, val] : given)
      if (a[static_cast<size_t>(v)] != val) { match = false; break; }
    if (!match) continue;
    const double p = t.probs[t.index(a)];
    mass += p;
    acc += p * target_value(a[static_cast<size_t>(target)], value_map);
  } while (next_assignment(a, t.dims));
  if (mass == 0.0)
    throw ConditioningError("conditioning event has zero probability");
  return acc / mass;
}

// E[f | S*] as a predictor over S*; zero-mass assignments get value 0 and
// never contribute to any expectation.
inline Predictor project_phi(const Predictor& f, const JointTable& t) {
  for (int v : f.cond)
    if (v < 0 || static_cast<size_t>(v) >= t.dims.size())
      throw ValidationError("predictor conditions on an unknown variable");
  Predictor out;
  out.cond = sstar_vars(t);
  const size_t slots = Predictor::table_size(out.cond, t.dims);
  std::vector<double> mass(slots, 0.0), acc(slots, 0.0);
  std::vector<int> a(t.dims.size(), 0);
  do {
    const double p = t.probs[t.index(a)];
    if (p == 0.0) continue;
    const size_t s = out.slot(a, t.dims);
    mass[s] += p;
    acc[s] += p * f.eval(a, t.dims);
  } while (next_assignment(a, t.dims));
  out.values.assign(slots, 0.0);
  for (size_t s = 0; s < slots; ++s)
    if (mass[s] > 0.0) out.values[s] = acc[s] / mass[s];
  return out;
}

namespace detail {
inline std::vector<int> union_vars(const std::vector<int>& a,
                                   const std::vector<int>& b) {
  std::vector<int> out = a;
  for (int v : b)
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  std::sort(out.begin(), out.end());
  return out;
}
}  // namespace detail

// Psi f = f - Phi f, tabulated over f's variables joined with S*.
inline Predictor project_psi(const Predictor& f, const JointTable& t,
                             const Predictor* phi = nullptr) {
  Predictor phi_local;
  if (!phi) {
    phi_local = project_phi(f, t);
    phi = &phi_local;
  }
  Predictor out;
  out.cond = detail::union_vars(f.cond, sstar_vars(t));
  std::vector<int> sub_dims;
  for (int v : out.cond) sub_dims.push_back(t.dims[static_cast<size_t>(v)]);
  out.values.assign(Predictor::table_size(out.cond, t.dims), 0.0);
  std::vector<int> sub(out.cond.size(), 0);
  std::vector<int> a(t.dims.size(), 0);
  do {
    for (size_t k = 0; k < out.cond.size(); ++k)
      a[static_cast<size_t>(out.cond[k])] = sub[k];
    out.values[out.slot(a, t.dims)] = f.eval(a, t.dims) - phi->eval(a, t.dims);
  } while (next_assignment(sub, sub_dims));
  return out;
}

// E[(Y - f1)^2] - E[(Y - f2)^2] with Y the target variable's value.
inline double risk_delta(const Predictor& f1, const Predictor& f2,
                         const JointTable& t, int target = 1,
                         const std::vector<double>* value_map = nullptr) {
  double delta = 0.0;
  std::vector<int> a(t.dims.size(), 0);
  do {
    const double p = t.probs[t.index(a)];
    if (p == 0.0) continue;
    const double y = target_value(a[static_cast<size_t>(target)], value_map);
    const double e1 = y - f1.eval(a, t.dims);
    const double e2 = y - f2.eval(a, t.dims);
    delta += p * (e1 * e1 - e2 * e2);
  } while (next_assignment(a, t.dims));
  return delta;
}

// E[g(assignment)] over the joint for an arbitrary callable.
template <typename Fn>
inline double joint_expect(const JointTable& t, Fn&& g) {
  double acc = 0.0;
  std::vector<int> a(t.dims.size(), 0);
  do {
    const double p = t.probs[t.index(a)];
    if (p == 0.0) continue;
    acc += p * g(a);
  } while (next_assignment(a, t.dims));
  return acc;
}

// b(q) = E[target | q].
inline Predictor baseline_b(const JointTable& t, int target = 1,
                            const std::vector<double>* value_map = nullptr) {
  Predictor out;
  out.cond = {0};
  const size_t slots = static_cast<size_t>(t.dims[0]);
  std::vector<double> mass(slots, 0.0), acc(slots, 0.0);
  std::vector<int> a(t.dims.size(), 0);
  do {
    const double p = t.probs[t.index(a)];
    mass[static_cast<size_t>(a[0])] += p;
    acc[static_cast<size_t>(a[0])] +=
        p * target_value(a[static_cast<size_t>(target)], value_map);
  } while (next_assignment(a, t.dims));
  out.values.assign(slots, 0.0);
  for (size_t s = 0; s < slots; ++s)
    if (mass[s] > 0.0) out.values[s] = acc[s] / mass[s];
  return out;
}

// The exact Bayes predictor f*(x) = E[target | x] over x = (q, y_1..y_n).
inline Predictor bayes_predictor(const JointTable& t, int target = 1,
                                 const std::vector<double>* value_map = nullptr) {
  Predictor out;
  out.cond = x_vars(t);
  const size_t slots = Predictor::table_size(out.cond, t.dims);
  std::vector<double> mass(slots, 0.0), acc(slots, 0.0);
  std::vector<int> a(t.dims.size(), 0);
  do {
    const double p = t.probs[t.index(a)];
    const size_t s = out.slot(a, t.dims);
    mass[s] += p;
    acc[s] += p * target_value(a[static_cast<size_t>(target)], value_map);
  } while (next_assignment(a, t.dims));
  out.values.assign(slots, 0.0);
  for (size_t s = 0; s < slots; ++s)
    if (mass[s] > 0.0) out.values[s] = acc[s] / mass[s];
  return out;
}

// Psi f + b, tabulated over Psi f's variables (which include q).
inline Predictor shifted_projection(const Predictor& psi_f, const Predictor& b,
                                    const JointTable& t) {
  Predictor out;
  out.cond = psi_f.cond;
  out.values.assign(psi_f.values.size(), 0.0);
  std::vector<int> sub_dims;
  for (int v : out.cond) sub_dims.push_back(t.dims[static_cast<size_t>(v)]);
  std::vector<int> sub(out.cond.size(), 0);
  std::vector<int> a(t.dims.size(), 0);
  do {
    for (size_t k = 0; k < out.cond.size(); ++k)
      a[static_cast<size_t>(out.cond[k])] = sub[k];
    out.values[out.slot(a, t.dims)] = psi_f.eval(a, t.dims) + b.eval(a, t.dims);
  } while (next_assignment(sub, sub_dims));
  return out;
}

struct ProjectionReport {
  double delta = 0.0;
  double phi_residual_sq = 0.0;  // ||Phi f - b||^2
  double psi_norm_sq = 0.0;      // ||Psi f||^2
  double identity_gap = 0.0;
  bool identity_holds = false;
};

// Delta(f, Psi f + b) against the closed form ||Phi f - b||^2.
inline ProjectionReport verify_excess_risk_identity(
    const Predictor& f, const JointTable& t,
    const std::vector<double>* value_map = nullptr) {
  const Predictor b = baseline_b(t, 1, value_map);
  const Predictor phi = project_phi(f, t);
  const Predictor psi = project_psi(f, t, &phi);
  const Predictor fproj = shifted_projection(psi, b, t);
  ProjectionReport r;
  r.delta = risk_delta(f, fproj, t, 1, value_map);
  r.phi_residual_sq = joint_expect(t, [&](const std::vector<int>& a) {
    const double d = phi.eval(a, t.dims) - b.eval(a, t.dims);
    return d * d;
  });
  r.psi_norm_sq = joint_expect(t, [&](const std::vector<int>& a) {
    const double d = psi.eval(a, t.dims);
    return d * d;
  });
  r.identity_gap = std::abs(r.delta - r.phi_residual_sq);
  r.identity_holds = r.delta >= -1e-10 && r.identity_gap <= 1e-8;
  return r;
}

// Delta(b, Psi f + b) against ||Psi f||^2.  The closed form requires
// E[Psi(f - f*) Psi f] = 0 (e.g. f = f* plus a function of (q, y_1..y_{n-1}));
// for other f the report carries the true gap and identity_holds = false.
inline ProjectionReport verify_baseline_shift_identity(
    const Predictor& f, const JointTable& t,
    const std::vector<double>* value_map = nullptr) {
  const Predictor b = baseline_b(t, 1, value_map);
  const Predictor phi = project_phi(f, t);
  const Predictor psi = project_psi(f, t, &phi);
  const Predictor fproj = shifted_projection(psi, b, t);
  ProjectionReport r;
  r.delta = risk_delta(b, fproj, t, 1, value_map);
  r.phi_residual_sq = joint_expect(t, [&](const std::vector<int>& a) {
    const double d = phi.eval(a, t.dims) - b.eval(a, t.dims);
    return d * d;
  });
  r.psi_norm_sq = joint_expect(t, [&](const std::vector<int>& a) {
    const double d = psi.eval(a, t.dims);
    return d * d;
  });
  r.identity_gap = std::abs(r.delta - r.psi_norm_sq);
  r.identity_holds = r.delta >= -1e-10 && r.identity_gap <= 1e-8;
  return r;
}

// Conditional mutual information I(a; b | cond) in bits.
inline double conditional_mi(const JointTable& t, int va, int vb,
                             const std::vector<int>& cond) {
  std::map<std::vector<int>, double> pabc, pac, pbc, pc;
  std::vector<int> a(t.dims.size(), 0);
  do {
    const double p = t.probs[t.index(a)];
    if (p == 0.0) continue;
    std::vector<int> c;
    for (int v : cond) c.push_back(a[static_cast<size_t>(v)]);
    std::vector<int> key_ab = c;
    key_ab.push_back(a[static_cast<size_t>(va)]);
    key_ab.push_back(a[static_cast<size_t>(vb)]);
    std::vector<int> key_a = c;
    key_a.push_back(a[static_cast<size_t>(va)]);
    std::vector<int> key_b = c;
    key_b.push_back(a[static_cast<size_t>(vb)]);
    pabc[key_ab] += p;
    pac[key_a] += p;
    pbc[key_b] += p;
    pc[c] += p;
  } while (next_assignment(a, t.dims));
  double mi = 0.0;
  for (const auto& [key, p] : pabc) {
    std::vector<int> c(key.begin(), key.end() - 2);
    std::vector<int> ka = c;
    ka.push_back(key[key.size() - 2]);
    std::vector<int> kb = c;
    kb.push_back(key[key.size() - 1]);
    mi += p * std::log2(p * pc[c] / (pac[ka] * pbc[kb]));
  }
  return mi;
}

// (I(y_0; y_1 | q), I(y_0; y_1 | q, y_n)) in bits.
inline std::pair<double, double> verify_collider_dependence(const JointTable& t) {
  if (t.dims.size() < 4)
    throw ValidationError("collider dependence needs n >= 2");
  const int yn = static_cast<int>(t.dims.size()) - 1;
  return {conditional_mi(t, 1, 2, {0}), conditional_mi(t, 1, 2, {0, yn})};
}

inline FiniteScm random_scm(int query_card, int response_card, int n,
                            uint64_t seed) {
  FiniteScm scm;
  scm.query_card = query_card;
  scm.response_card = response_card;
  scm.n = n;
  Rng rng(derive_seed(seed, Stream::scm));
  auto dirichlet_row = [&rng](size_t k) {
    std::vector<double> row(k);
    double sum = 0.0;
    for (double& e : row) {
      e = -std::log(1.0 - rng.uniform());  // Exp(1) draws
      sum += e;
    }
    for (double& e : row) e /= sum;
    return row;
  };
  scm.query_prior = dirichlet_row(static_cast<size_t>(query_card));
  for (int q = 0; q < query_card; ++q)
    scm.response_kernel.push_back(dirichlet_row(static_cast<size_t>(response_card)));
  for (size_t r = 0; r < scm.collider_rows(); ++r)
    scm.collider_kernel.push_back(dirichlet_row(static_cast<size_t>(response_card)));
  return scm;
}

// Uniform fork with a deterministic XOR collider: the standard witness for
// collider-induced dependence.
inline FiniteScm xor_collider_scm() {
  FiniteScm scm;
  scm.query_card = 2;
  scm.response_card = 2;
  scm.n = 2;
  scm.query_prior = {0.5, 0.5};
  scm.response_kernel = {{0.5, 0.5}, {0.5, 0.5}};
  for (int q = 0; q < 2; ++q)
    for (int y0 = 0; y0 < 2; ++y0)
      for (int y1 = 0; y1 < 2; ++y1) {
        std::vector<double> row(2, 0.0);
        row[static_cast<size_t>(y0 ^ y1)] = 1.0;
        scm.collider_kernel.push_back(row);
      }
  return scm;
}

struct ScmVerification {
  double idempotence_gap = 0.0;
  double psi_of_phi_gap = 0.0;
  double orthogonality_gap = 0.0;
  double pythagoras_gap = 0.0;
  double bayes_projection_residual = 0.0;
  double excess_risk_min_delta = 0.0;
  double excess_risk_max_gap = 0.0;
  double baseline_shift_max_gap = 0.0;
  double cmi_fork = 0.0;
  double cmi_collider = 0.0;
  bool pass = false;
};

inline Predictor random_predictor(const std::vector<int>& cond,
                                  const JointTable& t, Rng& rng, double scale) {
  Predictor f;
  f.cond = cond;
  f.values.resize(Predictor::table_size(cond, t.dims));
  for (double& v : f.values) v = scale * (2.0 * rng.uniform() - 1.0);
  return f;
}

// Runs the projection-algebra checks and the two risk-gap identities on one
// SCM.  The second identity is exercised on f* plus perturbations measurable
// in (q, y_1..y_{n-1}), the class for which its closed form is exact.
inline ScmVerification verify_scm(const FiniteScm& scm, uint64_t seed,
                                  int predictors = 100) {
  const JointTable t = build_joint(scm);
  ScmVerification out;
  Rng rng(derive_seed(seed, Stream::predictor));
  const Predictor b = baseline_b(t);
  const Predictor fstar = bayes_predictor(t);
  const std::vector<int> xs = x_vars(t);
  const std::vector<int> ss = sstar_vars(t);

  out.excess_risk_min_delta = std::numeric_limits<double>::infinity();
  for (int k = 0; k < predictors; ++k) {
    Predictor f = random_predictor(xs, t, rng, 1.5);
    auto r1 = verify_excess_risk_identity(f, t);
    out.excess_risk_min_delta = std::min(out.excess_risk_min_delta, r1.delta);
    out.excess_risk_max_gap = std::max(out.excess_risk_max_gap, r1.identity_gap);

    Predictor g = random_predictor(ss, t, rng, 1.5);
    Predictor f2 = fstar;
    std::vector<int> a(t.dims.size(), 0);
    std::vector<int> sub_dims;
    for (int v : f2.cond) sub_dims.push_back(t.dims[static_cast<size_t>(v)]);
    std::vector<int> sub(f2.cond.size(), 0);
    do {
      for (size_t i = 0; i < f2.cond.size(); ++i)
        a[static_cast<size_t>(f2.cond[i])] = sub[i];
      f2.values[f2.slot(a, t.dims)] += g.eval(a, t.dims);
    } while (next_assignment(sub, sub_dims));
    auto r2 = verify_baseline_shift_identity(f2, t);
    out.baseline_shift_max_gap = std::max(out.baseline_shift_max_gap, r2.identity_gap);

    // projection algebra on this f
    const Predictor phi = project_phi(f, t);
    const Predictor psi = project_psi(f, t, &phi);
    const Predictor phi2 = project_phi(phi, t);
    for (size_t s = 0; s < phi.values.size(); ++s)
      out.idempotence_gap = std::max(
          out.idempotence_gap, std::abs(phi2.values[s] - phi.values[s]));
    const Predictor psi_of_phi = project_psi(phi, t);
    double pop = joint_expect(t, [&](const std::vector<int>& as) {
      return std::abs(psi_of_phi.eval(as, t.dims));
    });
    out.psi_of_phi_gap = std::max(out.psi_of_phi_gap, pop);
    const Predictor psi_g = project_psi(g, t);
    double ortho = joint_expect(t, [&](const std::vector<int>& as) {
      return phi.eval(as, t.dims) * psi_g.eval(as, t.dims);
    });
    out.orthogonality_gap = std::max(out.orthogonality_gap, std::abs(ortho));
    const double ef2 = joint_expect(t, [&](const std::vector<int>& as) {
      const double v = f.eval(as, t.dims);
      return v * v;
    });
    const double ephi2 = joint_expect(t, [&](const std::vector<int>& as) {
      const double v = phi.eval(as, t.dims);
      return v * v;
    });
    const double epsi2 = joint_expect(t, [&](const std::vector<int>& as) {
      const double v = psi.eval(as, t.dims);
      return v * v;
    });
    out.pythagoras_gap =
        std::max(out.pythagoras_gap, std::abs(ef2 - ephi2 - epsi2));
  }

  // E[f* - b | S*] must vanish at every positive-mass assignment.
  {
    Predictor diff = fstar;
    std::vector<int> a(t.dims.size(), 0);
    std::vector<int> sub_dims;
    for (int v : diff.cond) sub_dims.push_back(t.dims[static_cast<size_t>(v)]);
    std::vector<int> sub(diff.cond.size(), 0);
    do {
      for (size_t i = 0; i < diff.cond.size(); ++i)
        a[static_cast<size_t>(diff.cond[i])] = sub[i];
      diff.values[diff.slot(a, t.dims)] -= b.eval(a, t.dims);
    } while (next_assignment(sub, sub_dims));
    const Predictor proj = project_phi(diff, t);
    for (double v : proj.values)
      out.bayes_projection_residual = std::max(out.bayes_projection_residual, std::abs(v));
  }

  auto [fork, collider] = verify_collider_dependence(t);
  out.cmi_fork = fork;
  out.cmi_collider = collider;

  out.pass = out.idempotence_gap <= 1e-10 && out.psi_of_phi_gap <= 1e-10 &&
             out.orthogonality_gap <= 1e-10 && out.pythagoras_gap <= 1e-10 &&
             out.bayes_projection_residual <= 1e-10 && out.excess_risk_min_delta >= -1e-10 &&
             out.excess_risk_max_gap <= 1e-8 && out.baseline_shift_max_gap <= 1e-8 &&
             out.cmi_fork <= 1e-10;
  return out;
}

// Plain-text SCM definition: [scm] with query_card/response_card/n,
// [query_prior] p = ..., [response_kernel] q<k> = ..., [collider_kernel]
// row <q>,<y_0>,...,<y_{n-1}> = ....  Rows must sum to 1 within 1e-9 and
// are renormalized exactly to 1.
inline FiniteScm parse_scm_text(std::istream& in) {
  FiniteScm scm;
  scm.query_prior.clear();
  std::map<std::string, std::string> kv;
  std::string line, section;
  int lineno = 0;
  auto fail = [&lineno](const std::string& msg) {
    throw FormatError("scm file line " + std::to_string(lineno) + ": " + msg);
  };
  std::map<std::pair<std::string, std::string>, std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (first.front() == '[') {
      if (first.back() != ']') fail("malformed section header");
      section = first.substr(1, first.size() - 2);
      std::string extra;
      if (ls >> extra) fail("trailing text after section header");
      continue;
    }
    if (section.empty()) fail("entry before any section");
    std::string key = first, tok;
    while (ls >> tok && tok != "=") key += " " + tok;
    if (tok != "=") fail("expected '=' in entry");
    if (section == "scm") {
      long long value;
      if (!(ls >> value)) fail("expected an integer");
      if (key == "query_card") scm.query_card = static_cast<int>(value);
      else if (key == "response_card") scm.response_card = static_cast<int>(value);
      else if (key == "n") scm.n = static_cast<int>(value);
      else fail("unknown key '" + key + "' in [scm]");
      std::string extra;
      if (ls >> extra) fail("trailing text after value");
    } else {
      std::vector<double> row;
      double p;
      while (ls >> p) row.push_back(p);
      if (!ls.eof()) fail("non-numeric probability");
      if (row.empty()) fail("empty probability row");
      double sum = 0.0;
      for (double e : row) {
        if (!(e >= 0.0)) fail("negative probability");
        sum += e;
      }
      if (std::abs(sum - 1.0) > 1e-9) fail("row does not sum to 1 within 1e-9");
      for (double& e : row) e /= sum;
      if (!rows.emplace(std::make_pair(section, key), row).second)
        fail("duplicate entry '" + key + "'");
    }
  }
  auto take = [&rows](const std::string& sec, const std::string& key) {
    auto it = rows.find({sec, key});
    if (it == rows.end())
      throw FormatError("scm file: missing " + sec + " entry '" + key + "'");
    auto row = it->second;
    rows.erase(it);
    return row;
  };
  scm.query_prior = take("query_prior", "p");
  for (int q = 0; q < scm.query_card; ++q)
    scm.response_kernel.push_back(take("response_kernel", "q" + std::to_string(q)));
  std::vector<int> dims(static_cast<size_t>(scm.n) + 1, scm.response_card);
  dims[0] = scm.query_card;
  std::vector<int> a(dims.size(), 0);
  do {
    std::string key = "row " + std::to_string(a[0]);
    for (size_t i = 1; i < a.size(); ++i) key += "," + std::to_string(a[i]);
    scm.collider_kernel.push_back(take("collider_kernel", key));
  } while (next_assignment(a, dims));
  if (!rows.empty())
    throw FormatError("scm file: unused entry '" + rows.begin()->first.second +
                      "' in [" + rows.begin()->first.first + "]");
  scm.validate();
  return scm;
}

inline FiniteScm load_scm_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scm file: " + path);
  return parse_scm_text(in);
}

}  // namespace gcpo
