#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "gcpo/scm.hpp"

using namespace gcpo;

namespace {

// f measurable in (q, y_1): values q + 2*y_1 on the XOR table.
Predictor sstar_measurable() {
  Predictor f;
  f.cond = {0, 2};
  f.values = {0.0, 2.0, 1.0, 3.0};
  return f;
}

Predictor collider_only(double hi) {
  Predictor f;
  f.cond = {3};
  f.values = {0.0, hi};
  return f;
}

}  // namespace

TEST_CASE("xor joint enumerates eight eighth-mass cells") {
  auto t = build_joint(xor_collider_scm());
  REQUIRE(t.dims == std::vector<int>{2, 2, 2, 2});
  REQUIRE(t.cells() == 16);
  int nonzero = 0;
  std::vector<int> a(4, 0);
  do {
    const double p = t.probs[t.index(a)];
    if (a[3] == (a[1] ^ a[2])) {
      REQUIRE(p == 0.125);
      ++nonzero;
    } else {
      REQUIRE(p == 0.0);
    }
  } while (next_assignment(a, t.dims));
  REQUIRE(nonzero == 8);
}

TEST_CASE("point-mass scm concentrates the joint on one cell") {
  FiniteScm scm;
  scm.query_card = 1;
  scm.response_card = 2;
  scm.n = 2;
  scm.query_prior = {1.0};
  scm.response_kernel = {{1.0, 0.0}};
  scm.collider_kernel.assign(4, {0.0, 1.0});
  auto t = build_joint(scm);
  REQUIRE(t.probs[t.index({0, 0, 0, 1})] == 1.0);
  double rest = 0.0;
  for (size_t i = 0; i < t.cells(); ++i)
    if (i != t.index({0, 0, 0, 1})) rest += t.probs[i];
  REQUIRE(rest == 0.0);
  REQUIRE(cond_expect(t, 1, {{0, 0}}) == 0.0);
}

TEST_CASE("invalid scm rows are rejected") {
  auto scm = xor_collider_scm();
  scm.query_prior = {0.6, 0.6};
  REQUIRE_THROWS_AS(build_joint(scm), ValidationError);
  scm = xor_collider_scm();
  scm.response_kernel[0] = {1.2, -0.2};
  REQUIRE_THROWS_AS(build_joint(scm), ValidationError);
  scm = xor_collider_scm();
  scm.collider_kernel.pop_back();
  REQUIRE_THROWS_AS(build_joint(scm), ValidationError);
  scm = xor_collider_scm();
  scm.n = 1;
  REQUIRE_THROWS_AS(build_joint(scm), ValidationError);
}

TEST_CASE("cell budget bounds the joint size") {
  REQUIRE_THROWS_AS(build_joint(xor_collider_scm(), 8), SizeError);
  REQUIRE_NOTHROW(build_joint(xor_collider_scm(), 16));
}

TEST_CASE("conditional expectations on the xor table are exact") {
  auto t = build_joint(xor_collider_scm());
  REQUIRE(cond_expect(t, 1, {{0, 0}}) == 0.5);
  REQUIRE(cond_expect(t, 1, {{0, 0}, {2, 1}, {3, 1}}) == 0.0);
  REQUIRE(cond_expect(t, 1, {{0, 0}, {2, 1}, {3, 0}}) == 1.0);
  const std::vector<double> pm{-1.0, 1.0};
  REQUIRE(cond_expect(t, 1, {{0, 1}}, &pm) == 0.0);
  REQUIRE_THROWS_AS(cond_expect(t, 1, {{1, 0}, {2, 0}, {3, 1}}),
                    ConditioningError);
}

TEST_CASE("projection fixes measurable functions and averages the collider") {
  auto t = build_joint(xor_collider_scm());
  auto f = sstar_measurable();
  auto phi = project_phi(f, t);
  REQUIRE(phi.cond == std::vector<int>{0, 2});
  REQUIRE(phi.values == f.values);
  auto psi = project_psi(f, t);
  for (double v : psi.values) REQUIRE(v == 0.0);

  auto g = collider_only(1.0);
  auto phig = project_phi(g, t);
  for (double v : phig.values) REQUIRE(v == 0.5);
  auto psig = project_psi(g, t);
  REQUIRE(psig.cond == std::vector<int>{0, 2, 3});
  const double norm_sq = joint_expect(t, [&](const std::vector<int>& a) {
    const double v = psig.eval(a, t.dims);
    return v * v;
  });
  REQUIRE(norm_sq == 0.25);
}

TEST_CASE("projection is idempotent and its complement annihilates it") {
  auto t = build_joint(xor_collider_scm());
  auto g = collider_only(3.0);
  auto phi = project_phi(g, t);
  auto phi2 = project_phi(phi, t);
  REQUIRE(phi2.values == phi.values);
  auto psi_of_phi = project_psi(phi, t);
  for (double v : psi_of_phi.values) REQUIRE(v == 0.0);
}

TEST_CASE("risk gap identity holds for a scaled collider predictor") {
  auto t = build_joint(xor_collider_scm());
  auto f = collider_only(2.0);
  auto r = verify_excess_risk_identity(f, t);
  REQUIRE(r.delta == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(r.phi_residual_sq == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(r.identity_gap <= 1e-12);
  REQUIRE(r.identity_holds);
}

TEST_CASE("baseline gap identity fails off the measurable class") {
  // For f = y_n on the XOR table the closed form would claim +0.25, but the
  // cross term E[Psi(f - f*) Psi f] is -0.5, so the true gap is -0.25.
  auto t = build_joint(xor_collider_scm());
  auto f = collider_only(1.0);
  auto r = verify_baseline_shift_identity(f, t);
  REQUIRE(r.delta == Catch::Approx(-0.25).margin(1e-12));
  REQUIRE(r.psi_norm_sq == Catch::Approx(0.25).margin(1e-12));
  REQUIRE_FALSE(r.identity_holds);
}

TEST_CASE("baseline gap identity holds on the measurable perturbation class") {
  auto t = build_joint(xor_collider_scm());
  auto fstar = bayes_predictor(t);
  auto g = sstar_measurable();
  Predictor f = fstar;
  std::vector<int> sub_dims;
  for (int v : f.cond) sub_dims.push_back(t.dims[static_cast<size_t>(v)]);
  std::vector<int> sub(f.cond.size(), 0), a(t.dims.size(), 0);
  do {
    for (size_t i = 0; i < f.cond.size(); ++i)
      a[static_cast<size_t>(f.cond[i])] = sub[i];
    f.values[f.slot(a, t.dims)] += g.eval(a, t.dims);
  } while (next_assignment(sub, sub_dims));
  auto r = verify_baseline_shift_identity(f, t);
  REQUIRE(r.identity_gap <= 1e-12);
  REQUIRE(r.identity_holds);
}

TEST_CASE("collider conditioning manufactures exactly one bit") {
  auto t = build_joint(xor_collider_scm());
  auto [fork, collider] = verify_collider_dependence(t);
  REQUIRE(fork == 0.0);
  REQUIRE(collider == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("random scms are replayable, valid, and pass verification") {
  auto s1 = random_scm(3, 4, 2, 42);
  auto s2 = random_scm(3, 4, 2, 42);
  REQUIRE(s1.query_prior == s2.query_prior);
  REQUIRE(s1.response_kernel == s2.response_kernel);
  REQUIRE(s1.collider_kernel == s2.collider_kernel);
  REQUIRE_NOTHROW(s1.validate());
  auto v = verify_scm(s1, 42, 25);
  REQUIRE(v.pass);
  REQUIRE(v.excess_risk_min_delta >= -1e-10);
  REQUIRE(v.excess_risk_max_gap <= 1e-8);
  REQUIRE(v.baseline_shift_max_gap <= 1e-8);
  REQUIRE(v.cmi_fork <= 1e-10);
}

TEST_CASE("xor scm verification reports the manufactured bit") {
  auto v = verify_scm(xor_collider_scm(), 7, 25);
  REQUIRE(v.pass);
  REQUIRE(v.cmi_collider == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(v.bayes_projection_residual <= 1e-10);
}

TEST_CASE("scm file loader round-trips the xor model") {
  auto scm = load_scm_file("scms/xor_collider.scm");
  auto want = xor_collider_scm();
  REQUIRE(scm.query_card == want.query_card);
  REQUIRE(scm.response_card == want.response_card);
  REQUIRE(scm.n == want.n);
  REQUIRE(scm.query_prior == want.query_prior);
  REQUIRE(scm.response_kernel == want.response_kernel);
  REQUIRE(scm.collider_kernel == want.collider_kernel);
}

TEST_CASE("loader renormalizes slightly off rows and rejects bad input") {
  const std::string base =
      "[scm]\nquery_card = 2\nresponse_card = 2\nn = 2\n"
      "[response_kernel]\nq0 = 0.5 0.5\nq1 = 0.5 0.5\n"
      "[collider_kernel]\n"
      "row 0,0,0 = 1 0\nrow 0,0,1 = 0 1\nrow 0,1,0 = 0 1\nrow 0,1,1 = 1 0\n"
      "row 1,0,0 = 1 0\nrow 1,0,1 = 0 1\nrow 1,1,0 = 0 1\nrow 1,1,1 = 1 0\n";
  {
    std::istringstream in("[query_prior]\np = 0.5 0.4999999999\n" + base);
    auto scm = parse_scm_text(in);
    REQUIRE(scm.query_prior[0] + scm.query_prior[1] ==
            Catch::Approx(1.0).margin(1e-15));
    REQUIRE(scm.query_prior[0] == Catch::Approx(0.5 / 0.9999999999).margin(1e-15));
  }
  {
    std::istringstream in("[query_prior]\np = 0.5 0.49999\n" + base);
    REQUIRE_THROWS_AS(parse_scm_text(in), FormatError);
  }
  {
    std::istringstream in("[query_prior]\np = 0.5 -0.5\n" + base);
    REQUIRE_THROWS_AS(parse_scm_text(in), FormatError);
  }
  {
    std::istringstream in("p = 0.5 0.5\n[query_prior]\np = 0.5 0.5\n" + base);
    REQUIRE_THROWS_AS(parse_scm_text(in), FormatError);
  }
  {
    std::istringstream in("[query_prior]\np = 0.5 0.5\np = 0.5 0.5\n" + base);
    REQUIRE_THROWS_AS(parse_scm_text(in), FormatError);
  }
  {
    // missing one collider row
    std::string trimmed = base.substr(0, base.rfind("row 1,1,1"));
    std::istringstream in("[query_prior]\np = 0.5 0.5\n" + trimmed);
    REQUIRE_THROWS_AS(parse_scm_text(in), FormatError);
  }
  {
    std::istringstream in("[query_prior]\nextra = 1.0\np = 0.5 0.5\n" + base);
    REQUIRE_THROWS_AS(parse_scm_text(in), FormatError);
  }
  {
    std::istringstream in("[scm]\nbogus = 3\n[query_prior]\np = 0.5 0.5\n" + base);
    REQUIRE_THROWS_AS(parse_scm_text(in), FormatError);
  }
}
