#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gcpo/loss_graph.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rng.hpp"
#include "gcpo/vocab.hpp"

using namespace gcpo;

namespace {

TokenSeq seq(std::vector<int> ids, Role role = Role::context) {
  return TokenSeq{std::move(ids), role};
}

PolicyParams small_policy(uint64_t seed = 5, int d = 8, int L = 2) {
  return init_policy(d, L, make_task_vocab(), seed, 64);
}

}  // namespace

TEST_CASE("freshly initialized policy is exactly uniform") {
  auto vocab = make_task_vocab();
  auto p = init_policy(16, 2, vocab, 123, 64);
  auto lp = log_prob(p, seq({4, 5, 6}), seq({7, 8, 2}, Role::response));
  REQUIRE(lp.size() == 3);
  double expect = -std::log(static_cast<double>(vocab.size()));
  for (double v : lp) REQUIRE(v == expect);
}

TEST_CASE("init is deterministic and validates arguments") {
  auto vocab = make_task_vocab();
  auto a = init_policy(8, 2, vocab, 77);
  auto b = init_policy(8, 2, vocab, 77);
  REQUIRE(a.w == b.w);
  auto c = init_policy(8, 2, vocab, 78);
  REQUIRE(a.w != c.w);
  REQUIRE_THROWS_AS(init_policy(0, 2, vocab, 1), ValidationError);
  REQUIRE_THROWS_AS(init_policy(8, 0, vocab, 1), ValidationError);
  for (double w : a.w) REQUIRE(w == f32_round(w));
}

TEST_CASE("log_prob distributions normalize and chain") {
  auto p = small_policy(9);
  // Perturb away from the all-uniform init so the test is not vacuous.
  Rng r(derive_seed(3, Stream::test));
  for (auto& w : p.w) w = f32_round(w + 0.05 * r.normal());

  auto fwd = policy_score_path(p, std::vector<int>{4, 14, 5}, std::vector<int>{16, 6, 2});
  REQUIRE(fwd.cont_logps.size() == 3);
  const int V = p.dims.vocab_size;
  for (size_t pos = 0; pos < 3; ++pos) {
    double sum = 0.0;
    for (int t = 0; t < V; ++t) sum += fwd.pred_probs[pos * V + t];
    REQUIRE(std::abs(sum - 1.0) < 1e-6);
  }
  double total = 0.0;
  for (double v : fwd.cont_logps) total += v;
  REQUIRE(std::isfinite(total));
  REQUIRE(total < 0.0);

  REQUIRE(log_prob(p, seq({4, 5}), seq({})).empty());
  REQUIRE_THROWS_AS(log_prob(p, seq(std::vector<int>(70, 4)), seq({5})), LengthError);
}

TEST_CASE("sampling is deterministic, respects max_len and greedy mode") {
  auto params = small_policy(21);
  Rng r(derive_seed(4, Stream::test));
  for (auto& w : params.w) w = f32_round(w + 0.2 * r.normal());
  PolicySnapshot snap{params, 1};

  auto a = sample(snap, seq({4, 14, 5, 15}), 12, 1.0, 999);
  auto b = sample(snap, seq({4, 14, 5, 15}), 12, 1.0, 999);
  REQUIRE(a.ids == b.ids);
  REQUIRE(a.role == Role::response);
  REQUIRE(a.ids.size() <= 12);
  if (a.ids.size() < 12) REQUIRE(a.ids.back() == 2);

  auto c = sample(snap, seq({4}), 1, 1.0, 5);
  REQUIRE(c.ids.size() == 1);

  auto g1 = sample(snap, seq({4, 14, 5, 15}), 8, 0.0, 1);
  auto g2 = sample(snap, seq({4, 14, 5, 15}), 8, 0.0, 77);
  REQUIRE(g1.ids == g2.ids);  // greedy ignores the seed

  REQUIRE_THROWS_AS(sample(snap, seq({4}), 8, -1.0, 1), ValidationError);

  for (int trial = 0; trial < 20; ++trial) {
    auto s = sample(snap, seq({4, 14}), 10, 1.0, 1000 + trial);
    for (int id : s.ids) {
      REQUIRE(id != 0);
      REQUIRE(id != 1);
      REQUIRE(id != 3);
    }
  }
}

TEST_CASE("sampling from a shared prefix state replays the direct path") {
  auto params = small_policy(31);
  Rng r(derive_seed(6, Stream::test));
  for (auto& w : params.w) w = f32_round(w + 0.2 * r.normal());
  PolicySnapshot snap{params, 1};
  std::vector<int> ctx = {4, 14, 5, 15, 16};

  HiddenRep rep_direct;
  auto direct = sample(snap, seq(ctx), 10, 0.7, 424242, &rep_direct);

  SeqState base = prefill(params, ctx);
  SeqState branch = base;  // copy, then extend independently
  Rng gen(424242);
  HiddenRep rep_shared;
  auto shared = sample_from_state(params, branch, 10, 0.7, gen, &rep_shared);
  REQUIRE(direct.ids == shared.ids);
  REQUIRE(rep_direct == rep_shared);

  // The rep equals final_hidden over the whole sequence.
  std::vector<int> whole = ctx;
  whole.insert(whole.end(), direct.ids.begin(), direct.ids.end());
  auto rep_full = final_hidden(params, seq(whole));
  REQUIRE(rep_direct == rep_full);

  // The base state is untouched by the branch.
  REQUIRE(base.len == static_cast<int>(ctx.size()) + 1);
}

TEST_CASE("final_hidden shape, determinism and sensitivity") {
  auto p = small_policy(41);
  Rng r(derive_seed(8, Stream::test));
  for (auto& w : p.w) w = f32_round(w + 0.3 * r.normal());
  auto h1 = final_hidden(p, seq({4, 5, 6}));
  auto h2 = final_hidden(p, seq({4, 5, 6}));
  REQUIRE(h1.size() == static_cast<size_t>(p.dims.d));
  REQUIRE(h1 == h2);
  for (double v : h1) REQUIRE(std::isfinite(v));
  auto h3 = final_hidden(p, seq({4, 5, 7}));
  REQUIRE(h1 != h3);
  REQUIRE_THROWS_AS(final_hidden(p, seq({})), ValidationError);
}

TEST_CASE("snapshot isolation") {
  auto params = small_policy(51);
  PolicySnapshot snap{params, 3};
  auto before = sample(snap, seq({4, 14, 5}), 6, 1.0, 11);
  auto lp_before = log_prob(snap.params, seq({4}), seq({5, 6}));
  for (auto& w : params.w) w += 1.0;
  auto after = sample(snap, seq({4, 14, 5}), 6, 1.0, 11);
  auto lp_after = log_prob(snap.params, seq({4}), seq({5, 6}));
  REQUIRE(before.ids == after.ids);
  REQUIRE(lp_before == lp_after);
}

TEST_CASE("checkpoint round-trip is bit-exact and guarded") {
  auto vocab = make_task_vocab();
  auto p = init_policy(8, 2, vocab, 99, 64);
  Rng r(derive_seed(12, Stream::test));
  for (auto& w : p.w) w = f32_round(w + 0.1 * r.normal());

  auto dir = std::filesystem::temp_directory_path() / "gcpo_policy_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "model.ckpt").string();
  save_checkpoint(p, path);
  auto q = load_checkpoint(path, vocab, 64);
  REQUIRE(p.w == q.w);
  REQUIRE(q.dims.d == 8);
  REQUIRE(q.dims.layers == 2);

  Vocab other = vocab;
  other.tokens.push_back("!");
  REQUIRE_THROWS_AS(load_checkpoint(path, other, 64), FormatError);

  auto trunc_path = (dir / "trunc.ckpt").string();
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    std::ofstream outf(trunc_path, std::ios::binary);
    outf.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  REQUIRE_THROWS_AS(load_checkpoint(trunc_path, vocab, 64), FormatError);

  auto bad_path = (dir / "bad.ckpt").string();
  {
    std::ofstream outf(bad_path, std::ios::binary);
    outf << "NOTACKPT\n";
  }
  REQUIRE_THROWS_AS(load_checkpoint(bad_path, vocab, 64), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("loss graph: constant loss has zero gradient") {
  auto p = small_policy(61);
  LossGraph g;
  g.set_root(g.tape().constant(3.5));
  std::vector<double> grad(p.dims.param_count(), 0.0);
  REQUIRE(g.value_and_grad(p, grad) == 3.5);
  for (double v : grad) REQUIRE(v == 0.0);
}

TEST_CASE("loss graph: half squared norm has gradient equal to params") {
  auto p = small_policy(62, 4, 1);
  Rng r(derive_seed(13, Stream::test));
  for (auto& w : p.w) w = f32_round(w + 0.1 * r.normal());
  LossGraph g;
  Tape::Var acc = g.tape().constant(0.0);
  for (size_t i = 0; i < p.w.size(); ++i) {
    auto v = g.param(i);
    acc = g.tape().add(acc, g.tape().mul(v, v));
  }
  g.set_root(g.tape().mul_const(acc, 0.5));
  std::vector<double> grad(p.dims.param_count(), 0.0);
  double loss = g.value_and_grad(p, grad);
  double expect = 0.0;
  for (double w : p.w) expect += 0.5 * w * w;
  REQUIRE(loss == Catch::Approx(expect).epsilon(1e-12));
  for (size_t i = 0; i < p.w.size(); ++i)
    REQUIRE(grad[i] == Catch::Approx(p.w[i]).margin(1e-15));
}

TEST_CASE("loss graph: batch NLL gradient matches finite differences") {
  auto p = small_policy(63);
  Rng r(derive_seed(14, Stream::test));
  for (auto& w : p.w) w = f32_round(w + 0.25 * r.normal());

  LossGraph g;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> batch = {
      {{4, 14, 5, 15}, {16, 6, 2}},
      {{7, 14, 8, 15}, {16, 9, 2}},
      {{4, 14, 4, 15}, {16, 12, 7, 2}},
  };
  Tape::Var acc = g.tape().constant(0.0);
  int total = 0;
  for (auto& [ctx, cont] : batch) {
    int path = g.add_path(ctx, cont);
    for (size_t j = 0; j < cont.size(); ++j) {
      acc = g.tape().add(acc, g.token_logp(path, static_cast<int>(j)));
      ++total;
    }
  }
  g.set_root(g.tape().mul_const(acc, -1.0 / total));

  std::vector<double> grad(p.dims.param_count(), 0.0);
  double loss = g.value_and_grad(p, grad);
  REQUIRE(std::isfinite(loss));
  REQUIRE(loss > 0.0);

  Rng pick(derive_seed(15, Stream::test));
  const double h = 1e-4;
  int checked = 0;
  while (checked < 50) {
    size_t idx = pick.next_u64() % p.w.size();
    if (std::abs(grad[idx]) < 1e-7) continue;
    PolicyParams pp = p;
    pp.w[idx] = p.w[idx] + h;
    double up = g.value(pp);
    pp.w[idx] = p.w[idx] - h;
    double dn = g.value(pp);
    double fd = (up - dn) / (2 * h);
    REQUIRE(std::abs(grad[idx] - fd) <= 1e-4 * std::max(std::abs(fd), std::abs(grad[idx])));
    ++checked;
  }
}
