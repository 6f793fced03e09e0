// Command-line front end: train, scm-verify, and compare.
//
// Exit codes: 0 success (for scm-verify: all checks pass), 1 configuration,
// input, or verification failure, 2 training aborted on a non-finite
// objective or gradient.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "gcpo/config.hpp"
#include "gcpo/metrics.hpp"
#include "gcpo/scm.hpp"
#include "gcpo/trainer.hpp"

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

std::string utc_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::ordered_json verification_json(const gcpo::ScmVerification& v,
                                         const std::string& source,
                                         const gcpo::FiniteScm& scm) {
  nlohmann::ordered_json j;
  j["source"] = source;
  j["query_card"] = scm.query_card;
  j["response_card"] = scm.response_card;
  j["n"] = scm.n;
  j["idempotence_gap"] = v.idempotence_gap;
  j["psi_of_phi_gap"] = v.psi_of_phi_gap;
  j["orthogonality_gap"] = v.orthogonality_gap;
  j["pythagoras_gap"] = v.pythagoras_gap;
  j["bayes_projection_residual"] = v.bayes_projection_residual;
  j["excess_risk_min_delta"] = v.excess_risk_min_delta;
  j["excess_risk_max_gap"] = v.excess_risk_max_gap;
  j["baseline_shift_max_gap"] = v.baseline_shift_max_gap;
  j["cmi_given_q"] = v.cmi_fork;
  j["cmi_given_q_yn"] = v.cmi_collider;
  j["pass"] = v.pass;
  return j;
}

int cmd_train(const std::string& config_path, const std::string& algorithm,
              int64_t seed_override, const std::string& out_dir) {
  gcpo::TrainConfig cfg = gcpo::load_config(config_path);
  if (!algorithm.empty()) {
    if (algorithm == "grpo") cfg.algorithm = gcpo::Algorithm::grpo;
    else if (algorithm == "gcpo") cfg.algorithm = gcpo::Algorithm::gcpo;
    else throw gcpo::ValidationError("--algorithm must be grpo or gcpo");
  }
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  cfg.validate();

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "checkpoints");
  fs::create_directories(fs::path(out_dir) / "reports");

  // The manifest is written before training and never touched again;
  // completion data goes to reports/summary.json.
  {
    nlohmann::ordered_json manifest;
    manifest["artifact_version"] = kArtifactVersion;
    manifest["started_at"] = utc_now();
    manifest["seed"] = cfg.seed;
    manifest["config_path"] = config_path;
    manifest["config"] = gcpo::config_json(cfg);
    manifest["layout"] = {{"metrics", "metrics.jsonl"},
                          {"checkpoints", "checkpoints/"},
                          {"reports", "reports/"}};
    std::ofstream mf(fs::path(out_dir) / "run.json");
    if (!mf) throw gcpo::FormatError("cannot write manifest in " + out_dir);
    mf << manifest.dump(2) << "\n";
  }

  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
  if (!metrics) throw gcpo::FormatError("cannot write metrics in " + out_dir);
  gcpo::TrainHooks hooks;
  hooks.metrics_out = &metrics;
  hooks.checkpoint_dir = (fs::path(out_dir) / "checkpoints").string();
  hooks.report_dir = (fs::path(out_dir) / "reports").string();

  const gcpo::TrainResult result = gcpo::train(cfg, hooks);

  nlohmann::ordered_json summary;
  summary["finished_at"] = utc_now();
  summary["steps"] = cfg.steps;
  summary["final_objective"] = result.metrics.back().objective;
  summary["final_mean_reward"] = result.metrics.back().mean_reward;
  summary["final_pass_at_1"] = result.final_eval.pass_at_1;
  summary["final_eval_mean_reward"] = result.final_eval.mean_reward;
  std::ofstream sf(fs::path(out_dir) / "reports" / "summary.json");
  sf << summary.dump(2) << "\n";
  std::cout << "completed " << cfg.steps << " steps; final pass@1 "
            << result.final_eval.pass_at_1 << "\n";
  return 0;
}

int cmd_scm_verify(const std::string& scm_path, int random_count,
                   uint64_t seed, int predictors) {
  std::vector<std::pair<std::string, gcpo::FiniteScm>> scms;
  if (!scm_path.empty()) {
    scms.emplace_back(scm_path, gcpo::load_scm_file(scm_path));
  } else {
    for (int i = 0; i < random_count; ++i) {
      const int qc = 2 + i % 3;
      const int rc = 2 + (i / 3) % 3;
      const int n = 2 + (i / 9) % 2;
      const uint64_t s = gcpo::derive_seed(seed, gcpo::Stream::scm,
                                           static_cast<uint64_t>(i));
      scms.emplace_back("random:" + std::to_string(i),
                        gcpo::random_scm(qc, rc, n, s));
    }
  }
  nlohmann::ordered_json report;
  report["scm_count"] = scms.size();
  report["predictors_per_scm"] = predictors;
  auto& entries = report["results"] = nlohmann::ordered_json::array();
  bool all = true;
  for (size_t i = 0; i < scms.size(); ++i) {
    const auto v = gcpo::verify_scm(scms[i].second,
                                    seed + static_cast<uint64_t>(i), predictors);
    entries.push_back(verification_json(v, scms[i].first, scms[i].second));
    all = all && v.pass;
  }
  report["pass"] = all;
  std::cout << report.dump(2) << "\n";
  return all ? 0 : 1;
}

int cmd_compare(const std::string& config_a, const std::string& config_b,
                const std::vector<uint64_t>& seeds, const std::string& out_dir) {
  gcpo::TrainConfig a = gcpo::load_config(config_a);
  gcpo::TrainConfig b = gcpo::load_config(config_b);
  const gcpo::CompareReport report = gcpo::run_compare(a, b, seeds);

  std::printf("%-10s %-8s %-10s %-12s %s\n", "arm", "seed", "pass@1",
              "mean_reward", "status");
  for (const auto& row : report.rows) {
    if (row.ok)
      std::printf("%-10s %-8llu %-10.4f %-12.4f ok\n", row.arm.c_str(),
                  static_cast<unsigned long long>(row.seed), row.pass_at_1,
                  row.mean_reward);
    else
      std::printf("%-10s %-8llu %-10s %-12s failed: %s\n", row.arm.c_str(),
                  static_cast<unsigned long long>(row.seed), "-", "-",
                  row.error.c_str());
  }
  std::printf("means: a pass@1=%.4f reward=%.4f | b pass@1=%.4f reward=%.4f\n",
              report.mean_pass_a, report.mean_reward_a, report.mean_pass_b,
              report.mean_reward_b);

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "reports");
    nlohmann::ordered_json j;
    j["config_a"] = config_a;
    j["config_b"] = config_b;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : report.rows) {
      nlohmann::ordered_json r;
      r["arm"] = row.arm;
      r["seed"] = row.seed;
      r["ok"] = row.ok;
      if (row.ok) {
        r["pass_at_1"] = row.pass_at_1;
        r["mean_reward"] = row.mean_reward;
        r["final_objective"] = row.objective;
      } else {
        r["error"] = row.error;
      }
      j["rows"].push_back(r);
    }
    j["mean_pass_a"] = report.mean_pass_a;
    j["mean_pass_b"] = report.mean_pass_b;
    j["mean_reward_a"] = report.mean_reward_a;
    j["mean_reward_b"] = report.mean_reward_b;
    j["all_ok"] = report.all_ok;
    std::ofstream out(fs::path(out_dir) / "reports" / "compare.json");
    out << j.dump(2) << "\n";
  }
  return report.all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"group-relative policy optimization with causal reweighting"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "run the training loop");
  std::string config_path, algorithm, out_dir = "out";
  int64_t seed_override = -1;
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--algorithm", algorithm, "override: grpo or gcpo");
  train->add_option("--seed", seed_override, "override the run seed");
  train->add_option("--out", out_dir, "output directory");

  auto* verify = app.add_subcommand("scm-verify", "check projection identities");
  std::string scm_path;
  int random_count = 0;
  uint64_t verify_seed = 1;
  int predictors = 100;
  verify->add_option("path", scm_path, "scm definition file");
  verify->add_option("--random", random_count, "verify this many random models");
  verify->add_option("--seed", verify_seed, "seed for random models");
  verify->add_option("--predictors", predictors, "predictors per model");

  auto* compare = app.add_subcommand("compare", "run two configs across seeds");
  std::string config_a, config_b, compare_out;
  std::vector<uint64_t> seeds;
  compare->add_option("--config-a", config_a, "first config")->required();
  compare->add_option("--config-b", config_b, "second config")->required();
  compare->add_option("--seeds", seeds, "seed list")
      ->required()
      ->delimiter(',');
  compare->add_option("--out", compare_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed())
      return cmd_train(config_path, algorithm, seed_override, out_dir);
    if (verify->parsed()) {
      if (scm_path.empty() && random_count < 1) {
        std::cerr << "scm-verify needs a file path or --random K\n";
        return 1;
      }
      if (predictors < 1) {
        std::cerr << "--predictors must be >= 1\n";
        return 1;
      }
      return cmd_scm_verify(scm_path, random_count, verify_seed, predictors);
    }
    return cmd_compare(config_a, config_b, seeds, compare_out);
  } catch (const gcpo::NumericError& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
