#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "todkit/harness.hpp"

namespace todkit {

// Canned experiment definitions with pass/fail assertions. Experiments share
// one sweep cache directory, so a grid cell computed by one experiment is
// reused by every other experiment that needs it.

struct ExperimentAssertion {
  std::string metric;
  std::string comparator;  // ">=", "<="
  double measured = 0;
  double threshold = 0;
  bool pass = false;
};

struct Verdict {
  std::string name;
  std::vector<ExperimentAssertion> assertions;

  bool all_pass() const {
    for (const auto& a : assertions)
      if (!a.pass) return false;
    return true;
  }
};

struct Experiment {
  std::string name;
  std::string description;
  std::string budget;  // human-readable runtime expectation
  std::function<Verdict(const Ontology&, const std::filesystem::path& workdir)> run;
  // Grid summary used by the dry-run validator.
  std::vector<PolicyKind> kinds;
  std::vector<int> budgets;
  std::vector<std::string> sources;
};

// The shared protocol: long training (10000 steps), batch 64, lr 0.001,
// dropout 0.1, 10 restarts, 500 evaluation dialogues, fixed seeds.
inline SweepConfig experiment_base_config() {
  SweepConfig cfg;
  cfg.train.max_steps = 10000;
  cfg.train.eval_every = 0;  // evaluate the final checkpoint
  cfg.train.batch_size = 64;
  cfg.train.lr = 0.001;
  cfg.train.dropout = 0.1;
  cfg.restarts = 10;
  cfg.eval_dialogues = 500;
  return cfg;
}

inline SourceSpec clean_source() {
  SourceSpec s;
  s.name = "clean";
  s.expert = ExpertConfig{};
  return s;
}

inline SourceSpec noisy_source(double noise_rate = 0.3) {
  SourceSpec s;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "noisy%02d", static_cast<int>(noise_rate * 100 + 0.5));
  s.name = buf;
  s.expert = ExpertConfig{};
  s.expert.noise_rate = noise_rate;
  s.expert.seed = 40;
  return s;
}

namespace detail {

inline double mean_success(const std::vector<EvalResult>& finals) {
  std::vector<double> values;
  for (const EvalResult& e : finals) values.push_back(e.success);
  return summarize_runs(values).mean;
}

inline ExperimentAssertion make_assertion(const std::string& metric, const std::string& cmp,
                                          double measured, double threshold) {
  ExperimentAssertion a{metric, cmp, measured, threshold, false};
  a.pass = cmp == ">=" ? measured >= threshold : measured <= threshold;
  return a;
}

}  // namespace detail

inline std::vector<Experiment> experiment_registry() {
  std::vector<Experiment> reg;

  {
    Experiment e;
    e.name = "expert-sanity";
    e.description = "hand-crafted expert vs user simulator on 500 seeded dialogues";
    e.budget = "< 2 min";
    e.sources = {"expert"};
    e.run = [](const Ontology& ont, const std::filesystem::path&) {
      SweepConfig cfg = experiment_base_config();
      Database db = generate_database(ont, cfg.db_seed, cfg.per_domain);
      EvalResult r = evaluate(expert_provider(), ont, db, cfg.eval_dialogues, cfg.eval_seed,
                              cfg.max_turns);
      Verdict v;
      v.name = "expert-sanity";
      v.assertions.push_back(detail::make_assertion("success", ">=", r.success, 0.95));
      v.assertions.push_back(detail::make_assertion("complete", ">=", r.complete, 0.97));
      return v;
    };
    reg.push_back(std::move(e));
  }

  {
    Experiment e;
    e.name = "bc-fidelity";
    e.description =
        "shared-GNN policy cloned from 1000 clean demonstrations stays within "
        "5 points of the expert's own success";
    e.budget = "< 30 min";
    e.kinds = {PolicyKind::kUhgnn};
    e.budgets = {1000};
    e.sources = {"clean"};
    e.run = [](const Ontology& ont, const std::filesystem::path& workdir) {
      SweepConfig cfg = experiment_base_config();
      Sweep sweep(cfg, ont, workdir);
      EvalResult expert = evaluate(expert_provider(), ont, sweep.db(), cfg.eval_dialogues,
                                   cfg.eval_seed, cfg.max_turns);
      double mean =
          detail::mean_success(sweep.run_cell(PolicyKind::kUhgnn, clean_source(), 1000));
      Verdict v;
      v.name = "bc-fidelity";
      v.assertions.push_back(
          detail::make_assertion("success", ">=", mean, expert.success - 0.05));
      return v;
    };
    reg.push_back(std::move(e));
  }

  {
    Experiment e;
    e.name = "fewshot-clean";
    e.description = "shared-GNN policy reaches 80% success from 50 clean demonstrations";
    e.budget = "< 15 min";
    e.kinds = {PolicyKind::kUhgnn};
    e.budgets = {50};
    e.sources = {"clean"};
    e.run = [](const Ontology& ont, const std::filesystem::path& workdir) {
      SweepConfig cfg = experiment_base_config();
      Sweep sweep(cfg, ont, workdir);
      double mean =
          detail::mean_success(sweep.run_cell(PolicyKind::kUhgnn, clean_source(), 50));
      Verdict v;
      v.name = "fewshot-clean";
      v.assertions.push_back(detail::make_assertion("success", ">=", mean, 0.80));
      return v;
    };
    reg.push_back(std::move(e));
  }

  {
    Experiment e;
    e.name = "structure-ladder";
    e.description =
        "at the 10-dialogue budget mean success orders uhgnn >= hgnn >= hfnn >= fnn "
        "with 5-point slack";
    e.budget = "< 30 min";
    e.kinds = {PolicyKind::kUhgnn, PolicyKind::kHgnn, PolicyKind::kHfnn, PolicyKind::kFnn};
    e.budgets = {10};
    e.sources = {"clean"};
    e.run = [](const Ontology& ont, const std::filesystem::path& workdir) {
      SweepConfig cfg = experiment_base_config();
      Sweep sweep(cfg, ont, workdir);
      SourceSpec clean = clean_source();
      double uhgnn = detail::mean_success(sweep.run_cell(PolicyKind::kUhgnn, clean, 10));
      double hgnn = detail::mean_success(sweep.run_cell(PolicyKind::kHgnn, clean, 10));
      double hfnn = detail::mean_success(sweep.run_cell(PolicyKind::kHfnn, clean, 10));
      double fnn = detail::mean_success(sweep.run_cell(PolicyKind::kFnn, clean, 10));
      Verdict v;
      v.name = "structure-ladder";
      v.assertions.push_back(
          detail::make_assertion("success_uhgnn_vs_hgnn", ">=", uhgnn, hgnn - 0.05));
      v.assertions.push_back(
          detail::make_assertion("success_hgnn_vs_hfnn", ">=", hgnn, hfnn - 0.05));
      v.assertions.push_back(
          detail::make_assertion("success_hfnn_vs_fnn", ">=", hfnn, fnn - 0.05));
      return v;
    };
    reg.push_back(std::move(e));
  }

  {
    Experiment e;
    e.name = "noise-gap";
    e.description =
        "policies cloned from noisy demonstrations never beat clean ones at the "
        "10- and 100-dialogue budgets";
    e.budget = "< 30 min";
    e.kinds = {PolicyKind::kUhgnn};
    e.budgets = {10, 100};
    e.sources = {"clean", "noisy30"};
    e.run = [](const Ontology& ont, const std::filesystem::path& workdir) {
      SweepConfig cfg = experiment_base_config();
      Sweep sweep(cfg, ont, workdir);
      SourceSpec clean = clean_source();
      SourceSpec noisy = noisy_source(0.3);
      Verdict v;
      v.name = "noise-gap";
      for (int budget : {10, 100}) {
        double c = detail::mean_success(sweep.run_cell(PolicyKind::kUhgnn, clean, budget));
        double n = detail::mean_success(sweep.run_cell(PolicyKind::kUhgnn, noisy, budget));
        v.assertions.push_back(detail::make_assertion(
            "noisy_success_at_" + std::to_string(budget), "<=", n, c));
      }
      return v;
    };
    reg.push_back(std::move(e));
  }

  {
    Experiment e;
    e.name = "efficiency-short";
    e.description =
        "short protocol (1000 steps, checkpoints every 100) over 10/100/1000 "
        "dialogues for all four kinds; the structured policy should not lose "
        "to the flat one at the largest budget";
    e.budget = "< 45 min";
    e.kinds = {PolicyKind::kUhgnn, PolicyKind::kHgnn, PolicyKind::kHfnn, PolicyKind::kFnn};
    e.budgets = {10, 100, 1000};
    e.sources = {"clean"};
    e.run = [](const Ontology& ont, const std::filesystem::path& workdir) {
      SweepConfig cfg = experiment_base_config();
      cfg.train.max_steps = 1000;
      cfg.train.eval_every = 100;
      cfg.eval_dialogues = 100;
      Sweep sweep(cfg, ont, workdir / "short");
      SourceSpec clean = clean_source();
      double fnn = 0, uhgnn = 0;
      for (PolicyKind kind : {PolicyKind::kUhgnn, PolicyKind::kHgnn, PolicyKind::kHfnn,
                              PolicyKind::kFnn}) {
        for (int budget : {10, 100, 1000}) {
          double mean = detail::mean_success(sweep.run_cell(kind, clean, budget));
          if (kind == PolicyKind::kFnn && budget == 1000) fnn = mean;
          if (kind == PolicyKind::kUhgnn && budget == 1000) uhgnn = mean;
        }
      }
      Verdict v;
      v.name = "efficiency-short";
      v.assertions.push_back(
          detail::make_assertion("success_uhgnn_vs_fnn_at_1000", ">=", uhgnn, fnn - 0.05));
      return v;
    };
    reg.push_back(std::move(e));
  }

  return reg;
}

inline const Experiment& find_experiment(const std::string& name) {
  static const std::vector<Experiment> reg = experiment_registry();
  for (const Experiment& e : reg)
    if (e.name == name) return e;
  throw std::runtime_error("unknown experiment '" + name + "'");
}

inline std::string format_verdict(const Verdict& v) {
  std::string out;
  for (const ExperimentAssertion& a : v.assertions) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s %s %.6f %.6f\n", a.pass ? "PASS" : "FAIL",
                  a.metric.c_str(), a.measured, a.threshold);
    out += buf;
  }
  return out;
}

inline Verdict run_experiment(const std::string& name, const Ontology& ont,
                              const std::filesystem::path& workdir,
                              const std::filesystem::path& verdict_path = {}) {
  const Experiment& e = find_experiment(name);
  std::filesystem::create_directories(workdir);
  Verdict v = e.run(ont, workdir);
  if (!verdict_path.empty()) {
    std::ofstream out(verdict_path);
    out << format_verdict(v);
  }
  return v;
}

}  // namespace todkit
