#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "metric_fixtures.hpp"
#include "test_util.hpp"
#include "todkit/harness.hpp"

using namespace todkit;
namespace fs = std::filesystem;

TEST_CASE("metric evaluator matches ten hand-computed dialogues") {
  Ontology ont = test::tiny_ontology();
  Database db = test::fixture_db();
  std::vector<test::MetricFixture> fixtures = test::metric_fixtures();
  REQUIRE(fixtures.size() == 10);

  std::vector<DialogueMetrics> all;
  for (const test::MetricFixture& f : fixtures) {
    CAPTURE(f.name);
    DialogueMetrics m = evaluate_episode(f.record, ont, db);
    CHECK(m.inform_precision() == doctest::Approx(f.precision).epsilon(1e-12));
    CHECK(m.inform_recall() == doctest::Approx(f.recall).epsilon(1e-12));
    CHECK(m.inform_f1() == doctest::Approx(f.f1).epsilon(1e-12));
    CHECK(m.success() == f.success);
    CHECK(m.complete == f.complete);
    CHECK(m.book_tasks == f.book_tasks);
    CHECK(m.books_satisfied == f.books_satisfied);
    // success implies recall 1 and every booking satisfied, by definition
    if (m.success()) {
      CHECK(m.inform_recall() == 1.0);
      CHECK(m.books_satisfied == m.book_tasks);
    }
    all.push_back(m);
  }

  EvalResult got = summarize(all);
  EvalResult want = test::expected_fixture_summary();
  CHECK(got.success == doctest::Approx(want.success).epsilon(1e-12));
  CHECK(got.complete == doctest::Approx(want.complete).epsilon(1e-12));
  CHECK(got.book_rate == doctest::Approx(want.book_rate).epsilon(1e-12));
  CHECK(got.inform_p == doctest::Approx(want.inform_p).epsilon(1e-12));
  CHECK(got.inform_r == doctest::Approx(want.inform_r).epsilon(1e-12));
  CHECK(got.inform_f1 == doctest::Approx(want.inform_f1).epsilon(1e-12));
  CHECK(got.avg_turns_all == doctest::Approx(want.avg_turns_all).epsilon(1e-12));
  CHECK(got.avg_turns_succ == doctest::Approx(want.avg_turns_succ).epsilon(1e-12));
}

TEST_CASE("demo collection is deterministic and keeps winners only") {
  const Ontology& ont = test::default_ontology();
  const Database& db = test::default_db();

  ExpertConfig clean;
  DemoCorpus a = collect_demos(ont, db, clean, 50, 3);
  DemoCorpus b = collect_demos(ont, db, clean, 50, 3);
  CHECK(corpus_to_string(a) == corpus_to_string(b));
  CHECK(a.dialogues.size() == 50);
  CHECK(a.source == "simulated-expert");

  for (const Dialogue& d : a.dialogues) {
    EpisodeRecord rec;
    rec.goal = d.goal;
    rec.turns = d.turns;
    // Rebuild the outcome by replay, then re-check the winner filter.
    DialogueState state = init_state(ont, db);
    for (const Exchange& ex : d.turns) {
      apply_user_acts(state, ex.user_acts, ont, db);
      apply_system_act(state, ex.system_act, ont, db);
      if (ex.system_act.intent == SysIntent::kBook) {
        DomainOutcome& oc = rec.outcome[ex.system_act.domain];
        if (!oc.booked_entity) {
          oc.booked_entity = state.domain(ex.system_act.domain).offered;
          oc.booked_params = state.domain(ex.system_act.domain).booking_info;
        }
      }
    }
    for (const auto& [name, dg] : d.goal.domains) {
      rec.outcome[name].offered = state.domain(name).offered;
      rec.outcome[name].booked = state.domain(name).booked;
    }
    rec.complete = true;
    CHECK(evaluate_episode(rec, ont, db).success());
    for (const Exchange& ex : d.turns) {
      (void)ex;
      CHECK(true);
    }
  }

  SUBCASE("smaller collections are prefixes of larger ones") {
    DemoCorpus small = collect_demos(ont, db, clean, 10, 3);
    for (int i = 0; i < 10; ++i) {
      std::ostringstream sa, sb;
      write_dialogue(sa, small.dialogues[static_cast<std::size_t>(i)]);
      write_dialogue(sb, a.dialogues[static_cast<std::size_t>(i)]);
      CHECK(sa.str() == sb.str());
    }
  }

  SUBCASE("a noisier expert needs more attempts for the same yield") {
    ExpertConfig noisy;
    noisy.noise_rate = 0.3;
    noisy.seed = 40;
    DemoCorpus n = collect_demos(ont, db, noisy, 50, 3);
    CHECK(n.dialogues.size() == 50);
    CHECK(n.attempts_used > a.attempts_used);
    CHECK(n.source == "noisy-expert");
  }
}

TEST_CASE("corpus files round-trip and tolerate foreign content") {
  const Ontology& ont = test::default_ontology();
  const Database& db = test::default_db();
  ExpertConfig clean;
  DemoCorpus corpus = collect_demos(ont, db, clean, 12, 5);

  SUBCASE("write -> load -> write is lossless") {
    std::string text = corpus_to_string(corpus);
    std::istringstream in(text);
    CorpusLoadReport report;
    DemoCorpus loaded = load_corpus(in, ont, &report);
    CHECK(report.dropped_acts == 0);
    CHECK(report.skipped_dialogues == 0);
    CHECK(corpus_to_string(loaded) == text);
  }

  SUBCASE("a multi-act system turn splits into consecutive single-act turns") {
    std::string text =
        R"({"goal": [{"domain": "restaurant", "find": {"food": "thai"}, "requests": ["phone"]}]}
{"turn": 0, "speaker": "user", "acts": [{"intent": "inform", "domain": "restaurant", "slot": "food", "value": "thai"}]}
{"turn": 0, "speaker": "system", "acts": [{"intent": "request", "domain": "restaurant", "slot": "area"}, {"intent": "request", "domain": "restaurant", "slot": "pricerange"}]}
)";
    std::istringstream in(text);
    DemoCorpus loaded = load_corpus(in, ont);
    REQUIRE(loaded.dialogues.size() == 1);
    REQUIRE(loaded.dialogues[0].turns.size() == 2);
    CHECK(loaded.dialogues[0].turns[0].system_act.slot == "area");
    CHECK(loaded.dialogues[0].turns[0].user_acts.size() == 1);
    CHECK(loaded.dialogues[0].turns[1].system_act.slot == "pricerange");
    CHECK(loaded.dialogues[0].turns[1].user_acts.empty());
  }

  SUBCASE("unknown domains are skipped with a report, not fatal") {
    std::string text =
        R"({"goal": [{"domain": "police", "find": {}, "requests": []}]}
{"turn": 0, "speaker": "user", "acts": [{"intent": "inform", "domain": "police", "slot": "area", "value": "x"}]}
{"turn": 0, "speaker": "system", "acts": [{"intent": "reqmore", "domain": "police"}]}
{"goal": [{"domain": "restaurant", "find": {"food": "thai"}, "requests": ["phone"]}]}
{"turn": 0, "speaker": "user", "acts": [{"intent": "inform", "domain": "restaurant", "slot": "food", "value": "thai"}]}
{"turn": 0, "speaker": "system", "acts": [{"intent": "offer", "domain": "restaurant"}]}
)";
    std::istringstream in(text);
    CorpusLoadReport report;
    DemoCorpus loaded = load_corpus(in, ont, &report);
    CHECK(loaded.dialogues.size() == 1);
    CHECK(report.skipped_dialogues == 1);
  }

  SUBCASE("zero usable dialogues is an error") {
    std::istringstream in("");
    CHECK_THROWS_WITH_AS(load_corpus(in, ont), doctest::Contains("no usable"),
                         std::runtime_error);
  }

  SUBCASE("acts outside the catalog are dropped and counted") {
    std::string text =
        R"({"goal": [{"domain": "restaurant", "find": {"food": "thai"}, "requests": ["phone"]}]}
{"turn": 0, "speaker": "user", "acts": [{"intent": "inform", "domain": "restaurant", "slot": "volume", "value": "loud"}, {"intent": "inform", "domain": "restaurant", "slot": "food", "value": "thai"}]}
{"turn": 0, "speaker": "system", "acts": [{"intent": "offer", "domain": "restaurant"}]}
)";
    std::istringstream in(text);
    CorpusLoadReport report;
    DemoCorpus loaded = load_corpus(in, ont, &report);
    CHECK(loaded.dialogues.size() == 1);
    CHECK(report.dropped_acts == 1);
    CHECK(loaded.dialogues[0].turns[0].user_acts.size() == 1);
  }
}

TEST_CASE("datasets replay transcripts into (features, mask, target) rows") {
  const Ontology& ont = test::default_ontology();
  const Database& db = test::default_db();
  ExpertConfig clean;
  DemoCorpus corpus = collect_demos(ont, db, clean, 25, 6);

  int system_turns = 0;
  for (const Dialogue& d : corpus.dialogues) system_turns += static_cast<int>(d.turns.size());

  for (PolicyKind kind :
       {PolicyKind::kFnn, PolicyKind::kHfnn, PolicyKind::kHgnn, PolicyKind::kUhgnn}) {
    CAPTURE(to_string(kind));
    std::vector<Sample> dataset = make_dataset(corpus, kind, ont, db);
    CHECK(static_cast<int>(dataset.size()) == system_turns);
    for (const Sample& s : dataset) {
      CHECK(s.mask[static_cast<std::size_t>(s.target)] == 1);
      if (kind == PolicyKind::kFnn) {
        CHECK(static_cast<int>(s.features.size()) == 21 + 8 * ont.total_slots());
      } else {
        CHECK(static_cast<int>(s.features.size()) == 21 + 8 * s.n_slots);
      }
    }
    // replay is pure: a second pass gives identical rows
    std::vector<Sample> again = make_dataset(corpus, kind, ont, db);
    REQUIRE(again.size() == dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      CHECK(again[i].features == dataset[i].features);
      CHECK(again[i].target == dataset[i].target);
    }
  }

  SUBCASE("clean expert corpora replay to the expert's own choices") {
    // Walk the transcripts再 through the tracker and ask the rule cascade at
    // every system turn; the demonstrated act must match exactly.
    int checked = 0;
    for (const Dialogue& d : corpus.dialogues) {
      DialogueState state = init_state(ont, db);
      state.active_domain = d.goal.domains.front().first;
      for (const Exchange& ex : d.turns) {
        apply_user_acts(state, ex.user_acts, ont, db);
        SystemAct want = expert_act(state, select_active_domain(state, ont), ont, db);
        // The transcript carries the rendered value; the cascade's choice is
        // the (intent, domain, slot) triple.
        CHECK(want.intent == ex.system_act.intent);
        CHECK(want.domain == ex.system_act.domain);
        CHECK(want.slot == ex.system_act.slot);
        apply_system_act(state, ex.system_act, ont, db);
        checked++;
      }
    }
    CHECK(checked == system_turns);
  }
}

TEST_CASE("training loop: deterministic curves, falling loss, checkpoint schedule") {
  const Ontology& ont = test::default_ontology();
  const Database& db = test::default_db();
  ExpertConfig clean;
  DemoCorpus corpus = collect_demos(ont, db, clean, 10, 7);
  std::vector<Sample> dataset = make_dataset(corpus, PolicyKind::kUhgnn, ont, db);

  TrainConfig cfg;
  cfg.max_steps = 1000;
  cfg.eval_every = 100;

  auto run = [&](std::uint64_t seed) {
    RngStream init(seed);
    Policy p = make_policy(PolicyKind::kUhgnn, ont, init);
    std::vector<int> checkpoint_steps;
    TrainResult r = train(p, dataset, cfg, seed,
                          [&](int step, const Policy&) { checkpoint_steps.push_back(step); });
    return std::make_pair(r.losses, checkpoint_steps);
  };

  auto [losses_a, steps_a] = run(11);
  auto [losses_b, steps_b] = run(11);
  CHECK(losses_a == losses_b);  // bit-identical replay

  std::vector<int> want_steps{100, 200, 300, 400, 500, 600, 700, 800, 900, 1000};
  CHECK(steps_a == want_steps);

  double head = 0, tail = 0;
  for (int i = 0; i < 50; ++i) head += losses_a[static_cast<std::size_t>(i)];
  for (int i = 950; i < 1000; ++i) tail += losses_a[static_cast<std::size_t>(i)];
  CHECK(tail < head);
  CHECK(losses_a.back() < losses_a.front());

  auto [losses_c, steps_c] = run(12);
  CHECK(losses_a != losses_c);

  RngStream r0(0);
  Policy perr = make_policy(PolicyKind::kUhgnn, ont, r0);
  std::vector<Sample> empty;
  CHECK_THROWS_AS(train(perr, empty, cfg, 1), std::runtime_error);
}

TEST_CASE("sweep cells append rows, cache by key and reload identically") {
  const Ontology& ont = test::default_ontology();
  fs::path dir = fs::temp_directory_path() / "todkit_sweep_test";
  fs::remove_all(dir);

  SweepConfig cfg;
  cfg.train.max_steps = 30;
  cfg.train.eval_every = 10;
  cfg.restarts = 2;
  cfg.eval_dialogues = 20;
  Sweep sweep(cfg, ont, dir);

  SourceSpec clean = SourceSpec{"clean", ExpertConfig{}, ""};
  std::vector<EvalResult> finals = sweep.run_cell(PolicyKind::kHfnn, clean, 5);
  CHECK(finals.size() == 2);
  CHECK(sweep.cell_done(PolicyKind::kHfnn, clean, 5));

  // rows: restarts x checkpoints (30 steps / every 10 = 3)
  std::ifstream in(dir / "results.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == kResultsHeader);
  int rows = 0;
  while (std::getline(in, line)) rows++;
  CHECK(rows == 2 * 3);

  // a finished cell is not recomputed: results.csv stays put and the final
  // metrics are re-read from it
  auto mtime = fs::last_write_time(dir / "results.csv");
  std::vector<EvalResult> again = sweep.run_cell(PolicyKind::kHfnn, clean, 5);
  CHECK(fs::last_write_time(dir / "results.csv") == mtime);
  REQUIRE(again.size() == finals.size());
  for (std::size_t i = 0; i < finals.size(); ++i)
    CHECK(again[i].success == doctest::Approx(finals[i].success).epsilon(1e-6));

  fs::remove_all(dir);
}

TEST_CASE("run configuration round-trips and its hash is stable") {
  SweepConfig cfg;
  cfg.kinds = {PolicyKind::kUhgnn, PolicyKind::kFnn};
  cfg.budgets = {10, 100};
  cfg.sources = {SourceSpec{"clean", ExpertConfig{}, ""}};
  Json doc = sweep_config_to_json(cfg);
  SweepConfig back = sweep_config_from_json(doc);
  CHECK(sweep_config_to_json(back).dump() == doc.dump());
  CHECK(sweep_config_hash(cfg) == sweep_config_hash(back));

  SweepConfig other = cfg;
  other.budgets = {10};
  CHECK(sweep_config_hash(other) != sweep_config_hash(cfg));

  Json broken = doc;
  broken["budgets"] = Json::array();
  CHECK_THROWS_AS(sweep_config_from_json(broken), std::runtime_error);
  broken = doc;
  broken["train"]["max_steps"] = 0;
  CHECK_THROWS_AS(sweep_config_from_json(broken), std::runtime_error);

  // Grid arithmetic: the four kinds at three budgets from two sources with
  // ten restarts is 240 training runs.
  SweepConfig grid;
  grid.kinds = {PolicyKind::kFnn, PolicyKind::kHfnn, PolicyKind::kHgnn, PolicyKind::kUhgnn};
  grid.budgets = {10, 100, 1000};
  grid.sources = {SourceSpec{"clean", ExpertConfig{}, ""},
                  SourceSpec{"noisy30", ExpertConfig{0.3, 0, false, 40}, ""}};
  grid.restarts = 10;
  int runs = static_cast<int>(grid.kinds.size() * grid.budgets.size() * grid.sources.size()) *
             grid.restarts;
  CHECK(runs == 240);
}

TEST_CASE("confidence intervals over restarts") {
  MetricSummary s = summarize_runs({0.8, 0.9, 1.0});
  CHECK(s.mean == doctest::Approx(0.9));
  CHECK(s.ci95 == doctest::Approx(1.96 * 0.1 / std::sqrt(3.0)).epsilon(1e-9));
  CHECK(summarize_runs({0.5}).ci95 == 0.0);

  MetricsReport report = report_from_runs({EvalResult{}, EvalResult{}});
  CHECK(report.per_seed.size() == 2);
}
