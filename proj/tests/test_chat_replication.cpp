#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "test_util.hpp"
#include "todkit/chat.hpp"
#include "todkit/replication.hpp"

using namespace todkit;

namespace {

std::string act_to_line(const UserAct& act) {
  std::string line{to_string(act.intent)};
  if (!act.domain.empty()) line += " " + act.domain;
  if (!act.slot.empty()) line += " " + act.slot;
  if (!act.value.empty()) line += " " + act.value;
  return line;
}

}  // namespace

TEST_CASE("mini-syntax parses acts and rejects malformed lines") {
  std::vector<UserAct> acts = parse_user_line("inform restaurant food italian");
  REQUIRE(acts.size() == 1);
  CHECK(acts[0].intent == UserIntent::kInform);
  CHECK(acts[0].value == "italian");

  acts = parse_user_line("request restaurant phone; inform restaurant area north");
  REQUIRE(acts.size() == 2);
  CHECK(acts[0].intent == UserIntent::kRequest);
  CHECK(acts[1].intent == UserIntent::kInform);

  acts = parse_user_line("inform restaurant address 1 bridge street");
  CHECK(acts[0].value == "1 bridge street");  // values may contain spaces

  CHECK(parse_user_line("bye")[0].intent == UserIntent::kBye);
  CHECK(parse_user_line("request_book hotel")[0].domain == "hotel");

  CHECK_THROWS_AS(parse_user_line("inform restaurant food"), std::runtime_error);
  CHECK_THROWS_AS(parse_user_line("request restaurant"), std::runtime_error);
  CHECK_THROWS_AS(parse_user_line("shout loudly"), std::runtime_error);
  CHECK_THROWS_AS(parse_user_line("   "), std::runtime_error);
}

TEST_CASE("scripted chat session reproduces the episode runner's system acts") {
  const Ontology& ont = test::default_ontology();
  const Database& db = test::default_db();
  UserGoal goal = sample_goal(ont, db, 21);
  EpisodeRecord episode = run_episode(make_expert_policy(), goal, ont, db, 40, 4);
  REQUIRE(!episode.turns.empty());

  std::string script;
  for (const Exchange& ex : episode.turns) {
    std::string line;
    for (const UserAct& act : ex.user_acts) {
      if (!line.empty()) line += "; ";
      line += act_to_line(act);
    }
    script += line + "\n";
  }
  script += "y\n";  // satisfaction prompt

  std::istringstream in(script);
  std::ostringstream out;
  ChatOutcome outcome = chat_repl(make_expert_policy(), ont, db, in, out);

  REQUIRE(outcome.transcript.turns.size() == episode.turns.size());
  for (std::size_t t = 0; t < episode.turns.size(); ++t) {
    CAPTURE(t);
    CHECK(outcome.transcript.turns[t].system_act == episode.turns[t].system_act);
  }
  CHECK(outcome.finished);
  CHECK(outcome.satisfied);
  CHECK(out.str().find("Goodbye") != std::string::npos);
}

TEST_CASE("chat survives malformed input without consuming the turn") {
  const Ontology& ont = test::default_ontology();
  const Database& db = test::default_db();
  std::istringstream in(
      "what is this\n"
      "inform restaurant food italian\n"
      "bye\n"
      "n\n");
  std::ostringstream out;
  ChatOutcome outcome = chat_repl(make_expert_policy(), ont, db, in, out);
  // The garbage line produced help text, not a turn.
  CHECK(outcome.transcript.turns.size() == 2);
  CHECK(out.str().find("did not understand") != std::string::npos);
  CHECK(out.str().find("commands:") != std::string::npos);
  CHECK(!outcome.satisfied);
}

TEST_CASE("chat menu offers numbered acts and numbers select them") {
  const Ontology& ont = test::default_ontology();
  const Database& db = test::default_db();
  std::istringstream in(
      "menu\n"
      "1\n"
      "bye\n"
      "y\n");
  std::ostringstream out;
  ChatOutcome outcome = chat_repl(make_expert_policy(), ont, db, in, out);
  CHECK(out.str().find("1)") != std::string::npos);
  REQUIRE(outcome.transcript.turns.size() == 2);
  // menu entry 1 is an inform for the first open restaurant slot
  CHECK(outcome.transcript.turns[0].user_acts[0].intent == UserIntent::kInform);
}

TEST_CASE("experiment registry lists unique, well-formed experiments") {
  std::vector<Experiment> reg = experiment_registry();
  CHECK(reg.size() >= 4);
  std::set<std::string> names;
  for (const Experiment& e : reg) {
    CHECK(names.insert(e.name).second);
    CHECK(!e.description.empty());
    CHECK(!e.budget.empty());
    CHECK(static_cast<bool>(e.run));
  }
  CHECK_THROWS_WITH_AS(find_experiment("nope"), doctest::Contains("unknown experiment"),
                       std::runtime_error);

  SUBCASE("every experiment grid dry-runs through the sweep config schema") {
    for (const Experiment& e : reg) {
      if (e.kinds.empty()) continue;  // evaluation-only experiments have no grid
      SweepConfig cfg = experiment_base_config();
      cfg.kinds = e.kinds;
      cfg.budgets = e.budgets;
      for (const std::string& s : e.sources)
        cfg.sources.push_back(s == "clean" ? clean_source() : noisy_source(0.3));
      SweepConfig back = sweep_config_from_json(sweep_config_to_json(cfg));
      CHECK(back.kinds.size() == cfg.kinds.size());
      CHECK(back.budgets == cfg.budgets);
    }
  }
}

TEST_CASE("expert-sanity experiment runs and writes a verdict file") {
  const Ontology& ont = test::default_ontology();
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "todkit_verdict_test";
  std::filesystem::remove_all(dir);
  Verdict v = run_experiment("expert-sanity", ont, dir, dir / "expert-sanity.verdict");
  CHECK(v.all_pass());
  REQUIRE(v.assertions.size() == 2);
  CHECK(v.assertions[0].metric == "success");
  CHECK(v.assertions[0].measured >= 0.95);

  std::ifstream in(dir / "expert-sanity.verdict");
  std::string line;
  std::getline(in, line);
  CHECK(line.substr(0, 4) == "PASS");
  CHECK(line.find("success") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("verdicts format one line per assertion") {
  Verdict v;
  v.name = "x";
  v.assertions.push_back({"metric_a", ">=", 0.9, 0.8, true});
  v.assertions.push_back({"metric_b", "<=", 0.5, 0.4, false});
  std::string text = format_verdict(v);
  CHECK(text == "PASS metric_a 0.900000 0.800000\nFAIL metric_b 0.500000 0.400000\n");
  CHECK(!v.all_pass());
}
