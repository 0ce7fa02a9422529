// Command-line front end: demonstration generation, behavior-cloning
// training, evaluation, experiment sweeps, canned replications and an
// act-level chat loop.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "todkit/chat.hpp"
#include "todkit/harness.hpp"
#include "todkit/policy_io.hpp"
#include "todkit/replication.hpp"

namespace fs = std::filesystem;
using namespace todkit;

namespace {

std::string default_ontology_path() { return std::string(TODKIT_DATA_DIR) + "/default_ontology.json"; }

void print_eval(const EvalResult& r) {
  std::printf("dialogues        %d\n", r.n_dialogues);
  std::printf("inform precision %.4f\n", r.inform_p);
  std::printf("inform recall    %.4f\n", r.inform_r);
  std::printf("inform f1        %.4f\n", r.inform_f1);
  std::printf("book rate        %.4f\n", r.book_rate);
  std::printf("success          %.4f\n", r.success);
  std::printf("complete         %.4f\n", r.complete);
  std::printf("avg turns (succ) %.2f\n", r.avg_turns_succ);
  std::printf("avg turns (all)  %.2f\n", r.avg_turns_all);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-oriented dialogue policy workbench"};
  app.require_subcommand(1);

  std::string ontology_path = default_ontology_path();
  std::uint64_t db_seed = 7;
  int per_domain = 50;
  app.add_option("--ontology", ontology_path, "ontology file")->capture_default_str();
  app.add_option("--db-seed", db_seed, "database generation seed")->capture_default_str();
  app.add_option("--per-domain", per_domain, "entities per domain")->capture_default_str();

  // gen-demos
  auto* gen = app.add_subcommand("gen-demos", "collect expert demonstrations");
  int gen_n = 50;
  double gen_noise = 0.0, gen_overinform = 0.0;
  bool gen_shuffle = false;
  std::uint64_t gen_seed = 101;
  std::string gen_out = "demos.jsonl";
  gen->add_option("--n", gen_n, "dialogues to keep")->capture_default_str();
  gen->add_option("--noise", gen_noise, "random-act probability")->capture_default_str();
  gen->add_option("--overinform", gen_overinform, "over-inform probability")->capture_default_str();
  gen->add_flag("--shuffle", gen_shuffle, "shuffle request slot order per episode");
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--out", gen_out, "output corpus (JSON lines)")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "behavior-clone a policy from demonstrations");
  std::string tr_kind = "uhgnn", tr_demos, tr_out = "checkpoint.json";
  int tr_steps = 10000, tr_batch = 64, tr_eval_every = 0;
  double tr_lr = 0.001, tr_dropout = 0.1;
  std::uint64_t tr_seed = 1;
  tr->add_option("--kind", tr_kind, "fnn | hfnn | hgnn | uhgnn")->capture_default_str();
  tr->add_option("--demos", tr_demos, "demonstration corpus")->required();
  tr->add_option("--steps", tr_steps)->capture_default_str();
  tr->add_option("--seed", tr_seed)->capture_default_str();
  tr->add_option("--out", tr_out, "checkpoint file")->capture_default_str();
  tr->add_option("--batch", tr_batch)->capture_default_str();
  tr->add_option("--lr", tr_lr)->capture_default_str();
  tr->add_option("--dropout", tr_dropout)->capture_default_str();
  tr->add_option("--eval-every", tr_eval_every, "progress print interval")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or the expert");
  std::string ev_ckpt;
  bool ev_expert = false;
  int ev_n = 500;
  std::uint64_t ev_seed = 303;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file");
  ev->add_flag("--expert", ev_expert, "evaluate the hand-crafted expert instead");
  ev->add_option("--n", ev_n, "evaluation dialogues")->capture_default_str();
  ev->add_option("--seed", ev_seed)->capture_default_str();

  // sweep
  auto* sw = app.add_subcommand("sweep", "run a {kind} x {budget} x {source} grid");
  std::string sw_config, sw_out;
  sw->add_option("--config", sw_config, "run-configuration file")->required();
  sw->add_option("--out", sw_out, "output directory (default runs/<config hash>)");

  // replicate
  auto* rep = app.add_subcommand("replicate", "run a canned experiment");
  std::string rep_name, rep_out = "replications";
  bool rep_list = false;
  rep->add_option("--name", rep_name, "experiment name");
  rep->add_option("--out", rep_out, "work/verdict directory")->capture_default_str();
  rep->add_flag("--list", rep_list, "list registered experiments");

  // chat
  auto* ch = app.add_subcommand("chat", "talk to a policy at the act level");
  std::string ch_ckpt, ch_transcript, ch_satisfaction = "satisfaction.log";
  bool ch_expert = false;
  std::uint64_t ch_seed = 0;
  ch->add_option("--checkpoint", ch_ckpt, "checkpoint file");
  ch->add_flag("--expert", ch_expert, "chat with the hand-crafted expert");
  ch->add_option("--transcript", ch_transcript, "write the session transcript here");
  ch->add_option("--satisfaction-log", ch_satisfaction)->capture_default_str();
  ch->add_option("--seed", ch_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    Ontology ont = load_ontology_file(ontology_path);
    Database db = generate_database(ont, db_seed, per_domain);

    if (*gen) {
      ExpertConfig cfg;
      cfg.noise_rate = gen_noise;
      cfg.overinform_rate = gen_overinform;
      cfg.shuffle_requests = gen_shuffle;
      cfg.seed = gen_seed;
      cfg.validate();
      DemoCorpus corpus = collect_demos(ont, db, cfg, gen_n, gen_seed);
      std::ofstream out(gen_out);
      if (!out) throw std::runtime_error("cannot write '" + gen_out + "'");
      write_corpus(out, corpus);
      std::printf("kept %zu dialogues (%d episodes rolled) -> %s\n", corpus.dialogues.size(),
                  corpus.attempts_used, gen_out.c_str());
      return 0;
    }

    if (*tr) {
      CorpusLoadReport report;
      DemoCorpus corpus = load_corpus_file(tr_demos, ont, &report);
      if (report.dropped_acts || report.skipped_dialogues)
        std::fprintf(stderr, "warning: dropped %d acts, skipped %d dialogues\n",
                     report.dropped_acts, report.skipped_dialogues);
      PolicyKind kind = policy_kind_from_string(tr_kind);
      std::vector<Sample> dataset = make_dataset(corpus, kind, ont, db);
      std::printf("dataset: %zu samples from %zu dialogues\n", dataset.size(),
                  corpus.dialogues.size());
      RngStream init_rng = RngStream(tr_seed).child(1);
      Policy policy = make_policy(kind, ont, init_rng);
      TrainConfig cfg;
      cfg.max_steps = tr_steps;
      cfg.batch_size = tr_batch;
      cfg.lr = tr_lr;
      cfg.dropout = tr_dropout;
      cfg.eval_every = 0;
      TrainResult result = train(policy, dataset, cfg, RngStream(tr_seed).child(2).next_u64());
      int window = tr_eval_every > 0 ? tr_eval_every : std::max(1, tr_steps / 10);
      for (int s = window; s <= tr_steps; s += window) {
        double avg = 0;
        for (int i = s - window; i < s; ++i) avg += result.losses[static_cast<std::size_t>(i)];
        std::printf("step %6d  loss %.5f\n", s, avg / window);
      }
      save_checkpoint(policy, tr_out, nullptr, tr_steps);
      std::printf("checkpoint -> %s (%ld parameters)\n", tr_out.c_str(), policy.param_count());
      return 0;
    }

    if (*ev) {
      EvalResult r;
      if (ev_expert) {
        r = evaluate(expert_provider(), ont, db, ev_n, ev_seed);
      } else {
        if (ev_ckpt.empty()) throw std::runtime_error("eval: need --checkpoint or --expert");
        Policy policy = load_checkpoint(ev_ckpt, ont);
        r = evaluate(policy_provider(policy), ont, db, ev_n, ev_seed);
      }
      print_eval(r);
      return 0;
    }

    if (*sw) {
      std::ifstream in(sw_config);
      if (!in) throw std::runtime_error("cannot open '" + sw_config + "'");
      Json doc;
      in >> doc;
      SweepConfig cfg = sweep_config_from_json(doc);
      cfg.db_seed = db_seed;
      cfg.per_domain = per_domain;
      fs::path out_dir = sw_out.empty() ? fs::path("runs") / sweep_config_hash(cfg) : fs::path(sw_out);
      fs::create_directories(out_dir);
      {
        std::ofstream cfg_copy(out_dir / "config.json");
        cfg_copy << sweep_config_to_json(cfg).dump(2) << "\n";
      }
      Sweep sweep(cfg, ont, out_dir);
      run_sweep(sweep, cfg);
      std::printf("results -> %s\n", (out_dir / "results.csv").string().c_str());
      return 0;
    }

    if (*rep) {
      if (rep_list || rep_name.empty()) {
        for (const Experiment& e : experiment_registry())
          std::printf("%-18s %-9s %s\n", e.name.c_str(), e.budget.c_str(), e.description.c_str());
        return 0;
      }
      fs::path out_dir(rep_out);
      fs::create_directories(out_dir);
      Verdict v = run_experiment(rep_name, ont, out_dir / "work",
                                 out_dir / (rep_name + ".verdict"));
      std::fputs(format_verdict(v).c_str(), stdout);
      return v.all_pass() ? 0 : 1;
    }

    if (*ch) {
      SystemPolicyFn policy;
      Policy loaded;
      if (ch_expert || ch_ckpt.empty()) {
        policy = make_expert_policy();
        std::printf("(chatting with the hand-crafted expert)\n");
      } else {
        loaded = load_checkpoint(ch_ckpt, ont);
        policy = [&loaded](const DialogueState& state, const std::string&, const Ontology& o,
                           const Database& d, RngStream&) {
          return policy_act(loaded, state, o, d);
        };
      }
      ChatOutcome outcome = chat_repl(policy, ont, db, std::cin, std::cout, ch_seed);
      if (!ch_transcript.empty()) {
        std::ofstream out(ch_transcript);
        write_dialogue(out, outcome.transcript);
      }
      if (outcome.finished) {
        std::ofstream log(ch_satisfaction, std::ios::app);
        log << (outcome.satisfied ? "satisfied" : "unsatisfied") << " turns="
            << outcome.transcript.turns.size() << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
