#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "todkit/policy.hpp"
#include "todkit/transcript.hpp"

namespace todkit {

// Demonstration collection, corpus ingestion, behavior-cloning datasets,
// training loops, the metric evaluator and seeded multi-restart sweeps.

// ---------------------------------------------------------------------------
// Deterministic parallel map: episode i always uses the same derived seed no
// matter how work is distributed, and results land in index order.

inline void parallel_for(int n, const std::function<void(int)>& body) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw <= 1 || n < 4) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  unsigned workers = std::min<unsigned>(hw, 16);
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Per-dialogue metrics. Correctness of an informed value is judged against
// the entity offered at the end of the dialogue; a booking counts when the
// booked entity satisfies every goal constraint of its domain.

struct DialogueMetrics {
  int requested = 0;
  int requested_correct = 0;
  int informs_issued = 0;
  int informs_relevant = 0;
  int book_tasks = 0;
  int books_satisfied = 0;
  bool complete = false;
  int turns = 0;

  double inform_recall() const {
    return requested == 0 ? 1.0 : static_cast<double>(requested_correct) / requested;
  }
  double inform_precision() const {
    if (informs_issued == 0) return requested == 0 ? 1.0 : 0.0;
    return static_cast<double>(informs_relevant) / informs_issued;
  }
  double inform_f1() const {
    double p = inform_precision();
    double r = inform_recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  bool success() const {
    return inform_recall() == 1.0 && books_satisfied == book_tasks;
  }
};

inline DialogueMetrics evaluate_episode(const EpisodeRecord& record, const Ontology& ont,
                                        const Database& db) {
  DialogueMetrics m;
  m.complete = record.complete;
  m.turns = static_cast<int>(record.turns.size());

  // Final offered entity per goal domain.
  std::map<std::string, const Entity*> final_entity;
  for (const auto& [name, dg] : record.goal.domains) {
    (void)dg;
    final_entity[name] = nullptr;
    auto it = record.outcome.find(name);
    if (it != record.outcome.end() && it->second.offered)
      final_entity[name] = db.find(name, *it->second.offered);
  }

  std::map<std::string, std::set<std::string>> goal_requests;
  for (const auto& [name, dg] : record.goal.domains) {
    goal_requests[name] = std::set<std::string>(dg.request_slots.begin(), dg.request_slots.end());
    m.requested += static_cast<int>(dg.request_slots.size());
  }

  std::map<std::string, std::set<std::string>> correctly_informed;
  for (const Exchange& ex : record.turns) {
    const SystemAct& act = ex.system_act;
    if (act.intent != SysIntent::kInform) continue;
    m.informs_issued++;
    auto fit = final_entity.find(act.domain);
    if (fit == final_entity.end() || fit->second == nullptr) continue;
    auto ait = fit->second->assignments.find(act.slot);
    bool value_ok = ait != fit->second->assignments.end() && ait->second == act.value &&
                    !act.value.empty();
    bool requested = goal_requests[act.domain].count(act.slot) > 0;
    if (value_ok && requested) {
      m.informs_relevant++;
      correctly_informed[act.domain].insert(act.slot);
    }
  }
  for (const auto& [name, slots] : goal_requests)
    for (const std::string& s : slots)
      if (correctly_informed[name].count(s)) m.requested_correct++;

  // A booking satisfies its task when the booked entity matches every find
  // constraint of the goal and the user's booking parameters had all been
  // communicated when the booking was made. A confirmation blurted out
  // before the parameter exchange is a failed booking even though the user
  // heard it.
  for (const auto& [name, dg] : record.goal.domains) {
    if (!dg.book) continue;
    m.book_tasks++;
    auto it = record.outcome.find(name);
    if (it == record.outcome.end() || !it->second.booked || !it->second.booked_entity) continue;
    const Entity* e = db.find(name, *it->second.booked_entity);
    if (!e) continue;
    bool ok = true;
    for (const auto& [slot, value] : dg.find_constraints)
      if (e->assignments.at(slot) != value) {
        ok = false;
        break;
      }
    for (const auto& [slot, value] : *dg.book) {
      auto pit = it->second.booked_params.find(slot);
      if (pit == it->second.booked_params.end() || pit->second != value) {
        ok = false;
        break;
      }
    }
    if (ok) m.books_satisfied++;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Corpus-level evaluation. Per-dialogue rates are averaged over dialogues;
// dialogues without a booking task stay out of the book-rate denominator.

struct EvalResult {
  double inform_p = 0, inform_r = 0, inform_f1 = 0;
  double book_rate = 0, success = 0, complete = 0;
  double avg_turns_succ = 0, avg_turns_all = 0;
  int n_dialogues = 0;
};

inline EvalResult summarize(const std::vector<DialogueMetrics>& all) {
  EvalResult r;
  r.n_dialogues = static_cast<int>(all.size());
  if (all.empty()) return r;
  double p = 0, rec = 0, f1 = 0, comp = 0, succ = 0, turns = 0, turns_succ = 0;
  double book = 0;
  int with_book = 0, n_succ = 0;
  for (const DialogueMetrics& m : all) {
    p += m.inform_precision();
    rec += m.inform_recall();
    f1 += m.inform_f1();
    comp += m.complete ? 1.0 : 0.0;
    bool s = m.success();
    succ += s ? 1.0 : 0.0;
    turns += m.turns;
    if (s) {
      turns_succ += m.turns;
      n_succ++;
    }
    if (m.book_tasks > 0) {
      with_book++;
      book += static_cast<double>(m.books_satisfied) / m.book_tasks;
    }
  }
  double n = static_cast<double>(all.size());
  r.inform_p = p / n;
  r.inform_r = rec / n;
  r.inform_f1 = f1 / n;
  r.book_rate = with_book > 0 ? book / with_book : 1.0;
  r.success = succ / n;
  r.complete = comp / n;
  r.avg_turns_all = turns / n;
  r.avg_turns_succ = n_succ > 0 ? turns_succ / n_succ : 0.0;
  return r;
}

// A fresh policy instance per episode, so stateful wrappers (the noisy
// expert's per-episode rng and slot shuffles) stay deterministic under
// parallel evaluation.
using PolicyProvider = std::function<SystemPolicyFn(std::uint64_t episode_seed)>;

inline PolicyProvider expert_provider() {
  return [](std::uint64_t) { return make_expert_policy(); };
}

inline PolicyProvider noisy_expert_provider(const ExpertConfig& cfg, const Ontology& ont) {
  return [cfg, &ont](std::uint64_t episode_seed) -> SystemPolicyFn {
    auto session = std::make_shared<ExpertSession>(cfg, ont, episode_seed);
    return [session](const DialogueState& state, const std::string& active, const Ontology& o,
                     const Database& db, RngStream&) {
      return noisy_expert_act(state, active, o, db, *session);
    };
  };
}

inline PolicyProvider policy_provider(const Policy& policy) {
  return [&policy](std::uint64_t) -> SystemPolicyFn {
    return [&policy](const DialogueState& state, const std::string&, const Ontology& ont,
                     const Database& db, RngStream&) {
      return policy_act(policy, state, ont, db);
    };
  };
}

// Runs n_dialogues fresh seeded goals against the policy and aggregates the
// per-dialogue metrics. Reproducible to the last digit for a fixed seed.
inline EvalResult evaluate(const PolicyProvider& provider, const Ontology& ont,
                           const Database& db, int n_dialogues, std::uint64_t seed,
                           int max_turns = kDefaultMaxTurns) {
  std::vector<DialogueMetrics> metrics(static_cast<std::size_t>(n_dialogues));
  RngStream root(seed);
  parallel_for(n_dialogues, [&](int i) {
    RngStream ep = root.child(static_cast<std::uint64_t>(i));
    UserGoal goal = sample_goal(ont, db, ep.next_u64());
    SystemPolicyFn fn = provider(ep.next_u64());
    EpisodeRecord rec = run_episode(fn, goal, ont, db, max_turns, ep.next_u64());
    metrics[static_cast<std::size_t>(i)] = evaluate_episode(rec, ont, db);
  });
  return summarize(metrics);
}

// ---------------------------------------------------------------------------
// Demonstration collection: roll expert-vs-simulator episodes and keep the
// winning ones only. Raises after 10n attempts without n winners.

inline DemoCorpus collect_demos(const Ontology& ont, const Database& db,
                                const ExpertConfig& cfg, int n, std::uint64_t seed,
                                int max_turns = kDefaultMaxTurns) {
  if (n < 1) throw std::runtime_error("collect_demos: n must be >= 1");
  DemoCorpus corpus;
  corpus.source = cfg.noise_rate > 0 || cfg.overinform_rate > 0 || cfg.shuffle_requests
                      ? "noisy-expert"
                      : "simulated-expert";
  corpus.seed = seed;
  RngStream root(seed);
  const int max_attempts = 10 * n;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    corpus.attempts_used = attempt + 1;
    RngStream ep = root.child(static_cast<std::uint64_t>(attempt));
    UserGoal goal = sample_goal(ont, db, ep.next_u64());
    ExpertSession session(cfg, ont, ep.next_u64());
    SystemPolicyFn fn = [&session](const DialogueState& state, const std::string& active,
                                   const Ontology& o, const Database& d, RngStream&) {
      return noisy_expert_act(state, active, o, d, session);
    };
    EpisodeRecord rec = run_episode(fn, goal, ont, db, max_turns, ep.next_u64());
    if (evaluate_episode(rec, ont, db).success()) {
      corpus.dialogues.push_back(dialogue_from_record(rec));
      if (static_cast<int>(corpus.dialogues.size()) == n) return corpus;
    }
  }
  throw std::runtime_error("collect_demos: could not collect " + std::to_string(n) +
                           " winning dialogues in " + std::to_string(max_attempts) +
                           " attempts");
}

// ---------------------------------------------------------------------------
// Corpus ingestion. System turns holding several acts are split into
// consecutive single-act turns; acts that do not decode against the ontology
// are dropped with a warning count; dialogues that cannot be repaired are
// skipped. Zero usable dialogues is an error.

struct CorpusLoadReport {
  int dropped_acts = 0;
  int skipped_dialogues = 0;
};

inline bool system_act_decodable(const SystemAct& act, const Ontology& ont) {
  if (act.intent == SysIntent::kBye) return true;
  if (ont.domain_index(act.domain) < 0) return false;
  if (sys_intent_is_slot_act(act.intent))
    return ont.domain(act.domain).slot_index(act.slot) >= 0;
  return true;
}

inline bool user_act_decodable(const UserAct& act, const Ontology& ont) {
  try {
    validate_user_act(act);
  } catch (const std::exception&) {
    return false;
  }
  if (user_intent_is_general(act.intent) && act.intent != UserIntent::kRequestBook)
    return true;
  if (ont.domain_index(act.domain) < 0) return false;
  if (act.intent == UserIntent::kRequestBook) return true;
  return ont.domain(act.domain).slot_index(act.slot) >= 0;
}

inline DemoCorpus load_corpus(std::istream& in, const Ontology& ont,
                              CorpusLoadReport* report = nullptr) {
  DemoCorpus corpus;
  corpus.source = "external-human";
  CorpusLoadReport local;

  struct Raw {
    UserGoal goal;
    std::vector<std::pair<bool, std::vector<Json>>> turns;  // (is_user, acts)
  };
  std::vector<Raw> raws;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus: invalid JSON at line " + std::to_string(lineno) +
                               ": " + e.what());
    }
    if (j.contains("goal")) {
      Raw raw;
      raw.goal = goal_from_json(j.at("goal"));
      raws.push_back(std::move(raw));
      continue;
    }
    if (raws.empty())
      throw std::runtime_error("corpus: turn before any goal at line " + std::to_string(lineno));
    bool is_user = j.at("speaker").get<std::string>() == "user";
    std::vector<Json> acts;
    for (const Json& a : j.at("acts")) acts.push_back(a);
    raws.back().turns.emplace_back(is_user, std::move(acts));
  }

  for (Raw& raw : raws) {
    try {
      // Goals must be decodable too.
      for (const auto& [name, dg] : raw.goal.domains) {
        const Domain& dom = ont.domain(name);
        for (const auto& [slot, value] : dg.find_constraints) {
          (void)value;
          dom.slot(slot);
        }
        for (const std::string& slot : dg.request_slots) dom.slot(slot);
      }
      Dialogue dialogue;
      dialogue.goal = raw.goal;
      std::vector<UserAct> pending_user;
      for (auto& [is_user, acts] : raw.turns) {
        if (is_user) {
          pending_user.clear();
          for (const Json& a : acts) {
            UserAct act = user_act_from_json(a);
            if (user_act_decodable(act, ont))
              pending_user.push_back(act);
            else
              local.dropped_acts++;
          }
        } else {
          // Multi-act system turns become consecutive single-act turns; the
          // replayed user side of the extra turns is empty.
          bool first = true;
          for (const Json& a : acts) {
            SystemAct act = system_act_from_json(a);
            if (!system_act_decodable(act, ont)) {
              local.dropped_acts++;
              continue;
            }
            Exchange ex;
            if (first) ex.user_acts = pending_user;
            first = false;
            ex.system_act = act;
            dialogue.turns.push_back(std::move(ex));
          }
          pending_user.clear();
        }
      }
      if (dialogue.turns.empty()) throw std::runtime_error("no usable turns");
      corpus.dialogues.push_back(std::move(dialogue));
    } catch (const std::exception&) {
      local.skipped_dialogues++;
    }
  }
  if (report) *report = local;
  if (corpus.dialogues.empty())
    throw std::runtime_error("corpus: no usable dialogues");
  return corpus;
}

inline DemoCorpus load_corpus_file(const std::string& path, const Ontology& ont,
                                   CorpusLoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus: cannot open '" + path + "'");
  return load_corpus(in, ont, report);
}

// ---------------------------------------------------------------------------
// Behavior-cloning dataset: replay each transcript through the tracker and
// emit one (features, mask, target) per system turn. A demonstrated act that
// the mask forbids is force-unmasked; demonstrations outrank the mask.

inline std::vector<Sample> make_dataset(const DemoCorpus& corpus, PolicyKind kind,
                                        const Ontology& ont, const Database& db) {
  GlobalLayout layout = make_global_layout(ont);
  std::vector<ActionCatalog> catalogs;
  for (const Domain& d : ont.domains) catalogs.push_back(make_catalog(ont, d.name));

  std::vector<Sample> out;
  for (const Dialogue& dialogue : corpus.dialogues) {
    DialogueState state = init_state(ont, db);
    if (!dialogue.goal.domains.empty())
      state.active_domain = dialogue.goal.domains.front().first;
    for (const Exchange& ex : dialogue.turns) {
      apply_user_acts(state, ex.user_acts, ont, db);
      const SystemAct& act = ex.system_act;
      std::string route = act.domain.empty() ? select_active_domain(state, ont) : act.domain;
      int di = ont.domain_index(route);

      Sample s;
      s.domain_index = di;
      if (kind == PolicyKind::kFnn) {
        s.features = global_featurize(state, route, ont, layout);
        s.mask = global_valid_mask(state, route, ont, layout);
        s.target = global_act_index(di, act_index(act, catalogs[static_cast<std::size_t>(di)]),
                                    layout);
      } else {
        DipState dip = featurize(state, route, ont);
        s.n_slots = static_cast<int>(dip.per_slot.size());
        s.features = flatten(dip);
        s.mask = valid_mask(state, route, catalogs[static_cast<std::size_t>(di)], ont);
        s.target = act_index(act, catalogs[static_cast<std::size_t>(di)]);
      }
      s.mask[static_cast<std::size_t>(s.target)] = 1;
      out.push_back(std::move(s));
      apply_system_act(state, act, ont, db);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop: uniform-random batches with replacement, a checkpoint hook
// every eval_every steps, everything derived from one seed.

struct TrainConfig {
  int max_steps = 10000;
  int eval_every = 0;  // 0: hook only after the final step
  int batch_size = 64;
  double lr = 0.001;
  double dropout = 0.1;
};

struct TrainResult {
  std::vector<double> losses;  // one entry per step
};

using CheckpointHook = std::function<void(int step, const Policy& policy)>;

inline TrainResult train(Policy& policy, const std::vector<Sample>& dataset,
                         const TrainConfig& cfg, std::uint64_t seed,
                         const CheckpointHook& hook = nullptr) {
  if (dataset.empty()) throw std::runtime_error("train: empty dataset");
  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  RngStream root(seed);
  PolicyTrainer trainer(policy, cfg.dropout, adam, root.child(1).next_u64());
  RngStream batch_rng = root.child(2);

  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(cfg.max_steps));
  std::vector<const Sample*> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 1; step <= cfg.max_steps; ++step) {
    for (auto& slot : batch) slot = &dataset[batch_rng.next_below(dataset.size())];
    result.losses.push_back(train_step(trainer, batch));
    if (hook && ((cfg.eval_every > 0 && step % cfg.eval_every == 0) ||
                 (cfg.eval_every <= 0 && step == cfg.max_steps)))
      hook(step, policy);
    else if (hook && cfg.eval_every > 0 && step == cfg.max_steps && cfg.max_steps % cfg.eval_every != 0)
      hook(step, policy);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Multi-restart sweep over {kind} x {budget} x {source} with resumable cells
// and an append-only results table.

struct SourceSpec {
  std::string name;      // "clean", "noisy30", ... becomes the source column
  ExpertConfig expert;   // used when path is empty
  std::string path;      // external corpus file
};

struct SweepConfig {
  std::vector<PolicyKind> kinds;
  std::vector<int> budgets;
  std::vector<SourceSpec> sources;
  TrainConfig train;
  int restarts = 10;
  int eval_dialogues = 500;
  int max_turns = kDefaultMaxTurns;
  std::uint64_t demo_seed = 101;
  std::uint64_t train_seed = 202;
  std::uint64_t eval_seed = 303;
  std::uint64_t db_seed = 7;
  int per_domain = 50;
  int hidden_gnn = 64;
  int hidden_mlp = 128;
};

inline constexpr const char* kResultsHeader =
    "kind,source,n_dialogues,seed,step,inform_p,inform_r,inform_f1,book_rate,"
    "success,complete,avg_turns_succ,avg_turns_all";

struct ResultRow {
  std::string kind;
  std::string source;
  int n_dialogues = 0;
  std::uint64_t seed = 0;
  long step = 0;
  EvalResult metrics;
};

inline std::string format_row(const ResultRow& row) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%s,%d,%llu,%ld,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f",
                row.kind.c_str(), row.source.c_str(), row.n_dialogues,
                static_cast<unsigned long long>(row.seed), row.step, row.metrics.inform_p,
                row.metrics.inform_r, row.metrics.inform_f1, row.metrics.book_rate,
                row.metrics.success, row.metrics.complete, row.metrics.avg_turns_succ,
                row.metrics.avg_turns_all);
  return std::string(buf);
}

// Mean and normal-approximation 95% confidence half-width over restarts.
struct MetricSummary {
  double mean = 0;
  double ci95 = 0;
};

inline MetricSummary summarize_runs(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double var = 0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    var /= static_cast<double>(values.size() - 1);
    s.ci95 = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(values.size()));
  }
  return s;
}

struct MetricsReport {
  std::vector<EvalResult> per_seed;
  MetricSummary success, complete, inform_f1, book_rate;
};

inline MetricsReport report_from_runs(const std::vector<EvalResult>& runs) {
  MetricsReport r;
  r.per_seed = runs;
  auto collect = [&](auto field) {
    std::vector<double> v;
    for (const EvalResult& e : runs) v.push_back(e.*field);
    return summarize_runs(v);
  };
  r.success = collect(&EvalResult::success);
  r.complete = collect(&EvalResult::complete);
  r.inform_f1 = collect(&EvalResult::inform_f1);
  r.book_rate = collect(&EvalResult::book_rate);
  return r;
}

class Sweep {
 public:
  Sweep(const SweepConfig& cfg, const Ontology& ont, std::filesystem::path out_dir)
      : cfg_(cfg), ont_(&ont), out_dir_(std::move(out_dir)) {
    db_ = generate_database(ont, cfg.db_seed, cfg.per_domain);
    std::filesystem::create_directories(out_dir_ / "cells");
  }

  const Database& db() const { return db_; }

  static std::string cell_key(PolicyKind kind, const SourceSpec& source, int budget) {
    return std::string(to_string(kind)) + "_" + source.name + "_" + std::to_string(budget);
  }

  bool cell_done(PolicyKind kind, const SourceSpec& source, int budget) const {
    return std::filesystem::exists(out_dir_ / "cells" / (cell_key(kind, source, budget) + ".done"));
  }

  // Runs one cell (train restarts, evaluate, append rows). Returns the final
  // checkpoint's evaluation per seed. A finished cell is re-read, not re-run.
  std::vector<EvalResult> run_cell(PolicyKind kind, const SourceSpec& source, int budget) {
    std::string key = cell_key(kind, source, budget);
    if (cell_done(kind, source, budget)) return read_cell_results(kind, source, budget);

    const DemoCorpus& corpus = corpus_for(source, budget);
    DemoCorpus trimmed;
    trimmed.source = corpus.source;
    trimmed.seed = corpus.seed;
    trimmed.dialogues.assign(corpus.dialogues.begin(), corpus.dialogues.begin() + budget);
    std::vector<Sample> dataset = make_dataset(trimmed, kind, *ont_, db_);

    std::vector<ResultRow> rows;
    std::vector<EvalResult> finals(static_cast<std::size_t>(cfg_.restarts));
    std::mutex rows_mutex;
    parallel_for(cfg_.restarts, [&](int restart) {
      RngStream init_rng = RngStream(cfg_.train_seed).child(hash_key(key)).child(
          static_cast<std::uint64_t>(restart));
      Policy policy =
          make_policy(kind, *ont_, init_rng, cfg_.hidden_gnn, cfg_.hidden_mlp);
      std::uint64_t train_seed = RngStream(cfg_.train_seed)
                                     .child(hash_key(key + "/t"))
                                     .child(static_cast<std::uint64_t>(restart))
                                     .next_u64();
      auto hook = [&](int step, const Policy& p) {
        EvalResult eval = evaluate(policy_provider(p), *ont_, db_,
                                   cfg_.eval_dialogues, cfg_.eval_seed, cfg_.max_turns);
        ResultRow row{std::string(to_string(kind)), source.name, budget,
                      static_cast<std::uint64_t>(restart), step, eval};
        std::lock_guard<std::mutex> lock(rows_mutex);
        rows.push_back(row);
        if (step == cfg_.train.max_steps) finals[static_cast<std::size_t>(restart)] = eval;
      };
      train(policy, dataset, cfg_.train, train_seed, hook);
    });

    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
      return std::tie(a.seed, a.step) < std::tie(b.seed, b.step);
    });
    append_rows(rows);
    std::ofstream marker(out_dir_ / "cells" / (key + ".done"));
    marker << "ok\n";
    return finals;
  }

  std::vector<EvalResult> read_cell_results(PolicyKind kind, const SourceSpec& source,
                                            int budget) const {
    std::ifstream in(out_dir_ / "results.csv");
    if (!in) throw std::runtime_error("sweep: missing results.csv for finished cell");
    std::map<std::uint64_t, std::pair<long, EvalResult>> best;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      ResultRow row = parse_row(line);
      if (row.kind != to_string(kind) || row.source != source.name ||
          row.n_dialogues != budget)
        continue;
      auto& slot = best[row.seed];
      if (row.step >= slot.first) slot = {row.step, row.metrics};
    }
    std::vector<EvalResult> out;
    for (auto& [seed, entry] : best) out.push_back(entry.second);
    return out;
  }

  static ResultRow parse_row(const std::string& line) {
    ResultRow row;
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    fields.push_back(cur);
    if (fields.size() != 13) throw std::runtime_error("results: malformed row: " + line);
    row.kind = fields[0];
    row.source = fields[1];
    row.n_dialogues = std::stoi(fields[2]);
    row.seed = std::stoull(fields[3]);
    row.step = std::stol(fields[4]);
    row.metrics.inform_p = std::stod(fields[5]);
    row.metrics.inform_r = std::stod(fields[6]);
    row.metrics.inform_f1 = std::stod(fields[7]);
    row.metrics.book_rate = std::stod(fields[8]);
    row.metrics.success = std::stod(fields[9]);
    row.metrics.complete = std::stod(fields[10]);
    row.metrics.avg_turns_succ = std::stod(fields[11]);
    row.metrics.avg_turns_all = std::stod(fields[12]);
    return row;
  }

  // Seeded demonstration pools are cached per source at the largest budget
  // requested so far; a smaller budget is always a prefix of a larger one.
  const DemoCorpus& corpus_for(const SourceSpec& source, int min_size) {
    auto it = corpora_.find(source.name);
    if (it != corpora_.end() && static_cast<int>(it->second.dialogues.size()) >= min_size)
      return it->second;
    DemoCorpus corpus;
    if (!source.path.empty()) {
      corpus = load_corpus_file(source.path, *ont_);
      if (static_cast<int>(corpus.dialogues.size()) < min_size)
        throw std::runtime_error("sweep: corpus '" + source.path + "' has fewer than " +
                                 std::to_string(min_size) + " dialogues");
    } else {
      corpus = collect_demos(*ont_, db_, source.expert, min_size, cfg_.demo_seed,
                             cfg_.max_turns);
    }
    corpora_[source.name] = std::move(corpus);
    return corpora_.at(source.name);
  }

 private:
  static std::uint64_t hash_key(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  void append_rows(const std::vector<ResultRow>& rows) {
    std::filesystem::path path = out_dir_ / "results.csv";
    bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (fresh) out << kResultsHeader << "\n";
    for (const ResultRow& row : rows) out << format_row(row) << "\n";
  }

  SweepConfig cfg_;
  const Ontology* ont_;
  Database db_;
  std::filesystem::path out_dir_;
  std::map<std::string, DemoCorpus> corpora_;
};

// Runs the full grid.
inline void run_sweep(Sweep& sweep, const SweepConfig& cfg) {
  for (const SourceSpec& source : cfg.sources)
    for (PolicyKind kind : cfg.kinds)
      for (int budget : cfg.budgets) sweep.run_cell(kind, source, budget);
}

// ---------------------------------------------------------------------------
// Run-configuration file. Captures every training field plus the ontology
// and database seeds; its hash names the output directory.

inline Json sweep_config_to_json(const SweepConfig& cfg) {
  Json doc;
  Json kinds = Json::array();
  for (PolicyKind k : cfg.kinds) kinds.push_back(std::string(to_string(k)));
  doc["kinds"] = std::move(kinds);
  doc["budgets"] = cfg.budgets;
  Json sources = Json::array();
  for (const SourceSpec& s : cfg.sources) {
    Json js;
    js["name"] = s.name;
    if (!s.path.empty()) {
      js["path"] = s.path;
    } else {
      js["noise"] = s.expert.noise_rate;
      js["overinform"] = s.expert.overinform_rate;
      js["shuffle"] = s.expert.shuffle_requests;
      js["expert_seed"] = s.expert.seed;
    }
    sources.push_back(std::move(js));
  }
  doc["sources"] = std::move(sources);
  doc["train"] = {{"max_steps", cfg.train.max_steps},
                  {"eval_every", cfg.train.eval_every},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"dropout", cfg.train.dropout}};
  doc["restarts"] = cfg.restarts;
  doc["eval_dialogues"] = cfg.eval_dialogues;
  doc["max_turns"] = cfg.max_turns;
  doc["demo_seed"] = cfg.demo_seed;
  doc["train_seed"] = cfg.train_seed;
  doc["eval_seed"] = cfg.eval_seed;
  doc["db_seed"] = cfg.db_seed;
  doc["per_domain"] = cfg.per_domain;
  doc["hidden_gnn"] = cfg.hidden_gnn;
  doc["hidden_mlp"] = cfg.hidden_mlp;
  return doc;
}

inline SweepConfig sweep_config_from_json(const Json& doc) {
  SweepConfig cfg;
  cfg.kinds.clear();
  for (const Json& k : doc.at("kinds"))
    cfg.kinds.push_back(policy_kind_from_string(k.get<std::string>()));
  cfg.budgets = doc.at("budgets").get<std::vector<int>>();
  cfg.sources.clear();
  for (const Json& js : doc.at("sources")) {
    SourceSpec s;
    s.name = js.at("name").get<std::string>();
    if (js.contains("path")) {
      s.path = js.at("path").get<std::string>();
    } else {
      s.expert.noise_rate = js.value("noise", 0.0);
      s.expert.overinform_rate = js.value("overinform", 0.0);
      s.expert.shuffle_requests = js.value("shuffle", false);
      s.expert.seed = js.value("expert_seed", std::uint64_t{0});
      s.expert.validate();
    }
    cfg.sources.push_back(std::move(s));
  }
  if (doc.contains("train")) {
    const Json& t = doc.at("train");
    cfg.train.max_steps = t.value("max_steps", cfg.train.max_steps);
    cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.dropout = t.value("dropout", cfg.train.dropout);
  }
  cfg.restarts = doc.value("restarts", cfg.restarts);
  cfg.eval_dialogues = doc.value("eval_dialogues", cfg.eval_dialogues);
  cfg.max_turns = doc.value("max_turns", cfg.max_turns);
  cfg.demo_seed = doc.value("demo_seed", cfg.demo_seed);
  cfg.train_seed = doc.value("train_seed", cfg.train_seed);
  cfg.eval_seed = doc.value("eval_seed", cfg.eval_seed);
  cfg.db_seed = doc.value("db_seed", cfg.db_seed);
  cfg.per_domain = doc.value("per_domain", cfg.per_domain);
  cfg.hidden_gnn = doc.value("hidden_gnn", cfg.hidden_gnn);
  cfg.hidden_mlp = doc.value("hidden_mlp", cfg.hidden_mlp);
  if (cfg.kinds.empty() || cfg.budgets.empty() || cfg.sources.empty())
    throw std::runtime_error("sweep config: kinds, budgets and sources must be non-empty");
  for (int b : cfg.budgets)
    if (b < 1) throw std::runtime_error("sweep config: budgets must be positive");
  if (cfg.restarts < 1 || cfg.eval_dialogues < 1 || cfg.train.max_steps < 1 ||
      cfg.train.batch_size < 1)
    throw std::runtime_error("sweep config: counts must be positive");
  return cfg;
}

inline std::string sweep_config_hash(const SweepConfig& cfg) {
  std::string s = sweep_config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace todkit
