#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "todkit/expert.hpp"
#include "todkit/ontology.hpp"
#include "todkit/rng.hpp"
#include "todkit/state.hpp"

namespace todkit {

// Agenda-based simulated user. The agenda is initialized from the goal and
// drained in a fixed per-domain order: voice the find constraints, accept an
// offer, ask the request slots, then run the booking exchange. At most two
// acts per turn.

struct DomainAgenda {
  std::string domain;
  std::vector<std::pair<std::string, std::string>> pending_informs;  // canonical order
  std::map<std::string, std::string> find_constraints;               // goal constraints
  std::map<std::string, std::string> invented;  // answers invented for off-goal requests
  std::vector<std::string> pending_requests;    // canonical order
  std::set<std::string> satisfied_requests;
  bool book_wanted = false;
  std::map<std::string, std::string> book_values;
  std::set<std::string> book_voiced;
  bool book_request_sent = false;
  bool book_confirmed = false;
  bool offer_seen = false;

  bool informs_done() const { return pending_informs.empty(); }
  bool requests_done() const {
    for (const std::string& s : pending_requests)
      if (!satisfied_requests.count(s)) return false;
    return true;
  }
  bool booking_done() const { return !book_wanted || book_confirmed; }
  bool done() const { return informs_done() && requests_done() && booking_done() && offer_seen; }
};

struct Agenda {
  std::vector<DomainAgenda> domains;
  std::size_t current = 0;

  bool all_done() const { return current >= domains.size(); }
  DomainAgenda& cur() { return domains[current]; }
};

inline Agenda init_agenda(const UserGoal& goal, const Ontology& ont) {
  Agenda agenda;
  for (const auto& [name, dg] : goal.domains) {
    const Domain& dom = ont.domain(name);
    DomainAgenda da;
    da.domain = name;
    da.find_constraints = dg.find_constraints;
    for (const SlotDef& slot : dom.slots) {
      auto it = dg.find_constraints.find(slot.name);
      if (it != dg.find_constraints.end()) da.pending_informs.emplace_back(slot.name, it->second);
    }
    da.pending_requests = dg.request_slots;
    if (dg.book) {
      da.book_wanted = true;
      da.book_values = *dg.book;
    }
    agenda.domains.push_back(std::move(da));
  }
  return agenda;
}

namespace detail {

// Value the user gives when the system requests `slot` in `domain`. Answers
// come from the goal when possible; otherwise the user commits to a fresh
// constraint chosen from an entity that still matches everything it wants,
// so its own goal never becomes unsatisfiable.
inline std::string answer_value(DomainAgenda& da, const SlotDef& slot, const Ontology& ont,
                                const Database& db, RngStream& rng) {
  if (auto it = da.find_constraints.find(slot.name); it != da.find_constraints.end())
    return it->second;
  if (auto it = da.book_values.find(slot.name); it != da.book_values.end()) return it->second;
  if (auto it = da.invented.find(slot.name); it != da.invented.end()) return it->second;
  if (slot.needed_for_book) {
    std::string v = slot.values[rng.next_below(slot.values.size())];
    da.book_values[slot.name] = v;
    return v;
  }
  std::map<std::string, std::string> wanted = da.find_constraints;
  for (const auto& [s, v] : da.invented) wanted[s] = v;
  std::vector<Entity> candidates = query(db, ont, da.domain, wanted);
  std::string v;
  if (candidates.empty()) {
    v = slot.values[rng.next_below(slot.values.size())];
  } else {
    const Entity& pick = candidates[rng.next_below(candidates.size())];
    v = pick.assignments.at(slot.name);
  }
  if (slot.informable) da.invented[slot.name] = v;
  return v;
}

inline void drop_pending_inform(DomainAgenda& da, const std::string& slot) {
  for (auto it = da.pending_informs.begin(); it != da.pending_informs.end(); ++it)
    if (it->first == slot) {
      da.pending_informs.erase(it);
      return;
    }
}

}  // namespace detail

// One user turn. Reads the effective system act of the previous turn,
// updates the agenda, and emits at most two acts.
inline std::vector<UserAct> user_turn(Agenda& agenda, const std::optional<SystemAct>& last_sys,
                                      const Ontology& ont, const Database& db, RngStream& rng) {
  if (agenda.all_done()) return {UserAct{UserIntent::kBye, "", "", ""}};
  DomainAgenda& da = agenda.cur();
  const Domain& dom = ont.domain(da.domain);

  // Observe the system's last act.
  if (last_sys && last_sys->domain == da.domain) {
    switch (last_sys->intent) {
      case SysIntent::kOffer:
        da.offer_seen = true;
        break;
      case SysIntent::kInform:
        for (const std::string& s : da.pending_requests)
          if (s == last_sys->slot) da.satisfied_requests.insert(s);
        break;
      case SysIntent::kBook:
        da.book_confirmed = true;
        break;
      default:
        break;
    }
  }

  std::vector<UserAct> acts;
  auto inform = [&](const std::string& slot, const std::string& value) {
    acts.push_back(UserAct{UserIntent::kInform, da.domain, slot, value});
  };

  // Answer a direct question first.
  if (last_sys && last_sys->domain == da.domain &&
      (last_sys->intent == SysIntent::kRequest || last_sys->intent == SysIntent::kSelect)) {
    const SlotDef& slot = dom.slot(last_sys->slot);
    std::string value = detail::answer_value(da, slot, ont, db, rng);
    detail::drop_pending_inform(da, slot.name);
    if (slot.needed_for_book) da.book_voiced.insert(slot.name);
    inform(slot.name, value);
    if (!da.pending_informs.empty()) {
      auto [s, v] = da.pending_informs.front();
      da.pending_informs.erase(da.pending_informs.begin());
      inform(s, v);
    }
    return acts;
  }

  // Voice remaining constraints (even past an early offer; the system is
  // expected to revise its offer).
  if (!da.pending_informs.empty()) {
    std::size_t k = std::min<std::size_t>(2, da.pending_informs.size());
    for (std::size_t i = 0; i < k; ++i) {
      auto [s, v] = da.pending_informs.front();
      da.pending_informs.erase(da.pending_informs.begin());
      inform(s, v);
    }
    return acts;
  }

  // Wait for an offer before asking about the found entity; nudge by
  // restating the first constraint if the system stalls.
  if (!da.offer_seen) {
    if (!da.find_constraints.empty()) {
      for (const SlotDef& slot : dom.slots)
        if (auto it = da.find_constraints.find(slot.name); it != da.find_constraints.end()) {
          inform(slot.name, it->second);
          return acts;
        }
    }
    return {UserAct{UserIntent::kThank, "", "", ""}};
  }

  // Request phase: re-emit unsatisfied requests in canonical order.
  if (!da.requests_done()) {
    for (const std::string& s : da.pending_requests) {
      if (da.satisfied_requests.count(s)) continue;
      acts.push_back(UserAct{UserIntent::kRequest, da.domain, s, ""});
      if (acts.size() == 2) break;
    }
    return acts;
  }

  // Booking phase.
  if (da.book_wanted && !da.book_confirmed) {
    if (!da.book_request_sent) {
      da.book_request_sent = true;
      return {UserAct{UserIntent::kRequestBook, da.domain, "", ""}};
    }
    for (const SlotDef& slot : dom.slots) {
      if (!slot.needed_for_book || da.book_voiced.count(slot.name)) continue;
      auto it = da.book_values.find(slot.name);
      if (it == da.book_values.end()) continue;
      da.book_voiced.insert(slot.name);
      inform(slot.name, it->second);
      if (acts.size() == 2) break;
    }
    if (!acts.empty()) return acts;
    // Everything voiced; remind the system we want the booking.
    return {UserAct{UserIntent::kRequestBook, da.domain, "", ""}};
  }

  // Domain finished: move on or say goodbye.
  agenda.current++;
  if (agenda.all_done()) return {UserAct{UserIntent::kBye, "", "", ""}};
  return user_turn(agenda, std::nullopt, ont, db, rng);
}

// Completion from the user's point of view: every request slot received some
// informed value and every booking task received a confirmation. Value
// correctness is the evaluator's job, not the user's.
inline bool is_complete(const Agenda& agenda) {
  for (const DomainAgenda& da : agenda.domains) {
    if (!da.requests_done()) return false;
    if (da.book_wanted && !da.book_confirmed) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Episode runner.

using SystemPolicyFn = std::function<SystemAct(
    const DialogueState&, const std::string& active, const Ontology&, const Database&,
    RngStream&)>;

struct Exchange {
  std::vector<UserAct> user_acts;
  SystemAct system_act;  // the effective act
};

struct DomainOutcome {
  std::optional<std::string> offered;
  bool booked = false;
  std::optional<std::string> booked_entity;  // entity offered at booking time
  // Booking parameters the user had communicated when the booking was made.
  std::map<std::string, std::string> booked_params;
};

struct EpisodeRecord {
  UserGoal goal;
  std::vector<Exchange> turns;
  std::map<std::string, DomainOutcome> outcome;
  bool complete = false;
  TrackerWarnings warnings;
};

inline constexpr int kDefaultMaxTurns = 40;

// Alternates user turns and policy acts through the tracker until a goodbye
// or the turn cap. Deterministic in (policy parameters, goal, seed).
inline EpisodeRecord run_episode(const SystemPolicyFn& policy, const UserGoal& goal,
                                 const Ontology& ont, const Database& db, int max_turns,
                                 std::uint64_t seed) {
  if (max_turns < 1) throw std::runtime_error("run_episode: max_turns must be >= 1");
  EpisodeRecord record;
  record.goal = goal;

  DialogueState state = init_state(ont, db);
  state.active_domain = goal.domains.front().first;
  Agenda agenda = init_agenda(goal, ont);
  RngStream root(seed);
  RngStream user_rng = root.child(1);
  RngStream policy_rng = root.child(2);

  std::optional<SystemAct> last_sys;
  for (int t = 0; t < max_turns; ++t) {
    std::vector<UserAct> uacts = user_turn(agenda, last_sys, ont, db, user_rng);
    apply_user_acts(state, uacts, ont, db);
    std::string active = select_active_domain(state, ont);
    SystemAct proposed = policy(state, active, ont, db, policy_rng);
    SystemAct effective = apply_system_act(state, proposed, ont, db);
    record.turns.push_back(Exchange{std::move(uacts), effective});
    if (effective.intent == SysIntent::kBook && !effective.domain.empty()) {
      const DomainState& ds = state.domain(effective.domain);
      DomainOutcome& oc = record.outcome[effective.domain];
      if (ds.booked && !oc.booked_entity) {
        oc.booked_entity = ds.offered;
        oc.booked_params = ds.booking_info;
      }
    }
    last_sys = effective;
    if (state.terminated) break;
  }

  for (const auto& [name, dg] : goal.domains) {
    DomainOutcome& oc = record.outcome[name];
    const DomainState& ds = state.domain(name);
    oc.offered = ds.offered;
    oc.booked = ds.booked;
  }
  record.complete = is_complete(agenda);
  record.warnings = state.warnings;
  return record;
}

inline SystemPolicyFn make_expert_policy() {
  return [](const DialogueState& state, const std::string& active, const Ontology& ont,
            const Database& db, RngStream&) { return expert_act(state, active, ont, db); };
}

}  // namespace todkit
