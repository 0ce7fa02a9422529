#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "todkit/acts.hpp"
#include "todkit/ontology.hpp"

namespace todkit {

// Deterministic rule-based state tracker. Both the hand-crafted expert and
// the feature extractor read this state; there is no uncertainty or belief
// distribution anywhere.

struct DomainState {
  // User-informed constraints on informable non-book slots. The invariant
  // `db_count == |query(db, domain, constraints)|` holds after every user
  // turn.
  std::map<std::string, std::string> constraints;
  // User-provided booking parameters (informs on needed_for_book slots).
  // These are dialogue parameters, not entity filters, so they never enter
  // the database query.
  std::map<std::string, std::string> booking_info;
  // Slots the user asked about, cumulative.
  std::set<std::string> requested;
  // Requested slots the system has informed, cumulative.
  std::set<std::string> answered;

  int db_count = 0;
  std::optional<std::string> offered;  // entity id
  bool booked = false;
  bool book_requested = false;  // user issued request_book

  // Exactly one turn of history, replaced (not merged) every turn.
  std::map<std::string, std::set<UserIntent>> last_user_slot_acts;
  std::set<UserIntent> last_user_general_acts;
  std::map<std::string, std::set<SysIntent>> last_sys_slot_acts;
  std::set<SysIntent> last_sys_general_acts;

  // A slot's value is known when the user constrained it, provided it as a
  // booking parameter, or an offered entity fixes it. Booking slots are
  // dialogue parameters, so an offer does not make them known.
  bool value_known(const SlotDef& slot) const {
    if (constraints.count(slot.name) || booking_info.count(slot.name)) return true;
    return offered.has_value() && !slot.needed_for_book;
  }
};

struct TrackerWarnings {
  int book_before_offer = 0;
  int offer_without_match = 0;
  int inform_without_offer = 0;
  int noninformable_inform = 0;

  int total() const {
    return book_before_offer + offer_without_match + inform_without_offer +
           noninformable_inform;
  }
};

struct DialogueState {
  std::map<std::string, DomainState> domains;
  std::optional<std::string> active_domain;
  bool terminated = false;
  int turn = 0;
  TrackerWarnings warnings;

  const DomainState& domain(const std::string& name) const {
    auto it = domains.find(name);
    if (it == domains.end())
      throw std::runtime_error("tracker: unknown domain '" + name + "'");
    return it->second;
  }
  DomainState& domain(const std::string& name) {
    auto it = domains.find(name);
    if (it == domains.end())
      throw std::runtime_error("tracker: unknown domain '" + name + "'");
    return it->second;
  }
};

inline DialogueState init_state(const Ontology& ont, const Database& db) {
  DialogueState state;
  for (const Domain& d : ont.domains) {
    DomainState ds;
    ds.db_count = static_cast<int>(db.entities(d.name).size());
    state.domains.emplace(d.name, std::move(ds));
  }
  return state;
}

// Applies one user turn. last_user_* windows are replaced with this turn's
// acts; constraints, booking parameters and request sets accumulate;
// db_count is recomputed for every domain whose constraints changed.
inline void apply_user_acts(DialogueState& state, const std::vector<UserAct>& acts,
                            const Ontology& ont, const Database& db) {
  for (auto& [name, ds] : state.domains) {
    ds.last_user_slot_acts.clear();
    ds.last_user_general_acts.clear();
  }
  std::set<std::string> recount;
  for (const UserAct& act : acts) {
    validate_user_act(act);
    switch (act.intent) {
      case UserIntent::kInform: {
        const Domain& dom = ont.domain(act.domain);  // throws on unknown domain
        const SlotDef& slot = dom.slot(act.slot);    // throws on unknown slot
        DomainState& ds = state.domain(act.domain);
        if (slot.needed_for_book) {
          ds.booking_info[act.slot] = act.value;  // last writer wins
        } else if (slot.informable) {
          ds.constraints[act.slot] = act.value;
          recount.insert(act.domain);
        } else {
          state.warnings.noninformable_inform++;
        }
        ds.last_user_slot_acts[act.slot].insert(UserIntent::kInform);
        state.active_domain = act.domain;
        break;
      }
      case UserIntent::kRequest: {
        const Domain& dom = ont.domain(act.domain);
        dom.slot(act.slot);
        DomainState& ds = state.domain(act.domain);
        ds.requested.insert(act.slot);
        ds.last_user_slot_acts[act.slot].insert(UserIntent::kRequest);
        state.active_domain = act.domain;
        break;
      }
      case UserIntent::kRequestBook: {
        ont.domain(act.domain);
        DomainState& ds = state.domain(act.domain);
        ds.book_requested = true;
        ds.last_user_general_acts.insert(UserIntent::kRequestBook);
        state.active_domain = act.domain;
        break;
      }
      case UserIntent::kBye:
        state.terminated = true;
        [[fallthrough]];
      default:
        // Domain-less general acts are visible from every domain's view.
        for (auto& [name, ds] : state.domains)
          ds.last_user_general_acts.insert(act.intent);
        break;
    }
  }
  for (const std::string& name : recount)
    state.domain(name).db_count = query_count(db, ont, name, state.domain(name).constraints);
  state.turn++;
}

// Applies one system act and returns the act that actually took effect
// (an offer with no matching entity is converted to nooffer; an inform gets
// its value rendered from the offered entity). Invalid acts such as a book
// before any offer are tolerated no-ops counted in the warnings, so even an
// untrained policy can roll out.
inline SystemAct apply_system_act(DialogueState& state, const SystemAct& act,
                                  const Ontology& ont, const Database& db) {
  for (auto& [name, ds] : state.domains) {
    ds.last_sys_slot_acts.clear();
    ds.last_sys_general_acts.clear();
  }
  SystemAct effective = act;
  switch (act.intent) {
    case SysIntent::kOffer: {
      DomainState& ds = state.domain(act.domain);
      std::vector<Entity> matches = query(db, ont, act.domain, ds.constraints);
      if (matches.empty()) {
        effective.intent = SysIntent::kNoOffer;
        state.warnings.offer_without_match++;
      } else {
        ds.offered = matches.front().id;
      }
      break;
    }
    case SysIntent::kBook: {
      DomainState& ds = state.domain(act.domain);
      if (ds.offered)
        ds.booked = true;
      else
        state.warnings.book_before_offer++;
      break;
    }
    case SysIntent::kInform: {
      const Domain& dom = ont.domain(act.domain);
      dom.slot(act.slot);
      DomainState& ds = state.domain(act.domain);
      if (ds.offered) {
        const Entity* e = db.find(act.domain, *ds.offered);
        if (e) effective.value = e->assignments.at(act.slot);
        if (ds.requested.count(act.slot)) ds.answered.insert(act.slot);
      } else {
        state.warnings.inform_without_offer++;
        effective.value.clear();
      }
      break;
    }
    case SysIntent::kRequest:
    case SysIntent::kSelect: {
      const Domain& dom = ont.domain(act.domain);
      dom.slot(act.slot);
      break;
    }
    case SysIntent::kBye:
      state.terminated = true;
      break;
    case SysIntent::kReqMore:
    case SysIntent::kNoOffer:
      break;
  }

  // Record the effective act in the one-turn history.
  if (effective.intent == SysIntent::kBye) {
    for (auto& [name, ds] : state.domains)
      ds.last_sys_general_acts.insert(SysIntent::kBye);
  } else if (sys_intent_is_slot_act(effective.intent)) {
    state.domain(effective.domain).last_sys_slot_acts[effective.slot].insert(effective.intent);
  } else {
    state.domain(effective.domain).last_sys_general_acts.insert(effective.intent);
  }
  return effective;
}

}  // namespace todkit
