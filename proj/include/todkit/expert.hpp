#pragma once

#include <map>
#include <string>
#include <vector>

#include "todkit/dip.hpp"
#include "todkit/rng.hpp"
#include "todkit/state.hpp"

namespace todkit {

// Hand-crafted expert dialogue manager. A fixed rule cascade over the
// tracked state; pure function of (state, active domain, database), so
// identical inputs always give identical acts.

struct ExpertConfig {
  double noise_rate = 0.0;       // probability of a uniformly random valid act
  double overinform_rate = 0.0;  // probability of informing a random known slot after an offer
  bool shuffle_requests = false; // per-episode random slot order for request rules
  std::uint64_t seed = 0;

  void validate() const {
    if (noise_rate < 0 || noise_rate > 1 || overinform_rate < 0 || overinform_rate > 1)
      throw std::runtime_error("expert: probabilities must be in [0,1]");
  }
};

// Domain of the most recent domain-bearing user act; carried over when a
// turn mentions no domain. Falls back to the first domain before any user
// act has been seen.
inline std::string select_active_domain(const DialogueState& state, const Ontology& ont) {
  if (state.active_domain) return *state.active_domain;
  return ont.domains.front().name;
}

// Keep requesting find slots the user has not constrained yet while more
// than `db_threshold` entities match. The default of zero means the expert
// collects every needed find slot before offering, which makes its offer
// decision a purely structural predicate (are any needed slots still open?)
// rather than a function of the match count -- the same decision is then
// exercised at every db-count bucket, which is what makes it learnable from
// a handful of dialogues.
inline constexpr int kExpertDbThreshold = 0;

inline SystemAct expert_act(const DialogueState& state, const std::string& active,
                            const Ontology& ont, const Database& db,
                            int db_threshold = kExpertDbThreshold,
                            const std::vector<int>* slot_order = nullptr) {
  const Domain& dom = ont.domain(active);
  const DomainState& ds = state.domain(active);

  auto ordered = [&](std::size_t i) -> const SlotDef& {
    if (slot_order) return dom.slots[static_cast<std::size_t>((*slot_order)[i])];
    return dom.slots[i];
  };

  // 1. The user said goodbye.
  if (state.terminated || ds.last_user_general_acts.count(UserIntent::kBye))
    return SystemAct{SysIntent::kBye, "", "", ""};

  // 2. Narrow the search while too many entities match.
  if (ds.db_count > db_threshold)
    for (std::size_t i = 0; i < dom.slots.size(); ++i) {
      const SlotDef& slot = ordered(i);
      if (slot.needed_for_find && !ds.constraints.count(slot.name))
        return SystemAct{SysIntent::kRequest, active, slot.name, ""};
    }

  // 3. Nothing matches.
  if (ds.db_count == 0) return SystemAct{SysIntent::kNoOffer, active, "", ""};

  // 4. Offer; re-offer whenever the user just added a constraint past an
  // existing offer, so informs and bookings always come from an entity that
  // matches everything said so far. The trigger is the previous turn's
  // constraint informs, which keeps the rule a function of the features the
  // learned policies see.
  bool constraints_moved = false;
  if (ds.offered)
    for (const auto& [slot_name, intents] : ds.last_user_slot_acts)
      if (intents.count(UserIntent::kInform) && !dom.slot(slot_name).needed_for_book)
        constraints_moved = true;
  if (!ds.offered || constraints_moved) return SystemAct{SysIntent::kOffer, active, "", ""};

  // 5. Answer open user requests in canonical slot order.
  for (const SlotDef& slot : dom.slots)
    if (ds.requested.count(slot.name) && !ds.answered.count(slot.name))
      return SystemAct{SysIntent::kInform, active, slot.name, ""};

  // 6. Collect missing booking parameters.
  if (ds.book_requested)
    for (std::size_t i = 0; i < dom.slots.size(); ++i) {
      const SlotDef& slot = ordered(i);
      if (slot.needed_for_book && !ds.booking_info.count(slot.name))
        return SystemAct{SysIntent::kRequest, active, slot.name, ""};
    }

  // 7. Book once every parameter is known.
  if (ds.book_requested && !ds.booked) return SystemAct{SysIntent::kBook, active, "", ""};

  // 8. Nothing to do.
  return SystemAct{SysIntent::kReqMore, active, "", ""};
}

// Per-episode state of the noise-wrapped expert: one rng plus, when
// shuffling is enabled, one slot permutation per domain.
struct ExpertSession {
  ExpertConfig cfg;
  RngStream rng;
  std::map<std::string, std::vector<int>> slot_order;

  ExpertSession(const ExpertConfig& config, const Ontology& ont, std::uint64_t episode_seed)
      : cfg(config), rng(RngStream(config.seed).child(episode_seed)) {
    cfg.validate();
    if (!cfg.shuffle_requests) return;
    for (const Domain& d : ont.domains) {
      std::vector<int> order(d.slots.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);
      slot_order[d.name] = std::move(order);
    }
  }
};

// With probability noise_rate emits a uniformly random act within the valid
// mask; with probability overinform_rate after an offer informs a random
// known slot; otherwise delegates to the rule cascade.
inline SystemAct noisy_expert_act(const DialogueState& state, const std::string& active,
                                  const Ontology& ont, const Database& db,
                                  ExpertSession& session) {
  const DomainState& ds = state.domain(active);
  if (session.cfg.noise_rate > 0.0 && session.rng.next_bernoulli(session.cfg.noise_rate)) {
    ActionCatalog catalog = make_catalog(ont, active);
    std::vector<std::uint8_t> mask = valid_mask(state, active, catalog, ont);
    std::vector<int> valid;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) valid.push_back(static_cast<int>(i));
    return index_to_act(valid[session.rng.next_below(valid.size())], catalog);
  }
  if (session.cfg.overinform_rate > 0.0 && ds.offered &&
      session.rng.next_bernoulli(session.cfg.overinform_rate)) {
    const Domain& dom = ont.domain(active);
    std::vector<const SlotDef*> known;
    for (const SlotDef& slot : dom.slots)
      if (ds.value_known(slot)) known.push_back(&slot);
    if (!known.empty()) {
      const SlotDef* pick = known[session.rng.next_below(known.size())];
      return SystemAct{SysIntent::kInform, active, pick->name, ""};
    }
  }
  const std::vector<int>* order = nullptr;
  if (session.cfg.shuffle_requests) order = &session.slot_order.at(active);
  return expert_act(state, active, ont, db, kExpertDbThreshold, order);
}

}  // namespace todkit
