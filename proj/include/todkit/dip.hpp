#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "todkit/state.hpp"

namespace todkit {

// Domain-independent parametrization: every domain state maps to one
// slot-independent feature vector of fixed width plus one fixed-width vector
// per slot. Constant widths across domains are what make weight sharing
// across slots and domains well-typed.

inline constexpr int kIndependentDim = 21;
inline constexpr int kPerSlotDim = 8;
inline constexpr int kGeneralActions = 5;
inline constexpr int kSlotActions = 3;
inline constexpr const char* kFeatureLayoutVersion = "dip-v1";

// Slot-independent layout:
//   [0..5]   previous-turn user general acts (bye, greet, thank,
//            request_book, affirm, negate)
//   [6..11]  previous-turn system general acts (offer, book, reqmore,
//            nooffer, bye, pad) -- pad is permanently zero
//   [12..17] db-count bucket one-hot over {0,1,2,3,4,>=5}
//   [18]     terminated   [19] offered   [20] booked
// Per-slot layout:
//   [0..1]   previous-turn user acts on the slot (inform, request)
//   [2..4]   previous-turn system acts on the slot (inform, request, select)
//   [5]      value known  [6] needed for find  [7] needed for book

struct DipState {
  std::string domain;
  std::vector<double> independent;            // kIndependentDim
  std::vector<std::vector<double>> per_slot;  // n x kPerSlotDim, canonical order
};

inline int db_count_bucket(int count) { return count >= 5 ? 5 : count; }

inline DipState featurize(const DialogueState& state, const std::string& domain,
                          const Ontology& ont) {
  const Domain& dom = ont.domain(domain);  // throws on unknown domain
  const DomainState& ds = state.domain(domain);

  DipState out;
  out.domain = domain;
  out.independent.assign(kIndependentDim, 0.0);

  static constexpr UserIntent kUserGeneralOrder[6] = {
      UserIntent::kBye,    UserIntent::kGreet,  UserIntent::kThank,
      UserIntent::kRequestBook, UserIntent::kAffirm, UserIntent::kNegate};
  for (int i = 0; i < 6; ++i)
    if (ds.last_user_general_acts.count(kUserGeneralOrder[i]))
      out.independent[static_cast<std::size_t>(i)] = 1.0;

  static constexpr SysIntent kSysGeneralOrder[5] = {
      SysIntent::kOffer, SysIntent::kBook, SysIntent::kReqMore,
      SysIntent::kNoOffer, SysIntent::kBye};
  for (int i = 0; i < 5; ++i)
    if (ds.last_sys_general_acts.count(kSysGeneralOrder[i]))
      out.independent[static_cast<std::size_t>(6 + i)] = 1.0;
  // index 11 is the pad position, always zero

  out.independent[static_cast<std::size_t>(12 + db_count_bucket(ds.db_count))] = 1.0;
  out.independent[18] = state.terminated ? 1.0 : 0.0;
  out.independent[19] = ds.offered ? 1.0 : 0.0;
  out.independent[20] = ds.booked ? 1.0 : 0.0;

  out.per_slot.resize(dom.slots.size());
  for (std::size_t i = 0; i < dom.slots.size(); ++i) {
    const SlotDef& slot = dom.slots[i];
    std::vector<double>& f = out.per_slot[i];
    f.assign(kPerSlotDim, 0.0);
    if (auto it = ds.last_user_slot_acts.find(slot.name); it != ds.last_user_slot_acts.end()) {
      if (it->second.count(UserIntent::kInform)) f[0] = 1.0;
      if (it->second.count(UserIntent::kRequest)) f[1] = 1.0;
    }
    if (auto it = ds.last_sys_slot_acts.find(slot.name); it != ds.last_sys_slot_acts.end()) {
      if (it->second.count(SysIntent::kInform)) f[2] = 1.0;
      if (it->second.count(SysIntent::kRequest)) f[3] = 1.0;
      if (it->second.count(SysIntent::kSelect)) f[4] = 1.0;
    }
    f[5] = ds.value_known(slot) ? 1.0 : 0.0;
    f[6] = slot.needed_for_find ? 1.0 : 0.0;
    f[7] = slot.needed_for_book ? 1.0 : 0.0;
  }
  return out;
}

// Flattens a DipState to [independent | slot0 | slot1 | ...]; this is also
// exactly the per-domain input layout of the hierarchical feed-forward nets.
inline std::vector<double> flatten(const DipState& s) {
  std::vector<double> out;
  out.reserve(s.independent.size() + s.per_slot.size() * kPerSlotDim);
  out.insert(out.end(), s.independent.begin(), s.independent.end());
  for (const auto& f : s.per_slot) out.insert(out.end(), f.begin(), f.end());
  return out;
}

// ---------------------------------------------------------------------------
// Per-domain action catalog: 5 general actions followed by 3 actions per
// slot in canonical slot order. The index mapping is a bijection.

struct ActionCatalog {
  std::string domain;
  std::vector<std::string> slots;  // canonical order

  int size() const { return kGeneralActions + kSlotActions * static_cast<int>(slots.size()); }
};

inline ActionCatalog make_catalog(const Ontology& ont, const std::string& domain) {
  const Domain& dom = ont.domain(domain);
  ActionCatalog cat;
  cat.domain = domain;
  for (const SlotDef& s : dom.slots) cat.slots.push_back(s.name);
  return cat;
}

inline constexpr SysIntent kGeneralActionOrder[kGeneralActions] = {
    SysIntent::kOffer, SysIntent::kBook, SysIntent::kReqMore,
    SysIntent::kNoOffer, SysIntent::kBye};
inline constexpr SysIntent kSlotActionOrder[kSlotActions] = {
    SysIntent::kInform, SysIntent::kRequest, SysIntent::kSelect};

inline int act_index(const SystemAct& act, const ActionCatalog& catalog) {
  if (!sys_intent_is_slot_act(act.intent)) {
    for (int i = 0; i < kGeneralActions; ++i)
      if (kGeneralActionOrder[i] == act.intent) return i;
    throw std::runtime_error("act_index: intent not in catalog");
  }
  for (std::size_t s = 0; s < catalog.slots.size(); ++s) {
    if (catalog.slots[s] != act.slot) continue;
    for (int k = 0; k < kSlotActions; ++k)
      if (kSlotActionOrder[k] == act.intent)
        return kGeneralActions + kSlotActions * static_cast<int>(s) + k;
  }
  throw std::runtime_error("act_index: slot '" + act.slot + "' not in catalog for domain '" +
                           catalog.domain + "'");
}

inline SystemAct index_to_act(int index, const ActionCatalog& catalog) {
  if (index < 0 || index >= catalog.size())
    throw std::runtime_error("index_to_act: index out of range");
  SystemAct act;
  act.domain = catalog.domain;
  if (index < kGeneralActions) {
    act.intent = kGeneralActionOrder[index];
    return act;
  }
  int rest = index - kGeneralActions;
  act.slot = catalog.slots[static_cast<std::size_t>(rest / kSlotActions)];
  act.intent = kSlotActionOrder[rest % kSlotActions];
  return act;
}

// Which actions may be taken in the current state. Applied at action
// selection and as -inf logits before the training softmax. The mask always
// keeps at least bye valid.
inline std::vector<std::uint8_t> valid_mask(const DialogueState& state,
                                            const std::string& domain,
                                            const ActionCatalog& catalog,
                                            const Ontology& ont) {
  const Domain& dom = ont.domain(domain);
  const DomainState& ds = state.domain(domain);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(catalog.size()), 0);
  mask[0] = ds.db_count >= 1;          // offer
  mask[1] = ds.offered.has_value();    // book
  mask[2] = 1;                         // reqmore
  mask[3] = 1;                         // nooffer
  mask[4] = 1;                         // bye
  for (std::size_t s = 0; s < catalog.slots.size(); ++s) {
    const SlotDef& slot = dom.slot(catalog.slots[s]);
    std::size_t base = static_cast<std::size_t>(kGeneralActions + kSlotActions * static_cast<int>(s));
    mask[base + 0] = ds.offered.has_value();  // inform renders from the offer
    mask[base + 1] = slot.informable;         // request
    mask[base + 2] = slot.informable;         // select
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Global (flat) layout used by the non-hierarchical policy: the independent
// block of the active domain followed by the per-slot blocks of every slot
// of every domain in ontology order, with inactive domains zeroed. Actions
// get global indices the same way.

struct GlobalLayout {
  std::vector<std::pair<std::string, std::string>> slots;  // (domain, slot)
  std::vector<int> domain_offsets;                         // first slot index per domain

  int feature_dim() const { return kIndependentDim + kPerSlotDim * static_cast<int>(slots.size()); }
  int action_dim() const { return kGeneralActions + kSlotActions * static_cast<int>(slots.size()); }
};

inline GlobalLayout make_global_layout(const Ontology& ont) {
  GlobalLayout layout;
  for (const Domain& d : ont.domains) {
    layout.domain_offsets.push_back(static_cast<int>(layout.slots.size()));
    for (const SlotDef& s : d.slots) layout.slots.emplace_back(d.name, s.name);
  }
  return layout;
}

inline std::vector<double> global_featurize(const DialogueState& state,
                                            const std::string& active,
                                            const Ontology& ont,
                                            const GlobalLayout& layout) {
  std::vector<double> out(static_cast<std::size_t>(layout.feature_dim()), 0.0);
  DipState dip = featurize(state, active, ont);
  std::copy(dip.independent.begin(), dip.independent.end(), out.begin());
  int di = ont.domain_index(active);
  int offset = layout.domain_offsets[static_cast<std::size_t>(di)];
  for (std::size_t i = 0; i < dip.per_slot.size(); ++i) {
    std::size_t base = static_cast<std::size_t>(kIndependentDim) +
                       static_cast<std::size_t>(kPerSlotDim) * (static_cast<std::size_t>(offset) + i);
    std::copy(dip.per_slot[i].begin(), dip.per_slot[i].end(), out.begin() + static_cast<long>(base));
  }
  return out;
}

// Embeds a per-domain action index into the global action space.
inline int global_act_index(int domain_index, int local_index, const GlobalLayout& layout) {
  if (local_index < kGeneralActions) return local_index;
  int offset = layout.domain_offsets[static_cast<std::size_t>(domain_index)];
  return local_index + kSlotActions * offset;
}

inline std::vector<std::uint8_t> global_valid_mask(const DialogueState& state,
                                                   const std::string& active,
                                                   const Ontology& ont,
                                                   const GlobalLayout& layout) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(layout.action_dim()), 0);
  ActionCatalog cat = make_catalog(ont, active);
  std::vector<std::uint8_t> local = valid_mask(state, active, cat, ont);
  int di = ont.domain_index(active);
  for (std::size_t i = 0; i < local.size(); ++i)
    mask[static_cast<std::size_t>(global_act_index(di, static_cast<int>(i), layout))] = local[i];
  return mask;
}

inline SystemAct global_index_to_act(int index, const Ontology& ont,
                                     const std::string& active,
                                     const GlobalLayout& layout) {
  if (index < kGeneralActions) {
    SystemAct act;
    act.intent = kGeneralActionOrder[index];
    act.domain = active;
    return act;
  }
  int rest = index - kGeneralActions;
  int slot_pos = rest / kSlotActions;
  const auto& [domain, slot] = layout.slots[static_cast<std::size_t>(slot_pos)];
  SystemAct act;
  act.intent = kSlotActionOrder[rest % kSlotActions];
  act.domain = domain;
  act.slot = slot;
  return act;
}

}  // namespace todkit
