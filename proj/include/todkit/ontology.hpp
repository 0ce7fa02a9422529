#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "todkit/rng.hpp"

namespace todkit {

using Json = nlohmann::json;

struct SlotDef {
  std::string name;
  bool informable = false;
  bool requestable = false;
  bool needed_for_find = false;
  bool needed_for_book = false;
  std::vector<std::string> values;  // closed vocabulary, duplicate-free
};

struct Domain {
  std::string name;
  std::vector<SlotDef> slots;  // order is canonical and stable

  int slot_index(std::string_view slot) const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].name == slot) return static_cast<int>(i);
    return -1;
  }

  const SlotDef& slot(std::string_view name) const {
    int idx = slot_index(name);
    if (idx < 0)
      throw std::runtime_error("unknown slot '" + std::string(name) +
                               "' in domain '" + this->name + "'");
    return slots[static_cast<std::size_t>(idx)];
  }
};

struct Ontology {
  std::vector<Domain> domains;  // order stable across runs

  int domain_index(std::string_view name) const {
    for (std::size_t i = 0; i < domains.size(); ++i)
      if (domains[i].name == name) return static_cast<int>(i);
    return -1;
  }

  const Domain& domain(std::string_view name) const {
    int idx = domain_index(name);
    if (idx < 0) throw std::runtime_error("unknown domain '" + std::string(name) + "'");
    return domains[static_cast<std::size_t>(idx)];
  }

  int total_slots() const {
    int n = 0;
    for (const auto& d : domains) n += static_cast<int>(d.slots.size());
    return n;
  }
};

struct Entity {
  std::string domain;
  std::string id;
  std::map<std::string, std::string> assignments;  // one value per slot
};

struct Database {
  // Entities grouped by domain, ordered by id within each group.
  std::map<std::string, std::vector<Entity>> by_domain;
  std::uint64_t seed = 0;

  const std::vector<Entity>& entities(const std::string& domain) const {
    auto it = by_domain.find(domain);
    if (it == by_domain.end())
      throw std::runtime_error("unknown domain '" + domain + "' in database");
    return it->second;
  }

  const Entity* find(const std::string& domain, const std::string& id) const {
    for (const auto& e : entities(domain))
      if (e.id == id) return &e;
    return nullptr;
  }
};

struct DomainGoal {
  std::map<std::string, std::string> find_constraints;
  std::vector<std::string> request_slots;  // canonical order, unique
  std::optional<std::map<std::string, std::string>> book;
};

struct UserGoal {
  // Ordered: the simulated user works through domains in this order.
  std::vector<std::pair<std::string, DomainGoal>> domains;
};

// ---------------------------------------------------------------------------
// Ontology loading. Accepts either a bare top-level array of domains or a
// wrapper object {"version": ..., "domains": [...]} as shipped in data/.

namespace detail {

inline const Json& require_field(const Json& node, const char* key,
                                 const std::string& path) {
  if (!node.contains(key))
    throw std::runtime_error("ontology: missing field '" + std::string(key) +
                             "' at " + path);
  return node.at(key);
}

inline SlotDef parse_slot(const Json& node, const std::string& path) {
  if (!node.is_object()) throw std::runtime_error("ontology: " + path + " is not an object");
  SlotDef slot;
  slot.name = require_field(node, "name", path).get<std::string>();
  slot.informable = require_field(node, "informable", path).get<bool>();
  slot.requestable = require_field(node, "requestable", path).get<bool>();
  slot.needed_for_find = require_field(node, "needed_for_find", path).get<bool>();
  slot.needed_for_book = require_field(node, "needed_for_book", path).get<bool>();
  for (const auto& v : require_field(node, "values", path))
    slot.values.push_back(v.get<std::string>());
  if (slot.values.empty())
    throw std::runtime_error("ontology: empty value set at " + path + ".values");
  std::set<std::string> uniq(slot.values.begin(), slot.values.end());
  if (uniq.size() != slot.values.size())
    throw std::runtime_error("ontology: duplicate value at " + path + ".values");
  if (slot.needed_for_book && !slot.informable)
    throw std::runtime_error("ontology: slot needed_for_book must be informable at " + path);
  return slot;
}

}  // namespace detail

inline Ontology load_ontology(const Json& doc) {
  const Json* domains = &doc;
  if (doc.is_object()) domains = &detail::require_field(doc, "domains", "$");
  if (!domains->is_array())
    throw std::runtime_error("ontology: top level must be a list of domains");
  Ontology ont;
  std::set<std::string> domain_names;
  for (std::size_t di = 0; di < domains->size(); ++di) {
    const std::string dpath = "$.domains[" + std::to_string(di) + "]";
    const Json& dnode = (*domains)[di];
    Domain dom;
    dom.name = detail::require_field(dnode, "name", dpath).get<std::string>();
    if (!domain_names.insert(dom.name).second)
      throw std::runtime_error("ontology: duplicate domain '" + dom.name + "' at " + dpath);
    const Json& slots = detail::require_field(dnode, "slots", dpath);
    std::set<std::string> slot_names;
    for (std::size_t si = 0; si < slots.size(); ++si) {
      const std::string spath = dpath + ".slots[" + std::to_string(si) + "]";
      SlotDef slot = detail::parse_slot(slots[si], spath);
      if (!slot_names.insert(slot.name).second)
        throw std::runtime_error("ontology: duplicate slot '" + slot.name + "' at " + spath);
      dom.slots.push_back(std::move(slot));
    }
    if (dom.slots.empty())
      throw std::runtime_error("ontology: domain without slots at " + dpath);
    ont.domains.push_back(std::move(dom));
  }
  if (ont.domains.empty()) throw std::runtime_error("ontology: no domains");
  return ont;
}

inline Ontology load_ontology_text(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("ontology: invalid JSON: ") + e.what());
  }
  return load_ontology(doc);
}

inline Ontology load_ontology_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ontology: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return load_ontology_text(buf.str());
}

// Stable 64-bit fingerprint of the ontology structure (FNV-1a over a
// canonical rendering). Embedded in checkpoints so a model cannot be
// evaluated against a mismatched ontology.
inline std::uint64_t ontology_hash(const Ontology& ont) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;
    h *= 0x100000001b3ULL;
  };
  for (const auto& d : ont.domains) {
    mix(d.name);
    for (const auto& s : d.slots) {
      mix(s.name);
      mix(s.informable ? "i1" : "i0");
      mix(s.requestable ? "r1" : "r0");
      mix(s.needed_for_find ? "f1" : "f0");
      mix(s.needed_for_book ? "b1" : "b0");
      for (const auto& v : s.values) mix(v);
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Synthetic database.

inline Database generate_database(const Ontology& ont, std::uint64_t seed,
                                  int per_domain) {
  if (per_domain < 1) throw std::runtime_error("per_domain must be >= 1");
  Database db;
  db.seed = seed;
  for (std::size_t di = 0; di < ont.domains.size(); ++di) {
    const Domain& dom = ont.domains[di];
    RngStream rng = RngStream(seed).child(di);
    std::vector<Entity>& out = db.by_domain[dom.name];
    out.reserve(static_cast<std::size_t>(per_domain));
    for (int k = 0; k < per_domain; ++k) {
      Entity e;
      e.domain = dom.name;
      char idbuf[16];
      std::snprintf(idbuf, sizeof(idbuf), "%03d", k);
      e.id = dom.name + "_" + idbuf;
      for (const SlotDef& slot : dom.slots)
        e.assignments[slot.name] = slot.values[rng.next_below(slot.values.size())];
      out.push_back(std::move(e));
    }
  }
  return db;
}

// Entities of `domain` whose assignments match every constraint, in stable
// id order. Constraints must reference informable slots.
inline std::vector<Entity> query(const Database& db, const Ontology& ont,
                                 const std::string& domain,
                                 const std::map<std::string, std::string>& constraints) {
  const Domain& dom = ont.domain(domain);
  for (const auto& [slot, value] : constraints) {
    (void)value;
    int idx = dom.slot_index(slot);
    if (idx < 0)
      throw std::runtime_error("query: unknown slot '" + slot + "' in domain '" + domain + "'");
    if (!dom.slots[static_cast<std::size_t>(idx)].informable)
      throw std::runtime_error("query: slot '" + slot + "' is not informable");
  }
  std::vector<Entity> out;
  for (const Entity& e : db.entities(domain)) {
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      auto it = e.assignments.find(slot);
      if (it == e.assignments.end() || it->second != value) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(e);
  }
  return out;
}

inline int query_count(const Database& db, const Ontology& ont,
                       const std::string& domain,
                       const std::map<std::string, std::string>& constraints) {
  const Domain& dom = ont.domain(domain);
  for (const auto& [slot, value] : constraints) {
    (void)value;
    if (dom.slot_index(slot) < 0)
      throw std::runtime_error("query: unknown slot '" + slot + "' in domain '" + domain + "'");
  }
  int n = 0;
  for (const Entity& e : db.entities(domain)) {
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      auto it = e.assignments.find(slot);
      if (it == e.assignments.end() || it->second != value) {
        ok = false;
        break;
      }
    }
    n += ok;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Goal sampling. Parameters are fixed constants of the environment: 1-3
// domains, 1-3 find constraints (rejection-sampled until satisfiable), 1-3
// request slots, booking with probability 0.5 where the domain supports it.

struct GoalConfig {
  int max_domains = 3;
  int max_find_constraints = 3;
  int max_requests = 3;
  double book_probability = 0.5;
  int max_attempts = 1000;
};

inline UserGoal sample_goal(const Ontology& ont, const Database& db,
                            std::uint64_t seed, const GoalConfig& cfg = {}) {
  RngStream rng = RngStream(seed).child(0x60a1);
  UserGoal goal;

  int n_domains = 1 + static_cast<int>(rng.next_below(
                          static_cast<std::size_t>(std::min<int>(cfg.max_domains,
                                                                 static_cast<int>(ont.domains.size())))));
  std::vector<int> order(ont.domains.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
  order.resize(static_cast<std::size_t>(n_domains));

  for (int di : order) {
    const Domain& dom = ont.domains[static_cast<std::size_t>(di)];
    DomainGoal dg;

    std::vector<const SlotDef*> find_cand;
    std::vector<const SlotDef*> book_slots;
    std::vector<const SlotDef*> req_cand;
    for (const SlotDef& s : dom.slots) {
      if (s.informable && !s.needed_for_book) find_cand.push_back(&s);
      if (s.needed_for_book) book_slots.push_back(&s);
      if (s.requestable) req_cand.push_back(&s);
    }

    // Find constraints: rejection-sample value combinations until some entity
    // matches; after max_attempts the constraint count is reduced.
    int want = 1 + static_cast<int>(rng.next_below(static_cast<std::size_t>(
                      std::min<int>(cfg.max_find_constraints,
                                    static_cast<int>(find_cand.size())))));
    while (want >= 1) {
      bool found = false;
      for (int attempt = 0; attempt < cfg.max_attempts && !found; ++attempt) {
        std::vector<const SlotDef*> pick = find_cand;
        for (std::size_t i = pick.size(); i > 1; --i)
          std::swap(pick[i - 1], pick[rng.next_below(i)]);
        pick.resize(static_cast<std::size_t>(want));
        std::map<std::string, std::string> constraints;
        for (const SlotDef* s : pick)
          constraints[s->name] = s->values[rng.next_below(s->values.size())];
        if (query_count(db, ont, dom.name, constraints) >= 1) {
          dg.find_constraints = std::move(constraints);
          found = true;
        }
      }
      if (found) break;
      --want;
    }

    // Request slots: requestable slots outside the constraint keys, kept in
    // canonical slot order.
    std::vector<const SlotDef*> req_free;
    for (const SlotDef* s : req_cand)
      if (!dg.find_constraints.count(s->name)) req_free.push_back(s);
    if (!req_free.empty()) {
      int n_req = 1 + static_cast<int>(rng.next_below(static_cast<std::size_t>(
                          std::min<int>(cfg.max_requests, static_cast<int>(req_free.size())))));
      std::vector<const SlotDef*> pick = req_free;
      for (std::size_t i = pick.size(); i > 1; --i)
        std::swap(pick[i - 1], pick[rng.next_below(i)]);
      pick.resize(static_cast<std::size_t>(n_req));
      for (const SlotDef& s : dom.slots)
        for (const SlotDef* p : pick)
          if (p->name == s.name) dg.request_slots.push_back(s.name);
    }

    // Booking task with probability 0.5 when the domain supports booking;
    // every book slot gets a target value.
    if (!book_slots.empty() && rng.next_bernoulli(cfg.book_probability)) {
      std::map<std::string, std::string> book;
      for (const SlotDef* s : book_slots)
        book[s->name] = s->values[rng.next_below(s->values.size())];
      dg.book = std::move(book);
    }

    goal.domains.emplace_back(dom.name, std::move(dg));
  }
  return goal;
}

// ---------------------------------------------------------------------------
// Serialization (databases and goals round-trip through JSON; nlohmann keeps
// object keys sorted, so dumps are deterministic).

inline Json database_to_json(const Database& db) {
  Json doc;
  doc["seed"] = db.seed;
  Json domains = Json::object();
  for (const auto& [name, entities] : db.by_domain) {
    Json list = Json::array();
    for (const Entity& e : entities) {
      Json je;
      je["id"] = e.id;
      je["assignments"] = e.assignments;
      list.push_back(std::move(je));
    }
    domains[name] = std::move(list);
  }
  doc["domains"] = std::move(domains);
  return doc;
}

inline Database database_from_json(const Json& doc) {
  Database db;
  db.seed = doc.at("seed").get<std::uint64_t>();
  for (const auto& [name, list] : doc.at("domains").items()) {
    std::vector<Entity>& out = db.by_domain[name];
    for (const Json& je : list) {
      Entity e;
      e.domain = name;
      e.id = je.at("id").get<std::string>();
      e.assignments = je.at("assignments").get<std::map<std::string, std::string>>();
      out.push_back(std::move(e));
    }
  }
  return db;
}

inline Json goal_to_json(const UserGoal& goal) {
  Json doc = Json::array();
  for (const auto& [name, dg] : goal.domains) {
    Json jd;
    jd["domain"] = name;
    jd["find"] = dg.find_constraints;
    jd["requests"] = dg.request_slots;
    if (dg.book) jd["book"] = *dg.book;
    doc.push_back(std::move(jd));
  }
  return doc;
}

inline UserGoal goal_from_json(const Json& doc) {
  UserGoal goal;
  for (const Json& jd : doc) {
    DomainGoal dg;
    dg.find_constraints = jd.at("find").get<std::map<std::string, std::string>>();
    dg.request_slots = jd.at("requests").get<std::vector<std::string>>();
    if (jd.contains("book"))
      dg.book = jd.at("book").get<std::map<std::string, std::string>>();
    goal.domains.emplace_back(jd.at("domain").get<std::string>(), std::move(dg));
  }
  return goal;
}

}  // namespace todkit
