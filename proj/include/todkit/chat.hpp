#pragma once

#include <istream>
#include <ostream>
#include <sstream>

#include "todkit/transcript.hpp"
#include "todkit/usersim.hpp"

namespace todkit {

// Act-level chat loop: the user types acts in a mini-syntax (or picks from a
// numbered menu), the system act is rendered through fixed templates, and
// the session ends with a yes/no satisfaction prompt.

inline std::string render_system_act(const SystemAct& act, const DialogueState& state,
                                     const Database& db) {
  switch (act.intent) {
    case SysIntent::kRequest:
      return "Which " + act.slot + " would you like for the " + act.domain + "?";
    case SysIntent::kSelect:
      return "Do you have a preference for the " + act.domain + " " + act.slot + "?";
    case SysIntent::kInform: {
      const DomainState& ds = state.domain(act.domain);
      std::string entity = ds.offered ? *ds.offered : act.domain;
      if (act.value.empty()) return "I have no " + act.slot + " to give yet.";
      return "The " + act.slot + " of " + entity + " is " + act.value + ".";
    }
    case SysIntent::kOffer: {
      const DomainState& ds = state.domain(act.domain);
      if (ds.offered) {
        const Entity* e = db.find(act.domain, *ds.offered);
        std::string detail;
        if (e) {
          for (const auto& [slot, value] : state.domain(act.domain).constraints)
            detail += " " + slot + "=" + value;
        }
        return "How about " + *ds.offered + "?" + (detail.empty() ? "" : " It matches" + detail + ".");
      }
      return "Let me look that up.";
    }
    case SysIntent::kBook: {
      const DomainState& ds = state.domain(act.domain);
      if (ds.booked && ds.offered) return "Done, " + *ds.offered + " is booked for you.";
      return "I cannot book anything yet.";
    }
    case SysIntent::kNoOffer:
      return "Sorry, no " + act.domain + " matches those constraints.";
    case SysIntent::kReqMore:
      return "Anything else I can help with?";
    case SysIntent::kBye:
      return "Goodbye!";
  }
  return "...";
}

// Parses one input line into user acts. Syntax, one or two acts separated
// by ';':
//   inform <domain> <slot> <value>
//   request <domain> <slot>
//   request_book <domain>
//   affirm | negate | thank | greet | bye
inline std::vector<UserAct> parse_user_line(const std::string& line) {
  std::vector<UserAct> acts;
  std::stringstream parts(line);
  std::string part;
  while (std::getline(parts, part, ';')) {
    std::stringstream ss(part);
    std::string intent;
    if (!(ss >> intent)) continue;
    UserAct act;
    act.intent = user_intent_from_string(intent);
    switch (act.intent) {
      case UserIntent::kInform: {
        std::string value_tail;
        if (!(ss >> act.domain >> act.slot)) throw std::runtime_error("inform needs: inform <domain> <slot> <value>");
        std::string word;
        while (ss >> word) value_tail += (value_tail.empty() ? "" : " ") + word;
        if (value_tail.empty()) throw std::runtime_error("inform needs a value");
        act.value = value_tail;
        break;
      }
      case UserIntent::kRequest:
        if (!(ss >> act.domain >> act.slot)) throw std::runtime_error("request needs: request <domain> <slot>");
        break;
      case UserIntent::kRequestBook:
        if (!(ss >> act.domain)) throw std::runtime_error("request_book needs: request_book <domain>");
        break;
      default:
        break;
    }
    validate_user_act(act);
    acts.push_back(std::move(act));
    if (acts.size() == 2) break;
  }
  if (acts.empty()) throw std::runtime_error("empty input");
  return acts;
}

inline void print_chat_help(std::ostream& out) {
  out << "commands:\n"
      << "  inform <domain> <slot> <value>   state a constraint\n"
      << "  request <domain> <slot>          ask for a value\n"
      << "  request_book <domain>            ask to book\n"
      << "  affirm | negate | thank | greet | bye\n"
      << "  menu                             numbered act suggestions\n"
      << "  help                             this text\n"
      << "two acts per turn can be joined with ';'\n";
}

struct ChatOutcome {
  Dialogue transcript;
  bool satisfied = false;
  bool finished = false;
};

// Menu entries offered for the current state.
inline std::vector<std::string> chat_menu(const DialogueState& state, const Ontology& ont) {
  std::vector<std::string> items;
  std::string active = select_active_domain(state, ont);
  const Domain& dom = ont.domain(active);
  for (const SlotDef& slot : dom.slots) {
    if (slot.informable && !state.domain(active).constraints.count(slot.name))
      items.push_back("inform " + active + " " + slot.name + " " + slot.values.front());
    if (items.size() >= 4) break;
  }
  for (const SlotDef& slot : dom.slots) {
    if (slot.requestable) items.push_back("request " + active + " " + slot.name);
    if (items.size() >= 7) break;
  }
  items.push_back("request_book " + active);
  items.push_back("bye");
  return items;
}

// Runs the interactive session over arbitrary streams so it is scriptable in
// tests. The policy sees exactly the same tracker path as run_episode.
inline ChatOutcome chat_repl(const SystemPolicyFn& policy, const Ontology& ont,
                             const Database& db, std::istream& in, std::ostream& out,
                             std::uint64_t seed = 0) {
  DialogueState state = init_state(ont, db);
  RngStream policy_rng = RngStream(seed).child(2);
  ChatOutcome outcome;
  std::vector<std::string> menu;

  out << "You are talking to the dialogue manager. Type 'help' for the syntax.\n";
  std::string line;
  while (true) {
    out << "you> " << std::flush;
    if (!std::getline(in, line)) break;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line == "help") {
      print_chat_help(out);
      continue;
    }
    if (line == "menu") {
      menu = chat_menu(state, ont);
      for (std::size_t i = 0; i < menu.size(); ++i) out << "  " << (i + 1) << ") " << menu[i] << "\n";
      continue;
    }
    std::vector<UserAct> acts;
    try {
      // A bare number picks from the last menu.
      if (!menu.empty() && line.find_first_not_of("0123456789") == std::string::npos) {
        std::size_t pick = static_cast<std::size_t>(std::stoul(line));
        if (pick < 1 || pick > menu.size()) throw std::runtime_error("menu pick out of range");
        acts = parse_user_line(menu[pick - 1]);
      } else {
        acts = parse_user_line(line);
      }
      // Probe act validity against the ontology before mutating anything.
      DialogueState probe = state;
      apply_user_acts(probe, acts, ont, db);
      state = std::move(probe);
    } catch (const std::exception& e) {
      out << "did not understand that (" << e.what() << ")\n";
      print_chat_help(out);
      continue;
    }
    std::string active = select_active_domain(state, ont);
    SystemAct proposed = policy(state, active, ont, db, policy_rng);
    SystemAct effective = apply_system_act(state, proposed, ont, db);
    outcome.transcript.turns.push_back(Exchange{acts, effective});
    out << "sys[" << describe(effective) << "]> " << render_system_act(effective, state, db)
        << "\n";
    if (state.terminated) break;
  }

  out << "Were you satisfied with the system? (y/n) " << std::flush;
  if (std::getline(in, line)) {
    outcome.satisfied = !line.empty() && (line[0] == 'y' || line[0] == 'Y');
    outcome.finished = true;
  }
  out << "Thanks!\n";
  return outcome;
}

}  // namespace todkit
