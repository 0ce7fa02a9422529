#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace todkit {

// Dialogue acts are the lingua franca of the framework: typed speech-act
// predicates exchanged between user and system instead of natural language.

enum class UserIntent {
  kInform,
  kRequest,
  kRequestBook,
  kAffirm,
  kNegate,
  kThank,
  kBye,
  kGreet,
};

enum class SysIntent {
  // Slot-dependent.
  kInform,
  kRequest,
  kSelect,
  // Slot-independent.
  kOffer,
  kBook,
  kReqMore,
  kNoOffer,
  kBye,
};

inline bool sys_intent_is_slot_act(SysIntent intent) {
  return intent == SysIntent::kInform || intent == SysIntent::kRequest ||
         intent == SysIntent::kSelect;
}

// True for user intents that carry neither slot nor value.
inline bool user_intent_is_general(UserIntent intent) {
  return intent != UserIntent::kInform && intent != UserIntent::kRequest;
}

struct UserAct {
  UserIntent intent = UserIntent::kInform;
  std::string domain;  // empty for intents that carry no domain
  std::string slot;
  std::string value;

  bool operator==(const UserAct&) const = default;
};

struct SystemAct {
  SysIntent intent = SysIntent::kReqMore;
  std::string domain;  // empty only for bye
  std::string slot;    // slot-dependent intents only
  std::string value;   // filled from the offered entity at render time

  bool operator==(const SystemAct&) const = default;
};

inline std::string_view to_string(UserIntent intent) {
  switch (intent) {
    case UserIntent::kInform: return "inform";
    case UserIntent::kRequest: return "request";
    case UserIntent::kRequestBook: return "request_book";
    case UserIntent::kAffirm: return "affirm";
    case UserIntent::kNegate: return "negate";
    case UserIntent::kThank: return "thank";
    case UserIntent::kBye: return "bye";
    case UserIntent::kGreet: return "greet";
  }
  return "?";
}

inline std::string_view to_string(SysIntent intent) {
  switch (intent) {
    case SysIntent::kInform: return "inform";
    case SysIntent::kRequest: return "request";
    case SysIntent::kSelect: return "select";
    case SysIntent::kOffer: return "offer";
    case SysIntent::kBook: return "book";
    case SysIntent::kReqMore: return "reqmore";
    case SysIntent::kNoOffer: return "nooffer";
    case SysIntent::kBye: return "bye";
  }
  return "?";
}

inline UserIntent user_intent_from_string(std::string_view s) {
  if (s == "inform") return UserIntent::kInform;
  if (s == "request") return UserIntent::kRequest;
  if (s == "request_book") return UserIntent::kRequestBook;
  if (s == "affirm") return UserIntent::kAffirm;
  if (s == "negate") return UserIntent::kNegate;
  if (s == "thank") return UserIntent::kThank;
  if (s == "bye") return UserIntent::kBye;
  if (s == "greet") return UserIntent::kGreet;
  throw std::runtime_error("unknown user intent: " + std::string(s));
}

inline SysIntent sys_intent_from_string(std::string_view s) {
  if (s == "inform") return SysIntent::kInform;
  if (s == "request") return SysIntent::kRequest;
  if (s == "select") return SysIntent::kSelect;
  if (s == "offer") return SysIntent::kOffer;
  if (s == "book") return SysIntent::kBook;
  if (s == "reqmore") return SysIntent::kReqMore;
  if (s == "nooffer") return SysIntent::kNoOffer;
  if (s == "bye") return SysIntent::kBye;
  throw std::runtime_error("unknown system intent: " + std::string(s));
}

// Checks the slot/value arity rules for user acts. Throws on violation.
inline void validate_user_act(const UserAct& act) {
  switch (act.intent) {
    case UserIntent::kInform:
      if (act.domain.empty() || act.slot.empty() || act.value.empty())
        throw std::runtime_error("inform requires domain, slot and value");
      break;
    case UserIntent::kRequest:
      if (act.domain.empty() || act.slot.empty())
        throw std::runtime_error("request requires domain and slot");
      break;
    case UserIntent::kRequestBook:
      if (act.domain.empty())
        throw std::runtime_error("request_book requires a domain");
      break;
    default:
      if (!act.slot.empty() || !act.value.empty())
        throw std::runtime_error(std::string(to_string(act.intent)) +
                                 " carries no slot or value");
      break;
  }
}

inline std::string describe(const SystemAct& act) {
  std::string out{to_string(act.intent)};
  out += "(";
  out += act.domain;
  if (!act.slot.empty()) out += ", " + act.slot;
  if (!act.value.empty()) out += ", " + act.value;
  out += ")";
  return out;
}

inline std::string describe(const UserAct& act) {
  std::string out{to_string(act.intent)};
  out += "(";
  out += act.domain;
  if (!act.slot.empty()) out += ", " + act.slot;
  if (!act.value.empty()) out += ", " + act.value;
  out += ")";
  return out;
}

}  // namespace todkit
