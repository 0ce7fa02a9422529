#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "todkit/ontology.hpp"
#include "todkit/usersim.hpp"

namespace todkit {

// Line-delimited transcript format, identical for generated demonstrations
// and imported corpora. A line holding {"goal": ...} starts a new dialogue;
// each following line is one turn object {"turn", "speaker", "acts"}.

struct Dialogue {
  UserGoal goal;
  std::vector<Exchange> turns;
};

struct DemoCorpus {
  std::vector<Dialogue> dialogues;
  std::string source;  // "simulated-expert", "noisy-expert" or "external-human"
  std::uint64_t seed = 0;
  int attempts_used = 0;  // episodes rolled out to collect the kept dialogues
};

inline Json user_act_to_json(const UserAct& act) {
  Json j;
  j["intent"] = std::string(to_string(act.intent));
  if (!act.domain.empty()) j["domain"] = act.domain;
  if (!act.slot.empty()) j["slot"] = act.slot;
  if (!act.value.empty()) j["value"] = act.value;
  return j;
}

inline Json system_act_to_json(const SystemAct& act) {
  Json j;
  j["intent"] = std::string(to_string(act.intent));
  if (!act.domain.empty()) j["domain"] = act.domain;
  if (!act.slot.empty()) j["slot"] = act.slot;
  if (!act.value.empty()) j["value"] = act.value;
  return j;
}

inline UserAct user_act_from_json(const Json& j) {
  UserAct act;
  act.intent = user_intent_from_string(j.at("intent").get<std::string>());
  act.domain = j.value("domain", "");
  act.slot = j.value("slot", "");
  act.value = j.value("value", "");
  return act;
}

inline SystemAct system_act_from_json(const Json& j) {
  SystemAct act;
  act.intent = sys_intent_from_string(j.at("intent").get<std::string>());
  act.domain = j.value("domain", "");
  act.slot = j.value("slot", "");
  act.value = j.value("value", "");
  return act;
}

inline void write_dialogue(std::ostream& out, const Dialogue& dialogue) {
  Json goal_line;
  goal_line["goal"] = goal_to_json(dialogue.goal);
  out << goal_line.dump() << "\n";
  for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
    const Exchange& ex = dialogue.turns[t];
    Json user_line;
    user_line["turn"] = t;
    user_line["speaker"] = "user";
    Json uacts = Json::array();
    for (const UserAct& act : ex.user_acts) uacts.push_back(user_act_to_json(act));
    user_line["acts"] = std::move(uacts);
    out << user_line.dump() << "\n";

    Json sys_line;
    sys_line["turn"] = t;
    sys_line["speaker"] = "system";
    sys_line["acts"] = Json::array({system_act_to_json(ex.system_act)});
    out << sys_line.dump() << "\n";
  }
}

inline void write_corpus(std::ostream& out, const DemoCorpus& corpus) {
  for (const Dialogue& d : corpus.dialogues) write_dialogue(out, d);
}

inline std::string corpus_to_string(const DemoCorpus& corpus) {
  std::ostringstream out;
  write_corpus(out, corpus);
  return out.str();
}

inline Dialogue dialogue_from_record(const EpisodeRecord& record) {
  return Dialogue{record.goal, record.turns};
}

}  // namespace todkit
