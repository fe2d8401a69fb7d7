#pragma once

// Query planning: a deterministic grammar turns a compositional request into
// atomic motion prompts plus scene anchors; an optional chat-model adapter
// produces the same plan schema.
//
// Grammar (over lowercased words, punctuation other than commas ignored):
//   query    := clause (sep clause)*
//   sep      := "," | "then" | "and then" | "after that" | "next"
//   clause   := motion [anchor] | anchor [motion] | anchor
//   anchor   := start-mk place | end-mk place | "from" place "to" place
//   start-mk := ("starting" | "start" | "beginning" | "begin") [prep]
//   end-mk   := ("ending" | "end" | "finishing" | "finish" | "stopping") ["up"] [prep]
//   prep     := "from" | "at" | "above" | "near" | "over" | "by" | "behind" | "beside"
//             | "under" | "in front of"
// A clause counts as motion when it contains a motion keyword. A marker that
// opens a clause ends its place phrase at the first motion keyword. Anchors in
// a clause without motion attach to the nearest motion clause: start anchors
// to the following one, end anchors to the preceding one (falling back to the
// other side). "for N seconds" inside a motion clause becomes a duration hint.

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "chatcam/dataset.hpp"
#include "chatcam/error.hpp"
#include "json.hpp"

namespace chatcam {

using json = nlohmann::json;

inline constexpr int kPlanVersion = 1;

enum class AnchorRole { Start, End };

inline std::string_view role_name(AnchorRole r) { return r == AnchorRole::Start ? "start" : "end"; }

struct AtomicStep {
  std::string prompt;
  std::optional<double> duration_hint;

  bool operator==(const AtomicStep&) const = default;
};

struct AnchorStep {
  std::string prompt;
  AnchorRole role = AnchorRole::Start;
  std::size_t attaches_to = 0;  // index among the plan's atomic steps

  bool operator==(const AnchorStep&) const = default;
};

using PlanStep = std::variant<AtomicStep, AnchorStep>;

struct Plan {
  std::vector<PlanStep> steps;

  std::size_t atomic_count() const {
    return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const PlanStep& s) {
      return std::holds_alternative<AtomicStep>(s);
    }));
  }

  bool operator==(const Plan&) const = default;
};

// ---------------------------------------------------------------------------
// Validation and JSON

inline void validate(const Plan& plan) {
  const std::size_t n = plan.atomic_count();
  if (n == 0) throw Error(ErrorCode::PlanValidationFailed, "plan has no atomic step");
  std::vector<int> starts(n, 0), ends(n, 0);
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const std::string where = "step " + std::to_string(i) + ": ";
    if (const auto* a = std::get_if<AtomicStep>(&plan.steps[i])) {
      if (tokenize_words(a->prompt).empty()) throw Error(ErrorCode::PlanValidationFailed, where + "empty prompt");
      if (a->duration_hint && !(*a->duration_hint > 0.0 && std::isfinite(*a->duration_hint)))
        throw Error(ErrorCode::PlanValidationFailed, where + "duration hint must be positive");
    } else {
      const auto& an = std::get<AnchorStep>(plan.steps[i]);
      if (tokenize_words(an.prompt).empty()) throw Error(ErrorCode::PlanValidationFailed, where + "empty anchor prompt");
      if (an.attaches_to >= n)
        throw Error(ErrorCode::PlanValidationFailed, where + "anchor attaches to atomic step " +
                                                         std::to_string(an.attaches_to) + " of " + std::to_string(n));
      auto& count = an.role == AnchorRole::Start ? starts : ends;
      if (++count[an.attaches_to] > 1)
        throw Error(ErrorCode::PlanValidationFailed, where + "second " + std::string(role_name(an.role)) +
                                                         " anchor on atomic step " + std::to_string(an.attaches_to));
    }
  }
}

inline json plan_to_json(const Plan& plan) {
  json steps = json::array();
  for (const auto& s : plan.steps) {
    if (const auto* a = std::get_if<AtomicStep>(&s)) {
      json j{{"type", "atomic"}, {"prompt", a->prompt}};
      if (a->duration_hint) j["duration_hint"] = *a->duration_hint;
      steps.push_back(j);
    } else {
      const auto& an = std::get<AnchorStep>(s);
      steps.push_back({{"type", "anchor"}, {"prompt", an.prompt}, {"role", role_name(an.role)}, {"attaches_to", an.attaches_to}});
    }
  }
  return json{{"version", kPlanVersion}, {"steps", steps}};
}

/// Strict schema check; the result is also validated.
inline Plan plan_from_json(const json& j) {
  const auto fail = [](const std::string& m) { return Error(ErrorCode::PlanValidationFailed, m); };
  if (!j.is_object()) throw fail("plan must be a JSON object");
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kPlanVersion)
    throw fail("plan version must be " + std::to_string(kPlanVersion));
  if (!j.contains("steps") || !j["steps"].is_array()) throw fail("plan needs a steps array");
  Plan plan;
  for (const auto& s : j["steps"]) {
    if (!s.is_object() || !s.contains("type") || !s["type"].is_string()) throw fail("step needs a string type");
    if (!s.contains("prompt") || !s["prompt"].is_string()) throw fail("step needs a string prompt");
    const auto type = s["type"].get<std::string>();
    if (type == "atomic") {
      AtomicStep a{s["prompt"].get<std::string>(), std::nullopt};
      if (s.contains("duration_hint") && !s["duration_hint"].is_null()) {
        if (!s["duration_hint"].is_number()) throw fail("duration_hint must be a number");
        a.duration_hint = s["duration_hint"].get<double>();
      }
      plan.steps.emplace_back(a);
    } else if (type == "anchor") {
      if (!s.contains("role") || !s["role"].is_string()) throw fail("anchor needs a role");
      const auto role = s["role"].get<std::string>();
      if (role != "start" && role != "end") throw fail("anchor role must be start or end, got '" + role + "'");
      if (!s.contains("attaches_to") || !s["attaches_to"].is_number_unsigned())
        throw fail("anchor needs a non-negative integer attaches_to");
      plan.steps.emplace_back(AnchorStep{s["prompt"].get<std::string>(), role == "start" ? AnchorRole::Start : AnchorRole::End,
                                         s["attaches_to"].get<std::size_t>()});
    } else {
      throw fail("unknown step type '" + type + "'");
    }
  }
  validate(plan);
  return plan;
}

// ---------------------------------------------------------------------------
// Grammar planner

namespace detail {

struct Word {
  std::string text;
  bool comma_before = false;
};

inline std::vector<Word> words_with_commas(std::string_view query) {
  std::vector<Word> out;
  std::string cur;
  bool comma = false;
  const auto flush = [&] {
    if (cur.empty()) return;
    out.push_back({cur, comma});
    cur.clear();
    comma = false;
  };
  for (char ch : query) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (ch == ',' || ch == ';') comma = true;
    }
  }
  flush();
  return out;
}

inline std::string join(const std::vector<std::string>& ws, std::size_t b, std::size_t e) {
  std::string out;
  for (std::size_t i = b; i < e && i < ws.size(); ++i) out += (out.empty() ? "" : " ") + ws[i];
  return out;
}

inline bool is_motion_word(const std::vector<std::string>& ws, std::size_t i) {
  static const std::vector<std::string> openers{"make", "perform", "keep", "slowly", "quickly", "smoothly"};
  return has_motion_keyword({ws[i]}) || std::find(openers.begin(), openers.end(), ws[i]) != openers.end();
}

/// Length of the marker starting at word i (0 when none) and its role.
inline std::size_t marker_at(const std::vector<std::string>& ws, std::size_t i, AnchorRole& role) {
  static const std::vector<std::string> starts{"starting", "start", "beginning", "begin"};
  static const std::vector<std::string> ends{"ending", "end", "finishing", "finish", "stopping"};
  static const std::vector<std::vector<std::string>> preps{{"in", "front", "of"}, {"from"}, {"at"}, {"above"},
                                                           {"near"}, {"over"}, {"by"}, {"behind"},
                                                           {"beside"}, {"under"}};
  std::size_t len = 0;
  if (std::find(starts.begin(), starts.end(), ws[i]) != starts.end()) {
    role = AnchorRole::Start;
    len = 1;
  } else if (std::find(ends.begin(), ends.end(), ws[i]) != ends.end()) {
    role = AnchorRole::End;
    len = 1;
    if (i + 1 < ws.size() && ws[i + 1] == "up") ++len;
  } else {
    return 0;
  }
  bool has_prep = false;
  for (const auto& p : preps) {
    if (i + len + p.size() > ws.size()) continue;
    if (std::equal(p.begin(), p.end(), ws.begin() + static_cast<std::ptrdiff_t>(i + len))) {
      len += p.size();
      has_prep = true;
      break;
    }
  }
  // A bare "start"/"end" only counts as a marker when a place follows it.
  if (!has_prep && (ws[i] == "start" || ws[i] == "end" || ws[i] == "finish" || ws[i] == "begin")) return 0;
  return len;
}

inline std::string place_phrase(const std::vector<std::string>& ws, std::size_t b, std::size_t e) {
  while (b < e && (ws[b] == "the" || ws[b] == "a" || ws[b] == "an")) ++b;
  return join(ws, b, e);
}

struct ParsedAnchor {
  std::string prompt;
  AnchorRole role;
};

struct ParsedClause {
  std::vector<std::string> motion;  // empty when the clause is anchor-only
  std::optional<double> duration_hint;
  std::vector<ParsedAnchor> anchors;
  std::string span;
};

inline Error unparsable(const std::string& span, const std::string& why) {
  return Error(ErrorCode::UnparsableQuery, why + ": \"" + span + "\"");
}

inline ParsedClause parse_clause(const std::vector<std::string>& ws) {
  ParsedClause c;
  c.span = join(ws, 0, ws.size());
  std::vector<std::string> rest;
  std::size_t i = 0;
  while (i < ws.size()) {
    AnchorRole role{};
    if (const std::size_t mk = marker_at(ws, i, role)) {
      const std::size_t b = i + mk;
      std::size_t e = ws.size();
      if (rest.empty()) {
        // Marker opens the clause: the place ends at the first motion keyword.
        for (std::size_t k = b; k < ws.size(); ++k)
          if (is_motion_word(ws, k)) {
            e = k;
            break;
          }
      }
      const std::string place = place_phrase(ws, b, e);
      if (place.empty()) throw unparsable(c.span, "anchor marker without a place");
      c.anchors.push_back({place, role});
      i = e;
      continue;
    }
    if (ws[i] == "from") {
      const auto to = std::find(ws.begin() + static_cast<std::ptrdiff_t>(i) + 1, ws.end(), "to");
      if (to != ws.end()) {
        const auto t = static_cast<std::size_t>(to - ws.begin());
        const std::string a = place_phrase(ws, i + 1, t);
        const std::string b = place_phrase(ws, t + 1, ws.size());
        if (a.empty() || b.empty()) throw unparsable(c.span, "\"from ... to ...\" needs two places");
        c.anchors.push_back({a, AnchorRole::Start});
        c.anchors.push_back({b, AnchorRole::End});
        i = ws.size();
        continue;
      }
    }
    if (ws[i] == "for" && i + 2 < ws.size() && (ws[i + 2] == "seconds" || ws[i + 2] == "second") &&
        std::all_of(ws[i + 1].begin(), ws[i + 1].end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      c.duration_hint = std::stod(ws[i + 1]);
      i += 3;
      continue;
    }
    rest.push_back(ws[i]);
    ++i;
  }
  // Leftover glue words around a removed anchor.
  while (!rest.empty() && (rest.back() == "and" || rest.back() == "while" || rest.back() == "then")) rest.pop_back();
  while (!rest.empty() && (rest.front() == "and" || rest.front() == "then")) rest.erase(rest.begin());
  if (!rest.empty() && !has_motion_keyword(rest)) {
    if (c.anchors.empty()) throw unparsable(c.span, "no recognizable camera motion");
    throw unparsable(join(rest, 0, rest.size()), "no recognizable camera motion");
  }
  if (rest.empty() && c.duration_hint) throw unparsable(c.span, "duration without a motion");
  c.motion = std::move(rest);
  return c;
}

inline std::vector<std::vector<std::string>> split_query(const std::vector<Word>& words) {
  std::vector<std::vector<std::string>> clauses(1);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i].text;
    const bool then_follows = i + 1 < words.size() && words[i + 1].text == "then";
    std::size_t skip = 0;
    bool boundary = words[i].comma_before;
    if (w == "then" || w == "next") skip = 1;
    else if (w == "after" && i + 1 < words.size() && words[i + 1].text == "that") skip = 2;
    else if (w == "and" && then_follows) skip = 2;
    if (skip) boundary = true;
    if (boundary && !clauses.back().empty()) clauses.emplace_back();
    if (skip) {
      i += skip - 1;
      continue;
    }
    clauses.back().push_back(w);
  }
  if (clauses.back().empty()) clauses.pop_back();
  return clauses;
}

}  // namespace detail

inline Plan parse_query(std::string_view query) {
  const auto clauses_words = detail::split_query(detail::words_with_commas(query));
  if (clauses_words.empty()) throw Error(ErrorCode::UnparsableQuery, "empty query: \"" + std::string(query) + "\"");
  std::vector<detail::ParsedClause> clauses;
  for (const auto& ws : clauses_words) clauses.push_back(detail::parse_clause(ws));

  // Atomic index of every motion clause.
  std::vector<std::optional<std::size_t>> atomic_of(clauses.size());
  std::size_t n = 0;
  for (std::size_t i = 0; i < clauses.size(); ++i)
    if (!clauses[i].motion.empty()) atomic_of[i] = n++;
  if (n == 0) throw Error(ErrorCode::UnparsableQuery, "no recognizable camera motion: \"" + std::string(query) + "\"");

  std::vector<std::vector<AnchorStep>> anchors(n);
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    for (const auto& a : clauses[i].anchors) {
      std::optional<std::size_t> target = atomic_of[i];
      if (!target) {
        std::optional<std::size_t> before, after;
        for (std::size_t k = i; k-- > 0;)
          if (atomic_of[k]) {
            before = atomic_of[k];
            break;
          }
        for (std::size_t k = i + 1; k < clauses.size(); ++k)
          if (atomic_of[k]) {
            after = atomic_of[k];
            break;
          }
        target = a.role == AnchorRole::Start ? (after ? after : before) : (before ? before : after);
      }
      for (const auto& existing : anchors[*target])
        if (existing.role == a.role)
          throw Error(ErrorCode::UnparsableQuery, "two " + std::string(role_name(a.role)) +
                                                      " anchors for one motion: \"" + clauses[i].span + "\"");
      anchors[*target].push_back(AnchorStep{a.prompt, a.role, *target});
    }
  }

  Plan plan;
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (!atomic_of[i]) continue;
    const auto& c = clauses[i];
    plan.steps.emplace_back(AtomicStep{detail::join(c.motion, 0, c.motion.size()), c.duration_hint});
    auto& as = anchors[*atomic_of[i]];
    std::stable_sort(as.begin(), as.end(), [](const AnchorStep& a, const AnchorStep& b) { return a.role < b.role; });
    for (const auto& a : as) plan.steps.emplace_back(a);
  }
  validate(plan);
  return plan;
}

// ---------------------------------------------------------------------------
// Trace

struct ToolCall {
  std::string tool;
  std::optional<std::size_t> step;
  json input;
  json output;
  double millis = 0.0;
};

struct TraceLog {
  std::string observation;
  std::string reasoning;
  std::vector<ToolCall> calls;

  std::size_t count(std::string_view tool) const {
    return static_cast<std::size_t>(std::count_if(calls.begin(), calls.end(), [&](const ToolCall& c) { return c.tool == tool; }));
  }

  /// Timings are omitted unless asked for so traces can be compared byte for byte.
  json to_json(bool with_timings = false) const {
    json cs = json::array();
    for (const auto& c : calls) {
      json j{{"tool", c.tool}, {"input", c.input}, {"output", c.output}};
      if (c.step) j["step"] = *c.step;
      if (with_timings) j["millis"] = c.millis;
      cs.push_back(j);
    }
    return json{{"observation", observation}, {"reasoning", reasoning}, {"calls", cs}};
  }
};

// ---------------------------------------------------------------------------
// Chat-model planner

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Returns the assistant reply; throws RemotePlannerUnavailable when the
  /// endpoint cannot be reached.
  virtual std::string complete(const std::vector<ChatMessage>& messages) const = 0;
};

inline const std::string& planner_instructions() {
  static const std::string text =
      "You plan camera trajectories. Split the user's request into atomic camera motions that a "
      "text-to-trajectory model can generate, and scene anchors that fix where a motion starts or ends.\n"
      "Reply with one JSON object and nothing else, using this schema:\n"
      "{\"version\": 1, \"steps\": [\n"
      "  {\"type\": \"atomic\", \"prompt\": \"<one motion, e.g. pan left slowly>\", \"duration_hint\": <seconds, optional>},\n"
      "  {\"type\": \"anchor\", \"prompt\": \"<place to look at>\", \"role\": \"start\" | \"end\", \"attaches_to\": <index of an atomic step, counting atomic steps only, from 0>}\n"
      "]}\n"
      "Rules: at least one atomic step; at most one start and one end anchor per atomic step; anchors only "
      "bind the start or the end of a motion.";
  return text;
}

namespace detail {

/// The outermost {...} of a reply, tolerating code fences and chatter.
inline json extract_json_object(const std::string& reply) {
  const auto b = reply.find('{');
  const auto e = reply.rfind('}');
  if (b == std::string::npos || e == std::string::npos || e < b)
    throw Error(ErrorCode::PlanValidationFailed, "reply contains no JSON object");
  try {
    return json::parse(reply.substr(b, e - b + 1));
  } catch (const json::parse_error& ex) {
    throw Error(ErrorCode::PlanValidationFailed, std::string("reply is not valid JSON: ") + ex.what());
  }
}

/// Cosmetic fixes only: missing version, case and whitespace in enums,
/// integral numbers sent as strings or floats.
inline json repair_plan_json(json j) {
  if (!j.is_object()) return j;
  if (!j.contains("version")) j["version"] = kPlanVersion;
  if (j.contains("steps") && j["steps"].is_array()) {
    for (auto& s : j["steps"]) {
      if (!s.is_object()) continue;
      for (const char* key : {"type", "role"}) {
        if (s.contains(key) && s[key].is_string()) {
          std::string v = s[key].get<std::string>();
          v.erase(std::remove_if(v.begin(), v.end(), [](unsigned char ch) { return std::isspace(ch); }), v.end());
          std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
          s[key] = v;
        }
      }
      if (s.contains("attaches_to")) {
        auto& a = s["attaches_to"];
        if (a.is_string()) {
          const auto v = a.get<std::string>();
          if (!v.empty() && v.size() < 10 && std::all_of(v.begin(), v.end(), [](unsigned char ch) { return std::isdigit(ch); }))
            a = std::stoul(v);
        } else if (a.is_number_float()) {
          const double v = a.get<double>();
          if (v >= 0 && v < 1e9 && v == std::floor(v)) a = static_cast<std::size_t>(v);
        }
      }
    }
  }
  return j;
}

}  // namespace detail

/// Asks the chat model for a plan; one retry with the validation error fed
/// back. Throws PlanValidationFailed after the retry, or
/// RemotePlannerUnavailable from the client.
inline Plan llm_plan(std::string_view query, const ChatClient& client, TraceLog* trace = nullptr) {
  std::vector<ChatMessage> messages{{"system", planner_instructions()}, {"user", std::string(query)}};
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string reply = client.complete(messages);
    if (trace) trace->calls.push_back(ToolCall{"llm_plan", std::nullopt, json{{"attempt", attempt}}, json{{"reply", reply}}, 0.0});
    try {
      return plan_from_json(detail::repair_plan_json(detail::extract_json_object(reply)));
    } catch (const Error& e) {
      last_error = e.detail();
    }
    messages.push_back({"assistant", reply});
    messages.push_back({"user", "That plan is invalid: " + last_error + ". Reply with a corrected JSON plan only."});
  }
  throw Error(ErrorCode::PlanValidationFailed, "chat planner output invalid after retry: " + last_error);
}

/// Chat planner when a client is given, grammar planner otherwise or on
/// planner failure.
inline Plan make_plan(std::string_view query, const ChatClient* client, TraceLog* trace = nullptr) {
  if (client) {
    try {
      return llm_plan(query, *client, trace);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::PlanValidationFailed && e.code() != ErrorCode::RemotePlannerUnavailable) throw;
      if (trace) trace->reasoning += "chat planner failed (" + std::string(to_string(e.code())) + "); using the grammar planner. ";
    }
  }
  return parse_query(query);
}

}  // namespace chatcam
