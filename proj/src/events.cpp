#include "xvqa/events.hpp"

#include <sstream>

#include "xvqa/error.hpp"

namespace xvqa {

namespace {

constexpr EventKind kAllKinds[] = {
    EventKind::SessionStart, EventKind::TrialStart,    EventKind::ExplanationsShown,   EventKind::Helpfulness,
    EventKind::Prediction,   EventKind::Reveal,        EventKind::Reliance,            EventKind::UserAttention,
    EventKind::SecondAnswer, EventKind::SecondaryPrediction, EventKind::TrialEnd,      EventKind::SessionEnd,
};

}  // namespace

std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::SessionStart: return "session_start";
    case EventKind::TrialStart: return "trial_start";
    case EventKind::ExplanationsShown: return "explanations_shown";
    case EventKind::Helpfulness: return "helpfulness";
    case EventKind::Prediction: return "prediction";
    case EventKind::Reveal: return "reveal";
    case EventKind::Reliance: return "reliance";
    case EventKind::UserAttention: return "user_attention";
    case EventKind::SecondAnswer: return "second_answer";
    case EventKind::SecondaryPrediction: return "secondary_prediction";
    case EventKind::TrialEnd: return "trial_end";
    case EventKind::SessionEnd: return "session_end";
  }
  return "?";
}

EventKind parse_event_kind(std::string_view name) {
  for (auto k : kAllKinds)
    if (event_kind_name(k) == name) return k;
  fail(ErrorCode::ParseError, "unknown event kind '" + std::string(name) + "'");
}

nlohmann::json to_json(const EventRecord& e) {
  nlohmann::ordered_json j;
  j["seq"] = e.seq;
  j["timestamp"] = e.timestamp;
  j["session_id"] = e.session_id;
  j["trial_index"] = e.trial_index;
  j["kind"] = event_kind_name(e.kind);
  j["practice"] = e.practice;
  j["payload"] = e.payload;
  return nlohmann::json(j);
}

EventRecord event_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::ParseError, "event must be an object");
  auto need = [&](const char* key) -> const nlohmann::json& {
    auto it = j.find(key);
    if (it == j.end()) fail(ErrorCode::ParseError, std::string("event missing '") + key + "'");
    return *it;
  };
  try {
    EventRecord e;
    e.seq = need("seq").get<uint64_t>();
    e.timestamp = need("timestamp").get<int64_t>();
    e.session_id = need("session_id").get<std::string>();
    e.trial_index = need("trial_index").get<int>();
    e.kind = parse_event_kind(need("kind").get<std::string>());
    e.practice = need("practice").get<bool>();
    e.payload = need("payload");
    if (!e.payload.is_object()) fail(ErrorCode::ParseError, "event payload must be an object");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ParseError, std::string("malformed event: ") + ex.what());
  }
}

namespace {

// nlohmann::json sorts keys; emit the envelope in declaration order so log
// lines read naturally.
std::string line_of(const EventRecord& e) {
  nlohmann::ordered_json j;
  j["seq"] = e.seq;
  j["timestamp"] = e.timestamp;
  j["session_id"] = e.session_id;
  j["trial_index"] = e.trial_index;
  j["kind"] = event_kind_name(e.kind);
  j["practice"] = e.practice;
  j["payload"] = nlohmann::ordered_json::parse(e.payload.dump());
  return j.dump();
}

}  // namespace

std::string to_jsonl(std::span<const EventRecord> events) {
  std::string out;
  for (const auto& e : events) {
    out += line_of(e);
    out += '\n';
  }
  return out;
}

std::vector<EventRecord> parse_jsonl(std::string_view text) {
  std::vector<EventRecord> out;
  size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const Error& ex) {
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

std::vector<EventRecord> read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_jsonl(ss.str());
  } catch (const Error& ex) {
    fail(ex.code(), path.string() + ": " + ex.what());
  }
}

void write_event_log(const std::filesystem::path& path, std::span<const EventRecord> events) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << to_jsonl(events);
  out.flush();
  if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

EventLogWriter::EventLogWriter(std::filesystem::path path) : path_(std::move(path)) {
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) fail(ErrorCode::IoError, "cannot open " + path_.string() + " for append");
}

void EventLogWriter::append(std::span<const EventRecord> events) {
  std::lock_guard lock(mu_);
  out_ << to_jsonl(events);
  out_.flush();
  if (!out_) fail(ErrorCode::IoError, "append failed: " + path_.string());
}

}  // namespace xvqa
