#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace xvqa {

enum class EventKind {
  SessionStart,
  TrialStart,
  ExplanationsShown,
  Helpfulness,
  Prediction,
  Reveal,
  Reliance,
  UserAttention,
  SecondAnswer,
  SecondaryPrediction,
  TrialEnd,
  SessionEnd,
};

std::string_view event_kind_name(EventKind k);
EventKind parse_event_kind(std::string_view name);

// One line of a session's audit log. `seq` is contiguous from 0 within a
// session; `practice` marks every event of a practice trial.
struct EventRecord {
  uint64_t seq = 0;
  int64_t timestamp = 0;  // ms since epoch
  std::string session_id;
  int trial_index = 0;
  EventKind kind = EventKind::SessionStart;
  bool practice = false;
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const EventRecord&) const = default;
};

nlohmann::json to_json(const EventRecord& e);
EventRecord event_from_json(const nlohmann::json& j);

std::string to_jsonl(std::span<const EventRecord> events);
// Throws ParseError naming the 1-based line on malformed input.
std::vector<EventRecord> parse_jsonl(std::string_view text);
std::vector<EventRecord> read_event_log(const std::filesystem::path& path);
void write_event_log(const std::filesystem::path& path, std::span<const EventRecord> events);

// Append-only JSONL writer. Each append writes whole lines and flushes
// before returning.
class EventLogWriter {
 public:
  explicit EventLogWriter(std::filesystem::path path);

  void append(std::span<const EventRecord> events);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mu_;
};

}  // namespace xvqa
