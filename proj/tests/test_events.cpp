#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "xvqa/error.hpp"
#include "xvqa/events.hpp"

using namespace xvqa;

namespace {

EventRecord rec(uint64_t seq, EventKind kind, nlohmann::json payload = nlohmann::json::object()) {
  EventRecord e;
  e.seq = seq;
  e.timestamp = 1'700'000'000'000 + static_cast<int64_t>(seq) * 1000;
  e.session_id = "SP-1";
  e.trial_index = seq == 0 ? 0 : 1;
  e.kind = kind;
  e.practice = seq > 0;
  e.payload = std::move(payload);
  return e;
}

std::filesystem::path temp_file(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove(p);
  return p;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvariantError;
}

}  // namespace

TEST(EventKind, NamesRoundTrip) {
  for (int k = 0; k <= static_cast<int>(EventKind::SessionEnd); ++k) {
    const auto kind = static_cast<EventKind>(k);
    EXPECT_EQ(parse_event_kind(event_kind_name(kind)), kind);
  }
  EXPECT_EQ(code_of([] { parse_event_kind("nap"); }), ErrorCode::ParseError);
}

TEST(Jsonl, RoundTripPreservesRecordsAndFieldOrder) {
  const std::vector<EventRecord> events{rec(0, EventKind::SessionStart, {{"config", {{"group", "SP"}}}}),
                                        rec(1, EventKind::TrialStart, {{"question_id", "q1"}}),
                                        rec(2, EventKind::Prediction, {{"will_be_correct", true}, {"confidence", 4}})};
  const std::string text = to_jsonl(events);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  EXPECT_EQ(text.rfind("{\"seq\":0,\"timestamp\":", 0), 0u);
  EXPECT_EQ(parse_jsonl(text), events);
}

TEST(Jsonl, MalformedLinesNameTheLine) {
  const std::string good = to_jsonl(std::vector<EventRecord>{rec(0, EventKind::SessionStart)});
  try {
    parse_jsonl(good + "{not json\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_EQ(code_of([] { parse_jsonl("{\"seq\":0}\n"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([&] {
              auto t = good;
              t.replace(t.find("session_start"), 13, "session_stop");
              parse_jsonl(t);
            }),
            ErrorCode::ParseError);
  EXPECT_TRUE(parse_jsonl("").empty());
  EXPECT_EQ(parse_jsonl(good + "\n").size(), 1u);
}

TEST(EventLog, WriteReadAndMissingFile) {
  const auto path = temp_file("xvqa_events_rw.jsonl");
  const std::vector<EventRecord> events{rec(0, EventKind::SessionStart), rec(1, EventKind::TrialStart)};
  write_event_log(path, events);
  EXPECT_EQ(read_event_log(path), events);
  std::filesystem::remove(path);
  EXPECT_EQ(code_of([&] { read_event_log(path); }), ErrorCode::IoError);
}

TEST(EventLog, WriterAppendsWholeLinesFromManyThreads) {
  const auto path = temp_file("xvqa_events_append.jsonl");
  {
    EventLogWriter w(path);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t)
      threads.emplace_back([&w, t] {
        for (int i = 0; i < 50; ++i) {
          auto e = rec(static_cast<uint64_t>(t * 50 + i), EventKind::Helpfulness, {{"ratings", {{"spatial", 3}}}});
          w.append(std::vector<EventRecord>{e});
        }
      });
    for (auto& th : threads) th.join();
    // Flushed on every append: readable before the writer closes.
    EXPECT_EQ(read_event_log(path).size(), 400u);
  }
  EventLogWriter again(path);
  again.append(std::vector<EventRecord>{rec(400, EventKind::TrialEnd)});
  const auto all = read_event_log(path);
  ASSERT_EQ(all.size(), 401u);
  EXPECT_EQ(all.back().kind, EventKind::TrialEnd);
  std::filesystem::remove(path);
}
