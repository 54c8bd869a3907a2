#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xvqa/agent.hpp"
#include "xvqa/events.hpp"
#include "xvqa/explain.hpp"
#include "xvqa/scene.hpp"

namespace xvqa {

enum class GroupTag { NE, SP, SA, SE, OA, AL };

std::string_view group_name(GroupTag g);
// Throws ConfigError.
GroupTag parse_group(std::string_view name);

struct GroupSpec {
  GroupTag tag = GroupTag::NE;
  ModeSet modes;
  bool active_loop = false;

  bool has_explanations() const { return !modes.empty(); }
  bool operator==(const GroupSpec&) const = default;
};

GroupSpec group_spec(GroupTag tag);

struct SessionConfig {
  GroupTag group = GroupTag::NE;
  std::string dataset_id;
  uint64_t seed = 0;
  int practice_trials = 2;
  int block_size = 5;
  int64_t time_limit_s = 3600;
  int likert_points = 5;
  int max_trials = 0;  // 0: every eligible question
  bool explanation_first = true;

  void validate() const;
  nlohmann::json to_json() const;
  static SessionConfig from_json(const nlohmann::json& j);
  bool operator==(const SessionConfig&) const = default;
};

enum class BlockKind { Practice, Explanation, Control };
std::string_view block_kind_name(BlockKind k);
BlockKind parse_block_kind(std::string_view name);

struct BlockDescriptor {
  BlockKind kind = BlockKind::Practice;
  int size = 0;
  int ordinal = 0;      // 1-based among blocks of the same kind
  int first_trial = 0;  // 1-based trial index

  bool operator==(const BlockDescriptor&) const = default;
};

std::vector<BlockDescriptor> block_schedule(const SessionConfig& config, int n_trials);

enum class Phase {
  AwaitHelpfulness,
  AwaitPrediction,
  Reveal,
  AwaitReliance,
  AwaitUserAttention,
  AwaitSecondaryPrediction,
  SecondaryReveal,
  TrialDone,
  Complete,
};

std::string_view phase_name(Phase p);

// Shared, immutable inputs of every session: the filtered dataset, the agent
// and explanation settings.
struct StudyContext {
  std::shared_ptr<const Dataset> dataset;
  std::string dataset_id;
  Agent agent;
  ExplainConfig explain;

  // Drops yes-no and counting questions before use.
  StudyContext(const Dataset& dataset, const AgentConfig& agent_config, const ExplainConfig& explain_config);
};

struct Prediction {
  bool will_be_correct = false;
  int confidence = 0;
  bool correct = false;

  bool operator==(const Prediction&) const = default;
};

struct TrialState {
  int index = 0;  // 1-based
  size_t question = 0;
  BlockKind block = BlockKind::Practice;
  int block_ordinal = 0;
  bool practice = false;
  bool explanation = false;
  bool active = false;
  AgentOutput first;
  std::optional<ExplanationBundle> bundle;
  std::optional<std::map<Mode, int>> helpfulness;
  std::optional<Prediction> prediction;
  std::optional<AttentionMap> user_map;
  std::string goal;
  std::optional<AgentOutput> second;
  std::optional<Prediction> secondary;
  std::optional<int> reliance;

  bool system_correct(const Dataset& d) const;
  bool operator==(const TrialState&) const = default;
};

struct SessionState {
  std::string id;
  SessionConfig config;
  bool started = false;
  Phase phase = Phase::TrialDone;
  int cursor = 0;  // trials started so far
  int total_trials = 0;
  std::vector<size_t> question_order;
  std::vector<BlockDescriptor> schedule;
  std::optional<TrialState> trial;
  // Event that must come next because the previous one forces it (e.g. a
  // reveal right after a prediction).
  std::optional<EventKind> expect;
  int64_t start_ms = 0;
  int64_t last_ms = 0;
  uint64_t next_seq = 0;
  std::string end_reason;

  int64_t elapsed_ms() const { return last_ms - start_ms; }
  bool operator==(const SessionState&) const = default;
};

// Pre-reveal view of the current trial. Contains no answer keys.
struct TrialView {
  std::string session_id;
  int trial_index = 0;
  int total_trials = 0;
  Phase phase = Phase::TrialDone;
  BlockKind block = BlockKind::Practice;
  int block_ordinal = 0;
  bool practice = false;
  bool explanation = false;
  bool active = false;
  const Scene* scene = nullptr;
  const Question* question = nullptr;
  std::optional<ExplanationBundle> bundle;
};

struct RevealView {
  int trial_index = 0;
  std::string ground_truth;
  std::string answer;
  std::vector<RankedAnswer> top5;
  double system_confidence = 0;
  bool system_correct = false;
  bool will_be_correct = false;
  int user_confidence = 0;
  bool prediction_correct = false;
  Phase next_phase = Phase::TrialDone;
};

// The second answer after an attention edit; its correctness is withheld.
struct SecondAnswerView {
  int trial_index = 0;
  std::string answer;
  std::vector<RankedAnswer> top5;
  double system_confidence = 0;
  AttentionMap attention;
  std::string goal;
};

struct SecondaryRevealView {
  int trial_index = 0;
  std::string ground_truth;
  std::string answer;
  bool system_correct = false;
  bool will_be_correct = false;
  int user_confidence = 0;
  bool prediction_correct = false;
};

nlohmann::json to_json(const TrialView& v);
nlohmann::json to_json(const RevealView& v);
nlohmann::json to_json(const SecondAnswerView& v);
nlohmann::json to_json(const SecondaryRevealView& v);

// Keys that must never appear in a pre-reveal payload.
std::span<const std::string_view> answer_keys();
// Recursively scans `j` for any of answer_keys(); returns the first found.
std::optional<std::string> find_answer_leak(const nlohmann::json& j);

// Event-sourced session. Every operation validates, builds its events and
// applies them through apply(), the same path replay() uses.
class Session {
 public:
  explicit Session(std::shared_ptr<const StudyContext> ctx);

  static Session create(std::shared_ptr<const StudyContext> ctx, std::string id, SessionConfig config,
                        int64_t now_ms);

  // nullopt once the session completes (all trials done or time limit hit).
  std::optional<TrialView> start_trial(int64_t now_ms);
  void submit_helpfulness(const std::map<Mode, int>& ratings, int64_t now_ms);
  RevealView submit_prediction(bool will_be_correct, int confidence, int64_t now_ms);
  void submit_reliance(int reliance, int64_t now_ms);
  SecondAnswerView submit_user_attention(const AttentionMap& map, int64_t now_ms);
  SecondaryRevealView submit_secondary_prediction(bool will_be_correct, int confidence, int64_t now_ms);

  TrialView trial_view() const;
  RevealView reveal_view() const;
  std::optional<SecondAnswerView> second_answer_view() const;

  // Validates one event against the current state and folds it in. Throws
  // ReplayError when the event is not a legal continuation.
  void apply(const EventRecord& event);

  const SessionState& state() const { return state_; }
  const std::vector<EventRecord>& events() const { return events_; }
  const StudyContext& context() const { return *ctx_; }
  const GroupSpec& group() const { return group_; }
  bool complete() const { return state_.phase == Phase::Complete; }

 private:
  void emit(EventKind kind, nlohmann::json payload, int64_t now_ms);
  void require_idle_trial(Phase expected, std::string_view op) const;
  void check_likert(int value, std::string_view what) const;
  const Question& question_at(size_t index) const;
  const Scene& scene_for_trial() const;
  TrialState& trial();

  std::shared_ptr<const StudyContext> ctx_;
  GroupSpec group_;
  SessionState state_;
  std::vector<EventRecord> events_;
};

// Rebuilds a session from its log. Throws ReplayError on any gap,
// reordering or illegal transition.
Session replay(std::span<const EventRecord> events, std::shared_ptr<const StudyContext> ctx);

}  // namespace xvqa
