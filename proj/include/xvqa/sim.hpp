#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xvqa/events.hpp"
#include "xvqa/explain.hpp"
#include "xvqa/protocol.hpp"
#include "xvqa/util.hpp"

namespace xvqa {

enum class PolicyKind { Random, PriorTracker, ExplanationAware };

struct SubjectPolicy {
  PolicyKind kind = PolicyKind::PriorTracker;
  double p = 0.5;      // random: probability of predicting "correct"
  double theta = 0.7;  // explanation-aware: alignment threshold
  uint64_t seed = 0;

  void validate() const;
  // "random", "random:0.7", "prior", "explanation", "explanation:0.5".
  static SubjectPolicy parse(std::string_view text);
  std::string name() const;
};

// Agreement between an explanation and the question, in [0, 1]. Half comes
// from the weighted share of top-K ranked objects whose label occurs in the
// question, half from whether an attended object (weight >= half the
// maximum) carries the top answer as label or attribute. Objects are ranked
// by the bundle's boxes, else its object weights, else its heatmap. A bundle
// with nothing to rank scores 0.5.
double alignment_score(const ExplanationBundle& bundle, const Scene& scene, const Question& question,
                       std::string_view top_answer, int top_k = 5);

// Same score for a raw attention map (used after an attention edit).
double alignment_score(const AttentionMap& attention, const Scene& scene, const Question& question,
                       std::string_view top_answer, int top_k = 5);

struct SubjectActions {
  std::map<Mode, int> helpfulness;
  bool will_be_correct = false;
  int confidence = 1;
  int reliance = 1;
  double alignment = 0.5;
};

struct SecondaryActions {
  bool will_be_correct = false;
  int confidence = 1;
};

class SimSubject {
 public:
  explicit SimSubject(SubjectPolicy policy, int likert_points = 5);

  // `top_answer` is the system's first answer for the trial.
  SubjectActions act(const TrialView& view, std::string_view top_answer);
  // Cells of objects named in the question set to 1, everything else 0.
  // Falls back to an all-ones map when no object is named.
  AttentionMap draw_attention(const TrialView& view, int grid) const;
  SecondaryActions act_secondary(const TrialView& view, const SecondAnswerView& second);
  // Feedback after the reveal.
  void observe(bool system_correct);

  double prior_mean() const;
  const SubjectPolicy& policy() const { return policy_; }

 private:
  int likert_from_unit(double u) const;
  std::pair<bool, int> prior_prediction();
  std::pair<bool, int> random_prediction();
  std::pair<bool, int> threshold_prediction(double alignment) const;

  SubjectPolicy policy_;
  int likert_;
  SplitMix64 rng_;
  int64_t seen_ = 0;
  int64_t right_ = 0;
};

struct CohortSpec {
  GroupTag group = GroupTag::NE;
  SubjectPolicy policy;
  int subjects = 1;
};

struct StudyConfig {
  std::vector<CohortSpec> cohorts;
  int trials_per_subject = 0;  // including practice; 0 = every question
  uint64_t seed = 0;
  SessionConfig session;       // template; group, seed, max_trials are set per subject
  int64_t epoch_ms = 1'700'000'000'000;
};

struct SessionLog {
  std::string session_id;
  std::vector<EventRecord> events;
};

// Drives one full session with a simulated subject on a virtual clock.
SessionLog run_session(std::shared_ptr<const StudyContext> ctx, const std::string& session_id,
                       const SessionConfig& config, const SubjectPolicy& policy, int64_t start_ms);

std::vector<SessionLog> run_study(std::shared_ptr<const StudyContext> ctx, const StudyConfig& config);

// Writes one <session_id>.jsonl per log; returns the written paths.
std::vector<std::filesystem::path> write_logs(const std::filesystem::path& dir, const std::vector<SessionLog>& logs);

}  // namespace xvqa
