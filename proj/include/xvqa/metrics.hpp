#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xvqa/events.hpp"
#include "xvqa/explain.hpp"
#include "xvqa/protocol.hpp"
#include "xvqa/stats.hpp"

namespace xvqa {

// One analyzed (non-practice, revealed) trial, read from its events alone.
struct TrialOutcome {
  std::string session_id;
  GroupTag group = GroupTag::NE;
  int trial_index = 0;
  int analysis_index = 0;  // 1-based among the session's analyzed trials
  std::string question_id;
  bool explanation = false;
  bool active = false;
  BlockKind block = BlockKind::Control;
  int block_ordinal = 0;
  bool system_correct = false;
  bool will_be_correct = false;
  bool prediction_correct = false;
  int user_confidence = 0;
  int likert_points = 5;
  double system_confidence = 0;
  std::map<Mode, int> helpfulness;
  std::optional<int> reliance;
  std::optional<bool> second_system_correct;
  std::optional<bool> secondary_prediction_correct;
  std::optional<int> secondary_confidence;

  bool operator==(const TrialOutcome&) const = default;
};

// Events of one session, in order. Throws ParseError on a log that lacks a
// session_start or carries a malformed payload.
std::vector<TrialOutcome> extract_outcomes(std::span<const EventRecord> events);

struct Rate {
  int64_t correct = 0;
  int64_t total = 0;

  void add(bool ok) {
    total += 1;
    correct += ok ? 1 : 0;
  }
  std::optional<double> value() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
  }
  bool operator==(const Rate&) const = default;
};

struct Strata {
  Rate overall;
  Rate sys_right;
  Rate sys_wrong;

  void add(bool system_correct, bool ok) {
    overall.add(ok);
    (system_correct ? sys_right : sys_wrong).add(ok);
  }
  bool operator==(const Strata&) const = default;
};

std::map<GroupTag, Strata> accuracy_breakdown(std::span<const TrialOutcome> outcomes);

struct ChiSquaredRow {
  std::string group;  // a group tag, or "ALL" for every explanation group pooled
  std::string stratum;
  Table2x2 table{};   // rows: group, NE; columns: correct, incorrect
  std::optional<ChiSquared> test;
};

// Each explanation group against NE, per stratum, plus the pooled row.
std::vector<ChiSquaredRow> chi_squared_vs_control(std::span<const TrialOutcome> outcomes);

struct ProgressionCurve {
  int bins = 0;
  std::vector<Strata> points;       // per bin
  std::vector<Rate> primary;        // active trials, first prediction
  std::vector<Rate> secondary;      // active trials, prediction after the edit
};

std::map<GroupTag, ProgressionCurve> progression(std::span<const TrialOutcome> outcomes, int bins = 5);

struct RatingRow {
  int rating = 0;
  Strata accuracy;
  // Mean of (prediction correct - the session's control-block accuracy) over
  // rows whose session has control trials.
  std::optional<double> delta_vs_control;
  int64_t delta_n = 0;
};

struct RatingTable {
  std::vector<RatingRow> rows;
  std::optional<double> spearman_sys_right;
  std::optional<double> spearman_sys_wrong;
  int64_t n_sys_right = 0;
  int64_t n_sys_wrong = 0;
};

struct RatingReport {
  std::map<Mode, RatingTable> helpfulness;
  RatingTable reliance;
};

RatingReport rating_vs_accuracy(std::span<const TrialOutcome> outcomes);

struct ConfidenceRow {
  int64_t n = 0;
  std::optional<double> mean_user;
  std::optional<double> mean_system;
  std::optional<double> correlation;
};

std::map<GroupTag, ConfidenceRow> confidence_comparison(std::span<const TrialOutcome> outcomes);

struct BlockCurves {
  std::map<int, Rate> explanation;
  std::map<int, Rate> control;
};

std::map<GroupTag, BlockCurves> block_comparison(std::span<const TrialOutcome> outcomes);

struct MetricsReport {
  int64_t sessions = 0;
  int64_t trials = 0;
  std::map<GroupTag, Strata> accuracy;
  std::vector<ChiSquaredRow> chi_squared;
  std::map<GroupTag, ProgressionCurve> progression;
  RatingReport ratings;
  std::map<GroupTag, ConfidenceRow> confidence;
  std::map<GroupTag, BlockCurves> blocks;
};

MetricsReport build_report(std::span<const TrialOutcome> outcomes, int64_t sessions, int bins = 5);
nlohmann::json to_json(const MetricsReport& report);
std::string summary_text(const MetricsReport& report);
std::string outcomes_csv(std::span<const TrialOutcome> outcomes);

// Every *.jsonl file under `dir`, sorted by name. Throws IoError when the
// directory holds no logs.
std::vector<std::filesystem::path> find_logs(const std::filesystem::path& dir);
// Reads every log in `dir` and builds the report.
MetricsReport analyze_directory(const std::filesystem::path& dir, std::vector<TrialOutcome>* outcomes_out = nullptr,
                                int bins = 5);

}  // namespace xvqa
