#include "xvqa/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "xvqa/error.hpp"

namespace xvqa {

std::vector<TrialOutcome> extract_outcomes(std::span<const EventRecord> events) {
  std::vector<TrialOutcome> out;
  if (events.empty()) return out;
  if (events.front().kind != EventKind::SessionStart)
    fail(ErrorCode::ParseError, "log does not begin with session_start");

  GroupTag group = GroupTag::NE;
  int likert = 5;
  std::optional<TrialOutcome> cur;
  bool revealed = false;
  int analysis_index = 0;

  for (const auto& e : events) {
    const auto& p = e.payload;
    try {
      switch (e.kind) {
        case EventKind::SessionStart: {
          const auto& cfg = p.at("config");
          group = parse_group(cfg.at("group").get<std::string>());
          likert = cfg.at("likert_points").get<int>();
          break;
        }
        case EventKind::TrialStart:
          cur.reset();
          revealed = false;
          if (e.practice) break;
          cur.emplace();
          cur->session_id = e.session_id;
          cur->group = group;
          cur->trial_index = e.trial_index;
          cur->question_id = p.at("question_id").get<std::string>();
          cur->explanation = p.at("explanation").get<bool>();
          cur->active = p.at("active").get<bool>();
          cur->block = parse_block_kind(p.at("block").get<std::string>());
          cur->block_ordinal = p.at("block_ordinal").get<int>();
          cur->likert_points = likert;
          break;
        case EventKind::Helpfulness:
          if (!cur || e.practice) break;
          for (auto it = p.at("ratings").begin(); it != p.at("ratings").end(); ++it)
            cur->helpfulness[parse_mode(it.key())] = it.value().get<int>();
          break;
        case EventKind::Prediction:
          if (!cur || e.practice) break;
          cur->will_be_correct = p.at("will_be_correct").get<bool>();
          cur->user_confidence = p.at("confidence").get<int>();
          break;
        case EventKind::SecondaryPrediction:
          if (!cur || e.practice) break;
          cur->secondary_confidence = p.at("confidence").get<int>();
          break;
        case EventKind::Reveal:
          if (!cur || e.practice) break;
          if (p.at("stage").get<std::string>() == "primary") {
            cur->system_correct = p.at("system_correct").get<bool>();
            cur->prediction_correct = p.at("prediction_correct").get<bool>();
            cur->system_confidence = p.at("system_confidence").get<double>();
            revealed = true;
          } else {
            cur->second_system_correct = p.at("system_correct").get<bool>();
            cur->secondary_prediction_correct = p.at("prediction_correct").get<bool>();
          }
          break;
        case EventKind::Reliance:
          if (!cur || e.practice) break;
          cur->reliance = p.at("reliance").get<int>();
          break;
        case EventKind::TrialEnd:
          if (cur && revealed && !e.practice) {
            cur->analysis_index = ++analysis_index;
            out.push_back(std::move(*cur));
          }
          cur.reset();
          revealed = false;
          break;
        case EventKind::ExplanationsShown:
        case EventKind::UserAttention:
        case EventKind::SecondAnswer:
        case EventKind::SessionEnd:
          break;
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::ParseError, "event " + std::to_string(e.seq) + ": " + ex.what());
    } catch (const Error& ex) {
      fail(ErrorCode::ParseError, "event " + std::to_string(e.seq) + ": " + ex.what());
    }
  }
  return out;
}

std::map<GroupTag, Strata> accuracy_breakdown(std::span<const TrialOutcome> outcomes) {
  std::map<GroupTag, Strata> out;
  for (const auto& o : outcomes) out[o.group].add(o.system_correct, o.prediction_correct);
  return out;
}

namespace {

const Rate& stratum_of(const Strata& s, const std::string& name) {
  if (name == "sys_right") return s.sys_right;
  if (name == "sys_wrong") return s.sys_wrong;
  return s.overall;
}

ChiSquaredRow chi_row(std::string group, const std::string& stratum, const Rate& a, const Rate& b) {
  ChiSquaredRow row;
  row.group = std::move(group);
  row.stratum = stratum;
  row.table = {{{a.correct, a.total - a.correct}, {b.correct, b.total - b.correct}}};
  try {
    row.test = chi_squared_2x2(row.table);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UndefinedTest) throw;
  }
  return row;
}

}  // namespace

std::vector<ChiSquaredRow> chi_squared_vs_control(std::span<const TrialOutcome> outcomes) {
  std::vector<ChiSquaredRow> rows;
  const auto acc = accuracy_breakdown(outcomes);
  auto ne = acc.find(GroupTag::NE);
  if (ne == acc.end()) return rows;
  Strata pooled;
  bool any = false;
  for (const auto& [g, s] : acc) {
    if (g == GroupTag::NE) continue;
    any = true;
    for (const char* st : {"overall", "sys_right", "sys_wrong"})
      rows.push_back(chi_row(std::string(group_name(g)), st, stratum_of(s, st), stratum_of(ne->second, st)));
    pooled.overall.correct += s.overall.correct;
    pooled.overall.total += s.overall.total;
    pooled.sys_right.correct += s.sys_right.correct;
    pooled.sys_right.total += s.sys_right.total;
    pooled.sys_wrong.correct += s.sys_wrong.correct;
    pooled.sys_wrong.total += s.sys_wrong.total;
  }
  if (any) {
    for (const char* st : {"overall", "sys_right", "sys_wrong"})
      rows.push_back(chi_row("ALL", st, stratum_of(pooled, st), stratum_of(ne->second, st)));
  }
  return rows;
}

std::map<GroupTag, ProgressionCurve> progression(std::span<const TrialOutcome> outcomes, int bins) {
  if (bins < 1) fail(ErrorCode::ConfigError, "bins must be >= 1");
  std::map<GroupTag, int> max_index;
  for (const auto& o : outcomes) max_index[o.group] = std::max(max_index[o.group], o.analysis_index);
  std::map<GroupTag, ProgressionCurve> out;
  for (const auto& [g, m] : max_index) {
    auto& c = out[g];
    c.bins = bins;
    c.points.resize(static_cast<size_t>(bins));
    c.primary.resize(static_cast<size_t>(bins));
    c.secondary.resize(static_cast<size_t>(bins));
  }
  for (const auto& o : outcomes) {
    const int m = max_index[o.group];
    const int bin = std::min(bins - 1, static_cast<int>(static_cast<int64_t>(o.analysis_index - 1) * bins / m));
    auto& c = out[o.group];
    c.points[static_cast<size_t>(bin)].add(o.system_correct, o.prediction_correct);
    if (o.active && o.secondary_prediction_correct) {
      c.primary[static_cast<size_t>(bin)].add(o.prediction_correct);
      c.secondary[static_cast<size_t>(bin)].add(*o.secondary_prediction_correct);
    }
  }
  return out;
}

namespace {

struct RatedTrial {
  int rating;
  const TrialOutcome* outcome;
};

std::optional<double> safe_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return std::nullopt;
  return spearman(x, y);
}

RatingTable rating_table(const std::vector<RatedTrial>& trials, const std::map<std::string, double>& control_acc) {
  RatingTable t;
  std::map<int, RatingRow> rows;
  std::map<int, double> delta_sum;
  std::vector<double> xr, yr, xw, yw;
  for (const auto& [rating, o] : trials) {
    auto& row = rows[rating];
    row.rating = rating;
    row.accuracy.add(o->system_correct, o->prediction_correct);
    auto it = control_acc.find(o->session_id);
    if (it != control_acc.end()) {
      delta_sum[rating] += (o->prediction_correct ? 1.0 : 0.0) - it->second;
      row.delta_n += 1;
    }
    auto& xs = o->system_correct ? xr : xw;
    auto& ys = o->system_correct ? yr : yw;
    xs.push_back(rating);
    ys.push_back(o->prediction_correct ? 1.0 : 0.0);
  }
  for (auto& [rating, row] : rows) {
    if (row.delta_n > 0) row.delta_vs_control = delta_sum[rating] / static_cast<double>(row.delta_n);
    t.rows.push_back(row);
  }
  t.spearman_sys_right = safe_spearman(xr, yr);
  t.spearman_sys_wrong = safe_spearman(xw, yw);
  t.n_sys_right = static_cast<int64_t>(xr.size());
  t.n_sys_wrong = static_cast<int64_t>(xw.size());
  return t;
}

}  // namespace

RatingReport rating_vs_accuracy(std::span<const TrialOutcome> outcomes) {
  std::map<std::string, Rate> control;
  for (const auto& o : outcomes)
    if (o.block == BlockKind::Control) control[o.session_id].add(o.prediction_correct);
  std::map<std::string, double> control_acc;
  for (const auto& [s, r] : control) control_acc[s] = *r.value();

  std::map<Mode, std::vector<RatedTrial>> by_mode;
  std::vector<RatedTrial> reliance;
  for (const auto& o : outcomes) {
    if (!o.explanation) continue;
    for (const auto& [m, v] : o.helpfulness) by_mode[m].push_back({v, &o});
    if (o.reliance) reliance.push_back({*o.reliance, &o});
  }
  RatingReport r;
  for (const auto& [m, trials] : by_mode) r.helpfulness[m] = rating_table(trials, control_acc);
  r.reliance = rating_table(reliance, control_acc);
  return r;
}

std::map<GroupTag, ConfidenceRow> confidence_comparison(std::span<const TrialOutcome> outcomes) {
  std::map<GroupTag, std::pair<std::vector<double>, std::vector<double>>> series;
  for (const auto& o : outcomes) {
    if (!o.prediction_correct) continue;
    auto& [u, s] = series[o.group];
    u.push_back(static_cast<double>(o.user_confidence - 1) / static_cast<double>(o.likert_points - 1));
    s.push_back(o.system_confidence);
  }
  std::map<GroupTag, ConfidenceRow> out;
  for (const auto& [g, pr] : series) {
    const auto& [u, s] = pr;
    ConfidenceRow row;
    row.n = static_cast<int64_t>(u.size());
    double su = 0, ss = 0;
    for (size_t i = 0; i < u.size(); ++i) {
      su += u[i];
      ss += s[i];
    }
    row.mean_user = su / static_cast<double>(u.size());
    row.mean_system = ss / static_cast<double>(s.size());
    if (u.size() >= 2) row.correlation = pearson(u, s);
    out[g] = row;
  }
  return out;
}

std::map<GroupTag, BlockCurves> block_comparison(std::span<const TrialOutcome> outcomes) {
  std::map<GroupTag, BlockCurves> out;
  for (const auto& o : outcomes) {
    if (o.group == GroupTag::NE) continue;
    if (o.block == BlockKind::Explanation) out[o.group].explanation[o.block_ordinal].add(o.prediction_correct);
    if (o.block == BlockKind::Control) out[o.group].control[o.block_ordinal].add(o.prediction_correct);
  }
  return out;
}

MetricsReport build_report(std::span<const TrialOutcome> outcomes, int64_t sessions, int bins) {
  MetricsReport r;
  r.sessions = sessions;
  r.trials = static_cast<int64_t>(outcomes.size());
  r.accuracy = accuracy_breakdown(outcomes);
  r.chi_squared = chi_squared_vs_control(outcomes);
  r.progression = progression(outcomes, bins);
  r.ratings = rating_vs_accuracy(outcomes);
  r.confidence = confidence_comparison(outcomes);
  r.blocks = block_comparison(outcomes);
  return r;
}

namespace {

using nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json rate_json(const Rate& r) {
  json j = {{"correct", r.correct}, {"total", r.total}};
  if (auto v = r.value()) j["rate"] = *v;
  return j;
}

json strata_json(const Strata& s) {
  json j = json::object();
  if (s.overall.total) j["overall"] = rate_json(s.overall);
  if (s.sys_right.total) j["sys_right"] = rate_json(s.sys_right);
  if (s.sys_wrong.total) j["sys_wrong"] = rate_json(s.sys_wrong);
  return j;
}

json rates_json(const std::vector<Rate>& v) {
  json a = json::array();
  for (const auto& r : v) a.push_back(r.total ? rate_json(r) : json(nullptr));
  return a;
}

json rating_table_json(const RatingTable& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json j = {{"rating", row.rating}, {"accuracy", strata_json(row.accuracy)}, {"delta_n", row.delta_n}};
    j["delta_vs_control"] = opt(row.delta_vs_control);
    rows.push_back(std::move(j));
  }
  return {{"rows", rows},
          {"spearman_sys_right", opt(t.spearman_sys_right)},
          {"spearman_sys_wrong", opt(t.spearman_sys_wrong)},
          {"n_sys_right", t.n_sys_right},
          {"n_sys_wrong", t.n_sys_wrong}};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string rate_cell(const Rate& r) {
  if (!r.total) return "-";
  return fmt("%.3f", *r.value()) + " (" + std::to_string(r.correct) + "/" + std::to_string(r.total) + ")";
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  json j;
  j["sessions"] = r.sessions;
  j["trials"] = r.trials;
  json acc = json::object();
  for (const auto& [g, s] : r.accuracy) acc[std::string(group_name(g))] = strata_json(s);
  j["accuracy"] = acc;

  json chi = json::array();
  for (const auto& row : r.chi_squared) {
    json c = {{"group", row.group},
              {"versus", "NE"},
              {"stratum", row.stratum},
              {"table", {{row.table[0][0], row.table[0][1]}, {row.table[1][0], row.table[1][1]}}}};
    if (row.test) {
      c["statistic"] = row.test->statistic;
      c["p_value"] = row.test->p_value;
    } else {
      c["undefined"] = true;
    }
    chi.push_back(std::move(c));
  }
  j["chi_squared"] = {{"method", "pearson, 1 dof, no continuity correction; unit of analysis is the trial"},
                      {"rows", chi}};

  json prog = json::object();
  for (const auto& [g, c] : r.progression) {
    json pts = json::array();
    for (const auto& s : c.points) pts.push_back(strata_json(s));
    json pc = {{"bins", c.bins}, {"points", pts}};
    bool active = false;
    for (const auto& x : c.primary) active = active || x.total > 0;
    if (active) {
      pc["primary"] = rates_json(c.primary);
      pc["secondary"] = rates_json(c.secondary);
    }
    prog[std::string(group_name(g))] = std::move(pc);
  }
  j["progression"] = prog;

  json help = json::object();
  for (const auto& [m, t] : r.ratings.helpfulness) help[std::string(mode_name(m))] = rating_table_json(t);
  j["ratings"] = {{"helpfulness", help},
                  {"reliance", rating_table_json(r.ratings.reliance)},
                  {"delta_baseline", "each session's accuracy on control-block trials"}};

  json conf = json::object();
  for (const auto& [g, c] : r.confidence) {
    conf[std::string(group_name(g))] = {{"n", c.n},
                                        {"mean_user", opt(c.mean_user)},
                                        {"mean_system", opt(c.mean_system)},
                                        {"correlation", opt(c.correlation)}};
  }
  j["confidence"] = {{"restricted_to", "correct predictions"},
                     {"user_scale", "(c - 1) / (likert_points - 1)"},
                     {"groups", conf}};

  json blocks = json::object();
  for (const auto& [g, b] : r.blocks) {
    json e = json::object(), c = json::object();
    for (const auto& [k, v] : b.explanation) e[std::to_string(k)] = rate_json(v);
    for (const auto& [k, v] : b.control) c[std::to_string(k)] = rate_json(v);
    blocks[std::string(group_name(g))] = {{"explanation", e}, {"control", c}};
  }
  j["blocks"] = blocks;
  return j;
}

std::string summary_text(const MetricsReport& r) {
  std::ostringstream ss;
  ss << "sessions: " << r.sessions << "  analyzed trials: " << r.trials << "\n\n";
  ss << "prediction accuracy\n";
  char line[256];
  std::snprintf(line, sizeof line, "  %-5s %-22s %-22s %-22s\n", "group", "overall", "sys-right", "sys-wrong");
  ss << line;
  for (const auto& [g, s] : r.accuracy) {
    std::snprintf(line, sizeof line, "  %-5s %-22s %-22s %-22s\n", std::string(group_name(g)).c_str(),
                  rate_cell(s.overall).c_str(), rate_cell(s.sys_right).c_str(), rate_cell(s.sys_wrong).c_str());
    ss << line;
  }
  if (!r.chi_squared.empty()) {
    ss << "\nchi-squared vs NE (no continuity correction, per trial)\n";
    for (const auto& row : r.chi_squared) {
      if (row.test) {
        std::snprintf(line, sizeof line, "  %-4s %-10s x2=%-10.4f p=%.4g\n", row.group.c_str(), row.stratum.c_str(),
                      row.test->statistic, row.test->p_value);
      } else {
        std::snprintf(line, sizeof line, "  %-4s %-10s undefined\n", row.group.c_str(), row.stratum.c_str());
      }
      ss << line;
    }
  }
  if (!r.ratings.helpfulness.empty()) {
    ss << "\nhelpfulness vs correctness (spearman)\n";
    for (const auto& [m, t] : r.ratings.helpfulness) {
      ss << "  " << mode_name(m) << ": sys-right "
         << (t.spearman_sys_right ? fmt("%.3f", *t.spearman_sys_right) : std::string("-")) << " (n="
         << t.n_sys_right << "), sys-wrong "
         << (t.spearman_sys_wrong ? fmt("%.3f", *t.spearman_sys_wrong) : std::string("-")) << " (n="
         << t.n_sys_wrong << ")\n";
    }
  }
  if (!r.confidence.empty()) {
    ss << "\nconfidence on correct predictions (user | system | r)\n";
    for (const auto& [g, c] : r.confidence) {
      ss << "  " << group_name(g) << ": " << (c.mean_user ? fmt("%.3f", *c.mean_user) : "-") << " | "
         << (c.mean_system ? fmt("%.3f", *c.mean_system) : "-") << " | "
         << (c.correlation ? fmt("%.3f", *c.correlation) : "-") << "\n";
    }
  }
  return ss.str();
}

std::string outcomes_csv(std::span<const TrialOutcome> outcomes) {
  std::ostringstream ss;
  ss << "session_id,group,trial_index,analysis_index,question_id,explanation,active,block,block_ordinal,"
        "system_correct,will_be_correct,prediction_correct,user_confidence,system_confidence,helpfulness,"
        "reliance,second_system_correct,secondary_prediction_correct,secondary_confidence\n";
  auto b = [](bool v) { return v ? "1" : "0"; };
  for (const auto& o : outcomes) {
    std::string help;
    for (const auto& [m, v] : o.helpfulness) {
      if (!help.empty()) help += ';';
      help += std::string(mode_name(m)) + ":" + std::to_string(v);
    }
    ss << o.session_id << ',' << group_name(o.group) << ',' << o.trial_index << ',' << o.analysis_index << ','
       << o.question_id << ',' << b(o.explanation) << ',' << b(o.active) << ',' << block_kind_name(o.block) << ','
       << o.block_ordinal << ',' << b(o.system_correct) << ',' << b(o.will_be_correct) << ','
       << b(o.prediction_correct) << ',' << o.user_confidence << ',' << fmt("%.6f", o.system_confidence) << ','
       << help << ',' << (o.reliance ? std::to_string(*o.reliance) : "") << ','
       << (o.second_system_correct ? b(*o.second_system_correct) : "") << ','
       << (o.secondary_prediction_correct ? b(*o.secondary_prediction_correct) : "") << ','
       << (o.secondary_confidence ? std::to_string(*o.secondary_confidence) : "") << '\n';
  }
  return ss.str();
}

std::vector<std::filesystem::path> find_logs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<fs::path> logs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") logs.push_back(entry.path());
  std::sort(logs.begin(), logs.end());
  if (logs.empty()) fail(ErrorCode::IoError, "no logs found in " + dir.string());
  return logs;
}

MetricsReport analyze_directory(const std::filesystem::path& dir, std::vector<TrialOutcome>* outcomes_out, int bins) {
  std::vector<TrialOutcome> all;
  const auto logs = find_logs(dir);
  for (const auto& path : logs) {
    try {
      auto o = extract_outcomes(read_event_log(path));
      all.insert(all.end(), std::make_move_iterator(o.begin()), std::make_move_iterator(o.end()));
    } catch (const Error& e) {
      fail(e.code(), path.filename().string() + ": " + e.what());
    }
  }
  auto report = build_report(all, static_cast<int64_t>(logs.size()), bins);
  if (outcomes_out) *outcomes_out = std::move(all);
  return report;
}

}  // namespace xvqa
