#include "xvqa/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <tuple>

#include "xvqa/error.hpp"

namespace xvqa {

void SubjectPolicy::validate() const {
  if (!(p >= 0 && p <= 1)) fail(ErrorCode::ConfigError, "policy p must be in [0,1]");
  if (!(theta >= 0 && theta <= 1)) fail(ErrorCode::ConfigError, "policy theta must be in [0,1]");
}

SubjectPolicy SubjectPolicy::parse(std::string_view text) {
  SubjectPolicy pol;
  const auto colon = text.find(':');
  const auto head = text.substr(0, colon);
  std::optional<double> arg;
  if (colon != std::string_view::npos) {
    const std::string num(text.substr(colon + 1));
    try {
      size_t used = 0;
      arg = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
    } catch (const std::exception&) {
      fail(ErrorCode::ConfigError, "bad policy parameter '" + num + "'");
    }
  }
  if (head == "random") {
    pol.kind = PolicyKind::Random;
    if (arg) pol.p = *arg;
  } else if (head == "prior") {
    pol.kind = PolicyKind::PriorTracker;
    if (arg) fail(ErrorCode::ConfigError, "policy 'prior' takes no parameter");
  } else if (head == "explanation") {
    pol.kind = PolicyKind::ExplanationAware;
    if (arg) pol.theta = *arg;
  } else {
    fail(ErrorCode::ConfigError, "unknown policy '" + std::string(text) + "' (expected random[:p], prior, explanation[:theta])");
  }
  pol.validate();
  return pol;
}

std::string SubjectPolicy::name() const {
  switch (kind) {
    case PolicyKind::Random: return "random";
    case PolicyKind::PriorTracker: return "prior";
    case PolicyKind::ExplanationAware: return "explanation";
  }
  return "?";
}

namespace {

struct Weighted {
  const ObjectAnn* object;
  double weight;
};

double score_ranking(std::vector<Weighted> ranked, const Scene& scene, const Question& q, std::string_view answer,
                     int top_k) {
  if (ranked.empty()) return 0.5;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Weighted& a, const Weighted& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.object->box.area() < b.object->box.area();
  });
  if (static_cast<int>(ranked.size()) > top_k) ranked.resize(static_cast<size_t>(top_k));

  const std::set<std::string> asked(q.text.begin(), q.text.end());
  double total = 0, hit = 0, max_w = 0;
  for (const auto& r : ranked) {
    total += r.weight;
    max_w = std::max(max_w, r.weight);
    if (asked.count(r.object->label)) hit += r.weight;
  }
  double named;
  if (total > 0) {
    named = hit / total;
  } else {
    int n = 0;
    for (const auto& r : ranked) n += asked.count(r.object->label) ? 1 : 0;
    named = static_cast<double>(n) / static_cast<double>(ranked.size());
  }

  bool carries = false;
  for (const auto& r : ranked) {
    if (r.weight < 0.5 * max_w) continue;
    if (r.object->label == answer) carries = true;
    for (const auto& a : scene.attributes_of(r.object->id))
      if (a == answer) carries = true;
  }
  return 0.5 * named + 0.5 * (carries ? 1.0 : 0.0);
}

double heatmap_box_mean(const Heatmap& hm, const Box& b, const Scene& scene) {
  const double sx = static_cast<double>(hm.width) / scene.width;
  const double sy = static_cast<double>(hm.height) / scene.height;
  const int x0 = std::clamp(static_cast<int>(std::floor(b.x * sx)), 0, hm.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(b.y * sy)), 0, hm.height - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil((b.x + b.w) * sx)), x0 + 1, hm.width);
  const int y1 = std::clamp(static_cast<int>(std::ceil((b.y + b.h) * sy)), y0 + 1, hm.height);
  double s = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) s += hm.at(x, y);
  return s / static_cast<double>((x1 - x0) * (y1 - y0));
}

}  // namespace

double alignment_score(const ExplanationBundle& bundle, const Scene& scene, const Question& question,
                       std::string_view top_answer, int top_k) {
  std::vector<Weighted> ranked;
  if (bundle.boxes) {
    for (const auto& s : *bundle.boxes)
      if (const auto* o = scene.find_object(s.object_id)) ranked.push_back({o, s.score});
  } else if (bundle.objects) {
    for (const auto& w : *bundle.objects)
      if (const auto* o = scene.find_object(w.object_id)) ranked.push_back({o, w.weight});
  } else if (bundle.heatmap) {
    for (const auto& o : scene.objects) ranked.push_back({&o, heatmap_box_mean(*bundle.heatmap, o.box, scene)});
  }
  return score_ranking(std::move(ranked), scene, question, top_answer, top_k);
}

double alignment_score(const AttentionMap& attention, const Scene& scene, const Question& question,
                       std::string_view top_answer, int top_k) {
  std::vector<Weighted> ranked;
  for (const auto& o : scene.objects)
    ranked.push_back({&o, box_mean_attention(attention, o.box, scene.width, scene.height)});
  return score_ranking(std::move(ranked), scene, question, top_answer, top_k);
}

SimSubject::SimSubject(SubjectPolicy policy, int likert_points)
    : policy_(policy), likert_(likert_points), rng_(mix_seed(policy.seed, 0x5b1ec7u)) {
  policy_.validate();
  if (likert_ < 2) fail(ErrorCode::ConfigError, "likert_points must be >= 2");
}

int SimSubject::likert_from_unit(double u) const {
  return 1 + static_cast<int>(std::lround(std::clamp(u, 0.0, 1.0) * (likert_ - 1)));
}

double SimSubject::prior_mean() const {
  return static_cast<double>(1 + right_) / static_cast<double>(2 + seen_);
}

std::pair<bool, int> SimSubject::prior_prediction() {
  const double m = prior_mean();
  return {m > 0.5, likert_from_unit(2.0 * std::fabs(m - 0.5))};
}

std::pair<bool, int> SimSubject::random_prediction() {
  const bool will = rng_.uniform() < policy_.p;
  const int conf = 1 + static_cast<int>(rng_.below(static_cast<uint64_t>(likert_)));
  return {will, conf};
}

std::pair<bool, int> SimSubject::threshold_prediction(double a) const {
  const double theta = policy_.theta;
  const double span = std::max(theta, 1.0 - theta);
  return {a >= theta, likert_from_unit(span > 0 ? std::fabs(a - theta) / span : 1.0)};
}

SubjectActions SimSubject::act(const TrialView& view, std::string_view top_answer) {
  SubjectActions act;
  const bool shown = view.bundle && !view.bundle->empty();
  act.alignment = shown ? alignment_score(*view.bundle, *view.scene, *view.question, top_answer) : 0.5;

  if (policy_.kind == PolicyKind::Random) {
    if (shown)
      for (auto m : view.bundle->modes) act.helpfulness[m] = 1 + static_cast<int>(rng_.below(static_cast<uint64_t>(likert_)));
    std::tie(act.will_be_correct, act.confidence) = random_prediction();
    act.reliance = 1 + static_cast<int>(rng_.below(static_cast<uint64_t>(likert_)));
    return act;
  }

  if (shown)
    for (auto m : view.bundle->modes) act.helpfulness[m] = likert_from_unit(act.alignment);
  act.reliance = likert_from_unit(std::fabs(2.0 * act.alignment - 1.0));
  if (policy_.kind == PolicyKind::ExplanationAware && shown)
    std::tie(act.will_be_correct, act.confidence) = threshold_prediction(act.alignment);
  else
    std::tie(act.will_be_correct, act.confidence) = prior_prediction();
  return act;
}

AttentionMap SimSubject::draw_attention(const TrialView& view, int grid) const {
  const std::set<std::string> asked(view.question->text.begin(), view.question->text.end());
  AttentionMap m = AttentionMap::filled(grid, 0.0, MapKind::User);
  bool any = false;
  for (const auto& o : view.scene->objects) {
    if (!asked.count(o.label)) continue;
    any = true;
    for (const auto& c : box_to_cells(o.box, view.scene->width, view.scene->height, grid))
      m.weights[static_cast<size_t>(c.cell)] = 1.0;
  }
  if (!any) m = AttentionMap::filled(grid, 1.0, MapKind::User);
  return m;
}

SecondaryActions SimSubject::act_secondary(const TrialView& view, const SecondAnswerView& second) {
  SecondaryActions s;
  switch (policy_.kind) {
    case PolicyKind::Random:
      std::tie(s.will_be_correct, s.confidence) = random_prediction();
      break;
    case PolicyKind::PriorTracker:
      std::tie(s.will_be_correct, s.confidence) = prior_prediction();
      break;
    case PolicyKind::ExplanationAware: {
      const double a = alignment_score(second.attention, *view.scene, *view.question, second.answer);
      std::tie(s.will_be_correct, s.confidence) = threshold_prediction(a);
      break;
    }
  }
  return s;
}

void SimSubject::observe(bool system_correct) {
  ++seen_;
  if (system_correct) ++right_;
}

namespace {

// Virtual time each action takes, in ms.
constexpr int64_t kReadMs = 4000;
constexpr int64_t kRateMs = 3000;
constexpr int64_t kPredictMs = 3000;
constexpr int64_t kDrawMs = 8000;
constexpr int64_t kRelianceMs = 2000;
constexpr int64_t kAdvanceMs = 1000;

}  // namespace

SessionLog run_session(std::shared_ptr<const StudyContext> ctx, const std::string& session_id,
                       const SessionConfig& config, const SubjectPolicy& policy, int64_t start_ms) {
  int64_t now = start_ms;
  Session s = Session::create(ctx, session_id, config, now);
  SimSubject subject(policy, config.likert_points);
  const int grid = ctx->agent.config().grid;
  for (;;) {
    now += kAdvanceMs;
    auto view = s.start_trial(now);
    if (!view) break;
    const std::string top = s.state().trial->first.top_answer();
    const auto act = subject.act(*view, top);
    now += kReadMs;
    if (view->explanation) {
      now += kRateMs;
      s.submit_helpfulness(act.helpfulness, now);
    }
    now += kPredictMs;
    const auto reveal = s.submit_prediction(act.will_be_correct, act.confidence, now);
    subject.observe(reveal.system_correct);
    if (s.state().phase == Phase::AwaitUserAttention) {
      now += kDrawMs;
      const auto second = s.submit_user_attention(subject.draw_attention(*view, grid), now);
      const auto sec = subject.act_secondary(*view, second);
      now += kPredictMs;
      s.submit_secondary_prediction(sec.will_be_correct, sec.confidence, now);
    }
    if (s.state().phase == Phase::AwaitReliance) {
      now += kRelianceMs;
      s.submit_reliance(act.reliance, now);
    }
  }
  return {session_id, s.events()};
}

std::vector<SessionLog> run_study(std::shared_ptr<const StudyContext> ctx, const StudyConfig& config) {
  std::vector<SessionLog> logs;
  std::set<std::string> used;
  for (const auto& cohort : config.cohorts) {
    if (cohort.subjects < 1) fail(ErrorCode::ConfigError, "cohort needs at least one subject");
    for (int i = 1; i <= cohort.subjects; ++i) {
      char num[16];
      std::snprintf(num, sizeof num, "%02d", i);
      std::string id = std::string(group_name(cohort.group)) + "-" + cohort.policy.name() + "-" + num;
      if (!used.insert(id).second) fail(ErrorCode::ConfigError, "duplicate cohort " + id);
      SessionConfig sc = config.session;
      sc.group = cohort.group;
      sc.dataset_id = ctx->dataset_id;
      sc.seed = mix_seed(config.seed, fnv1a64(id));
      sc.max_trials = config.trials_per_subject;
      SubjectPolicy pol = cohort.policy;
      pol.seed = mix_seed(config.seed ^ 0x9e3779b97f4a7c15ULL, fnv1a64(id));
      logs.push_back(run_session(ctx, id, sc, pol, config.epoch_ms));
    }
  }
  return logs;
}

std::vector<std::filesystem::path> write_logs(const std::filesystem::path& dir, const std::vector<SessionLog>& logs) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> out;
  for (const auto& log : logs) {
    auto path = dir / (log.session_id + ".jsonl");
    write_event_log(path, log.events);
    out.push_back(std::move(path));
  }
  return out;
}

}  // namespace xvqa
