#include "xvqa/protocol.hpp"

#include <algorithm>
#include <numeric>

#include "xvqa/error.hpp"
#include "xvqa/util.hpp"

namespace xvqa {

namespace {

constexpr GroupTag kGroups[] = {GroupTag::NE, GroupTag::SP, GroupTag::SA, GroupTag::SE, GroupTag::OA, GroupTag::AL};

nlohmann::json top5_json(const std::vector<RankedAnswer>& top) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : top) a.push_back({{"answer", r.answer}, {"probability", r.probability}});
  return a;
}

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x, b.y, b.w, b.h}); }

}  // namespace

std::string_view group_name(GroupTag g) {
  switch (g) {
    case GroupTag::NE: return "NE";
    case GroupTag::SP: return "SP";
    case GroupTag::SA: return "SA";
    case GroupTag::SE: return "SE";
    case GroupTag::OA: return "OA";
    case GroupTag::AL: return "AL";
  }
  return "?";
}

GroupTag parse_group(std::string_view name) {
  for (auto g : kGroups)
    if (group_name(g) == name) return g;
  fail(ErrorCode::ConfigError, "unknown group '" + std::string(name) + "' (expected NE, SP, SA, SE, OA or AL)");
}

GroupSpec group_spec(GroupTag tag) {
  switch (tag) {
    case GroupTag::NE: return {tag, {}, false};
    case GroupTag::SP: return {tag, {Mode::Spatial}, false};
    case GroupTag::SA: return {tag, {Mode::Spatial, Mode::Active}, true};
    case GroupTag::SE: return {tag, {Mode::Boxes, Mode::Graph, Mode::Text}, false};
    case GroupTag::OA: return {tag, {Mode::Object}, false};
    case GroupTag::AL:
      return {tag, {Mode::Spatial, Mode::Active, Mode::Boxes, Mode::Graph, Mode::Object, Mode::Text}, true};
  }
  fail(ErrorCode::ConfigError, "unknown group");
}

void SessionConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::ConfigError, "session config: " + m); };
  if (practice_trials < 0) bad("practice_trials must be >= 0");
  if (block_size < 1) bad("block_size must be >= 1");
  if (time_limit_s <= 0) bad("time_limit_s must be > 0");
  if (likert_points < 2) bad("likert_points must be >= 2");
  if (max_trials < 0) bad("max_trials must be >= 0");
}

nlohmann::json SessionConfig::to_json() const {
  return {{"group", group_name(group)},
          {"dataset_id", dataset_id},
          {"seed", seed},
          {"practice_trials", practice_trials},
          {"block_size", block_size},
          {"time_limit_s", time_limit_s},
          {"likert_points", likert_points},
          {"max_trials", max_trials},
          {"explanation_first", explanation_first}};
}

SessionConfig SessionConfig::from_json(const nlohmann::json& j) {
  SessionConfig c;
  try {
    c.group = parse_group(j.at("group").get<std::string>());
    c.dataset_id = j.at("dataset_id").get<std::string>();
    c.seed = j.at("seed").get<uint64_t>();
    c.practice_trials = j.at("practice_trials").get<int>();
    c.block_size = j.at("block_size").get<int>();
    c.time_limit_s = j.at("time_limit_s").get<int64_t>();
    c.likert_points = j.at("likert_points").get<int>();
    c.max_trials = j.at("max_trials").get<int>();
    c.explanation_first = j.at("explanation_first").get<bool>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("session config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::string_view block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::Practice: return "practice";
    case BlockKind::Explanation: return "explanation";
    case BlockKind::Control: return "control";
  }
  return "?";
}

BlockKind parse_block_kind(std::string_view name) {
  for (auto k : {BlockKind::Practice, BlockKind::Explanation, BlockKind::Control})
    if (block_kind_name(k) == name) return k;
  fail(ErrorCode::ParseError, "unknown block kind '" + std::string(name) + "'");
}

std::vector<BlockDescriptor> block_schedule(const SessionConfig& config, int n_trials) {
  std::vector<BlockDescriptor> out;
  int t = 1;
  const int practice = std::min(config.practice_trials, n_trials);
  if (practice > 0) {
    out.push_back({BlockKind::Practice, practice, 1, 1});
    t += practice;
  }
  const bool alternating = group_spec(config.group).has_explanations();
  bool explanation = alternating && config.explanation_first;
  int e_ord = 0, c_ord = 0;
  while (t <= n_trials) {
    const int size = std::min(config.block_size, n_trials - t + 1);
    const BlockKind kind = explanation ? BlockKind::Explanation : BlockKind::Control;
    out.push_back({kind, size, explanation ? ++e_ord : ++c_ord, t});
    t += size;
    if (alternating) explanation = !explanation;
  }
  return out;
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::AwaitHelpfulness: return "await_helpfulness";
    case Phase::AwaitPrediction: return "await_prediction";
    case Phase::Reveal: return "reveal";
    case Phase::AwaitReliance: return "await_reliance";
    case Phase::AwaitUserAttention: return "await_user_attention";
    case Phase::AwaitSecondaryPrediction: return "await_secondary_prediction";
    case Phase::SecondaryReveal: return "secondary_reveal";
    case Phase::TrialDone: return "trial_done";
    case Phase::Complete: return "complete";
  }
  return "?";
}

namespace {

std::shared_ptr<const Dataset> filtered(const Dataset& d) {
  auto f = std::make_shared<Dataset>(filter_questions(d));
  validate_dataset(*f);
  return f;
}

}  // namespace

StudyContext::StudyContext(const Dataset& d, const AgentConfig& agent_config, const ExplainConfig& explain_config)
    : dataset(filtered(d)), dataset_id(xvqa::dataset_id(*dataset)), agent(agent_config, dataset->answer_vocab),
      explain(explain_config) {
  explain.validate();
}

bool TrialState::system_correct(const Dataset& d) const {
  return first.top_answer() == d.questions[question].answer;
}

// ---------------------------------------------------------------------------
// Views

nlohmann::json to_json(const TrialView& v) {
  using nlohmann::json;
  json objects = json::array();
  for (const auto& o : v.scene->objects) {
    objects.push_back(
        {{"id", o.id}, {"label", o.label}, {"box", box_json(o.box)}, {"attributes", v.scene->attributes_of(o.id)}});
  }
  json j = {{"session_id", v.session_id},
            {"trial_index", v.trial_index},
            {"total_trials", v.total_trials},
            {"phase", phase_name(v.phase)},
            {"block", block_kind_name(v.block)},
            {"block_ordinal", v.block_ordinal},
            {"practice", v.practice},
            {"explanation", v.explanation},
            {"active", v.active},
            {"question", {{"id", v.question->id}, {"text", join(v.question->text)}}},
            {"scene",
             {{"id", v.scene->id}, {"width", v.scene->width}, {"height", v.scene->height}, {"objects", objects}}}};
  if (v.bundle) j["bundle"] = to_json(*v.bundle, *v.scene);
  return j;
}

nlohmann::json to_json(const RevealView& v) {
  return {{"trial_index", v.trial_index},
          {"ground_truth", v.ground_truth},
          {"answer", v.answer},
          {"top5", top5_json(v.top5)},
          {"system_confidence", v.system_confidence},
          {"system_correct", v.system_correct},
          {"will_be_correct", v.will_be_correct},
          {"user_confidence", v.user_confidence},
          {"prediction_correct", v.prediction_correct},
          {"phase", phase_name(v.next_phase)}};
}

nlohmann::json to_json(const SecondAnswerView& v) {
  return {{"trial_index", v.trial_index},
          {"answer", v.answer},
          {"top5", top5_json(v.top5)},
          {"system_confidence", v.system_confidence},
          {"attention", v.attention.weights},
          {"grid", v.attention.grid},
          {"goal", v.goal}};
}

nlohmann::json to_json(const SecondaryRevealView& v) {
  return {{"trial_index", v.trial_index},
          {"ground_truth", v.ground_truth},
          {"answer", v.answer},
          {"system_correct", v.system_correct},
          {"will_be_correct", v.will_be_correct},
          {"user_confidence", v.user_confidence},
          {"prediction_correct", v.prediction_correct}};
}

std::span<const std::string_view> answer_keys() {
  static constexpr std::string_view keys[] = {"ground_truth", "answer",        "top5",
                                              "distribution", "system_correct", "system_confidence"};
  return keys;
}

std::optional<std::string> find_answer_leak(const nlohmann::json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      for (auto k : answer_keys())
        if (it.key() == k) return it.key();
      if (auto r = find_answer_leak(it.value())) return r;
    }
  } else if (j.is_array()) {
    for (const auto& e : j)
      if (auto r = find_answer_leak(e)) return r;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Session

Session::Session(std::shared_ptr<const StudyContext> ctx) : ctx_(std::move(ctx)) {
  if (!ctx_) fail(ErrorCode::InvariantError, "session needs a study context");
}

Session Session::create(std::shared_ptr<const StudyContext> ctx, std::string id, SessionConfig config,
                        int64_t now_ms) {
  if (id.empty()) fail(ErrorCode::ConfigError, "session id must not be empty");
  if (config.dataset_id.empty()) config.dataset_id = ctx->dataset_id;
  config.validate();
  if (config.dataset_id != ctx->dataset_id)
    fail(ErrorCode::ConfigError, "session dataset " + config.dataset_id + " does not match loaded dataset " +
                                     ctx->dataset_id);
  Session s(std::move(ctx));
  EventRecord e;
  e.seq = 0;
  e.timestamp = now_ms;
  e.session_id = std::move(id);
  e.trial_index = 0;
  e.kind = EventKind::SessionStart;
  e.payload = {{"config", config.to_json()}};
  s.apply(e);
  return s;
}

const Question& Session::question_at(size_t index) const { return ctx_->dataset->questions[index]; }

const Scene& Session::scene_for_trial() const {
  return ctx_->dataset->scene_for(question_at(state_.trial->question));
}

TrialState& Session::trial() { return *state_.trial; }

void Session::emit(EventKind kind, nlohmann::json payload, int64_t now_ms) {
  EventRecord e;
  e.seq = state_.next_seq;
  e.timestamp = std::max(now_ms, state_.last_ms);
  e.session_id = state_.id;
  e.kind = kind;
  if (kind == EventKind::TrialStart) {
    e.trial_index = state_.cursor + 1;
    for (const auto& b : state_.schedule)
      if (e.trial_index >= b.first_trial && e.trial_index < b.first_trial + b.size)
        e.practice = b.kind == BlockKind::Practice;
  } else {
    e.trial_index = state_.cursor;
    e.practice = kind != EventKind::SessionEnd && state_.trial && state_.trial->practice;
  }
  e.payload = std::move(payload);
  apply(e);
}

void Session::require_idle_trial(Phase expected, std::string_view op) const {
  if (state_.phase == Phase::Complete) fail(ErrorCode::SessionComplete, "session " + state_.id + " is complete");
  if (!state_.started || state_.phase != expected || state_.expect)
    fail(ErrorCode::PhaseError, std::string(op) + " not allowed in phase " + std::string(phase_name(state_.phase)));
}

void Session::check_likert(int value, std::string_view what) const {
  const int l = state_.config.likert_points;
  if (value < 1 || value > l)
    fail(ErrorCode::RangeError,
         std::string(what) + " " + std::to_string(value) + " outside 1.." + std::to_string(l));
}

std::optional<TrialView> Session::start_trial(int64_t now_ms) {
  require_idle_trial(Phase::TrialDone, "start_trial");
  const int64_t now = std::max(now_ms, state_.last_ms);
  if (now - state_.start_ms >= state_.config.time_limit_s * 1000) {
    emit(EventKind::SessionEnd, {{"reason", "time_limit"}}, now);
    return std::nullopt;
  }
  if (state_.cursor >= state_.total_trials) {
    emit(EventKind::SessionEnd, {{"reason", "finished"}}, now);
    return std::nullopt;
  }
  const int idx = state_.cursor + 1;
  const auto& q = question_at(state_.question_order[static_cast<size_t>(state_.cursor)]);
  const BlockDescriptor* block = nullptr;
  for (const auto& b : state_.schedule)
    if (idx >= b.first_trial && idx < b.first_trial + b.size) block = &b;
  const bool explanation = block->kind == BlockKind::Explanation ||
                           (block->kind == BlockKind::Practice && group_.has_explanations());
  emit(EventKind::TrialStart,
       {{"question_id", q.id},
        {"scene_id", q.scene_id},
        {"block", block_kind_name(block->kind)},
        {"block_ordinal", block->ordinal},
        {"explanation", explanation},
        {"active", explanation && group_.active_loop}},
       now);
  if (explanation)
    emit(EventKind::ExplanationsShown, {{"modes", mode_names(group_.modes)}, {"active", group_.active_loop}}, now);
  return trial_view();
}

void Session::submit_helpfulness(const std::map<Mode, int>& ratings, int64_t now_ms) {
  require_idle_trial(Phase::AwaitHelpfulness, "helpfulness");
  for (const auto& [m, v] : ratings) {
    if (!group_.modes.count(m))
      fail(ErrorCode::RangeError, "mode '" + std::string(mode_name(m)) + "' was not shown on this trial");
    check_likert(v, "helpfulness rating");
  }
  for (auto m : group_.modes)
    if (!ratings.count(m)) fail(ErrorCode::RangeError, "missing helpfulness rating for '" + std::string(mode_name(m)) + "'");
  nlohmann::json r = nlohmann::json::object();
  for (const auto& [m, v] : ratings) r[std::string(mode_name(m))] = v;
  emit(EventKind::Helpfulness, {{"ratings", r}}, now_ms);
}

RevealView Session::submit_prediction(bool will_be_correct, int confidence, int64_t now_ms) {
  require_idle_trial(Phase::AwaitPrediction, "prediction");
  check_likert(confidence, "confidence");
  emit(EventKind::Prediction, {{"will_be_correct", will_be_correct}, {"confidence", confidence}}, now_ms);
  const auto& t = trial();
  const auto& q = question_at(t.question);
  const bool sys = t.system_correct(*ctx_->dataset);
  emit(EventKind::Reveal,
       {{"stage", "primary"},
        {"ground_truth", q.answer},
        {"answer", t.first.top_answer()},
        {"system_correct", sys},
        {"system_confidence", t.first.confidence},
        {"prediction_correct", t.prediction->correct},
        {"top5", top5_json(t.first.top5)}},
       now_ms);
  if (state_.expect == EventKind::TrialEnd) emit(EventKind::TrialEnd, nlohmann::json::object(), now_ms);
  return reveal_view();
}

void Session::submit_reliance(int reliance, int64_t now_ms) {
  require_idle_trial(Phase::AwaitReliance, "reliance");
  check_likert(reliance, "reliance");
  emit(EventKind::Reliance, {{"reliance", reliance}}, now_ms);
  emit(EventKind::TrialEnd, nlohmann::json::object(), now_ms);
}

SecondAnswerView Session::submit_user_attention(const AttentionMap& map, int64_t now_ms) {
  require_idle_trial(Phase::AwaitUserAttention, "user attention");
  map.validate_user(ctx_->agent.config().grid);
  const std::string goal = trial().system_correct(*ctx_->dataset) ? "different" : "correct";
  emit(EventKind::UserAttention, {{"grid", map.grid}, {"map", map.weights}, {"goal", goal}}, now_ms);
  const auto& second = *trial().second;
  emit(EventKind::SecondAnswer,
       {{"answer", second.top_answer()}, {"system_confidence", second.confidence}, {"top5", top5_json(second.top5)}},
       now_ms);
  return *second_answer_view();
}

SecondaryRevealView Session::submit_secondary_prediction(bool will_be_correct, int confidence, int64_t now_ms) {
  require_idle_trial(Phase::AwaitSecondaryPrediction, "secondary prediction");
  check_likert(confidence, "confidence");
  emit(EventKind::SecondaryPrediction, {{"will_be_correct", will_be_correct}, {"confidence", confidence}}, now_ms);
  const auto& t = trial();
  const auto& q = question_at(t.question);
  emit(EventKind::Reveal,
       {{"stage", "secondary"},
        {"ground_truth", q.answer},
        {"answer", t.second->top_answer()},
        {"system_correct", t.second->top_answer() == q.answer},
        {"system_confidence", t.second->confidence},
        {"prediction_correct", t.secondary->correct},
        {"top5", top5_json(t.second->top5)}},
       now_ms);
  SecondaryRevealView v;
  v.trial_index = t.index;
  v.ground_truth = q.answer;
  v.answer = t.second->top_answer();
  v.system_correct = v.answer == q.answer;
  v.will_be_correct = t.secondary->will_be_correct;
  v.user_confidence = t.secondary->confidence;
  v.prediction_correct = t.secondary->correct;
  return v;
}

TrialView Session::trial_view() const {
  if (!state_.trial) fail(ErrorCode::PhaseError, "no trial has been started");
  const auto& t = *state_.trial;
  TrialView v;
  v.session_id = state_.id;
  v.trial_index = t.index;
  v.total_trials = state_.total_trials;
  v.phase = state_.phase;
  v.block = t.block;
  v.block_ordinal = t.block_ordinal;
  v.practice = t.practice;
  v.explanation = t.explanation;
  v.active = t.active;
  v.question = &question_at(t.question);
  v.scene = &ctx_->dataset->scene_for(*v.question);
  v.bundle = t.bundle;
  return v;
}

RevealView Session::reveal_view() const {
  if (!state_.trial || !state_.trial->prediction || state_.phase == Phase::Reveal)
    fail(ErrorCode::PhaseError, "nothing revealed yet in phase " + std::string(phase_name(state_.phase)));
  const auto& t = *state_.trial;
  const auto& q = question_at(t.question);
  RevealView v;
  v.trial_index = t.index;
  v.ground_truth = q.answer;
  v.answer = t.first.top_answer();
  v.top5 = t.first.top5;
  v.system_confidence = t.first.confidence;
  v.system_correct = v.answer == q.answer;
  v.will_be_correct = t.prediction->will_be_correct;
  v.user_confidence = t.prediction->confidence;
  v.prediction_correct = t.prediction->correct;
  v.next_phase = state_.phase;
  return v;
}

std::optional<SecondAnswerView> Session::second_answer_view() const {
  if (!state_.trial || !state_.trial->second || state_.expect == EventKind::SecondAnswer) return std::nullopt;
  const auto& t = *state_.trial;
  SecondAnswerView v;
  v.trial_index = t.index;
  v.answer = t.second->top_answer();
  v.top5 = t.second->top5;
  v.system_confidence = t.second->confidence;
  v.attention = t.second->attention;
  v.goal = t.goal;
  return v;
}

namespace {

[[noreturn]] void replay_fail(const EventRecord& e, const std::string& msg) {
  fail(ErrorCode::ReplayError,
       "event " + std::to_string(e.seq) + " (" + std::string(event_kind_name(e.kind)) + "): " + msg);
}

}  // namespace

void Session::apply(const EventRecord& e) {
  auto bad = [&](const std::string& m) { replay_fail(e, m); };
  if (e.seq != state_.next_seq) bad("expected seq " + std::to_string(state_.next_seq));
  if (state_.phase == Phase::Complete) bad("session already complete");
  if (!state_.started && e.kind != EventKind::SessionStart) bad("log must begin with session_start");
  if (state_.started) {
    if (e.session_id != state_.id) bad("session id '" + e.session_id + "' differs from '" + state_.id + "'");
    if (e.timestamp < state_.last_ms) bad("timestamp goes backwards");
  }
  if (state_.expect && e.kind != *state_.expect)
    bad("expected " + std::string(event_kind_name(*state_.expect)));

  const auto& p = e.payload;
  const int likert = state_.config.likert_points;
  auto require_phase = [&](Phase ph) {
    if (state_.phase != ph) bad("not allowed in phase " + std::string(phase_name(state_.phase)));
  };
  auto trial_scoped = [&] {
    if (!state_.trial || e.trial_index != state_.trial->index) bad("trial index mismatch");
    if (e.practice != state_.trial->practice) bad("practice flag mismatch");
  };
  auto likert_value = [&](const char* key) {
    const int v = p.at(key).get<int>();
    if (v < 1 || v > likert) bad(std::string(key) + " out of range");
    return v;
  };

  try {
    switch (e.kind) {
      case EventKind::SessionStart: {
        if (state_.started) bad("session already started");
        if (e.session_id.empty()) bad("empty session id");
        if (e.trial_index != 0 || e.practice) bad("session_start must have trial_index 0");
        SessionConfig cfg;
        try {
          cfg = SessionConfig::from_json(p.at("config"));
        } catch (const Error& ex) {
          bad(ex.what());
        }
        if (cfg.dataset_id != ctx_->dataset_id) bad("log was recorded against dataset " + cfg.dataset_id);
        const int n_questions = static_cast<int>(ctx_->dataset->questions.size());
        const int total = cfg.max_trials > 0 ? std::min(cfg.max_trials, n_questions) : n_questions;
        std::vector<size_t> order(ctx_->dataset->questions.size());
        std::iota(order.begin(), order.end(), size_t{0});
        SplitMix64 rng(mix_seed(cfg.seed, 0x0bde5u));
        shuffle_in_place(order, rng);
        order.resize(static_cast<size_t>(total));

        state_.id = e.session_id;
        state_.config = cfg;
        state_.started = true;
        state_.phase = Phase::TrialDone;
        state_.total_trials = total;
        state_.question_order = std::move(order);
        state_.schedule = block_schedule(cfg, total);
        state_.start_ms = e.timestamp;
        group_ = group_spec(cfg.group);
        break;
      }
      case EventKind::TrialStart: {
        require_phase(Phase::TrialDone);
        if (state_.cursor >= state_.total_trials) bad("no trials left");
        const int idx = state_.cursor + 1;
        if (e.trial_index != idx) bad("trial index " + std::to_string(e.trial_index) + ", expected " + std::to_string(idx));
        const size_t qi = state_.question_order[static_cast<size_t>(state_.cursor)];
        const auto& q = question_at(qi);
        if (p.at("question_id").get<std::string>() != q.id) bad("question " + q.id + " expected");
        const BlockDescriptor* block = nullptr;
        for (const auto& b : state_.schedule)
          if (idx >= b.first_trial && idx < b.first_trial + b.size) block = &b;
        if (!block) bad("trial outside the block schedule");
        const bool practice = block->kind == BlockKind::Practice;
        const bool explanation =
            block->kind == BlockKind::Explanation || (practice && group_.has_explanations());
        const bool active = explanation && group_.active_loop;
        if (e.practice != practice) bad("practice flag mismatch");
        if (p.at("block").get<std::string>() != block_kind_name(block->kind) ||
            p.at("block_ordinal").get<int>() != block->ordinal || p.at("explanation").get<bool>() != explanation ||
            p.at("active").get<bool>() != active)
          bad("block fields disagree with the schedule");

        TrialState t;
        t.index = idx;
        t.question = qi;
        t.block = block->kind;
        t.block_ordinal = block->ordinal;
        t.practice = practice;
        t.explanation = explanation;
        t.active = active;
        t.first = ctx_->agent.answer(q, ctx_->dataset->scene_for(q));
        state_.trial = std::move(t);
        state_.cursor = idx;
        state_.phase = explanation ? Phase::AwaitHelpfulness : Phase::AwaitPrediction;
        if (explanation) state_.expect = EventKind::ExplanationsShown;
        break;
      }
      case EventKind::ExplanationsShown: {
        trial_scoped();
        require_phase(Phase::AwaitHelpfulness);
        if (state_.trial->bundle) bad("explanations already shown");
        if (p.at("modes").get<std::vector<std::string>>() != mode_names(group_.modes)) bad("mode set mismatch");
        const auto& q = question_at(state_.trial->question);
        state_.trial->bundle = build_bundle(state_.trial->first, ctx_->dataset->scene_for(q), q, group_.modes,
                                            ctx_->explain);
        state_.expect.reset();
        break;
      }
      case EventKind::Helpfulness: {
        trial_scoped();
        require_phase(Phase::AwaitHelpfulness);
        std::map<Mode, int> ratings;
        const auto& r = p.at("ratings");
        if (!r.is_object()) bad("ratings must be an object");
        for (auto it = r.begin(); it != r.end(); ++it) {
          Mode m;
          try {
            m = parse_mode(it.key());
          } catch (const Error&) {
            bad("unknown mode '" + it.key() + "'");
          }
          if (!group_.modes.count(m)) bad("mode '" + it.key() + "' not shown");
          const int v = it.value().get<int>();
          if (v < 1 || v > likert) bad("rating out of range");
          ratings[m] = v;
        }
        if (ratings.size() != group_.modes.size()) bad("ratings must cover every shown mode");
        state_.trial->helpfulness = std::move(ratings);
        state_.phase = Phase::AwaitPrediction;
        break;
      }
      case EventKind::Prediction: {
        trial_scoped();
        require_phase(Phase::AwaitPrediction);
        Prediction pr;
        pr.will_be_correct = p.at("will_be_correct").get<bool>();
        pr.confidence = likert_value("confidence");
        pr.correct = pr.will_be_correct == state_.trial->system_correct(*ctx_->dataset);
        state_.trial->prediction = pr;
        state_.phase = Phase::Reveal;
        state_.expect = EventKind::Reveal;
        break;
      }
      case EventKind::Reveal: {
        trial_scoped();
        const auto stage = p.at("stage").get<std::string>();
        const auto& t = *state_.trial;
        const auto& q = question_at(t.question);
        if (stage == "primary") {
          require_phase(Phase::Reveal);
          if (p.at("answer").get<std::string>() != t.first.top_answer() ||
              p.at("ground_truth").get<std::string>() != q.answer ||
              p.at("prediction_correct").get<bool>() != t.prediction->correct ||
              p.at("system_correct").get<bool>() != t.system_correct(*ctx_->dataset))
            bad("reveal disagrees with the recomputed trial");
          state_.expect.reset();
          if (!t.explanation) {
            state_.phase = Phase::TrialDone;
            state_.expect = EventKind::TrialEnd;
          } else {
            state_.phase = t.active ? Phase::AwaitUserAttention : Phase::AwaitReliance;
          }
        } else if (stage == "secondary") {
          require_phase(Phase::SecondaryReveal);
          if (p.at("answer").get<std::string>() != t.second->top_answer() ||
              p.at("prediction_correct").get<bool>() != t.secondary->correct)
            bad("secondary reveal disagrees with the recomputed trial");
          state_.expect.reset();
          state_.phase = Phase::AwaitReliance;
        } else {
          bad("unknown reveal stage '" + stage + "'");
        }
        break;
      }
      case EventKind::Reliance: {
        trial_scoped();
        require_phase(Phase::AwaitReliance);
        state_.trial->reliance = likert_value("reliance");
        state_.phase = Phase::TrialDone;
        state_.expect = EventKind::TrialEnd;
        break;
      }
      case EventKind::UserAttention: {
        trial_scoped();
        require_phase(Phase::AwaitUserAttention);
        if (state_.trial->user_map) bad("attention already submitted");
        AttentionMap m{p.at("grid").get<int>(), p.at("map").get<std::vector<double>>(), MapKind::User};
        try {
          m.validate_user(ctx_->agent.config().grid);
        } catch (const Error& ex) {
          bad(ex.what());
        }
        const std::string goal = state_.trial->system_correct(*ctx_->dataset) ? "different" : "correct";
        if (p.at("goal").get<std::string>() != goal) bad("goal mismatch");
        const auto& q = question_at(state_.trial->question);
        auto second = ctx_->agent.answer(q, ctx_->dataset->scene_for(q), &m);
        state_.trial->user_map = std::move(m);
        state_.trial->goal = goal;
        state_.trial->second = std::move(second);
        state_.expect = EventKind::SecondAnswer;
        break;
      }
      case EventKind::SecondAnswer: {
        trial_scoped();
        require_phase(Phase::AwaitUserAttention);
        if (p.at("answer").get<std::string>() != state_.trial->second->top_answer())
          bad("second answer disagrees with the recomputed answer");
        state_.expect.reset();
        state_.phase = Phase::AwaitSecondaryPrediction;
        break;
      }
      case EventKind::SecondaryPrediction: {
        trial_scoped();
        require_phase(Phase::AwaitSecondaryPrediction);
        Prediction pr;
        pr.will_be_correct = p.at("will_be_correct").get<bool>();
        pr.confidence = likert_value("confidence");
        const auto& q = question_at(state_.trial->question);
        pr.correct = pr.will_be_correct == (state_.trial->second->top_answer() == q.answer);
        state_.trial->secondary = pr;
        state_.phase = Phase::SecondaryReveal;
        state_.expect = EventKind::Reveal;
        break;
      }
      case EventKind::TrialEnd: {
        trial_scoped();
        if (state_.expect != EventKind::TrialEnd) bad("trial is not finished");
        state_.expect.reset();
        break;
      }
      case EventKind::SessionEnd: {
        require_phase(Phase::TrialDone);
        if (e.trial_index != state_.cursor || e.practice) bad("session_end envelope mismatch");
        const auto reason = p.at("reason").get<std::string>();
        if (reason == "finished") {
          if (state_.cursor < state_.total_trials) bad("trials remain");
        } else if (reason == "time_limit") {
          if (e.timestamp - state_.start_ms < state_.config.time_limit_s * 1000) bad("time limit not reached");
        } else {
          bad("unknown end reason '" + reason + "'");
        }
        state_.phase = Phase::Complete;
        state_.end_reason = reason;
        break;
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    bad(std::string("malformed payload: ") + ex.what());
  }
  state_.last_ms = e.timestamp;
  ++state_.next_seq;
  events_.push_back(e);
}

Session replay(std::span<const EventRecord> events, std::shared_ptr<const StudyContext> ctx) {
  Session s(std::move(ctx));
  for (const auto& e : events) s.apply(e);
  return s;
}

}  // namespace xvqa
