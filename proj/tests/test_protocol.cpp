#include <gtest/gtest.h>

#include <set>

#include "helpers.hpp"
#include "protocol_oracle.hpp"
#include "xvqa/error.hpp"
#include "xvqa/protocol.hpp"

using namespace xvqa;
using namespace xvqa::testing;

namespace {

constexpr int64_t kT0 = 1'700'000'000'000;

const std::shared_ptr<const StudyContext>& ctx() {
  static const auto c = study_context(20, 3);
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

SessionConfig config(GroupTag g, int max_trials = 0, uint64_t seed = 1) {
  SessionConfig c;
  c.group = g;
  c.seed = seed;
  c.max_trials = max_trials;
  return c;
}

std::map<Mode, int> rate_all(const ModeSet& modes, int v = 3) {
  std::map<Mode, int> r;
  for (auto m : modes) r[m] = v;
  return r;
}

// Plays one trial through with fixed answers.
void play_trial(Session& s, int64_t& now) {
  const auto view = s.start_trial(now += 1000);
  ASSERT_TRUE(view);
  if (view->explanation) s.submit_helpfulness(rate_all(s.group().modes), now += 1000);
  const auto rv = s.submit_prediction(true, 4, now += 1000);
  if (rv.next_phase == Phase::AwaitUserAttention) {
    s.submit_user_attention(AttentionMap::filled(s.context().agent.config().grid, 1.0, MapKind::User), now += 1000);
    s.submit_secondary_prediction(false, 2, now += 1000);
  }
  if (s.state().phase == Phase::AwaitReliance) s.submit_reliance(5, now += 1000);
}

std::vector<BlockKind> kinds(const std::vector<BlockDescriptor>& v) {
  std::vector<BlockKind> out;
  for (const auto& b : v) out.push_back(b.kind);
  return out;
}

}  // namespace

TEST(Groups, Specs) {
  EXPECT_TRUE(group_spec(GroupTag::NE).modes.empty());
  EXPECT_EQ(group_spec(GroupTag::SP).modes, ModeSet{Mode::Spatial});
  EXPECT_EQ(group_spec(GroupTag::SE).modes, (ModeSet{Mode::Boxes, Mode::Graph, Mode::Text}));
  EXPECT_EQ(group_spec(GroupTag::OA).modes, ModeSet{Mode::Object});
  EXPECT_EQ(group_spec(GroupTag::AL).modes.size(), 6u);
  EXPECT_TRUE(group_spec(GroupTag::SA).active_loop);
  EXPECT_TRUE(group_spec(GroupTag::AL).active_loop);
  EXPECT_FALSE(group_spec(GroupTag::SP).active_loop);
  for (auto g : {GroupTag::NE, GroupTag::SP, GroupTag::SA, GroupTag::SE, GroupTag::OA, GroupTag::AL})
    EXPECT_EQ(parse_group(group_name(g)), g);
  EXPECT_EQ(code_of([] { parse_group("XX"); }), ErrorCode::ConfigError);
}

TEST(Schedule, ReferenceLayouts) {
  using K = BlockKind;
  EXPECT_EQ(kinds(block_schedule(config(GroupTag::NE), 12)), (std::vector<K>{K::Practice, K::Control, K::Control}));
  const auto sp = block_schedule(config(GroupTag::SP), 22);
  EXPECT_EQ(kinds(sp), (std::vector<K>{K::Practice, K::Explanation, K::Control, K::Explanation, K::Control}));
  EXPECT_EQ(sp[0].size, 2);
  EXPECT_EQ(sp[1].first_trial, 3);
  EXPECT_EQ(sp[3].ordinal, 2);
  EXPECT_EQ(sp[4].first_trial, 18);
  EXPECT_EQ(kinds(block_schedule(config(GroupTag::AL), 2)), (std::vector<K>{K::Practice}));
  const auto partial = block_schedule(config(GroupTag::SE), 10);
  EXPECT_EQ(partial.back().size, 3);
  auto c = config(GroupTag::SP);
  c.explanation_first = false;
  EXPECT_EQ(block_schedule(c, 12)[1].kind, K::Control);
}

TEST(SessionConfig, JsonRoundTripAndValidation) {
  auto c = config(GroupTag::SA, 9, 77);
  c.dataset_id = "abc";
  c.likert_points = 7;
  EXPECT_EQ(SessionConfig::from_json(c.to_json()), c);
  c.time_limit_s = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { SessionConfig::from_json({{"group", "SP"}}); }), ErrorCode::ConfigError);
}

TEST(Context, DropsYesNoAndCounting) {
  Dataset d = synthetic(5, 1);
  d.answer_vocab.push_back("yes");
  d.questions.push_back(question("qyes", d.questions[0].scene_id, {"is", "it"}, "yes", QuestionType::YesNo));
  const StudyContext c(d, study_agent_config(), ExplainConfig{});
  EXPECT_EQ(c.dataset->questions.size(), d.questions.size() - 1);
  EXPECT_EQ(c.dataset_id, dataset_id(*c.dataset));
}

TEST(Session, CreateRejectsForeignDataset) {
  auto c = config(GroupTag::SP);
  c.dataset_id = "0000000000000000";
  EXPECT_EQ(code_of([&] { Session::create(ctx(), "x", c, kT0); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { Session::create(ctx(), "", config(GroupTag::SP), kT0); }), ErrorCode::ConfigError);
}

TEST(Session, ControlTrialHasNoBundleAndSkipsReliance) {
  auto s = Session::create(ctx(), "ne", config(GroupTag::NE), kT0);
  EXPECT_EQ(s.state().total_trials, static_cast<int>(ctx()->dataset->questions.size()));
  const auto v = s.start_trial(kT0 + 1);
  ASSERT_TRUE(v);
  EXPECT_FALSE(v->bundle);
  EXPECT_TRUE(v->practice);
  EXPECT_EQ(v->phase, Phase::AwaitPrediction);
  EXPECT_EQ(code_of([&] { s.submit_helpfulness({}, kT0 + 2); }), ErrorCode::PhaseError);
  const auto rv = s.submit_prediction(true, 5, kT0 + 3);
  EXPECT_EQ(rv.next_phase, Phase::TrialDone);
  EXPECT_EQ(rv.prediction_correct, rv.system_correct);
  EXPECT_EQ(rv.top5.size(), 5u);
  EXPECT_EQ(code_of([&] { s.submit_reliance(3, kT0 + 4); }), ErrorCode::PhaseError);
  EXPECT_EQ(s.events().back().kind, EventKind::TrialEnd);
  EXPECT_TRUE(s.start_trial(kT0 + 5));
}

TEST(Session, ExplanationTrialFlow) {
  auto s = Session::create(ctx(), "sp", config(GroupTag::SP), kT0);
  const auto v = s.start_trial(kT0 + 1);
  ASSERT_TRUE(v && v->bundle);
  EXPECT_TRUE(v->bundle->heatmap);
  EXPECT_EQ(v->phase, Phase::AwaitHelpfulness);
  EXPECT_EQ(code_of([&] { s.submit_prediction(true, 3, kT0 + 2); }), ErrorCode::PhaseError);
  EXPECT_EQ(code_of([&] { s.submit_helpfulness({{Mode::Spatial, 4}, {Mode::Text, 2}}, kT0 + 2); }),
            ErrorCode::RangeError);
  EXPECT_EQ(code_of([&] { s.submit_helpfulness({}, kT0 + 2); }), ErrorCode::RangeError);
  EXPECT_EQ(code_of([&] { s.submit_helpfulness({{Mode::Spatial, 6}}, kT0 + 2); }), ErrorCode::RangeError);
  s.submit_helpfulness({{Mode::Spatial, 4}}, kT0 + 2);
  EXPECT_EQ(code_of([&] { s.submit_prediction(true, 6, kT0 + 3); }), ErrorCode::RangeError);
  const auto rv = s.submit_prediction(false, 2, kT0 + 3);
  EXPECT_EQ(rv.next_phase, Phase::AwaitReliance);
  EXPECT_EQ(code_of([&] { s.start_trial(kT0 + 4); }), ErrorCode::PhaseError);
  EXPECT_EQ(code_of([&] { s.submit_user_attention(AttentionMap::filled(14, 1, MapKind::User), kT0 + 4); }),
            ErrorCode::PhaseError);
  EXPECT_EQ(code_of([&] { s.submit_reliance(0, kT0 + 4); }), ErrorCode::RangeError);
  s.submit_reliance(4, kT0 + 4);
  EXPECT_EQ(s.state().phase, Phase::TrialDone);
}

TEST(Session, AllModesMustBeRated) {
  auto s = Session::create(ctx(), "al", config(GroupTag::AL), kT0);
  s.start_trial(kT0 + 1);
  auto r = rate_all(group_spec(GroupTag::AL).modes);
  r.erase(Mode::Graph);
  EXPECT_EQ(code_of([&] { s.submit_helpfulness(r, kT0 + 2); }), ErrorCode::RangeError);
  r[Mode::Graph] = 1;
  EXPECT_NO_THROW(s.submit_helpfulness(r, kT0 + 2));
}

TEST(Session, PredictionCorrectnessDefinition) {
  // Walk NE trials until both a system-right and a system-wrong trial appear.
  auto s = Session::create(ctx(), "ne", config(GroupTag::NE), kT0);
  int64_t now = kT0;
  bool saw_right = false, saw_wrong = false;
  while (!(saw_right && saw_wrong)) {
    ASSERT_TRUE(s.start_trial(now += 10));
    const auto& t = *s.state().trial;
    const bool right = t.first.top_answer() == ctx()->dataset->questions[t.question].answer;
    const auto rv = s.submit_prediction(true, right ? 5 : 3, now += 10);
    EXPECT_EQ(rv.prediction_correct, right);
    EXPECT_EQ(rv.system_correct, right);
    (right ? saw_right : saw_wrong) = true;
  }
}

TEST(Session, ActiveLoop) {
  auto s = Session::create(ctx(), "sa", config(GroupTag::SA), kT0);
  const auto v = s.start_trial(kT0 + 1);
  ASSERT_TRUE(v && v->active);
  s.submit_helpfulness({{Mode::Spatial, 3}, {Mode::Active, 3}}, kT0 + 2);
  const auto rv = s.submit_prediction(true, 3, kT0 + 3);
  EXPECT_EQ(rv.next_phase, Phase::AwaitUserAttention);
  EXPECT_EQ(code_of([&] { s.submit_reliance(3, kT0 + 4); }), ErrorCode::PhaseError);
  EXPECT_EQ(code_of([&] { s.submit_user_attention(AttentionMap::filled(7, 1, MapKind::User), kT0 + 4); }),
            ErrorCode::ShapeError);
  auto bad = AttentionMap::filled(14, 1, MapKind::User);
  bad.weights[3] = 2;
  EXPECT_EQ(code_of([&] { s.submit_user_attention(bad, kT0 + 4); }), ErrorCode::BoundsError);
  const auto second = s.submit_user_attention(AttentionMap::filled(14, 1, MapKind::User), kT0 + 4);
  // All-ones map reproduces the first answer.
  EXPECT_EQ(second.answer, rv.answer);
  EXPECT_EQ(second.goal, rv.system_correct ? "different" : "correct");
  EXPECT_FALSE(find_answer_leak(nlohmann::json{{"answer_free", to_json(second)["grid"]}}));
  EXPECT_FALSE(to_json(second).contains("system_correct"));
  EXPECT_FALSE(to_json(second).contains("ground_truth"));
  EXPECT_EQ(s.state().phase, Phase::AwaitSecondaryPrediction);
  const auto sr = s.submit_secondary_prediction(true, 4, kT0 + 5);
  EXPECT_EQ(sr.prediction_correct, sr.system_correct);
  EXPECT_EQ(code_of([&] { s.submit_secondary_prediction(true, 4, kT0 + 6); }), ErrorCode::PhaseError);
  EXPECT_EQ(s.state().phase, Phase::AwaitReliance);
  s.submit_reliance(2, kT0 + 6);
  EXPECT_EQ(s.state().phase, Phase::TrialDone);
}

TEST(Session, IsolatingTheAnswerObjectFlipsTheSecondAnswer) {
  // Two balls in separate cells; the ground truth is set to the colour the
  // agent does not pick, then a map isolating that ball must recover it.
  Scene s;
  s.id = "s1";
  s.width = 224;
  s.height = 224;
  s.objects = {object("o1", "ball", {16, 16, 48, 48}), object("o2", "ball", {128, 128, 64, 64})};
  s.attributes = {{"o1", {"red"}}, {"o2", {"blue"}}};
  Dataset d;
  d.scenes.emplace("s1", s);
  d.answer_vocab = small_vocab();
  d.questions = {question("q1", "s1", {"what", "color", "is", "the", "ball"}, "red")};
  const Agent agent(study_agent_config(), d.answer_vocab);
  const auto first = agent.answer(d.questions[0], s).top_answer();
  ASSERT_TRUE(first == "red" || first == "blue");
  const bool target_is_o1 = first == "blue";
  d.questions[0].answer = target_is_o1 ? "red" : "blue";
  const auto& target = s.objects[target_is_o1 ? 0 : 1];

  auto c = std::make_shared<const StudyContext>(d, study_agent_config(), ExplainConfig{});
  SessionConfig cfg = config(GroupTag::SA);
  cfg.practice_trials = 0;
  auto session = Session::create(c, "flip", cfg, kT0);
  ASSERT_TRUE(session.start_trial(kT0 + 1));
  session.submit_helpfulness({{Mode::Spatial, 3}, {Mode::Active, 3}}, kT0 + 2);
  const auto rv = session.submit_prediction(false, 3, kT0 + 3);
  ASSERT_FALSE(rv.system_correct);
  auto m = AttentionMap::filled(14, 0, MapKind::User);
  for (const auto& [cell, frac] : box_to_cells(target.box, 224, 224, 14)) m.weights[static_cast<size_t>(cell)] = 1;
  const auto second = session.submit_user_attention(m, kT0 + 4);
  EXPECT_EQ(second.answer, d.questions[0].answer);
  EXPECT_EQ(second.goal, "correct");

  // Equivalence with a scene holding only the target.
  Scene only = s;
  only.objects = {target};
  only.attributes = {{target.id, s.attributes.at(target.id)}};
  const auto iso = agent.answer(d.questions[0], only);
  for (size_t k = 0; k < iso.distribution.size(); ++k)
    EXPECT_NEAR(session.state().trial->second->distribution[k], iso.distribution[k], 1e-9);
  EXPECT_TRUE(session.submit_secondary_prediction(true, 5, kT0 + 5).prediction_correct);
}

TEST(Session, ActiveMapRejectedOutsideActiveGroups) {
  auto s = Session::create(ctx(), "sp", config(GroupTag::SP), kT0);
  s.start_trial(kT0 + 1);
  s.submit_helpfulness({{Mode::Spatial, 3}}, kT0 + 2);
  s.submit_prediction(true, 3, kT0 + 3);
  EXPECT_EQ(code_of([&] { s.submit_user_attention(AttentionMap::filled(14, 1, MapKind::User), kT0 + 4); }),
            ErrorCode::PhaseError);
}

TEST(Session, RunsToCompletionWithoutRepeats) {
  for (auto g : {GroupTag::NE, GroupTag::SP, GroupTag::SA, GroupTag::AL}) {
    auto s = Session::create(ctx(), "full", config(g, 0, 5), kT0);
    int64_t now = kT0;
    std::set<std::string> seen;
    for (int i = 0; i < s.state().total_trials; ++i) {
      play_trial(s, now);
      const auto& q = ctx()->dataset->questions[s.state().trial->question];
      EXPECT_TRUE(seen.insert(q.id).second) << q.id;
    }
    EXPECT_FALSE(s.start_trial(now += 1));
    EXPECT_TRUE(s.complete());
    EXPECT_EQ(s.state().end_reason, "finished");
    EXPECT_EQ(s.state().cursor, s.state().total_trials);
    EXPECT_EQ(code_of([&] { s.start_trial(now); }), ErrorCode::SessionComplete);
    EXPECT_EQ(code_of([&] { s.submit_prediction(true, 3, now); }), ErrorCode::SessionComplete);
    // Practice flags follow the schedule.
    for (const auto& e : s.events())
      if (e.kind != EventKind::SessionStart && e.kind != EventKind::SessionEnd)
        EXPECT_EQ(e.practice, e.trial_index <= 2);
    // Replay of the full log reproduces the state.
    const auto again = replay(s.events(), ctx());
    EXPECT_TRUE(again.state() == s.state());
  }
}

TEST(Session, ShuffleDependsOnSeedOnly) {
  const auto a = Session::create(ctx(), "a", config(GroupTag::SP, 0, 9), kT0);
  const auto b = Session::create(ctx(), "b", config(GroupTag::NE, 0, 9), kT0 + 5);
  const auto c = Session::create(ctx(), "c", config(GroupTag::SP, 0, 10), kT0);
  EXPECT_EQ(a.state().question_order, b.state().question_order);
  EXPECT_NE(a.state().question_order, c.state().question_order);
  const auto d = Session::create(ctx(), "d", config(GroupTag::SP, 4, 9), kT0);
  EXPECT_EQ(d.state().total_trials, 4);
}

TEST(Session, TimeLimitEndsAtTrialBoundary) {
  auto cfg = config(GroupTag::SP);
  cfg.time_limit_s = 10;
  auto s = Session::create(ctx(), "t", cfg, kT0);
  s.start_trial(kT0 + 1000);
  s.submit_helpfulness({{Mode::Spatial, 2}}, kT0 + 2000);
  // Past the limit, mid-trial operations still complete the trial.
  s.submit_prediction(true, 2, kT0 + 20'000);
  s.submit_reliance(2, kT0 + 21'000);
  EXPECT_FALSE(s.start_trial(kT0 + 22'000));
  EXPECT_EQ(s.state().end_reason, "time_limit");
  EXPECT_EQ(s.events().back().kind, EventKind::SessionEnd);
  EXPECT_EQ(s.events().back().payload["reason"], "time_limit");
}

TEST(Views, PreRevealPayloadsCarryNoAnswerKeys) {
  for (auto g : {GroupTag::NE, GroupTag::SP, GroupTag::SA, GroupTag::SE, GroupTag::OA, GroupTag::AL}) {
    auto s = Session::create(ctx(), "leak", config(g, 6), kT0);
    int64_t now = kT0;
    for (int i = 0; i < 6; ++i) {
      const auto v = s.start_trial(now += 10);
      ASSERT_TRUE(v);
      const auto j = to_json(*v);
      EXPECT_FALSE(find_answer_leak(j)) << *find_answer_leak(j);
      EXPECT_EQ(j.contains("bundle"), v->explanation);
      if (v->explanation) s.submit_helpfulness(rate_all(s.group().modes), now += 10);
      EXPECT_FALSE(find_answer_leak(to_json(s.trial_view())));
      const auto rv = s.submit_prediction(true, 3, now += 10);
      EXPECT_TRUE(find_answer_leak(to_json(rv)));
      if (rv.next_phase == Phase::AwaitUserAttention) {
        s.submit_user_attention(AttentionMap::filled(14, 1, MapKind::User), now += 10);
        s.submit_secondary_prediction(true, 3, now += 10);
      }
      if (s.state().phase == Phase::AwaitReliance) s.submit_reliance(3, now += 10);
    }
  }
  EXPECT_EQ(find_answer_leak(nlohmann::json{{"a", {{"b", nlohmann::json::array({{{"top5", 1}}})}}}}), "top5");
}

TEST(Replay, EmptyLogIsAFreshSession) {
  const auto s = replay({}, ctx());
  EXPECT_FALSE(s.state().started);
  EXPECT_EQ(s.state().phase, Phase::TrialDone);
  EXPECT_TRUE(s.events().empty());
}

TEST(Replay, RejectsGapsReorderingAndTampering) {
  auto s = Session::create(ctx(), "r", config(GroupTag::SP, 3), kT0);
  int64_t now = kT0;
  play_trial(s, now);
  const auto events = s.events();
  auto expect_replay_error = [&](std::vector<EventRecord> ev) {
    EXPECT_EQ(code_of([&] { replay(ev, ctx()); }), ErrorCode::ReplayError);
  };

  auto gap = events;
  gap.erase(gap.begin() + 2);
  expect_replay_error(gap);

  // Reveal before prediction, with sequence numbers rewritten.
  auto swapped = events;
  size_t pi = 0;
  while (swapped[pi].kind != EventKind::Prediction) ++pi;
  std::swap(swapped[pi], swapped[pi + 1]);
  for (size_t i = 0; i < swapped.size(); ++i) swapped[i].seq = i;
  expect_replay_error(swapped);

  auto tampered = events;
  tampered[pi + 1].payload["system_correct"] = !tampered[pi + 1].payload["system_correct"].get<bool>();
  expect_replay_error(tampered);

  auto backwards = events;
  backwards[3].timestamp = kT0 - 1;
  expect_replay_error(backwards);

  auto other = events;
  other[2].session_id = "someone-else";
  expect_replay_error(other);

  auto no_start = events;
  no_start.erase(no_start.begin());
  for (size_t i = 0; i < no_start.size(); ++i) no_start[i].seq = i;
  expect_replay_error(no_start);

  auto bad_payload = events;
  bad_payload[1].payload.erase("question_id");
  expect_replay_error(bad_payload);

  // Any prefix replays.
  for (size_t n = 0; n <= events.size(); ++n)
    EXPECT_NO_THROW(replay(std::span(events).first(n), ctx()));
}

TEST(Replay, ResumedSessionContinuesIdentically) {
  auto live = Session::create(ctx(), "resume", config(GroupTag::AL, 5), kT0);
  int64_t now = kT0;
  play_trial(live, now);
  auto resumed = replay(live.events(), ctx());
  int64_t now2 = now;
  play_trial(live, now);
  play_trial(resumed, now2);
  EXPECT_EQ(live.events(), resumed.events());
}

TEST(Soundness, RandomOperationSequencesMatchOracle) {
  const auto r = run_soundness(ctx(), 200, 99);
  for (const auto& f : r.failures) ADD_FAILURE() << f;
  EXPECT_EQ(r.invalid_accepted, 0);
  EXPECT_EQ(r.valid_rejected, 0);
  EXPECT_EQ(r.bad_args_accepted, 0);
  EXPECT_EQ(r.replay_mismatches, 0);
  EXPECT_GT(r.sessions_completed, 20);
}
