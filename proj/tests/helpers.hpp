#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xvqa/agent.hpp"
#include "xvqa/protocol.hpp"
#include "xvqa/scene.hpp"
#include "xvqa/service.hpp"

namespace xvqa::testing {

inline ObjectAnn object(std::string id, std::string label, Box box) {
  ObjectAnn o;
  o.id = std::move(id);
  o.label = std::move(label);
  o.box = box;
  return o;
}

inline Question question(std::string id, std::string scene_id, std::vector<std::string> text, std::string answer,
                         QuestionType t = QuestionType::What) {
  Question q;
  q.id = std::move(id);
  q.scene_id = std::move(scene_id);
  q.text = std::move(text);
  q.answer = std::move(answer);
  q.qtype = t;
  return q;
}

// 224x224 scene with a red ball and, optionally, a blue cup.
inline Scene ball_scene(bool with_cup = false) {
  Scene s;
  s.id = "s1";
  s.width = 224;
  s.height = 224;
  s.objects.push_back(object("o1", "ball", {32, 32, 64, 64}));
  s.attributes["o1"] = {"red"};
  s.regions.push_back({"r1", {32, 32, 64, 64}, "the red ball"});
  if (with_cup) {
    s.objects.push_back(object("o2", "cup", {144, 128, 48, 64}));
    s.attributes["o2"] = {"blue"};
    s.regions.push_back({"r2", {144, 128, 48, 64}, "the blue cup"});
  }
  return s;
}

inline std::vector<std::string> small_vocab() {
  return {"red", "blue", "green", "ball", "cup", "dog", "yellow", "box"};
}

inline Dataset synthetic(int scenes = 50, uint64_t seed = 7) {
  auto sc = SynthConfig::defaults();
  sc.scenes = scenes;
  return generate_synthetic(sc, seed);
}

inline std::shared_ptr<const StudyContext> study_context(int scenes = 50, uint64_t seed = 7) {
  return std::make_shared<const StudyContext>(synthetic(scenes, seed), study_agent_config(), ExplainConfig{});
}

}  // namespace xvqa::testing
