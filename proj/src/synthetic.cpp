#include <algorithm>
#include <cmath>
#include <set>

#include "xvqa/error.hpp"
#include "xvqa/scene.hpp"
#include "xvqa/util.hpp"

namespace xvqa {

SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  c.colors = {"red", "blue", "green", "yellow", "white", "black", "orange", "purple", "pink", "brown", "gray", "silver"};
  c.labels = {"ball",  "box",   "cup",    "dog",    "cat",   "car",    "tree",   "chair",  "book",  "lamp",  "table",
              "bottle", "plate", "vase",   "clock",  "phone", "bag",    "hat",    "shoe",   "bench", "bird",  "horse",
              "boat",  "kite",  "bus",    "sign",   "door",  "window", "fence",  "plant",  "apple", "banana", "cake",
              "pizza", "bowl",  "knife",  "spoon",  "fork",  "bed",    "couch",  "train",  "truck", "bike",  "sheep",
              "cow",   "zebra", "giraffe", "umbrella", "laptop", "mouse", "remote", "pillow"};
  c.predicates = {"on", "near", "behind", "under", "beside", "above"};
  return c;
}

void SynthConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::ConfigError, "synthetic config: " + m); };
  if (scenes < 1) bad("scenes must be >= 1");
  if (min_objects < 1 || max_objects < min_objects) bad("object count range invalid");
  if (questions_per_scene < 1) bad("questions_per_scene must be >= 1");
  if (width < 1 || height < 1) bad("image size must be positive");
  if (min_box_side < 1 || max_box_side < min_box_side || max_box_side > std::min(width, height))
    bad("box side range invalid");
  if (relation_probability < 0 || relation_probability > 1) bad("relation_probability outside [0,1]");
  if (labels.empty()) bad("empty label vocabulary");
  if (colors.empty()) bad("empty color vocabulary");
  if (predicates.empty()) bad("empty predicate vocabulary");
  if (static_cast<int>(std::set<std::string>(labels.begin(), labels.end()).size()) < max_objects)
    bad("need at least max_objects distinct labels");
}

namespace {

Mask ellipse_mask(const Box& b, int width, int height) {
  std::vector<uint8_t> pixels(static_cast<size_t>(width) * static_cast<size_t>(height), 0);
  const double cx = b.x + b.w / 2, cy = b.y + b.h / 2, rx = b.w / 2, ry = b.h / 2;
  for (int py = static_cast<int>(b.y); py < static_cast<int>(std::ceil(b.y + b.h)); ++py) {
    for (int px = static_cast<int>(b.x); px < static_cast<int>(std::ceil(b.x + b.w)); ++px) {
      const double dx = (px + 0.5 - cx) / rx, dy = (py + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) pixels[static_cast<size_t>(py) * width + px] = 1;
    }
  }
  return Mask::encode(pixels);
}

template <typename T>
const T& pick(const std::vector<T>& v, SplitMix64& rng) {
  return v[static_cast<size_t>(rng.below(v.size()))];
}

std::string padded(int n, size_t width) {
  std::string s = std::to_string(n);
  return s.size() >= width ? s : std::string(width - s.size(), '0') + s;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg, uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(mix_seed(seed, 0x5ce7e5ULL));
  Dataset d;

  std::set<std::string> seen;
  for (const auto* list : {&cfg.colors, &cfg.labels, &cfg.extra_answers}) {
    for (const auto& t : *list)
      if (seen.insert(t).second) d.answer_vocab.push_back(t);
  }

  std::vector<std::string> distinct_labels;
  {
    std::set<std::string> s;
    for (const auto& l : cfg.labels)
      if (s.insert(l).second) distinct_labels.push_back(l);
  }

  int qcounter = 0;
  for (int si = 0; si < cfg.scenes; ++si) {
    Scene s;
    s.id = "s" + padded(si + 1, 3);
    s.width = cfg.width;
    s.height = cfg.height;

    const int n = static_cast<int>(rng.between(cfg.min_objects, cfg.max_objects));
    auto labels = distinct_labels;
    shuffle_in_place(labels, rng);
    labels.resize(static_cast<size_t>(n));

    std::vector<std::string> colors;
    for (int i = 0; i < n; ++i) {
      ObjectAnn o;
      o.id = "o" + std::to_string(i + 1);
      o.label = labels[static_cast<size_t>(i)];
      const double w = static_cast<double>(rng.between(cfg.min_box_side, cfg.max_box_side));
      const double h = static_cast<double>(rng.between(cfg.min_box_side, cfg.max_box_side));
      if (i > 0 && rng.uniform() < cfg.relation_probability) {
        // Related objects are placed touching their partner so the relation
        // is visible in the feature grid.
        const auto& partner = s.objects[static_cast<size_t>(rng.below(static_cast<uint64_t>(i)))];
        const double cx = partner.box.x + rng.uniform() * partner.box.w;
        const double cy = partner.box.y + rng.uniform() * partner.box.h;
        o.box.x = std::clamp(std::floor(cx - w / 2), 0.0, cfg.width - w);
        o.box.y = std::clamp(std::floor(cy - h / 2), 0.0, cfg.height - h);
        s.relations.push_back(RelationAnn{o.id, pick(cfg.predicates, rng), partner.id});
      } else {
        o.box.x = static_cast<double>(rng.between(0, cfg.width - static_cast<int64_t>(w)));
        o.box.y = static_cast<double>(rng.between(0, cfg.height - static_cast<int64_t>(h)));
      }
      o.box.w = w;
      o.box.h = h;
      if (cfg.masks) o.mask = ellipse_mask(o.box, cfg.width, cfg.height);
      colors.push_back(pick(cfg.colors, rng));
      s.attributes[o.id] = {colors.back()};
      s.regions.push_back(RegionAnn{"r" + std::to_string(i + 1), o.box, "the " + colors.back() + " " + o.label});
      s.objects.push_back(std::move(o));
    }

    struct Candidate {
      std::vector<std::string> text;
      std::string answer;
    };
    std::vector<Candidate> cands;
    for (size_t i = 0; i < s.objects.size(); ++i)
      cands.push_back({{"what", "color", "is", "the", s.objects[i].label}, colors[i]});
    for (const auto& rel : s.relations) {
      cands.push_back({{"what", "is", "the", s.find_object(rel.subject)->label, rel.predicate},
                       s.find_object(rel.object)->label});
    }
    shuffle_in_place(cands, rng);
    if (static_cast<int>(cands.size()) > cfg.questions_per_scene) cands.resize(static_cast<size_t>(cfg.questions_per_scene));
    for (auto& c : cands) {
      Question q;
      q.id = "q" + padded(++qcounter, 4);
      q.scene_id = s.id;
      q.text = std::move(c.text);
      q.answer = std::move(c.answer);
      q.qtype = QuestionType::What;
      d.questions.push_back(std::move(q));
    }
    d.scenes.emplace(s.id, std::move(s));
  }
  validate_dataset(d);
  return d;
}

}  // namespace xvqa
