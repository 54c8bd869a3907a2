#include "xvqa/explain.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "xvqa/error.hpp"
#include "xvqa/util.hpp"

namespace xvqa {

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::Spatial: return "spatial";
    case Mode::Active: return "active";
    case Mode::Boxes: return "boxes";
    case Mode::Graph: return "graph";
    case Mode::Object: return "object";
    case Mode::Text: return "text";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  for (auto m : {Mode::Spatial, Mode::Active, Mode::Boxes, Mode::Graph, Mode::Object, Mode::Text})
    if (mode_name(m) == name) return m;
  fail(ErrorCode::UnknownMode, "unknown explanation mode '" + std::string(name) + "'");
}

std::vector<std::string> mode_names(const ModeSet& modes) {
  std::vector<std::string> out;
  for (auto m : modes) out.emplace_back(mode_name(m));
  return out;
}

void ExplainConfig::validate() const {
  if (top_k < 1) fail(ErrorCode::ConfigError, "explain config: top_k must be >= 1");
  if (text_phrases < 1) fail(ErrorCode::ConfigError, "explain config: text_phrases must be >= 1");
  if (heatmap_max_side < 1) fail(ErrorCode::ConfigError, "explain config: heatmap_max_side must be >= 1");
}

Heatmap spatial_heatmap(const AttentionMap& att, int out_width, int out_height) {
  Heatmap hm{out_width, out_height, std::vector<double>(static_cast<size_t>(out_width) * out_height)};
  const int g = att.grid;
  auto axis = [g](int o, int n) {
    double src = (o + 0.5) * g / n - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(g - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, g - 1);
    return std::tuple{i0, i1, src - i0};
  };
  double mx = 0;
  for (int y = 0; y < out_height; ++y) {
    const auto [r0, r1, fy] = axis(y, out_height);
    for (int x = 0; x < out_width; ++x) {
      const auto [c0, c1, fx] = axis(x, out_width);
      const double top = att.at(r0, c0) * (1 - fx) + att.at(r0, c1) * fx;
      const double bottom = att.at(r1, c0) * (1 - fx) + att.at(r1, c1) * fx;
      const double v = top * (1 - fy) + bottom * fy;
      hm.values[static_cast<size_t>(y) * out_width + x] = v;
      mx = std::max(mx, v);
    }
  }
  if (mx > 0) {
    for (auto& v : hm.values) v /= mx;
  } else {
    std::fill(hm.values.begin(), hm.values.end(), 1.0);
  }
  return hm;
}

Heatmap spatial_heatmap(const AttentionMap& att, const Scene& scene, const ExplainConfig& cfg) {
  const double scale = static_cast<double>(cfg.heatmap_max_side) / std::max(scene.width, scene.height);
  const int w = std::max(1, static_cast<int>(std::lround(scene.width * scale)));
  const int h = std::max(1, static_cast<int>(std::lround(scene.height * scale)));
  return spatial_heatmap(att, w, h);
}

namespace {

struct Ranked {
  std::string id;
  double score;
  double area;
  size_t index;
};

void rank_desc(std::vector<Ranked>& v) {
  std::sort(v.begin(), v.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.area != b.area) return a.area < b.area;
    return a.id < b.id;
  });
}

}  // namespace

std::vector<BoxScore> box_scores(const AttentionMap& att, const Scene& scene, const ExplainConfig& cfg) {
  std::vector<Ranked> r;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    r.push_back({o.id, box_mean_attention(att, o.box, scene.width, scene.height), o.box.area(), i});
  }
  rank_desc(r);
  std::vector<BoxScore> out;
  for (size_t i = 0; i < r.size() && static_cast<int>(i) < cfg.top_k; ++i)
    out.push_back({r[i].id, r[i].score, static_cast<int>(i) + 1});
  return out;
}

FilteredGraph filter_scene_graph(const Scene& scene, std::span<const BoxScore> scores) {
  std::set<std::string> kept;
  for (const auto& s : scores) kept.insert(s.object_id);
  FilteredGraph g;
  for (const auto& o : scene.objects) {
    if (!kept.count(o.id)) continue;
    g.nodes.push_back(o.id);
    auto it = scene.attributes.find(o.id);
    if (it != scene.attributes.end()) g.attributes.emplace(o.id, it->second);
  }
  for (const auto& rel : scene.relations)
    if (kept.count(rel.subject) && kept.count(rel.object)) g.edges.push_back(rel);
  return g;
}

double mask_mean_attention(const AttentionMap& att, const Mask& mask, int width, int height) {
  const int g = att.grid;
  std::vector<int> col_cell(static_cast<size_t>(width)), row_cell(static_cast<size_t>(height));
  for (int x = 0; x < width; ++x)
    col_cell[static_cast<size_t>(x)] = std::min(g - 1, static_cast<int>((x + 0.5) * g / width));
  for (int y = 0; y < height; ++y)
    row_cell[static_cast<size_t>(y)] = std::min(g - 1, static_cast<int>((y + 0.5) * g / height));
  const uint64_t total = static_cast<uint64_t>(width) * static_cast<uint64_t>(height);
  double sum = 0;
  uint64_t count = 0, pos = 0;
  for (size_t i = 0; i < mask.runs.size() && pos < total; ++i) {
    const uint64_t end = std::min<uint64_t>(total, pos + mask.runs[i]);
    if (i % 2 == 1) {
      for (uint64_t p = pos; p < end; ++p) {
        const auto y = static_cast<size_t>(p / static_cast<uint64_t>(width));
        const auto x = static_cast<size_t>(p % static_cast<uint64_t>(width));
        sum += att.at(row_cell[y], col_cell[x]);
        ++count;
      }
    }
    pos = end;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

std::vector<ObjectWeight> object_attention(const AttentionMap& att, const Scene& scene, const ExplainConfig& cfg) {
  std::vector<Ranked> r;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    const double w = o.mask ? mask_mean_attention(att, *o.mask, scene.width, scene.height)
                            : box_mean_attention(att, o.box, scene.width, scene.height);
    r.push_back({o.id, w, o.box.area(), i});
  }
  rank_desc(r);
  std::vector<ObjectWeight> out;
  for (size_t i = 0; i < r.size() && static_cast<int>(i) < cfg.top_k; ++i)
    out.push_back({r[i].id, r[i].score, static_cast<int>(i) + 1});
  return out;
}

std::vector<std::string> textual_explanation(const AttentionMap& att, const Scene& scene, std::string_view answer,
                                             const ExplainConfig& cfg) {
  std::vector<Ranked> r;
  for (size_t i = 0; i < scene.regions.size(); ++i) {
    const auto& g = scene.regions[i];
    r.push_back({g.id, box_mean_attention(att, g.box, scene.width, scene.height), g.box.area(), i});
  }
  rank_desc(r);
  const auto pool = std::min(r.size(), static_cast<size_t>(2 * cfg.text_phrases));
  r.resize(pool);
  std::stable_partition(r.begin(), r.end(), [&](const Ranked& x) {
    const auto toks = tokenize(scene.regions[x.index].phrase);
    return std::find(toks.begin(), toks.end(), answer) != toks.end();
  });
  std::vector<std::string> out;
  for (size_t i = 0; i < r.size() && static_cast<int>(i) < cfg.text_phrases; ++i)
    out.push_back(scene.regions[r[i].index].phrase);
  return out;
}

ExplanationBundle build_bundle(const AgentOutput& out, const Scene& scene, const Question& question,
                               const ModeSet& modes, const ExplainConfig& cfg) {
  if (question.scene_id != scene.id) fail(ErrorCode::ReferenceError, "question does not belong to scene " + scene.id);
  ExplanationBundle b;
  b.modes = modes;
  const auto& att = out.attention;
  if (modes.count(Mode::Spatial) || modes.count(Mode::Active)) b.heatmap = spatial_heatmap(att, scene, cfg);
  b.active = modes.count(Mode::Active) > 0;
  if (modes.count(Mode::Boxes) || modes.count(Mode::Graph)) {
    auto scores = box_scores(att, scene, cfg);
    if (modes.count(Mode::Graph)) b.graph = filter_scene_graph(scene, scores);
    if (modes.count(Mode::Boxes)) b.boxes = std::move(scores);
  }
  if (modes.count(Mode::Object)) b.objects = object_attention(att, scene, cfg);
  if (modes.count(Mode::Text)) b.text = textual_explanation(att, scene, out.top_answer(), cfg);
  return b;
}

namespace {

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x, b.y, b.w, b.h}); }

}  // namespace

nlohmann::json to_json(const ExplanationBundle& b, const Scene& scene) {
  using nlohmann::json;
  json j;
  j["modes"] = mode_names(b.modes);
  j["active"] = b.active;
  if (b.heatmap) {
    std::vector<uint8_t> bytes;
    bytes.reserve(b.heatmap->values.size() * 2);
    for (double v : b.heatmap->values) {
      const uint16_t h = float_to_half(static_cast<float>(v));
      bytes.push_back(static_cast<uint8_t>(h & 0xff));
      bytes.push_back(static_cast<uint8_t>(h >> 8));
    }
    j["heatmap"] = {{"width", b.heatmap->width},
                    {"height", b.heatmap->height},
                    {"dtype", "float16-le"},
                    {"order", "row-major"},
                    {"data", base64_encode(bytes)}};
  }
  if (b.boxes) {
    json arr = json::array();
    for (const auto& s : *b.boxes) {
      const auto* o = scene.find_object(s.object_id);
      arr.push_back({{"object", s.object_id},
                     {"label", o ? o->label : ""},
                     {"score", s.score},
                     {"rank", s.rank},
                     {"box", o ? box_json(o->box) : json()}});
    }
    j["boxes"] = std::move(arr);
  }
  if (b.graph) {
    json nodes = json::array();
    for (const auto& id : b.graph->nodes) {
      const auto* o = scene.find_object(id);
      nodes.push_back({{"id", id}, {"label", o ? o->label : ""}});
    }
    json edges = json::array();
    for (const auto& e : b.graph->edges)
      edges.push_back({{"subject", e.subject}, {"predicate", e.predicate}, {"object", e.object}});
    j["graph"] = {{"nodes", nodes}, {"edges", edges}, {"attributes", b.graph->attributes}};
  }
  if (b.objects) {
    json arr = json::array();
    for (const auto& w : *b.objects) {
      const auto* o = scene.find_object(w.object_id);
      json mask;
      if (o && o->mask) mask = {{"rle", o->mask->runs}, {"order", "row-major"}};
      arr.push_back({{"object", w.object_id},
                     {"label", o ? o->label : ""},
                     {"weight", w.weight},
                     {"rank", w.rank},
                     {"mask", mask},
                     {"box", o ? box_json(o->box) : json()}});
    }
    j["objects"] = std::move(arr);
  }
  if (b.text) j["text"] = *b.text;
  return j;
}

}  // namespace xvqa
