#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xvqa/agent.hpp"
#include "xvqa/scene.hpp"

namespace xvqa {

enum class Mode { Spatial, Active, Boxes, Graph, Object, Text };
using ModeSet = std::set<Mode>;

std::string_view mode_name(Mode m);
// Throws UnknownMode.
Mode parse_mode(std::string_view name);
std::vector<std::string> mode_names(const ModeSet& modes);

struct ExplainConfig {
  int top_k = 5;
  int text_phrases = 1;
  // Longest side of the heatmap raster; the scene aspect ratio is kept.
  int heatmap_max_side = 224;

  void validate() const;
  bool operator==(const ExplainConfig&) const = default;
};

struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, in [0, 1]

  double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  bool operator==(const Heatmap&) const = default;
};

struct BoxScore {
  std::string object_id;
  double score = 0;
  int rank = 0;

  bool operator==(const BoxScore&) const = default;
};

struct FilteredGraph {
  std::vector<std::string> nodes;
  std::vector<RelationAnn> edges;
  std::map<std::string, std::vector<std::string>> attributes;

  bool operator==(const FilteredGraph&) const = default;
};

struct ObjectWeight {
  std::string object_id;
  double weight = 0;
  int rank = 0;

  bool operator==(const ObjectWeight&) const = default;
};

struct ExplanationBundle {
  ModeSet modes;
  std::optional<Heatmap> heatmap;
  std::optional<std::vector<BoxScore>> boxes;
  std::optional<FilteredGraph> graph;
  std::optional<std::vector<ObjectWeight>> objects;
  std::optional<std::vector<std::string>> text;
  bool active = false;

  bool empty() const { return modes.empty(); }
  bool operator==(const ExplanationBundle&) const = default;
};

// Half-pixel bilinear upsampling with edge clamping, then max-normalized.
// A constant map normalizes to all ones.
Heatmap spatial_heatmap(const AttentionMap& att, int out_width, int out_height);
Heatmap spatial_heatmap(const AttentionMap& att, const Scene& scene, const ExplainConfig& cfg);

// Mean attention per object box, top K. Ties: smaller box area, then id.
std::vector<BoxScore> box_scores(const AttentionMap& att, const Scene& scene, const ExplainConfig& cfg);

// Keeps the scored objects, relations whose endpoints are both kept, and
// the attributes of kept objects, in input order.
FilteredGraph filter_scene_graph(const Scene& scene, std::span<const BoxScore> scores);

// Mean attention over each object's mask (its box when maskless).
std::vector<ObjectWeight> object_attention(const AttentionMap& att, const Scene& scene, const ExplainConfig& cfg);

// Mean attention over the mask pixels, pixel centers mapped to cells.
double mask_mean_attention(const AttentionMap& att, const Mask& mask, int width, int height);

std::vector<std::string> textual_explanation(const AttentionMap& att, const Scene& scene, std::string_view answer,
                                             const ExplainConfig& cfg);

ExplanationBundle build_bundle(const AgentOutput& out, const Scene& scene, const Question& question,
                               const ModeSet& modes, const ExplainConfig& cfg);

nlohmann::json to_json(const ExplanationBundle& bundle, const Scene& scene);

}  // namespace xvqa
