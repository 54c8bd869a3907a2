#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xvqa/scene.hpp"

namespace xvqa {

struct AgentConfig {
  int grid = 14;
  int dim = 32;
  double attention_temperature = 1.0;
  double answer_temperature = 1.0;
  double alpha = 0.1;  // embedding-score weight
  double beta = 1.0;   // grounded-retrieval weight
  uint64_t embedding_seed = 1;

  void validate() const;
  bool operator==(const AgentConfig&) const = default;
};

// G x G x D image features, row-major cells, D contiguous values per cell.
struct FeatureGrid {
  int grid = 0;
  int dim = 0;
  std::vector<double> values;
  std::string scene_id;

  FeatureGrid() = default;
  FeatureGrid(int g, int d, std::string scene)
      : grid(g), dim(d), values(static_cast<size_t>(g) * g * d, 0.0), scene_id(std::move(scene)) {}

  int cells() const { return grid * grid; }
  std::span<double> cell(int index) {
    return {values.data() + static_cast<size_t>(index) * dim, static_cast<size_t>(dim)};
  }
  std::span<const double> cell(int index) const {
    return {values.data() + static_cast<size_t>(index) * dim, static_cast<size_t>(dim)};
  }
  bool operator==(const FeatureGrid&) const = default;
};

enum class MapKind { Model, User };

// Model maps are softmax outputs (sum to 1); user maps hold per-cell
// multipliers in [0, 1].
struct AttentionMap {
  int grid = 0;
  std::vector<double> weights;  // row-major
  MapKind kind = MapKind::Model;

  double at(int row, int col) const { return weights[static_cast<size_t>(row) * grid + col]; }
  static AttentionMap filled(int grid, double value, MapKind kind);
  // Throws BoundsError / ShapeError for a malformed user map.
  void validate_user(int expected_grid) const;

  bool operator==(const AttentionMap&) const = default;
};

struct RankedAnswer {
  std::string answer;
  double probability = 0;

  bool operator==(const RankedAnswer&) const = default;
};

struct AgentOutput {
  std::vector<double> distribution;  // aligned with the answer vocabulary
  std::vector<RankedAnswer> top5;
  AttentionMap attention;
  double confidence = 0;  // 1 = certain, 0 = uniform

  const std::string& top_answer() const { return top5.front().answer; }
  bool operator==(const AgentOutput&) const = default;
};

struct QuestionVec {
  std::vector<double> values;
  std::vector<std::string> tokens;

  bool operator==(const QuestionVec&) const = default;
};

// Unit-norm pseudo-random vector seeded by a hash of the token.
std::vector<double> embed_token(std::string_view token, uint64_t seed, int dim);

QuestionVec encode_question(const Question& q, const AgentConfig& cfg);
FeatureGrid rasterize_scene(const Scene& scene, const AgentConfig& cfg);
AttentionMap compute_attention(const QuestionVec& qv, const FeatureGrid& features, const AgentConfig& cfg);

// Elementwise f'_ij = m_ij * f_ij over every channel. Input is not modified.
FeatureGrid intervene(const AttentionMap& user, const FeatureGrid& features);

// Mean attention over the pixels of `box`, i.e. sum a_ij * overlap_ij / sum
// overlap_ij. `gate`, when given, multiplies each cell's attention first.
double box_mean_attention(const AttentionMap& att, const Box& box, int width, int height,
                          const AttentionMap* gate = nullptr);

// 1 - H(p) / ln|p|. Rejects inputs that do not sum to 1 within 1e-6.
double system_confidence(std::span<const double> p);

// Reference agent bound to an answer vocabulary. Stateless after
// construction; safe to share across threads.
class Agent {
 public:
  Agent(AgentConfig cfg, std::vector<std::string> vocab);

  const AgentConfig& config() const { return cfg_; }
  const std::vector<std::string>& vocab() const { return vocab_; }

  // Runs rasterize -> [intervene] -> attention -> pooled classifier.
  // Throws ReferenceError when the question does not belong to the scene.
  AgentOutput answer(const Question& q, const Scene& scene, const AttentionMap* user_override = nullptr) const;

  // Scores before the answer softmax; exposed for tests.
  std::vector<double> scores(const Question& q, const Scene& scene, const AttentionMap* user_override,
                             AttentionMap* attention_out = nullptr) const;

 private:
  AgentConfig cfg_;
  std::vector<std::string> vocab_;
  std::vector<std::vector<double>> vocab_embeddings_;
};

// `distribution` keeps entries >= 1e-6 only.
nlohmann::json to_json(const AgentOutput& out, const std::vector<std::string>& vocab);

}  // namespace xvqa
