#include "xvqa/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "xvqa/error.hpp"
#include "xvqa/util.hpp"

namespace xvqa {

void AgentConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::ConfigError, "agent config: " + m); };
  if (grid < 1) bad("grid must be >= 1");
  if (dim < 1) bad("dim must be >= 1");
  if (!(attention_temperature > 0) || !(answer_temperature > 0)) bad("temperatures must be > 0");
  if (!(alpha >= 0) || !(beta >= 0)) bad("alpha and beta must be >= 0");
}

AttentionMap AttentionMap::filled(int grid, double value, MapKind kind) {
  return AttentionMap{grid, std::vector<double>(static_cast<size_t>(grid) * grid, value), kind};
}

void AttentionMap::validate_user(int expected_grid) const {
  if (grid != expected_grid || weights.size() != static_cast<size_t>(expected_grid) * expected_grid)
    fail(ErrorCode::ShapeError, "user attention map must be " + std::to_string(expected_grid) + "x" +
                                    std::to_string(expected_grid));
  for (size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0 && weights[i] <= 1.0))
      fail(ErrorCode::BoundsError, "user attention entry " + std::to_string(i) + " outside [0,1]");
  }
}

std::vector<double> embed_token(std::string_view token, uint64_t seed, int dim) {
  SplitMix64 rng(mix_seed(fnv1a64(token), seed));
  std::vector<double> v(static_cast<size_t>(dim));
  double norm2 = 0;
  for (auto& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

QuestionVec encode_question(const Question& q, const AgentConfig& cfg) {
  if (q.text.empty()) fail(ErrorCode::InvariantError, "question " + q.id + " has no tokens");
  QuestionVec out;
  out.tokens.assign(q.text.begin(), q.text.begin() + static_cast<std::ptrdiff_t>(std::min(q.text.size(), kMaxQuestionTokens)));
  out.values.assign(static_cast<size_t>(cfg.dim), 0.0);
  for (const auto& t : out.tokens) {
    const auto e = embed_token(t, cfg.embedding_seed, cfg.dim);
    for (size_t i = 0; i < e.size(); ++i) out.values[i] += e[i];
  }
  const double inv = 1.0 / static_cast<double>(out.tokens.size());
  for (auto& x : out.values) x *= inv;
  return out;
}

FeatureGrid rasterize_scene(const Scene& scene, const AgentConfig& cfg) {
  FeatureGrid fg(cfg.grid, cfg.dim, scene.id);
  for (const auto& o : scene.objects) {
    auto contrib = embed_token(o.label, cfg.embedding_seed, cfg.dim);
    for (const auto& a : scene.attributes_of(o.id)) {
      const auto e = embed_token(a, cfg.embedding_seed, cfg.dim);
      for (size_t i = 0; i < e.size(); ++i) contrib[i] += e[i];
    }
    for (const auto& [cell, frac] : box_to_cells(o.box, scene.width, scene.height, cfg.grid)) {
      auto f = fg.cell(cell);
      for (size_t i = 0; i < f.size(); ++i) f[i] += frac * contrib[i];
    }
  }
  return fg;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> softmax(std::vector<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0;
  for (auto& v : x) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : x) v /= z;
  return x;
}

}  // namespace

AttentionMap compute_attention(const QuestionVec& qv, const FeatureGrid& fg, const AgentConfig& cfg) {
  if (static_cast<int>(qv.values.size()) != fg.dim)
    fail(ErrorCode::ShapeError, "question vector and feature grid dimensions differ");
  std::vector<double> logits(static_cast<size_t>(fg.cells()));
  for (int c = 0; c < fg.cells(); ++c) logits[static_cast<size_t>(c)] = dot(qv.values, fg.cell(c)) / cfg.attention_temperature;
  return AttentionMap{fg.grid, softmax(std::move(logits)), MapKind::Model};
}

FeatureGrid intervene(const AttentionMap& user, const FeatureGrid& fg) {
  user.validate_user(fg.grid);
  FeatureGrid out = fg;
  for (int c = 0; c < out.cells(); ++c) {
    const double m = user.weights[static_cast<size_t>(c)];
    for (auto& x : out.cell(c)) x *= m;
  }
  return out;
}

double box_mean_attention(const AttentionMap& att, const Box& box, int width, int height, const AttentionMap* gate) {
  double num = 0, den = 0;
  for (const auto& [cell, frac] : box_to_cells(box, width, height, att.grid)) {
    double a = att.weights[static_cast<size_t>(cell)];
    if (gate) a *= gate->weights[static_cast<size_t>(cell)];
    num += a * frac;
    den += frac;
  }
  return den > 0 ? num / den : 0.0;
}

double system_confidence(std::span<const double> p) {
  if (p.size() < 2) fail(ErrorCode::InvariantError, "confidence needs at least 2 outcomes");
  double total = 0;
  for (double v : p) {
    if (!(v >= 0)) fail(ErrorCode::RangeError, "negative probability");
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-6) fail(ErrorCode::RangeError, "distribution does not sum to 1");
  // sum p ln(n p) / ln n == 1 - H(p)/ln n when sum p = 1; this form is exact
  // for one-hot and uniform inputs.
  const double n = static_cast<double>(p.size());
  const double log_n = std::log(n);
  double s = 0;
  for (double v : p)
    if (v > 0) s += v * std::log(n * v);
  return std::clamp(s / log_n, 0.0, 1.0);
}

Agent::Agent(AgentConfig cfg, std::vector<std::string> vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (vocab_.size() < 2) fail(ErrorCode::InvariantError, "answer vocabulary needs at least 2 entries");
  for (const auto& t : vocab_) vocab_embeddings_.push_back(embed_token(t, cfg_.embedding_seed, cfg_.dim));
}

std::vector<double> Agent::scores(const Question& q, const Scene& scene, const AttentionMap* user_override,
                                  AttentionMap* attention_out) const {
  if (q.scene_id != scene.id) fail(ErrorCode::ReferenceError, "question " + q.id + " does not belong to scene " + scene.id);
  const QuestionVec qv = encode_question(q, cfg_);
  FeatureGrid fg = rasterize_scene(scene, cfg_);
  if (user_override) fg = intervene(*user_override, fg);
  AttentionMap att = compute_attention(qv, fg, cfg_);

  std::vector<double> pooled(static_cast<size_t>(cfg_.dim), 0.0);
  for (int c = 0; c < fg.cells(); ++c) {
    const double a = att.weights[static_cast<size_t>(c)];
    const auto f = fg.cell(c);
    for (size_t i = 0; i < pooled.size(); ++i) pooled[i] += a * f[i];
  }
  for (size_t i = 0; i < pooled.size(); ++i) pooled[i] += qv.values[i];

  // Grounded retrieval: each object lends its attention (relative to the
  // uniform level 1/G^2) to the answer tokens it carries. Tokens already in
  // the question are not candidate answers.
  const std::set<std::string> asked(qv.tokens.begin(), qv.tokens.end());
  const double uniform_scale = static_cast<double>(cfg_.grid) * cfg_.grid;
  std::vector<double> ground(vocab_.size(), 0.0);
  for (const auto& o : scene.objects) {
    std::set<std::string> toks{o.label};
    for (const auto& a : scene.attributes_of(o.id)) toks.insert(a);
    for (const auto& rel : scene.relations) {
      if (rel.subject != o.id) continue;
      toks.insert(rel.predicate);
      if (const auto* target = scene.find_object(rel.object)) toks.insert(target->label);
    }
    for (const auto& t : asked) toks.erase(t);
    if (toks.empty()) continue;
    const double evidence =
        uniform_scale * box_mean_attention(att, o.box, scene.width, scene.height, user_override);
    for (size_t k = 0; k < vocab_.size(); ++k)
      if (toks.count(vocab_[k])) ground[k] += evidence;
  }

  std::vector<double> out(vocab_.size());
  for (size_t k = 0; k < vocab_.size(); ++k)
    out[k] = cfg_.alpha * dot(vocab_embeddings_[k], pooled) + cfg_.beta * ground[k];
  if (attention_out) *attention_out = std::move(att);
  return out;
}

AgentOutput Agent::answer(const Question& q, const Scene& scene, const AttentionMap* user_override) const {
  AgentOutput out;
  auto s = scores(q, scene, user_override, &out.attention);
  for (auto& v : s) v /= cfg_.answer_temperature;
  out.distribution = softmax(std::move(s));

  std::vector<size_t> order(vocab_.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return out.distribution[a] > out.distribution[b]; });
  for (size_t i = 0; i < std::min<size_t>(5, order.size()); ++i)
    out.top5.push_back({vocab_[order[i]], out.distribution[order[i]]});
  out.confidence = system_confidence(out.distribution);
  return out;
}

nlohmann::json to_json(const AgentOutput& out, const std::vector<std::string>& vocab) {
  nlohmann::json dist = nlohmann::json::object();
  for (size_t k = 0; k < out.distribution.size() && k < vocab.size(); ++k)
    if (out.distribution[k] >= 1e-6) dist[vocab[k]] = out.distribution[k];
  nlohmann::json top = nlohmann::json::array();
  for (const auto& r : out.top5) top.push_back({{"answer", r.answer}, {"probability", r.probability}});
  return {{"distribution", dist},
          {"top5", top},
          {"attention", out.attention.weights},
          {"grid", out.attention.grid},
          {"confidence", out.confidence}};
}

}  // namespace xvqa
