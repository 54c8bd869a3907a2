#include "xvqa/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xvqa/error.hpp"
#include "xvqa/util.hpp"

namespace xvqa {

using nlohmann::json;
using nlohmann::ordered_json;

uint64_t Mask::total_length() const {
  uint64_t n = 0;
  for (auto r : runs) n += r;
  return n;
}

uint64_t Mask::area() const {
  uint64_t n = 0;
  for (size_t i = 1; i < runs.size(); i += 2) n += runs[i];
  return n;
}

std::vector<uint8_t> Mask::decode(int width, int height) const {
  const auto total = static_cast<size_t>(width) * static_cast<size_t>(height);
  std::vector<uint8_t> pixels(total, 0);
  size_t pos = 0;
  for (size_t i = 0; i < runs.size() && pos < total; ++i) {
    const size_t end = std::min(total, pos + runs[i]);
    if (i % 2 == 1) std::fill(pixels.begin() + static_cast<std::ptrdiff_t>(pos),
                              pixels.begin() + static_cast<std::ptrdiff_t>(end), 1);
    pos = end;
  }
  return pixels;
}

Mask Mask::encode(const std::vector<uint8_t>& pixels) {
  Mask m;
  uint8_t cur = 0;
  uint32_t run = 0;
  for (uint8_t p : pixels) {
    const uint8_t v = p ? 1 : 0;
    if (v != cur) {
      m.runs.push_back(run);
      run = 0;
      cur = v;
    }
    ++run;
  }
  m.runs.push_back(run);
  return m;
}

Mask Mask::from_box(const Box& box, int width, int height) {
  std::vector<uint8_t> pixels(static_cast<size_t>(width) * static_cast<size_t>(height), 0);
  for (int py = 0; py < height; ++py) {
    const double cy = py + 0.5;
    if (cy < box.y || cy >= box.y + box.h) continue;
    for (int px = 0; px < width; ++px) {
      const double cx = px + 0.5;
      if (cx >= box.x && cx < box.x + box.w) pixels[static_cast<size_t>(py) * width + px] = 1;
    }
  }
  return encode(pixels);
}

const ObjectAnn* Scene::find_object(std::string_view object_id) const {
  for (const auto& o : objects)
    if (o.id == object_id) return &o;
  return nullptr;
}

const std::vector<std::string>& Scene::attributes_of(std::string_view object_id) const {
  static const std::vector<std::string> kEmpty;
  auto it = attributes.find(std::string(object_id));
  return it == attributes.end() ? kEmpty : it->second;
}

std::string_view question_type_name(QuestionType t) {
  switch (t) {
    case QuestionType::What: return "what";
    case QuestionType::Where: return "where";
    case QuestionType::Who: return "who";
    case QuestionType::How: return "how";
    case QuestionType::YesNo: return "yes-no";
    case QuestionType::Counting: return "counting";
    case QuestionType::Other: return "other";
  }
  return "other";
}

std::optional<QuestionType> parse_question_type(std::string_view s) {
  for (auto t : {QuestionType::What, QuestionType::Where, QuestionType::Who, QuestionType::How,
                 QuestionType::YesNo, QuestionType::Counting, QuestionType::Other}) {
    if (question_type_name(t) == s) return t;
  }
  return std::nullopt;
}

const Scene& Dataset::scene_for(const Question& q) const {
  auto it = scenes.find(q.scene_id);
  if (it == scenes.end()) fail(ErrorCode::ReferenceError, "question " + q.id + " references unknown scene " + q.scene_id);
  return it->second;
}

std::optional<size_t> Dataset::vocab_index(std::string_view token) const {
  for (size_t i = 0; i < answer_vocab.size(); ++i)
    if (answer_vocab[i] == token) return i;
  return std::nullopt;
}

namespace {

bool box_inside(const Box& b, int width, int height) {
  return b.w > 0 && b.h > 0 && b.x >= 0 && b.y >= 0 && b.x + b.w <= width && b.y + b.h <= height &&
         std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) && std::isfinite(b.h);
}

std::string box_str(const Box& b) {
  std::ostringstream os;
  os << "[" << b.x << "," << b.y << "," << b.w << "," << b.h << "]";
  return os.str();
}

}  // namespace

void validate_scene(const Scene& s) {
  auto bad = [&](const std::string& what) { fail(ErrorCode::InvariantError, "scene " + s.id + ": " + what); };
  if (s.id.empty()) fail(ErrorCode::InvariantError, "scene with empty id");
  if (s.width <= 0 || s.height <= 0) bad("width and height must be positive");
  std::set<std::string> ids;
  for (const auto& o : s.objects) {
    if (o.id.empty()) bad("object with empty id");
    if (!ids.insert(o.id).second) bad("duplicate object id " + o.id);
    if (o.label.empty()) bad("object " + o.id + " has empty label");
    if (!box_inside(o.box, s.width, s.height)) bad("object " + o.id + " box " + box_str(o.box) + " outside image");
    if (o.mask) {
      const uint64_t expect = static_cast<uint64_t>(s.width) * static_cast<uint64_t>(s.height);
      if (o.mask->total_length() != expect) bad("object " + o.id + " mask does not match image size");
      if (o.mask->area() == 0) bad("object " + o.id + " mask has zero area");
    }
  }
  for (const auto& r : s.regions) {
    if (r.phrase.empty()) bad("region " + r.id + " has empty phrase");
    if (!box_inside(r.box, s.width, s.height)) bad("region " + r.id + " box " + box_str(r.box) + " outside image");
  }
  for (const auto& rel : s.relations) {
    for (const auto* end : {&rel.subject, &rel.object}) {
      if (!ids.count(*end))
        fail(ErrorCode::ReferenceError, "scene " + s.id + ": relation references missing object " + *end);
    }
    if (rel.predicate.empty()) bad("relation with empty predicate");
  }
  for (const auto& [oid, toks] : s.attributes) {
    if (!ids.count(oid)) fail(ErrorCode::ReferenceError, "scene " + s.id + ": attributes reference missing object " + oid);
  }
}

void validate_dataset(const Dataset& d) {
  std::set<std::string> vocab;
  for (const auto& a : d.answer_vocab) {
    if (a.empty()) fail(ErrorCode::InvariantError, "empty answer vocabulary entry");
    if (!vocab.insert(a).second) fail(ErrorCode::InvariantError, "duplicate answer vocabulary entry " + a);
  }
  if (vocab.size() < 2) fail(ErrorCode::InvariantError, "answer vocabulary needs at least 2 entries");
  for (const auto& [key, scene] : d.scenes) {
    if (key != scene.id) fail(ErrorCode::InvariantError, "scene key " + key + " does not match id " + scene.id);
    validate_scene(scene);
  }
  std::set<std::string> qids;
  for (const auto& q : d.questions) {
    if (!qids.insert(q.id).second) fail(ErrorCode::InvariantError, "duplicate question id " + q.id);
    if (!d.scenes.count(q.scene_id))
      fail(ErrorCode::ReferenceError, "question " + q.id + " references missing scene " + q.scene_id);
    if (q.text.empty()) fail(ErrorCode::InvariantError, "question " + q.id + " has empty text");
    if (q.text.size() > kMaxQuestionTokens)
      fail(ErrorCode::InvariantError, "question " + q.id + " exceeds " + std::to_string(kMaxQuestionTokens) + " tokens");
    if (!vocab.count(q.answer))
      fail(ErrorCode::InvariantError, "question " + q.id + " answer '" + q.answer + "' not in answer vocabulary");
  }
}

namespace {

// Schema reader that carries the JSON-pointer path of the value being read.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::ParseError, (path_.empty() ? "/" : path_) + ": " + what);
  }

  Reader at(std::string_view key) const {
    if (!j_.is_object()) error("expected object");
    auto it = j_.find(std::string(key));
    if (it == j_.end()) fail(ErrorCode::ParseError, path_ + "/" + std::string(key) + ": missing key");
    return Reader(*it, path_ + "/" + std::string(key));
  }
  bool has(std::string_view key) const { return j_.is_object() && j_.contains(std::string(key)); }

  std::vector<Reader> items() const {
    if (!j_.is_array()) error("expected array");
    std::vector<Reader> out;
    for (size_t i = 0; i < j_.size(); ++i) out.emplace_back(j_[i], path_ + "/" + std::to_string(i));
    return out;
  }

  std::vector<std::pair<std::string, Reader>> members() const {
    if (!j_.is_object()) error("expected object");
    std::vector<std::pair<std::string, Reader>> out;
    for (auto it = j_.begin(); it != j_.end(); ++it) out.emplace_back(it.key(), Reader(it.value(), path_ + "/" + it.key()));
    return out;
  }

  std::string str() const {
    if (!j_.is_string()) error("expected string");
    return j_.get<std::string>();
  }
  double num() const {
    if (!j_.is_number()) error("expected number");
    return j_.get<double>();
  }
  int integer() const {
    if (!j_.is_number_integer() && !(j_.is_number() && std::floor(j_.get<double>()) == j_.get<double>()))
      error("expected integer");
    return static_cast<int>(j_.get<double>());
  }
  uint32_t count() const {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<int64_t>() >= 0)) error("expected non-negative integer");
    return j_.get<uint32_t>();
  }
  bool is_string() const { return j_.is_string(); }
  bool is_null() const { return j_.is_null(); }

  Box box() const {
    auto v = items();
    if (v.size() != 4) error("expected [x, y, w, h]");
    return Box{v[0].num(), v[1].num(), v[2].num(), v[3].num()};
  }

 private:
  const json& j_;
  std::string path_;
};

Mask read_mask(const Reader& r) {
  if (r.has("order") && r.at("order").str() != "row-major") r.at("order").error("only row-major masks are supported");
  Mask m;
  for (const auto& v : r.at("rle").items()) m.runs.push_back(v.count());
  return m;
}

Scene read_scene(const Reader& r) {
  Scene s;
  s.id = r.at("id").str();
  s.width = r.at("width").integer();
  s.height = r.at("height").integer();
  if (r.has("objects")) {
    for (const auto& o : r.at("objects").items()) {
      ObjectAnn obj;
      obj.id = o.at("id").str();
      obj.label = o.at("label").str();
      obj.box = o.at("box").box();
      if (o.has("mask") && !o.at("mask").is_null()) obj.mask = read_mask(o.at("mask"));
      s.objects.push_back(std::move(obj));
    }
  }
  if (r.has("regions")) {
    for (const auto& g : r.at("regions").items()) {
      s.regions.push_back(RegionAnn{g.at("id").str(), g.at("box").box(), g.at("phrase").str()});
    }
  }
  if (r.has("relations")) {
    for (const auto& rel : r.at("relations").items()) {
      s.relations.push_back(RelationAnn{rel.at("subject").str(), rel.at("predicate").str(), rel.at("object").str()});
    }
  }
  if (r.has("attributes")) {
    for (const auto& [oid, toks] : r.at("attributes").members()) {
      auto& dst = s.attributes[oid];
      for (const auto& t : toks.items()) dst.push_back(t.str());
    }
  }
  return s;
}

std::string line_col(std::string_view text, size_t byte) {
  size_t line = 1, col = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

ordered_json number(double v) {
  if (std::floor(v) == v && std::fabs(v) < 1e15) return static_cast<int64_t>(v);
  return v;
}

ordered_json box_json(const Box& b) {
  return ordered_json::array({number(b.x), number(b.y), number(b.w), number(b.h)});
}

}  // namespace

Dataset parse_dataset(std::string_view text, std::vector<std::string>* warnings) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, "line " + line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
  }
  Reader r(root, "");
  Dataset d;
  for (const auto& sr : r.at("scenes").items()) {
    Scene s = read_scene(sr);
    std::string id = s.id;
    if (!d.scenes.emplace(id, std::move(s)).second) sr.error("duplicate scene id " + id);
  }
  for (const auto& qr : r.at("questions").items()) {
    Question q;
    q.id = qr.at("id").str();
    q.scene_id = qr.at("scene_id").str();
    if (qr.at("text").is_string()) {
      q.text = tokenize(qr.at("text").str());
    } else {
      for (const auto& t : qr.at("text").items()) {
        for (auto& tok : tokenize(t.str())) q.text.push_back(std::move(tok));
      }
    }
    if (q.text.size() > kMaxQuestionTokens) {
      if (warnings)
        warnings->push_back("question " + q.id + ": truncated from " + std::to_string(q.text.size()) + " to " +
                            std::to_string(kMaxQuestionTokens) + " tokens");
      q.text.resize(kMaxQuestionTokens);
    }
    q.answer = qr.at("answer").str();
    auto qt = parse_question_type(qr.at("qtype").str());
    if (!qt) qr.at("qtype").error("unknown qtype '" + qr.at("qtype").str() + "'");
    q.qtype = *qt;
    d.questions.push_back(std::move(q));
  }
  for (const auto& a : r.at("answer_vocab").items()) d.answer_vocab.push_back(a.str());
  validate_dataset(d);
  return d;
}

Dataset load_dataset(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dataset(buf.str(), warnings);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string serialize_dataset(const Dataset& d) {
  ordered_json root;
  ordered_json scenes = ordered_json::array();
  for (const auto& [id, s] : d.scenes) {
    ordered_json js;
    js["id"] = s.id;
    js["width"] = s.width;
    js["height"] = s.height;
    ordered_json objs = ordered_json::array();
    for (const auto& o : s.objects) {
      ordered_json jo;
      jo["id"] = o.id;
      jo["label"] = o.label;
      jo["box"] = box_json(o.box);
      if (o.mask) jo["mask"] = ordered_json{{"rle", o.mask->runs}, {"order", "row-major"}};
      objs.push_back(std::move(jo));
    }
    js["objects"] = std::move(objs);
    ordered_json regions = ordered_json::array();
    for (const auto& g : s.regions)
      regions.push_back(ordered_json{{"id", g.id}, {"box", box_json(g.box)}, {"phrase", g.phrase}});
    js["regions"] = std::move(regions);
    ordered_json rels = ordered_json::array();
    for (const auto& r : s.relations)
      rels.push_back(ordered_json{{"subject", r.subject}, {"predicate", r.predicate}, {"object", r.object}});
    js["relations"] = std::move(rels);
    ordered_json attrs = ordered_json::object();
    for (const auto& [oid, toks] : s.attributes) attrs[oid] = toks;
    js["attributes"] = std::move(attrs);
    scenes.push_back(std::move(js));
  }
  root["scenes"] = std::move(scenes);
  ordered_json qs = ordered_json::array();
  for (const auto& q : d.questions) {
    qs.push_back(ordered_json{{"id", q.id},
                              {"scene_id", q.scene_id},
                              {"text", join(q.text)},
                              {"answer", q.answer},
                              {"qtype", question_type_name(q.qtype)}});
  }
  root["questions"] = std::move(qs);
  root["answer_vocab"] = d.answer_vocab;
  return root.dump(1) + "\n";
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << serialize_dataset(d);
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

std::string dataset_id(const Dataset& d) { return hex64(fnv1a64(serialize_dataset(d))); }

Dataset filter_questions(Dataset d) {
  std::erase_if(d.questions, [](const Question& q) {
    return q.qtype == QuestionType::YesNo || q.qtype == QuestionType::Counting;
  });
  return d;
}

std::vector<CellOverlap> box_to_cells(const Box& box, int width, int height, int grid) {
  std::vector<CellOverlap> out;
  if (grid < 1 || width <= 0 || height <= 0) return out;
  const double cw = static_cast<double>(width) / grid;
  const double ch = static_cast<double>(height) / grid;
  const int c0 = std::clamp(static_cast<int>(std::floor(box.x / cw)), 0, grid - 1);
  const int c1 = std::clamp(static_cast<int>(std::ceil((box.x + box.w) / cw)) - 1, 0, grid - 1);
  const int r0 = std::clamp(static_cast<int>(std::floor(box.y / ch)), 0, grid - 1);
  const int r1 = std::clamp(static_cast<int>(std::ceil((box.y + box.h) / ch)) - 1, 0, grid - 1);
  for (int r = r0; r <= r1; ++r) {
    const double oy = std::min(box.y + box.h, (r + 1) * ch) - std::max(box.y, r * ch);
    if (oy <= 0) continue;
    for (int c = c0; c <= c1; ++c) {
      const double ox = std::min(box.x + box.w, (c + 1) * cw) - std::max(box.x, c * cw);
      if (ox <= 0) continue;
      out.push_back({r * grid + c, std::min(1.0, (ox * oy) / (cw * ch))});
    }
  }
  return out;
}

}  // namespace xvqa
