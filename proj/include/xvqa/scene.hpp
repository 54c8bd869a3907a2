#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xvqa {

// Pixel rectangle, origin top-left.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

// Binary pixel mask, uncompressed row-major run lengths. Runs alternate
// background/foreground starting with background (a leading 0 run is
// allowed so a mask can start on a foreground pixel).
struct Mask {
  std::vector<uint32_t> runs;

  uint64_t total_length() const;
  uint64_t area() const;
  std::vector<uint8_t> decode(int width, int height) const;
  static Mask encode(const std::vector<uint8_t>& pixels);
  static Mask from_box(const Box& box, int width, int height);

  bool operator==(const Mask&) const = default;
};

struct ObjectAnn {
  std::string id;
  std::string label;
  Box box;
  std::optional<Mask> mask;

  bool operator==(const ObjectAnn&) const = default;
};

struct RegionAnn {
  std::string id;
  Box box;
  std::string phrase;

  bool operator==(const RegionAnn&) const = default;
};

struct RelationAnn {
  std::string subject;
  std::string predicate;
  std::string object;

  bool operator==(const RelationAnn&) const = default;
};

struct Scene {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<ObjectAnn> objects;
  std::vector<RegionAnn> regions;
  std::vector<RelationAnn> relations;
  std::map<std::string, std::vector<std::string>> attributes;

  const ObjectAnn* find_object(std::string_view object_id) const;
  // Attribute tokens of one object (empty if none).
  const std::vector<std::string>& attributes_of(std::string_view object_id) const;

  bool operator==(const Scene&) const = default;
};

enum class QuestionType { What, Where, Who, How, YesNo, Counting, Other };

std::string_view question_type_name(QuestionType t);
std::optional<QuestionType> parse_question_type(std::string_view s);

inline constexpr size_t kMaxQuestionTokens = 15;

struct Question {
  std::string id;
  std::string scene_id;
  std::vector<std::string> text;
  std::string answer;
  QuestionType qtype = QuestionType::Other;

  bool operator==(const Question&) const = default;
};

struct Dataset {
  std::map<std::string, Scene> scenes;
  std::vector<Question> questions;
  std::vector<std::string> answer_vocab;

  const Scene& scene_for(const Question& q) const;
  std::optional<size_t> vocab_index(std::string_view token) const;

  bool operator==(const Dataset&) const = default;
};

// Throws Error{InvariantError|ReferenceError} naming the offending scene or id.
void validate_scene(const Scene& scene);
void validate_dataset(const Dataset& dataset);

// Parsing reports ParseError with "line:column" for syntax errors and a
// JSON-pointer path for schema errors. Questions longer than
// kMaxQuestionTokens are truncated and a warning is appended.
Dataset parse_dataset(std::string_view json_text, std::vector<std::string>* warnings = nullptr);
Dataset load_dataset(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

std::string serialize_dataset(const Dataset& dataset);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Content hash of the canonical serialization.
std::string dataset_id(const Dataset& dataset);

// Drops yes-no and counting questions; scenes are kept as-is.
Dataset filter_questions(Dataset dataset);

struct CellOverlap {
  int cell;         // row-major index, row * grid + col
  double fraction;  // area(box ∩ cell) / area(cell)

  bool operator==(const CellOverlap&) const = default;
};

// Cells of a grid x grid partition of [0,width]x[0,height] that the box
// overlaps, sorted by cell index. Zero-overlap cells are omitted.
std::vector<CellOverlap> box_to_cells(const Box& box, int width, int height, int grid);

struct SynthConfig {
  int scenes = 50;
  int min_objects = 2;
  int max_objects = 4;
  int questions_per_scene = 3;
  int width = 224;
  int height = 224;
  int min_box_side = 24;
  int max_box_side = 96;
  double relation_probability = 0.5;
  bool masks = true;
  std::vector<std::string> labels;
  std::vector<std::string> colors;
  std::vector<std::string> predicates;
  // Extra answer tokens appended to the vocabulary (distractors).
  std::vector<std::string> extra_answers;

  // Defaults give a 64-entry answer vocabulary.
  static SynthConfig defaults();
  void validate() const;
};

Dataset generate_synthetic(const SynthConfig& config, uint64_t seed);

}  // namespace xvqa
