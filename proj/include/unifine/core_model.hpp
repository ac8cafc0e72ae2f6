#pragma once

// Shared domain types for every stage of the pipeline. Values are plain
// aggregates: construct, validate, then treat as read-only.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace unifine {

using json = nlohmann::json;

enum class TaskKind { VqaYesNo, VqaNumber, VqaOther, VcrQ2A, VcrQA2R, SnliVe };

enum class TaskFamily { Vqa, Vcr, SnliVe };

std::string_view to_string(TaskKind task);
TaskKind parse_task_kind(std::string_view name);
TaskFamily family_of(TaskKind task);
std::string_view to_string(TaskFamily family);

inline bool is_vqa(TaskKind t) { return family_of(t) == TaskFamily::Vqa; }
inline bool is_vcr(TaskKind t) { return family_of(t) == TaskFamily::Vcr; }

enum class EntailmentLabel { Contradiction = 0, Neutral = 1, Entailment = 2 };

inline constexpr std::array<EntailmentLabel, 3> kEntailmentLabels = {
    EntailmentLabel::Contradiction, EntailmentLabel::Neutral, EntailmentLabel::Entailment};

std::string_view to_string(EntailmentLabel label);  // "C", "N", "E"
/// Accepts the short forms and the SNLI words ("entailment", ...), any case.
EntailmentLabel parse_entailment_label(std::string_view text);

/// Pixel-space box, top-left corner plus extent.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  bool operator==(const Box&) const = default;
};

struct DetectedObject {
  Box box;
  std::string category;
  std::optional<std::string> attribute;
  double confidence = 1.0;

  bool operator==(const DetectedObject&) const = default;
};

struct VqaReference {
  std::vector<std::string> answers;  // ten human answers
  bool operator==(const VqaReference&) const = default;
};

struct ChoiceReference {
  std::size_t index = 0;
  bool operator==(const ChoiceReference&) const = default;
};

using Reference = std::variant<std::monostate, VqaReference, ChoiceReference, EntailmentLabel>;

struct Sample {
  std::string id;
  TaskKind task = TaskKind::VqaOther;
  std::string image_ref;
  std::string query;  // question (VQA, VCR) or hypothesis (SNLI-VE)
  std::vector<std::string> candidates;
  std::optional<std::string> provided_caption;
  std::optional<std::vector<DetectedObject>> provided_boxes;
  // VCR only: text of the correct answer. QA2R inference uses it as the query.
  std::optional<std::string> gold_answer;
  Reference reference;

  bool operator==(const Sample&) const = default;
};

inline constexpr std::size_t kVcrCandidates = 4;
inline constexpr std::size_t kVqaHumanAnswers = 10;

/// Returns one description per broken invariant; empty when the sample is valid.
std::vector<std::string> validate_sample(const Sample& sample);

/// Per-candidate score channels that feed the weighted fusion.
struct ScoreBundle {
  std::vector<double> s_clip_global;
  std::vector<double> s_clip_region;
  std::vector<double> s_question;
  std::vector<double> s_caption;

  std::size_t size() const { return s_clip_global.size(); }
  static ScoreBundle zeros(std::size_t n);
  bool operator==(const ScoreBundle&) const = default;
};

struct FusionWeights {
  double k1 = 1.0;
  double k2 = 1.0;
  double k3 = 1.0;
  std::size_t n_regions = 5;
  std::size_t top_k = 10;

  bool operator==(const FusionWeights&) const = default;
};

/// Ordered contradiction <= neutral <= entailment centroids for one score channel.
struct CentroidSet {
  double contradiction = 0;
  double neutral = 0;
  double entailment = 0;

  double at(EntailmentLabel label) const;
  bool operator==(const CentroidSet&) const = default;
};

struct EntailmentScores {
  double s_clip = 0;
  double s_caption = 0;
  bool operator==(const EntailmentScores&) const = default;
};

using PredictedLabel = std::variant<std::size_t, EntailmentLabel>;

struct Prediction {
  std::string sample_id;
  TaskKind task = TaskKind::VqaOther;
  PredictedLabel label = std::size_t{0};
  std::optional<std::string> answer;  // chosen candidate text (VQA, VCR)
  std::vector<std::string> candidates;
  std::optional<ScoreBundle> bundle;
  std::vector<double> totals;
  std::optional<EntailmentScores> entailment;
  std::vector<double> distances;  // C, N, E
  std::string config_digest;

  bool operator==(const Prediction&) const = default;
};

void to_json(json& j, const Box& b);
void from_json(const json& j, Box& b);
void to_json(json& j, const DetectedObject& o);
void from_json(const json& j, DetectedObject& o);
void to_json(json& j, const Sample& s);
void from_json(const json& j, Sample& s);
void to_json(json& j, const ScoreBundle& b);
void from_json(const json& j, ScoreBundle& b);
void to_json(json& j, const FusionWeights& w);
void from_json(const json& j, FusionWeights& w);
void to_json(json& j, const CentroidSet& c);
void from_json(const json& j, CentroidSet& c);
void to_json(json& j, const EntailmentScores& e);
void from_json(const json& j, EntailmentScores& e);
void to_json(json& j, const Prediction& p);
void from_json(const json& j, Prediction& p);

std::vector<Sample> read_samples_jsonl(const std::filesystem::path& path);
void write_samples_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Prediction> read_predictions_jsonl(const std::filesystem::path& path);

}  // namespace unifine
