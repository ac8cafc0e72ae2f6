#pragma once
// Dataset loaders for the native VQAv2, SNLI-VE and VCR annotation layouts,
// answer normalization, the VQA consensus metric and per-type reports.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unifine/core_model.hpp"

namespace unifine {

struct VqaSources {
  std::filesystem::path questions;
  std::filesystem::path annotations;
  std::optional<std::filesystem::path> captions;  // COCO captions JSON
  std::filesystem::path image_dir;
  std::string image_prefix = "COCO_val2014_";     // + 12-digit image id + ".jpg"
};

std::vector<Sample> load_vqa(const VqaSources& sources);

/// SNLI-VE JSONL (gold_label, sentence2, Flickr30K_ID, pairID). Captions use
/// the COCO layout keyed by Flickr30K id; images resolve to <dir>/<id>.jpg.
std::vector<Sample> load_snli_ve(const std::filesystem::path& path,
                                 const std::optional<std::filesystem::path>& captions = std::nullopt,
                                 const std::filesystem::path& image_dir = {});

/// VCR JSONL. Each record yields a Q2A and a QA2R sample ("<annot_id>/q2a",
/// "<annot_id>/qa2r"). Boxes come from an inline "boxes" array or from the
/// metadata_fn file next to the images.
std::vector<Sample> load_vcr(const std::filesystem::path& path, const std::filesystem::path& image_dir = {});

/// Name used for person object `index` in the VCR record `annot_id`.
std::string vcr_person_name(std::string_view annot_id, std::size_t index);
inline constexpr std::array<std::string_view, 14> kNeutralNames = {
    "Casey", "Riley",  "Jessie",  "Jackie",  "Avery", "Jaime", "Peyton",
    "Kerry", "Jody",   "Kendall", "Skyler",  "Frankie", "Pat", "Quinn"};

std::string normalize_answer(std::string_view text);

/// Leave-one-out consensus numerator: sum over the ten 9-answer subsets of
/// min(matches, 3). The score is this value over 30.
int vqa_soft_numerator(std::string_view predicted, std::span<const std::string> human_answers);
double vqa_soft_score(std::string_view predicted, std::span<const std::string> human_answers);

struct ReportRow {
  std::string type;
  double score = 0;  // percent
  std::size_t count = 0;
  bool operator==(const ReportRow&) const = default;
};

struct Report {
  TaskFamily family = TaskFamily::Vqa;
  std::vector<ReportRow> rows;
  ReportRow all;
  std::string config_digest;
  json config;  // resolved run configuration, weights included
  bool operator==(const Report&) const = default;
};

/// Every sample needs exactly one prediction and vice versa. The config
/// digest is taken from the predictions; `config` is embedded verbatim.
Report evaluate(std::span<const Prediction> predictions, std::span<const Sample> samples,
                const json& config = json::object());

void to_json(json& j, const ReportRow& r);
void from_json(const json& j, ReportRow& r);
void to_json(json& j, const Report& r);
void from_json(const json& j, Report& r);

std::string format_report_table(const Report& report);

}  // namespace unifine
