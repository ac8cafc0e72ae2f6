#pragma once
// Run configuration: an INI document with flat sections, overridable with
// "section.key=value" strings.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unifine/backends.hpp"
#include "unifine/core_model.hpp"
#include "unifine/inference.hpp"

namespace unifine {

enum class TaskSelection { Vqa, VcrQ2A, VcrQA2R, Ve };

std::string_view to_string(TaskSelection task);
/// Accepts vqa, vcr-q2a, vcr-qa2r, ve.
TaskSelection parse_task_selection(std::string_view name);
bool selects(TaskSelection selection, TaskKind kind);

struct DataConfig {
  std::string format = "samples";  // samples | vqa | snli-ve | vcr
  std::filesystem::path samples;
  std::filesystem::path questions;
  std::filesystem::path annotations;
  std::filesystem::path captions;
  std::filesystem::path images;
  std::filesystem::path vocabulary;
  std::size_t limit = 0;  // 0 keeps every sample
};

struct TopK {
  std::size_t yes_no = 2;
  std::size_t number = 4;
  std::size_t other = 10;
};

struct RunToggles {
  bool use_regions = true;
  bool use_question_prior = true;
  bool use_caption_prior = true;
  bool use_answer_filter = true;
  bool use_provided_caption = false;
  bool use_provided_boxes = false;
};

struct RunConfig {
  TaskSelection task = TaskSelection::Vqa;
  DataConfig data;
  std::map<BackendRole, BackendConfig> backends;
  FusionWeights weights;
  TopK top_k;
  RunToggles toggles;
  std::optional<CentroidSet> clip_centroids;
  std::optional<CentroidSet> caption_centroids;
  std::filesystem::path cache_dir = ".unifine-cache";  // empty disables caching
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  ChannelToggles channel_toggles() const;
  /// Weights with top_k set for the sample's answer type.
  FusionWeights weights_for(TaskKind kind) const;
  /// Roles the configured toggles actually call.
  std::vector<BackendRole> required_roles() const;
  /// Broken invariants, one message each; empty when runnable.
  std::vector<std::string> validate() const;

  /// Canonical description of everything that affects results. Data files
  /// enter by name and content hash.
  json canonical() const;
  std::string digest() const;
};

/// Parses INI text. Relative paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& ini_text, const std::filesystem::path& base_dir = {},
                           std::span<const std::string> overrides = {});
/// Reads the file at `path`; overrides resolve relative paths against the
/// working directory.
RunConfig load_run_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

/// Replaces every backend with the stub implementation, adding the roles
/// that are missing.
void force_stub_backends(RunConfig& config);

}  // namespace unifine
