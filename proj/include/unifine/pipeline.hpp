#pragma once
// Orchestration: sample loading, cached backends, the bounded worker pool,
// and the run / precompute / ablate / region-sweep operations.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unifine/backends.hpp"
#include "unifine/cache.hpp"
#include "unifine/config.hpp"
#include "unifine/data_eval.hpp"

namespace unifine {

struct SampleFailure {
  std::string sample_id;
  std::string message;
};

struct RunResult {
  std::string digest;
  std::vector<Prediction> predictions;  // sample order, failures excluded
  Report report;
  std::vector<SampleFailure> failures;
  std::optional<CentroidSet> clip_centroids;  // SNLI-VE only
  std::optional<CentroidSet> caption_centroids;
  std::filesystem::path predictions_path;
  std::filesystem::path report_path;
};

struct PrecomputeSummary {
  std::size_t samples = 0;
  std::vector<SampleFailure> failures;
  CacheStats stats;
  std::map<std::string, std::uint64_t> producer_calls;  // per operation
  std::map<std::string, std::uint64_t> records;         // per operation, on disk
};

class Pipeline {
 public:
  /// Validates the config and builds its backends. Throws ConfigError.
  explicit Pipeline(RunConfig config, const BackendRegistry& registry = BackendRegistry::with_builtins());

  const RunConfig& config() const { return config_; }
  const Backends& backends() const { return backends_; }
  /// Null when caching is disabled.
  const std::shared_ptr<Cache>& cache() const { return cache_; }

  /// Samples selected by the task, after the limit. Invalid samples are
  /// reported in `rejected`.
  std::vector<Sample> load_samples(std::vector<SampleFailure>* rejected = nullptr) const;

  PrecomputeSummary precompute();
  /// Runs the task. With `write_outputs` the predictions, report and logs
  /// land in out_dir, named by the config digest.
  RunResult run(bool write_outputs = true);

 private:
  RunConfig config_;
  std::shared_ptr<Cache> cache_;
  Backends backends_;
};

/// Toggle presets: baseline, w_question, w_region, w_caption, w_all, their
/// provided-annotation variants w_region_gt, w_caption_gt, w_all_gt, and
/// text_only.
RunConfig apply_preset(RunConfig config, std::string_view preset);
std::vector<std::string> default_presets();

struct AblationRow {
  std::string preset;
  RunResult result;
};

std::vector<AblationRow> ablate(const RunConfig& config, std::span<const std::string> presets,
                                const BackendRegistry& registry = BackendRegistry::with_builtins());
std::string ablation_csv(std::span<const AblationRow> rows);

struct SweepRow {
  std::size_t n_regions = 0;
  RunResult result;
};

std::vector<SweepRow> region_sweep(const RunConfig& config, std::span<const std::size_t> n_values,
                                   const BackendRegistry& registry = BackendRegistry::with_builtins());
std::string sweep_csv(std::span<const SweepRow> rows);

/// Re-scores a predictions file against the configured dataset.
Report evaluate_predictions(const RunConfig& config, const std::filesystem::path& predictions);

/// Writes a self-contained stub dataset: images, sample files for every
/// task, an answer vocabulary and one config per task.
void write_demo_fixture(const std::filesystem::path& dir, std::size_t samples_per_task = 30,
                        std::uint64_t seed = 7);

}  // namespace unifine
