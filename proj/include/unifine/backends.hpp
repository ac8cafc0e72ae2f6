#pragma once

// Model roles the pipeline consumes, plus the registry that builds them from
// configuration. Public entry points validate preconditions and then forward
// to the protected do_* hooks that implementations override.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unifine/core_model.hpp"
#include "unifine/image.hpp"

namespace unifine {

/// Vector in the joint image-text space.
struct JointVector {
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
  bool operator==(const JointVector&) const = default;
};

/// Vector in the sentence-embedding space.
struct SentVector {
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
  bool operator==(const SentVector&) const = default;
};

/// Inner product. Throws ContractError on dimension mismatch.
double alignment_score(const JointVector& image, const JointVector& text);

/// a.b / (|a| |b|), clamped to [-1, 1]. Throws ContractError on dimension
/// mismatch or a zero-norm operand.
double cosine(const SentVector& a, const SentVector& b);

enum class BackendRole { JointEmbedder, SentenceEmbedder, Captioner, Detector, AnswerScorer };

inline constexpr std::array<BackendRole, 5> kBackendRoles = {
    BackendRole::JointEmbedder, BackendRole::SentenceEmbedder, BackendRole::Captioner,
    BackendRole::Detector, BackendRole::AnswerScorer};

std::string_view to_string(BackendRole role);
BackendRole parse_backend_role(std::string_view name);

struct BackendConfig {
  BackendRole role = BackendRole::JointEmbedder;
  std::string implementation = "stub";
  std::string version = "1";
  // Calls are funnelled through one mutex when set.
  bool serial = false;
  // Joint embedder only: L2-normalize every emitted vector.
  bool normalize = false;
  json settings = json::object();

  /// Stable identity used in cache keys: implementation, version and a
  /// digest of the settings.
  std::string identity() const;
};

class Backend {
 public:
  explicit Backend(BackendConfig config, bool decorator = false)
      : config_(std::move(config)), decorator_(decorator) {}
  virtual ~Backend() = default;
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  const BackendConfig& config() const { return config_; }

 protected:
  // Decorators forward to an inner backend whose outputs are already
  // post-processed, so per-role post-processing is skipped for them.
  bool decorator() const { return decorator_; }

 private:
  BackendConfig config_;
  bool decorator_;
};

class JointEmbedder : public Backend {
 public:
  using Backend::Backend;

  JointVector embed_image(const ImageRef& image) const;
  JointVector embed_text(std::string_view text) const;
  virtual std::size_t dim() const = 0;

 protected:
  virtual JointVector do_embed_image(const ImageRef& image) const = 0;
  virtual JointVector do_embed_text(std::string_view text) const = 0;

 private:
  JointVector finish(JointVector v) const;
};

class SentenceEmbedder : public Backend {
 public:
  using Backend::Backend;

  SentVector embed(std::string_view text) const;
  virtual std::size_t dim() const = 0;

 protected:
  virtual SentVector do_embed(std::string_view text) const = 0;
};

class Captioner : public Backend {
 public:
  using Backend::Backend;
  std::string caption(const ImageRef& image) const;

 protected:
  virtual std::string do_caption(const ImageRef& image) const = 0;
};

class Detector : public Backend {
 public:
  using Backend::Backend;
  /// Boxes in the result are clamped to the image bounds.
  std::vector<DetectedObject> detect(const ImageRef& image) const;

 protected:
  virtual std::vector<DetectedObject> do_detect(const ImageRef& image) const = 0;
};

inline constexpr std::string_view kSlotMarker = "<slot>";

std::size_t count_slots(std::string_view text);

class AnswerScorer : public Backend {
 public:
  using Backend::Backend;

  /// One finite plausibility score per candidate, higher is better.
  /// Throws ContractError unless the template has exactly one slot marker.
  std::vector<double> score_answers(std::string_view declarative_template,
                                    std::span<const std::string> candidates) const;

  /// Optional generative question-to-template conversion. Implementations
  /// without one return nullopt and callers fall back to the rule table.
  virtual std::optional<std::string> to_declarative(std::string_view question) const;

 protected:
  virtual std::vector<double> do_score(std::string_view declarative_template,
                                       std::span<const std::string> candidates) const = 0;
};

/// Mean of per-token log-probabilities: the multi-token answer score.
double length_normalized_score(std::span<const double> token_logprobs);

struct Backends {
  std::shared_ptr<const JointEmbedder> joint;
  std::shared_ptr<const SentenceEmbedder> sentence;
  std::shared_ptr<const Captioner> captioner;
  std::shared_ptr<const Detector> detector;
  std::shared_ptr<const AnswerScorer> scorer;
};

class BackendRegistry {
 public:
  using Factory = std::function<std::shared_ptr<Backend>(const BackendConfig&)>;

  /// Registry with the "stub" and "http" implementations for every role.
  static BackendRegistry with_builtins();

  void add(BackendRole role, std::string implementation, Factory factory);
  bool contains(BackendRole role, const std::string& implementation) const;

  /// Builds one backend and applies the config's normalize/serial wrappers.
  std::shared_ptr<Backend> make(const BackendConfig& config) const;

  /// Builds every role present in `configs`; missing roles stay null.
  Backends make_all(const std::map<BackendRole, BackendConfig>& configs) const;

 private:
  std::map<std::pair<BackendRole, std::string>, Factory> factories_;
};

/// Wraps a backend so that concurrent callers are serialized.
std::shared_ptr<Backend> make_serial(std::shared_ptr<Backend> inner);

}  // namespace unifine
