#pragma once

// Deterministic stand-ins for every backend role. Each output is a pure
// function of (instance seed, input digest), optionally overridden by a
// canned-output fixture.
//
// Fixture JSON (every section optional; one file may serve all roles):
//   joint_images   { image digest -> [floats] }
//   joint_texts    { text -> [floats] }
//   sentence_texts { text -> [floats] }
//   captions       { image digest -> caption }
//   detections     { image digest -> [DetectedObject] }
//   answer_scores  { candidate -> score }
//   template_scores{ template -> { candidate -> score } }
//   conversions    { question -> template }
// Image digests are image_content_digest() of the decoded (cropped) pixels.
//
// Settings: "fixture" (path) or "fixture_data" (inline object), "seed",
// "dim", plus the role-specific keys documented on each class.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "unifine/backends.hpp"

namespace unifine {

inline constexpr std::string_view kStubExpansion = "sha256-mt19937_64/v1";

/// Expands SHA-256(domain, seed, input) into `dim` values in [-1, 1).
std::vector<double> stub_expand(std::string_view domain, std::uint64_t seed,
                                std::string_view input, std::size_t dim);

/// Loads the fixture named by a stub config's settings (empty object if none).
json load_stub_fixture(const BackendConfig& config);

class StubJointEmbedder final : public JointEmbedder {
 public:
  explicit StubJointEmbedder(BackendConfig config);
  std::size_t dim() const override { return dim_; }

 protected:
  JointVector do_embed_image(const ImageRef& image) const override;
  JointVector do_embed_text(std::string_view text) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  json fixture_;
};

/// "mode": "bag_of_words" (default) sums hash-seeded token vectors so texts
/// sharing words are similar; "hash" seeds from the whole text.
class StubSentenceEmbedder final : public SentenceEmbedder {
 public:
  explicit StubSentenceEmbedder(BackendConfig config);
  std::size_t dim() const override { return dim_; }

 protected:
  SentVector do_embed(std::string_view text) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  bool bag_of_words_;
  json fixture_;
};

/// "default_caption" (default "an image") for images without a fixture entry.
class StubCaptioner final : public Captioner {
 public:
  explicit StubCaptioner(BackendConfig config);

 protected:
  std::string do_caption(const ImageRef& image) const override;

 private:
  std::string default_caption_;
  json fixture_;
};

/// Returns fixture detections; unmapped images yield [] unless
/// "synthesize": true, which draws up to "max_objects" (default 6)
/// hash-seeded objects from a fixed label list.
class StubDetector final : public Detector {
 public:
  explicit StubDetector(BackendConfig config);

 protected:
  std::vector<DetectedObject> do_detect(const ImageRef& image) const override;

 private:
  std::uint64_t seed_;
  bool synthesize_;
  int max_objects_;
  json fixture_;
};

/// Fixture scores where present; otherwise a hash-seeded log-probability-like
/// value in [-10, 0) that depends only on (template, candidate).
class StubAnswerScorer final : public AnswerScorer {
 public:
  explicit StubAnswerScorer(BackendConfig config);
  std::optional<std::string> to_declarative(std::string_view question) const override;

 protected:
  std::vector<double> do_score(std::string_view declarative_template,
                               std::span<const std::string> candidates) const override;

 private:
  std::uint64_t seed_;
  json fixture_;
};

}  // namespace unifine
