#pragma once

// Score assembly and prediction: weighted fusion for question answering
// (VQA, VCR) and centroid clustering for visual entailment.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "unifine/answer_filter.hpp"
#include "unifine/backends.hpp"
#include "unifine/core_model.hpp"
#include "unifine/fine_grained.hpp"

namespace unifine {

/// Which fine-grained channels are computed, and whether dataset-provided
/// captions/boxes replace the captioner/detector. Disabled channels are
/// all-zero and their backends are never called.
struct ChannelToggles {
  bool use_regions = true;
  bool use_question_prior = true;
  bool use_caption_prior = true;
  bool use_provided_caption = false;
  bool use_provided_boxes = false;

  bool operator==(const ChannelToggles&) const = default;
};

/// Text the sample's fine-grained extraction is guided by: the gold answer
/// for QA2R, the question/hypothesis otherwise.
std::string query_for(const Sample& sample);

/// Provided caption when enabled, otherwise the captioner's output.
std::string resolve_caption(const Sample& sample, const Backends& backends,
                            const ChannelToggles& toggles);

/// Provided boxes when enabled, otherwise the detector's output.
std::vector<DetectedObject> resolve_objects(const Sample& sample, const Backends& backends,
                                            const ChannelToggles& toggles);

/// Query-guided top-N regions of the sample image (empty when regions are off).
RegionSet sample_regions(const Sample& sample, const FusionWeights& weights,
                         const Backends& backends, const ChannelToggles& toggles);

ScoreBundle build_score_bundle(const Sample& sample, std::span<const std::string> candidates,
                               const FusionWeights& weights, const Backends& backends,
                               const ChannelToggles& toggles);

/// totals[i] = global + k1*region + k2*question + k3*caption; label is the
/// argmax, lowest index on ties. Throws ContractError on NaN, naming the channel.
Prediction fuse_and_pick(const ScoreBundle& bundle, const FusionWeights& weights);

Prediction infer_vcr(const Sample& sample, const FusionWeights& weights, const Backends& backends,
                     const ChannelToggles& toggles);

struct VqaOutcome {
  Prediction prediction;
  DeclarativeTemplate declarative;
  FilterResult filter;  // empty when filtering is off
};

/// Route -> (filter) -> bundle -> fuse. Without filtering all routed
/// candidates are scored.
VqaOutcome infer_vqa(const Sample& sample, const AnswerVocabulary& vocab,
                     const FusionWeights& weights, const Backends& backends,
                     const ChannelToggles& toggles, bool use_answer_filter);

/// s_clip = global + k1 * best region; s_caption = cosine(caption, hypothesis).
EntailmentScores entailment_scores_for(const Sample& sample, const FusionWeights& weights,
                                       const Backends& backends, const ChannelToggles& toggles);

std::vector<EntailmentScores> compute_entailment_scores(std::span<const Sample> samples,
                                                        const FusionWeights& weights,
                                                        const Backends& backends,
                                                        const ChannelToggles& toggles);

/// Sorts ascending and averages three contiguous groups whose sizes differ by
/// at most one (the lower groups are the smaller ones). Needs >= 3 scores.
CentroidSet cluster_centroids(std::span<const double> scores);

/// Distances indexed C, N, E.
std::array<double, 3> entailment_distances(const EntailmentScores& scores,
                                           const CentroidSet& clip_centroids,
                                           const CentroidSet& caption_centroids, double k2);

/// Closest centroid under |clip - c| + k2 * |caption - c'|; ties prefer E, then N.
EntailmentLabel predict_entailment(const EntailmentScores& scores, const CentroidSet& clip_centroids,
                                   const CentroidSet& caption_centroids, double k2);

}  // namespace unifine
