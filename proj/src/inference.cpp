#include "unifine/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unifine/errors.hpp"

namespace unifine {

namespace {

template <typename F>
auto with_sample(const Sample& s, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const BackendError& e) {
    throw BackendError("sample " + s.id + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError("sample " + s.id + ": " + e.what());
  }
}

template <typename T>
const T& require(const std::shared_ptr<const T>& backend, std::string_view role) {
  if (!backend) throw ConfigError("no " + std::string(role) + " backend configured");
  return *backend;
}

void check_channel(const std::vector<double>& channel, std::size_t n, std::string_view name) {
  if (channel.size() != n)
    throw ContractError("fuse_and_pick: channel " + std::string(name) + " has length " +
                        std::to_string(channel.size()) + ", expected " + std::to_string(n));
  for (double v : channel)
    if (std::isnan(v)) throw ContractError("fuse_and_pick: NaN in channel " + std::string(name));
}

}  // namespace

std::string query_for(const Sample& sample) {
  if (sample.task == TaskKind::VcrQA2R) {
    if (!sample.gold_answer || sample.gold_answer->empty())
      throw InputError("sample " + sample.id + ": QA2R sample has no correct-answer text");
    return *sample.gold_answer;
  }
  if (sample.query.empty()) throw InputError("sample " + sample.id + ": empty query");
  return sample.query;
}

std::string resolve_caption(const Sample& sample, const Backends& backends,
                            const ChannelToggles& toggles) {
  if (toggles.use_provided_caption) {
    if (!sample.provided_caption || sample.provided_caption->empty())
      throw InputError("sample " + sample.id + ": no provided caption");
    return *sample.provided_caption;
  }
  return require(backends.captioner, "captioner").caption(ImageRef::parse(sample.image_ref));
}

std::vector<DetectedObject> resolve_objects(const Sample& sample, const Backends& backends,
                                            const ChannelToggles& toggles) {
  if (toggles.use_provided_boxes) {
    if (!sample.provided_boxes) throw InputError("sample " + sample.id + ": no provided boxes");
    return *sample.provided_boxes;
  }
  return require(backends.detector, "detector").detect(ImageRef::parse(sample.image_ref));
}

RegionSet sample_regions(const Sample& sample, const FusionWeights& weights,
                         const Backends& backends, const ChannelToggles& toggles) {
  return with_sample(sample, [&] {
    if (!toggles.use_regions || weights.n_regions == 0) return RegionSet{sample.image_ref, {}};
    const auto objects = resolve_objects(sample, backends, toggles);
    return select_regions(query_for(sample), objects, weights.n_regions,
                          require(backends.sentence, "sentence_embedder"), sample.image_ref);
  });
}

ScoreBundle build_score_bundle(const Sample& sample, std::span<const std::string> candidates,
                               const FusionWeights& weights, const Backends& backends,
                               const ChannelToggles& toggles) {
  if (candidates.empty()) throw ContractError("build_score_bundle: no candidates for sample " + sample.id);
  return with_sample(sample, [&] {
    const JointEmbedder& joint = require(backends.joint, "joint_embedder");
    const std::size_t n = candidates.size();
    ScoreBundle b = ScoreBundle::zeros(n);

    const JointVector image = joint.embed_image(ImageRef::parse(sample.image_ref));
    std::vector<JointVector> texts;
    texts.reserve(n);
    for (const auto& c : candidates) texts.push_back(joint.embed_text(c));
    for (std::size_t i = 0; i < n; ++i) b.s_clip_global[i] = alignment_score(image, texts[i]);

    if (toggles.use_regions && weights.n_regions > 0) {
      const RegionSet regions = sample_regions(sample, weights, backends, toggles);
      const auto region_vecs = embed_regions(regions, joint);
      for (std::size_t i = 0; i < n; ++i) b.s_clip_region[i] = best_region_alignment(texts[i], region_vecs);
    }
    if (toggles.use_question_prior)
      b.s_question = question_prior(query_for(sample), candidates, require(backends.sentence, "sentence_embedder"));
    if (toggles.use_caption_prior)
      b.s_caption = caption_prior(resolve_caption(sample, backends, toggles), candidates,
                                  require(backends.sentence, "sentence_embedder"));
    return b;
  });
}

Prediction fuse_and_pick(const ScoreBundle& bundle, const FusionWeights& weights) {
  const std::size_t n = bundle.size();
  if (n == 0) throw ContractError("fuse_and_pick: empty bundle");
  check_channel(bundle.s_clip_global, n, "s_clip_global");
  check_channel(bundle.s_clip_region, n, "s_clip_region");
  check_channel(bundle.s_question, n, "s_question");
  check_channel(bundle.s_caption, n, "s_caption");

  Prediction p;
  p.totals.resize(n);
  std::size_t best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // Fixed left-to-right evaluation order keeps totals bit-reproducible.
    double t = bundle.s_clip_global[i];
    t += weights.k1 * bundle.s_clip_region[i];
    t += weights.k2 * bundle.s_question[i];
    t += weights.k3 * bundle.s_caption[i];
    p.totals[i] = t;
    if (t > p.totals[best]) best = i;
  }
  p.label = best;
  p.bundle = bundle;
  return p;
}

Prediction infer_vcr(const Sample& sample, const FusionWeights& weights, const Backends& backends,
                     const ChannelToggles& toggles) {
  if (!is_vcr(sample.task)) throw ContractError("infer_vcr: sample " + sample.id + " is not a VCR sample");
  if (sample.candidates.size() != kVcrCandidates)
    throw InputError("sample " + sample.id + ": VCR needs 4 candidates, got " +
                     std::to_string(sample.candidates.size()));
  query_for(sample);  // QA2R without gold answer fails before any backend call
  Prediction p = fuse_and_pick(build_score_bundle(sample, sample.candidates, weights, backends, toggles), weights);
  p.sample_id = sample.id;
  p.task = sample.task;
  p.candidates = sample.candidates;
  p.answer = sample.candidates[std::get<std::size_t>(p.label)];
  return p;
}

VqaOutcome infer_vqa(const Sample& sample, const AnswerVocabulary& vocab,
                     const FusionWeights& weights, const Backends& backends,
                     const ChannelToggles& toggles, bool use_answer_filter) {
  if (!is_vqa(sample.task)) throw ContractError("infer_vqa: sample " + sample.id + " is not a VQA sample");
  VqaOutcome out;
  std::vector<std::string> candidates = route_candidates(sample.task, vocab);
  if (candidates.empty())
    throw InputError("sample " + sample.id + ": no vocabulary answers for " + std::string(to_string(sample.task)));
  if (use_answer_filter) {
    const AnswerScorer& scorer = require(backends.scorer, "answer_scorer");
    with_sample(sample, [&] {
      out.declarative = to_declarative(sample.query, sample.id, &scorer);
      out.filter = topk_answers(out.declarative, candidates, weights.top_k, scorer);
      return 0;
    });
    candidates = out.filter.answers();
  }
  out.prediction = fuse_and_pick(build_score_bundle(sample, candidates, weights, backends, toggles), weights);
  out.prediction.sample_id = sample.id;
  out.prediction.task = sample.task;
  out.prediction.answer = candidates[std::get<std::size_t>(out.prediction.label)];
  out.prediction.candidates = std::move(candidates);
  return out;
}

EntailmentScores entailment_scores_for(const Sample& sample, const FusionWeights& weights,
                                       const Backends& backends, const ChannelToggles& toggles) {
  if (sample.task != TaskKind::SnliVe)
    throw ContractError("compute_entailment_scores: sample " + sample.id + " is not SNLI-VE");
  return with_sample(sample, [&] {
    const JointEmbedder& joint = require(backends.joint, "joint_embedder");
    const std::string hypothesis = query_for(sample);
    const JointVector text = joint.embed_text(hypothesis);
    EntailmentScores es;
    es.s_clip = alignment_score(joint.embed_image(ImageRef::parse(sample.image_ref)), text);
    if (toggles.use_regions && weights.n_regions > 0) {
      const RegionSet regions = sample_regions(sample, weights, backends, toggles);
      es.s_clip += weights.k1 * best_region_alignment(text, embed_regions(regions, joint));
    }
    if (toggles.use_caption_prior) {
      const SentenceEmbedder& sent = require(backends.sentence, "sentence_embedder");
      es.s_caption = cosine(sent.embed(resolve_caption(sample, backends, toggles)), sent.embed(hypothesis));
    }
    return es;
  });
}

std::vector<EntailmentScores> compute_entailment_scores(std::span<const Sample> samples,
                                                        const FusionWeights& weights,
                                                        const Backends& backends,
                                                        const ChannelToggles& toggles) {
  std::vector<EntailmentScores> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(entailment_scores_for(s, weights, backends, toggles));
  return out;
}

CentroidSet cluster_centroids(std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n < 3) throw InputError("cluster_centroids: need at least 3 scores, got " + std::to_string(n));
  for (double s : scores)
    if (!std::isfinite(s)) throw InputError("cluster_centroids: non-finite score");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());

  const std::size_t low = n / 3;
  const std::size_t mid = n / 3 + (n % 3 == 2 ? 1 : 0);
  auto mean = [&](std::size_t begin, std::size_t count) {
    const double sum = std::accumulate(sorted.begin() + begin, sorted.begin() + begin + count, 0.0);
    return sum / static_cast<double>(count);
  };
  return CentroidSet{mean(0, low), mean(low, mid), mean(low + mid, n - low - mid)};
}

std::array<double, 3> entailment_distances(const EntailmentScores& scores,
                                           const CentroidSet& clip_centroids,
                                           const CentroidSet& caption_centroids, double k2) {
  std::array<double, 3> d{};
  for (EntailmentLabel label : kEntailmentLabels) {
    d[static_cast<std::size_t>(label)] =
        std::abs(clip_centroids.at(label) - scores.s_clip) +
        k2 * std::abs(caption_centroids.at(label) - scores.s_caption);
  }
  return d;
}

EntailmentLabel predict_entailment(const EntailmentScores& scores, const CentroidSet& clip_centroids,
                                   const CentroidSet& caption_centroids, double k2) {
  const auto d = entailment_distances(scores, clip_centroids, caption_centroids, k2);
  constexpr std::array<EntailmentLabel, 3> kPreference = {
      EntailmentLabel::Entailment, EntailmentLabel::Neutral, EntailmentLabel::Contradiction};
  EntailmentLabel best = kPreference[0];
  for (EntailmentLabel label : kPreference)
    if (d[static_cast<std::size_t>(label)] < d[static_cast<std::size_t>(best)]) best = label;
  return best;
}

}  // namespace unifine
