#include "unifine/fine_grained.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <map>
#include <numeric>

#include "unifine/errors.hpp"

namespace unifine {

namespace {

std::string normalize_words(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<double> text_prior(std::string_view anchor, std::span<const std::string> candidates,
                               const SentenceEmbedder& embedder, std::string_view op) {
  if (candidates.empty()) throw ContractError(std::string(op) + ": empty candidate list");
  const SentVector a = embedder.embed(anchor);
  std::map<std::string_view, SentVector> memo;
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    auto it = memo.find(c);
    if (it == memo.end()) it = memo.emplace(c, embedder.embed(c)).first;
    out.push_back(cosine(a, it->second));
  }
  return out;
}

}  // namespace

std::string object_phrase(const DetectedObject& object) {
  const std::string category = normalize_words(object.category);
  if (category.empty()) throw ContractError("object_phrase: empty category");
  if (object.attribute) {
    const std::string attribute = normalize_words(*object.attribute);
    if (!attribute.empty()) return attribute + " " + category;
  }
  return category;
}

RegionSet select_regions(std::string_view query, std::span<const DetectedObject> objects,
                         std::size_t n, const SentenceEmbedder& embedder, std::string image_ref) {
  RegionSet set{std::move(image_ref), {}};
  if (objects.empty() || n == 0) {
    if (query.empty()) throw InputError("select_regions: empty query");
    return set;
  }
  const SentVector q = embedder.embed(query);
  std::map<std::string, SentVector> phrase_vectors;
  std::vector<ScoredRegion> scored;
  scored.reserve(objects.size());
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string phrase = object_phrase(objects[i]);
    auto it = phrase_vectors.find(phrase);
    if (it == phrase_vectors.end()) it = phrase_vectors.emplace(phrase, embedder.embed(phrase)).first;
    scored.push_back(ScoredRegion{objects[i], cosine(q, it->second), i});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredRegion& a, const ScoredRegion& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.object.confidence != b.object.confidence) return a.object.confidence > b.object.confidence;
    return a.detection_index < b.detection_index;
  });
  if (scored.size() > n) scored.resize(n);
  set.regions = std::move(scored);
  return set;
}

ImageRef crop_region(const ImageRef& image, const Box& box) {
  const ImageSize size = image_size(image);
  const auto rect = clamp_to_pixels(box, size.width, size.height);
  if (!rect) throw InputError("crop_region: box does not intersect image " + image.str());
  ImageRef out{image.path, *rect};
  if (image.crop) {
    out.crop->x += image.crop->x;
    out.crop->y += image.crop->y;
  }
  return out;
}

std::vector<double> question_prior(std::string_view query, std::span<const std::string> candidates,
                                   const SentenceEmbedder& embedder) {
  return text_prior(query, candidates, embedder, "question_prior");
}

std::vector<double> caption_prior(std::string_view caption, std::span<const std::string> candidates,
                                  const SentenceEmbedder& embedder) {
  if (caption.empty()) throw ContractError("caption_prior: empty caption");
  return text_prior(caption, candidates, embedder, "caption_prior");
}

std::vector<JointVector> embed_regions(const RegionSet& regions, const JointEmbedder& embedder) {
  std::vector<JointVector> out;
  out.reserve(regions.size());
  if (regions.empty()) return out;
  const ImageRef parent = ImageRef::parse(regions.image_ref);
  for (const auto& r : regions.regions) out.push_back(embedder.embed_image(crop_region(parent, r.object.box)));
  return out;
}

double best_region_alignment(const JointVector& text, std::span<const JointVector> regions) {
  if (regions.empty()) return 0.0;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : regions) best = std::max(best, alignment_score(r, text));
  return best;
}

double best_region_alignment(std::string_view text, const RegionSet& regions,
                             const JointEmbedder& embedder) {
  if (regions.empty()) return 0.0;
  const auto vecs = embed_regions(regions, embedder);
  return best_region_alignment(embedder.embed_text(text), vecs);
}

}  // namespace unifine
