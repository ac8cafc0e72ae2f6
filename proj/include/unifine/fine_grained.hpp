#pragma once

// Visual fine-grained signals (query-guided region selection and cropping)
// and textual ones (question and caption priors).

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unifine/backends.hpp"
#include "unifine/core_model.hpp"
#include "unifine/image.hpp"

namespace unifine {

struct ScoredRegion {
  DetectedObject object;
  double score = 0;                 // cosine(query, object phrase)
  std::size_t detection_index = 0;  // position in the detector output
};

/// Selected regions, best first.
struct RegionSet {
  std::string image_ref;
  std::vector<ScoredRegion> regions;

  bool empty() const { return regions.empty(); }
  std::size_t size() const { return regions.size(); }
};

/// "<attribute> <category>" (or just the category), lowercased with single spaces.
std::string object_phrase(const DetectedObject& object);

/// Top-n objects by cosine between the query and each object phrase, ties
/// broken by higher detector confidence then detection order.
RegionSet select_regions(std::string_view query, std::span<const DetectedObject> objects,
                         std::size_t n, const SentenceEmbedder& embedder,
                         std::string image_ref = {});

/// Locator of the box's intersection with the image. Throws InputError when
/// the intersection is empty.
ImageRef crop_region(const ImageRef& image, const Box& box);

std::vector<double> question_prior(std::string_view query, std::span<const std::string> candidates,
                                   const SentenceEmbedder& embedder);

std::vector<double> caption_prior(std::string_view caption, std::span<const std::string> candidates,
                                  const SentenceEmbedder& embedder);

/// Joint-space embeddings of every selected region's crop, in region order.
std::vector<JointVector> embed_regions(const RegionSet& regions, const JointEmbedder& embedder);

/// Max alignment of `text` over the region embeddings; 0 when there are none.
double best_region_alignment(const JointVector& text, std::span<const JointVector> regions);
double best_region_alignment(std::string_view text, const RegionSet& regions,
                             const JointEmbedder& embedder);

}  // namespace unifine
