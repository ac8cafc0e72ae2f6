#pragma once

// VQA answer filtering: question -> declarative template, answer-type routing
// over the answer vocabulary, and top-K selection with the answer scorer.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unifine/backends.hpp"
#include "unifine/core_model.hpp"

namespace unifine {

struct DeclarativeTemplate {
  std::string text;  // exactly one kSlotMarker
  std::string question_id;
  bool out_of_coverage = false;  // produced by the generic fallback
};

/// Converts a question to a declarative template. A configured converter is
/// tried first; otherwise the built-in rule table applies. Questions that no
/// rule covers become "The answer is <slot>. <question>" with
/// out_of_coverage set.
DeclarativeTemplate to_declarative(std::string_view question, std::string question_id = {},
                                   const AnswerScorer* converter = nullptr);

/// Cardinal words zero..twenty, plain or grouped/decimal digit strings, and
/// digit strings followed by a unit from a fixed list ("10 feet", "5ft").
bool classify_numeric(std::string_view answer);

class AnswerVocabulary {
 public:
  /// Throws InputError on duplicate or empty answers.
  explicit AnswerVocabulary(std::vector<std::string> answers);

  /// Plain text, one answer per line; order is preserved.
  static AnswerVocabulary load(const std::filesystem::path& path);

  const std::vector<std::string>& answers() const { return answers_; }
  const std::vector<std::size_t>& numeric_subset() const { return numeric_; }
  std::size_t size() const { return answers_.size(); }

 private:
  std::vector<std::string> answers_;
  std::vector<std::size_t> numeric_;
};

/// Yes/No -> {"yes","no"}; Number -> numeric subset; Other -> everything.
/// Throws ContractError for non-VQA tasks.
std::vector<std::string> route_candidates(TaskKind task, const AnswerVocabulary& vocab);

/// Top-K per answer type: 2 for Yes/No, 4 for Number, 10 for Other.
std::size_t default_top_k(TaskKind task);

struct ScoredAnswer {
  std::string answer;
  double score = 0;
  std::size_t index = 0;  // position in the input candidate list
};

struct FilterResult {
  std::vector<ScoredAnswer> kept;     // best first
  std::vector<ScoredAnswer> dropped;  // best first

  std::vector<std::string> answers() const;
};

/// Scores every candidate in the template and keeps the min(k, n) best,
/// ties broken by input order.
FilterResult topk_answers(const DeclarativeTemplate& tmpl, std::span<const std::string> candidates,
                          std::size_t k, const AnswerScorer& scorer);

}  // namespace unifine
