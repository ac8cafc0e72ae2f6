#include "unifine/answer_filter.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <functional>
#include <regex>
#include <set>
#include <sstream>

#include "unifine/errors.hpp"

namespace unifine {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
    } else {
      if (space) out.push_back(' ');
      space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::string strip_slots(std::string s) {
  for (auto pos = s.find(kSlotMarker); pos != std::string::npos; pos = s.find(kSlotMarker))
    s.erase(pos, kSlotMarker.size());
  return s;
}

std::string capitalize(std::string s) {
  if (!s.empty() && s.front() != '<') s.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(s.front())));
  return s;
}

using Match = std::smatch;
using Builder = std::function<std::string(const Match&)>;

struct Rule {
  std::regex pattern;
  Builder build;
};

std::regex icase(const char* re) { return std::regex(re, std::regex::icase | std::regex::ECMAScript); }

std::string low(const Match& m, int i) { return lower(m[i].str()); }

const std::set<std::string>& pronoun_subjects() {
  static const std::set<std::string> s = {"this", "that", "it",  "there", "he", "she", "they",
                                          "these", "those", "you", "we",    "i"};
  return s;
}

const std::set<std::string>& determiners() {
  static const std::set<std::string> s = {"the", "a",   "an",   "this", "that", "these", "those",
                                          "his", "her", "their", "its", "my",   "your",  "our",
                                          "some", "any", "all"};
  return s;
}

// "<slot>, <subject> <aux> <rest>" for yes/no questions.
std::string yes_no(const std::string& aux, const std::string& body) {
  std::istringstream ss(body);
  std::vector<std::string> words;
  for (std::string w; ss >> w;) words.push_back(w);
  std::size_t subject_len = 1;
  const std::string first = lower(words.front());
  if (pronoun_subjects().count(first) == 0 && determiners().count(first) != 0 && words.size() > 1)
    subject_len = 2;
  std::string out = std::string(kSlotMarker) + ",";
  for (std::size_t i = 0; i < subject_len; ++i) out += " " + words[i];
  out += " " + aux;
  for (std::size_t i = subject_len; i < words.size(); ++i) out += " " + words[i];
  return out;
}

const std::vector<Rule>& rules() {
  static const std::vector<Rule> r = [] {
    std::vector<Rule> v;
    auto add = [&](const char* re, Builder b) { v.push_back(Rule{icase(re), std::move(b)}); };
    const std::string slot(kSlotMarker);

    // counting
    add(R"(^how many (.+?) (?:are|is) there(?: (.+))?$)", [=](const Match& m) {
      std::string s = "There are " + slot + " " + m[1].str();
      if (m[2].matched) s += " " + m[2].str();
      return s;
    });
    add(R"(^how many (.+?) (?:does|do|did) (.+?) have$)",
        [=](const Match& m) { return m[2].str() + " has " + slot + " " + m[1].str(); });
    add(R"(^how many (.+?) (?:are|is) (.+)$)",
        [=](const Match& m) { return "There are " + slot + " " + m[1].str() + " " + m[2].str(); });
    add(R"(^how many (.+)$)", [=](const Match& m) { return "There are " + slot + " " + m[1].str(); });

    // measures
    add(R"(^how (old|tall|big|long|far|fast|high|deep|heavy|large) (is|are) (.+)$)",
        [=](const Match& m) { return m[3].str() + " " + low(m, 2) + " " + slot + " " + low(m, 1); });
    add(R"(^how (is|are) (.+)$)", [=](const Match& m) { return m[2].str() + " " + low(m, 1) + " " + slot; });

    // colors and kinds
    add(R"(^what (?:color|colour) (is|are) (.+)$)",
        [=](const Match& m) { return m[2].str() + " " + low(m, 1) + " " + slot; });
    add(R"(^what (?:color|colour|kind of|type of|sort of|brand of|breed of) (.+?) (is|are) (.+?) (\w+ing)$)",
        [=](const Match& m) {
          return m[3].str() + " " + low(m, 2) + " " + m[4].str() + " a " + slot + " " + m[1].str();
        });
    add(R"(^what (?:kind|type|sort|breed|brand) of (.+?) (?:is|was) (this|that|it)$)",
        [=](const Match& m) { return m[2].str() + " is a " + slot + " " + m[1].str(); });
    add(R"(^what (?:kind|type|sort|breed|brand) of (.+?) (?:are|were) (these|those|they)$)",
        [=](const Match& m) { return m[2].str() + " are " + slot + " " + m[1].str(); });
    add(R"(^what (?:kind|type|sort) of (.+?) (is|are) (.+)$)",
        [=](const Match& m) { return "The " + m[1].str() + " " + m[3].str() + " " + low(m, 2) + " " + slot; });

    // what + verb
    add(R"(^what (is|are) (.+?) made of$)",
        [=](const Match& m) { return m[2].str() + " " + low(m, 1) + " made of " + slot; });
    add(R"(^what (is|are) (.+?) (\w+ing)$)",
        [=](const Match& m) { return m[2].str() + " " + low(m, 1) + " " + m[3].str() + " " + slot; });
    add(R"(^what (does|do|did) (.+?) (\w+)$)",
        [=](const Match& m) { return m[2].str() + " " + low(m, 1) + " " + m[3].str() + " " + slot; });
    add(R"(^what (\w+) (is|are) (this|that|it|these|those|shown|pictured|here)$)",
        [=](const Match& m) { return "The " + m[1].str() + " " + low(m, 2) + " " + slot; });
    add(R"(^what (\w+) (is|are) (.+?) (\w+ing)$)",
        [=](const Match& m) { return m[3].str() + " " + low(m, 2) + " " + m[4].str() + " " + slot; });
    add(R"(^what (\w+) (is|are) (.+)$)",
        [=](const Match& m) { return "The " + m[1].str() + " of " + m[3].str() + " " + low(m, 2) + " " + slot; });
    add(R"(^what (?!(?:is|are|was|were|do|does|did) )(\w+) (\w+s) (.+)$)",
        [=](const Match& m) { return "The " + slot + " " + m[1].str() + " " + m[2].str() + " " + m[3].str(); });
    add(R"(^what (is|are) (.+)$)", [=](const Match& m) { return m[2].str() + " " + low(m, 1) + " " + slot; });

    // where / who
    add(R"(^where (is|are) (.+)$)", [=](const Match& m) { return m[2].str() + " " + low(m, 1) + " in " + slot; });
    add(R"(^who (is|are|was|were) (.+)$)", [=](const Match& m) { return slot + " " + low(m, 1) + " " + m[2].str(); });

    // yes / no
    add(R"(^(is|are|was|were|does|do|did|can|could|will|would|should|has|have|had) (.+)$)",
        [=](const Match& m) { return yes_no(low(m, 1), m[2].str()); });
    return v;
  }();
  return r;
}

std::optional<std::string> apply_rules(const std::string& q) {
  for (const auto& rule : rules()) {
    Match m;
    if (std::regex_match(q, m, rule.pattern)) return capitalize(collapse_spaces(rule.build(m)));
  }
  return std::nullopt;
}

}  // namespace

DeclarativeTemplate to_declarative(std::string_view question, std::string question_id,
                                   const AnswerScorer* converter) {
  const std::string original = collapse_spaces(strip_slots(trim(question)));
  if (original.empty()) throw InputError("to_declarative: empty question");

  auto fallback = [&] {
    return DeclarativeTemplate{"The answer is " + std::string(kSlotMarker) + ". " + original,
                               std::move(question_id), true};
  };

  if (converter != nullptr) {
    if (auto t = converter->to_declarative(original)) {
      if (count_slots(*t) == 1 && trim(*t) != kSlotMarker)
        return DeclarativeTemplate{trim(*t), std::move(question_id), false};
      return fallback();
    }
  }

  std::string q = original;
  while (!q.empty() && (q.back() == '?' || q.back() == '.' || q.back() == ' ')) q.pop_back();
  if (q.empty()) return fallback();
  if (lower(q.substr(0, 6)) == "which ") q = "what " + q.substr(6);

  if (auto t = apply_rules(q)) return DeclarativeTemplate{*t, std::move(question_id), false};
  return fallback();
}

// ---- numeric answers -------------------------------------------------------

bool classify_numeric(std::string_view answer) {
  static const std::set<std::string> kCardinals = {
      "zero",    "one",      "two",      "three",   "four",     "five",    "six",
      "seven",   "eight",    "nine",     "ten",     "eleven",   "twelve",  "thirteen",
      "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty"};
  static const std::regex kNumber(R"(^(\d+|\d{1,3}(,\d{3})+|\d*\.\d+)$)");
  static const std::regex kWithUnit(
      R"(^(\d+|\d{1,3}(,\d{3})+|\d*\.\d+) ?(feet|foot|ft|inches|inch|in|cm|mm|m|meters|meter|km|miles|mile|mph|kph|lbs|lb|pounds|pound|kg|oz|years|year|months|month|weeks|week|days|day|hours|hour|hrs|minutes|minute|mins|min|seconds|second|sec|degrees|degree|%|percent|cents|cent|dollars|dollar)$)");
  const std::string a = lower(trim(answer));
  if (a.empty()) return false;
  if (kCardinals.count(a) != 0) return true;
  return std::regex_match(a, kNumber) || std::regex_match(a, kWithUnit);
}

// ---- vocabulary and routing ------------------------------------------------

AnswerVocabulary::AnswerVocabulary(std::vector<std::string> answers) : answers_(std::move(answers)) {
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < answers_.size(); ++i) {
    if (answers_[i].empty()) throw InputError("answer vocabulary: empty answer at index " + std::to_string(i));
    if (!seen.insert(answers_[i]).second)
      throw InputError("answer vocabulary: duplicate answer '" + answers_[i] + "'");
    if (classify_numeric(answers_[i])) numeric_.push_back(i);
  }
}

AnswerVocabulary AnswerVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open answer vocabulary: " + path.string());
  std::vector<std::string> answers;
  for (std::string line; std::getline(in, line);) {
    std::string a = trim(line);
    if (!a.empty()) answers.push_back(std::move(a));
  }
  return AnswerVocabulary(std::move(answers));
}

std::vector<std::string> route_candidates(TaskKind task, const AnswerVocabulary& vocab) {
  if (vocab.size() == 0) throw ContractError("route_candidates: empty vocabulary");
  switch (task) {
    case TaskKind::VqaYesNo:
      return {"yes", "no"};
    case TaskKind::VqaNumber: {
      std::vector<std::string> out;
      out.reserve(vocab.numeric_subset().size());
      for (std::size_t i : vocab.numeric_subset()) out.push_back(vocab.answers()[i]);
      return out;
    }
    case TaskKind::VqaOther:
      return vocab.answers();
    default:
      throw ContractError("route_candidates: task " + std::string(to_string(task)) +
                          " does not use the answer vocabulary");
  }
}

std::size_t default_top_k(TaskKind task) {
  switch (task) {
    case TaskKind::VqaYesNo:
      return 2;
    case TaskKind::VqaNumber:
      return 4;
    case TaskKind::VqaOther:
      return 10;
    default:
      throw ContractError("default_top_k: not a VQA task");
  }
}

std::vector<std::string> FilterResult::answers() const {
  std::vector<std::string> out;
  out.reserve(kept.size());
  for (const auto& a : kept) out.push_back(a.answer);
  return out;
}

FilterResult topk_answers(const DeclarativeTemplate& tmpl, std::span<const std::string> candidates,
                          std::size_t k, const AnswerScorer& scorer) {
  if (k == 0) throw ContractError("topk_answers: k must be >= 1");
  if (candidates.empty()) throw ContractError("topk_answers: no candidates");
  const std::vector<double> scores = scorer.score_answers(tmpl.text, candidates);
  std::vector<ScoredAnswer> all;
  all.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) all.push_back({candidates[i], scores[i], i});
  std::stable_sort(all.begin(), all.end(),
                   [](const ScoredAnswer& a, const ScoredAnswer& b) { return a.score > b.score; });
  FilterResult r;
  const std::size_t keep = std::min(k, all.size());
  r.kept.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + keep));
  r.dropped.assign(std::make_move_iterator(all.begin() + keep), std::make_move_iterator(all.end()));
  return r;
}

}  // namespace unifine
