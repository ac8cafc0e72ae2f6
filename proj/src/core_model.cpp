#include "unifine/core_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "unifine/errors.hpp"

namespace unifine {

namespace {

struct TaskName {
  TaskKind kind;
  std::string_view name;
};

constexpr std::array<TaskName, 6> kTaskNames = {{
    {TaskKind::VqaYesNo, "VQA_YESNO"},
    {TaskKind::VqaNumber, "VQA_NUMBER"},
    {TaskKind::VqaOther, "VQA_OTHER"},
    {TaskKind::VcrQ2A, "VCR_Q2A"},
    {TaskKind::VcrQA2R, "VCR_QA2R"},
    {TaskKind::SnliVe, "SNLI_VE"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string_view to_string(TaskKind task) {
  for (const auto& t : kTaskNames)
    if (t.kind == task) return t.name;
  throw ContractError("unknown TaskKind");
}

TaskKind parse_task_kind(std::string_view name) {
  for (const auto& t : kTaskNames)
    if (t.name == name) return t.kind;
  throw InputError("unknown task kind: " + std::string(name));
}

TaskFamily family_of(TaskKind task) {
  switch (task) {
    case TaskKind::VqaYesNo:
    case TaskKind::VqaNumber:
    case TaskKind::VqaOther:
      return TaskFamily::Vqa;
    case TaskKind::VcrQ2A:
    case TaskKind::VcrQA2R:
      return TaskFamily::Vcr;
    case TaskKind::SnliVe:
      return TaskFamily::SnliVe;
  }
  throw ContractError("unknown TaskKind");
}

std::string_view to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::Vqa:
      return "VQA";
    case TaskFamily::Vcr:
      return "VCR";
    case TaskFamily::SnliVe:
      return "SNLI-VE";
  }
  throw ContractError("unknown TaskFamily");
}

std::string_view to_string(EntailmentLabel label) {
  switch (label) {
    case EntailmentLabel::Contradiction:
      return "C";
    case EntailmentLabel::Neutral:
      return "N";
    case EntailmentLabel::Entailment:
      return "E";
  }
  throw ContractError("unknown EntailmentLabel");
}

EntailmentLabel parse_entailment_label(std::string_view text) {
  const std::string t = lower(text);
  if (t == "c" || t == "contradiction") return EntailmentLabel::Contradiction;
  if (t == "n" || t == "neutral") return EntailmentLabel::Neutral;
  if (t == "e" || t == "entailment") return EntailmentLabel::Entailment;
  throw InputError("unknown entailment label: '" + std::string(text) + "'");
}

double CentroidSet::at(EntailmentLabel label) const {
  switch (label) {
    case EntailmentLabel::Contradiction:
      return contradiction;
    case EntailmentLabel::Neutral:
      return neutral;
    case EntailmentLabel::Entailment:
      return entailment;
  }
  throw ContractError("unknown EntailmentLabel");
}

ScoreBundle ScoreBundle::zeros(std::size_t n) {
  return ScoreBundle{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
                     std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
}

std::vector<std::string> validate_sample(const Sample& s) {
  std::vector<std::string> v;
  if (s.id.empty()) v.emplace_back("sample id is empty");
  if (s.query.empty()) v.emplace_back("query is empty");
  if (s.image_ref.empty()) v.emplace_back("image_ref is empty");

  const TaskFamily fam = family_of(s.task);
  if (fam == TaskFamily::Vcr && s.candidates.size() != kVcrCandidates)
    v.push_back("candidate count " + std::to_string(s.candidates.size()) + " ≠ 4");
  if (fam == TaskFamily::SnliVe && !s.candidates.empty())
    v.emplace_back("SNLI-VE must have 0 candidates");
  for (std::size_t i = 0; i < s.candidates.size(); ++i)
    if (s.candidates[i].empty()) v.push_back("candidate " + std::to_string(i) + " is empty");

  switch (fam) {
    case TaskFamily::Vqa:
      if (const auto* ref = std::get_if<VqaReference>(&s.reference)) {
        if (ref->answers.size() != kVqaHumanAnswers)
          v.push_back("VQA reference has " + std::to_string(ref->answers.size()) +
                      " human answers, expected 10");
      } else if (!std::holds_alternative<std::monostate>(s.reference)) {
        v.emplace_back("VQA reference must be a list of human answers");
      }
      break;
    case TaskFamily::Vcr:
      if (const auto* ref = std::get_if<ChoiceReference>(&s.reference)) {
        if (ref->index >= s.candidates.size())
          v.push_back("reference index " + std::to_string(ref->index) + " out of range");
      } else if (!std::holds_alternative<std::monostate>(s.reference)) {
        v.emplace_back("VCR reference must be a candidate index");
      }
      if (s.task == TaskKind::VcrQA2R && (!s.gold_answer || s.gold_answer->empty()))
        v.emplace_back("QA2R sample has no correct-answer text");
      break;
    case TaskFamily::SnliVe:
      if (!std::holds_alternative<EntailmentLabel>(s.reference) &&
          !std::holds_alternative<std::monostate>(s.reference))
        v.emplace_back("SNLI-VE reference must be an entailment label");
      break;
  }

  if (s.provided_boxes) {
    for (std::size_t i = 0; i < s.provided_boxes->size(); ++i) {
      const auto& o = (*s.provided_boxes)[i];
      const std::string tag = "provided box " + std::to_string(i);
      if (o.category.empty()) v.push_back(tag + " has empty category");
      if (!(o.box.w > 0 && o.box.h > 0)) v.push_back(tag + " has non-positive extent");
      if (!(o.confidence >= 0.0 && o.confidence <= 1.0))
        v.push_back(tag + " confidence outside [0,1]");
    }
  }
  return v;
}

// ---- JSON ------------------------------------------------------------------

void to_json(json& j, const Box& b) { j = json::array({b.x, b.y, b.w, b.h}); }

void from_json(const json& j, Box& b) {
  if (!j.is_array() || j.size() != 4) throw InputError("box must be [x, y, w, h]");
  b = Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

void to_json(json& j, const DetectedObject& o) {
  j = json{{"box", o.box}, {"category", o.category}, {"confidence", o.confidence}};
  if (o.attribute) j["attribute"] = *o.attribute;
}

void from_json(const json& j, DetectedObject& o) {
  o.box = j.at("box").get<Box>();
  o.category = j.at("category").get<std::string>();
  o.attribute.reset();
  if (auto it = j.find("attribute"); it != j.end() && !it->is_null())
    o.attribute = it->get<std::string>();
  o.confidence = j.value("confidence", 1.0);
}

void to_json(json& j, const Sample& s) {
  j = json{{"id", s.id},
           {"task", to_string(s.task)},
           {"image_ref", s.image_ref},
           {"query", s.query},
           {"candidates", s.candidates}};
  if (s.provided_caption) j["provided_caption"] = *s.provided_caption;
  if (s.provided_boxes) j["provided_boxes"] = *s.provided_boxes;
  if (s.gold_answer) j["gold_answer"] = *s.gold_answer;
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, VqaReference>)
          j["reference"] = json{{"answers", r.answers}};
        else if constexpr (std::is_same_v<T, ChoiceReference>)
          j["reference"] = json{{"index", r.index}};
        else if constexpr (std::is_same_v<T, EntailmentLabel>)
          j["reference"] = json{{"label", to_string(r)}};
      },
      s.reference);
}

void from_json(const json& j, Sample& s) {
  s = Sample{};
  s.id = j.at("id").get<std::string>();
  s.task = parse_task_kind(j.at("task").get<std::string>());
  s.image_ref = j.at("image_ref").get<std::string>();
  s.query = j.at("query").get<std::string>();
  s.candidates = j.value("candidates", std::vector<std::string>{});
  if (auto it = j.find("provided_caption"); it != j.end() && !it->is_null())
    s.provided_caption = it->get<std::string>();
  if (auto it = j.find("provided_boxes"); it != j.end() && !it->is_null())
    s.provided_boxes = it->get<std::vector<DetectedObject>>();
  if (auto it = j.find("gold_answer"); it != j.end() && !it->is_null())
    s.gold_answer = it->get<std::string>();
  if (auto it = j.find("reference"); it != j.end() && !it->is_null()) {
    const json& r = *it;
    if (r.contains("answers"))
      s.reference = VqaReference{r["answers"].get<std::vector<std::string>>()};
    else if (r.contains("index"))
      s.reference = ChoiceReference{r["index"].get<std::size_t>()};
    else if (r.contains("label"))
      s.reference = parse_entailment_label(r["label"].get<std::string>());
    else
      throw InputError("sample " + s.id + ": unrecognized reference object");
  }
}

void to_json(json& j, const ScoreBundle& b) {
  j = json{{"s_clip_global", b.s_clip_global},
           {"s_clip_region", b.s_clip_region},
           {"s_question", b.s_question},
           {"s_caption", b.s_caption}};
}

void from_json(const json& j, ScoreBundle& b) {
  j.at("s_clip_global").get_to(b.s_clip_global);
  j.at("s_clip_region").get_to(b.s_clip_region);
  j.at("s_question").get_to(b.s_question);
  j.at("s_caption").get_to(b.s_caption);
}

void to_json(json& j, const FusionWeights& w) {
  j = json{{"k1", w.k1}, {"k2", w.k2}, {"k3", w.k3}, {"n_regions", w.n_regions}, {"top_k", w.top_k}};
}

void from_json(const json& j, FusionWeights& w) {
  j.at("k1").get_to(w.k1);
  j.at("k2").get_to(w.k2);
  j.at("k3").get_to(w.k3);
  j.at("n_regions").get_to(w.n_regions);
  j.at("top_k").get_to(w.top_k);
}

void to_json(json& j, const CentroidSet& c) {
  j = json{{"C", c.contradiction}, {"N", c.neutral}, {"E", c.entailment}};
}

void from_json(const json& j, CentroidSet& c) {
  j.at("C").get_to(c.contradiction);
  j.at("N").get_to(c.neutral);
  j.at("E").get_to(c.entailment);
}

void to_json(json& j, const EntailmentScores& e) {
  j = json{{"s_clip", e.s_clip}, {"s_caption", e.s_caption}};
}

void from_json(const json& j, EntailmentScores& e) {
  j.at("s_clip").get_to(e.s_clip);
  j.at("s_caption").get_to(e.s_caption);
}

void to_json(json& j, const Prediction& p) {
  j = json{{"sample_id", p.sample_id}, {"task", to_string(p.task)}};
  if (const auto* idx = std::get_if<std::size_t>(&p.label))
    j["label"] = *idx;
  else
    j["label"] = to_string(std::get<EntailmentLabel>(p.label));
  if (p.answer) j["answer"] = *p.answer;
  if (!p.candidates.empty()) j["candidates"] = p.candidates;
  if (p.bundle) j["scores"] = *p.bundle;
  if (!p.totals.empty()) j["totals"] = p.totals;
  if (p.entailment) j["entailment_scores"] = *p.entailment;
  if (!p.distances.empty()) j["distances"] = p.distances;
  if (!p.config_digest.empty()) j["config_digest"] = p.config_digest;
}

void from_json(const json& j, Prediction& p) {
  p = Prediction{};
  p.sample_id = j.at("sample_id").get<std::string>();
  p.task = parse_task_kind(j.at("task").get<std::string>());
  const json& label = j.at("label");
  if (label.is_string())
    p.label = parse_entailment_label(label.get<std::string>());
  else
    p.label = label.get<std::size_t>();
  if (auto it = j.find("answer"); it != j.end()) p.answer = it->get<std::string>();
  p.candidates = j.value("candidates", std::vector<std::string>{});
  if (auto it = j.find("scores"); it != j.end()) p.bundle = it->get<ScoreBundle>();
  p.totals = j.value("totals", std::vector<double>{});
  if (auto it = j.find("entailment_scores"); it != j.end())
    p.entailment = it->get<EntailmentScores>();
  p.distances = j.value("distances", std::vector<double>{});
  p.config_digest = j.value("config_digest", std::string{});
}

namespace {

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<T>());
    } catch (const json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<Sample> read_samples_jsonl(const std::filesystem::path& path) {
  return read_jsonl<Sample>(path);
}

void write_samples_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& s : samples) out << json(s).dump() << '\n';
}

std::vector<Prediction> read_predictions_jsonl(const std::filesystem::path& path) {
  return read_jsonl<Prediction>(path);
}

}  // namespace unifine
