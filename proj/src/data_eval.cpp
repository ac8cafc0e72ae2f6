#include "unifine/data_eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_map>

#include "unifine/digest.hpp"
#include "unifine/errors.hpp"

namespace unifine {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// Empty or whitespace-only files parse to null.
json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  if (blank(text)) return nullptr;
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

template <typename F>
void for_each_jsonl(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON");
    }
    f(j, lineno);
  }
}

std::string id_list(const std::vector<std::string>& ids) {
  constexpr std::size_t kShown = 20;
  std::string out;
  for (std::size_t i = 0; i < std::min(ids.size(), kShown); ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > kShown) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

std::string id_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return v.dump();
}

// COCO-style {"annotations":[{"id","image_id","caption"}]}: lowest
// annotation id per image wins.
std::unordered_map<std::string, std::string> load_captions(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  std::unordered_map<std::string, std::pair<long long, std::string>> best;
  if (j.is_null()) return {};
  if (!j.contains("annotations") || !j["annotations"].is_array())
    throw InputError("captions file " + path.string() + " has no annotations array");
  long long position = 0;
  for (const auto& a : j["annotations"]) {
    if (!a.contains("image_id") || !a.contains("caption") || !a["caption"].is_string())
      throw InputError("malformed caption record in " + path.string());
    const std::string image = id_text(a["image_id"]);
    const long long rank = a.contains("id") && a["id"].is_number_integer() ? a["id"].get<long long>() : position;
    ++position;
    auto it = best.find(image);
    if (it == best.end() || rank < it->second.first) best[image] = {rank, a["caption"].get<std::string>()};
  }
  std::unordered_map<std::string, std::string> out;
  for (auto& [k, v] : best) out.emplace(k, std::move(v.second));
  return out;
}

TaskKind vqa_task_for(const std::string& answer_type) {
  if (answer_type == "yes/no") return TaskKind::VqaYesNo;
  if (answer_type == "number") return TaskKind::VqaNumber;
  if (answer_type == "other") return TaskKind::VqaOther;
  throw InputError("unknown answer_type '" + answer_type + "'");
}

std::string coco_image_name(const std::string& prefix, long long image_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%012lld", image_id);
  return prefix + buf + ".jpg";
}

std::string join_path(const std::filesystem::path& dir, const std::string& name) {
  return dir.empty() ? name : (dir / name).string();
}

// VCR text: tokens are words or lists of object indices.
std::string vcr_object_mention(const json& indices, const std::vector<std::string>& objects,
                               std::string_view annot_id) {
  std::vector<std::string> names;
  for (const auto& v : indices) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw InputError("VCR " + std::string(annot_id) + ": bad object reference " + v.dump());
    const auto idx = v.get<std::size_t>();
    if (idx >= objects.size())
      throw InputError("VCR " + std::string(annot_id) + ": object index " + std::to_string(idx) + " out of range");
    names.push_back(objects[idx] == "person" ? vcr_person_name(annot_id, idx) : "the " + objects[idx]);
  }
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) out += i + 1 == names.size() ? " and " : ", ";
    out += names[i];
  }
  return out;
}

bool attaches_left(const std::string& tok) {
  static const std::set<std::string> kPunct = {",", ".", "?", "!", ";", ":", "n't", ")"};
  return kPunct.count(tok) || (!tok.empty() && tok[0] == '\'');
}

std::string rewrite_person_tags(const std::string& s, std::string_view annot_id) {
  static const std::regex kTag(R"(\[person(\d+)\])");
  std::string out;
  auto last = s.cbegin();
  for (std::sregex_iterator it(s.begin(), s.end(), kTag), end; it != end; ++it) {
    out.append(last, (*it)[0].first);
    const std::size_t n = std::stoul((*it)[1].str());
    out += vcr_person_name(annot_id, n == 0 ? 0 : n - 1);
    last = (*it)[0].second;
  }
  out.append(last, s.cend());
  return out;
}

std::string vcr_text(const json& value, const std::vector<std::string>& objects, std::string_view annot_id) {
  if (value.is_string()) return rewrite_person_tags(value.get<std::string>(), annot_id);
  if (!value.is_array()) throw InputError("VCR " + std::string(annot_id) + ": text is neither string nor token list");
  std::string out;
  for (const auto& tok : value) {
    const std::string piece = tok.is_array() ? vcr_object_mention(tok, objects, annot_id)
                              : tok.is_string() ? rewrite_person_tags(tok.get<std::string>(), annot_id)
                                                : throw InputError("VCR " + std::string(annot_id) + ": bad token");
    if (piece.empty()) continue;
    if (!out.empty() && !attaches_left(piece) && out.back() != '(') out += ' ';
    out += piece;
  }
  return out;
}

std::vector<DetectedObject> vcr_boxes(const json& boxes, const std::vector<std::string>& objects,
                                      std::string_view annot_id) {
  std::vector<DetectedObject> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const json& b = boxes[i];
    if (!b.is_array() || b.size() < 4)
      throw InputError("VCR " + std::string(annot_id) + ": malformed box " + std::to_string(i));
    DetectedObject o;
    const double x1 = b[0].get<double>(), y1 = b[1].get<double>();
    const double x2 = b[2].get<double>(), y2 = b[3].get<double>();
    o.box = Box{x1, y1, x2 - x1, y2 - y1};
    o.category = i < objects.size() ? objects[i] : "object";
    if (b.size() > 4) o.confidence = std::clamp(b[4].get<double>(), 0.0, 1.0);
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace

std::string vcr_person_name(std::string_view annot_id, std::size_t index) {
  const std::size_t offset = content_hash64(annot_id) % kNeutralNames.size();
  return std::string(kNeutralNames[(offset + index) % kNeutralNames.size()]);
}

std::vector<Sample> load_vqa(const VqaSources& sources) {
  const json questions = read_json_file(sources.questions);
  if (questions.is_null()) return {};
  if (!questions.contains("questions") || !questions["questions"].is_array())
    throw InputError(sources.questions.string() + " has no questions array");
  const json annotations = read_json_file(sources.annotations);
  const json empty = json::array();
  const json& anns = annotations.is_object() && annotations.contains("annotations") ? annotations["annotations"] : empty;
  if (!annotations.is_null() && !anns.is_array())
    throw InputError(sources.annotations.string() + " has no annotations array");

  std::vector<std::string> malformed;
  std::map<long long, const json*> by_qid;
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const json& a = anns[i];
    if (!a.contains("question_id") || !a["question_id"].is_number_integer()) {
      malformed.push_back("annotation #" + std::to_string(i));
      continue;
    }
    by_qid[a["question_id"].get<long long>()] = &a;
  }

  std::unordered_map<std::string, std::string> captions;
  if (sources.captions) captions = load_captions(*sources.captions);

  std::vector<Sample> out;
  std::vector<std::string> unmatched;
  std::set<long long> seen;
  for (std::size_t i = 0; i < questions["questions"].size(); ++i) {
    const json& q = questions["questions"][i];
    if (!q.contains("question_id") || !q["question_id"].is_number_integer()) {
      malformed.push_back("question #" + std::to_string(i));
      continue;
    }
    const long long qid = q["question_id"].get<long long>();
    const std::string sid = std::to_string(qid);
    seen.insert(qid);
    const auto it = by_qid.find(qid);
    if (it == by_qid.end()) {
      unmatched.push_back(sid);
      continue;
    }
    const json& a = *it->second;
    try {
      Sample s;
      s.id = sid;
      const long long image_id = q.at("image_id").get<long long>();
      if (a.contains("image_id") && a["image_id"].get<long long>() != image_id) {
        unmatched.push_back(sid);
        continue;
      }
      s.task = vqa_task_for(a.at("answer_type").get<std::string>());
      s.query = q.at("question").get<std::string>();
      s.image_ref = join_path(sources.image_dir, coco_image_name(sources.image_prefix, image_id));
      VqaReference ref;
      for (const auto& ans : a.at("answers")) ref.answers.push_back(ans.at("answer").get<std::string>());
      if (s.query.empty() || ref.answers.size() != kVqaHumanAnswers) throw InputError("shape");
      s.reference = std::move(ref);
      if (sources.captions) {
        const auto c = captions.find(std::to_string(image_id));
        if (c != captions.end()) s.provided_caption = c->second;
      }
      out.push_back(std::move(s));
    } catch (const std::exception&) {
      malformed.push_back(sid);
    }
  }
  for (const auto& [qid, a] : by_qid)
    if (!seen.count(qid)) unmatched.push_back(std::to_string(qid));

  if (!malformed.empty()) throw InputError("malformed VQA records: " + id_list(malformed));
  if (!unmatched.empty()) throw InputError("question/annotation mismatch for ids: " + id_list(unmatched));
  return out;
}

std::vector<Sample> load_snli_ve(const std::filesystem::path& path,
                                 const std::optional<std::filesystem::path>& captions_path,
                                 const std::filesystem::path& image_dir) {
  std::unordered_map<std::string, std::string> captions;
  if (captions_path) captions = load_captions(*captions_path);
  std::vector<Sample> out;
  std::vector<std::string> malformed;
  for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    const std::string sid = j.contains("pairID") ? id_text(j["pairID"]) : "line " + std::to_string(lineno);
    Sample s;
    s.id = sid;
    s.task = TaskKind::SnliVe;
    try {
      s.query = j.at("sentence2").get<std::string>();
      const std::string image = id_text(j.at("Flickr30K_ID"));
      s.image_ref = join_path(image_dir, image + ".jpg");
      if (s.query.empty() || !j.contains("pairID")) throw InputError("shape");
      if (captions_path) {
        const auto c = captions.find(image);
        if (c != captions.end()) s.provided_caption = c->second;
      }
    } catch (const std::exception&) {
      malformed.push_back(sid);
      return;
    }
    if (!j.contains("gold_label") || !j["gold_label"].is_string())
      throw InputError("SNLI-VE " + sid + ": missing gold_label");
    try {
      s.reference = parse_entailment_label(j["gold_label"].get<std::string>());
    } catch (const InputError&) {
      throw InputError("SNLI-VE " + sid + ": unknown label '" + j["gold_label"].get<std::string>() + "'");
    }
    out.push_back(std::move(s));
  });
  if (!malformed.empty()) throw InputError("malformed SNLI-VE records: " + id_list(malformed));
  return out;
}

std::vector<Sample> load_vcr(const std::filesystem::path& path, const std::filesystem::path& image_dir) {
  std::vector<Sample> out;
  for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    if (!j.contains("annot_id"))
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": VCR record without annot_id");
    const std::string aid = id_text(j["annot_id"]);
    try {
      const auto objects = j.value("objects", std::vector<std::string>{});
      const json& answers = j.at("answer_choices");
      const json& rationales = j.at("rationale_choices");
      if (answers.size() != kVcrCandidates || rationales.size() != kVcrCandidates)
        throw InputError("VCR " + aid + ": candidate count " +
                         std::to_string(answers.size() != kVcrCandidates ? answers.size() : rationales.size()) +
                         " ≠ 4");
      const auto answer_label = j.at("answer_label").get<std::size_t>();
      const auto rationale_label = j.at("rationale_label").get<std::size_t>();
      if (answer_label >= kVcrCandidates || rationale_label >= kVcrCandidates)
        throw InputError("VCR " + aid + ": label out of range");

      std::optional<std::vector<DetectedObject>> boxes;
      if (j.contains("boxes")) {
        boxes = vcr_boxes(j["boxes"], objects, aid);
      } else if (j.contains("metadata_fn") && j["metadata_fn"].is_string()) {
        const std::filesystem::path meta = image_dir / j["metadata_fn"].get<std::string>();
        std::error_code ec;
        if (std::filesystem::is_regular_file(meta, ec)) {
          const json m = read_json_file(meta);
          if (m.is_object() && m.contains("boxes")) boxes = vcr_boxes(m["boxes"], objects, aid);
        }
      }

      Sample q2a;
      q2a.id = aid + "/q2a";
      q2a.task = TaskKind::VcrQ2A;
      q2a.image_ref = join_path(image_dir, j.at("img_fn").get<std::string>());
      q2a.query = vcr_text(j.at("question"), objects, aid);
      for (const auto& a : answers) q2a.candidates.push_back(vcr_text(a, objects, aid));
      q2a.gold_answer = q2a.candidates[answer_label];
      q2a.provided_boxes = boxes;
      q2a.reference = ChoiceReference{answer_label};

      Sample qa2r = q2a;
      qa2r.id = aid + "/qa2r";
      qa2r.task = TaskKind::VcrQA2R;
      qa2r.candidates.clear();
      for (const auto& r : rationales) qa2r.candidates.push_back(vcr_text(r, objects, aid));
      qa2r.reference = ChoiceReference{rationale_label};

      out.push_back(std::move(q2a));
      out.push_back(std::move(qa2r));
    } catch (const InputError&) {
      throw;
    } catch (const std::exception& e) {
      throw InputError("malformed VCR record " + aid + ": " + e.what());
    }
  });
  return out;
}

std::string normalize_answer(std::string_view text) {
  auto digit = [&](std::size_t i) { return i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); };
  std::string cleaned;
  cleaned.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (!std::ispunct(c)) {
      cleaned += static_cast<char>(std::tolower(c));
      continue;
    }
    const bool in_number = i > 0 && digit(i - 1) && digit(i + 1);
    if (c == '.' && in_number) cleaned += '.';
    else if ((c == ',' && in_number) || c == '\'') continue;
    else cleaned += ' ';
  }
  static const std::unordered_map<std::string, std::string> kNumbers = {
      {"zero", "0"}, {"one", "1"}, {"two", "2"},   {"three", "3"}, {"four", "4"}, {"five", "5"},
      {"six", "6"},  {"seven", "7"}, {"eight", "8"}, {"nine", "9"},  {"ten", "10"}};
  std::istringstream words(cleaned);
  std::string word, out;
  while (words >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (const auto it = kNumbers.find(word); it != kNumbers.end()) word = it->second;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

int vqa_soft_numerator(std::string_view predicted, std::span<const std::string> human_answers) {
  if (human_answers.size() != kVqaHumanAnswers)
    throw ContractError("vqa_soft_score: expected 10 human answers, got " + std::to_string(human_answers.size()));
  const std::string p = normalize_answer(predicted);
  std::array<bool, kVqaHumanAnswers> match{};
  int matches = 0;
  for (std::size_t i = 0; i < kVqaHumanAnswers; ++i) {
    match[i] = normalize_answer(human_answers[i]) == p;
    matches += match[i];
  }
  int numerator = 0;
  for (std::size_t i = 0; i < kVqaHumanAnswers; ++i) numerator += std::min(matches - int(match[i]), 3);
  return numerator;
}

double vqa_soft_score(std::string_view predicted, std::span<const std::string> human_answers) {
  return vqa_soft_numerator(predicted, human_answers) / 30.0;
}

namespace {

struct Bucket {
  std::string type;
  long long numerator = 0;
  std::size_t count = 0;
};

ReportRow finish(const Bucket& b, long long per_sample) {
  ReportRow r{b.type, 0.0, b.count};
  if (b.count) r.score = 100.0 * static_cast<double>(b.numerator) / static_cast<double>(per_sample * b.count);
  return r;
}

}  // namespace

Report evaluate(std::span<const Prediction> predictions, std::span<const Sample> samples, const json& config) {
  std::unordered_map<std::string, const Sample*> by_id;
  std::optional<TaskFamily> family;
  for (const auto& s : samples) {
    if (!by_id.emplace(s.id, &s).second) throw InputError("duplicate sample id " + s.id);
    const TaskFamily f = family_of(s.task);
    if (family && *family != f) throw InputError("evaluate: samples mix task families");
    family = f;
  }
  std::unordered_map<std::string, const Prediction*> pred_by_id;
  std::vector<std::string> unknown;
  for (const auto& p : predictions) {
    if (!by_id.count(p.sample_id)) unknown.push_back(p.sample_id);
    else if (!pred_by_id.emplace(p.sample_id, &p).second) throw InputError("duplicate prediction for " + p.sample_id);
  }
  if (!unknown.empty()) throw InputError("predictions for unknown samples: " + id_list(unknown));
  std::vector<std::string> missing;
  for (const auto& s : samples)
    if (!pred_by_id.count(s.id)) missing.push_back(s.id);
  if (!missing.empty()) throw InputError("missing predictions for: " + id_list(missing));

  Report report;
  report.family = family.value_or(TaskFamily::Vqa);
  report.config = config;
  for (const auto& p : predictions) {
    if (report.config_digest.empty()) report.config_digest = p.config_digest;
    else if (p.config_digest != report.config_digest)
      throw InputError("predictions come from different configurations");
  }

  std::vector<Bucket> buckets;
  long long per_sample = 1;
  switch (report.family) {
    case TaskFamily::Vqa:
      buckets = {{"Yes/No"}, {"Number"}, {"Other"}};
      per_sample = 30;
      break;
    case TaskFamily::SnliVe:
      buckets = {{"C"}, {"N"}, {"E"}};
      break;
    case TaskFamily::Vcr:
      buckets = {{"Q2A"}, {"QA2R"}};
      break;
  }

  for (const auto& s : samples) {
    const Prediction& p = *pred_by_id.at(s.id);
    if (p.task != s.task) throw InputError("prediction for " + s.id + " has task " + std::string(to_string(p.task)));
    switch (report.family) {
      case TaskFamily::Vqa: {
        const auto* ref = std::get_if<VqaReference>(&s.reference);
        if (!ref) throw InputError("sample " + s.id + " has no VQA answers");
        std::string answer;
        if (p.answer) answer = *p.answer;
        else if (const auto* idx = std::get_if<std::size_t>(&p.label); idx && *idx < p.candidates.size())
          answer = p.candidates[*idx];
        else throw InputError("prediction for " + s.id + " has no answer");
        Bucket& b = buckets[static_cast<std::size_t>(s.task) - static_cast<std::size_t>(TaskKind::VqaYesNo)];
        b.numerator += vqa_soft_numerator(answer, ref->answers);
        ++b.count;
        break;
      }
      case TaskFamily::SnliVe: {
        const auto* ref = std::get_if<EntailmentLabel>(&s.reference);
        if (!ref) throw InputError("sample " + s.id + " has no entailment label");
        const auto* got = std::get_if<EntailmentLabel>(&p.label);
        if (!got) throw InputError("prediction for " + s.id + " is not an entailment label");
        Bucket& b = buckets[static_cast<std::size_t>(*ref)];
        b.numerator += *got == *ref;
        ++b.count;
        break;
      }
      case TaskFamily::Vcr: {
        const auto* ref = std::get_if<ChoiceReference>(&s.reference);
        if (!ref) throw InputError("sample " + s.id + " has no gold index");
        const auto* got = std::get_if<std::size_t>(&p.label);
        if (!got) throw InputError("prediction for " + s.id + " is not a candidate index");
        Bucket& b = buckets[s.task == TaskKind::VcrQ2A ? 0 : 1];
        b.numerator += *got == ref->index;
        ++b.count;
        break;
      }
    }
  }

  Bucket all{"All"};
  for (const auto& b : buckets) {
    report.rows.push_back(finish(b, per_sample));
    all.numerator += b.numerator;
    all.count += b.count;
  }
  report.all = finish(all, per_sample);
  return report;
}

void to_json(json& j, const ReportRow& r) { j = json{{"type", r.type}, {"score", r.score}, {"count", r.count}}; }

void from_json(const json& j, ReportRow& r) {
  r.type = j.at("type").get<std::string>();
  r.score = j.at("score").get<double>();
  r.count = j.at("count").get<std::size_t>();
}

void to_json(json& j, const Report& r) {
  j = json{{"task", to_string(r.family)}, {"rows", r.rows},     {"all", r.all},
           {"config_digest", r.config_digest}, {"config", r.config}};
}

void from_json(const json& j, Report& r) {
  const std::string task = j.at("task").get<std::string>();
  if (task == "VQA") r.family = TaskFamily::Vqa;
  else if (task == "VCR") r.family = TaskFamily::Vcr;
  else if (task == "SNLI-VE") r.family = TaskFamily::SnliVe;
  else throw InputError("unknown report task '" + task + "'");
  r.rows = j.at("rows").get<std::vector<ReportRow>>();
  r.all = j.at("all").get<ReportRow>();
  r.config_digest = j.value("config_digest", "");
  r.config = j.value("config", json::object());
}

std::string format_report_table(const Report& report) {
  std::string out = std::string(to_string(report.family));
  if (!report.config_digest.empty()) out += "  config " + report.config_digest.substr(0, 12);
  out += "\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %8s %8s\n", "type", "score", "count");
  out += line;
  auto row = [&](const ReportRow& r) {
    std::snprintf(line, sizeof line, "%-8s %8.2f %8zu\n", r.type.c_str(), r.score, r.count);
    out += line;
  };
  for (const auto& r : report.rows) row(r);
  row(report.all);
  return out;
}

}  // namespace unifine
