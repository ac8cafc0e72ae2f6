#include "unifine/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "unifine/digest.hpp"
#include "unifine/errors.hpp"

namespace unifine {

namespace fs = std::filesystem;

std::string_view to_string(TaskSelection task) {
  switch (task) {
    case TaskSelection::Vqa:
      return "vqa";
    case TaskSelection::VcrQ2A:
      return "vcr-q2a";
    case TaskSelection::VcrQA2R:
      return "vcr-qa2r";
    case TaskSelection::Ve:
      return "ve";
  }
  throw ContractError("unknown TaskSelection");
}

TaskSelection parse_task_selection(std::string_view name) {
  for (auto t : {TaskSelection::Vqa, TaskSelection::VcrQ2A, TaskSelection::VcrQA2R, TaskSelection::Ve})
    if (to_string(t) == name) return t;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected vqa, vcr-q2a, vcr-qa2r or ve)");
}

bool selects(TaskSelection selection, TaskKind kind) {
  switch (selection) {
    case TaskSelection::Vqa:
      return is_vqa(kind);
    case TaskSelection::VcrQ2A:
      return kind == TaskKind::VcrQ2A;
    case TaskSelection::VcrQA2R:
      return kind == TaskKind::VcrQA2R;
    case TaskSelection::Ve:
      return kind == TaskKind::SnliVe;
  }
  return false;
}

ChannelToggles RunConfig::channel_toggles() const {
  return ChannelToggles{toggles.use_regions, toggles.use_question_prior, toggles.use_caption_prior,
                        toggles.use_provided_caption, toggles.use_provided_boxes};
}

FusionWeights RunConfig::weights_for(TaskKind kind) const {
  FusionWeights w = weights;
  switch (kind) {
    case TaskKind::VqaYesNo:
      w.top_k = top_k.yes_no;
      break;
    case TaskKind::VqaNumber:
      w.top_k = top_k.number;
      break;
    case TaskKind::VqaOther:
      w.top_k = top_k.other;
      break;
    default:
      break;
  }
  return w;
}

std::vector<BackendRole> RunConfig::required_roles() const {
  std::vector<BackendRole> roles = {BackendRole::JointEmbedder};
  const bool regions = toggles.use_regions && weights.n_regions > 0;
  if (regions || toggles.use_question_prior || toggles.use_caption_prior)
    roles.push_back(BackendRole::SentenceEmbedder);
  if (toggles.use_caption_prior && !toggles.use_provided_caption) roles.push_back(BackendRole::Captioner);
  if (regions && !toggles.use_provided_boxes) roles.push_back(BackendRole::Detector);
  if (task == TaskSelection::Vqa && toggles.use_answer_filter) roles.push_back(BackendRole::AnswerScorer);
  return roles;
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> errors;
  auto need_file = [&](const fs::path& p, std::string_view what) {
    std::error_code ec;
    if (p.empty()) errors.push_back("data." + std::string(what) + " is not set");
    else if (!fs::is_regular_file(p, ec)) errors.push_back(std::string(what) + " not found: " + p.string());
  };
  if (toggles.use_answer_filter && task != TaskSelection::Vqa)
    errors.push_back("use_answer_filter applies to VQA only");
  if (data.format == "samples") {
    need_file(data.samples, "samples");
  } else if (data.format == "vqa") {
    need_file(data.questions, "questions");
    need_file(data.annotations, "annotations");
    if (!data.captions.empty()) need_file(data.captions, "captions");
  } else if (data.format == "snli-ve" || data.format == "vcr") {
    need_file(data.annotations, "annotations");
    if (!data.captions.empty()) need_file(data.captions, "captions");
  } else {
    errors.push_back("unknown data.format '" + data.format + "'");
  }
  if (task == TaskSelection::Vqa) need_file(data.vocabulary, "vocabulary");
  if (!data.images.empty() && !fs::is_directory(data.images))
    errors.push_back("image directory not found: " + data.images.string());
  for (BackendRole role : required_roles())
    if (!backends.count(role)) errors.push_back("no [backend." + std::string(to_string(role)) + "] section");
  for (const auto& [role, bc] : backends) {
    for (const char* file_key : {"fixture", "demonstrations"})
      if (auto it = bc.settings.find(file_key); it != bc.settings.end() && it->is_string() &&
                                                 !fs::is_regular_file(it->get<std::string>()))
        errors.push_back(std::string(file_key) + " not found: " + it->get<std::string>());
  }
  for (double k : {weights.k1, weights.k2, weights.k3})
    if (!std::isfinite(k)) errors.push_back("weights must be finite");
  if (workers == 0) errors.push_back("run.workers must be at least 1");
  for (const auto* c : {&clip_centroids, &caption_centroids})
    if (*c && !((*c)->contradiction <= (*c)->neutral && (*c)->neutral <= (*c)->entailment))
      errors.push_back("centroids must be ordered contradiction <= neutral <= entailment");
  return errors;
}

json RunConfig::canonical() const {
  json files = json::object();
  auto add_file = [&](std::string_view name, const fs::path& p) {
    if (p.empty()) return;
    std::error_code ec;
    json entry = {{"name", p.filename().string()}};
    if (fs::is_regular_file(p, ec)) entry["sha256"] = file_sha256_hex(p);
    files[std::string(name)] = entry;
  };
  add_file("samples", data.samples);
  add_file("questions", data.questions);
  add_file("annotations", data.annotations);
  add_file("captions", data.captions);
  add_file("vocabulary", data.vocabulary);
  json j;
  j["task"] = to_string(task);
  j["data"] = {{"format", data.format}, {"limit", data.limit}, {"files", files}};
  j["weights"] = {{"k1", weights.k1},
                  {"k2", weights.k2},
                  {"k3", weights.k3},
                  {"n_regions", weights.n_regions},
                  {"top_k", {{"yes_no", top_k.yes_no}, {"number", top_k.number}, {"other", top_k.other}}}};
  j["toggles"] = {{"use_regions", toggles.use_regions},
                  {"use_question_prior", toggles.use_question_prior},
                  {"use_caption_prior", toggles.use_caption_prior},
                  {"use_answer_filter", toggles.use_answer_filter},
                  {"use_provided_caption", toggles.use_provided_caption},
                  {"use_provided_boxes", toggles.use_provided_boxes}};
  j["centroids"] = json::object();
  if (clip_centroids) j["centroids"]["clip"] = *clip_centroids;
  if (caption_centroids) j["centroids"]["caption"] = *caption_centroids;
  j["backends"] = json::object();
  for (const auto& [role, bc] : backends) {
    j["backends"][std::string(to_string(role))] = {{"implementation", bc.implementation},
                                                   {"version", bc.version},
                                                   {"normalize", bc.normalize},
                                                   {"identity", bc.identity()}};
  }
  j["seed"] = seed;
  return j;
}

std::string RunConfig::digest() const { return sha256_hex(canonical().dump()); }

namespace {

struct Entry {
  std::string value;
  fs::path base;
};
using Sections = std::map<std::string, std::map<std::string, Entry>>;

Sections read_ini(const std::string& text, const fs::path& base) {
  boost::property_tree::ptree pt;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  Sections out;
  for (const auto& [section, child] : pt) {
    if (child.empty()) throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : child) out[section][key] = Entry{value.data(), base};
  }
  return out;
}

void apply_override(Sections& sections, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + text + "' is not section.key=value");
  const std::string lhs = text.substr(0, eq);
  const auto dot = lhs.rfind('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == lhs.size())
    throw ConfigError("override '" + text + "' is not section.key=value");
  sections[lhs.substr(0, dot)][lhs.substr(dot + 1)] = Entry{text.substr(eq + 1), fs::current_path()};
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

bool as_bool(const std::string& key, const std::string& v) {
  std::string s;
  for (char c : trim(v)) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config: " + key + " expects a boolean, got '" + v + "'");
}

double as_double(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  double out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

std::uint64_t as_uint(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

fs::path as_path(const Entry& e) {
  const fs::path p(trim(e.value));
  if (p.empty() || p.is_absolute() || e.base.empty()) return p;
  return (e.base / p).lexically_normal();
}

CentroidSet as_centroids(const std::string& key, const std::string& v) {
  std::vector<double> vals;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) vals.push_back(as_double(key, part));
  if (vals.size() != 3) throw ConfigError("config: " + key + " expects three comma-separated values");
  return CentroidSet{vals[0], vals[1], vals[2]};
}

json as_setting(const std::string& v) {
  const std::string s = trim(v);
  try {
    json j = json::parse(s);
    if (!j.is_discarded()) return j;
  } catch (const json::exception&) {
  }
  return s;
}

void unknown(const std::string& section, const std::string& key) {
  throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
}

}  // namespace

RunConfig parse_run_config(const std::string& ini_text, const fs::path& base_dir,
                           std::span<const std::string> overrides) {
  Sections sections = read_ini(ini_text, base_dir);
  for (const auto& o : overrides) apply_override(sections, o);

  RunConfig c;
  bool n_regions_set = false;
  for (const auto& [section, entries] : sections) {
    for (const auto& [key, e] : entries) {
      const std::string full = section + "." + key;
      const std::string& v = e.value;
      if (section == "task") {
        if (key == "name") c.task = parse_task_selection(trim(v));
        else unknown(section, key);
      } else if (section == "data") {
        if (key == "format") c.data.format = trim(v);
        else if (key == "samples") c.data.samples = as_path(e);
        else if (key == "questions") c.data.questions = as_path(e);
        else if (key == "annotations") c.data.annotations = as_path(e);
        else if (key == "captions") c.data.captions = as_path(e);
        else if (key == "images") c.data.images = as_path(e);
        else if (key == "vocabulary") c.data.vocabulary = as_path(e);
        else if (key == "limit") c.data.limit = as_uint(full, v);
        else unknown(section, key);
      } else if (section == "weights") {
        if (key == "k1") c.weights.k1 = as_double(full, v);
        else if (key == "k2") c.weights.k2 = as_double(full, v);
        else if (key == "k3") c.weights.k3 = as_double(full, v);
        else if (key == "n_regions") c.weights.n_regions = as_uint(full, v), n_regions_set = true;
        else if (key == "top_k_yesno") c.top_k.yes_no = as_uint(full, v);
        else if (key == "top_k_number") c.top_k.number = as_uint(full, v);
        else if (key == "top_k_other") c.top_k.other = as_uint(full, v);
        else unknown(section, key);
      } else if (section == "toggles") {
        bool* flag = key == "use_regions"            ? &c.toggles.use_regions
                     : key == "use_question_prior"   ? &c.toggles.use_question_prior
                     : key == "use_caption_prior"    ? &c.toggles.use_caption_prior
                     : key == "use_answer_filter"    ? &c.toggles.use_answer_filter
                     : key == "use_provided_caption" ? &c.toggles.use_provided_caption
                     : key == "use_provided_boxes"   ? &c.toggles.use_provided_boxes
                                                     : nullptr;
        if (!flag) unknown(section, key);
        *flag = as_bool(full, v);
      } else if (section == "centroids") {
        if (key == "clip") c.clip_centroids = as_centroids(full, v);
        else if (key == "caption") c.caption_centroids = as_centroids(full, v);
        else unknown(section, key);
      } else if (section == "run") {
        if (key == "cache") c.cache_dir = trim(v) == "none" ? fs::path{} : as_path(e);
        else if (key == "out") c.out_dir = as_path(e);
        else if (key == "seed") c.seed = as_uint(full, v);
        else if (key == "workers") c.workers = as_uint(full, v);
        else unknown(section, key);
      } else if (section.rfind("backend.", 0) == 0) {
        const BackendRole role = parse_backend_role(section.substr(8));
        BackendConfig& bc = c.backends[role];
        bc.role = role;
        if (key == "implementation") bc.implementation = trim(v);
        else if (key == "version") bc.version = trim(v);
        else if (key == "serial") bc.serial = as_bool(full, v);
        else if (key == "normalize") bc.normalize = as_bool(full, v);
        else if (key == "fixture" || key == "demonstrations") bc.settings[key] = as_path(e).string();
        else bc.settings[key] = as_setting(v);
      } else {
        throw ConfigError("config: unknown section [" + section + "]");
      }
    }
  }
  if (!n_regions_set)
    c.weights.n_regions = c.task == TaskSelection::VcrQ2A || c.task == TaskSelection::VcrQA2R ? 12 : 5;
  c.weights.top_k = c.top_k.other;
  for (auto& [role, bc] : c.backends)
    if (bc.implementation == "stub" && !bc.settings.contains("seed")) bc.settings["seed"] = c.seed;
  return c;
}

RunConfig load_run_config(const fs::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), fs::absolute(path).parent_path(), overrides);
}

void force_stub_backends(RunConfig& config) {
  for (BackendRole role : kBackendRoles) {
    BackendConfig& bc = config.backends[role];
    bc.role = role;
    if (bc.implementation != "stub") {
      bc.implementation = "stub";
      bc.settings.erase("url");
    }
    if (!bc.settings.contains("seed")) bc.settings["seed"] = config.seed;
  }
}

}  // namespace unifine
