#include "unifine/pipeline.hpp"

#include <atomic>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "unifine/errors.hpp"
#include "unifine/image.hpp"
#include "unifine/inference.hpp"

namespace unifine {

namespace fs = std::filesystem;

namespace {

template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) f(i);
  };
  workers = std::min(workers, n);
  if (workers <= 1) {
    body();
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
}

// Runs f(i) for every sample; configuration errors abort the whole batch,
// anything else is recorded against the sample.
template <typename F>
std::vector<std::optional<std::string>> for_each_sample(std::size_t n, std::size_t workers, F&& f) {
  std::vector<std::optional<std::string>> errors(n);
  std::exception_ptr fatal;
  std::mutex mu;
  parallel_for(n, workers, [&](std::size_t i) {
    try {
      f(i);
    } catch (const ConfigError&) {
      std::lock_guard lock(mu);
      if (!fatal) fatal = std::current_exception();
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  if (fatal) std::rethrow_exception(fatal);
  return errors;
}

std::vector<Sample> load_task_samples(const RunConfig& c, std::vector<SampleFailure>* rejected) {
  std::vector<Sample> all;
  const std::optional<fs::path> captions =
      c.data.captions.empty() ? std::nullopt : std::optional<fs::path>(c.data.captions);
  if (c.data.format == "samples") all = read_samples_jsonl(c.data.samples);
  else if (c.data.format == "vqa") all = load_vqa(VqaSources{c.data.questions, c.data.annotations, captions, c.data.images});
  else if (c.data.format == "snli-ve") all = load_snli_ve(c.data.annotations, captions, c.data.images);
  else if (c.data.format == "vcr") all = load_vcr(c.data.annotations, c.data.images);
  else throw ConfigError("unknown data.format '" + c.data.format + "'");

  std::vector<Sample> out;
  for (auto& s : all) {
    if (!selects(c.task, s.task)) continue;
    if (c.data.limit && out.size() >= c.data.limit) break;
    if (c.data.format == "samples" && !c.data.images.empty() && !fs::path(s.image_ref).is_absolute())
      s.image_ref = (c.data.images / s.image_ref).string();
    const auto problems = validate_sample(s);
    if (!problems.empty()) {
      std::string msg;
      for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
      if (!rejected) throw InputError("sample " + s.id + ": " + msg);
      rejected->push_back({s.id, msg});
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string short_digest(const std::string& d) { return d.substr(0, 16); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw InputError("cannot write " + path.string());
}

json failures_json(const std::vector<SampleFailure>& failures) {
  json j = json::array();
  for (const auto& f : failures) j.push_back({{"sample_id", f.sample_id}, {"error", f.message}});
  return j;
}

}  // namespace

Pipeline::Pipeline(RunConfig config, const BackendRegistry& registry) : config_(std::move(config)) {
  const auto problems = config_.validate();
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  std::map<BackendRole, BackendConfig> used;
  for (BackendRole role : config_.required_roles()) used.emplace(role, config_.backends.at(role));
  Backends raw = registry.make_all(used);
  const fs::path cache_dir = Cache::resolve_dir(config_.cache_dir);
  if (!cache_dir.empty()) {
    cache_ = std::make_shared<Cache>(cache_dir);
    backends_ = with_cache(raw, cache_);
  } else {
    backends_ = raw;
  }
}

std::vector<Sample> Pipeline::load_samples(std::vector<SampleFailure>* rejected) const {
  return load_task_samples(config_, rejected);
}

PrecomputeSummary Pipeline::precompute() {
  if (!cache_) throw ConfigError("precompute needs a cache directory");
  PrecomputeSummary summary;
  const auto samples = load_samples(&summary.failures);
  summary.samples = samples.size();
  const ChannelToggles toggles = config_.channel_toggles();
  std::optional<AnswerVocabulary> vocab;
  if (config_.task == TaskSelection::Vqa) vocab = AnswerVocabulary::load(config_.data.vocabulary);

  const auto errors = for_each_sample(samples.size(), config_.workers, [&](std::size_t i) {
    const Sample& s = samples[i];
    const FusionWeights w = config_.weights_for(s.task);
    switch (config_.task) {
      case TaskSelection::Vqa:
        infer_vqa(s, *vocab, w, backends_, toggles, config_.toggles.use_answer_filter);
        break;
      case TaskSelection::VcrQ2A:
      case TaskSelection::VcrQA2R:
        infer_vcr(s, w, backends_, toggles);
        break;
      case TaskSelection::Ve:
        entailment_scores_for(s, w, backends_, toggles);
        break;
    }
  });
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (errors[i]) summary.failures.push_back({samples[i].id, *errors[i]});
  summary.stats = cache_->stats();
  summary.producer_calls = cache_->producer_calls_by_operation();
  summary.records = cache_->records_by_operation();
  return summary;
}

RunResult Pipeline::run(bool write_outputs) {
  RunResult result;
  result.digest = config_.digest();
  const auto samples = load_samples(&result.failures);
  const ChannelToggles toggles = config_.channel_toggles();
  const std::size_t n = samples.size();
  std::vector<std::optional<Prediction>> predictions(n);
  std::vector<json> filter_log(n);
  std::vector<std::optional<std::string>> errors;

  switch (config_.task) {
    case TaskSelection::Vqa: {
      const AnswerVocabulary vocab = AnswerVocabulary::load(config_.data.vocabulary);
      const bool filter = config_.toggles.use_answer_filter;
      errors = for_each_sample(n, config_.workers, [&](std::size_t i) {
        VqaOutcome o = infer_vqa(samples[i], vocab, config_.weights_for(samples[i].task), backends_, toggles, filter);
        if (filter) {
          json kept = json::array(), dropped = json::array();
          for (const auto& a : o.filter.kept) kept.push_back({a.answer, a.score});
          for (const auto& a : o.filter.dropped) dropped.push_back({a.answer, a.score});
          filter_log[i] = {{"sample_id", samples[i].id},
                           {"template", o.declarative.text},
                           {"out_of_coverage", o.declarative.out_of_coverage},
                           {"kept", kept},
                           {"dropped", dropped}};
        }
        predictions[i] = std::move(o.prediction);
      });
      break;
    }
    case TaskSelection::VcrQ2A:
    case TaskSelection::VcrQA2R:
      errors = for_each_sample(n, config_.workers, [&](std::size_t i) {
        predictions[i] = infer_vcr(samples[i], config_.weights_for(samples[i].task), backends_, toggles);
      });
      break;
    case TaskSelection::Ve: {
      std::vector<EntailmentScores> scores(n);
      errors = for_each_sample(n, config_.workers, [&](std::size_t i) {
        scores[i] = entailment_scores_for(samples[i], config_.weights, backends_, toggles);
      });
      // Centroids are a reduction over every successfully scored sample.
      std::vector<double> clip, caption;
      for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) continue;
        clip.push_back(scores[i].s_clip);
        caption.push_back(scores[i].s_caption);
      }
      result.clip_centroids = config_.clip_centroids ? *config_.clip_centroids : cluster_centroids(clip);
      if (config_.caption_centroids) result.caption_centroids = *config_.caption_centroids;
      else if (toggles.use_caption_prior) result.caption_centroids = cluster_centroids(caption);
      else result.caption_centroids = CentroidSet{};
      for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) continue;
        Prediction p;
        p.sample_id = samples[i].id;
        p.task = samples[i].task;
        p.entailment = scores[i];
        const auto d = entailment_distances(scores[i], *result.clip_centroids, *result.caption_centroids,
                                            config_.weights.k2);
        p.distances.assign(d.begin(), d.end());
        p.label = predict_entailment(scores[i], *result.clip_centroids, *result.caption_centroids,
                                     config_.weights.k2);
        predictions[i] = std::move(p);
      }
      break;
    }
  }

  std::vector<Sample> scored;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) {
      result.failures.push_back({samples[i].id, *errors[i]});
      continue;
    }
    predictions[i]->config_digest = result.digest;
    result.predictions.push_back(std::move(*predictions[i]));
    scored.push_back(samples[i]);
  }

  json report_config = config_.canonical();
  if (result.clip_centroids) {
    report_config["resolved_centroids"] = {{"clip", *result.clip_centroids}};
    if (result.caption_centroids) report_config["resolved_centroids"]["caption"] = *result.caption_centroids;
  }
  result.report = evaluate(result.predictions, scored, report_config);
  result.report.config_digest = result.digest;

  if (write_outputs) {
    fs::create_directories(config_.out_dir);
    const std::string tag = short_digest(result.digest);
    result.predictions_path = config_.out_dir / ("predictions-" + tag + ".jsonl");
    result.report_path = config_.out_dir / ("report-" + tag + ".json");
    std::string lines;
    for (const auto& p : result.predictions) lines += json(p).dump() + "\n";
    write_text(result.predictions_path, lines);
    json rj = result.report;
    rj["failures"] = failures_json(result.failures);
    write_text(result.report_path, rj.dump(2) + "\n");
    if (config_.task == TaskSelection::Vqa && config_.toggles.use_answer_filter) {
      std::string log;
      for (const auto& entry : filter_log)
        if (!entry.is_null()) log += entry.dump() + "\n";
      write_text(config_.out_dir / ("filter-" + tag + ".jsonl"), log);
    }
  }
  if (!result.failures.empty())
    spdlog::warn("{} of {} samples failed; first: {}: {}", result.failures.size(),
                 result.failures.size() + result.predictions.size(), result.failures.front().sample_id,
                 result.failures.front().message);
  return result;
}

RunConfig apply_preset(RunConfig c, std::string_view preset) {
  RunToggles& t = c.toggles;
  t.use_regions = t.use_question_prior = t.use_caption_prior = false;
  t.use_provided_boxes = t.use_provided_caption = false;
  if (preset == "baseline") {
  } else if (preset == "w_question") {
    t.use_question_prior = true;
  } else if (preset == "w_region" || preset == "w_region_gt") {
    t.use_regions = true;
    t.use_provided_boxes = preset == "w_region_gt";
  } else if (preset == "w_caption" || preset == "w_caption_gt") {
    t.use_caption_prior = true;
    t.use_provided_caption = preset == "w_caption_gt";
  } else if (preset == "w_all" || preset == "w_all_gt") {
    t.use_regions = t.use_question_prior = t.use_caption_prior = true;
    t.use_provided_boxes = t.use_provided_caption = preset == "w_all_gt";
  } else if (preset == "text_only") {
    t.use_question_prior = t.use_caption_prior = true;
  } else {
    throw ConfigError("unknown ablation preset '" + std::string(preset) + "'");
  }
  return c;
}

std::vector<std::string> default_presets() { return {"baseline", "w_question", "w_region", "w_caption", "w_all"}; }

std::vector<AblationRow> ablate(const RunConfig& config, std::span<const std::string> presets,
                                const BackendRegistry& registry) {
  if (presets.empty()) throw ConfigError("ablate: no presets given");
  std::vector<AblationRow> rows;
  for (const auto& preset : presets) {
    Pipeline p(apply_preset(config, preset), registry);
    rows.push_back({preset, p.run(true)});
  }
  return rows;
}

namespace {

std::string fmt_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string ablation_csv(std::span<const AblationRow> rows) {
  if (rows.empty()) return {};
  std::string out = "preset";
  for (const auto& r : rows.front().result.report.rows) out += "," + r.type;
  out += ",All,count,failures,digest\n";
  for (const auto& row : rows) {
    const Report& rep = row.result.report;
    out += row.preset;
    for (const auto& r : rep.rows) out += "," + fmt_score(r.score);
    out += "," + fmt_score(rep.all.score) + "," + std::to_string(rep.all.count) + "," +
           std::to_string(row.result.failures.size()) + "," + short_digest(row.result.digest) + "\n";
  }
  return out;
}

std::vector<SweepRow> region_sweep(const RunConfig& config, std::span<const std::size_t> n_values,
                                   const BackendRegistry& registry) {
  if (n_values.empty()) throw ConfigError("region_sweep: no region counts given");
  std::vector<SweepRow> rows;
  for (std::size_t n : n_values) {
    RunConfig c = config;
    c.weights.n_regions = n;
    Pipeline p(std::move(c), registry);
    rows.push_back({n, p.run(true)});
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  if (rows.empty()) return {};
  std::string out = "n_regions,All";
  for (const auto& r : rows.front().result.report.rows) out += "," + r.type;
  out += "\n";
  for (const auto& row : rows) {
    out += std::to_string(row.n_regions) + "," + fmt_score(row.result.report.all.score);
    for (const auto& r : row.result.report.rows) out += "," + fmt_score(r.score);
    out += "\n";
  }
  return out;
}

Report evaluate_predictions(const RunConfig& config, const fs::path& predictions) {
  const auto samples = load_task_samples(config, nullptr);
  const auto preds = read_predictions_jsonl(predictions);
  return evaluate(preds, samples, config.canonical());
}

// ---- demo fixture ----------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 8> kObjects = {"dog", "cat", "car", "tree", "person", "bench", "bus", "kite"};
constexpr std::array<std::string_view, 6> kColors = {"red", "blue", "green", "white", "black", "yellow"};

struct Dice {
  std::mt19937_64 gen;
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen() % n); }
  template <typename C>
  std::string pick(const C& c) {
    return std::string(c[below(c.size())]);
  }
};

std::string stub_backends_ini() {
  return "[backend.joint_embedder]\nimplementation = stub\ndim = 32\nnormalize = true\n\n"
         "[backend.sentence_embedder]\nimplementation = stub\ndim = 32\n\n"
         "[backend.captioner]\nimplementation = stub\n\n"
         "[backend.detector]\nimplementation = stub\nsynthesize = true\n\n"
         "[backend.answer_scorer]\nimplementation = stub\n";
}

}  // namespace

void write_demo_fixture(const fs::path& dir, std::size_t samples_per_task, std::uint64_t seed) {
  fs::create_directories(dir / "images");
  Dice dice{std::mt19937_64(seed)};

  constexpr int kImages = 8, kW = 48, kH = 32;
  std::vector<std::string> images;
  for (int i = 0; i < kImages; ++i) {
    Image img;
    img.width = kW;
    img.height = kH;
    img.channels = 3;
    img.pixels.assign(static_cast<std::size_t>(kW * kH * 3), 0);
    const unsigned char bg[3] = {static_cast<unsigned char>(dice.below(256)),
                                 static_cast<unsigned char>(dice.below(256)),
                                 static_cast<unsigned char>(dice.below(256))};
    for (int p = 0; p < kW * kH; ++p)
      for (int ch = 0; ch < 3; ++ch) img.pixels[p * 3 + ch] = bg[ch];
    for (int r = 0; r < 3; ++r) {
      const int x0 = static_cast<int>(dice.below(kW - 8)), y0 = static_cast<int>(dice.below(kH - 8));
      const int w = 4 + static_cast<int>(dice.below(8)), h = 4 + static_cast<int>(dice.below(8));
      const auto shade = static_cast<unsigned char>(dice.below(256));
      for (int y = y0; y < std::min(kH, y0 + h); ++y)
        for (int x = x0; x < std::min(kW, x0 + w); ++x)
          for (int ch = 0; ch < 3; ++ch) img.pixels[(y * kW + x) * 3 + ch] = static_cast<unsigned char>(shade + 40 * ch);
    }
    const std::string name = "img_" + std::to_string(i) + ".png";
    write_image(dir / "images" / name, img);
    images.push_back(name);
  }

  std::vector<std::string> vocab = {"yes", "no"};
  for (int i = 0; i <= 12; ++i) vocab.push_back(std::to_string(i));
  for (auto c : kColors) vocab.emplace_back(c);
  for (auto o : kObjects) vocab.emplace_back(o);
  for (auto extra : {"frisbee", "grass", "snow", "pizza", "tennis", "kitchen", "left", "right", "wood", "2 feet"})
    vocab.emplace_back(extra);
  {
    std::string text;
    for (const auto& a : vocab) text += a + "\n";
    write_text(dir / "vocabulary.txt", text);
  }

  auto boxes = [&] {
    std::vector<DetectedObject> out;
    for (int b = 0; b < 3; ++b) {
      DetectedObject o;
      o.box = Box{double(dice.below(30)), double(dice.below(20)), double(4 + dice.below(14)), double(4 + dice.below(10))};
      o.category = dice.pick(kObjects);
      o.attribute = dice.pick(kColors);
      o.confidence = 0.5 + 0.05 * static_cast<double>(dice.below(10));
      out.push_back(std::move(o));
    }
    return out;
  };

  std::vector<Sample> vqa;
  for (std::size_t i = 0; i < samples_per_task; ++i) {
    Sample s;
    s.id = "vqa-" + std::to_string(i);
    s.image_ref = dice.pick(images);
    const std::string obj = dice.pick(kObjects), color = dice.pick(kColors);
    VqaReference ref;
    switch (i % 3) {
      case 0:
        s.task = TaskKind::VqaYesNo;
        s.query = "Is there a " + obj + " in the picture?";
        for (int a = 0; a < 10; ++a) ref.answers.push_back(dice.below(3) ? "yes" : "no");
        break;
      case 1:
        s.task = TaskKind::VqaNumber;
        s.query = "How many " + obj + "s are there?";
        for (int a = 0; a < 10; ++a) ref.answers.push_back(std::to_string(1 + dice.below(3)));
        break;
      default:
        s.task = TaskKind::VqaOther;
        s.query = "What color is the " + obj + "?";
        for (int a = 0; a < 10; ++a) ref.answers.push_back(dice.below(2) ? color : dice.pick(kColors));
        break;
    }
    s.reference = ref;
    s.provided_caption = "a " + color + " " + obj + " next to a " + dice.pick(kObjects);
    s.provided_boxes = boxes();
    vqa.push_back(std::move(s));
  }
  write_samples_jsonl(dir / "vqa.jsonl", vqa);

  std::vector<Sample> ve;
  for (std::size_t i = 0; i < samples_per_task; ++i) {
    Sample s;
    s.id = "ve-" + std::to_string(i);
    s.task = TaskKind::SnliVe;
    s.image_ref = dice.pick(images);
    s.query = "The " + dice.pick(kObjects) + " is " + dice.pick(kColors) + ".";
    s.reference = kEntailmentLabels[i % 3];
    s.provided_caption = "a " + dice.pick(kColors) + " " + dice.pick(kObjects);
    s.provided_boxes = boxes();
    ve.push_back(std::move(s));
  }
  write_samples_jsonl(dir / "ve.jsonl", ve);

  auto four_objects = [&] {
    std::vector<std::string> picks;
    while (picks.size() < kVcrCandidates) {
      std::string o(dice.pick(kObjects));
      if (std::find(picks.begin(), picks.end(), o) == picks.end()) picks.push_back(std::move(o));
    }
    return picks;
  };
  std::vector<Sample> vcr;
  for (std::size_t i = 0; i < (samples_per_task + 1) / 2; ++i) {
    const std::string aid = "demo-" + std::to_string(i);
    const std::string who = vcr_person_name(aid, 0);
    Sample q2a;
    q2a.id = aid + "/q2a";
    q2a.task = TaskKind::VcrQ2A;
    q2a.image_ref = dice.pick(images);
    q2a.query = "Why is " + who + " standing near the " + dice.pick(kObjects) + "?";
    for (const auto& o : four_objects()) q2a.candidates.push_back(who + " is waiting for the " + o + " to move.");
    const std::size_t gold = dice.below(4);
    q2a.gold_answer = q2a.candidates[gold];
    q2a.reference = ChoiceReference{gold};
    q2a.provided_boxes = boxes();
    Sample qa2r = q2a;
    qa2r.id = aid + "/qa2r";
    qa2r.task = TaskKind::VcrQA2R;
    qa2r.candidates.clear();
    for (const auto& o : four_objects())
      qa2r.candidates.push_back("The " + o + " is " + dice.pick(kColors) + " and blocks the way.");
    qa2r.reference = ChoiceReference{dice.below(4)};
    vcr.push_back(std::move(q2a));
    vcr.push_back(std::move(qa2r));
  }
  write_samples_jsonl(dir / "vcr.jsonl", vcr);

  const std::string common = "[run]\ncache = cache\nout = out\n\n" + stub_backends_ini();
  write_text(dir / "vqa.ini", "[task]\nname = vqa\n\n[data]\nformat = samples\nsamples = vqa.jsonl\nimages = images\n"
                              "vocabulary = vocabulary.txt\n\n" + common);
  write_text(dir / "ve.ini", "[task]\nname = ve\n\n[data]\nformat = samples\nsamples = ve.jsonl\nimages = images\n\n"
                             "[toggles]\nuse_answer_filter = false\n\n" + common);
  write_text(dir / "vcr.ini", "[task]\nname = vcr-q2a\n\n[data]\nformat = samples\nsamples = vcr.jsonl\nimages = images\n\n"
                              "[toggles]\nuse_answer_filter = false\n\n" + common);
}

}  // namespace unifine
