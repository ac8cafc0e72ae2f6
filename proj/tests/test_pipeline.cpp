#include <doctest.h>

#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "unifine/errors.hpp"
#include "unifine/pipeline.hpp"

using namespace unifine;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Demo {
  testing::TempDir dir;
  Demo(std::size_t n = 12) { write_demo_fixture(dir.path(), n); }
  RunConfig config(const std::string& task, std::vector<std::string> sets = {}) const {
    sets.push_back("run.cache=" + (dir / ("cache-" + task)).string());
    sets.push_back("run.out=" + (dir / ("out-" + task)).string());
    return load_run_config(dir / (task + ".ini"), sets);
  }
};

RunConfig baseline(RunConfig c) {
  c = apply_preset(std::move(c), "baseline");
  c.toggles.use_answer_filter = false;
  c.weights.k1 = c.weights.k2 = c.weights.k3 = 0;
  return c;
}

// Argmax of image-text alignment over the candidates each sample is scored on.
std::vector<std::size_t> global_argmax(const Pipeline& p, const std::vector<Sample>& samples) {
  const auto& joint = *p.backends().joint;
  std::optional<AnswerVocabulary> vocab;
  if (!p.config().data.vocabulary.empty()) vocab = AnswerVocabulary::load(p.config().data.vocabulary);
  std::vector<std::size_t> out;
  for (const auto& s : samples) {
    const auto cands = is_vqa(s.task) ? route_candidates(s.task, *vocab) : s.candidates;
    const auto image = joint.embed_image(ImageRef::parse(s.image_ref));
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const double v = alignment_score(image, joint.embed_text(cands[i]));
      if (v > best_score) best_score = v, best = i;
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("baseline equals global alignment argmax") {
    Demo demo;
    for (const char* task : {"vqa", "vcr"}) {
      Pipeline p(baseline(demo.config(task)));
      const auto samples = p.load_samples();
      const auto result = p.run(false);
      REQUIRE(result.failures.empty());
      REQUIRE(result.predictions.size() == samples.size());
      const auto expect = global_argmax(p, samples);
      for (std::size_t i = 0; i < samples.size(); ++i)
        CHECK(std::get<std::size_t>(result.predictions[i].label) == expect[i]);
    }
  }

  TEST_CASE("runs are byte-for-byte reproducible") {
    Demo demo;
    for (const char* task : {"vqa", "ve", "vcr"}) {
      auto cfg = demo.config(task);
      const auto first = Pipeline(cfg).run();
      const std::string preds = slurp(first.predictions_path), report = slurp(first.report_path);
      cfg.workers = 3;
      const auto second = Pipeline(cfg).run();
      CHECK(first.predictions_path == second.predictions_path);
      CHECK(slurp(second.predictions_path) == preds);
      CHECK(slurp(second.report_path) == report);
      CHECK_FALSE(preds.empty());
      CHECK(first.predictions_path.filename().string() == "predictions-" + cfg.digest().substr(0, 16) + ".jsonl");
    }
  }

  TEST_CASE("precompute fills the cache for run") {
    Demo demo;
    auto cfg = demo.config("vqa");
    const auto first = Pipeline(cfg).precompute();
    CHECK(first.samples == 12);
    CHECK(first.stats.producer_calls > 0);
    const auto second = Pipeline(cfg).precompute();
    CHECK(second.stats.producer_calls == 0);
    CHECK(second.stats.hits > 0);
    Pipeline runner(cfg);
    runner.run(false);
    CHECK(runner.cache()->stats().producer_calls == 0);
  }

  TEST_CASE("provided annotations bypass captioner and detector") {
    Demo demo;
    auto cfg = demo.config("vqa", {"toggles.use_provided_caption=true", "toggles.use_provided_boxes=true"});
    Pipeline p(cfg);
    CHECK_FALSE(p.backends().captioner);
    CHECK_FALSE(p.backends().detector);
    const auto s = p.precompute();
    CHECK_FALSE(s.producer_calls.count("caption"));
    CHECK_FALSE(s.producer_calls.count("detect"));
  }

  TEST_CASE("toggling a channel changes only that channel") {
    Demo demo;
    const auto off = Pipeline(apply_preset(demo.config("vcr"), "w_region")).run(false);
    const auto on = Pipeline(apply_preset(demo.config("vcr"), "w_all")).run(false);
    REQUIRE(off.predictions.size() == on.predictions.size());
    const FusionWeights weights = demo.config("vcr").weights;
    for (std::size_t i = 0; i < on.predictions.size(); ++i) {
      const auto& a = *off.predictions[i].bundle;
      const auto& b = *on.predictions[i].bundle;
      CHECK(a.s_clip_global == b.s_clip_global);
      CHECK(a.s_clip_region == b.s_clip_region);
      CHECK(a.s_question == std::vector<double>(a.size(), 0.0));
      CHECK(b.s_question != a.s_question);
      std::vector<double> totals;
      CHECK(std::get<std::size_t>(on.predictions[i].label) == oracle::fused_argmax(b, weights, &totals));
      CHECK(on.predictions[i].totals == totals);
    }
  }

  TEST_CASE("entailment runs cluster over the evaluation set") {
    Demo demo;
    const auto result = Pipeline(demo.config("ve")).run(false);
    REQUIRE(result.clip_centroids);
    std::vector<double> clip, caption;
    for (const auto& p : result.predictions) {
      clip.push_back(p.entailment->s_clip);
      caption.push_back(p.entailment->s_caption);
    }
    CHECK(*result.clip_centroids == cluster_centroids(clip));
    CHECK(*result.caption_centroids == cluster_centroids(caption));
    for (const auto& p : result.predictions)
      CHECK(std::get<EntailmentLabel>(p.label) ==
            oracle::entailment(*p.entailment, *result.clip_centroids, *result.caption_centroids, 1.0));
    CHECK(result.report.config.at("resolved_centroids").is_object());

    const auto fixed = Pipeline(demo.config("ve", {"centroids.clip=0.1,0.2,0.3", "centroids.caption=0,0,0"})).run(false);
    CHECK(*fixed.clip_centroids == CentroidSet{0.1, 0.2, 0.3});
  }

  TEST_CASE("sample failures are isolated") {
    Demo demo;
    auto cfg = demo.config("vcr");
    const fs::path victim = Pipeline(cfg).load_samples().front().image_ref;
    REQUIRE(fs::remove(victim));
    const auto result = Pipeline(cfg).run(true);
    CHECK_FALSE(result.failures.empty());
    CHECK_FALSE(result.predictions.empty());
    CHECK(result.report.all.count == result.predictions.size());
    for (const auto& f : result.failures) CHECK(f.message.find(victim.filename().string()) != std::string::npos);
    const json report = json::parse(slurp(result.report_path));
    CHECK(report.at("failures").size() == result.failures.size());
  }

  TEST_CASE("ablation and region sweep") {
    Demo demo(6);
    const auto cfg = demo.config("vcr");
    const auto presets = default_presets();
    const auto rows = ablate(cfg, presets);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].preset == "baseline");
    CHECK(rows[0].result.digest != rows[4].result.digest);
    const std::string csv = ablation_csv(rows);
    CHECK(csv.rfind("preset,Q2A,QA2R,All,count,failures,digest\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
    CHECK_THROWS_AS(apply_preset(cfg, "w_everything"), ConfigError);

    std::vector<std::size_t> ns(16);
    std::iota(ns.begin(), ns.end(), 0);
    const auto sweep = region_sweep(cfg, ns);
    REQUIRE(sweep.size() == 16);
    CHECK(sweep[0].n_regions == 0);
    CHECK(sweep[15].result.report.config.at("weights").at("n_regions") == 15);
    const std::string scsv = sweep_csv(sweep);
    CHECK(std::count(scsv.begin(), scsv.end(), '\n') == 17);
  }

  TEST_CASE("evaluate reads predictions back") {
    Demo demo;
    const auto cfg = demo.config("vqa");
    const auto result = Pipeline(cfg).run(true);
    const Report again = evaluate_predictions(cfg, result.predictions_path);
    CHECK(again.all.score == result.report.all.score);
    CHECK(again.config_digest == result.digest);
    for (std::size_t i = 0; i < again.rows.size(); ++i) CHECK(again.rows[i].count == result.report.rows[i].count);
  }

  TEST_CASE("invalid configurations are refused up front") {
    Demo demo;
    auto cfg = demo.config("ve");
    cfg.toggles.use_answer_filter = true;
    CHECK_THROWS_AS(Pipeline{cfg}, ConfigError);
    auto limited = demo.config("vqa", {"data.limit=5"});
    CHECK(Pipeline(limited).load_samples().size() == 5);
  }
}
