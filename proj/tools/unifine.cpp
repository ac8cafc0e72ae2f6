#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "unifine/errors.hpp"
#include "unifine/pipeline.hpp"

using namespace unifine;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string task;
  std::string out;
  std::string cache;
  std::vector<std::string> sets;
  bool stub = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "INI run configuration")->required()->check(CLI::ExistingFile);
  app->add_option("--task", c.task, "vqa | vcr-q2a | vcr-qa2r | ve");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--cache", c.cache, "cache directory ('none' disables caching)");
  app->add_option("--set", c.sets, "override, section.key=value")->take_all();
  app->add_flag("--stub", c.stub, "use stub backends for every role");
}

RunConfig resolve(const Common& c) {
  std::vector<std::string> overrides;
  if (!c.task.empty()) overrides.push_back("task.name=" + c.task);
  if (!c.out.empty()) overrides.push_back("run.out=" + c.out);
  if (!c.cache.empty()) overrides.push_back("run.cache=" + c.cache);
  overrides.insert(overrides.end(), c.sets.begin(), c.sets.end());
  RunConfig config = load_run_config(c.config, overrides);
  if (c.stub) force_stub_backends(config);
  return config;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw InputError("cannot write " + path.string());
}

int report_failures(const std::vector<SampleFailure>& failures) {
  for (const auto& f : failures) std::cerr << "failed " << f.sample_id << ": " << f.message << "\n";
  return failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unifine: zero-shot vision-language inference with fine-grained signals"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error");

  Common pre_opts, run_opts, abl_opts, sweep_opts, eval_opts;
  auto* pre = app.add_subcommand("precompute", "fill the cache with backend outputs");
  add_common(pre, pre_opts);

  auto* run = app.add_subcommand("run", "predict, write predictions and report");
  add_common(run, run_opts);

  auto* abl = app.add_subcommand("ablate", "run toggle presets and emit a comparison table");
  add_common(abl, abl_opts);
  std::vector<std::string> presets;
  abl->add_option("--presets", presets, "baseline w_question w_region w_caption w_all w_*_gt text_only");

  auto* sweep = app.add_subcommand("region-sweep", "run once per region count");
  add_common(sweep, sweep_opts);
  std::vector<std::size_t> n_values;
  std::size_t n_max = 15;
  sweep->add_option("--n", n_values, "region counts (default 0..--max)");
  sweep->add_option("--max", n_max, "largest region count when --n is absent");

  auto* eval = app.add_subcommand("evaluate", "re-score an existing predictions file");
  add_common(eval, eval_opts);
  std::string predictions_path;
  bool eval_json = false;
  eval->add_option("--predictions", predictions_path)->required()->check(CLI::ExistingFile);
  eval->add_flag("--json", eval_json, "print the report as JSON");

  auto* demo = app.add_subcommand("demo-fixture", "write a stub dataset with configs");
  std::string demo_dir;
  std::size_t demo_samples = 30;
  std::uint64_t demo_seed = 7;
  demo->add_option("--out", demo_dir)->required();
  demo->add_option("--samples", demo_samples, "samples per task");
  demo->add_option("--seed", demo_seed);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*pre) {
      Pipeline p(resolve(pre_opts));
      const auto s = p.precompute();
      std::printf("samples %zu  failed %zu  producer calls %llu  hits %llu\n", s.samples, s.failures.size(),
                  static_cast<unsigned long long>(s.stats.producer_calls),
                  static_cast<unsigned long long>(s.stats.hits));
      for (const auto& [op, count] : s.records)
        std::printf("  %-16s %llu records\n", op.c_str(), static_cast<unsigned long long>(count));
      return report_failures(s.failures);
    }
    if (*run) {
      Pipeline p(resolve(run_opts));
      const auto r = p.run(true);
      std::cout << format_report_table(r.report);
      std::cout << "predictions " << r.predictions_path.string() << "\nreport " << r.report_path.string() << "\n";
      return report_failures(r.failures);
    }
    if (*abl) {
      const RunConfig config = resolve(abl_opts);
      if (presets.empty()) presets = default_presets();
      const auto rows = ablate(config, presets);
      const std::string csv = ablation_csv(rows);
      const fs::path path = config.out_dir / ("ablation-" + config.digest().substr(0, 16) + ".csv");
      write_file(path, csv);
      std::cout << csv << "table " << path.string() << "\n";
      int status = 0;
      for (const auto& r : rows) status |= report_failures(r.result.failures);
      return status;
    }
    if (*sweep) {
      const RunConfig config = resolve(sweep_opts);
      if (n_values.empty())
        for (std::size_t n = 0; n <= n_max; ++n) n_values.push_back(n);
      const auto rows = region_sweep(config, n_values);
      const std::string csv = sweep_csv(rows);
      const fs::path path = config.out_dir / ("sweep-" + config.digest().substr(0, 16) + ".csv");
      write_file(path, csv);
      std::cout << csv << "table " << path.string() << "\n";
      int status = 0;
      for (const auto& r : rows) status |= report_failures(r.result.failures);
      return status;
    }
    if (*eval) {
      const Report report = evaluate_predictions(resolve(eval_opts), predictions_path);
      if (eval_json) std::cout << json(report).dump(2) << "\n";
      else std::cout << format_report_table(report);
      return 0;
    }
    if (*demo) {
      write_demo_fixture(demo_dir, demo_samples, demo_seed);
      std::cout << "wrote " << demo_dir << " (vqa.ini, ve.ini, vcr.ini)\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
