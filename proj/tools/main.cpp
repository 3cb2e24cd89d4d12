// Copyright 2026 The plseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "plseg/cli.hpp"

namespace {

using namespace plseg;

std::vector<Strategy> parse_list(const std::vector<std::string>& names) {
  std::vector<Strategy> out;
  for (const std::string& n : names) out.push_back(parse_strategy(n));
  return out;
}

void add_run_options(CLI::App* c, RunConfig& cfg, std::vector<std::string>& names,
                     bool need_manifest) {
  auto* m = c->add_option("--manifest", cfg.manifest, "Dataset manifest (JSON)");
  if (need_manifest) m->required();
  c->add_option("--strategy", names, "Strategy name(s)");
  c->add_option("--preset", cfg.preset, "Hyperparameter preset: desk | paper");
  c->add_option("--seed", cfg.seed, "Global seed");
  c->add_option("--jobs", cfg.jobs, "Worker threads");
  c->add_option("--out", cfg.out_dir, "Output directory");
  c->add_option("--epochs", cfg.epochs, "Override the preset's epoch count");
  c->add_option("--steps", cfg.steps_per_epoch, "Override batches per epoch");
  c->add_option("--seeds", cfg.seeds, "Override the ensemble size");
  c->add_option("--patch", cfg.patch, "Override the cubic patch edge");
  c->add_flag("--pooled-ap", cfg.pooled_ap, "Report AP over voxels pooled across subjects");
}

Strategy single(const std::vector<std::string>& names) {
  if (names.size() != 1) throw ConfigError("exactly one --strategy is required");
  return parse_strategy(names.front());
}

int run(int argc, char** argv) {
  CLI::App app{"Segmentation from partially labelled volumes: training strategies, "
               "screening and evaluation"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::vector<std::string> names;

  SynthConfig synth;
  std::string synth_config;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic two-pathology dataset");
  c_synth->add_option("--config", synth_config, "SynthConfig JSON file");
  c_synth->add_option("--seed", synth.seed, "Generator seed");
  c_synth->add_option("--jobs", cfg.jobs, "Worker threads");
  c_synth->add_option("--out", cfg.out_dir, "Dataset directory")->required();

  auto* c_train = app.add_subcommand("train", "Train one strategy's ensemble");
  add_run_options(c_train, cfg, names, true);
  auto* c_pseudo = app.add_subcommand("pseudolabel", "Compose pseudolabels with the marginal ensemble");
  add_run_options(c_pseudo, cfg, names, true);

  std::string screen_preset = "isles";
  auto* c_screen = app.add_subcommand("screen", "Discard scans whose ISL is unclear in FLAIR");
  c_screen->add_option("--manifest", cfg.manifest, "Manifest with region maps")->required();
  c_screen->add_option("--preset", screen_preset, "Thresholds: isles | soop");
  c_screen->add_option("--out", cfg.out_dir, "Output directory");

  auto* c_predict = app.add_subcommand("predict", "Write test-split predictions of a strategy");
  add_run_options(c_predict, cfg, names, true);

  std::string pred_dir, label = "predictions";
  auto* c_eval = app.add_subcommand("evaluate", "Score a prediction directory");
  add_run_options(c_eval, cfg, names, true);
  c_eval->add_option("--predictions", pred_dir, "Directory written by predict");
  c_eval->add_option("--label", label, "Method label in the report");

  auto* c_compare = app.add_subcommand("compare", "Train and evaluate strategies, write the report");
  add_run_options(c_compare, cfg, names, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*c_synth) {
    if (!synth_config.empty()) {
      std::ifstream f(synth_config);
      if (!f) throw ConfigError("cannot read " + synth_config);
      std::stringstream s;
      s << f.rdbuf();
      const std::uint64_t seed = synth.seed;
      synth = SynthConfig::from_json(s.str());
      if (c_synth->count("--seed")) synth.seed = seed;
    }
    const Manifest m = cmd_synth(synth, cfg.out_dir, cfg.jobs);
    std::printf("wrote %zu records to %s/manifest.json\n", m.samples.size(), cfg.out_dir.c_str());
    return 0;
  }
  cfg.strategies = parse_list(names);
  if (*c_train) {
    const Strategy s = single(names);
    const TrainedStrategy t = cmd_train(cfg, s);
    std::printf("trained %s: %zu checkpoint(s)%s\n", std::string(strategy_name(s)).c_str(),
                t.models.size() + t.isl_models.size(),
                t.isl_models.empty() ? "" : " (WMH and ISL binary models)");
    return 0;
  }
  if (*c_pseudo) {
    std::printf("%s\n", cmd_pseudolabel(cfg).c_str());
    return 0;
  }
  if (*c_screen) {
    const ScreenSummary s = cmd_screen(cfg.manifest, screen_preset, cfg.out_dir);
    std::printf("kept %d, discarded %d (%d lesion components); %s\n", s.kept, s.discarded,
                s.components, s.manifest_path.c_str());
    return 0;
  }
  if (*c_predict) {
    std::printf("%s\n", cmd_predict(cfg, single(names)).c_str());
    return 0;
  }
  if (*c_eval) {
    if (pred_dir.empty()) {
      const Strategy s = single(names);
      pred_dir = cmd_predict(cfg, s);
      label = std::string(strategy_label(s));
    }
    std::printf("%s\n", cmd_evaluate(cfg, pred_dir, label).c_str());
    return 0;
  }
  if (*c_compare) {
    const CompareResult r = cmd_compare(cfg);
    for (const std::string& f : r.failed) std::fprintf(stderr, "failed: %s\n", f.c_str());
    std::printf("%s/report.md\n", r.out_dir.c_str());
    return r.failed.empty() ? 0 : 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return plseg::exit_code_for(e);
  }
}
