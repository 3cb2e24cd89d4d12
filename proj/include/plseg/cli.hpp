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

// Batch workflows behind the `plseg` executable. Every command is a plain
// function so tests can drive it without a process boundary. Output layout
// below `out_dir`:
//
//   <strategy>/          checkpoints, strategy.json, train_log.jsonl
//   <strategy>/pred/     per-subject probability and label volumes
//   eval/ or compare/    CSVs, SVG plots, report.md

#ifndef PLSEG_CLI_HPP_
#define PLSEG_CLI_HPP_

#include <optional>
#include <string>
#include <vector>

#include "plseg/metrics.hpp"
#include "plseg/screening.hpp"
#include "plseg/strategies.hpp"
#include "plseg/synthgen.hpp"

namespace plseg {

inline constexpr int kCsvSchemaVersion = 1;

struct RunConfig {
  std::uint64_t seed = 0;
  std::string preset = "desk";  // desk | paper
  std::string manifest;
  std::vector<Strategy> strategies;
  std::string out_dir = "plseg_out";
  int jobs = 1;
  // Dataset-level AP from voxels pooled over subjects instead of the mean
  // of per-subject AP.
  bool pooled_ap = false;

  // Overrides applied on top of the preset.
  std::optional<int> epochs;
  std::optional<int> steps_per_epoch;
  std::optional<int> seeds;
  std::optional<int> patch;

  StrategyConfig strategy_config() const;
  // Preset name, seed and every effective hyperparameter.
  std::string to_json() const;
};

// Lines of "# key=value" written at the top of every CSV and report.
struct Provenance {
  std::vector<std::pair<std::string, std::string>> fields;

  static Provenance of(const RunConfig& cfg);
  void add(std::string key, std::string value);
  std::string csv_header() const;
};

Manifest cmd_synth(const SynthConfig& cfg, const std::string& out_dir, int jobs = 1);

// Trains one strategy and stores its ensemble under out_dir/<strategy>.
// Pseudolabels read the marginal checkpoints from out_dir/marginal; the TS
// variant reuses out_dir/multimodel when present.
TrainedStrategy cmd_train(const RunConfig& cfg, Strategy s);

TrainedStrategy load_trained(const std::string& dir);
void save_trained(const TrainedStrategy& t, const std::string& dir);

// Composes pseudolabels with the marginal ensemble under out_dir/marginal;
// returns the path of the written manifest.
std::string cmd_pseudolabel(const RunConfig& cfg);

struct ScreenSummary {
  std::string manifest_path;
  std::string diagnostics_path;
  int kept = 0;
  int discarded = 0;
  int components = 0;
};

// Records with an ISL mask are screened against their region map; the rest
// pass through. Writes screened_manifest.json and screening.csv.
ScreenSummary cmd_screen(const std::string& manifest_path, const std::string& preset,
                         const std::string& out_dir);

// Probability volumes for every test subject, written under
// out_dir/<strategy>/pred.
std::string cmd_predict(const RunConfig& cfg, Strategy s);

struct MethodResult {
  std::string label;  // report row label
  std::vector<MetricRow> rows;
  std::vector<std::string> errors;  // per-subject failures, evaluation continued
  // Pooled test-voxel AP per dataset group and overall, per class.
  std::vector<std::pair<std::string, std::array<std::optional<double>, 2>>> pooled_ap;
};

// Scores a prediction directory written by cmd_predict against the test
// split of `manifest_path`.
MethodResult evaluate_predictions(const std::string& pred_dir, const std::string& manifest_path,
                                  const std::string& label);

// Writes the CSVs, plots and report for one or more methods.
void write_evaluation(const std::vector<MethodResult>& methods, const RunConfig& cfg,
                      const Provenance& prov, const std::string& out_dir);

std::string cmd_evaluate(const RunConfig& cfg, const std::string& pred_dir,
                         const std::string& label);

struct CompareResult {
  std::string out_dir;
  std::vector<MethodResult> methods;
  std::vector<std::string> failed;  // strategy name: error
};

// Trains and evaluates every requested strategy (all eight when empty) on
// the shared test split and writes one consolidated report.
CompareResult cmd_compare(const RunConfig& cfg);

// Summary used for report cells, honouring the pooled-AP flag.
Summary summarise(const MethodResult& m, bool pooled_ap);

// Process exit code for an exception: 2 config, 3 data, 4 numerical, 1 other.
int exit_code_for(const std::exception& e);

}  // namespace plseg

#endif  // PLSEG_CLI_HPP_
