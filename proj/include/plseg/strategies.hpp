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

// Training strategies for partially labelled data, and the inference-time
// pieces they need: binary-model fusion, temperature scaling and pseudolabel
// generation.

#ifndef PLSEG_STRATEGIES_HPP_
#define PLSEG_STRATEGIES_HPP_

#include <functional>
#include <string>
#include <vector>

#include "plseg/manifest.hpp"
#include "plseg/model.hpp"

namespace plseg {

enum class Strategy {
  kMulticlass,
  kMultiModel,
  kMultiModelTs,
  kClassConditional,
  kPseudolabels,
  kPhased,
  kClassAdaptive,
  kMarginal,
};

// CLI spelling, e.g. "multimodel-ts".
std::string_view strategy_name(Strategy s);
// Row label used in reports, e.g. "Multi-model (TS)".
std::string_view strategy_label(Strategy s);
// Throws ConfigError listing the valid names.
Strategy parse_strategy(std::string_view name);
// Report row order.
const std::vector<Strategy>& all_strategies();
// Orders a strategy list so dependencies run first (the multiclass baseline
// leads, multi-model precedes its TS variant, marginal precedes pseudolabels).
std::vector<Strategy> execution_order(const std::vector<Strategy>& requested);

// b = min(bg_A, bg_B), then (b, p_WMH, p_ISL) normalised per voxel.
ProbVolume fuse_binary_predictions(const ProbVolume& p_wmh_model, const ProbVolume& p_isl_model);

// Flattened voxels for calibration: logits row-major per voxel, target is
// the index of the true channel.
struct CalibrationSet {
  int classes = 0;
  std::vector<double> logits;
  std::vector<int> target;

  std::size_t size() const { return target.size(); }
  double mean_ce(double temperature) const;
};

struct TemperatureResult {
  double temperature = 1.0;
  double ce_before = 0.0;
  double ce_after = 0.0;
  int iterations = 0;
  bool accepted = true;
};

struct TemperatureConfig {
  int max_iterations = 10000;
  double tolerance = 1e-6;  // on |delta log T|
  double t_min = 1e-4;
  double t_max = 1e4;
};

// Minimises mean CE of softmax(z / T). The result is accepted only when it
// does not increase CE; otherwise T = 1.
TemperatureResult temperature_scale(const CalibrationSet& data, const TemperatureConfig& cfg = {});

// Voxels inside the brain masks of the validation set, labelled for the
// binary model's foreground class.
CalibrationSet calibration_set(const VoxelClassifier& m, const std::vector<ValidationSample>& val,
                               const std::vector<Mask>& brain_masks);

// Subjects held in memory for training and evaluation.
struct Dataset {
  Manifest manifest;
  std::vector<TrainingSample> train;
  std::vector<ValidationSample> val;
  std::vector<Mask> val_brain;
  std::vector<LoadedSample> test;

  std::vector<TrainingSample> subset(bool need_wmh, bool need_isl) const;
};

Dataset load_dataset(const Manifest& m, int jobs = 1);

struct StrategyConfig {
  TrainerConfig trainer = TrainerConfig::desk();
  int seeds = 3;
  std::uint64_t seed = 0;
  int phased_stage1_epochs = 50;
  int phased_stage2_epochs = 25;
  int jobs = 1;
  std::string work_dir;  // pseudolabels are written below it
  std::string config_json;  // echoed into checkpoints

  static StrategyConfig desk();
  static StrategyConfig paper();
};

// Per-epoch progress: component ("model", "wmh", "isl", "stage1", "stage2"),
// ensemble member index and the epoch record.
using TrainLogSink = std::function<void(const std::string&, int, const EpochLog&)>;

struct TrainedStrategy {
  Strategy strategy = Strategy::kMulticlass;
  // Three-class ensembles, the WMH binary ensemble of the multi-model
  // strategies, or the dual-head ensemble of class-conditional training.
  std::vector<Checkpoint> models;
  // ISL binary ensemble of the multi-model strategies.
  std::vector<Checkpoint> isl_models;
  // Phased only: trunk digests either side of the head replacement.
  std::vector<std::pair<std::string, std::string>> trunk_digests;
};

// Fused {BG, WMH, ISL} probabilities of a trained strategy.
ProbVolume infer(const TrainedStrategy& t, const Volume3D& image);

// Single-model ensemble of `method` on `data`, one member per seed.
std::vector<Checkpoint> train_ensemble(const std::vector<TrainingSample>& data, Method method,
                                       const std::vector<ValidationSample>& val,
                                       const StrategyConfig& cfg, const std::string& component,
                                       const TrainLogSink& sink = {});

struct PhasedResult {
  Checkpoint stage1;
  Checkpoint model;
  std::string trunk_before;
  std::string trunk_after;
};

// Stage 1: BG vs merged foreground on all partially labelled data. Stage 2:
// fresh three-class head, standard multiclass training on the fully
// labelled subset.
PhasedResult run_phased(const std::vector<TrainingSample>& pls_all,
                        const std::vector<TrainingSample>& fls,
                        const std::vector<ValidationSample>& val, const StrategyConfig& cfg,
                        std::uint64_t member_seed, const TrainLogSink& sink = {},
                        int member = 0);

// Composes teacher argmax with the available labels for every partially
// labelled training record, writes the composed masks under `out_dir` and
// returns the manifest that references them. Fully labelled and non-train
// records pass through unchanged.
Manifest generate_pseudolabels(const std::vector<const VoxelClassifier*>& teacher,
                               const Manifest& m, const std::string& out_dir, int jobs = 1);

// `prior` is a strategy this one builds on: the marginal run that teaches
// the pseudolabel strategy, or the multi-model run that temperature scaling
// calibrates (trained afresh when absent).
TrainedStrategy run_strategy(Strategy s, const Dataset& data, const StrategyConfig& cfg,
                             const TrainedStrategy* prior = nullptr,
                             const TrainLogSink& sink = {});

}  // namespace plseg

#endif  // PLSEG_STRATEGIES_HPP_
