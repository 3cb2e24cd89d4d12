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

// Voxel, surface, lesion and subject-level segmentation metrics. Masks are
// byte spans in the volume's x-fastest order. A metric that is undefined for
// an input returns std::nullopt rather than a placeholder value.

#ifndef PLSEG_METRICS_HPP_
#define PLSEG_METRICS_HPP_

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plseg/volume.hpp"

namespace plseg {

using MaskView = std::span<const std::uint8_t>;

struct ComponentLabeling {
  std::vector<std::int32_t> ids;  // 0 = background, components 1..count
  int count = 0;
  std::vector<std::vector<std::uint32_t>> voxels;  // voxels[k] lists component k+1
};

// Raster-order union-find. Connectivity is 6, 18 or 26; component ids
// follow the raster order of each component's first voxel.
ComponentLabeling connected_components(MaskView mask, Shape shape, int connectivity = 26);

// Euclidean distance in mm from every voxel to the nearest mask voxel.
// Throws DataError on an empty mask.
std::vector<double> distance_transform(MaskView mask, Shape shape, Spacing spacing);

// Mask voxels with at least one 6-neighbour outside the mask (the volume
// border counts as outside).
Mask surface_voxels(MaskView mask, Shape shape);

std::optional<double> dsc(MaskView pred, MaskView gt);

struct DdscConfig {
  double theta_mm = 2.0;
};

std::optional<double> ddsc(MaskView pred, MaskView gt, Shape shape, Spacing spacing,
                           const DdscConfig& cfg = {});

// Area under the precision-recall curve by step integration over distinct
// probability thresholds.
std::optional<double> average_precision(std::span<const double> probs, MaskView gt);

// |vol(P) - vol(G)| as a percentage of the intracranial volume.
double avd(MaskView pred, MaskView gt, Spacing spacing, double icv_ml);

std::optional<double> asd(MaskView pred, MaskView gt, Shape shape, Spacing spacing);

struct LesionCounts {
  std::optional<double> precision;
  std::optional<double> recall;
};

// A predicted lesion counts as a hit when it overlaps any ground-truth
// voxel; a ground-truth lesion is detected when any predicted voxel
// overlaps it.
LesionCounts lesion_prec_rec(MaskView pred, MaskView gt, Shape shape);

enum class Metric { kAp, kDsc, kDdsc, kAvd, kAsd, kLpre, kLrec };
inline constexpr int kNumMetrics = 7;
inline constexpr std::array<Metric, kNumMetrics> kAllMetrics = {
    Metric::kAp, Metric::kDsc, Metric::kDdsc, Metric::kAvd,
    Metric::kAsd, Metric::kLpre, Metric::kLrec};
std::string_view metric_name(Metric m);

struct ClassMetrics {
  std::array<std::optional<double>, kNumMetrics> values{};
  double vol_pred_ml = 0.0;
  double vol_gt_ml = 0.0;
  bool gt_empty = true;
  bool pred_empty = true;

  std::optional<double>& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
  const std::optional<double>& operator[](Metric m) const {
    return values[static_cast<std::size_t>(m)];
  }
};

struct MetricRow {
  std::string subject;
  std::string dataset;
  ClassMetrics wmh;
  ClassMetrics isl;
  // Defined only when the subject's ISL ground truth is empty.
  std::optional<bool> isl_false_positive;

  const ClassMetrics& of(ClassId c) const { return c == ClassId::kWmh ? wmh : isl; }
};

// Evaluates fused {BG, WMH, ISL} probabilities against ground truth; binary
// decisions are taken at the per-voxel argmax.
MetricRow evaluate_subject(const std::string& subject, const std::string& dataset,
                           const ProbVolume& probs, const LabelVolume& gt, MaskView brain_mask,
                           const DdscConfig& cfg = {});

// Percentage of subjects with an empty ground truth for `c` whose
// prediction is non-empty.
std::optional<double> subject_fp_rate(const std::vector<MetricRow>& rows, ClassId c);

struct BlandAltman {
  double mean_diff = 0.0;
  double sd = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
  std::size_t n = 0;
};

// Differences are pred - gt; limits are mean +- 1.96 sample sd.
BlandAltman bland_altman(std::span<const double> pred, std::span<const double> gt);

struct ClassSummary {
  std::array<std::optional<double>, kNumMetrics> mean{};
  std::array<int, kNumMetrics> n{};

  const std::optional<double>& operator[](Metric m) const {
    return mean[static_cast<std::size_t>(m)];
  }
};

struct Summary {
  std::string group;
  int subjects = 0;
  ClassSummary wmh;
  ClassSummary isl;
  std::array<std::optional<double>, kNumMetrics> grand{};  // mean of the two class means
  std::optional<double> isl_fp_rate;
};

Summary aggregate(const std::vector<MetricRow>& rows, const std::string& group = "all");
// One summary per dataset, in order of first appearance.
std::vector<Summary> aggregate_by_dataset(const std::vector<MetricRow>& rows);

}  // namespace plseg

#endif  // PLSEG_METRICS_HPP_
