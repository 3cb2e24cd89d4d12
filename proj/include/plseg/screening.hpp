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

// Lesion-visibility filter: drops scans whose stroke lesion is not clearly
// brighter than the surrounding normal tissue on FLAIR.

#ifndef PLSEG_SCREENING_HPP_
#define PLSEG_SCREENING_HPP_

#include <map>
#include <string>
#include <vector>

#include "plseg/metrics.hpp"
#include "plseg/volume.hpp"

namespace plseg {

struct ScreeningConfig {
  double mean_diff_threshold = 0.05;
  double fraction_threshold = 0.20;

  static ScreeningConfig isles() { return {0.05, 0.20}; }
  static ScreeningConfig soop() { return {0.10, 0.10}; }
  // "isles" or "soop"; throws ConfigError otherwise.
  static ScreeningConfig preset(std::string_view name);
  void validate() const;
};

// Maps right-hemisphere region ids onto their left counterparts. Ids absent
// from the table are kept.
using SideCollapse = std::map<int, int>;

// Pairs for the FreeSurfer-style aseg labels (41 -> 2, 42 -> 3, ...).
const SideCollapse& default_side_collapse();

// Per-voxel anatomical region ids; 0 is outside the brain.
struct RegionMap {
  Shape shape;
  std::vector<int> ids;
};

// Reads a region map stored as a NIfTI volume, rounding to integer ids.
RegionMap read_region_map(const std::string& path);

// 1st/99th percentiles (linear interpolation between order statistics),
// clamp, then rescale to [0, 1]. Throws DataError when they coincide.
Volume3D percentile_normalise(const Volume3D& x);

struct ComponentDiagnostic {
  int component = 0;
  std::size_t voxels = 0;
  int host_region = 0;
  double component_mean = 0.0;
  double normal_mean = 0.0;
  double mean_diff = 0.0;
  double fraction_closer_to_normal = 0.0;
  bool passes = true;
};

struct ScreeningResult {
  bool keep = true;
  std::vector<ComponentDiagnostic> components;
};

// Screens one normalised scan. Components use 26-connectivity. A component's
// host is the side-collapsed region holding most of its voxels (ties to the
// smaller id; the outside-brain id 0 never hosts). Any failing component
// discards the scan; an empty lesion mask keeps it.
ScreeningResult screen_scan(const Volume3D& x_norm, MaskView isl_mask, const RegionMap& regions,
                            const ScreeningConfig& cfg,
                            const SideCollapse& collapse = default_side_collapse());

}  // namespace plseg

#endif  // PLSEG_SCREENING_HPP_
