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

// Synthetic two-pathology FLAIR-like volumes. Small periventricular blobs
// play WMH, fewer larger peripheral blobs play ISL. Volumes come from
// "sites" that differ in noise, contrast and lesion appearance, so that
// subsets labelled for one class carry information the fully labelled
// subset lacks.

#ifndef PLSEG_SYNTHGEN_HPP_
#define PLSEG_SYNTHGEN_HPP_

#include <string>
#include <vector>

#include "plseg/manifest.hpp"
#include "plseg/screening.hpp"
#include "plseg/volume.hpp"

namespace plseg {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct SiteProfile {
  std::string name;
  double noise_sd = 0.1;
  double wmh_contrast = 0.8;  // mean offset above tissue
  double isl_contrast = 1.4;
  double contrast_sd = 0.1;   // per-blob spread of either offset
  // Fraction of ISL blobs with a dark core, and the core's offset below tissue.
  double cavitation_prob = 0.0;
  double cavity_offset = -0.5;
};

struct SynthConfig {
  int n_train = 120;
  int n_val = 12;
  int n_test = 40;
  double fully_labelled_fraction = 0.25;
  Shape shape{32, 32, 32};
  Spacing spacing{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;

  Interval wmh_count{6, 12};
  Interval wmh_radius{0.8, 1.8};
  Interval isl_count{1, 2};
  Interval isl_radius{2.5, 4.5};
  double tissue_level = 1.0;
  double texture_sd = 0.08;
  // Pulls every site's ISL offset towards its WMH offset: 0 keeps the
  // site's own contrasts, 1 makes the two classes' intensities identical.
  double confusability = 0.0;
  // Z-score each written image over the whole volume, as preprocessed inputs are.
  bool standardise = true;
  // Every k-th test volume has no ISL (0 disables).
  int empty_isl_every = 4;

  // Fully labelled records come from sites[0], WMH-only from sites[1],
  // ISL-only from sites[2]; validation and test cycle through all sites.
  std::vector<SiteProfile> sites = default_sites();

  static std::vector<SiteProfile> default_sites();
  void validate() const;
  std::string to_json() const;
  static SynthConfig from_json(const std::string& text);
};

// One generated subject. `lesion_offset` records the intensity change the
// lesion synthesis applied at each voxel (zero where it did nothing), in
// units before standardisation.
struct SynthVolume {
  Volume3D image;
  LabelVolume labels;
  LabelVolume brain;
  RegionMap regions;
  std::vector<double> lesion_offset;
};

SynthVolume synthesize(const SynthConfig& cfg, const SiteProfile& site, std::uint64_t seed,
                       bool with_isl = true);

struct SplitCounts {
  int fully_labelled = 0;
  int wmh_only = 0;
  int isl_only = 0;
};

// round(f * n) fully labelled; the rest split evenly, WMH-only taking any odd one.
SplitCounts split_counts(int n_train, double fully_labelled_fraction);

// Writes volumes, labels, brain masks, region maps and manifest.json under
// `out_dir`; returns the manifest (paths resolved).
Manifest generate(const SynthConfig& cfg, const std::string& out_dir, int jobs = 1);

}  // namespace plseg

#endif  // PLSEG_SYNTHGEN_HPP_
