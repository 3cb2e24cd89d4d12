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

#ifndef PLSEG_MANIFEST_HPP_
#define PLSEG_MANIFEST_HPP_

#include <optional>
#include <string>
#include <vector>

#include "plseg/volume.hpp"

namespace plseg {

enum class Split { kTrain, kValidation, kTest };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

// One subject. Paths are held resolved (absolute or relative to the process
// working directory); an absent label is an absent field, never an empty file.
struct SampleRecord {
  std::string id;
  std::string image;
  std::optional<std::string> wmh_label;
  std::optional<std::string> isl_label;
  std::string brain_mask;
  Split split = Split::kTrain;
  // Optional extensions: grouping key for per-dataset reports, and the
  // anatomical region map consumed by the screening filter.
  std::string dataset;
  std::optional<std::string> region_map;

  bool has_wmh() const { return wmh_label.has_value(); }
  bool has_isl() const { return isl_label.has_value(); }
  bool fully_labelled() const { return has_wmh() && has_isl(); }
};

struct Manifest {
  std::string dataset_name;
  std::vector<SampleRecord> samples;

  // Throws DataError on duplicate ids, missing brain masks, or unlabelled
  // training records.
  void validate() const;
  const SampleRecord& find(const std::string& id) const;
  std::vector<const SampleRecord*> split(Split s) const;
};

Manifest load_manifest(const std::string& path);
// Paths are written relative to the manifest's directory.
void save_manifest(const Manifest& m, const std::string& path);

struct Subsets {
  std::vector<std::string> fls;
  std::vector<std::string> pls_wmh;
  std::vector<std::string> pls_isl;
  std::vector<std::string> pls_all;
};

// Training-split subsets, each in manifest order.
Subsets derive_subsets(const Manifest& m);

// Decoded subject with merged labels. Voxels of an unavailable class read as
// BG; `availability` says which codes can be trusted.
struct LoadedSample {
  const SampleRecord* record = nullptr;
  Volume3D image;
  LabelVolume labels;
  LabelVolume brain_mask;
  bool has_wmh = false;
  bool has_isl = false;
};

// Reads image, brain mask and whichever label files are present. Throws
// DataError when the two masks overlap or shapes disagree.
LoadedSample load_sample(const SampleRecord& record);

}  // namespace plseg

#endif  // PLSEG_MANIFEST_HPP_
