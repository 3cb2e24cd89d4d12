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

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer.
//
// Only the parts of the format this project needs are honoured: dim,
// datatype, pixdim and the scl_slope/scl_inter intensity scaling. Voxel data
// is kept in file order (x fastest), which is the canonical order for all
// downstream index math; orientation matrices are written as a plain
// spacing-diagonal sform and ignored on read.

#ifndef PLSEG_NIFTI_HPP_
#define PLSEG_NIFTI_HPP_

#include <string>

#include "plseg/volume.hpp"

namespace plseg {

Volume3D read_volume(const std::string& path);
// Integer-valued label file with codes in {0,1,2}.
LabelVolume read_labels(const std::string& path);
// Any scalar file; nonzero voxels become 1.
LabelVolume read_mask(const std::string& path);
// 4D float file written by write_volume(ProbVolume).
ProbVolume read_prob_volume(const std::string& path);

// Images are stored as float32, labels as uint8, probabilities as a 4D
// float32 payload whose class list travels in the header description.
void write_volume(const Volume3D& v, const std::string& path);
void write_volume(const LabelVolume& v, const std::string& path);
void write_volume(const ProbVolume& v, const std::string& path);

}  // namespace plseg

#endif  // PLSEG_NIFTI_HPP_
