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

#include "plseg/volume.hpp"

#include <algorithm>
#include <cmath>

namespace plseg {

std::string_view class_name(ClassId c) {
  switch (c) {
    case ClassId::kBg: return "BG";
    case ClassId::kWmh: return "WMH";
    case ClassId::kIsl: return "ISL";
    case ClassId::kNotWmh: return "NOT_WMH";
    case ClassId::kNotIsl: return "NOT_ISL";
    case ClassId::kNotBg: return "NOT_BG";
  }
  return "?";
}

ClassId parse_class(std::string_view name) {
  for (ClassId c : {ClassId::kBg, ClassId::kWmh, ClassId::kIsl, ClassId::kNotWmh,
                    ClassId::kNotIsl, ClassId::kNotBg}) {
    if (class_name(c) == name) return c;
  }
  throw DataError("unknown class name '" + std::string(name) + "'");
}

namespace {

void check_geometry(const Shape& shape, const Spacing& spacing) {
  if (!shape.valid()) throw DataError("volume shape must be positive: " + to_string(shape));
  if (!spacing.valid()) throw DataError("volume spacing must be positive");
}

}  // namespace

Volume3D::Volume3D(Shape shape, Spacing spacing, double fill)
    : shape_(shape), spacing_(spacing), data_(shape.voxels(), fill) {
  check_geometry(shape, spacing);
}

Volume3D::Volume3D(Shape shape, Spacing spacing, std::vector<double> data)
    : shape_(shape), spacing_(spacing), data_(std::move(data)) {
  check_geometry(shape, spacing);
  if (data_.size() != shape.voxels()) {
    throw DataError("volume data length does not match shape " + to_string(shape));
  }
}

LabelVolume::LabelVolume(Shape shape, Spacing spacing, std::uint8_t fill)
    : shape_(shape), spacing_(spacing), codes_(shape.voxels(), fill) {
  check_geometry(shape, spacing);
}

LabelVolume::LabelVolume(Shape shape, Spacing spacing, std::vector<std::uint8_t> codes)
    : shape_(shape), spacing_(spacing), codes_(std::move(codes)) {
  check_geometry(shape, spacing);
  if (codes_.size() != shape.voxels()) {
    throw DataError("label data length does not match shape " + to_string(shape));
  }
  for (std::uint8_t c : codes_) {
    if (c > kCodeIsl) throw DataError("label code out of range: " + std::to_string(c));
  }
}

std::size_t LabelVolume::count(std::uint8_t code) const {
  return static_cast<std::size_t>(std::count(codes_.begin(), codes_.end(), code));
}

std::size_t LabelVolume::count_nonzero() const {
  return codes_.size() - count(kCodeBg);
}

std::vector<std::uint8_t> LabelVolume::mask_of(std::uint8_t code) const {
  std::vector<std::uint8_t> mask(codes_.size());
  for (std::size_t i = 0; i < codes_.size(); ++i) mask[i] = codes_[i] == code;
  return mask;
}

ProbVolume::ProbVolume(Shape shape, Spacing spacing, std::vector<ClassId> classes)
    : grid_(shape, static_cast<int>(classes.size())),
      spacing_(spacing),
      classes_(std::move(classes)) {
  check_geometry(shape, spacing);
  if (classes_.empty()) throw DataError("probability volume needs at least one class");
}

int ProbVolume::channel_of(ClassId c) const {
  auto it = std::find(classes_.begin(), classes_.end(), c);
  return it == classes_.end() ? -1 : static_cast<int>(it - classes_.begin());
}

double ProbVolume::max_normalisation_error() const {
  double worst = 0.0;
  const int nc = num_classes();
  for (std::size_t i = 0; i < voxels(); ++i) {
    double sum = 0.0;
    for (int c = 0; c < nc; ++c) {
      const double p = grid_(c, i);
      if (!(p >= 0.0)) return INFINITY;
      sum += p;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

std::vector<std::uint8_t> ProbVolume::argmax() const {
  std::vector<std::uint8_t> out(voxels(), 0);
  const int nc = num_classes();
  for (std::size_t i = 0; i < voxels(); ++i) {
    int best = 0;
    double best_p = grid_(0, i);
    for (int c = 1; c < nc; ++c) {
      if (grid_(c, i) > best_p) {
        best_p = grid_(c, i);
        best = c;
      }
    }
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

IcvVolume icv_voxels(std::span<const std::uint8_t> brain_mask, Spacing spacing) {
  IcvVolume icv;
  icv.voxels = static_cast<std::size_t>(
      std::count_if(brain_mask.begin(), brain_mask.end(), [](std::uint8_t v) { return v != 0; }));
  if (icv.voxels == 0) throw DataError("brain mask is empty; ICV cannot be zero");
  icv.ml = static_cast<double>(icv.voxels) * spacing.voxel_volume_mm3() / 1000.0;
  return icv;
}

IcvVolume icv_voxels(const LabelVolume& brain_mask) {
  return icv_voxels(brain_mask.codes(), brain_mask.spacing());
}

}  // namespace plseg
