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

#ifndef PLSEG_VOLUME_HPP_
#define PLSEG_VOLUME_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plseg/class_id.hpp"
#include "plseg/common.hpp"

namespace plseg {

// Dense scalar grid, x fastest. Holds images and binary masks.
class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(Shape shape, Spacing spacing, double fill = 0.0);
  Volume3D(Shape shape, Spacing spacing, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int x, int y, int z) { return data_[shape_.index(x, y, z)]; }
  double at(int x, int y, int z) const { return data_[shape_.index(x, y, z)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

 private:
  Shape shape_;
  Spacing spacing_;
  std::vector<double> data_;
};

// Per-voxel code in {0=BG, 1=WMH, 2=ISL}. Merged-foreground volumes reuse
// code 1 for NOT_BG.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Shape shape, Spacing spacing, std::uint8_t fill = kCodeBg);
  LabelVolume(Shape shape, Spacing spacing, std::vector<std::uint8_t> codes);

  const Shape& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return codes_.size(); }

  std::uint8_t& operator[](std::size_t i) { return codes_[i]; }
  std::uint8_t operator[](std::size_t i) const { return codes_[i]; }
  std::uint8_t& at(int x, int y, int z) { return codes_[shape_.index(x, y, z)]; }
  std::uint8_t at(int x, int y, int z) const {
    return codes_[shape_.index(x, y, z)];
  }

  std::span<std::uint8_t> codes() { return codes_; }
  std::span<const std::uint8_t> codes() const { return codes_; }

  std::size_t count(std::uint8_t code) const;
  std::size_t count_nonzero() const;
  std::vector<std::uint8_t> mask_of(std::uint8_t code) const;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  Shape shape_;
  Spacing spacing_;
  std::vector<std::uint8_t> codes_;
};

// Channel-major multi-channel grid: value(c, i) = data[c * voxels + i].
// Used for logits and gradients with respect to logits.
struct ChannelGrid {
  Shape shape;
  int channels = 0;
  std::vector<double> data;

  ChannelGrid() = default;
  ChannelGrid(Shape s, int c, double fill = 0.0)
      : shape(s), channels(c), data(s.voxels() * static_cast<std::size_t>(c), fill) {}

  std::size_t voxels() const { return shape.voxels(); }
  double& operator()(int c, std::size_t i) {
    return data[static_cast<std::size_t>(c) * voxels() + i];
  }
  double operator()(int c, std::size_t i) const {
    return data[static_cast<std::size_t>(c) * voxels() + i];
  }
  std::span<double> channel(int c) {
    return {data.data() + static_cast<std::size_t>(c) * voxels(), voxels()};
  }
  std::span<const double> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * voxels(), voxels()};
  }
};

// Per-voxel probability vector over a declared class list.
class ProbVolume {
 public:
  ProbVolume() = default;
  ProbVolume(Shape shape, Spacing spacing, std::vector<ClassId> classes);

  const Shape& shape() const { return grid_.shape; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<ClassId>& classes() const { return classes_; }
  int num_classes() const { return static_cast<int>(classes_.size()); }
  std::size_t voxels() const { return grid_.voxels(); }
  // Channel index of `c`, or -1.
  int channel_of(ClassId c) const;

  double& operator()(int c, std::size_t i) { return grid_(c, i); }
  double operator()(int c, std::size_t i) const { return grid_(c, i); }
  std::span<const double> channel(int c) const { return grid_.channel(c); }
  std::span<double> channel(int c) { return grid_.channel(c); }
  ChannelGrid& grid() { return grid_; }
  const ChannelGrid& grid() const { return grid_; }

  // Max |sum - 1| over voxels; also rejects negative entries.
  double max_normalisation_error() const;
  // Channel index of the per-voxel maximum (first wins on ties).
  std::vector<std::uint8_t> argmax() const;

 private:
  ChannelGrid grid_;
  Spacing spacing_;
  std::vector<ClassId> classes_;
};

// Binary mask as bytes, 1 = inside.
using Mask = std::vector<std::uint8_t>;

struct IcvVolume {
  std::size_t voxels = 0;
  double ml = 0.0;
};

// Intracranial volume from a brain mask. Throws DataError on an empty mask.
IcvVolume icv_voxels(std::span<const std::uint8_t> brain_mask, Spacing spacing);
IcvVolume icv_voxels(const LabelVolume& brain_mask);

}  // namespace plseg

#endif  // PLSEG_VOLUME_HPP_
