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

// Class-centred patch sampling and the spatial / intensity augmentation
// pipeline applied to training patches.

#ifndef PLSEG_SAMPLING_HPP_
#define PLSEG_SAMPLING_HPP_

#include <array>
#include <functional>
#include <random>
#include <vector>

#include "plseg/labelspace.hpp"
#include "plseg/volume.hpp"

namespace plseg {

using Rng = std::mt19937_64;

struct SamplerConfig {
  Shape patch{24, 24, 24};
  double p_background = 0.3;
  // Foreground classes the method trains; a member is eligible as a centre
  // class when some voxel's code falls inside it.
  ClassSet classes_trained{ClassId::kWmh, ClassId::kIsl};

  void validate() const;
};

// Voxel indices grouped by label code, so repeated draws from one volume
// do not rescan it.
struct VoxelIndex {
  std::array<std::vector<std::uint32_t>, 3> by_code;
  explicit VoxelIndex(const LabelVolume& y);
};

struct Patch {
  Volume3D image;
  LabelVolume labels;
  std::array<int, 3> centre{};  // in source-volume coordinates
  std::uint8_t centre_code = kCodeBg;
};

// Crops a patch of `size` whose voxel (size/2) sits on `centre`. Reads
// outside the volume are zero (image) and BG (labels).
Patch extract_patch(const Volume3D& x, const LabelVolume& y, std::array<int, 3> centre,
                    Shape size);

Patch sample_patch(const Volume3D& x, const LabelVolume& y, const SamplerConfig& cfg, Rng& rng,
                   const VoxelIndex* index = nullptr);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentationConfig {
  double p_flip = 0.5;  // per axis
  double p_rotate = 0.2;
  Range rotate_deg{-90.0, 90.0};  // per axis, composed x then y then z
  double p_scale = 0.2;
  Range scale{0.7, 1.4};
  double p_noise = 0.15;
  double noise_std = 0.1;
  double p_blur = 0.1;
  Range blur_sigma{0.5, 1.5};
  double p_brightness = 0.15;
  Range brightness{0.7, 1.3};
  double p_contrast = 0.15;
  Range contrast{0.65, 1.5};
  double p_gamma = 0.15;
  Range gamma{0.7, 1.5};
  double p_gamma_invert = 0.15;
  double p_lowres = 0.25;
  Range lowres_factor{1.0, 4.0};

  // MRI artifact simulations. Each hook fires with p_artifact; none are
  // installed by default.
  double p_artifact = 0.05;
  std::vector<std::function<void(Volume3D&, Rng&)>> artifact_hooks;

  static AugmentationConfig none();
  void validate() const;
};

// Which transforms fired on one call.
struct AugmentationTrace {
  std::array<bool, 3> flipped{};
  bool rotated = false;
  bool scaled = false;
  bool noise = false;
  bool blur = false;
  bool brightness = false;
  bool contrast = false;
  bool gamma = false;
  bool lowres = false;

  bool spatial() const {
    return flipped[0] || flipped[1] || flipped[2] || rotated || scaled;
  }
};

// In place. Spatial transforms move image (trilinear) and labels (nearest)
// together; intensity transforms touch the image only.
AugmentationTrace augment(Volume3D& image, LabelVolume& labels, const AugmentationConfig& cfg,
                          Rng& rng);

// Reverses the voxel order along `axis` (0 = x).
void flip_axis(Volume3D& v, int axis);
void flip_axis(LabelVolume& v, int axis);

}  // namespace plseg

#endif  // PLSEG_SAMPLING_HPP_
