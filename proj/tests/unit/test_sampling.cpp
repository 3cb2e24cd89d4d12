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

#include <cmath>
#include <random>

#include "doctest.h"
#include "plseg/sampling.hpp"
#include "test_support.hpp"

namespace plseg {
namespace {

using enum ClassId;

LabelVolume two_class_volume() {
  LabelVolume y({16, 16, 16}, {});
  for (int z = 2; z < 5; ++z)
    for (int yy = 2; yy < 5; ++yy)
      for (int x = 2; x < 5; ++x) y.at(x, yy, z) = kCodeWmh;
  for (int z = 9; z < 14; ++z)
    for (int yy = 9; yy < 14; ++yy)
      for (int x = 9; x < 14; ++x) y.at(x, yy, z) = kCodeIsl;
  return y;
}

TEST_CASE("all-background volume always yields BG centres") {
  const Volume3D x({8, 8, 8}, {});
  const LabelVolume y({8, 8, 8}, {});
  SamplerConfig cfg;
  cfg.patch = {4, 4, 4};
  Rng rng(1);
  for (int i = 0; i < 200; ++i) CHECK(sample_patch(x, y, cfg, rng).centre_code == kCodeBg);
}

TEST_CASE("foreground draws fall back to the classes present") {
  const Volume3D x({8, 8, 8}, {});
  LabelVolume y({8, 8, 8}, {});
  y.at(3, 3, 3) = kCodeWmh;
  SamplerConfig cfg;
  cfg.patch = {4, 4, 4};
  cfg.p_background = 0.0;
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Patch p = sample_patch(x, y, cfg, rng);
    CHECK(p.centre_code == kCodeWmh);
    CHECK(p.labels.at(2, 2, 2) == kCodeWmh);
  }
}

TEST_CASE("centre class frequencies follow 0.30 / 0.35 / 0.35") {
  const Volume3D x({16, 16, 16}, {});
  const LabelVolume y = two_class_volume();
  const VoxelIndex index(y);
  SamplerConfig cfg;
  cfg.patch = {4, 4, 4};
  Rng rng(3);
  int counts[3] = {0, 0, 0};
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[sample_patch(x, y, cfg, rng, &index).centre_code];
  CHECK(std::abs(counts[0] / double(n) - 0.30) < 0.02);
  CHECK(std::abs(counts[1] / double(n) - 0.35) < 0.02);
  CHECK(std::abs(counts[2] / double(n) - 0.35) < 0.02);
}

TEST_CASE("merged foreground class draws from either code") {
  const Volume3D x({16, 16, 16}, {});
  const LabelVolume y = merge_foreground(two_class_volume());
  SamplerConfig cfg;
  cfg.patch = {4, 4, 4};
  cfg.p_background = 0.0;
  cfg.classes_trained = ClassSet{kNotBg};
  Rng rng(4);
  for (int i = 0; i < 100; ++i) CHECK(sample_patch(x, y, cfg, rng).centre_code == 1);
}

TEST_CASE("sampling is deterministic given the rng seed") {
  std::mt19937_64 g(5);
  Volume3D x({16, 16, 16}, {});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::normal_distribution<double>()(g);
  const LabelVolume y = two_class_volume();
  SamplerConfig cfg;
  cfg.patch = {6, 6, 6};
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) {
    const Patch pa = sample_patch(x, y, cfg, a), pb = sample_patch(x, y, cfg, b);
    CHECK(pa.centre == pb.centre);
    CHECK(pa.labels == pb.labels);
  }
}

TEST_CASE("patch extraction pads with zeros and BG") {
  Volume3D x({4, 4, 4}, {}, 1.0);
  LabelVolume y({4, 4, 4}, {}, kCodeWmh);
  const Patch p = extract_patch(x, y, {0, 0, 0}, {4, 4, 4});
  CHECK(p.image.at(2, 2, 2) == 1.0);
  CHECK(p.image.at(0, 0, 0) == 0.0);
  CHECK(p.labels.at(0, 0, 0) == kCodeBg);
  CHECK(p.labels.at(3, 3, 3) == kCodeWmh);
}

TEST_CASE("zero-probability augmentation is the identity") {
  std::mt19937_64 g(6);
  Volume3D x({10, 10, 10}, {});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::normal_distribution<double>()(g);
  const LabelVolume y = testing::random_labels({10, 10, 10}, g);
  Volume3D xa = x;
  LabelVolume ya = y;
  Rng rng(1);
  augment(xa, ya, AugmentationConfig::none(), rng);
  CHECK(ya == y);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(xa[i] == x[i]);
}

TEST_CASE("flips are involutions and preserve label counts") {
  std::mt19937_64 g(7);
  Volume3D x({5, 6, 7}, {});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const LabelVolume y = testing::random_labels({5, 6, 7}, g);
  for (int axis = 0; axis < 3; ++axis) {
    Volume3D xf = x;
    LabelVolume yf = y;
    flip_axis(xf, axis);
    flip_axis(yf, axis);
    CHECK(yf.count(kCodeWmh) == y.count(kCodeWmh));
    CHECK(yf.count(kCodeIsl) == y.count(kCodeIsl));
    CHECK_FALSE(xf[0] == x[0]);
    flip_axis(xf, axis);
    flip_axis(yf, axis);
    CHECK(yf == y);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(xf[i] == x[i]);
  }
}

TEST_CASE("rotation roughly preserves blob volume") {
  Volume3D x({24, 24, 24}, {});
  LabelVolume y({24, 24, 24}, {});
  for (int z = 0; z < 24; ++z)
    for (int yy = 0; yy < 24; ++yy)
      for (int xx = 0; xx < 24; ++xx) {
        const double r2 = (xx - 11.5) * (xx - 11.5) + (yy - 11.5) * (yy - 11.5) +
                          (z - 11.5) * (z - 11.5) * 0.5;
        if (r2 < 30.0) y.at(xx, yy, z) = kCodeIsl;
      }
  const std::size_t before = y.count(kCodeIsl);
  REQUIRE(before >= 100);
  AugmentationConfig cfg = AugmentationConfig::none();
  cfg.p_rotate = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Volume3D xa = x;
    LabelVolume ya = y;
    Rng rng(seed);
    CHECK(augment(xa, ya, cfg, rng).rotated);
    const double ratio = static_cast<double>(ya.count(kCodeIsl)) / static_cast<double>(before);
    CHECK(std::abs(ratio - 1.0) < 0.10);
  }
}

TEST_CASE("intensity transforms never touch labels") {
  std::mt19937_64 g(8);
  Volume3D x({12, 12, 12}, {});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::normal_distribution<double>()(g);
  const LabelVolume y = testing::random_labels({12, 12, 12}, g);
  AugmentationConfig cfg;
  cfg.p_flip = cfg.p_rotate = cfg.p_scale = 0.0;
  cfg.p_noise = cfg.p_blur = cfg.p_brightness = cfg.p_contrast = cfg.p_gamma = cfg.p_lowres = 1.0;
  Volume3D xa = x;
  LabelVolume ya = y;
  Rng rng(3);
  const AugmentationTrace t = augment(xa, ya, cfg, rng);
  CHECK_FALSE(t.spatial());
  CHECK(t.gamma);
  CHECK(ya == y);
  bool changed = false;
  for (std::size_t i = 0; i < x.size(); ++i) changed |= xa[i] != x[i];
  CHECK(changed);
  for (double v : xa.data()) CHECK(std::isfinite(v));
}

TEST_CASE("full pipeline keeps labels legal") {
  std::mt19937_64 g(9);
  Volume3D x({12, 12, 12}, {});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::normal_distribution<double>()(g);
  const LabelVolume y = testing::random_labels({12, 12, 12}, g);
  AugmentationConfig cfg;
  cfg.p_rotate = cfg.p_scale = 1.0;
  int hook_calls = 0;
  cfg.p_artifact = 1.0;
  cfg.artifact_hooks.push_back([&](Volume3D&, Rng&) { ++hook_calls; });
  for (std::uint64_t s = 0; s < 5; ++s) {
    Volume3D xa = x;
    LabelVolume ya = y;
    Rng rng(s);
    augment(xa, ya, cfg, rng);
    for (std::uint8_t c : ya.codes()) CHECK(c <= kCodeIsl);
  }
  CHECK(hook_calls == 5);
}

TEST_CASE("config validation") {
  AugmentationConfig a;
  a.p_noise = 1.5;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = AugmentationConfig{};
  a.scale = {1.4, 0.7};
  CHECK_THROWS_AS(a.validate(), ConfigError);
  SamplerConfig s;
  s.p_background = -0.1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

}  // namespace
}  // namespace plseg
