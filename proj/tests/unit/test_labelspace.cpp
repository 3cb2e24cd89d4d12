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

#include <random>

#include "doctest.h"
#include "plseg/labelspace.hpp"
#include "test_support.hpp"

namespace plseg {
namespace {

using enum ClassId;

LabelVolume one_voxel(std::uint8_t code) { return LabelVolume({1, 1, 1}, {}, code); }

std::vector<double> vec_at(const ChannelGrid& g, std::size_t i) {
  std::vector<double> out;
  for (int c = 0; c < g.channels; ++c) out.push_back(g(c, i));
  return out;
}

TEST_CASE("class sets are canonically ordered and disjoint") {
  CHECK(ClassSet{kWmh, kNotWmh}.members() == std::vector<ClassId>{kNotWmh, kWmh});
  CHECK(ClassSet{kNotBg, kBg}.members() == std::vector<ClassId>{kBg, kNotBg});
  CHECK(ClassSet{kIsl, kWmh, kBg}.members() == std::vector<ClassId>{kBg, kWmh, kIsl});
  CHECK_THROWS(ClassSet{kNotWmh, kBg});
  CHECK_THROWS(ClassSet{kWmh, kWmh});
  CHECK_THROWS(ClassSet(std::vector<ClassId>{}));
}

TEST_CASE("one_hot targets") {
  CHECK(vec_at(one_hot(one_voxel(kCodeWmh), {kBg, kWmh, kIsl}), 0) ==
        std::vector<double>{0, 1, 0});
  CHECK(vec_at(one_hot(one_voxel(kCodeIsl), {kNotWmh, kWmh}), 0) == std::vector<double>{1, 0});
  CHECK(vec_at(one_hot(one_voxel(kCodeBg), {kNotBg, kBg}), 0) == std::vector<double>{1, 0});
  CHECK_THROWS(one_hot(one_voxel(kCodeIsl), {kBg, kWmh}));
  CHECK(vec_at(one_hot(one_voxel(kCodeIsl), {kWmh}, Coverage::kAllowPartial), 0) ==
        std::vector<double>{0});
}

TEST_CASE("one_hot sums to one over partitioning sets") {
  std::mt19937_64 rng(1);
  const LabelVolume y = testing::random_labels({5, 5, 5}, rng);
  for (const ClassSet& cs : {ClassSet{kBg, kWmh, kIsl}, ClassSet{kNotWmh, kWmh},
                             ClassSet{kNotIsl, kIsl}, ClassSet{kBg, kNotBg}}) {
    const ChannelGrid t = one_hot(y, cs);
    for (std::size_t i = 0; i < y.size(); ++i) {
      double s = 0;
      for (int c = 0; c < t.channels; ++c) s += t(c, i);
      CHECK(s == 1.0);
    }
  }
}

TEST_CASE("marginalisation sums merged mass") {
  ProbVolume p({1, 1, 1}, {}, {kBg, kWmh, kIsl});
  p(0, 0) = 0.2;
  p(1, 0) = 0.5;
  p(2, 0) = 0.3;
  const ProbVolume m = marginalize_probs(p, {kNotWmh, kWmh});
  CHECK(m.classes() == std::vector<ClassId>{kNotWmh, kWmh});
  CHECK(m(0, 0) == doctest::Approx(0.5));
  CHECK(m(1, 0) == doctest::Approx(0.5));

  ProbVolume q({1, 1, 1}, {}, {kBg, kWmh, kIsl});
  q(0, 0) = 1.0;
  const ProbVolume mq = marginalize_probs(q, {kNotIsl, kIsl});
  CHECK(mq(0, 0) == 1.0);
  CHECK(mq(1, 0) == 0.0);

  const ProbVolume id = marginalize_probs(p, {kBg, kWmh, kIsl});
  for (int c = 0; c < 3; ++c) CHECK(id(c, 0) == p(c, 0));
}

TEST_CASE("marginalisation preserves mass on random volumes") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ProbVolume p({4, 4, 4}, {}, {kBg, kWmh, kIsl});
  for (std::size_t i = 0; i < p.voxels(); ++i) {
    double a = u(rng), b = u(rng), c = u(rng), s = a + b + c;
    p(0, i) = a / s;
    p(1, i) = b / s;
    p(2, i) = c / s;
  }
  for (const ClassSet& cs : {ClassSet{kNotWmh, kWmh}, ClassSet{kNotIsl, kIsl},
                             ClassSet{kBg, kNotBg}}) {
    const ProbVolume m = marginalize_probs(p, cs);
    CHECK(m.max_normalisation_error() < 1e-12);
  }
}

TEST_CASE("class_set_for case table") {
  const LabelAvailability both{true, true}, wmh{true, false}, isl{false, true};
  const ClassSet full{kBg, kWmh, kIsl};
  for (Method m : {Method::kMulticlass, Method::kPseudolabels, Method::kPhasedStage2}) {
    const auto s = class_set_for(both, m);
    CHECK(s.ce == full);
    CHECK(s.dice == ClassSet{kWmh, kIsl});
  }
  CHECK(class_set_for(both, Method::kBinaryWmh).ce == ClassSet{kBg, kWmh});
  CHECK(class_set_for(both, Method::kBinaryWmh).dice == ClassSet{kWmh});
  CHECK(class_set_for(isl, Method::kBinaryIsl).ce == ClassSet{kBg, kIsl});
  CHECK_THROWS(class_set_for(isl, Method::kBinaryWmh));
  CHECK_THROWS(class_set_for(wmh, Method::kBinaryIsl));

  CHECK(class_set_for(both, Method::kClassAdaptive).ce == full);
  CHECK(class_set_for(both, Method::kClassAdaptive).dice == ClassSet{kWmh, kIsl});
  CHECK(class_set_for(wmh, Method::kClassAdaptive).ce == ClassSet{kWmh});
  CHECK(class_set_for(wmh, Method::kClassAdaptive).dice == ClassSet{kWmh});
  CHECK(class_set_for(isl, Method::kClassAdaptive).ce == ClassSet{kIsl});
  CHECK(class_set_for(isl, Method::kClassAdaptive).dice == ClassSet{kIsl});

  CHECK(class_set_for(wmh, Method::kMarginal).ce == ClassSet{kNotWmh, kWmh});
  CHECK(class_set_for(wmh, Method::kMarginal).dice == ClassSet{kNotWmh, kWmh});
  CHECK(class_set_for(isl, Method::kMarginal).ce == ClassSet{kNotIsl, kIsl});
  CHECK(class_set_for(both, Method::kMarginal).ce == full);
  CHECK(class_set_for(both, Method::kMarginal).dice == full);
  CHECK(class_set_for(both, Method::kMarginal).ce == class_set_for(both, Method::kMulticlass).ce);

  for (const auto& a : {both, wmh, isl}) {
    CHECK(class_set_for(a, Method::kPhasedStage1).ce == ClassSet{kBg, kNotBg});
    CHECK(class_set_for(a, Method::kPhasedStage1).dice == ClassSet{kNotBg});
  }
  CHECK(class_set_for(wmh, Method::kClassConditional).ce == ClassSet{kBg, kWmh});
  CHECK_THROWS(class_set_for(LabelAvailability{}, Method::kMulticlass));
}

TEST_CASE("merge_foreground") {
  LabelVolume y({3, 1, 1}, {});
  CHECK(merge_foreground(y).count_nonzero() == 0);
  y[0] = kCodeWmh;
  y[2] = kCodeIsl;
  const LabelVolume m = merge_foreground(y);
  CHECK(m[0] == 1);
  CHECK(m[1] == 0);
  CHECK(m[2] == 1);
  CHECK(m.count_nonzero() == y.count_nonzero());
}

// Truth table for a WMH-only sample, written out by hand.
TEST_CASE("pseudolabel composition truth table") {
  const LabelAvailability wmh_only{true, false};
  const LabelAvailability isl_only{false, true};
  struct Row {
    LabelAvailability avail;
    std::uint8_t gt, teacher, expected;
  };
  const Row rows[] = {
      {wmh_only, kCodeWmh, kCodeBg, kCodeWmh},  {wmh_only, kCodeWmh, kCodeWmh, kCodeWmh},
      {wmh_only, kCodeWmh, kCodeIsl, kCodeWmh}, {wmh_only, kCodeBg, kCodeBg, kCodeBg},
      {wmh_only, kCodeBg, kCodeWmh, kCodeBg},   {wmh_only, kCodeBg, kCodeIsl, kCodeIsl},
      {isl_only, kCodeIsl, kCodeBg, kCodeIsl},  {isl_only, kCodeIsl, kCodeWmh, kCodeIsl},
      {isl_only, kCodeIsl, kCodeIsl, kCodeIsl}, {isl_only, kCodeBg, kCodeBg, kCodeBg},
      {isl_only, kCodeBg, kCodeWmh, kCodeWmh},  {isl_only, kCodeBg, kCodeIsl, kCodeBg},
  };
  for (const Row& r : rows) {
    const LabelVolume out = compose_pseudolabel(one_voxel(r.gt), r.avail, one_voxel(r.teacher));
    CHECK(out[0] == r.expected);
  }
}

TEST_CASE("pseudolabel composition: identity on full labels, idempotent otherwise") {
  std::mt19937_64 rng(4);
  const LabelVolume gt = testing::random_labels({6, 6, 6}, rng);
  const LabelVolume teacher = testing::random_labels({6, 6, 6}, rng);
  CHECK(compose_pseudolabel(gt, {true, true}, teacher) == gt);
  const LabelVolume gt_wmh = binarize(gt, kWmh);
  const LabelVolume once = compose_pseudolabel(gt_wmh, {true, false}, teacher);
  CHECK(compose_pseudolabel(once, {true, false}, teacher) == once);
}

TEST_CASE("member channel masks") {
  const std::vector<ClassId> ch{kBg, kWmh, kIsl};
  CHECK(member_channel_masks(ch, {kNotWmh, kWmh}) == std::vector<std::uint32_t>{0b101, 0b010});
  CHECK(member_channel_masks(ch, {kBg, kNotBg}) == std::vector<std::uint32_t>{0b001, 0b110});
  CHECK_THROWS(member_channel_masks({kBg, kNotBg}, ClassSet{kWmh}));
}

}  // namespace
}  // namespace plseg
