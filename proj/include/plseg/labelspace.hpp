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

// Class-set algebra shared by the losses, the sampler and the strategies.

#ifndef PLSEG_LABELSPACE_HPP_
#define PLSEG_LABELSPACE_HPP_

#include <initializer_list>
#include <string>
#include <vector>

#include "plseg/class_id.hpp"
#include "plseg/volume.hpp"

namespace plseg {

// Ordered set of classes with pairwise-disjoint base codes. Members are kept
// in canonical order: ascending by the smallest base code each one covers,
// so a merged class containing BG takes BG's slot ({NOT_WMH, WMH}) and
// channel indices are stable across modules.
class ClassSet {
 public:
  ClassSet() = default;
  ClassSet(std::initializer_list<ClassId> members);
  explicit ClassSet(std::vector<ClassId> members);

  const std::vector<ClassId>& members() const { return members_; }
  int size() const { return static_cast<int>(members_.size()); }
  bool empty() const { return members_.empty(); }
  ClassId operator[](int i) const { return members_[static_cast<std::size_t>(i)]; }
  bool contains(ClassId c) const;
  int index_of(ClassId c) const;
  // Union of base-code masks.
  std::uint8_t coverage() const;
  bool partitions_label_space() const { return coverage() == 0b111; }
  ClassSet without(ClassId c) const;
  std::string to_string() const;

  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

  friend bool operator==(const ClassSet&, const ClassSet&) = default;

 private:
  std::vector<ClassId> members_;
};

struct LabelAvailability {
  bool has_wmh = false;
  bool has_isl = false;

  bool fully_labelled() const { return has_wmh && has_isl; }
  bool any() const { return has_wmh || has_isl; }
  friend bool operator==(const LabelAvailability&, const LabelAvailability&) = default;
};

// Training formulations. Each strategy is built from one or more of these.
enum class Method {
  kMulticlass,
  kBinaryWmh,
  kBinaryIsl,
  kClassConditional,
  kPseudolabels,
  kPhasedStage1,
  kPhasedStage2,
  kClassAdaptive,
  kMarginal,
};

std::string_view method_name(Method m);

struct ClassSets {
  ClassSet ce;
  ClassSet dice;
};

// The (C_CE, C_Dice) pair a method uses for one sample. For the class-
// conditional method this is the single head a partially labelled sample
// trains; fully labelled samples train both heads (see conditional_heads).
ClassSets class_set_for(LabelAvailability sample, Method method);

// Output channel layout of the model a method trains (single-head methods).
ClassSet output_channels(Method method);

enum class Coverage { kRequirePartition, kAllowPartial };

// Per-member indicator targets, channel-major with one channel per member.
// With kRequirePartition a class set that neither covers every code present
// in `y` nor contains a merged complement is rejected.
ChannelGrid one_hot(const LabelVolume& y, const ClassSet& cs,
                    Coverage coverage = Coverage::kRequirePartition);

// For each member of `cs`, a bitmask over `channels` whose probabilities sum
// to that member. Throws std::invalid_argument when a member is not an
// exact union of channels.
std::vector<std::uint32_t> member_channel_masks(const std::vector<ClassId>& channels,
                                                const ClassSet& cs);

// Sums channel probabilities into the members of `cs`.
ProbVolume marginalize_probs(const ProbVolume& p, const ClassSet& cs);

// Per-voxel label code of the most probable channel. Plain classes map to
// their code and NOT_BG to 1 (the merged-foreground code).
LabelVolume codes_from_argmax(const ProbVolume& p);

// code > 0 -> 1 (NOT_BG).
LabelVolume merge_foreground(const LabelVolume& y);

// Keeps `foreground`'s code, everything else becomes BG.
LabelVolume binarize(const LabelVolume& y, ClassId foreground);

// Composes partial ground truth with a teacher's hard labels: a positive
// available class always wins; a teacher vote for an available class the
// ground truth marks negative becomes BG; elsewhere the teacher fills in.
// A fully labelled sample returns the ground truth unchanged.
LabelVolume compose_pseudolabel(const LabelVolume& gt, LabelAvailability available,
                                const LabelVolume& teacher);

}  // namespace plseg

#endif  // PLSEG_LABELSPACE_HPP_
