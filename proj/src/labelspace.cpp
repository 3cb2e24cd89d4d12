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

#include "plseg/labelspace.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

namespace plseg {
namespace {

int lowest_code(ClassId c) { return std::countr_zero(static_cast<unsigned>(base_mask(c))); }

}  // namespace

ClassSet::ClassSet(std::initializer_list<ClassId> members)
    : ClassSet(std::vector<ClassId>(members)) {}

ClassSet::ClassSet(std::vector<ClassId> members) : members_(std::move(members)) {
  if (members_.empty()) throw std::invalid_argument("class set must not be empty");
  std::uint8_t seen = 0;
  for (ClassId c : members_) {
    if (seen & base_mask(c)) {
      throw std::invalid_argument("class set members overlap: " + to_string());
    }
    seen |= base_mask(c);
  }
  std::sort(members_.begin(), members_.end(),
            [](ClassId a, ClassId b) { return lowest_code(a) < lowest_code(b); });
}

bool ClassSet::contains(ClassId c) const {
  return std::find(members_.begin(), members_.end(), c) != members_.end();
}

int ClassSet::index_of(ClassId c) const {
  auto it = std::find(members_.begin(), members_.end(), c);
  return it == members_.end() ? -1 : static_cast<int>(it - members_.begin());
}

std::uint8_t ClassSet::coverage() const {
  std::uint8_t m = 0;
  for (ClassId c : members_) m |= base_mask(c);
  return m;
}

ClassSet ClassSet::without(ClassId c) const {
  std::vector<ClassId> rest;
  for (ClassId m : members_) {
    if (m != c) rest.push_back(m);
  }
  return ClassSet(std::move(rest));
}

std::string ClassSet::to_string() const {
  std::string s = "{";
  for (std::size_t i = 0; i < members_.size(); ++i) {
    if (i) s += ",";
    s += class_name(members_[i]);
  }
  return s + "}";
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kMulticlass: return "multiclass";
    case Method::kBinaryWmh: return "binary_wmh";
    case Method::kBinaryIsl: return "binary_isl";
    case Method::kClassConditional: return "class_conditional";
    case Method::kPseudolabels: return "pseudolabels";
    case Method::kPhasedStage1: return "phased_stage1";
    case Method::kPhasedStage2: return "phased_stage2";
    case Method::kClassAdaptive: return "class_adaptive";
    case Method::kMarginal: return "marginal";
  }
  return "?";
}

ClassSets class_set_for(LabelAvailability sample, Method method) {
  using enum ClassId;
  if (!sample.any()) throw std::invalid_argument("sample has no available label");
  const ClassSet full{kBg, kWmh, kIsl};
  switch (method) {
    case Method::kMulticlass:
    case Method::kPseudolabels:
    case Method::kPhasedStage2:
      return {full, full.without(kBg)};
    case Method::kBinaryWmh:
      if (!sample.has_wmh) throw std::invalid_argument("binary WMH method needs a WMH label");
      return {ClassSet{kBg, kWmh}, ClassSet{kWmh}};
    case Method::kBinaryIsl:
      if (!sample.has_isl) throw std::invalid_argument("binary ISL method needs an ISL label");
      return {ClassSet{kBg, kIsl}, ClassSet{kIsl}};
    case Method::kClassConditional:
      if (sample.fully_labelled()) {
        throw std::invalid_argument(
            "class-conditional samples with both labels train both heads; use one head per label");
      }
      return sample.has_wmh ? ClassSets{ClassSet{kBg, kWmh}, ClassSet{kWmh}}
                            : ClassSets{ClassSet{kBg, kIsl}, ClassSet{kIsl}};
    case Method::kPhasedStage1:
      return {ClassSet{kBg, kNotBg}, ClassSet{kNotBg}};
    case Method::kClassAdaptive:
      if (sample.fully_labelled()) return {full, full.without(kBg)};
      // A missing foreground label makes BG unknown as well.
      return sample.has_wmh ? ClassSets{ClassSet{kWmh}, ClassSet{kWmh}}
                            : ClassSets{ClassSet{kIsl}, ClassSet{kIsl}};
    case Method::kMarginal:
      if (sample.fully_labelled()) return {full, full};
      return sample.has_wmh ? ClassSets{ClassSet{kNotWmh, kWmh}, ClassSet{kNotWmh, kWmh}}
                            : ClassSets{ClassSet{kNotIsl, kIsl}, ClassSet{kNotIsl, kIsl}};
  }
  throw std::invalid_argument("unknown method");
}

ClassSet output_channels(Method method) {
  using enum ClassId;
  switch (method) {
    case Method::kBinaryWmh: return {kBg, kWmh};
    case Method::kBinaryIsl: return {kBg, kIsl};
    case Method::kPhasedStage1: return {kBg, kNotBg};
    case Method::kClassConditional:
      throw std::invalid_argument("class-conditional models have two heads");
    default: return {kBg, kWmh, kIsl};
  }
}

ChannelGrid one_hot(const LabelVolume& y, const ClassSet& cs, Coverage coverage) {
  if (coverage == Coverage::kRequirePartition) {
    bool has_merged = false;
    for (ClassId c : cs) has_merged |= is_merged(c);
    std::uint8_t present = 0;
    for (std::uint8_t code : y.codes()) present |= static_cast<std::uint8_t>(1u << code);
    if ((present & ~cs.coverage()) != 0 && !has_merged) {
      throw std::invalid_argument("class set " + cs.to_string() +
                                  " does not cover the label codes present");
    }
  }
  ChannelGrid out(y.shape(), cs.size());
  for (int m = 0; m < cs.size(); ++m) {
    const std::uint8_t mask = base_mask(cs[m]);
    auto ch = out.channel(m);
    for (std::size_t i = 0; i < y.size(); ++i) ch[i] = (mask >> y[i]) & 1u;
  }
  return out;
}

std::vector<std::uint32_t> member_channel_masks(const std::vector<ClassId>& channels,
                                                const ClassSet& cs) {
  std::vector<std::uint32_t> masks;
  masks.reserve(static_cast<std::size_t>(cs.size()));
  for (ClassId m : cs) {
    std::uint32_t bits = 0;
    std::uint8_t covered = 0;
    for (std::size_t k = 0; k < channels.size(); ++k) {
      const std::uint8_t ck = base_mask(channels[k]);
      if ((ck & base_mask(m)) == ck) {
        bits |= 1u << k;
        covered |= ck;
      }
    }
    if (covered != base_mask(m)) {
      throw std::invalid_argument("class " + std::string(class_name(m)) +
                                  " is not a union of the model's output channels");
    }
    masks.push_back(bits);
  }
  return masks;
}

ProbVolume marginalize_probs(const ProbVolume& p, const ClassSet& cs) {
  const auto masks = member_channel_masks(p.classes(), cs);
  ProbVolume out(p.shape(), p.spacing(), cs.members());
  const int nc = p.num_classes();
  for (int m = 0; m < cs.size(); ++m) {
    auto dst = out.channel(m);
    for (int k = 0; k < nc; ++k) {
      if (!((masks[static_cast<std::size_t>(m)] >> k) & 1u)) continue;
      auto src = p.channel(k);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return out;
}

LabelVolume codes_from_argmax(const ProbVolume& p) {
  std::vector<std::uint8_t> code_of;
  for (ClassId c : p.classes()) {
    switch (c) {
      case ClassId::kBg: code_of.push_back(kCodeBg); break;
      case ClassId::kWmh: code_of.push_back(kCodeWmh); break;
      case ClassId::kIsl: code_of.push_back(kCodeIsl); break;
      case ClassId::kNotBg: code_of.push_back(1); break;
      default:
        throw std::invalid_argument("no label code for class " + std::string(class_name(c)));
    }
  }
  const std::vector<std::uint8_t> arg = p.argmax();
  LabelVolume out(p.shape(), p.spacing());
  for (std::size_t i = 0; i < arg.size(); ++i) out[i] = code_of[arg[i]];
  return out;
}

LabelVolume merge_foreground(const LabelVolume& y) {
  LabelVolume out(y.shape(), y.spacing());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] != kCodeBg ? 1 : 0;
  return out;
}

LabelVolume binarize(const LabelVolume& y, ClassId foreground) {
  const std::uint8_t code = foreground == ClassId::kWmh ? kCodeWmh : kCodeIsl;
  if (foreground != ClassId::kWmh && foreground != ClassId::kIsl) {
    throw std::invalid_argument("binarize expects WMH or ISL");
  }
  LabelVolume out(y.shape(), y.spacing());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] == code ? code : kCodeBg;
  return out;
}

LabelVolume compose_pseudolabel(const LabelVolume& gt, LabelAvailability available,
                                const LabelVolume& teacher) {
  if (available.fully_labelled()) return gt;
  if (!(gt.shape() == teacher.shape())) {
    throw std::invalid_argument("pseudolabel teacher shape differs from ground truth");
  }
  auto is_available = [&](std::uint8_t code) {
    return (code == kCodeWmh && available.has_wmh) || (code == kCodeIsl && available.has_isl);
  };
  LabelVolume out(gt.shape(), gt.spacing());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::uint8_t g = gt[i];
    const std::uint8_t t = teacher[i];
    if (is_available(g)) {
      out[i] = g;
    } else if (is_available(t)) {
      out[i] = kCodeBg;
    } else {
      out[i] = t;
    }
  }
  return out;
}

}  // namespace plseg
