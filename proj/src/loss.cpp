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

#include "plseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace plseg {

ProbVolume softmax_probs(const ChannelGrid& logits, std::vector<ClassId> classes,
                         Spacing spacing) {
  if (static_cast<int>(classes.size()) != logits.channels) {
    throw std::invalid_argument("class list does not match logit channels");
  }
  ProbVolume out(logits.shape, spacing, std::move(classes));
  const int nc = logits.channels;
  const std::size_t n = logits.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (int c = 0; c < nc; ++c) {
      const double z = logits(c, i);
      if (!std::isfinite(z)) throw NumericalError("non-finite logit in softmax");
      mx = std::max(mx, z);
    }
    double sum = 0.0;
    for (int c = 0; c < nc; ++c) {
      const double e = std::exp(logits(c, i) - mx);
      out(c, i) = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < nc; ++c) out(c, i) *= inv;
  }
  return out;
}

namespace {

// Member predictions ybar(m, i) for every member of cs.
ChannelGrid member_probs(const ProbVolume& probs, const std::vector<std::uint32_t>& masks) {
  ChannelGrid out(probs.shape(), static_cast<int>(masks.size()));
  for (std::size_t m = 0; m < masks.size(); ++m) {
    auto dst = out.channel(static_cast<int>(m));
    for (int k = 0; k < probs.num_classes(); ++k) {
      if (!((masks[m] >> k) & 1u)) continue;
      auto src = probs.channel(k);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return out;
}

// Chains dL/dybar(m, i) through the member sums and the softmax:
// dL/dz(k, i) = p(k, i) * (sum_{m covers k} a(m, i) - sum_m a(m, i) ybar(m, i)).
ChannelGrid chain_to_logits(const ProbVolume& probs, const std::vector<std::uint32_t>& masks,
                            const ChannelGrid& ybar, const ChannelGrid& dl_dybar) {
  const int nc = probs.num_classes();
  const int nm = static_cast<int>(masks.size());
  const std::size_t n = probs.voxels();
  ChannelGrid grad(probs.shape(), nc);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int m = 0; m < nm; ++m) s += dl_dybar(m, i) * ybar(m, i);
    for (int k = 0; k < nc; ++k) {
      double a = 0.0;
      for (int m = 0; m < nm; ++m) {
        if ((masks[static_cast<std::size_t>(m)] >> k) & 1u) a += dl_dybar(m, i);
      }
      grad(k, i) = probs(k, i) * (a - s);
    }
  }
  return grad;
}

void check_targets(const ProbVolume& probs, const ChannelGrid& targets, const ClassSet& cs) {
  if (targets.channels != cs.size() || !(targets.shape == probs.shape())) {
    throw std::invalid_argument("targets do not match class set or probability shape");
  }
}

}  // namespace

LossTerm cross_entropy(const ProbVolume& probs, const ChannelGrid& targets, const ClassSet& cs,
                       const LossConfig& cfg) {
  check_targets(probs, targets, cs);
  const auto masks = member_channel_masks(probs.classes(), cs);
  const ChannelGrid ybar = member_probs(probs, masks);
  const std::size_t n = probs.voxels();
  const double inv_n = 1.0 / static_cast<double>(n);
  ChannelGrid dl(probs.shape(), cs.size());
  double sum = 0.0;
  for (int m = 0; m < cs.size(); ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const double y = targets(m, i);
      if (y == 0.0) continue;
      const double p = ybar(m, i);
      if (p > cfg.prob_clamp) {
        sum += y * std::log(p);
        dl(m, i) = -y * inv_n / p;
      } else {
        // Clamped: constant in the logits.
        sum += y * std::log(cfg.prob_clamp);
      }
    }
  }
  return {-sum * inv_n, chain_to_logits(probs, masks, ybar, dl)};
}

LossTerm dice_loss(const ProbVolume& probs, const ChannelGrid& targets, const ClassSet& cs,
                   const LossConfig& cfg) {
  if (!(cfg.dice_epsilon > 0.0)) throw std::invalid_argument("dice epsilon must be positive");
  check_targets(probs, targets, cs);
  const auto masks = member_channel_masks(probs.classes(), cs);
  const ChannelGrid ybar = member_probs(probs, masks);
  const std::size_t n = probs.voxels();
  const double scale = 1.0 / static_cast<double>(cs.size());
  const double eps = cfg.dice_epsilon;
  ChannelGrid dl(probs.shape(), cs.size());
  double value = 0.0;
  for (int m = 0; m < cs.size(); ++m) {
    double inter = 0.0, ysum = 0.0, psum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = targets(m, i);
      const double p = ybar(m, i);
      inter += y * p;
      ysum += y;
      psum += p;
    }
    const double num = 2.0 * inter + eps;
    const double den = ysum + psum + eps;
    value -= scale * num / den;
    const double den2 = den * den;
    for (std::size_t i = 0; i < n; ++i) {
      dl(m, i) = -scale * (2.0 * targets(m, i) * den - num) / den2;
    }
  }
  return {value, chain_to_logits(probs, masks, ybar, dl)};
}

LossValue class_set_loss(const ChannelGrid& logits, const ClassSet& channels,
                         const LabelVolume& y, const ClassSets& sets, const LossConfig& cfg) {
  if (!(logits.shape == y.shape())) {
    throw std::invalid_argument("logit shape " + to_string(logits.shape) +
                                " differs from label shape " + to_string(y.shape()));
  }
  const ProbVolume probs = softmax_probs(logits, channels.members(), y.spacing());
  const LossTerm ce =
      cross_entropy(probs, one_hot(y, sets.ce, Coverage::kAllowPartial), sets.ce, cfg);
  const LossTerm dice =
      dice_loss(probs, one_hot(y, sets.dice, Coverage::kAllowPartial), sets.dice, cfg);
  LossValue out;
  out.ce = ce.value;
  out.dice = dice.value;
  out.total = ce.value + dice.value;
  if (!std::isfinite(out.total)) throw NumericalError("non-finite loss");
  out.grad_logits = ce.grad_logits;
  for (std::size_t i = 0; i < out.grad_logits.data.size(); ++i) {
    out.grad_logits.data[i] += dice.grad_logits.data[i];
  }
  return out;
}

LabelVolume method_labels(const LabelVolume& y, LabelAvailability available, Method method) {
  switch (method) {
    case Method::kBinaryWmh: return binarize(y, ClassId::kWmh);
    case Method::kBinaryIsl: return binarize(y, ClassId::kIsl);
    case Method::kPhasedStage1: return merge_foreground(y);
    case Method::kClassConditional:
      if (available.fully_labelled()) {
        throw std::invalid_argument("class-conditional labels need a single head");
      }
      return binarize(y, available.has_wmh ? ClassId::kWmh : ClassId::kIsl);
    default: return y;
  }
}

ClassSet method_channels(LabelAvailability available, Method method) {
  if (method == Method::kClassConditional) {
    if (available.fully_labelled() || !available.any()) {
      throw std::invalid_argument("class-conditional evaluation needs exactly one label");
    }
    return available.has_wmh ? output_channels(Method::kBinaryWmh)
                             : output_channels(Method::kBinaryIsl);
  }
  return output_channels(method);
}

LossValue combined_loss(const ChannelGrid& logits, const LabelVolume& y,
                        LabelAvailability available, Method method, const LossConfig& cfg) {
  const ClassSets sets = class_set_for(available, method);
  return class_set_loss(logits, method_channels(available, method),
                        method_labels(y, available, method), sets, cfg);
}

}  // namespace plseg
