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

// Cross-entropy + soft Dice over arbitrary class sets, with analytic
// gradients with respect to the logits.
//
// A class-set member's prediction is the summed softmax probability of the
// output channels it covers, so merged classes (marginal loss) and plain
// classes share one code path:
//
//   CE   = -1/N  sum_i sum_{c in C_CE}  y_ic log max(p_ic, clamp)
//   Dice = -1/|C_Dice| sum_c (2 sum_i y_ic p_ic + eps) / (sum_i y_ic + sum_i p_ic + eps)

#ifndef PLSEG_LOSS_HPP_
#define PLSEG_LOSS_HPP_

#include "plseg/labelspace.hpp"
#include "plseg/volume.hpp"

namespace plseg {

struct LossConfig {
  double dice_epsilon = 1e-5;
  double prob_clamp = 1e-12;
};

struct LossTerm {
  double value = 0.0;
  ChannelGrid grad_logits;
};

struct LossValue {
  double total = 0.0;
  double ce = 0.0;
  double dice = 0.0;
  ChannelGrid grad_logits;
};

// Max-subtracted softmax. Throws NumericalError on a non-finite logit.
ProbVolume softmax_probs(const ChannelGrid& logits, std::vector<ClassId> classes,
                         Spacing spacing = {});

// `probs` must be softmax outputs of the logits the gradient refers to.
// `targets` holds one channel per member of `cs` (see one_hot).
LossTerm cross_entropy(const ProbVolume& probs, const ChannelGrid& targets,
                       const ClassSet& cs, const LossConfig& cfg = {});
LossTerm dice_loss(const ProbVolume& probs, const ChannelGrid& targets, const ClassSet& cs,
                   const LossConfig& cfg = {});

// CE + Dice for an explicit (C_CE, C_Dice) pair on a model whose output
// channels are `channels`. `y` must already be in the model's label space.
LossValue class_set_loss(const ChannelGrid& logits, const ClassSet& channels,
                         const LabelVolume& y, const ClassSets& sets,
                         const LossConfig& cfg = {});

// Labels as the method sees them: binarised for binary heads, merged for
// the phased pre-training stage, unchanged otherwise.
LabelVolume method_labels(const LabelVolume& y, LabelAvailability available, Method method);

// Model output layout for a single-head evaluation of `method`. For the
// class-conditional method, the head matching the single available label.
ClassSet method_channels(LabelAvailability available, Method method);

// Equally weighted CE + Dice with class sets from class_set_for. For
// class-conditional samples with both labels the caller evaluates each head
// separately and averages.
LossValue combined_loss(const ChannelGrid& logits, const LabelVolume& y,
                        LabelAvailability available, Method method,
                        const LossConfig& cfg = {});

}  // namespace plseg

#endif  // PLSEG_LOSS_HPP_
