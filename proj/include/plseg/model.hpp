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

// Reference voxel classifier: a stack of 3x3x3 convolutions with leaky
// rectifiers, then one or two 1x1x1 heads sharing that trunk. Parameters
// live in one flat vector so the optimiser and checkpoints see a single
// buffer.

#ifndef PLSEG_MODEL_HPP_
#define PLSEG_MODEL_HPP_

#include <functional>
#include <string>
#include <vector>

#include "plseg/labelspace.hpp"
#include "plseg/loss.hpp"
#include "plseg/sampling.hpp"
#include "plseg/volume.hpp"

namespace plseg {

struct ModelArch {
  int in_channels = 1;
  int width = 8;
  int hidden_layers = 2;
  double leaky_slope = 0.01;

  void validate() const;
  friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

// Activations kept by forward() for a later backward().
struct ForwardPass {
  std::vector<ChannelGrid> pre;   // per trunk layer, before the rectifier
  std::vector<ChannelGrid> post;  // post[0] is the input; post[l+1] follows layer l
  std::vector<ChannelGrid> logits;  // per head
};

class VoxelClassifier {
 public:
  VoxelClassifier() = default;
  // One head per class set; parameters drawn from `seed`.
  VoxelClassifier(ModelArch arch, std::vector<ClassSet> heads, std::uint64_t seed);

  const ModelArch& arch() const { return arch_; }
  int num_heads() const { return static_cast<int>(heads_.size()); }
  const ClassSet& head_classes(int h) const { return heads_[static_cast<std::size_t>(h)]; }
  const std::vector<ClassSet>& heads() const { return heads_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t trunk_size() const { return trunk_size_; }
  std::size_t head_offset(int h) const;
  std::size_t head_size(int h) const;

  // Fresh He-initialised head for `classes`; the trunk is left untouched.
  void replace_head(int h, ClassSet classes, std::uint64_t seed);

  std::string trunk_digest() const;
  std::string digest() const;

  // Input is a single-channel image (in_channels must be 1) or a grid with
  // in_channels channels.
  ForwardPass forward(const Volume3D& image) const;
  ForwardPass forward(const ChannelGrid& input) const;

  // Gradient of sum_h <grad_logits[h], logits[h]> with respect to the
  // parameters, accumulated into `grad`. A null entry means a zero gradient
  // for that head.
  void backward(const ForwardPass& pass, const std::vector<const ChannelGrid*>& grad_logits,
                std::vector<double>& grad) const;

  friend bool operator==(const VoxelClassifier&, const VoxelClassifier&) = default;

 private:
  void layout();
  void init_range(std::size_t offset, std::size_t count, int fan_in, std::uint64_t seed);

  ModelArch arch_;
  std::vector<ClassSet> heads_;
  std::vector<double> params_;
  std::size_t trunk_size_ = 0;
  std::vector<std::size_t> layer_offset_;
  std::vector<std::size_t> head_offset_;
};

// Softmax of one head's logits, optionally divided by a temperature first.
ProbVolume predict(const VoxelClassifier& m, const Volume3D& image, int head = 0,
                   double temperature = 1.0);

// Mean of the members' probability volumes for one head. Members must share
// that head's class list.
ProbVolume ensemble_predict(const std::vector<const VoxelClassifier*>& models,
                            const Volume3D& image, int head = 0,
                            const std::vector<double>& temperatures = {});

struct TrainerConfig {
  double lr0 = 0.01;
  double momentum = 0.99;
  double lr_power = 0.9;
  int epochs = 50;
  int batch_size = 2;
  int steps_per_epoch = 40;
  std::uint64_t seed = 0;
  Shape patch{16, 16, 16};
  double p_background = 0.3;
  AugmentationConfig augmentation;
  LossConfig loss;
  ModelArch arch;
  int jobs = 1;

  static TrainerConfig desk();
  static TrainerConfig paper();
  void validate() const;
};

double poly_lr(int epoch, const TrainerConfig& cfg);

// Nesterov momentum: v <- mu v - lr g; p <- p + mu v - lr g.
void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              std::vector<double>& velocity, double lr, double momentum);

struct TrainingSample {
  std::string id;
  Volume3D image;
  LabelVolume labels;
  LabelAvailability available;
};

struct ValidationSample {
  std::string id;
  Volume3D image;
  LabelVolume labels;  // fully labelled
};

struct Checkpoint {
  VoxelClassifier model;
  int epoch = -1;  // -1: the initial parameters
  double val_dsc = 0.0;
  double temperature = 1.0;
  std::string method;
  std::string config_json;  // provenance echo
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double ce = 0.0;
  double dice = 0.0;
  double val_dsc = 0.0;
  bool improved = false;
};

// One element of a training batch after sampling and augmentation.
struct BatchItem {
  const TrainingSample* sample = nullptr;
  Volume3D image;
  LabelVolume labels;
};

struct StepInfo {
  int epoch = 0;
  int step = 0;  // global step index
  const VoxelClassifier* model = nullptr;  // parameters before the update
  const std::vector<BatchItem>* batch = nullptr;
  double ce = 0.0;
  double dice = 0.0;
};

using StepHook = std::function<void(const StepInfo&)>;

struct TrainResult {
  Checkpoint best;
  VoxelClassifier last;
  std::vector<EpochLog> log;
};

// Validation score of a model for a method: mean over the classes the method
// trains of the per-class mean DSC at the argmax decision.
double validation_dsc(const VoxelClassifier& m, Method method,
                      const std::vector<ValidationSample>& val);

// Single- or dual-head model matching what `method` trains.
VoxelClassifier make_model(Method method, const ModelArch& arch, std::uint64_t seed);

// Loss and parameter gradient of one patch for `method`. For dual-head
// models with both labels present, the two head losses are averaged.
LossValue sample_loss(const VoxelClassifier& m, const Volume3D& image, const LabelVolume& labels,
                      LabelAvailability available, Method method, const LossConfig& cfg,
                      std::vector<double>* grad);

TrainResult train(VoxelClassifier init, const std::vector<TrainingSample>& data, Method method,
                  const std::vector<ValidationSample>& val, const TrainerConfig& cfg,
                  const StepHook& hook = {});

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace plseg

#endif  // PLSEG_MODEL_HPP_
