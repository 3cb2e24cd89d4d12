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

#include "plseg/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "json.hpp"
#include "plseg/metrics.hpp"
#include "plseg/strategies.hpp"

namespace plseg {

using nlohmann::json;

void ModelArch::validate() const {
  if (in_channels < 1 || width < 1 || hidden_layers < 1) {
    throw ConfigError("model needs at least one input channel, one layer and width >= 1");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky slope outside [0, 1)");
}

namespace {

constexpr int kTaps = 27;

Shape padded(Shape s) { return {s.nx + 2, s.ny + 2, s.nz + 2}; }

// Copies each channel into a zero border of one voxel.
std::vector<double> pad_channels(const ChannelGrid& g) {
  const Shape ps = padded(g.shape);
  const std::size_t pv = ps.voxels();
  std::vector<double> out(pv * static_cast<std::size_t>(g.channels), 0.0);
  const Shape& s = g.shape;
  for (int c = 0; c < g.channels; ++c) {
    const double* src = g.channel(c).data();
    double* dst = out.data() + static_cast<std::size_t>(c) * pv;
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y) {
        std::memcpy(dst + ps.index(1, y + 1, z + 1), src + s.index(0, y, z),
                    sizeof(double) * static_cast<std::size_t>(s.nx));
      }
  }
  return out;
}

// out(co) = b(co) + sum_ci W(co, ci) * in(ci), 3x3x3 cross-correlation with
// zero padding.
void conv3_forward(const ChannelGrid& in, const double* w, const double* b, int co_n,
                   ChannelGrid& out) {
  const Shape s = in.shape;
  const Shape ps = padded(s);
  const std::size_t pv = ps.voxels();
  const std::vector<double> pin = pad_channels(in);
  const int ci_n = in.channels;
  const int nx = s.nx;
  out = ChannelGrid(s, co_n);
  for (int co = 0; co < co_n; ++co) {
    for (int z = 0; z < s.nz; ++z) {
      for (int y = 0; y < s.ny; ++y) {
        double* acc = &out(co, s.index(0, y, z));
        for (int x = 0; x < nx; ++x) acc[x] = b[co];
        for (int ci = 0; ci < ci_n; ++ci) {
          const double* wk = w + (static_cast<std::size_t>(co) * ci_n + ci) * kTaps;
          const double* base = pin.data() + static_cast<std::size_t>(ci) * pv;
          for (int kz = 0; kz < 3; ++kz) {
            for (int ky = 0; ky < 3; ++ky) {
              const double* src = base + ps.index(0, y + ky, z + kz);
              const double w0 = wk[(kz * 3 + ky) * 3], w1 = wk[(kz * 3 + ky) * 3 + 1],
                           w2 = wk[(kz * 3 + ky) * 3 + 2];
              for (int x = 0; x < nx; ++x) acc[x] += w0 * src[x] + w1 * src[x + 1] + w2 * src[x + 2];
            }
          }
        }
      }
    }
  }
}

double lane_sum(const double (&a)[4]) { return (a[0] + a[1]) + (a[2] + a[3]); }

// Accumulates dW, db from d_out; writes d_in when requested.
void conv3_backward(const ChannelGrid& in, const ChannelGrid& d_out, const double* w, double* gw,
                    double* gb, ChannelGrid* d_in) {
  const Shape s = in.shape;
  const Shape ps = padded(s);
  const std::size_t pv = ps.voxels();
  const int ci_n = in.channels;
  const int co_n = d_out.channels;
  const int nx = s.nx;
  const std::vector<double> pin = pad_channels(in);

  for (int co = 0; co < co_n; ++co) {
    double sb = 0.0;
    for (double v : d_out.channel(co)) sb += v;
    gb[co] += sb;
    for (int ci = 0; ci < ci_n; ++ci) {
      double* gk = gw + (static_cast<std::size_t>(co) * ci_n + ci) * kTaps;
      const double* base = pin.data() + static_cast<std::size_t>(ci) * pv;
      for (int kz = 0; kz < 3; ++kz) {
        for (int ky = 0; ky < 3; ++ky) {
          // Four independent lanes per tap keep the reductions vectorisable.
          double a0[4] = {}, a1[4] = {}, a2[4] = {};
          for (int z = 0; z < s.nz; ++z) {
            for (int y = 0; y < s.ny; ++y) {
              const double* d = d_out.channel(co).data() + s.index(0, y, z);
              const double* src = base + ps.index(0, y + ky, z + kz);
              int x = 0;
              for (; x + 4 <= nx; x += 4) {
                for (int l = 0; l < 4; ++l) {
                  a0[l] += d[x + l] * src[x + l];
                  a1[l] += d[x + l] * src[x + l + 1];
                  a2[l] += d[x + l] * src[x + l + 2];
                }
              }
              for (; x < nx; ++x) {
                a0[0] += d[x] * src[x];
                a1[0] += d[x] * src[x + 1];
                a2[0] += d[x] * src[x + 2];
              }
            }
          }
          gk[(kz * 3 + ky) * 3] += lane_sum(a0);
          gk[(kz * 3 + ky) * 3 + 1] += lane_sum(a1);
          gk[(kz * 3 + ky) * 3 + 2] += lane_sum(a2);
        }
      }
    }
  }

  if (!d_in) return;
  // d_in(ci) = full convolution of d_out with the flipped kernels.
  const std::vector<double> pd = pad_channels(d_out);
  *d_in = ChannelGrid(s, ci_n);
  for (int ci = 0; ci < ci_n; ++ci) {
    for (int z = 0; z < s.nz; ++z) {
      for (int y = 0; y < s.ny; ++y) {
        double* acc = &(*d_in)(ci, s.index(0, y, z));
        for (int co = 0; co < co_n; ++co) {
          const double* wk = w + (static_cast<std::size_t>(co) * ci_n + ci) * kTaps;
          const double* base = pd.data() + static_cast<std::size_t>(co) * pv;
          for (int kz = 0; kz < 3; ++kz) {
            for (int ky = 0; ky < 3; ++ky) {
              const double* src = base + ps.index(0, y + 2 - ky, z + 2 - kz);
              const double w0 = wk[(kz * 3 + ky) * 3], w1 = wk[(kz * 3 + ky) * 3 + 1],
                           w2 = wk[(kz * 3 + ky) * 3 + 2];
              for (int x = 0; x < nx; ++x) acc[x] += w0 * src[x + 2] + w1 * src[x + 1] + w2 * src[x];
            }
          }
        }
      }
    }
  }
}

}  // namespace

VoxelClassifier::VoxelClassifier(ModelArch arch, std::vector<ClassSet> heads, std::uint64_t seed)
    : arch_(arch), heads_(std::move(heads)) {
  arch_.validate();
  if (heads_.empty()) throw ConfigError("model needs at least one head");
  layout();
  for (int l = 0; l < arch_.hidden_layers; ++l) {
    const int ci = l == 0 ? arch_.in_channels : arch_.width;
    init_range(layer_offset_[static_cast<std::size_t>(l)],
               static_cast<std::size_t>(arch_.width * ci * kTaps), ci * kTaps,
               derive_seed(seed, {hash_tag("layer"), static_cast<std::uint64_t>(l)}));
  }
  for (int h = 0; h < num_heads(); ++h) {
    init_range(head_offset(h), static_cast<std::size_t>(head_classes(h).size() * arch_.width),
               arch_.width, derive_seed(seed, {hash_tag("head"), static_cast<std::uint64_t>(h)}));
  }
}

void VoxelClassifier::layout() {
  layer_offset_.clear();
  head_offset_.clear();
  std::size_t off = 0;
  for (int l = 0; l < arch_.hidden_layers; ++l) {
    const int ci = l == 0 ? arch_.in_channels : arch_.width;
    layer_offset_.push_back(off);
    off += static_cast<std::size_t>(arch_.width * ci * kTaps + arch_.width);
  }
  trunk_size_ = off;
  for (const ClassSet& h : heads_) {
    head_offset_.push_back(off);
    off += static_cast<std::size_t>(h.size() * arch_.width + h.size());
  }
  params_.resize(off, 0.0);
}

std::size_t VoxelClassifier::head_offset(int h) const {
  return head_offset_.at(static_cast<std::size_t>(h));
}

std::size_t VoxelClassifier::head_size(int h) const {
  const ClassSet& cs = head_classes(h);
  return static_cast<std::size_t>(cs.size() * arch_.width + cs.size());
}

// He-normal weights for a leaky rectifier; biases in the range stay zero.
void VoxelClassifier::init_range(std::size_t offset, std::size_t count, int fan_in,
                                 std::uint64_t seed) {
  const double a = arch_.leaky_slope;
  const double sd = std::sqrt(2.0 / (1.0 + a * a) / fan_in);
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  for (std::size_t i = 0; i < count; ++i) params_[offset + i] = n(rng);
}

void VoxelClassifier::replace_head(int h, ClassSet classes, std::uint64_t seed) {
  if (h < 0 || h >= num_heads()) throw std::out_of_range("head index");
  std::vector<double> trunk(params_.begin(), params_.begin() + static_cast<long>(trunk_size_));
  std::vector<std::vector<double>> others;
  for (int k = 0; k < num_heads(); ++k) {
    const auto b = params_.begin() + static_cast<long>(head_offset(k));
    others.emplace_back(b, b + static_cast<long>(head_size(k)));
  }
  heads_[static_cast<std::size_t>(h)] = std::move(classes);
  params_.clear();
  layout();
  std::copy(trunk.begin(), trunk.end(), params_.begin());
  for (int k = 0; k < num_heads(); ++k) {
    if (k == h) continue;
    std::copy(others[static_cast<std::size_t>(k)].begin(), others[static_cast<std::size_t>(k)].end(),
              params_.begin() + static_cast<long>(head_offset(k)));
  }
  init_range(head_offset(h), static_cast<std::size_t>(head_classes(h).size() * arch_.width),
             arch_.width, seed);
}

std::string VoxelClassifier::trunk_digest() const {
  return sha256_hex(params_.data(), trunk_size_ * sizeof(double));
}

std::string VoxelClassifier::digest() const {
  return sha256_hex(params_.data(), params_.size() * sizeof(double));
}

ForwardPass VoxelClassifier::forward(const Volume3D& image) const {
  ChannelGrid in(image.shape(), 1);
  std::copy(image.data().begin(), image.data().end(), in.data.begin());
  return forward(in);
}

ForwardPass VoxelClassifier::forward(const ChannelGrid& input) const {
  if (input.channels != arch_.in_channels) {
    throw DataError("model expects " + std::to_string(arch_.in_channels) +
                    " input channel(s), got " + std::to_string(input.channels));
  }
  ForwardPass f;
  f.post.push_back(input);
  const int w = arch_.width;
  for (int l = 0; l < arch_.hidden_layers; ++l) {
    const ChannelGrid& in = f.post.back();
    const double* wp = params_.data() + layer_offset_[static_cast<std::size_t>(l)];
    const double* bp = wp + static_cast<std::size_t>(w * in.channels * kTaps);
    ChannelGrid pre;
    conv3_forward(in, wp, bp, w, pre);
    ChannelGrid post = pre;
    for (double& v : post.data) {
      if (v < 0.0) v *= arch_.leaky_slope;
    }
    f.pre.push_back(std::move(pre));
    f.post.push_back(std::move(post));
  }
  const ChannelGrid& feat = f.post.back();
  const std::size_t n = feat.voxels();
  for (int h = 0; h < num_heads(); ++h) {
    const int nc = head_classes(h).size();
    const double* wp = params_.data() + head_offset(h);
    const double* bp = wp + static_cast<std::size_t>(nc * w);
    ChannelGrid z(feat.shape, nc);
    for (int c = 0; c < nc; ++c) {
      double* out = z.channel(c).data();
      for (std::size_t i = 0; i < n; ++i) out[i] = bp[c];
      for (int j = 0; j < w; ++j) {
        const double wj = wp[c * w + j];
        const double* src = feat.channel(j).data();
        for (std::size_t i = 0; i < n; ++i) out[i] += wj * src[i];
      }
    }
    f.logits.push_back(std::move(z));
  }
  return f;
}

void VoxelClassifier::backward(const ForwardPass& pass,
                               const std::vector<const ChannelGrid*>& grad_logits,
                               std::vector<double>& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  const int w = arch_.width;
  const ChannelGrid& feat = pass.post.back();
  const std::size_t n = feat.voxels();
  ChannelGrid d_feat(feat.shape, w);
  bool any = false;
  for (int h = 0; h < num_heads(); ++h) {
    const ChannelGrid* g = h < static_cast<int>(grad_logits.size()) ? grad_logits[static_cast<std::size_t>(h)] : nullptr;
    if (!g) continue;
    any = true;
    const int nc = head_classes(h).size();
    const double* wp = params_.data() + head_offset(h);
    double* gw = grad.data() + head_offset(h);
    double* gb = gw + static_cast<std::size_t>(nc * w);
    for (int c = 0; c < nc; ++c) {
      const double* gc = g->channel(c).data();
      double sb = 0.0;
      for (std::size_t i = 0; i < n; ++i) sb += gc[i];
      gb[c] += sb;
      for (int j = 0; j < w; ++j) {
        const double* src = feat.channel(j).data();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += gc[i] * src[i];
        gw[c * w + j] += acc;
        double* dj = d_feat.channel(j).data();
        const double wj = wp[c * w + j];
        for (std::size_t i = 0; i < n; ++i) dj[i] += wj * gc[i];
      }
    }
  }
  if (!any) return;

  ChannelGrid d_post = std::move(d_feat);
  for (int l = arch_.hidden_layers - 1; l >= 0; --l) {
    const ChannelGrid& pre = pass.pre[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < d_post.data.size(); ++i) {
      if (pre.data[i] < 0.0) d_post.data[i] *= arch_.leaky_slope;
    }
    const ChannelGrid& in = pass.post[static_cast<std::size_t>(l)];
    const std::size_t off = layer_offset_[static_cast<std::size_t>(l)];
    const double* wp = params_.data() + off;
    double* gw = grad.data() + off;
    double* gb = gw + static_cast<std::size_t>(w * in.channels * kTaps);
    ChannelGrid d_in;
    conv3_backward(in, d_post, wp, gw, gb, l > 0 ? &d_in : nullptr);
    if (l > 0) d_post = std::move(d_in);
  }
}

ProbVolume predict(const VoxelClassifier& m, const Volume3D& image, int head,
                   double temperature) {
  if (!(temperature > 0.0)) throw NumericalError("temperature must be positive");
  ForwardPass f = m.forward(image);
  ChannelGrid& z = f.logits.at(static_cast<std::size_t>(head));
  if (temperature != 1.0) {
    for (double& v : z.data) v /= temperature;
  }
  return softmax_probs(z, m.head_classes(head).members(), image.spacing());
}

ProbVolume ensemble_predict(const std::vector<const VoxelClassifier*>& models,
                            const Volume3D& image, int head,
                            const std::vector<double>& temperatures) {
  if (models.empty()) throw ConfigError("ensemble has no members");
  if (!temperatures.empty() && temperatures.size() != models.size()) {
    throw ConfigError("one temperature per ensemble member expected");
  }
  ProbVolume mean;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const double t = temperatures.empty() ? 1.0 : temperatures[k];
    ProbVolume p = predict(*models[k], image, head, t);
    if (k == 0) {
      mean = std::move(p);
      continue;
    }
    if (p.classes() != mean.classes()) throw ConfigError("ensemble members disagree on classes");
    for (std::size_t i = 0; i < p.grid().data.size(); ++i) mean.grid().data[i] += p.grid().data[i];
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  if (models.size() > 1) {
    for (double& v : mean.grid().data) v *= inv;
  }
  return mean;
}

TrainerConfig TrainerConfig::desk() { return TrainerConfig{}; }

TrainerConfig TrainerConfig::paper() {
  TrainerConfig c;
  c.epochs = 2000;
  c.batch_size = 6;
  c.steps_per_epoch = 250;
  c.patch = {160, 160, 160};
  return c;
}

void TrainerConfig::validate() const {
  if (!(lr0 >= 0.0)) throw ConfigError("lr0 must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1 || steps_per_epoch < 1) throw ConfigError("batch size and steps must be >= 1");
  if (!patch.valid()) throw ConfigError("patch size must be positive");
  augmentation.validate();
  arch.validate();
  if (!(loss.dice_epsilon > 0.0)) throw ConfigError("dice epsilon must be positive");
}

double poly_lr(int epoch, const TrainerConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs) throw std::invalid_argument("poly_lr: epoch out of range");
  if (epoch == cfg.epochs) return 0.0;
  const double frac = 1.0 - static_cast<double>(epoch) / cfg.epochs;
  return cfg.lr0 * std::pow(frac, cfg.lr_power);
}

void sgd_step(std::vector<double>& params, const std::vector<double>& grads,
              std::vector<double>& velocity, double lr, double momentum) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grads[i];
    params[i] += momentum * velocity[i] - lr * grads[i];
  }
}

namespace {

bool dual_head(Method m) { return m == Method::kClassConditional; }

ClassSet trained_foreground(Method m) {
  using enum ClassId;
  switch (m) {
    case Method::kBinaryWmh: return {kWmh};
    case Method::kBinaryIsl: return {kIsl};
    case Method::kPhasedStage1: return {kNotBg};
    default: return {kWmh, kIsl};
  }
}

// Per-voxel decision codes for the classes a model covers.
LabelVolume decide(const VoxelClassifier& m, const Volume3D& image) {
  if (m.num_heads() == 2) {
    const ProbVolume fused = fuse_binary_predictions(predict(m, image, 0), predict(m, image, 1));
    return codes_from_argmax(fused);
  }
  return codes_from_argmax(predict(m, image, 0));
}

}  // namespace

double validation_dsc(const VoxelClassifier& m, Method method,
                      const std::vector<ValidationSample>& val) {
  const ClassSet classes = trained_foreground(method);
  std::vector<double> sum(static_cast<std::size_t>(classes.size()), 0.0);
  std::vector<int> count(static_cast<std::size_t>(classes.size()), 0);
  for (const ValidationSample& v : val) {
    const LabelVolume pred = decide(m, v.image);
    for (int c = 0; c < classes.size(); ++c) {
      Mask p(pred.size()), g(pred.size());
      for (std::size_t i = 0; i < pred.size(); ++i) {
        p[i] = covers_code(classes[c], pred[i]) ? 1 : 0;
        g[i] = covers_code(classes[c], v.labels[i]) ? 1 : 0;
      }
      if (auto d = dsc(p, g)) {
        sum[static_cast<std::size_t>(c)] += *d;
        ++count[static_cast<std::size_t>(c)];
      }
    }
  }
  double total = 0.0;
  int defined = 0;
  for (std::size_t c = 0; c < sum.size(); ++c) {
    if (count[c] == 0) continue;
    total += sum[c] / count[c];
    ++defined;
  }
  return defined ? total / defined : 0.0;
}

VoxelClassifier make_model(Method method, const ModelArch& arch, std::uint64_t seed) {
  using enum ClassId;
  if (dual_head(method)) return VoxelClassifier(arch, {ClassSet{kBg, kWmh}, ClassSet{kBg, kIsl}}, seed);
  return VoxelClassifier(arch, {output_channels(method)}, seed);
}

LossValue sample_loss(const VoxelClassifier& m, const Volume3D& image, const LabelVolume& labels,
                      LabelAvailability available, Method method, const LossConfig& cfg,
                      std::vector<double>* grad) {
  const ForwardPass f = m.forward(image);
  if (!dual_head(method)) {
    LossValue v = combined_loss(f.logits[0], labels, available, method, cfg);
    if (grad) m.backward(f, {&v.grad_logits}, *grad);
    return v;
  }
  std::vector<LabelAvailability> parts;
  if (available.has_wmh) parts.push_back({true, false});
  if (available.has_isl) parts.push_back({false, true});
  if (parts.empty()) throw DataError("training sample has no label");
  const double w = 1.0 / static_cast<double>(parts.size());
  LossValue out;
  std::vector<ChannelGrid> grads(2);
  std::vector<const ChannelGrid*> gptr(2, nullptr);
  for (const LabelAvailability& a : parts) {
    const int h = a.has_wmh ? 0 : 1;
    LossValue v = combined_loss(f.logits[static_cast<std::size_t>(h)], labels, a, method, cfg);
    out.total += w * v.total;
    out.ce += w * v.ce;
    out.dice += w * v.dice;
    for (double& g : v.grad_logits.data) g *= w;
    grads[static_cast<std::size_t>(h)] = std::move(v.grad_logits);
    gptr[static_cast<std::size_t>(h)] = &grads[static_cast<std::size_t>(h)];
  }
  if (grad) m.backward(f, gptr, *grad);
  return out;
}

TrainResult train(VoxelClassifier init, const std::vector<TrainingSample>& data, Method method,
                  const std::vector<ValidationSample>& val, const TrainerConfig& cfg,
                  const StepHook& hook) {
  cfg.validate();
  if (data.empty()) throw DataError("training subset is empty");
  std::vector<VoxelIndex> index;
  index.reserve(data.size());
  for (const TrainingSample& s : data) index.emplace_back(s.labels);

  SamplerConfig sampler;
  sampler.patch = cfg.patch;
  sampler.p_background = cfg.p_background;
  sampler.classes_trained = trained_foreground(method);

  TrainResult result;
  VoxelClassifier model = std::move(init);
  result.best.model = model;
  result.best.epoch = -1;
  result.best.val_dsc = val.empty() ? 0.0 : validation_dsc(model, method, val);
  result.best.method = std::string(method_name(method));

  std::vector<double> velocity(model.params().size(), 0.0);
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  std::vector<BatchItem> batch(B);
  std::vector<std::vector<double>> grads(B);
  std::vector<LossValue> losses(B);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = poly_lr(epoch, cfg);
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      const int step = epoch * cfg.steps_per_epoch + s;
      for (std::size_t j = 0; j < B; ++j) {
        Rng rng(derive_seed(cfg.seed, {hash_tag("batch"), static_cast<std::uint64_t>(step), j}));
        std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
        const std::size_t k = pick(rng);
        Patch p = sample_patch(data[k].image, data[k].labels, sampler, rng, &index[k]);
        augment(p.image, p.labels, cfg.augmentation, rng);
        batch[j] = {&data[k], std::move(p.image), std::move(p.labels)};
      }
      parallel_for(B, cfg.jobs, [&](std::size_t j) {
        grads[j].assign(model.params().size(), 0.0);
        losses[j] = sample_loss(model, batch[j].image, batch[j].labels, batch[j].sample->available,
                                method, cfg.loss, &grads[j]);
      });
      std::vector<double> g(model.params().size(), 0.0);
      double ce = 0.0, dice = 0.0;
      for (std::size_t j = 0; j < B; ++j) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += grads[j][i];
        ce += losses[j].ce;
        dice += losses[j].dice;
      }
      const double inv = 1.0 / static_cast<double>(B);
      for (double& v : g) {
        v *= inv;
        if (!std::isfinite(v)) {
          throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) +
                               ", step " + std::to_string(step));
        }
      }
      ce *= inv;
      dice *= inv;
      if (!std::isfinite(ce + dice)) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step));
      }
      if (hook) hook(StepInfo{epoch, step, &model, &batch, ce, dice});
      sgd_step(model.params(), g, velocity, lr, cfg.momentum);
      log.ce += ce;
      log.dice += dice;
    }
    log.ce /= cfg.steps_per_epoch;
    log.dice /= cfg.steps_per_epoch;
    log.loss = log.ce + log.dice;
    log.val_dsc = val.empty() ? 0.0 : validation_dsc(model, method, val);
    if (log.val_dsc > result.best.val_dsc) {
      result.best.model = model;
      result.best.epoch = epoch;
      result.best.val_dsc = log.val_dsc;
      log.improved = true;
    }
    result.log.push_back(log);
  }
  result.last = std::move(model);
  return result;
}

namespace {

constexpr char kMagic[8] = {'P', 'L', 'S', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError("truncated checkpoint " + path);
  }
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json head;
  const ModelArch& a = c.model.arch();
  head["arch"] = {{"in_channels", a.in_channels},
                  {"width", a.width},
                  {"hidden_layers", a.hidden_layers},
                  {"leaky_slope", a.leaky_slope}};
  head["heads"] = json::array();
  for (const ClassSet& h : c.model.heads()) {
    json names = json::array();
    for (ClassId id : h) names.push_back(std::string(class_name(id)));
    head["heads"].push_back(names);
  }
  head["epoch"] = c.epoch;
  head["val_dsc"] = c.val_dsc;
  head["temperature"] = c.temperature;
  head["method"] = c.method;
  head["config"] = c.config_json.empty() ? json::object() : json::parse(c.config_json);
  const std::string text = head.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& p = c.model.params();
  put(out, static_cast<std::uint64_t>(p.size()));
  out.write(reinterpret_cast<const char*>(p.data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
  const std::string digest = c.model.digest();
  out.write(digest.data(), static_cast<std::streamsize>(digest.size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError(path + " is not a checkpoint");
  }
  if (get<std::uint32_t>(in, path) != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version in " + path);
  }
  const auto len = get<std::uint32_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw DataError("truncated checkpoint " + path);
  json head;
  try {
    head = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  ModelArch a;
  a.in_channels = head["arch"]["in_channels"];
  a.width = head["arch"]["width"];
  a.hidden_layers = head["arch"]["hidden_layers"];
  a.leaky_slope = head["arch"]["leaky_slope"];
  std::vector<ClassSet> heads;
  for (const auto& names : head["heads"]) {
    std::vector<ClassId> ids;
    for (const auto& n : names) ids.push_back(parse_class(n.get<std::string>()));
    heads.emplace_back(std::move(ids));
  }
  Checkpoint c;
  c.model = VoxelClassifier(a, heads, 0);
  const auto n = get<std::uint64_t>(in, path);
  if (n != c.model.params().size()) throw DataError("parameter count mismatch in " + path);
  if (!in.read(reinterpret_cast<char*>(c.model.params().data()),
               static_cast<std::streamsize>(n * sizeof(double)))) {
    throw DataError("truncated checkpoint " + path);
  }
  std::string digest(64, '\0');
  if (!in.read(digest.data(), 64) || digest != c.model.digest()) {
    throw DataError("checkpoint digest mismatch in " + path);
  }
  c.epoch = head["epoch"];
  c.val_dsc = head["val_dsc"];
  c.temperature = head["temperature"];
  c.method = head["method"];
  c.config_json = head["config"].dump();
  return c;
}

}  // namespace plseg
