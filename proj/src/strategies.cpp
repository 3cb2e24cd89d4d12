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

#include "plseg/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "plseg/nifti.hpp"

namespace plseg {

namespace fs = std::filesystem;

namespace {

struct StrategyInfo {
  Strategy s;
  const char* name;
  const char* label;
};

constexpr StrategyInfo kStrategies[] = {
    {Strategy::kMulticlass, "multiclass", "Multiclass"},
    {Strategy::kMultiModel, "multimodel", "Multi-model"},
    {Strategy::kMultiModelTs, "multimodel-ts", "Multi-model (TS)"},
    {Strategy::kClassConditional, "classcond", "Class-conditional"},
    {Strategy::kPseudolabels, "pseudolabels", "Pseudolabels"},
    {Strategy::kPhased, "phased", "Phased"},
    {Strategy::kClassAdaptive, "classadaptive", "Class-adaptive loss"},
    {Strategy::kMarginal, "marginal", "Marginal loss"},
};

const StrategyInfo& info(Strategy s) {
  for (const auto& i : kStrategies) {
    if (i.s == s) return i;
  }
  throw std::invalid_argument("unknown strategy");
}

}  // namespace

std::string_view strategy_name(Strategy s) { return info(s).name; }
std::string_view strategy_label(Strategy s) { return info(s).label; }

Strategy parse_strategy(std::string_view name) {
  std::string valid;
  for (const auto& i : kStrategies) {
    if (name == i.name) return i.s;
    valid += valid.empty() ? "" : " | ";
    valid += i.name;
  }
  throw ConfigError("unknown strategy '" + std::string(name) + "'; valid: " + valid);
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> order = [] {
    std::vector<Strategy> v;
    for (const auto& i : kStrategies) v.push_back(i.s);
    return v;
  }();
  return order;
}

std::vector<Strategy> execution_order(const std::vector<Strategy>& requested) {
  static constexpr Strategy kOrder[] = {
      Strategy::kMulticlass,   Strategy::kMultiModel,       Strategy::kMultiModelTs,
      Strategy::kClassConditional, Strategy::kMarginal,     Strategy::kPseudolabels,
      Strategy::kPhased,       Strategy::kClassAdaptive};
  std::vector<Strategy> out;
  for (Strategy s : kOrder) {
    if (std::find(requested.begin(), requested.end(), s) != requested.end()) out.push_back(s);
  }
  return out;
}

ProbVolume fuse_binary_predictions(const ProbVolume& a, const ProbVolume& b) {
  using enum ClassId;
  if (!(a.shape() == b.shape())) throw DataError("binary predictions differ in shape");
  if (a.classes() != std::vector<ClassId>{kBg, kWmh} || b.classes() != std::vector<ClassId>{kBg, kIsl}) {
    throw ConfigError("fusion expects {BG,WMH} and {BG,ISL} predictions");
  }
  ProbVolume out(a.shape(), a.spacing(), {kBg, kWmh, kIsl});
  for (std::size_t i = 0; i < a.voxels(); ++i) {
    const double bg = std::min(a(0, i), b(0, i));
    const double w = a(1, i), s = b(1, i);
    const double total = bg + w + s;
    if (!(total > 0.0)) throw NumericalError("fused probabilities vanish at a voxel");
    out(0, i) = bg / total;
    out(1, i) = w / total;
    out(2, i) = s / total;
  }
  return out;
}

double CalibrationSet::mean_ce(double temperature) const {
  const std::size_t n = size();
  const auto c = static_cast<std::size_t>(classes);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * c;
    double mx = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, z[k] / temperature);
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += std::exp(z[k] / temperature - mx);
    sum += mx + std::log(s) - z[static_cast<std::size_t>(target[i])] / temperature;
  }
  return sum / static_cast<double>(n);
}

namespace {

// First and second derivative of the mean CE with respect to beta = 1 / T.
std::pair<double, double> ce_derivatives(const CalibrationSet& d, double beta) {
  const auto c = static_cast<std::size_t>(d.classes);
  std::vector<double> p(c);
  double g = 0.0, h = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double* z = d.logits.data() + i * c;
    double mx = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, beta * z[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += p[k] = std::exp(beta * z[k] - mx);
    double ez = 0.0, ez2 = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      ez += p[k] / s * z[k];
      ez2 += p[k] / s * z[k] * z[k];
    }
    g += ez - z[static_cast<std::size_t>(d.target[i])];
    h += ez2 - ez * ez;
  }
  const double n = static_cast<double>(d.size());
  return {g / n, h / n};
}

}  // namespace

// The objective is convex in beta, so a Newton iteration kept inside a
// sign-change bracket (falling back to geometric bisection) converges
// monotonically.
TemperatureResult temperature_scale(const CalibrationSet& data, const TemperatureConfig& cfg) {
  if (data.size() == 0) throw DataError("temperature scaling needs validation voxels");
  if (data.logits.size() != data.size() * static_cast<std::size_t>(data.classes)) {
    throw DataError("calibration logits do not match targets");
  }
  TemperatureResult r;
  r.ce_before = data.mean_ce(1.0);
  double lo = 1.0 / cfg.t_max, hi = 1.0 / cfg.t_min;
  double beta;
  if (ce_derivatives(data, lo).first >= 0.0) {
    beta = lo;
  } else if (ce_derivatives(data, hi).first <= 0.0) {
    beta = hi;
  } else {
    beta = std::clamp(1.0, lo, hi);
    while (r.iterations < cfg.max_iterations) {
      ++r.iterations;
      const auto [g, h] = ce_derivatives(data, beta);
      if (g > 0.0) hi = beta;
      else lo = beta;
      double next = h > 0.0 ? beta - g / h : 0.0;
      if (!(next > lo && next < hi)) next = std::sqrt(lo * hi);
      const double step = std::abs(std::log(next) - std::log(beta));
      beta = next;
      if (step < cfg.tolerance || g == 0.0) break;
    }
  }
  r.temperature = 1.0 / beta;
  r.ce_after = data.mean_ce(r.temperature);
  if (!(r.ce_after <= r.ce_before)) {
    r.accepted = false;
    r.temperature = 1.0;
    r.ce_after = r.ce_before;
  }
  return r;
}

CalibrationSet calibration_set(const VoxelClassifier& m, const std::vector<ValidationSample>& val,
                               const std::vector<Mask>& brain_masks) {
  if (brain_masks.size() != val.size()) throw DataError("one brain mask per validation sample");
  const ClassSet& cs = m.head_classes(0);
  CalibrationSet d;
  d.classes = cs.size();
  for (std::size_t v = 0; v < val.size(); ++v) {
    const ForwardPass f = m.forward(val[v].image);
    const ChannelGrid& z = f.logits[0];
    for (std::size_t i = 0; i < z.voxels(); ++i) {
      if (!brain_masks[v][i]) continue;
      int target = -1;
      for (int c = 0; c < cs.size(); ++c) {
        if (covers_code(cs[c], val[v].labels[i])) target = c;
      }
      // A binary model was trained with the other lesion class as background.
      if (target < 0 && cs.contains(ClassId::kBg)) target = cs.index_of(ClassId::kBg);
      if (target < 0) throw DataError("validation label not covered by the model's classes");
      for (int c = 0; c < cs.size(); ++c) d.logits.push_back(z(c, i));
      d.target.push_back(target);
    }
  }
  return d;
}

std::vector<TrainingSample> Dataset::subset(bool need_wmh, bool need_isl) const {
  std::vector<TrainingSample> out;
  for (const TrainingSample& s : train) {
    if ((need_wmh && !s.available.has_wmh) || (need_isl && !s.available.has_isl)) continue;
    out.push_back(s);
  }
  return out;
}

Dataset load_dataset(const Manifest& m, int jobs) {
  Dataset d;
  d.manifest = m;
  const auto& recs = d.manifest.samples;
  std::vector<LoadedSample> loaded(recs.size());
  parallel_for(recs.size(), jobs, [&](std::size_t i) { loaded[i] = load_sample(recs[i]); });
  for (std::size_t i = 0; i < recs.size(); ++i) {
    LoadedSample& s = loaded[i];
    switch (recs[i].split) {
      case Split::kTrain:
        d.train.push_back({recs[i].id, std::move(s.image), std::move(s.labels),
                           {s.has_wmh, s.has_isl}});
        break;
      case Split::kValidation:
        if (!recs[i].fully_labelled()) {
          throw DataError("validation sample '" + recs[i].id + "' must carry both labels");
        }
        d.val.push_back({recs[i].id, std::move(s.image), std::move(s.labels)});
        d.val_brain.emplace_back(s.brain_mask.codes().begin(), s.brain_mask.codes().end());
        break;
      case Split::kTest:
        d.test.push_back(std::move(s));
        break;
    }
  }
  return d;
}

StrategyConfig StrategyConfig::desk() { return StrategyConfig{}; }

StrategyConfig StrategyConfig::paper() {
  StrategyConfig c;
  c.trainer = TrainerConfig::paper();
  c.phased_stage1_epochs = 2000;
  c.phased_stage2_epochs = 1000;
  return c;
}

namespace {

std::uint64_t member_seed(const StrategyConfig& cfg, const std::string& component, int k) {
  return derive_seed(cfg.seed, {hash_tag(component), static_cast<std::uint64_t>(k)});
}

Checkpoint finish(TrainResult&& r, const StrategyConfig& cfg) {
  Checkpoint c = std::move(r.best);
  c.config_json = cfg.config_json;
  return c;
}

}  // namespace

std::vector<Checkpoint> train_ensemble(const std::vector<TrainingSample>& data, Method method,
                                       const std::vector<ValidationSample>& val,
                                       const StrategyConfig& cfg, const std::string& component,
                                       const TrainLogSink& sink) {
  if (data.empty()) {
    throw DataError(std::string("no training samples for ") + std::string(method_name(method)));
  }
  const std::size_t n = static_cast<std::size_t>(cfg.seeds);
  std::vector<TrainResult> results(n);
  parallel_for(n, cfg.jobs, [&](std::size_t k) {
    TrainerConfig t = cfg.trainer;
    t.seed = member_seed(cfg, component, static_cast<int>(k));
    t.jobs = 1;
    VoxelClassifier init = make_model(method, t.arch, derive_seed(t.seed, {hash_tag("init")}));
    results[k] = train(std::move(init), data, method, val, t);
  });
  std::vector<Checkpoint> out;
  for (std::size_t k = 0; k < n; ++k) {
    if (sink) {
      for (const EpochLog& e : results[k].log) sink(component, static_cast<int>(k), e);
    }
    out.push_back(finish(std::move(results[k]), cfg));
  }
  return out;
}

PhasedResult run_phased(const std::vector<TrainingSample>& pls_all,
                        const std::vector<TrainingSample>& fls,
                        const std::vector<ValidationSample>& val, const StrategyConfig& cfg,
                        std::uint64_t seed, const TrainLogSink& sink, int member) {
  if (pls_all.empty() || fls.empty()) throw DataError("phased training needs PLS_all and FLS data");
  TrainerConfig t = cfg.trainer;
  t.seed = derive_seed(seed, {hash_tag("stage1")});
  t.epochs = cfg.phased_stage1_epochs;
  VoxelClassifier init =
      make_model(Method::kPhasedStage1, t.arch, derive_seed(seed, {hash_tag("init")}));
  TrainResult s1 = train(std::move(init), pls_all, Method::kPhasedStage1, val, t);
  if (sink) {
    for (const EpochLog& e : s1.log) sink("stage1", member, e);
  }

  PhasedResult out;
  out.stage1 = finish(std::move(s1), cfg);
  VoxelClassifier model = out.stage1.model;
  out.trunk_before = model.trunk_digest();
  model.replace_head(0, output_channels(Method::kPhasedStage2), derive_seed(seed, {hash_tag("phase2")}));
  out.trunk_after = model.trunk_digest();

  t.seed = derive_seed(seed, {hash_tag("stage2")});
  t.epochs = cfg.phased_stage2_epochs;
  TrainResult s2 = train(std::move(model), fls, Method::kPhasedStage2, val, t);
  if (sink) {
    for (const EpochLog& e : s2.log) sink("stage2", member, e);
  }
  out.model = finish(std::move(s2), cfg);
  return out;
}

Manifest generate_pseudolabels(const std::vector<const VoxelClassifier*>& teacher,
                               const Manifest& m, const std::string& out_dir, int jobs) {
  if (teacher.empty()) throw ConfigError("pseudolabels need a trained marginal-loss teacher");
  fs::create_directories(out_dir);
  Manifest out = m;
  out.dataset_name = m.dataset_name + "-pseudo";
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const SampleRecord& r = out.samples[i];
    if (r.split == Split::kTrain && !r.fully_labelled()) todo.push_back(i);
  }
  parallel_for(todo.size(), jobs, [&](std::size_t t) {
    SampleRecord& r = out.samples[todo[t]];
    const LoadedSample s = load_sample(r);
    const LabelVolume hard = codes_from_argmax(ensemble_predict(teacher, s.image));
    const LabelVolume composed = compose_pseudolabel(s.labels, {s.has_wmh, s.has_isl}, hard);
    LabelVolume wmh(composed.shape(), composed.spacing());
    LabelVolume isl(composed.shape(), composed.spacing());
    for (std::size_t i = 0; i < composed.size(); ++i) {
      wmh[i] = composed[i] == kCodeWmh;
      isl[i] = composed[i] == kCodeIsl;
    }
    const fs::path base = fs::absolute(out_dir) / r.id;
    r.wmh_label = base.string() + "_wmh.nii.gz";
    r.isl_label = base.string() + "_isl.nii.gz";
    write_volume(wmh, *r.wmh_label);
    write_volume(isl, *r.isl_label);
  });
  return out;
}

namespace {

std::vector<const VoxelClassifier*> members(const std::vector<Checkpoint>& c) {
  std::vector<const VoxelClassifier*> out;
  for (const Checkpoint& k : c) out.push_back(&k.model);
  return out;
}

std::vector<double> temperatures(const std::vector<Checkpoint>& c) {
  std::vector<double> out;
  for (const Checkpoint& k : c) out.push_back(k.temperature);
  return out;
}

void require(const std::vector<TrainingSample>& v, const char* what, Strategy s) {
  if (v.empty()) {
    throw DataError(std::string(strategy_name(s)) + " needs a non-empty " + what + " subset");
  }
}

}  // namespace

ProbVolume infer(const TrainedStrategy& t, const Volume3D& image) {
  switch (t.strategy) {
    case Strategy::kMultiModel:
      return fuse_binary_predictions(ensemble_predict(members(t.models), image),
                                     ensemble_predict(members(t.isl_models), image));
    case Strategy::kMultiModelTs:
      return fuse_binary_predictions(
          ensemble_predict(members(t.models), image, 0, temperatures(t.models)),
          ensemble_predict(members(t.isl_models), image, 0, temperatures(t.isl_models)));
    case Strategy::kClassConditional:
      return fuse_binary_predictions(ensemble_predict(members(t.models), image, 0),
                                     ensemble_predict(members(t.models), image, 1));
    default:
      return ensemble_predict(members(t.models), image);
  }
}

TrainedStrategy run_strategy(Strategy s, const Dataset& data, const StrategyConfig& cfg,
                             const TrainedStrategy* prior, const TrainLogSink& sink) {
  TrainedStrategy out;
  out.strategy = s;
  const auto fls = data.subset(true, true);
  switch (s) {
    case Strategy::kMulticlass:
      require(fls, "FLS", s);
      out.models = train_ensemble(fls, Method::kMulticlass, data.val, cfg, "model", sink);
      break;
    case Strategy::kMultiModel:
    case Strategy::kMultiModelTs: {
      if (prior && (prior->strategy == Strategy::kMultiModel ||
                    prior->strategy == Strategy::kMultiModelTs)) {
        out.models = prior->models;
        out.isl_models = prior->isl_models;
      } else {
        const auto wmh = data.subset(true, false);
        const auto isl = data.subset(false, true);
        require(wmh, "PLS_WMH", s);
        require(isl, "PLS_ISL", s);
        out.models = train_ensemble(wmh, Method::kBinaryWmh, data.val, cfg, "wmh", sink);
        out.isl_models = train_ensemble(isl, Method::kBinaryIsl, data.val, cfg, "isl", sink);
      }
      for (auto* group : {&out.models, &out.isl_models}) {
        for (Checkpoint& c : *group) {
          c.temperature = 1.0;
          if (s == Strategy::kMultiModelTs) {
            c.temperature =
                temperature_scale(calibration_set(c.model, data.val, data.val_brain)).temperature;
          }
        }
      }
      break;
    }
    case Strategy::kClassConditional:
      require(data.train, "PLS_all", s);
      out.models = train_ensemble(data.train, Method::kClassConditional, data.val, cfg, "model", sink);
      break;
    case Strategy::kPseudolabels: {
      if (!prior || prior->strategy != Strategy::kMarginal) {
        throw ConfigError("pseudolabels need the marginal-loss ensemble; run marginal first");
      }
      if (cfg.work_dir.empty()) throw ConfigError("pseudolabels need a work directory");
      const Manifest pseudo = generate_pseudolabels(
          members(prior->models), data.manifest, (fs::path(cfg.work_dir) / "pseudolabels").string(),
          cfg.jobs);
      Manifest train_only = pseudo;
      std::erase_if(train_only.samples,
                    [](const SampleRecord& r) { return r.split != Split::kTrain; });
      const Dataset pd = load_dataset(train_only, cfg.jobs);
      require(pd.train, "PLS_pseudo", s);
      out.models = train_ensemble(pd.train, Method::kPseudolabels, data.val, cfg, "model", sink);
      break;
    }
    case Strategy::kPhased: {
      require(fls, "FLS", s);
      require(data.train, "PLS_all", s);
      std::vector<PhasedResult> runs(static_cast<std::size_t>(cfg.seeds));
      std::vector<std::vector<std::tuple<std::string, int, EpochLog>>> logs(runs.size());
      parallel_for(runs.size(), cfg.jobs, [&](std::size_t k) {
        auto collect = [&logs, k](const std::string& c, int m, const EpochLog& e) {
          logs[k].emplace_back(c, m, e);
        };
        runs[k] = run_phased(data.train, fls, data.val, cfg, member_seed(cfg, "model", static_cast<int>(k)),
                             collect, static_cast<int>(k));
      });
      for (std::size_t k = 0; k < runs.size(); ++k) {
        if (sink) {
          for (const auto& [c, m, e] : logs[k]) sink(c, m, e);
        }
        out.trunk_digests.emplace_back(runs[k].trunk_before, runs[k].trunk_after);
        out.models.push_back(std::move(runs[k].model));
      }
      break;
    }
    case Strategy::kClassAdaptive:
      require(data.train, "PLS_all", s);
      out.models = train_ensemble(data.train, Method::kClassAdaptive, data.val, cfg, "model", sink);
      break;
    case Strategy::kMarginal:
      require(data.train, "PLS_all", s);
      out.models = train_ensemble(data.train, Method::kMarginal, data.val, cfg, "model", sink);
      break;
  }
  return out;
}

}  // namespace plseg
