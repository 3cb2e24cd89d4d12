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

#include "plseg/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "plseg/nifti.hpp"

namespace plseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string num(double v, const char* fmt = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::string opt(const std::optional<double>& v, double scale = 1.0, const char* fmt = "%.10g") {
  return v ? num(*v * scale, fmt) : "NA";
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// Percent for the overlap-type metrics, as reported in the comparison table.
double report_scale(Metric m) {
  switch (m) {
    case Metric::kAvd:  // already a percentage of ICV
    case Metric::kAsd:  // mm
      return 1.0;
    default:
      return 100.0;
  }
}

std::string metric_header(Metric m) {
  switch (m) {
    case Metric::kAp: return "AP (%)";
    case Metric::kDsc: return "DSC (%)";
    case Metric::kDdsc: return "DDSC (%)";
    case Metric::kAvd: return "AVD (%)";
    case Metric::kAsd: return "ASD (mm)";
    case Metric::kLpre: return "LPRE (%)";
    case Metric::kLrec: return "LREC (%)";
  }
  return "";
}

fs::path strategy_dir(const RunConfig& cfg, Strategy s) {
  return fs::path(cfg.out_dir) / std::string(strategy_name(s));
}

json epoch_json(std::string_view strategy, const std::string& component, int member,
                const EpochLog& e) {
  return json{{"strategy", strategy}, {"component", component}, {"member", member},
              {"epoch", e.epoch},     {"lr", e.lr},             {"loss", e.loss},
              {"ce", e.ce},           {"dice", e.dice},         {"val_dsc", e.val_dsc},
              {"improved", e.improved}};
}

struct LogCollector {
  std::string strategy;
  std::string lines;

  TrainLogSink sink() {
    return [this](const std::string& c, int m, const EpochLog& e) {
      lines += epoch_json(strategy, c, m, e).dump() + "\n";
    };
  }
};

const TrainedStrategy* find_trained(const std::map<Strategy, TrainedStrategy>& done, Strategy s) {
  const auto it = done.find(s);
  return it == done.end() ? nullptr : &it->second;
}

// The run a strategy builds on, if any.
const TrainedStrategy* prior_for(Strategy s, const std::map<Strategy, TrainedStrategy>& done) {
  if (s == Strategy::kPseudolabels) return find_trained(done, Strategy::kMarginal);
  if (s == Strategy::kMultiModelTs) return find_trained(done, Strategy::kMultiModel);
  return nullptr;
}

}  // namespace

StrategyConfig RunConfig::strategy_config() const {
  StrategyConfig c;
  if (preset == "desk") {
    c = StrategyConfig::desk();
  } else if (preset == "paper") {
    c = StrategyConfig::paper();
  } else {
    throw ConfigError("unknown preset '" + preset + "' (desk, paper)");
  }
  if (epochs) {
    if (*epochs < 0) throw ConfigError("epochs must be non-negative");
    // Keep the phased stages at the preset's 2:1 ratio.
    c.trainer.epochs = *epochs;
    c.phased_stage1_epochs = *epochs;
    c.phased_stage2_epochs = *epochs / 2;
  }
  if (steps_per_epoch) c.trainer.steps_per_epoch = *steps_per_epoch;
  if (seeds) {
    if (*seeds < 1) throw ConfigError("seeds must be >= 1");
    c.seeds = *seeds;
  }
  if (patch) c.trainer.patch = {*patch, *patch, *patch};
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  c.seed = seed;
  c.jobs = jobs;
  c.trainer.jobs = jobs;
  c.work_dir = out_dir;
  c.trainer.validate();
  c.config_json = to_json();
  return c;
}

std::string RunConfig::to_json() const {
  // Built from the preset directly so strategy_config() can embed it.
  StrategyConfig c = preset == "paper" ? StrategyConfig::paper() : StrategyConfig::desk();
  if (epochs) {
    c.trainer.epochs = *epochs;
    c.phased_stage1_epochs = *epochs;
    c.phased_stage2_epochs = *epochs / 2;
  }
  if (steps_per_epoch) c.trainer.steps_per_epoch = *steps_per_epoch;
  if (seeds) c.seeds = *seeds;
  if (patch) c.trainer.patch = {*patch, *patch, *patch};
  const TrainerConfig& t = c.trainer;
  json j;
  j["preset"] = preset;
  j["seed"] = seed;
  j["ensemble_seeds"] = c.seeds;
  j["pooled_ap"] = pooled_ap;
  j["trainer"] = {{"lr0", t.lr0},
                  {"momentum", t.momentum},
                  {"nesterov", true},
                  {"lr_power", t.lr_power},
                  {"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"steps_per_epoch", t.steps_per_epoch},
                  {"patch", {t.patch.nx, t.patch.ny, t.patch.nz}},
                  {"p_background", t.p_background},
                  {"dice_epsilon", t.loss.dice_epsilon}};
  j["arch"] = {{"width", t.arch.width},
               {"hidden_layers", t.arch.hidden_layers},
               {"leaky_slope", t.arch.leaky_slope}};
  const AugmentationConfig& a = t.augmentation;
  j["augmentation"] = {{"p_flip", a.p_flip},   {"p_rotate", a.p_rotate}, {"p_scale", a.p_scale},
                       {"p_noise", a.p_noise}, {"noise_std", a.noise_std},
                       {"p_blur", a.p_blur},   {"p_brightness", a.p_brightness},
                       {"p_contrast", a.p_contrast}, {"p_gamma", a.p_gamma}};
  j["phased_epochs"] = {c.phased_stage1_epochs, c.phased_stage2_epochs};
  json names = json::array();
  for (Strategy s : strategies) names.push_back(strategy_name(s));
  j["strategies"] = names;
  return j.dump();
}

Provenance Provenance::of(const RunConfig& cfg) {
  Provenance p;
  p.add("tool", "plseg");
  p.add("csv_schema", std::to_string(kCsvSchemaVersion));
  p.add("preset", cfg.preset);
  p.add("seed", std::to_string(cfg.seed));
  const std::string config = cfg.to_json();
  p.add("config_sha256", sha256_hex(config.data(), config.size()));
  if (!cfg.manifest.empty() && fs::exists(cfg.manifest)) {
    p.add("manifest_sha256", sha256_file(cfg.manifest));
  }
  return p;
}

void Provenance::add(std::string key, std::string value) {
  fields.emplace_back(std::move(key), std::move(value));
}

std::string Provenance::csv_header() const {
  std::string out;
  for (const auto& [k, v] : fields) out += "# " + k + "=" + v + "\n";
  return out;
}

Manifest cmd_synth(const SynthConfig& cfg, const std::string& out_dir, int jobs) {
  return generate(cfg, out_dir, jobs);
}

void save_trained(const TrainedStrategy& t, const std::string& dir) {
  fs::create_directories(dir);
  json j;
  j["strategy"] = strategy_name(t.strategy);
  auto store = [&](const std::vector<Checkpoint>& group, const std::string& prefix) {
    json files = json::array();
    for (std::size_t k = 0; k < group.size(); ++k) {
      const std::string name = prefix + "_" + std::to_string(k) + ".ckpt";
      save_checkpoint(group[k], (fs::path(dir) / name).string());
      files.push_back(name);
    }
    return files;
  };
  const bool binary_pair = !t.isl_models.empty();
  j["models"] = store(t.models, binary_pair ? "wmh" : "model");
  j["isl_models"] = store(t.isl_models, "isl");
  json digests = json::array();
  for (const auto& [before, after] : t.trunk_digests) digests.push_back({before, after});
  j["trunk_digests"] = digests;
  write_text(fs::path(dir) / "strategy.json", j.dump(2) + "\n");
}

TrainedStrategy load_trained(const std::string& dir) {
  const fs::path index = fs::path(dir) / "strategy.json";
  if (!fs::exists(index)) throw DataError("no trained strategy in " + dir);
  json j;
  try {
    j = json::parse(read_text(index));
  } catch (const json::exception& e) {
    throw DataError(index.string() + ": " + e.what());
  }
  TrainedStrategy t;
  t.strategy = parse_strategy(j.at("strategy").get<std::string>());
  for (const auto& f : j.at("models")) {
    t.models.push_back(load_checkpoint((fs::path(dir) / f.get<std::string>()).string()));
  }
  for (const auto& f : j.at("isl_models")) {
    t.isl_models.push_back(load_checkpoint((fs::path(dir) / f.get<std::string>()).string()));
  }
  for (const auto& d : j.at("trunk_digests")) {
    t.trunk_digests.emplace_back(d.at(0).get<std::string>(), d.at(1).get<std::string>());
  }
  return t;
}

TrainedStrategy cmd_train(const RunConfig& cfg, Strategy s) {
  const StrategyConfig scfg = cfg.strategy_config();
  TrainedStrategy prior;
  const TrainedStrategy* prior_ptr = nullptr;
  if (s == Strategy::kPseudolabels) {
    const fs::path m = strategy_dir(cfg, Strategy::kMarginal);
    if (!fs::exists(m / "strategy.json")) {
      throw ConfigError("pseudolabels need marginal checkpoints in " + m.string() +
                        "; train the marginal strategy first");
    }
    prior = load_trained(m.string());
    prior_ptr = &prior;
  } else if (s == Strategy::kMultiModelTs) {
    const fs::path m = strategy_dir(cfg, Strategy::kMultiModel);
    if (fs::exists(m / "strategy.json")) {
      prior = load_trained(m.string());
      prior_ptr = &prior;
    }
  }
  const Dataset data = load_dataset(load_manifest(cfg.manifest), cfg.jobs);
  LogCollector log{std::string(strategy_name(s)), {}};
  TrainedStrategy t = run_strategy(s, data, scfg, prior_ptr, log.sink());
  const fs::path dir = strategy_dir(cfg, s);
  save_trained(t, dir.string());
  write_text(dir / "train_log.jsonl", log.lines);
  write_text(dir / "config.json", json::parse(scfg.config_json).dump(2) + "\n");
  return t;
}

std::string cmd_pseudolabel(const RunConfig& cfg) {
  const fs::path m = strategy_dir(cfg, Strategy::kMarginal);
  if (!fs::exists(m / "strategy.json")) {
    throw ConfigError("pseudolabels need marginal checkpoints in " + m.string() +
                      "; train the marginal strategy first");
  }
  const TrainedStrategy teacher = load_trained(m.string());
  if (teacher.strategy != Strategy::kMarginal) {
    throw ConfigError(m.string() + " does not hold a marginal-loss ensemble");
  }
  std::vector<const VoxelClassifier*> members;
  for (const Checkpoint& c : teacher.models) members.push_back(&c.model);
  const fs::path out = fs::path(cfg.out_dir) / "pseudolabels";
  const Manifest pseudo =
      generate_pseudolabels(members, load_manifest(cfg.manifest), out.string(), cfg.jobs);
  pseudo.validate();
  const std::string path = (out / "manifest.json").string();
  save_manifest(pseudo, path);
  return path;
}

ScreenSummary cmd_screen(const std::string& manifest_path, const std::string& preset,
                         const std::string& out_dir) {
  const ScreeningConfig sc = ScreeningConfig::preset(preset);
  const Manifest m = load_manifest(manifest_path);
  Manifest kept = m;
  kept.samples.clear();
  ScreenSummary summary;
  std::string csv = "# tool=plseg\n# csv_schema=" + std::to_string(kCsvSchemaVersion) +
                    "\n# screening_preset=" + preset +
                    "\n# mean_diff_threshold=" + num(sc.mean_diff_threshold) +
                    "\n# fraction_threshold=" + num(sc.fraction_threshold) +
                    "\n# manifest_sha256=" + sha256_file(manifest_path) +
                    "\nsubject,component,voxels,host_region,component_mean,normal_mean,"
                    "mean_diff,fraction_closer_to_normal,component_passes,scan_kept\n";
  for (const SampleRecord& r : m.samples) {
    bool keep = true;
    if (r.isl_label) {
      const LabelVolume isl = read_mask(*r.isl_label);
      if (isl.count_nonzero() > 0) {
        if (!r.region_map) {
          throw DataError("record '" + r.id + "' has an ISL mask but no region map");
        }
        const Volume3D x = percentile_normalise(read_volume(r.image));
        const RegionMap regions = read_region_map(*r.region_map);
        const ScreeningResult res = screen_scan(x, isl.codes(), regions, sc);
        keep = res.keep;
        for (const ComponentDiagnostic& d : res.components) {
          csv += r.id + "," + std::to_string(d.component) + "," + std::to_string(d.voxels) + "," +
                 std::to_string(d.host_region) + "," + num(d.component_mean) + "," +
                 num(d.normal_mean) + "," + num(d.mean_diff) + "," +
                 num(d.fraction_closer_to_normal) + "," + (d.passes ? "1" : "0") + "," +
                 (res.keep ? "1" : "0") + "\n";
          ++summary.components;
        }
      }
    }
    if (keep) {
      kept.samples.push_back(r);
      ++summary.kept;
    } else {
      ++summary.discarded;
    }
  }
  const fs::path out(out_dir);
  summary.manifest_path = (out / "screened_manifest.json").string();
  summary.diagnostics_path = (out / "screening.csv").string();
  fs::create_directories(out);
  save_manifest(kept, summary.manifest_path);
  write_text(summary.diagnostics_path, csv);
  return summary;
}

std::string cmd_predict(const RunConfig& cfg, Strategy s) {
  const fs::path dir = strategy_dir(cfg, s);
  const TrainedStrategy t = load_trained(dir.string());
  const Manifest m = load_manifest(cfg.manifest);
  const auto test = m.split(Split::kTest);
  const fs::path pred = dir / "pred";
  fs::create_directories(pred);
  parallel_for(test.size(), cfg.jobs, [&](std::size_t i) {
    const LoadedSample sample = load_sample(*test[i]);
    const ProbVolume p = infer(t, sample.image);
    write_volume(p, (pred / (test[i]->id + "_prob.nii.gz")).string());
    write_volume(codes_from_argmax(p), (pred / (test[i]->id + "_seg.nii.gz")).string());
  });
  return pred.string();
}

namespace {

// Subject evaluation plus pooled-AP inputs, shared by the in-memory and
// on-disk paths.
struct PooledInputs {
  std::vector<std::vector<double>> probs[2];
  std::vector<Mask> gt[2];
};

void finish_pooled(MethodResult& r, const PooledInputs& in, const std::vector<bool>& ok) {
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    if (!ok[i]) continue;
    const std::string& g = r.rows[i].dataset;
    if (!groups.count(g)) order.push_back(g);
    groups[g].push_back(i);
  }
  auto pooled = [&](const std::vector<std::size_t>& idx) {
    std::array<std::optional<double>, 2> out;
    for (int c = 0; c < 2; ++c) {
      std::vector<double> p;
      Mask g;
      for (std::size_t i : idx) {
        p.insert(p.end(), in.probs[c][i].begin(), in.probs[c][i].end());
        g.insert(g.end(), in.gt[c][i].begin(), in.gt[c][i].end());
      }
      out[static_cast<std::size_t>(c)] = average_precision(p, g);
    }
    return out;
  };
  std::vector<std::size_t> all;
  for (const std::string& g : order) {
    r.pooled_ap.emplace_back(g, pooled(groups[g]));
    all.insert(all.end(), groups[g].begin(), groups[g].end());
  }
  std::sort(all.begin(), all.end());
  r.pooled_ap.emplace_back("all", pooled(all));
}

template <typename Predict>
MethodResult evaluate_subjects(const std::vector<const SampleRecord*>& test,
                               const std::string& label, int jobs, Predict&& predict_one) {
  MethodResult r;
  r.label = label;
  std::vector<MetricRow> rows(test.size());
  std::vector<std::string> errors(test.size());
  std::vector<bool> ok(test.size(), false);
  PooledInputs pooled;
  for (int c = 0; c < 2; ++c) {
    pooled.probs[c].resize(test.size());
    pooled.gt[c].resize(test.size());
  }
  parallel_for(test.size(), jobs, [&](std::size_t i) {
    try {
      const LoadedSample s = load_sample(*test[i]);
      const ProbVolume p = predict_one(s);
      rows[i] = evaluate_subject(test[i]->id, test[i]->dataset, p, s.labels, s.brain_mask.codes());
      for (int c = 0; c < 2; ++c) {
        const ClassId cls = c == 0 ? ClassId::kWmh : ClassId::kIsl;
        const std::uint8_t code = c == 0 ? kCodeWmh : kCodeIsl;
        const auto ch = p.channel(p.channel_of(cls));
        pooled.probs[c][i].assign(ch.begin(), ch.end());
        pooled.gt[c][i] = s.labels.mask_of(code);
      }
      ok[i] = true;
    } catch (const std::exception& e) {
      errors[i] = test[i]->id + ": " + e.what();
    }
  });
  std::vector<bool> kept_ok;
  PooledInputs kept;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!ok[i]) {
      r.errors.push_back(errors[i]);
      continue;
    }
    r.rows.push_back(std::move(rows[i]));
    kept_ok.push_back(true);
    for (int c = 0; c < 2; ++c) {
      kept.probs[c].push_back(std::move(pooled.probs[c][i]));
      kept.gt[c].push_back(std::move(pooled.gt[c][i]));
    }
  }
  finish_pooled(r, kept, kept_ok);
  return r;
}

MethodResult evaluate_trained(const TrainedStrategy& t, const Manifest& m, int jobs) {
  return evaluate_subjects(m.split(Split::kTest), std::string(strategy_label(t.strategy)), jobs,
                           [&](const LoadedSample& s) { return infer(t, s.image); });
}

}  // namespace

MethodResult evaluate_predictions(const std::string& pred_dir, const std::string& manifest_path,
                                  const std::string& label) {
  const Manifest m = load_manifest(manifest_path);
  return evaluate_subjects(m.split(Split::kTest), label, 1, [&](const LoadedSample& s) {
    const fs::path p = fs::path(pred_dir) / (s.record->id + "_prob.nii.gz");
    if (!fs::exists(p)) throw DataError("no prediction at " + p.string());
    return read_prob_volume(p.string());
  });
}

Summary summarise(const MethodResult& m, bool pooled_ap) {
  Summary s = aggregate(m.rows, m.label);
  if (!pooled_ap) return s;
  for (const auto& [group, ap] : m.pooled_ap) {
    if (group != "all") continue;
    const std::size_t k = static_cast<std::size_t>(Metric::kAp);
    s.wmh.mean[k] = ap[0];
    s.isl.mean[k] = ap[1];
    s.grand[k] = ap[0] && ap[1] ? std::optional<double>((*ap[0] + *ap[1]) / 2.0) : std::nullopt;
  }
  return s;
}

namespace {

std::string subject_csv(const std::vector<MethodResult>& methods, const Provenance& prov) {
  std::string out = prov.csv_header();
  out += "method,subject,dataset,class";
  for (Metric m : kAllMetrics) out += "," + std::string(metric_name(m));
  out += ",vol_pred_ml,vol_gt_ml\n";
  for (const MethodResult& r : methods) {
    for (const MetricRow& row : r.rows) {
      for (ClassId c : {ClassId::kWmh, ClassId::kIsl}) {
        const ClassMetrics& cm = row.of(c);
        out += r.label + "," + row.subject + "," + row.dataset + "," + std::string(class_name(c));
        for (Metric m : kAllMetrics) out += "," + opt(cm[m]);
        out += "," + num(cm.vol_pred_ml) + "," + num(cm.vol_gt_ml) + "\n";
      }
    }
  }
  return out;
}

std::string aggregate_csv(const std::vector<MethodResult>& methods, const Provenance& prov,
                          bool pooled) {
  std::string out = prov.csv_header();
  out += "# ap=" + std::string(pooled ? "pooled_voxels" : "mean_of_subjects") + "\n";
  out += "method,subjects";
  for (Metric m : kAllMetrics) {
    const std::string n(metric_name(m));
    out += "," + n + "_WMH," + n + "_ISL," + n + "_mean";
  }
  out += ",ISL_FP\n";
  for (const MethodResult& r : methods) {
    const Summary s = summarise(r, pooled);
    out += r.label + "," + std::to_string(s.subjects);
    for (Metric m : kAllMetrics) {
      const double k = report_scale(m);
      out += "," + opt(s.wmh[m], k) + "," + opt(s.isl[m], k) + "," +
             opt(s.grand[static_cast<std::size_t>(m)], k);
    }
    out += "," + opt(s.isl_fp_rate) + "\n";
  }
  return out;
}

std::string dataset_ap_csv(const std::vector<MethodResult>& methods, const Provenance& prov) {
  std::string out = prov.csv_header();
  out += "method,dataset,subjects,AP_WMH_mean_of_subjects,AP_ISL_mean_of_subjects,"
         "AP_WMH_pooled,AP_ISL_pooled\n";
  for (const MethodResult& r : methods) {
    std::vector<Summary> groups = aggregate_by_dataset(r.rows);
    groups.push_back(aggregate(r.rows, "all"));
    for (const Summary& g : groups) {
      std::array<std::optional<double>, 2> pooled{};
      for (const auto& [name, ap] : r.pooled_ap) {
        if (name == g.group) pooled = ap;
      }
      out += r.label + "," + g.group + "," + std::to_string(g.subjects) + "," +
             opt(g.wmh[Metric::kAp], 100.0) + "," + opt(g.isl[Metric::kAp], 100.0) + "," +
             opt(pooled[0], 100.0) + "," + opt(pooled[1], 100.0) + "\n";
    }
  }
  return out;
}

std::vector<double> volumes(const MethodResult& r, ClassId c, bool predicted) {
  std::vector<double> v;
  for (const MetricRow& row : r.rows) {
    v.push_back(predicted ? row.of(c).vol_pred_ml : row.of(c).vol_gt_ml);
  }
  return v;
}

std::string bland_altman_points_csv(const std::vector<MethodResult>& methods,
                                    const Provenance& prov) {
  std::string out = prov.csv_header();
  out += "method,subject,dataset,class,vol_gt_ml,vol_pred_ml,mean_ml,diff_ml\n";
  for (const MethodResult& r : methods) {
    for (const MetricRow& row : r.rows) {
      for (ClassId c : {ClassId::kWmh, ClassId::kIsl}) {
        const ClassMetrics& m = row.of(c);
        out += r.label + "," + row.subject + "," + row.dataset + "," +
               std::string(class_name(c)) + "," + num(m.vol_gt_ml) + "," + num(m.vol_pred_ml) +
               "," + num((m.vol_pred_ml + m.vol_gt_ml) / 2.0) + "," +
               num(m.vol_pred_ml - m.vol_gt_ml) + "\n";
      }
    }
  }
  return out;
}

std::optional<BlandAltman> try_bland_altman(const MethodResult& r, ClassId c) {
  if (r.rows.size() < 2) return std::nullopt;
  const auto p = volumes(r, c, true);
  const auto g = volumes(r, c, false);
  return bland_altman(p, g);
}

std::string bland_altman_summary_csv(const std::vector<MethodResult>& methods,
                                     const Provenance& prov) {
  std::string out = prov.csv_header();
  out += "method,class,n,mean_diff_ml,sd_ml,loa_low_ml,loa_high_ml\n";
  for (const MethodResult& r : methods) {
    for (ClassId c : {ClassId::kWmh, ClassId::kIsl}) {
      const auto ba = try_bland_altman(r, c);
      out += r.label + "," + std::string(class_name(c)) + ",";
      if (!ba) {
        out += std::to_string(r.rows.size()) + ",NA,NA,NA,NA\n";
        continue;
      }
      out += std::to_string(ba->n) + "," + num(ba->mean_diff) + "," + num(ba->sd) + "," +
             num(ba->loa_low) + "," + num(ba->loa_high) + "\n";
    }
  }
  return out;
}

// --- SVG -------------------------------------------------------------------

const char* const kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
                                "#59a14f", "#edc948", "#b07aa1", "#9c755f"};

std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w, "%.0f") +
         "\" height=\"" + num(h, "%.0f") + "\" font-family=\"sans-serif\" font-size=\"11\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string svg_text(double x, double y, const std::string& s, const char* anchor = "start") {
  return "<text x=\"" + num(x, "%.1f") + "\" y=\"" + num(y, "%.1f") + "\" text-anchor=\"" +
         anchor + "\">" + s + "</text>\n";
}

std::string svg_line(double x1, double y1, double x2, double y2, const std::string& style) {
  return "<line x1=\"" + num(x1, "%.1f") + "\" y1=\"" + num(y1, "%.1f") + "\" x2=\"" +
         num(x2, "%.1f") + "\" y2=\"" + num(y2, "%.1f") + "\" " + style + "/>\n";
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Per-dataset grouped boxplots of one metric, one box per method.
std::string boxplot_svg(const std::vector<MethodResult>& methods, ClassId c, Metric metric) {
  std::vector<std::string> groups;
  for (const MethodResult& r : methods) {
    for (const MetricRow& row : r.rows) {
      if (std::find(groups.begin(), groups.end(), row.dataset) == groups.end()) {
        groups.push_back(row.dataset);
      }
    }
  }
  const double box_w = 14.0, gap = 30.0, left = 50.0, top = 30.0, plot_h = 240.0;
  const double group_w = static_cast<double>(methods.size()) * (box_w + 4.0);
  const double width =
      left + static_cast<double>(groups.size()) * (group_w + gap) + 190.0;
  const double height = top + plot_h + 60.0;
  const double scale = report_scale(metric);
  const double vmax = metric == Metric::kAsd || metric == Metric::kAvd ? [&] {
    double m = 0.0;
    for (const MethodResult& r : methods)
      for (const MetricRow& row : r.rows)
        if (row.of(c)[metric]) m = std::max(m, *row.of(c)[metric]);
    return m > 0.0 ? m : 1.0;
  }() : 100.0;
  auto y_of = [&](double v) { return top + plot_h * (1.0 - std::clamp(v / vmax, 0.0, 1.0)); };

  std::string s = svg_open(width, height);
  s += svg_text(left, 18.0, std::string(class_name(c)) + " " + metric_header(metric) +
                                " by dataset");
  s += svg_line(left - 5, top, left - 5, top + plot_h, "stroke=\"black\"");
  for (int t = 0; t <= 4; ++t) {
    const double v = vmax * t / 4.0;
    s += svg_line(left - 8, y_of(v), left - 5, y_of(v), "stroke=\"black\"");
    s += svg_text(left - 10, y_of(v) + 4, num(v, "%.3g"), "end");
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = left + static_cast<double>(g) * (group_w + gap);
    s += svg_text(gx + group_w / 2, top + plot_h + 18, groups[g], "middle");
    for (std::size_t k = 0; k < methods.size(); ++k) {
      std::vector<double> v;
      for (const MetricRow& row : methods[k].rows) {
        if (row.dataset == groups[g] && row.of(c)[metric]) {
          v.push_back(*row.of(c)[metric] * scale);
        }
      }
      if (v.empty()) continue;
      const double x = gx + static_cast<double>(k) * (box_w + 4.0);
      const double q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
      const double lo = *std::min_element(v.begin(), v.end());
      const double hi = *std::max_element(v.begin(), v.end());
      const std::string colour = kPalette[k % std::size(kPalette)];
      s += svg_line(x + box_w / 2, y_of(lo), x + box_w / 2, y_of(hi), "stroke=\"black\"");
      s += "<rect x=\"" + num(x, "%.1f") + "\" y=\"" + num(y_of(q3), "%.1f") + "\" width=\"" +
           num(box_w, "%.1f") + "\" height=\"" + num(std::max(0.5, y_of(q1) - y_of(q3)), "%.1f") +
           "\" fill=\"" + colour + "\" stroke=\"black\"/>\n";
      s += svg_line(x, y_of(q2), x + box_w, y_of(q2), "stroke=\"black\" stroke-width=\"2\"");
    }
  }
  const double lx = width - 180.0;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    const double ly = top + 14.0 * static_cast<double>(k);
    s += "<rect x=\"" + num(lx, "%.1f") + "\" y=\"" + num(ly - 9, "%.1f") +
         "\" width=\"10\" height=\"10\" fill=\"" + kPalette[k % std::size(kPalette)] + "\"/>\n";
    s += svg_text(lx + 14, ly, methods[k].label);
  }
  return s + "</svg>\n";
}

// Bland-Altman panels for one class, one per method.
std::string bland_altman_svg(const std::vector<MethodResult>& methods, ClassId c) {
  const double pw = 260.0, ph = 180.0, pad = 50.0;
  const std::size_t cols = 2;
  const std::size_t rows = (methods.size() + cols - 1) / cols;
  std::string s = svg_open(static_cast<double>(cols) * (pw + pad) + pad,
                           static_cast<double>(rows) * (ph + pad) + pad);
  for (std::size_t k = 0; k < methods.size(); ++k) {
    const double x0 = pad + static_cast<double>(k % cols) * (pw + pad);
    const double y0 = pad + static_cast<double>(k / cols) * (ph + pad);
    const auto p = volumes(methods[k], c, true);
    const auto g = volumes(methods[k], c, false);
    s += svg_text(x0, y0 - 8, methods[k].label + " (" + std::string(class_name(c)) + " ml)");
    s += "<rect x=\"" + num(x0, "%.1f") + "\" y=\"" + num(y0, "%.1f") + "\" width=\"" +
         num(pw, "%.0f") + "\" height=\"" + num(ph, "%.0f") +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    const auto ba = try_bland_altman(methods[k], c);
    if (!ba) continue;
    double xmax = 1e-9, ymax = std::max(std::abs(ba->loa_low), std::abs(ba->loa_high));
    for (std::size_t i = 0; i < p.size(); ++i) {
      xmax = std::max(xmax, (p[i] + g[i]) / 2.0);
      ymax = std::max(ymax, std::abs(p[i] - g[i]));
    }
    ymax = std::max(ymax * 1.1, 1e-9);
    auto X = [&](double v) { return x0 + pw * v / (xmax * 1.05); };
    auto Y = [&](double v) { return y0 + ph * (0.5 - v / (2.0 * ymax)); };
    s += svg_line(x0, Y(ba->mean_diff), x0 + pw, Y(ba->mean_diff), "stroke=\"#e15759\"");
    for (double l : {ba->loa_low, ba->loa_high}) {
      s += svg_line(x0, Y(l), x0 + pw, Y(l), "stroke=\"#4e79a7\" stroke-dasharray=\"4 3\"");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      s += "<circle cx=\"" + num(X((p[i] + g[i]) / 2.0), "%.1f") + "\" cy=\"" +
           num(Y(p[i] - g[i]), "%.1f") + "\" r=\"2.5\" fill=\"black\"/>\n";
    }
    s += svg_text(x0 + pw, y0 + ph + 14,
                  "mean " + num(ba->mean_diff, "%.3f") + ", LoA [" + num(ba->loa_low, "%.3f") +
                      ", " + num(ba->loa_high, "%.3f") + "]",
                  "end");
  }
  return s + "</svg>\n";
}

std::string cell(const std::optional<double>& v, double scale) {
  return v ? num(*v * scale, "%.2f") : "n/a";
}

std::string report_md(const std::vector<MethodResult>& methods, const RunConfig& cfg,
                      const Provenance& prov, const std::vector<std::string>& failed) {
  std::string md = "# Strategy comparison\n\n";
  md += "Provenance:\n\n";
  for (const auto& [k, v] : prov.fields) md += "- " + k + ": `" + v + "`\n";
  md += "\nTest-split means over subjects. Each metric lists WMH, ISL and their mean. AP is " +
        std::string(cfg.pooled_ap ? "computed over voxels pooled across subjects"
                                  : "the mean of per-subject AP") +
        ". ISL FP is the percentage of subjects without ISL that received an ISL prediction.\n\n";
  md += "| Method |";
  for (Metric m : kAllMetrics) {
    md += " " + metric_header(m) + " WMH | " + metric_header(m) + " ISL | " + metric_header(m) +
          " mean |";
  }
  md += " ISL FP (%) |\n|---|";
  for (int i = 0; i < kNumMetrics * 3 + 1; ++i) md += "---|";
  md += "\n";
  for (const MethodResult& r : methods) {
    const Summary s = summarise(r, cfg.pooled_ap);
    md += "| " + r.label + " |";
    for (Metric m : kAllMetrics) {
      const double k = report_scale(m);
      md += " " + cell(s.wmh[m], k) + " | " + cell(s.isl[m], k) + " | " +
            cell(s.grand[static_cast<std::size_t>(m)], k) + " |";
    }
    md += " " + cell(s.isl_fp_rate, 1.0) + " |\n";
  }

  md += "\n## ISL AP (%) by dataset\n\n| Method |";
  std::vector<std::string> groups;
  if (!methods.empty()) {
    for (const Summary& g : aggregate_by_dataset(methods.front().rows)) groups.push_back(g.group);
  }
  for (const std::string& g : groups) md += " " + g + " |";
  md += " all |\n|---|";
  for (std::size_t i = 0; i <= groups.size(); ++i) md += "---|";
  md += "\n";
  for (const MethodResult& r : methods) {
    md += "| " + r.label + " |";
    const auto by = aggregate_by_dataset(r.rows);
    for (const std::string& g : groups) {
      std::optional<double> v;
      if (cfg.pooled_ap) {
        for (const auto& [name, ap] : r.pooled_ap)
          if (name == g) v = ap[1];
      } else {
        for (const Summary& s : by)
          if (s.group == g) v = s.isl[Metric::kAp];
      }
      md += " " + cell(v, 100.0) + " |";
    }
    md += " " + cell(summarise(r, cfg.pooled_ap).isl[Metric::kAp], 100.0) + " |\n";
  }

  md += "\n## WMH volume agreement (Bland-Altman, ml)\n\n";
  md += "| Method | n | mean difference | lower LoA | upper LoA |\n|---|---|---|---|---|\n";
  for (const MethodResult& r : methods) {
    const auto ba = try_bland_altman(r, ClassId::kWmh);
    md += "| " + r.label + " | " + std::to_string(r.rows.size()) + " | " +
          (ba ? num(ba->mean_diff, "%.4f") + " | " + num(ba->loa_low, "%.4f") + " | " +
                    num(ba->loa_high, "%.4f")
              : "n/a | n/a | n/a") +
          " |\n";
  }
  md += "\nPlots: `bland_altman_wmh.svg`, `bland_altman_isl.svg`, `boxplot_dsc_wmh.svg`, "
        "`boxplot_dsc_isl.svg`, `boxplot_ap_isl.svg`.\n";

  bool any_errors = !failed.empty();
  for (const MethodResult& r : methods) any_errors = any_errors || !r.errors.empty();
  if (any_errors) {
    md += "\n## Failures\n\n";
    for (const std::string& f : failed) md += "- " + f + "\n";
    for (const MethodResult& r : methods) {
      for (const std::string& e : r.errors) md += "- " + r.label + ", " + e + "\n";
    }
  }
  return md;
}

}  // namespace

void write_evaluation(const std::vector<MethodResult>& methods, const RunConfig& cfg,
                      const Provenance& prov, const std::string& out_dir) {
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_text(out / "subject_metrics.csv", subject_csv(methods, prov));
  write_text(out / "aggregate.csv", aggregate_csv(methods, prov, cfg.pooled_ap));
  write_text(out / "dataset_ap.csv", dataset_ap_csv(methods, prov));
  write_text(out / "bland_altman_points.csv", bland_altman_points_csv(methods, prov));
  write_text(out / "bland_altman_summary.csv", bland_altman_summary_csv(methods, prov));
  write_text(out / "bland_altman_wmh.svg", bland_altman_svg(methods, ClassId::kWmh));
  write_text(out / "bland_altman_isl.svg", bland_altman_svg(methods, ClassId::kIsl));
  write_text(out / "boxplot_dsc_wmh.svg", boxplot_svg(methods, ClassId::kWmh, Metric::kDsc));
  write_text(out / "boxplot_dsc_isl.svg", boxplot_svg(methods, ClassId::kIsl, Metric::kDsc));
  write_text(out / "boxplot_ap_isl.svg", boxplot_svg(methods, ClassId::kIsl, Metric::kAp));
  write_text(out / "report.md", report_md(methods, cfg, prov, {}));
}

std::string cmd_evaluate(const RunConfig& cfg, const std::string& pred_dir,
                         const std::string& label) {
  const MethodResult r = evaluate_predictions(pred_dir, cfg.manifest, label);
  Provenance prov = Provenance::of(cfg);
  prov.add("predictions", label);
  const fs::path out = fs::path(cfg.out_dir) / "eval";
  write_evaluation({r}, cfg, prov, out.string());
  return out.string();
}

CompareResult cmd_compare(const RunConfig& cfg) {
  RunConfig run = cfg;
  if (run.strategies.empty()) run.strategies = all_strategies();
  const StrategyConfig scfg = run.strategy_config();
  const Dataset data = load_dataset(load_manifest(run.manifest), run.jobs);
  if (data.test.empty()) throw DataError("the manifest has no test split");

  CompareResult result;
  result.out_dir = (fs::path(run.out_dir) / "compare").string();
  std::map<Strategy, TrainedStrategy> done;
  std::map<Strategy, MethodResult> evaluated;
  json timing = json::object();
  for (Strategy s : execution_order(run.strategies)) {
    const auto start = std::chrono::steady_clock::now();
    try {
      LogCollector log{std::string(strategy_name(s)), {}};
      TrainedStrategy t = run_strategy(s, data, scfg, prior_for(s, done), log.sink());
      const fs::path dir = strategy_dir(run, s);
      save_trained(t, dir.string());
      write_text(dir / "train_log.jsonl", log.lines);
      evaluated[s] = evaluate_trained(t, data.manifest, run.jobs);
      done[s] = std::move(t);
    } catch (const std::exception& e) {
      result.failed.push_back(std::string(strategy_name(s)) + ": " + e.what());
    }
    timing[std::string(strategy_name(s))] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  // Report rows follow the canonical method order.
  for (Strategy s : all_strategies()) {
    if (evaluated.count(s)) result.methods.push_back(std::move(evaluated[s]));
  }
  const Provenance prov = Provenance::of(run);
  write_evaluation(result.methods, run, prov, result.out_dir);
  write_text(fs::path(result.out_dir) / "report.md",
             report_md(result.methods, run, prov, result.failed));
  write_text(fs::path(result.out_dir) / "config.json", json::parse(run.to_json()).dump(2) + "\n");
  write_text(fs::path(result.out_dir) / "timing.json", timing.dump(2) + "\n");
  return result;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  return 1;
}

}  // namespace plseg
