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

#include "plseg/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "plseg/nifti.hpp"

namespace plseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(name) + "'");
}

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& s : samples) {
    if (s.id.empty()) throw DataError("manifest sample with empty id");
    if (!seen.insert(s.id).second) throw DataError("duplicate sample id '" + s.id + "'");
    if (s.image.empty()) throw DataError("sample '" + s.id + "' has no image");
    if (s.brain_mask.empty()) throw DataError("sample '" + s.id + "' has no brain_mask");
    if (s.split == Split::kTrain && !s.has_wmh() && !s.has_isl()) {
      throw DataError("training sample '" + s.id + "' has no label");
    }
  }
}

const SampleRecord& Manifest::find(const std::string& id) const {
  for (const auto& s : samples) {
    if (s.id == id) return s;
  }
  throw DataError("no sample with id '" + id + "'");
}

std::vector<const SampleRecord*> Manifest::split(Split which) const {
  std::vector<const SampleRecord*> out;
  for (const auto& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

namespace {

std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path.string() : (base / path).lexically_normal().string();
}

std::string relative_to(const fs::path& base, const std::string& p) {
  const fs::path abs = fs::absolute(p).lexically_normal();
  const fs::path rel = abs.lexically_relative(fs::absolute(base).lexically_normal());
  return rel.empty() ? abs.string() : rel.string();
}

std::string required_string(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw DataError(where + ": missing string field '" + key + "'");
  }
  return j[key].get<std::string>();
}

}  // namespace

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("manifest " + path + " is not valid JSON: " + e.what());
  }
  const fs::path base = fs::path(path).parent_path();
  Manifest m;
  m.dataset_name = required_string(doc, "dataset_name", path);
  if (!doc.contains("samples") || !doc["samples"].is_array()) {
    throw DataError(path + ": missing 'samples' array");
  }
  for (const auto& js : doc["samples"]) {
    SampleRecord r;
    r.id = required_string(js, "id", path);
    const std::string where = path + " sample '" + r.id + "'";
    r.image = resolve(base, required_string(js, "image", where));
    r.brain_mask = resolve(base, required_string(js, "brain_mask", where));
    r.split = parse_split(required_string(js, "split", where));
    if (js.contains("wmh_label")) r.wmh_label = resolve(base, required_string(js, "wmh_label", where));
    if (js.contains("isl_label")) r.isl_label = resolve(base, required_string(js, "isl_label", where));
    if (js.contains("region_map")) r.region_map = resolve(base, required_string(js, "region_map", where));
    if (js.contains("dataset")) r.dataset = required_string(js, "dataset", where);
    m.samples.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  m.validate();
  const fs::path base = fs::path(path).parent_path().empty() ? fs::path(".") : fs::path(path).parent_path();
  json doc;
  doc["dataset_name"] = m.dataset_name;
  doc["samples"] = json::array();
  for (const auto& r : m.samples) {
    json js;
    js["id"] = r.id;
    js["image"] = relative_to(base, r.image);
    if (r.wmh_label) js["wmh_label"] = relative_to(base, *r.wmh_label);
    if (r.isl_label) js["isl_label"] = relative_to(base, *r.isl_label);
    js["brain_mask"] = relative_to(base, r.brain_mask);
    js["split"] = std::string(split_name(r.split));
    if (!r.dataset.empty()) js["dataset"] = r.dataset;
    if (r.region_map) js["region_map"] = relative_to(base, *r.region_map);
    doc["samples"].push_back(std::move(js));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path);
  out << doc.dump(2) << "\n";
}

Subsets derive_subsets(const Manifest& m) {
  Subsets s;
  for (const auto& r : m.samples) {
    if (r.split != Split::kTrain) continue;
    if (r.fully_labelled()) s.fls.push_back(r.id);
    if (r.has_wmh()) s.pls_wmh.push_back(r.id);
    if (r.has_isl()) s.pls_isl.push_back(r.id);
    if (r.has_wmh() || r.has_isl()) s.pls_all.push_back(r.id);
  }
  return s;
}

LoadedSample load_sample(const SampleRecord& record) {
  LoadedSample s;
  s.record = &record;
  s.image = read_volume(record.image);
  s.brain_mask = read_mask(record.brain_mask);
  if (!(s.brain_mask.shape() == s.image.shape())) {
    throw DataError("sample '" + record.id + "': brain mask shape differs from image");
  }
  s.labels = LabelVolume(s.image.shape(), s.image.spacing());
  s.has_wmh = record.has_wmh();
  s.has_isl = record.has_isl();
  auto merge = [&](const std::string& path, std::uint8_t code) {
    const LabelVolume m = read_mask(path);
    if (!(m.shape() == s.image.shape())) {
      throw DataError("sample '" + record.id + "': label shape differs from image");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i]) continue;
      if (s.labels[i] != kCodeBg) {
        throw DataError("sample '" + record.id + "': WMH and ISL masks overlap");
      }
      s.labels[i] = code;
    }
  };
  if (record.wmh_label) merge(*record.wmh_label, kCodeWmh);
  if (record.isl_label) merge(*record.isl_label, kCodeIsl);
  return s;
}

}  // namespace plseg
