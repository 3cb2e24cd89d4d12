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

#include "plseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace plseg {
namespace {

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;

enum DataType : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUint16 = 512,
  kUint32 = 768,
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_all(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw DataError("cannot open " + path);
  std::string bytes;
  std::array<char, 1 << 16> buf{};
  int n = 0;
  while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) {
    bytes.append(buf.data(), static_cast<std::size_t>(n));
  }
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw DataError("corrupt compressed stream in " + path);
  return bytes;
}

void write_all(const std::string& path, const std::string& bytes) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (f == nullptr) throw DataError("cannot write " + path);
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(f);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK) {
      throw DataError("short write to " + path);
    }
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

template <typename T>
T load(const std::string& bytes, std::size_t offset, bool swap) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  if (swap && sizeof(T) > 1) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
  }
  return v;
}

template <typename T>
void store(std::string& bytes, std::size_t offset, T v) {
  std::memcpy(bytes.data() + offset, &v, sizeof(T));
}

struct Header {
  std::array<int, 8> dim{};
  std::int16_t datatype = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 0;
  float scl_slope = 0;
  float scl_inter = 0;
  std::string descrip;
  bool swap = false;
};

Header parse_header(const std::string& bytes, const std::string& path) {
  if (bytes.size() < kHeaderSize) throw DataError(path + ": truncated NIfTI header");
  Header h;
  const auto size = load<std::int32_t>(bytes, 0, false);
  if (size == kHeaderSize) {
    h.swap = false;
  } else if (load<std::int32_t>(bytes, 0, true) == kHeaderSize) {
    h.swap = true;
  } else {
    throw DataError(path + ": malformed NIfTI header (sizeof_hdr)");
  }
  if (std::memcmp(bytes.data() + 344, "n+1", 4) != 0) {
    throw DataError(path + ": not a single-file NIfTI-1 image (magic)");
  }
  for (int i = 0; i < 8; ++i) h.dim[i] = load<std::int16_t>(bytes, 40 + 2 * i, h.swap);
  h.datatype = load<std::int16_t>(bytes, 70, h.swap);
  for (int i = 0; i < 8; ++i) h.pixdim[i] = load<float>(bytes, 76 + 4 * i, h.swap);
  h.vox_offset = load<float>(bytes, 108, h.swap);
  h.scl_slope = load<float>(bytes, 112, h.swap);
  h.scl_inter = load<float>(bytes, 116, h.swap);
  const char* d = bytes.data() + 148;
  h.descrip.assign(d, strnlen(d, 80));
  if (h.dim[0] < 1 || h.dim[0] > 7) throw DataError(path + ": malformed dim[0]");
  return h;
}

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kUint8: case kInt8: return 1;
    case kInt16: case kUint16: return 2;
    case kInt32: case kUint32: case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
  }
}

double voxel_value(const std::string& bytes, std::size_t offset, std::int16_t dt, bool swap) {
  switch (dt) {
    case kUint8: return load<std::uint8_t>(bytes, offset, swap);
    case kInt8: return load<std::int8_t>(bytes, offset, swap);
    case kInt16: return load<std::int16_t>(bytes, offset, swap);
    case kUint16: return load<std::uint16_t>(bytes, offset, swap);
    case kInt32: return load<std::int32_t>(bytes, offset, swap);
    case kUint32: return load<std::uint32_t>(bytes, offset, swap);
    case kFloat32: return load<float>(bytes, offset, swap);
    case kFloat64: return load<double>(bytes, offset, swap);
    default: return 0.0;
  }
}

struct Payload {
  Shape shape;
  Spacing spacing;
  int channels = 1;
  std::vector<double> values;
  std::string descrip;
};

Payload read_payload(const std::string& path, bool allow_4d) {
  const std::string bytes = read_all(path);
  const Header h = parse_header(bytes, path);
  int ndim = h.dim[0];
  // Trailing singleton dimensions are tolerated.
  while (ndim > 3 && h.dim[ndim] == 1) --ndim;
  if (ndim < 3 || ndim > (allow_4d ? 4 : 3)) {
    throw DataError(path + ": expected a " + std::string(allow_4d ? "3D or 4D" : "3D") +
                    " payload, got " + std::to_string(h.dim[0]) + "D");
  }
  Payload p;
  p.shape = {h.dim[1], h.dim[2], h.dim[3]};
  p.channels = ndim == 4 ? h.dim[4] : 1;
  if (!p.shape.valid() || p.channels < 1) throw DataError(path + ": non-positive dimension");
  p.spacing = {std::abs(h.pixdim[1]), std::abs(h.pixdim[2]), std::abs(h.pixdim[3])};
  if (!p.spacing.valid()) throw DataError(path + ": non-positive voxel spacing");
  const int bpv = bytes_per_voxel(h.datatype);
  if (bpv == 0) {
    throw DataError(path + ": unsupported NIfTI datatype " + std::to_string(h.datatype));
  }
  const std::size_t offset = static_cast<std::size_t>(std::max(h.vox_offset, 348.0f));
  const std::size_t count = p.shape.voxels() * static_cast<std::size_t>(p.channels);
  if (bytes.size() < offset + count * static_cast<std::size_t>(bpv)) {
    throw DataError(path + ": truncated voxel data");
  }
  const bool scaled = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  p.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    double v = voxel_value(bytes, offset + i * static_cast<std::size_t>(bpv), h.datatype, h.swap);
    if (scaled) v = v * h.scl_slope + h.scl_inter;
    p.values[i] = v;
  }
  p.descrip = h.descrip;
  return p;
}

std::string make_header(const Shape& shape, const Spacing& spacing, int channels,
                        std::int16_t datatype, const std::string& descrip,
                        const std::string& intent_name) {
  std::string bytes(kDataOffset, '\0');
  store<std::int32_t>(bytes, 0, kHeaderSize);
  store<char>(bytes, 38, 'r');
  std::array<std::int16_t, 8> dim{static_cast<std::int16_t>(channels > 1 ? 4 : 3),
                                  static_cast<std::int16_t>(shape.nx),
                                  static_cast<std::int16_t>(shape.ny),
                                  static_cast<std::int16_t>(shape.nz),
                                  static_cast<std::int16_t>(channels),
                                  1, 1, 1};
  for (int i = 0; i < 8; ++i) store<std::int16_t>(bytes, 40 + 2 * i, dim[i]);
  store<std::int16_t>(bytes, 70, datatype);
  store<std::int16_t>(bytes, 72, static_cast<std::int16_t>(8 * bytes_per_voxel(datatype)));
  std::array<float, 8> pixdim{1.0f, static_cast<float>(spacing.x), static_cast<float>(spacing.y),
                              static_cast<float>(spacing.z), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) store<float>(bytes, 76 + 4 * i, pixdim[i]);
  store<float>(bytes, 108, static_cast<float>(kDataOffset));
  store<float>(bytes, 112, 1.0f);
  store<float>(bytes, 116, 0.0f);
  store<char>(bytes, 123, 2);  // mm
  std::memcpy(bytes.data() + 148, descrip.data(), std::min<std::size_t>(descrip.size(), 79));
  store<std::int16_t>(bytes, 254, 1);  // sform_code
  store<float>(bytes, 280, static_cast<float>(spacing.x));
  store<float>(bytes, 296 + 4, static_cast<float>(spacing.y));
  store<float>(bytes, 312 + 8, static_cast<float>(spacing.z));
  std::memcpy(bytes.data() + 328, intent_name.data(), std::min<std::size_t>(intent_name.size(), 15));
  std::memcpy(bytes.data() + 344, "n+1", 4);
  return bytes;
}

static_assert(std::endian::native == std::endian::little,
              "writer emits native byte order and assumes little-endian hosts");

constexpr char kProbIntent[] = "plseg.probs";
constexpr char kClassesPrefix[] = "classes=";

}  // namespace

Volume3D read_volume(const std::string& path) {
  Payload p = read_payload(path, false);
  return Volume3D(p.shape, p.spacing, std::move(p.values));
}

LabelVolume read_labels(const std::string& path) {
  const Payload p = read_payload(path, false);
  std::vector<std::uint8_t> codes(p.values.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const double v = p.values[i];
    if (v != std::round(v) || v < 0.0 || v > kCodeIsl) {
      throw DataError(path + ": label value " + std::to_string(v) + " outside {0,1,2}");
    }
    codes[i] = static_cast<std::uint8_t>(v);
  }
  return LabelVolume(p.shape, p.spacing, std::move(codes));
}

LabelVolume read_mask(const std::string& path) {
  const Payload p = read_payload(path, false);
  std::vector<std::uint8_t> codes(p.values.size());
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = p.values[i] != 0.0;
  return LabelVolume(p.shape, p.spacing, std::move(codes));
}

ProbVolume read_prob_volume(const std::string& path) {
  const Payload p = read_payload(path, true);
  if (p.descrip.rfind(kClassesPrefix, 0) != 0) {
    throw DataError(path + ": probability volume lacks a class list");
  }
  std::vector<ClassId> classes;
  std::stringstream ss(p.descrip.substr(sizeof(kClassesPrefix) - 1));
  for (std::string name; std::getline(ss, name, ',');) classes.push_back(parse_class(name));
  if (static_cast<int>(classes.size()) != p.channels) {
    throw DataError(path + ": class list does not match channel count");
  }
  ProbVolume out(p.shape, p.spacing, classes);
  std::copy(p.values.begin(), p.values.end(), out.grid().data.begin());
  return out;
}

void write_volume(const Volume3D& v, const std::string& path) {
  std::string bytes = make_header(v.shape(), v.spacing(), 1, kFloat32, "", "");
  bytes.resize(kDataOffset + v.size() * sizeof(float));
  for (std::size_t i = 0; i < v.size(); ++i) {
    store<float>(bytes, kDataOffset + i * sizeof(float), static_cast<float>(v[i]));
  }
  write_all(path, bytes);
}

void write_volume(const LabelVolume& v, const std::string& path) {
  std::string bytes = make_header(v.shape(), v.spacing(), 1, kUint8, "", "");
  bytes.append(reinterpret_cast<const char*>(v.codes().data()), v.size());
  write_all(path, bytes);
}

void write_volume(const ProbVolume& v, const std::string& path) {
  std::string descrip = kClassesPrefix;
  for (std::size_t c = 0; c < v.classes().size(); ++c) {
    if (c) descrip += ",";
    descrip += class_name(v.classes()[c]);
  }
  std::string bytes =
      make_header(v.shape(), v.spacing(), v.num_classes(), kFloat32, descrip, kProbIntent);
  const auto& data = v.grid().data;
  bytes.resize(kDataOffset + data.size() * sizeof(float));
  for (std::size_t i = 0; i < data.size(); ++i) {
    store<float>(bytes, kDataOffset + i * sizeof(float), static_cast<float>(data[i]));
  }
  write_all(path, bytes);
}

}  // namespace plseg
