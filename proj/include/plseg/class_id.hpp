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

#ifndef PLSEG_CLASS_ID_HPP_
#define PLSEG_CLASS_ID_HPP_

#include <cstdint>
#include <string>
#include <string_view>

namespace plseg {

// Label codes stored in LabelVolume.
inline constexpr std::uint8_t kCodeBg = 0;
inline constexpr std::uint8_t kCodeWmh = 1;
inline constexpr std::uint8_t kCodeIsl = 2;

// Plain classes plus the merged pseudo-classes used by the marginal and
// phased formulations.
enum class ClassId : std::uint8_t { kBg, kWmh, kIsl, kNotWmh, kNotIsl, kNotBg };

// Bitmask over the base codes {BG, WMH, ISL} a class stands for.
constexpr std::uint8_t base_mask(ClassId c) {
  switch (c) {
    case ClassId::kBg: return 0b001;
    case ClassId::kWmh: return 0b010;
    case ClassId::kIsl: return 0b100;
    case ClassId::kNotWmh: return 0b101;
    case ClassId::kNotIsl: return 0b011;
    case ClassId::kNotBg: return 0b110;
  }
  return 0;
}

constexpr bool covers_code(ClassId c, std::uint8_t code) {
  return code < 3 && (base_mask(c) >> code) & 1u;
}

constexpr bool is_merged(ClassId c) {
  return c == ClassId::kNotWmh || c == ClassId::kNotIsl || c == ClassId::kNotBg;
}

std::string_view class_name(ClassId c);
// Accepts "BG", "WMH", "ISL", "NOT_WMH", "NOT_ISL", "NOT_BG".
ClassId parse_class(std::string_view name);

}  // namespace plseg

#endif  // PLSEG_CLASS_ID_HPP_
