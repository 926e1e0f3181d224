// Copyright 2026 The rvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rvqa/common.hpp"
#include "rvqa/quantizer.hpp"

namespace rvqa {

// Unit stream layout (all integers little-endian):
//   "RVQU" | version u16 | T u32 | L u32 | N u32 | payload
// The payload holds T*L codes in frame-major, stage-minor order, each a
// ceil(log2 N)-bit field written LSB first.
inline constexpr std::uint16_t kBitstreamVersion = 1;
inline constexpr std::size_t kBitstreamHeaderBytes = 4 + 2 + 4 + 4 + 4;

class BitstreamError : public DataError {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kTrailingBytes, kBadCode };
  BitstreamError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// ceil(log2 n); 0 for n == 1.
unsigned bits_per_code(std::size_t codebook_size);

std::size_t payload_bytes(std::size_t frames, std::size_t stages, std::size_t codebook_size);

std::vector<std::uint8_t> pack(const UnitSequence& units);
UnitSequence unpack(std::span<const std::uint8_t> stream);

}  // namespace rvqa
