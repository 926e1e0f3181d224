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

#include "rvqa/bitstream.hpp"

#include <cstring>
#include <limits>

namespace rvqa {

unsigned bits_per_code(std::size_t codebook_size) {
  if (codebook_size < 1) throw UsageError("codebook size must be at least 1");
  unsigned bits = 0;
  while ((std::size_t{1} << bits) < codebook_size) ++bits;
  return bits;
}

std::size_t payload_bytes(std::size_t frames, std::size_t stages, std::size_t codebook_size) {
  const std::size_t bits = frames * stages * bits_per_code(codebook_size);
  return (bits + 7) / 8;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw UsageError(std::string(what) + " does not fit the 32-bit header field");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<std::uint8_t> pack(const UnitSequence& units) {
  if (units.codes.size() != units.frames * units.stages) {
    throw UsageError("unit sequence code count does not match its shape");
  }
  const unsigned bits = bits_per_code(units.codebook_size);
  std::vector<std::uint8_t> out = {'R', 'V', 'Q', 'U'};
  out.reserve(kBitstreamHeaderBytes + payload_bytes(units.frames, units.stages, units.codebook_size));
  put_u16(out, kBitstreamVersion);
  put_u32(out, checked_u32(units.frames, "T"));
  put_u32(out, checked_u32(units.stages, "L"));
  put_u32(out, checked_u32(units.codebook_size, "N"));

  const std::size_t header = out.size();
  out.resize(header + payload_bytes(units.frames, units.stages, units.codebook_size), 0);
  std::size_t pos = 0;
  for (std::uint32_t code : units.codes) {
    if (code >= units.codebook_size) {
      throw BitstreamError(BitstreamError::Kind::kBadCode,
                           "code " + std::to_string(code) + " out of range for N=" +
                               std::to_string(units.codebook_size));
    }
    for (unsigned b = 0; b < bits; ++b, ++pos) {
      if ((code >> b) & 1u) out[header + pos / 8] |= static_cast<std::uint8_t>(1u << (pos % 8));
    }
  }
  return out;
}

UnitSequence unpack(std::span<const std::uint8_t> stream) {
  using Kind = BitstreamError::Kind;
  if (stream.size() < 4) throw BitstreamError(Kind::kTruncated, "unit stream truncated in magic");
  if (std::memcmp(stream.data(), "RVQU", 4) != 0) {
    throw BitstreamError(Kind::kBadMagic, "bad magic: not a unit stream");
  }
  if (stream.size() < kBitstreamHeaderBytes) {
    throw BitstreamError(Kind::kTruncated, "unit stream truncated in header");
  }
  const std::uint16_t version = static_cast<std::uint16_t>(stream[4] | (stream[5] << 8));
  if (version != kBitstreamVersion) {
    throw BitstreamError(Kind::kVersionMismatch,
                         "unit stream version " + std::to_string(version) + " unsupported");
  }
  UnitSequence units;
  units.frames = get_u32(stream, 6);
  units.stages = get_u32(stream, 10);
  units.codebook_size = get_u32(stream, 14);
  if (units.codebook_size < 1) throw BitstreamError(Kind::kBadCode, "codebook size 0 in header");

  const std::size_t need = payload_bytes(units.frames, units.stages, units.codebook_size);
  const std::size_t have = stream.size() - kBitstreamHeaderBytes;
  if (have < need) {
    throw BitstreamError(Kind::kTruncated, "unit stream truncated: payload has " +
                                               std::to_string(have) + " of " +
                                               std::to_string(need) + " bytes");
  }
  if (have > need) throw BitstreamError(Kind::kTrailingBytes, "trailing bytes after payload");

  const unsigned bits = bits_per_code(units.codebook_size);
  const auto payload = stream.subspan(kBitstreamHeaderBytes);
  units.codes.resize(units.frames * units.stages);
  std::size_t pos = 0;
  for (auto& code : units.codes) {
    std::uint32_t v = 0;
    for (unsigned b = 0; b < bits; ++b, ++pos) {
      v |= static_cast<std::uint32_t>((payload[pos / 8] >> (pos % 8)) & 1u) << b;
    }
    if (v >= units.codebook_size) {
      throw BitstreamError(Kind::kBadCode, "decoded code " + std::to_string(v) +
                                               " out of range for N=" +
                                               std::to_string(units.codebook_size));
    }
    code = v;
  }
  return units;
}

}  // namespace rvqa
