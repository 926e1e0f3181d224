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

#include "doctest.h"
#include "rvqa/bitstream.hpp"

using namespace rvqa;

namespace {

UnitSequence random_units(Rng& rng, std::size_t frames, std::size_t stages, std::size_t n) {
  UnitSequence u{frames, stages, n, {}};
  u.codes.resize(frames * stages);
  for (auto& c : u.codes) c = static_cast<std::uint32_t>(rng.below(n));
  return u;
}

BitstreamError::Kind kind_of(std::span<const std::uint8_t> bytes) {
  try {
    unpack(bytes);
  } catch (const BitstreamError& e) {
    return e.kind();
  }
  FAIL("expected a BitstreamError");
  return BitstreamError::Kind::kBadCode;
}

}  // namespace

TEST_CASE("bits per code") {
  CHECK(bits_per_code(1) == 0);
  CHECK(bits_per_code(2) == 1);
  CHECK(bits_per_code(3) == 2);
  CHECK(bits_per_code(1024) == 10);
  CHECK(bits_per_code(1025) == 11);
}

TEST_CASE("payload of 100 frames x 8 stages at N=1024 is 1000 bytes") {
  Rng rng(1);
  const auto bytes = pack(random_units(rng, 100, 8, 1024));
  CHECK(bytes.size() == kBitstreamHeaderBytes + 1000);
}

TEST_CASE("empty sequence packs to the header alone") {
  const UnitSequence u{0, 8, 1024, {}};
  const auto bytes = pack(u);
  CHECK(bytes.size() == kBitstreamHeaderBytes);
  CHECK(unpack(bytes) == u);
}

TEST_CASE("pack/unpack identity over random shapes") {
  Rng rng(2024);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 1 + rng.below(3000);
    const auto u = random_units(rng, rng.below(60), 1 + rng.below(9), n);
    const auto bytes = pack(u);
    CHECK(bytes.size() == kBitstreamHeaderBytes + payload_bytes(u.frames, u.stages, n));
    CHECK(unpack(bytes) == u);
  }
}

TEST_CASE("little-endian LSB-first layout") {
  // N = 8 stores 3 bits per code, each written LSB first: 5 -> 1,0,1  3 -> 1,1,0  6 -> 0,1,1
  const UnitSequence u{1, 3, 8, {5, 3, 6}};
  const auto bytes = pack(u);
  REQUIRE(bytes.size() == kBitstreamHeaderBytes + 2);
  // byte0 holds bits 1,0,1,1,1,0,0,1 = 0x9D and byte1 holds the final 1
  CHECK(bytes[kBitstreamHeaderBytes] == 0x9D);
  CHECK(bytes[kBitstreamHeaderBytes + 1] == 0x01);
  CHECK(bytes[0] == 'R');
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);  // T
  CHECK(bytes[10] == 3); // L
  CHECK(bytes[14] == 8); // N
}

TEST_CASE("stream errors are distinct") {
  Rng rng(3);
  auto bytes = pack(random_units(rng, 10, 2, 16));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == BitstreamError::Kind::kBadMagic);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK(kind_of(bad_version) == BitstreamError::Kind::kVersionMismatch);
  auto short_payload = bytes;
  short_payload.pop_back();
  CHECK(kind_of(short_payload) == BitstreamError::Kind::kTruncated);
  auto short_header = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 9);
  CHECK(kind_of(short_header) == BitstreamError::Kind::kTruncated);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(kind_of(trailing) == BitstreamError::Kind::kTrailingBytes);
  // N = 3 stores 2 bits; the value 3 is not a valid code.
  UnitSequence u{1, 1, 3, {2}};
  auto out_of_range = pack(u);
  out_of_range.back() = 0x03;
  CHECK(kind_of(out_of_range) == BitstreamError::Kind::kBadCode);
  CHECK_THROWS_AS(pack(UnitSequence{1, 1, 4, {4}}), BitstreamError);
}
