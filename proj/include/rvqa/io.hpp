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
#include <filesystem>
#include <string>
#include <vector>

#include "rvqa/common.hpp"
#include "rvqa/quantizer.hpp"
#include "rvqa/signal.hpp"

namespace rvqa {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// Matrix files come in two flavours:
//  * ".npy": NumPy format 1.0, '<f4', C order, two dimensions. Nothing else
//    is accepted.
//  * anything else: raw little-endian float32 payload plus "<path>.json"
//    holding {"rows", "cols", "tag"}.
struct MatrixFile {
  Matrix values;
  std::string tag;
};

std::vector<std::uint8_t> encode_npy(const Matrix& m);
Matrix decode_npy(const std::vector<std::uint8_t>& bytes);

MatrixFile read_matrix(const std::filesystem::path& path);
void write_matrix(const std::filesystem::path& path, const Matrix& m, const std::string& tag = "");

// Codebook file: "RVQC" | version u16 | L u32 | N u32 | d u32 | L*N*d float32,
// stage-major, little-endian.
inline constexpr std::uint16_t kCodebookVersion = 1;
std::vector<std::uint8_t> encode_codebooks(const RvqModel& model);
RvqModel decode_codebooks(const std::vector<std::uint8_t>& bytes);
void save_model(const std::filesystem::path& path, const RvqModel& model);
RvqModel load_model(const std::filesystem::path& path);

// WAV: mono PCM16 or IEEE float32 only.
AudioBuffer read_wav(const std::filesystem::path& path);
AudioBuffer decode_wav(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_wav_pcm16(const AudioBuffer& audio);
std::vector<std::uint8_t> encode_wav_float(const AudioBuffer& audio);

/// Comma-separated rows with `expected_columns` cells each. A first row whose
/// first cell equals `header_first_cell` is a header and dropped. Blank lines
/// are skipped.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               std::size_t expected_columns,
                                               const std::string& header_first_cell);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace rvqa
