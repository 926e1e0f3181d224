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

#include "rvqa/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>

#include "json.hpp"

namespace rvqa {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError(what_ + " truncated");
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::string tag(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

bool has_extension(const fs::path& p, const char* ext) { return p.extension() == ext; }

}  // namespace

std::vector<std::uint8_t> encode_npy(const Matrix& m) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                     std::to_string(m.rows()) + ", " + std::to_string(m.cols()) + "), }";
  // Magic (6) + version (2) + length (2) + dict + padding + '\n' aligned to 64.
  std::size_t total = 10 + dict.size() + 1;
  const std::size_t padded = (total + 63) / 64 * 64;
  dict.append(padded - total, ' ');
  dict.push_back('\n');

  std::vector<std::uint8_t> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  put_u16(out, static_cast<std::uint16_t>(dict.size()));
  out.insert(out.end(), dict.begin(), dict.end());
  for (double v : m.data()) put_f32(out, v);
  return out;
}

Matrix decode_npy(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes, "npy file");
  const std::string magic = in.tag(6);
  if (magic != std::string("\x93NUMPY", 6)) throw DataError("not an npy file (bad magic)");
  const std::string version = in.tag(2);
  if (version[0] != 1 || version[1] != 0) {
    throw DataError("unsupported npy version " + std::to_string(version[0]) + "." +
                    std::to_string(version[1]) + " (only 1.0)");
  }
  const std::string header = in.tag(in.u16());

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']*)')")) ||
      m[1] != "<f4") {
    throw DataError("unsupported npy dtype (only little-endian float32 '<f4')");
  }
  if (!std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*(True|False))")) ||
      m[1] != "False") {
    throw DataError("unsupported npy layout (only C order)");
  }
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))"))) {
    throw DataError("unsupported npy shape (only two-dimensional arrays)");
  }
  const std::size_t rows = std::stoull(m[1]);
  const std::size_t cols = std::stoull(m[2]);
  if (in.remaining() != rows * cols * 4) {
    throw DataError("npy payload size " + std::to_string(in.remaining()) +
                    " bytes does not match shape (" + std::to_string(rows) + ", " +
                    std::to_string(cols) + ")");
  }
  Matrix out(rows, cols);
  for (double& v : out.data()) v = in.f32();
  return out;
}

MatrixFile read_matrix(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("matrix file not found: '" + path.string() + "'");
  if (has_extension(path, ".npy")) {
    return MatrixFile{decode_npy(read_bytes(path)), path.stem().string()};
  }
  fs::path sidecar = path;
  sidecar += ".json";
  if (!fs::exists(sidecar)) {
    throw DataError("raw matrix '" + path.string() + "' has no sidecar '" + sidecar.string() + "'");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad sidecar '" + sidecar.string() + "': " + e.what());
  }
  if (!meta.contains("rows") || !meta.contains("cols") || !meta["rows"].is_number_unsigned() ||
      !meta["cols"].is_number_unsigned()) {
    throw DataError("sidecar '" + sidecar.string() + "' needs unsigned 'rows' and 'cols'");
  }
  const std::size_t rows = meta["rows"], cols = meta["cols"];
  const auto bytes = read_bytes(path);
  if (bytes.size() != rows * cols * 4) {
    throw DataError("raw matrix '" + path.string() + "' has " + std::to_string(bytes.size()) +
                    " bytes, sidecar declares " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Reader in(bytes, "raw matrix");
  Matrix values(rows, cols);
  for (double& v : values.data()) v = in.f32();
  return MatrixFile{std::move(values), meta.value("tag", std::string())};
}

void write_matrix(const fs::path& path, const Matrix& m, const std::string& tag) {
  if (has_extension(path, ".npy")) {
    write_bytes(path, encode_npy(m));
    return;
  }
  std::vector<std::uint8_t> payload;
  payload.reserve(m.size() * 4);
  for (double v : m.data()) put_f32(payload, v);
  write_bytes(path, payload);
  nlohmann::ordered_json meta;
  meta["rows"] = m.rows();
  meta["cols"] = m.cols();
  meta["tag"] = tag;
  fs::path sidecar = path;
  sidecar += ".json";
  write_text(sidecar, meta.dump(2) + "\n");
}

std::vector<std::uint8_t> encode_codebooks(const RvqModel& model) {
  std::vector<std::uint8_t> out = {'R', 'V', 'Q', 'C'};
  put_u16(out, kCodebookVersion);
  put_u32(out, static_cast<std::uint32_t>(model.stages()));
  put_u32(out, static_cast<std::uint32_t>(model.codebook_size()));
  put_u32(out, static_cast<std::uint32_t>(model.dim()));
  for (const auto& cb : model.codebooks()) {
    for (double v : cb.centroids.data()) put_f32(out, v);
  }
  return out;
}

RvqModel decode_codebooks(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes, "codebook file");
  if (in.tag(4) != "RVQC") throw DataError("bad magic: not a codebook file");
  const std::uint16_t version = in.u16();
  if (version != kCodebookVersion) {
    throw DataError("codebook file version " + std::to_string(version) + " unsupported");
  }
  const std::size_t stages = in.u32(), size = in.u32(), dim = in.u32();
  if (in.remaining() != stages * size * dim * 4) {
    throw DataError("codebook payload does not match L*N*d");
  }
  std::vector<Codebook> books;
  for (std::size_t i = 0; i < stages; ++i) {
    Codebook cb{Matrix(size, dim), i + 1};
    for (double& v : cb.centroids.data()) v = in.f32();
    books.push_back(std::move(cb));
  }
  return RvqModel(std::move(books));
}

void save_model(const fs::path& path, const RvqModel& model) {
  write_bytes(path, encode_codebooks(model));
}

RvqModel load_model(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("codebook file not found: '" + path.string() + "'");
  return decode_codebooks(read_bytes(path));
}

AudioBuffer decode_wav(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes, "wav file");
  if (in.tag(4) != "RIFF") throw DataError("not a RIFF file");
  in.u32();
  if (in.tag(4) != "WAVE") throw DataError("not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (in.remaining() >= 8) {
    const std::string id = in.tag(4);
    const std::uint32_t size = in.u32();
    if (id == "fmt ") {
      const std::size_t start = in.pos();
      format = in.u16();
      channels = in.u16();
      rate = in.u32();
      in.u32();
      in.u16();
      bits = in.u16();
      if (format == 0xFFFE) {
        if (size < 40) throw DataError("truncated WAVE_FORMAT_EXTENSIBLE header");
        in.skip(8);
        format = in.u16();  // first two bytes of the sub-format GUID
      }
      in.skip(size - (in.pos() - start));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("wav data chunk precedes fmt chunk");
      if (channels != 1) {
        throw DataError("only mono wav is supported (file has " + std::to_string(channels) +
                        " channels)");
      }
      AudioBuffer audio;
      audio.sample_rate = static_cast<int>(rate);
      in.need(size);
      if (format == 1 && bits == 16) {
        audio.samples.resize(size / 2);
        for (double& s : audio.samples) s = in.i16() / 32768.0;
      } else if (format == 3 && bits == 32) {
        audio.samples.resize(size / 4);
        for (double& s : audio.samples) s = in.f32();
      } else {
        throw DataError("unsupported wav encoding (format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bits); need PCM16 or float32");
      }
      return audio;
    } else {
      in.skip(size + (size & 1));
    }
  }
  throw DataError("wav file has no data chunk");
}

AudioBuffer read_wav(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("wav file not found: '" + path.string() + "'");
  return decode_wav(read_bytes(path));
}

namespace {

std::vector<std::uint8_t> wav_header(const AudioBuffer& audio, std::uint16_t format,
                                     std::uint16_t bits) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(audio.samples.size() * bits / 8);
  std::vector<std::uint8_t> out = {'R', 'I', 'F', 'F'};
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, format);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * bits / 8);
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_wav_pcm16(const AudioBuffer& audio) {
  auto out = wav_header(audio, 1, 16);
  for (double s : audio.samples) {
    const long q = std::lround(std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

std::vector<std::uint8_t> encode_wav_float(const AudioBuffer& audio) {
  auto out = wav_header(audio, 3, 32);
  for (double s : audio.samples) put_f32(out, s);
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path,
                                               std::size_t expected_columns,
                                               const std::string& header_first_cell) {
  if (!fs::exists(path)) throw DataError("csv file not found: '" + path.string() + "'");
  std::istringstream text(read_text(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(text, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (rows.empty() && !cells.empty() && cells.front() == header_first_cell) continue;
    if (expected_columns > 0 && cells.size() != expected_columns) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(expected_columns) + " columns, found " +
                      std::to_string(cells.size()));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string format_double(double v) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace rvqa
