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

#include "rvqa/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>

#include "rvqa/bitstream.hpp"
#include "rvqa/completeness.hpp"
#include "rvqa/finetune.hpp"
#include "rvqa/io.hpp"
#include "rvqa/probes.hpp"
#include "rvqa/quantizer.hpp"

namespace rvqa {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------- config

/// Strict view of one JSON object: unknown keys and wrong types are usage
/// errors naming the dotted key.
class Section {
 public:
  Section(const json& j, std::string name, std::set<std::string> known)
      : j_(j), name_(std::move(name)) {
    if (!j.is_object()) throw UsageError(name_ + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!known.count(it.key())) throw UsageError("unknown key '" + key_name(it.key()) + "'");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) const { return j_.at(key); }
  std::string key_name(const std::string& key) const { return name_ + "." + key; }

  std::optional<std::string> text(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    if (!at(key).is_string()) throw UsageError(key_name(key) + " must be a string");
    return at(key).get<std::string>();
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_number_unsigned()) {
      throw UsageError(key_name(key) + " must be a non-negative integer");
    }
    return at(key).get<std::size_t>();
  }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_number()) throw UsageError(key_name(key) + " must be a number");
    return at(key).get<double>();
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    if (!has(key)) return out;
    if (!at(key).is_array()) throw UsageError(key_name(key) + " must be an array");
    for (const auto& v : at(key)) {
      if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) {
        throw UsageError(key_name(key) + " entries must be positive integers");
      }
      out.push_back(v.get<std::size_t>());
    }
    return out;
  }

 private:
  const json& j_;
  std::string name_;
};

struct Inputs {
  std::optional<fs::path> features, mels, eval_features, eval_mels, codebooks;
  std::optional<fs::path> phone_labels, eval_phone_labels, pitch, eval_pitch;
  std::optional<fs::path> utterances, trials, scores, frame_info;
};

struct RvqSection {
  std::size_t stages = 8;
  std::size_t codebook_size = 1024;
  std::size_t subsample_frames = 0;  // 0 fits on every training frame
  KMeansParams kmeans;
};

struct Representation {
  enum class Kind { kOriginal, kQuantized, kResidual };
  Kind kind = Kind::kOriginal;
  std::optional<std::size_t> stages;  // all model stages when unset

  ojson to_json() const {
    ojson j;
    j["kind"] = kind == Kind::kOriginal ? "original" : kind == Kind::kQuantized ? "quantized" : "residual";
    if (kind != Kind::kOriginal) {
      if (stages) {
        j["stages"] = *stages;
      } else {
        j["stages"] = nullptr;
      }
    }
    return j;
  }
};

struct Split {
  double eval_fraction = 0.2;
  bool evaluate_on_train = false;
};

struct Config {
  std::string command;
  fs::path base_dir;
  fs::path output_dir;
  Inputs inputs;
  std::optional<RvqSection> rvq;
  bool has_representation = false;
  Representation representation;
  Split split;
  ProbeConfig probe;
  std::optional<std::size_t> phone_inventory;
  ProbeConfig phone_probe;
  ProbeConfig pitch_probe;
  SpeakerEmbedderConfig speaker;
  FinetuneConfig finetune;
  std::vector<std::size_t> sweep_stages;

  bool has_model_source() const { return inputs.codebooks || rvq; }
};

ProbeConfig probe_from(const json& j, const std::string& name) {
  try {
    return ProbeConfig::from_json(j);
  } catch (const UsageError& e) {
    throw UsageError(name + ": " + e.what());
  }
}

SpeakerEmbedderConfig speaker_from(const json& j) {
  const Section s(j, "speaker", {"hidden", "optimizer", "lr", "batch", "epochs", "seed", "crop_frames"});
  SpeakerEmbedderConfig c;
  if (s.has("hidden")) c.hidden = s.counts("hidden");
  if (c.hidden.empty()) throw UsageError("speaker.hidden needs at least one layer");
  const std::string opt = s.text("optimizer").value_or("adam");
  if (opt != "adam" && opt != "sgd") throw UsageError("unknown optimizer '" + opt + "'");
  c.train.optimizer.kind = opt == "adam" ? OptimizerConfig::Kind::kAdam : OptimizerConfig::Kind::kSgd;
  c.train.optimizer.lr = s.number("lr", c.train.optimizer.lr);
  if (!(c.train.optimizer.lr >= 0.0)) throw UsageError("speaker.lr must be non-negative");
  c.train.batch = s.count("batch", 16);
  if (c.train.batch == 0) throw UsageError("speaker.batch must be positive");
  c.train.epochs = s.count("epochs", 30);
  c.train.seed = s.count("seed", 0);
  c.crop_frames = s.count("crop_frames", 0);
  return c;
}

Config parse_config(const std::string& command, const json& j, const fs::path& base_dir) {
  const auto& commands = experiment_commands();
  if (std::find(commands.begin(), commands.end(), command) == commands.end()) {
    throw UsageError("unknown experiment command '" + command + "'");
  }
  const Section top(j, "config", {"output_dir", "inputs", "rvq", "representation", "split", "probe",
                                  "phone", "pitch", "speaker", "finetune", "sweep"});
  Config c;
  c.command = command;
  c.base_dir = base_dir;
  auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : base_dir / p; };

  c.output_dir = resolve(top.text("output_dir").value_or("out"));
  if (const char* env = std::getenv("RVQA_OUTPUT_DIR"); env && *env) c.output_dir = env;

  if (top.has("inputs")) {
    const Section in(top.at("inputs"), "inputs",
                     {"features", "mels", "eval_features", "eval_mels", "codebooks", "phone_labels",
                      "eval_phone_labels", "pitch", "eval_pitch", "utterances", "trials", "scores",
                      "frame_info"});
    auto path = [&](const char* key, std::optional<fs::path>& out) {
      if (auto t = in.text(key)) out = resolve(*t);
    };
    path("features", c.inputs.features);
    path("mels", c.inputs.mels);
    path("eval_features", c.inputs.eval_features);
    path("eval_mels", c.inputs.eval_mels);
    path("codebooks", c.inputs.codebooks);
    path("phone_labels", c.inputs.phone_labels);
    path("eval_phone_labels", c.inputs.eval_phone_labels);
    path("pitch", c.inputs.pitch);
    path("eval_pitch", c.inputs.eval_pitch);
    path("utterances", c.inputs.utterances);
    path("trials", c.inputs.trials);
    path("scores", c.inputs.scores);
    path("frame_info", c.inputs.frame_info);
  }

  if (top.has("rvq")) {
    const Section r(top.at("rvq"), "rvq", {"stages", "codebook_size", "seed", "max_iters", "tol", "restarts",
                                               "subsample_frames"});
    RvqSection rvq;
    rvq.stages = r.count("stages", rvq.stages);
    rvq.codebook_size = r.count("codebook_size", rvq.codebook_size);
    if (!r.has("seed")) throw UsageError("rvq.seed is required");
    rvq.kmeans.seed = r.count("seed", 0);
    rvq.kmeans.max_iters = r.count("max_iters", rvq.kmeans.max_iters);
    rvq.kmeans.tol = r.number("tol", rvq.kmeans.tol);
    rvq.kmeans.restarts = r.count("restarts", rvq.kmeans.restarts);
    rvq.subsample_frames = r.count("subsample_frames", 0);
    if (rvq.stages == 0 || rvq.codebook_size == 0) throw UsageError("rvq.stages and rvq.codebook_size must be positive");
    if (rvq.kmeans.restarts == 0) throw UsageError("rvq.restarts must be positive");
    if (!(rvq.kmeans.tol >= 0.0)) throw UsageError("rvq.tol must be non-negative");
    c.rvq = rvq;
  }

  if (top.has("representation")) {
    const Section r(top.at("representation"), "representation", {"kind", "stages"});
    c.has_representation = true;
    const std::string kind = r.text("kind").value_or("original");
    if (kind == "original") {
      c.representation.kind = Representation::Kind::kOriginal;
    } else if (kind == "quantized") {
      c.representation.kind = Representation::Kind::kQuantized;
    } else if (kind == "residual") {
      c.representation.kind = Representation::Kind::kResidual;
    } else {
      throw UsageError("representation.kind must be original, quantized or residual");
    }
    if (r.has("stages")) {
      c.representation.stages = r.count("stages", 0);
      if (*c.representation.stages == 0) throw UsageError("representation.stages must be positive");
      if (c.rvq && *c.representation.stages > c.rvq->stages) {
        throw UsageError("representation.stages exceeds rvq.stages");
      }
    }
  }

  if (top.has("split")) {
    const Section s(top.at("split"), "split", {"eval_fraction", "evaluate_on"});
    c.split.eval_fraction = s.number("eval_fraction", c.split.eval_fraction);
    if (!(c.split.eval_fraction >= 0.0 && c.split.eval_fraction < 1.0)) {
      throw UsageError("split.eval_fraction must lie in [0, 1)");
    }
    const std::string on = s.text("evaluate_on").value_or("eval");
    if (on != "eval" && on != "train") throw UsageError("split.evaluate_on must be eval or train");
    c.split.evaluate_on_train = on == "train";
  }
  if (!c.split.evaluate_on_train && !c.inputs.eval_features && c.split.eval_fraction == 0.0) {
    throw UsageError("split.eval_fraction is 0 and no eval_features are given; set split.evaluate_on to train");
  }

  if (top.has("probe")) c.probe = probe_from(top.at("probe"), "probe");
  if (top.has("phone")) {
    const Section p(top.at("phone"), "phone", {"inventory", "probe"});
    if (p.has("inventory")) {
      c.phone_inventory = p.count("inventory", 0);
      if (*c.phone_inventory == 0) throw UsageError("phone.inventory must be positive");
    }
    if (p.has("probe")) c.phone_probe = probe_from(p.at("probe"), "phone.probe");
    if (c.phone_probe.family == ProbeConfig::Family::kConvStack) {
      throw UsageError("phone.probe must be linear or mlp");
    }
  }
  if (top.has("pitch")) {
    const Section p(top.at("pitch"), "pitch", {"probe"});
    if (p.has("probe")) c.pitch_probe = probe_from(p.at("probe"), "pitch.probe");
    if (c.pitch_probe.family == ProbeConfig::Family::kConvStack) {
      throw UsageError("pitch.probe must be linear or mlp");
    }
  }
  if (top.has("speaker")) c.speaker = speaker_from(top.at("speaker"));
  if (top.has("finetune")) c.finetune = FinetuneConfig::from_json(top.at("finetune"));
  if (top.has("sweep")) {
    const Section s(top.at("sweep"), "sweep", {"stages"});
    c.sweep_stages = s.counts("stages");
    for (std::size_t i = 1; i < c.sweep_stages.size(); ++i) {
      if (c.sweep_stages[i] <= c.sweep_stages[i - 1]) throw UsageError("sweep.stages must be strictly increasing");
    }
    if (c.rvq && !c.sweep_stages.empty() && c.sweep_stages.back() > c.rvq->stages) {
      throw UsageError("sweep.stages exceeds rvq.stages");
    }
  }

  // Per-command requirements.
  auto need = [&](const std::optional<fs::path>& p, const char* key) {
    if (!p) throw UsageError(command + " needs inputs." + key);
  };
  auto need_eval = [&](const std::optional<fs::path>& p, const char* key) {
    if (c.inputs.eval_features && !p) {
      throw UsageError(command + " with inputs.eval_features needs inputs." + key);
    }
  };
  auto need_model = [&] {
    if (!c.has_model_source()) throw UsageError(command + " needs an rvq section or inputs.codebooks");
  };
  const bool uses_frames = command != "probe-speaker" && command != "eer";
  if (uses_frames) need(c.inputs.features, "features");
  if (command == "completeness" || command == "finetune" || command == "rd-sweep") {
    need(c.inputs.mels, "mels");
    need_eval(c.inputs.eval_mels, "eval_mels");
  }
  if (command == "probe-phone") {
    need(c.inputs.phone_labels, "phone_labels");
    need_eval(c.inputs.eval_phone_labels, "eval_phone_labels");
  }
  if (command == "probe-pitch") {
    need(c.inputs.pitch, "pitch");
    need_eval(c.inputs.eval_pitch, "eval_pitch");
  }
  if (command == "probe-speaker") need(c.inputs.utterances, "utterances");
  if (command == "eer") need(c.inputs.scores, "scores");
  if (command == "finetune" || command == "rd-sweep") need_model();
  if (command == "rd-sweep") {
    if (c.has_representation) throw UsageError("rd-sweep sets the representation itself; remove the representation section");
    if (c.inputs.phone_labels) need_eval(c.inputs.eval_phone_labels, "eval_phone_labels");
    if (c.inputs.pitch) need_eval(c.inputs.eval_pitch, "eval_pitch");
    if (c.inputs.utterances && !c.inputs.trials) {
      throw UsageError("rd-sweep scores speakers by EER and needs inputs.trials with inputs.utterances");
    }
  }
  if (c.representation.kind != Representation::Kind::kOriginal) need_model();
  return c;
}

// ---------------------------------------------------------------- data

struct Frames {
  Matrix values;
  std::string tag;
};

Frames load_frames(const fs::path& path) {
  MatrixFile f = read_matrix(path);
  if (!f.values.all_finite()) throw DataError("non-finite values in " + path.string());
  if (f.values.rows() == 0) throw DataError("no frames in " + path.string());
  return {std::move(f.values), f.tag.empty() ? path.stem().string() : f.tag};
}

std::size_t parse_index(const std::string& cell, const fs::path& path) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(cell, &used);
    if (used != cell.size() || v < 0) throw std::invalid_argument("negative");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError("bad frame index '" + cell + "' in " + path.string());
  }
}

long long parse_int(const std::string& cell, const fs::path& path) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("bad integer '" + cell + "' in " + path.string());
  }
}

double parse_real(const std::string& cell, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
    return v;
  } catch (const std::exception&) {
    throw DataError("bad number '" + cell + "' in " + path.string());
  }
}

bool parse_flag(const std::string& cell, const fs::path& path) {
  if (cell == "1" || cell == "true") return true;
  if (cell == "0" || cell == "false") return false;
  throw DataError("bad flag '" + cell + "' in " + path.string() + " (expected 0 or 1)");
}

/// Visits each row of a frame-indexed CSV once, rejecting repeats and
/// indices beyond `frames`.
void for_each_frame_row(const fs::path& path, std::size_t columns, std::size_t frames,
                        const std::function<void(std::size_t, const std::vector<std::string>&)>& fn) {
  std::vector<bool> seen(frames, false);
  for (const auto& row : read_csv(path, columns, "frame_index")) {
    const std::size_t t = parse_index(row[0], path);
    if (t >= frames) {
      throw DataError("frame_index " + row[0] + " beyond the " + std::to_string(frames) +
                      " frames of the features (" + path.string() + ")");
    }
    if (seen[t]) throw DataError("frame_index " + row[0] + " repeated in " + path.string());
    seen[t] = true;
    fn(t, row);
  }
}

std::vector<int> load_labels(const fs::path& path, std::size_t frames) {
  std::vector<int> labels(frames, FrameLabels::kIgnore);
  for_each_frame_row(path, 2, frames, [&](std::size_t t, const std::vector<std::string>& row) {
    const long long v = parse_int(row[1], path);
    if (v < FrameLabels::kIgnore) throw DataError("negative label id in " + path.string());
    labels[t] = static_cast<int>(v);
  });
  return labels;
}

PitchTrack load_pitch(const fs::path& path, std::size_t frames) {
  PitchTrack p{std::vector<double>(frames, 0.0), std::vector<bool>(frames, false)};
  for_each_frame_row(path, 3, frames, [&](std::size_t t, const std::vector<std::string>& row) {
    p.f0[t] = parse_real(row[1], path);
    p.voiced[t] = parse_flag(row[2], path);
    if (p.voiced[t] && (p.f0[t] < 50.0 || p.f0[t] > 600.0)) {
      throw DataError("voiced f0 " + row[1] + " Hz outside [50, 600] in " + path.string());
    }
  });
  return p;
}

/// Row ranges of the training and evaluation parts of the primary frames.
struct SplitPlan {
  std::size_t frames = 0;
  std::size_t train_end = 0;  // train = [0, train_end)
  bool eval_file = false;     // eval comes from the eval_* inputs
  bool eval_is_train = false;

  ojson to_json(double fraction) const {
    ojson j;
    j["train_frames"] = train_end;
    if (eval_is_train) {
      j["evaluate_on"] = "train";
    } else if (eval_file) {
      j["evaluate_on"] = "eval_files";
    } else {
      j["evaluate_on"] = "held_out_tail";
      j["eval_fraction"] = fraction;
    }
    return j;
  }
};

SplitPlan plan_split(const Config& c, std::size_t frames) {
  SplitPlan p;
  p.frames = frames;
  if (c.split.evaluate_on_train) {
    p.train_end = frames;
    p.eval_is_train = true;
  } else if (c.inputs.eval_features) {
    p.train_end = frames;
    p.eval_file = true;
  } else {
    const auto n_eval = static_cast<std::size_t>(std::llround(c.split.eval_fraction * static_cast<double>(frames)));
    if (n_eval == 0 || n_eval >= frames) {
      throw DataError("cannot hold out " + std::to_string(n_eval) + " of " + std::to_string(frames) + " frames");
    }
    p.train_end = frames - n_eval;
  }
  return p;
}

template <typename T>
std::vector<T> slice(const std::vector<T>& v, std::size_t begin, std::size_t end) {
  return std::vector<T>(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end));
}

/// Training and evaluation halves of one frame-aligned quantity.
template <typename T>
struct Pair {
  T train, eval;
};

Pair<Matrix> split_matrix(const SplitPlan& p, const Matrix& all, const Matrix* eval_file) {
  if (p.eval_is_train) return {all, all};
  if (p.eval_file) return {all, *eval_file};
  return {all.slice_rows(0, p.train_end), all.slice_rows(p.train_end, p.frames)};
}

template <typename T>
Pair<std::vector<T>> split_vector(const SplitPlan& p, const std::vector<T>& all, const std::vector<T>* eval_file) {
  if (p.eval_is_train) return {all, all};
  if (p.eval_file) return {all, *eval_file};
  return {slice(all, 0, p.train_end), slice(all, p.train_end, p.frames)};
}

Pair<PitchTrack> split_pitch(const SplitPlan& p, const PitchTrack& all, const PitchTrack* eval_file) {
  auto f0 = split_vector(p, all.f0, eval_file ? &eval_file->f0 : nullptr);
  auto voiced = split_vector(p, all.voiced, eval_file ? &eval_file->voiced : nullptr);
  return {{f0.train, voiced.train}, {f0.eval, voiced.eval}};
}

/// Everything a frame-level command reads, split into train and eval parts.
struct FrameTask {
  std::string tag;
  SplitPlan plan;
  Pair<Matrix> features;
  std::optional<Pair<Matrix>> mels;
  std::optional<Pair<std::vector<int>>> labels;
  std::optional<Pair<PitchTrack>> pitch;
};

FrameTask load_frame_task(const Config& c, bool with_mels, bool with_labels, bool with_pitch) {
  FrameTask task;
  const Frames features = load_frames(*c.inputs.features);
  const std::size_t dim = features.values.cols();
  task.tag = features.tag;
  task.plan = plan_split(c, features.values.rows());
  std::optional<Frames> eval_features;
  if (task.plan.eval_file) {
    eval_features = load_frames(*c.inputs.eval_features);
    if (eval_features->values.cols() != dim) {
      throw DataError("eval features have " + std::to_string(eval_features->values.cols()) +
                      " columns, training features " + std::to_string(dim));
    }
  }
  task.features = split_matrix(task.plan, features.values, eval_features ? &eval_features->values : nullptr);
  const std::size_t frames = features.values.rows();
  const std::size_t eval_frames = eval_features ? eval_features->values.rows() : 0;

  auto aligned = [](const Matrix& m, std::size_t expected, const fs::path& path) {
    if (m.rows() != expected) {
      throw DataError("misaligned frames: " + path.string() + " has " + std::to_string(m.rows()) +
                      " rows, features have " + std::to_string(expected));
    }
  };
  if (with_mels) {
    const Frames mels = load_frames(*c.inputs.mels);
    aligned(mels.values, frames, *c.inputs.mels);
    std::optional<Frames> eval_mels;
    if (task.plan.eval_file) {
      eval_mels = load_frames(*c.inputs.eval_mels);
      aligned(eval_mels->values, eval_frames, *c.inputs.eval_mels);
      if (eval_mels->values.cols() != mels.values.cols()) throw DataError("eval mels differ in width");
    }
    task.mels = split_matrix(task.plan, mels.values, eval_mels ? &eval_mels->values : nullptr);
  }
  if (with_labels) {
    const auto labels = load_labels(*c.inputs.phone_labels, frames);
    std::optional<std::vector<int>> eval_labels;
    if (task.plan.eval_file) eval_labels = load_labels(*c.inputs.eval_phone_labels, eval_frames);
    task.labels = split_vector(task.plan, labels, eval_labels ? &*eval_labels : nullptr);
  }
  if (with_pitch) {
    const PitchTrack pitch = load_pitch(*c.inputs.pitch, frames);
    std::optional<PitchTrack> eval_pitch;
    if (task.plan.eval_file) eval_pitch = load_pitch(*c.inputs.eval_pitch, eval_frames);
    task.pitch = split_pitch(task.plan, pitch, eval_pitch ? &*eval_pitch : nullptr);
  }
  return task;
}

/// Loads the configured codebooks, or fits them on `train`.
RvqModel obtain_model(const Config& c, const Matrix& train) {
  RvqModel model;
  if (c.inputs.codebooks) {
    model = load_model(*c.inputs.codebooks);
  } else if (c.rvq->subsample_frames > 0 && c.rvq->subsample_frames < train.rows()) {
    // Seeded draw without replacement, kept in frame order.
    std::vector<std::size_t> order(train.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(c.rvq->kmeans.seed, 77));
    rng.shuffle(order);
    order.resize(c.rvq->subsample_frames);
    std::sort(order.begin(), order.end());
    Matrix subset(order.size(), train.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
      std::copy(train.row(order[i]).begin(), train.row(order[i]).end(), subset.row(i).begin());
    }
    model = rvq_fit(FrameSequence{subset, ""}, c.rvq->stages, c.rvq->codebook_size, c.rvq->kmeans);
  } else {
    model = rvq_fit(FrameSequence{train, ""}, c.rvq->stages, c.rvq->codebook_size, c.rvq->kmeans);
  }
  if (model.dim() != train.cols()) {
    throw DataError("codebooks have dimension " + std::to_string(model.dim()) + ", features " +
                    std::to_string(train.cols()));
  }
  return model;
}

std::size_t resolved_stages(const Representation& r, const RvqModel& model) {
  const std::size_t stages = r.stages.value_or(model.stages());
  if (stages > model.stages()) {
    throw DataError("representation uses " + std::to_string(stages) + " stages, codebooks have " +
                    std::to_string(model.stages()));
  }
  return stages;
}

Matrix quantized(const RvqModel& model, const Matrix& x, std::size_t stages) {
  const FrameSequence f{x, ""};
  return decode(model, truncate(encode(model, f), stages)).values;
}

Matrix represent(const Representation& r, const RvqModel* model, const Matrix& x) {
  switch (r.kind) {
    case Representation::Kind::kOriginal:
      return x;
    case Representation::Kind::kQuantized:
      return quantized(*model, x, resolved_stages(r, *model));
    case Representation::Kind::kResidual:
      return residual(*model, FrameSequence{x, ""}, resolved_stages(r, *model)).values;
  }
  return x;
}

struct Utterances {
  std::vector<Utterance> train, test;
  std::map<std::string, Utterance> by_id;  // every utterance, after the representation
};

Utterances load_utterances(const Config& c) {
  const fs::path& list = *c.inputs.utterances;
  Utterances u;
  std::vector<std::pair<Utterance, bool>> all;
  for (const auto& row : read_csv(list, 4, "utterance_id")) {
    const fs::path file = fs::path(row[2]).is_absolute() ? fs::path(row[2]) : list.parent_path() / row[2];
    const Frames frames = load_frames(file);
    if (row[3] != "train" && row[3] != "test") {
      throw DataError("split must be train or test, got '" + row[3] + "' in " + list.string());
    }
    if (!all.empty() && frames.values.cols() != all.front().first.frames.dim()) {
      throw DataError("utterance " + row[0] + " differs in feature width");
    }
    all.push_back({Utterance{row[0], row[1], FrameSequence{frames.values, frames.tag}}, row[3] == "train"});
  }
  if (all.empty()) throw DataError("no utterances in " + list.string());

  std::optional<RvqModel> model;
  if (c.representation.kind != Representation::Kind::kOriginal) {
    if (c.inputs.codebooks) {
      model = obtain_model(c, all.front().first.frames.values);
    } else {
      std::size_t total = 0;
      for (const auto& [utt, is_train] : all) total += is_train ? utt.frames.frames() : 0;
      Matrix pooled(total, all.front().first.frames.dim());
      std::size_t at = 0;
      for (const auto& [utt, is_train] : all) {
        if (!is_train) continue;
        for (std::size_t t = 0; t < utt.frames.frames(); ++t, ++at) {
          std::copy(utt.frames.values.row(t).begin(), utt.frames.values.row(t).end(), pooled.row(at).begin());
        }
      }
      if (total == 0) throw DataError("no training utterances to fit codebooks on");
      model = obtain_model(c, pooled);
    }
  }
  for (auto& [utt, is_train] : all) {
    utt.frames.values = represent(c.representation, model ? &*model : nullptr, utt.frames.values);
    if (!u.by_id.emplace(utt.id, utt).second) throw DataError("utterance id " + utt.id + " repeated");
    (is_train ? u.train : u.test).push_back(std::move(utt));
  }
  return u;
}

struct Trial {
  std::string enrol, test;
  bool genuine;
};

std::vector<Trial> load_trials(const fs::path& path) {
  std::vector<Trial> trials;
  for (const auto& row : read_csv(path, 3, "enrol_id")) trials.push_back({row[0], row[1], parse_flag(row[2], path)});
  return trials;
}

// ---------------------------------------------------------------- metrics

CompletenessReport completeness_row(const ProbeConfig& probe, const Matrix& train_x,
                                    const Matrix& train_mel, const Matrix& eval_x,
                                    const Matrix& eval_mel, const std::string& dataset,
                                    double* train_mse = nullptr) {
  ProbeFit fit = fit_probe(probe, FrameSequence{train_x, dataset}, train_mel);
  if (train_mse) *train_mse = fit.train_mse;
  return evaluate_completeness(fit.probe, FrameSequence{eval_x, dataset}, eval_mel, dataset);
}

std::size_t inventory_of(const Config& c, const Pair<std::vector<int>>& labels) {
  if (c.phone_inventory) return *c.phone_inventory;
  int top = FrameLabels::kIgnore;
  for (int v : labels.train) top = std::max(top, v);
  for (int v : labels.eval) top = std::max(top, v);
  if (top < 0) throw DataError("all frames are ignored");
  return static_cast<std::size_t>(top) + 1;
}

struct PhoneResult {
  double fer;
  std::size_t scored;
  std::size_t inventory;
};

PhoneResult phone_error(const Config& c, const Matrix& train_x, const Matrix& eval_x,
                        const Pair<std::vector<int>>& labels) {
  const std::size_t inventory = inventory_of(c, labels);
  const FrameLabels train{labels.train, inventory}, eval{labels.eval, inventory};
  FrameClassifier clf = fit_frame_classifier(FrameSequence{train_x, ""}, train, c.phone_probe);
  return {frame_error_rate(clf, FrameSequence{eval_x, ""}, eval), eval.scored(), inventory};
}

double pitch_error(const Config& c, const Matrix& train_x, const Matrix& eval_x, const Pair<PitchTrack>& pitch) {
  PitchRegressor reg = fit_pitch_regressor(FrameSequence{train_x, ""}, pitch.train, c.pitch_probe);
  return pitch_rmse(reg, FrameSequence{eval_x, ""}, pitch.eval);
}

struct SpeakerResult {
  double accuracy = 0.0;
  std::size_t scored = 0;
  std::optional<double> eer;
  std::size_t trials = 0;
  std::size_t embedding_dim = 0;
  std::size_t speakers = 0;
};

SpeakerResult speaker_scores(const Config& c, Utterances& u, const std::vector<Trial>* trials) {
  if (u.train.empty()) throw DataError("no training utterances");
  SpeakerEmbedder e = fit_speaker_embedder(u.train, c.speaker);
  SpeakerResult r;
  r.embedding_dim = e.embedding_dim();
  r.speakers = e.speakers().size();
  std::size_t right = 0;
  for (const auto& utt : u.test) {
    const auto& known = e.speakers();
    if (std::find(known.begin(), known.end(), utt.speaker) == known.end()) continue;
    ++r.scored;
    right += known[e.classify(utt.frames)] == utt.speaker;
  }
  r.accuracy = r.scored ? 100.0 * static_cast<double>(right) / static_cast<double>(r.scored) : 0.0;
  if (trials) {
    std::map<std::string, std::vector<double>> cache;
    auto embedding = [&](const std::string& id) -> const std::vector<double>& {
      auto it = cache.find(id);
      if (it != cache.end()) return it->second;
      auto u_it = u.by_id.find(id);
      if (u_it == u.by_id.end()) throw DataError("trial refers to unknown utterance '" + id + "'");
      return cache.emplace(id, e.embed(u_it->second.frames)).first->second;
    };
    std::vector<double> scores;
    std::vector<bool> genuine;
    for (const auto& t : *trials) {
      scores.push_back(cosine_similarity(embedding(t.enrol), embedding(t.test)));
      genuine.push_back(t.genuine);
    }
    r.eer = compute_eer(scores, genuine);
    r.trials = trials->size();
  }
  return r;
}

// ---------------------------------------------------------------- output

void write_json(const fs::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_output(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

ojson number_or_null(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return *v > 0 ? "+inf" : "-inf";
  return *v;
}

std::string csv_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

ojson header(const Config& c) {
  ojson j;
  j["command"] = c.command;
  return j;
}

void add_representation(ojson& j, const Config& c, const RvqModel* model) {
  ojson r = c.representation.to_json();
  if (model && c.representation.kind != Representation::Kind::kOriginal) {
    r["stages"] = resolved_stages(c.representation, *model);
    r["codebook_size"] = model->codebook_size();
  }
  j["representation"] = r;
}

// ---------------------------------------------------------------- commands

std::optional<RvqModel> model_for(const Config& c, const Matrix& train) {
  if (c.representation.kind == Representation::Kind::kOriginal) return std::nullopt;
  return obtain_model(c, train);
}

ojson run_completeness(const Config& c) {
  const FrameTask task = load_frame_task(c, true, false, false);
  const auto model = model_for(c, task.features.train);
  const RvqModel* m = model ? &*model : nullptr;
  const Matrix train_x = represent(c.representation, m, task.features.train);
  const Matrix eval_x = task.plan.eval_is_train ? train_x : represent(c.representation, m, task.features.eval);
  double train_mse = 0.0;
  const CompletenessReport r = completeness_row(c.probe, train_x, task.mels->train, eval_x,
                                                task.mels->eval, task.tag, &train_mse);
  ojson j = header(c);
  const ojson body = r.to_json();
  for (const auto& [k, v] : body.items()) j[k] = v;
  j["train_mse_per_frame"] = train_mse;
  add_representation(j, c, m);
  j["split"] = task.plan.to_json(c.split.eval_fraction);
  prepare_output(c.output_dir);
  write_json(c.output_dir / "completeness.json", j);
  return j;
}

ojson run_probe_phone(const Config& c) {
  const FrameTask task = load_frame_task(c, false, true, false);
  const auto model = model_for(c, task.features.train);
  const RvqModel* m = model ? &*model : nullptr;
  const Matrix train_x = represent(c.representation, m, task.features.train);
  const Matrix eval_x = task.plan.eval_is_train ? train_x : represent(c.representation, m, task.features.eval);
  const PhoneResult r = phone_error(c, train_x, eval_x, *task.labels);
  ojson j = header(c);
  j["frame_error_rate"] = r.fer;
  j["scored_frames"] = r.scored;
  j["inventory"] = r.inventory;
  j["probe"] = c.phone_probe.to_json();
  j["dataset"] = task.tag;
  add_representation(j, c, m);
  j["split"] = task.plan.to_json(c.split.eval_fraction);
  prepare_output(c.output_dir);
  write_json(c.output_dir / "probe_phone.json", j);
  return j;
}

ojson run_probe_pitch(const Config& c) {
  const FrameTask task = load_frame_task(c, false, false, true);
  const auto model = model_for(c, task.features.train);
  const RvqModel* m = model ? &*model : nullptr;
  const Matrix train_x = represent(c.representation, m, task.features.train);
  const Matrix eval_x = task.plan.eval_is_train ? train_x : represent(c.representation, m, task.features.eval);
  const double rmse = pitch_error(c, train_x, eval_x, *task.pitch);
  ojson j = header(c);
  j["pitch_rmse_hz"] = rmse;
  j["voiced_frames"] = static_cast<std::size_t>(std::count(task.pitch->eval.voiced.begin(), task.pitch->eval.voiced.end(), true));
  j["probe"] = c.pitch_probe.to_json();
  j["dataset"] = task.tag;
  add_representation(j, c, m);
  j["split"] = task.plan.to_json(c.split.eval_fraction);
  prepare_output(c.output_dir);
  write_json(c.output_dir / "probe_pitch.json", j);
  return j;
}

ojson speaker_config_json(const SpeakerEmbedderConfig& s) {
  ojson j;
  j["hidden"] = s.hidden;
  j["optimizer"] = s.train.optimizer.kind == OptimizerConfig::Kind::kAdam ? "adam" : "sgd";
  j["lr"] = s.train.optimizer.lr;
  j["batch"] = s.train.batch;
  j["epochs"] = s.train.epochs;
  j["seed"] = s.train.seed;
  j["crop_frames"] = s.crop_frames;
  return j;
}

ojson run_probe_speaker(const Config& c) {
  Utterances u = load_utterances(c);
  std::optional<std::vector<Trial>> trials;
  if (c.inputs.trials) trials = load_trials(*c.inputs.trials);
  const SpeakerResult r = speaker_scores(c, u, trials ? &*trials : nullptr);
  ojson j = header(c);
  j["speakers"] = r.speakers;
  j["train_utterances"] = u.train.size();
  j["test_utterances"] = r.scored;
  j["accuracy_percent"] = r.accuracy;
  j["eer_percent"] = number_or_null(r.eer);
  j["trials"] = r.trials;
  j["embedding_dim"] = r.embedding_dim;
  j["speaker"] = speaker_config_json(c.speaker);
  j["representation"] = c.representation.to_json();
  prepare_output(c.output_dir);
  write_json(c.output_dir / "probe_speaker.json", j);
  return j;
}

ojson run_eer(const Config& c) {
  std::vector<double> scores;
  std::vector<bool> genuine;
  const fs::path& path = *c.inputs.scores;
  for (const auto& row : read_csv(path, 2, "score")) {
    scores.push_back(parse_real(row[0], path));
    genuine.push_back(parse_flag(row[1], path));
  }
  const double eer = compute_eer(scores, genuine);
  ojson j = header(c);
  j["eer_percent"] = eer;
  j["trials"] = scores.size();
  j["genuine"] = static_cast<std::size_t>(std::count(genuine.begin(), genuine.end(), true));
  j["impostor"] = static_cast<std::size_t>(std::count(genuine.begin(), genuine.end(), false));
  prepare_output(c.output_dir);
  write_json(c.output_dir / "eer.json", j);
  return j;
}

ojson run_finetune(const Config& c) {
  const FrameTask task = load_frame_task(c, true, false, false);
  const RvqModel frozen = obtain_model(c, task.features.train);
  const FinetuneResult tuned = finetune_rvq(frozen, FrameSequence{task.features.train, task.tag},
                                            task.mels->train, c.finetune);
  auto evaluate = [&](const RvqModel& model) {
    const Matrix train_x = quantized(model, task.features.train, model.stages());
    const Matrix eval_x = task.plan.eval_is_train ? train_x : quantized(model, task.features.eval, model.stages());
    return completeness_row(c.probe, train_x, task.mels->train, eval_x, task.mels->eval, task.tag);
  };
  const CompletenessReport before = evaluate(frozen);
  // Saved codebooks are float32, so evaluate exactly what is written.
  const RvqModel saved = decode_codebooks(encode_codebooks(tuned.model));
  const CompletenessReport after = evaluate(saved);

  ojson j = header(c);
  j["stages"] = frozen.stages();
  j["codebook_size"] = frozen.codebook_size();
  j["frozen"] = before.to_json();
  j["finetuned"] = after.to_json();
  j["relative_mse_reduction"] = (before.mse_per_frame - after.mse_per_frame) / before.mse_per_frame;
  j["finetune"] = c.finetune.to_json();
  j["split"] = task.plan.to_json(c.split.eval_fraction);
  prepare_output(c.output_dir);
  save_model(c.output_dir / "finetuned.rvqc", saved);
  write_json(c.output_dir / "finetune_log.json", tuned.log_json(c.finetune));
  write_json(c.output_dir / "finetune.json", j);
  return j;
}

enum class FailureKind { kUsage, kData, kNumeric };

[[noreturn]] void rethrow_as(FailureKind kind, const std::string& message) {
  switch (kind) {
    case FailureKind::kUsage: throw UsageError(message);
    case FailureKind::kData: throw DataError(message);
    case FailureKind::kNumeric: break;
  }
  throw NumericError(message);
}

ojson run_rd_sweep(const Config& c) {
  const FrameTask task = load_frame_task(c, true, c.inputs.phone_labels.has_value(), c.inputs.pitch.has_value());
  const RvqModel model = obtain_model(c, task.features.train);
  std::vector<std::size_t> stages = c.sweep_stages;
  if (stages.empty()) {
    for (std::size_t l = 1; l <= model.stages(); ++l) stages.push_back(l);
  }
  if (stages.back() > model.stages()) {
    throw DataError("sweep uses " + std::to_string(stages.back()) + " stages, codebooks have " +
                    std::to_string(model.stages()));
  }
  // Speaker utterances are read up front so that a bad file fails the whole run.
  std::optional<std::vector<Utterance>> utt_train, utt_test;
  std::optional<std::vector<Trial>> trials;
  if (c.inputs.utterances) {
    Config original = c;
    original.representation = Representation{};
    Utterances u = load_utterances(original);
    if (u.train.front().frames.dim() != model.dim()) throw DataError("utterance features differ in width from the codebooks");
    utt_train = std::move(u.train);
    utt_test = std::move(u.test);
    trials = load_trials(*c.inputs.trials);
  }

  const UnitSequence train_units = encode(model, FrameSequence{task.features.train, ""});
  const UnitSequence eval_units = task.plan.eval_is_train ? train_units : encode(model, FrameSequence{task.features.eval, ""});
  const std::size_t bits = bits_per_code(model.codebook_size());

  ojson rows = ojson::array();
  std::string csv = "stages,bits_per_frame,mse_per_frame,snr_db,frame_error_rate,pitch_rmse_hz,eer_percent,status\n";
  std::optional<std::pair<FailureKind, std::string>> first_failure;
  std::size_t failures = 0;
  for (std::size_t l : stages) {
    ojson row;
    row["stages"] = l;
    row["bits_per_frame"] = l * bits;
    std::optional<double> mse, snr, fer, rmse, eer;
    std::string status = "ok";
    auto fail = [&](FailureKind kind, const std::exception& e) {
      status = std::string("failed: ") + e.what();
      ++failures;
      if (!first_failure) first_failure = {kind, "stages=" + std::to_string(l) + ": " + e.what()};
    };
    try {
      const Matrix train_x = decode(model, truncate(train_units, l)).values;
      const Matrix eval_x = decode(model, truncate(eval_units, l)).values;
      const CompletenessReport r = completeness_row(c.probe, train_x, task.mels->train, eval_x,
                                                    task.mels->eval, task.tag);
      mse = r.mse_per_frame;
      snr = r.snr_db;
      if (task.labels) fer = phone_error(c, train_x, eval_x, *task.labels).fer;
      if (task.pitch) rmse = pitch_error(c, train_x, eval_x, *task.pitch);
      if (utt_train) {
        Utterances u;
        for (const auto* part : {&*utt_train, &*utt_test}) {
          for (Utterance utt : *part) {
            utt.frames.values = quantized(model, utt.frames.values, l);
            u.by_id.emplace(utt.id, utt);
            (part == &*utt_train ? u.train : u.test).push_back(std::move(utt));
          }
        }
        eer = speaker_scores(c, u, &*trials).eer;
      }
    } catch (const NumericError& e) {
      fail(FailureKind::kNumeric, e);
    } catch (const DataError& e) {
      fail(FailureKind::kData, e);
    } catch (const UsageError& e) {
      fail(FailureKind::kUsage, e);
    }
    row["mse_per_frame"] = number_or_null(mse);
    row["snr_db"] = number_or_null(snr);
    row["frame_error_rate"] = number_or_null(fer);
    row["pitch_rmse_hz"] = number_or_null(rmse);
    row["eer_percent"] = number_or_null(eer);
    row["status"] = status;
    rows.push_back(row);
    csv += std::to_string(l) + "," + std::to_string(l * bits) + "," + csv_cell(mse) + "," + csv_cell(snr) + "," +
           csv_cell(fer) + "," + csv_cell(rmse) + "," + csv_cell(eer) + "," + csv_escape(status) + "\n";
  }

  ojson j = header(c);
  j["codebook_size"] = model.codebook_size();
  j["bits_per_code"] = bits;
  j["dataset"] = task.tag;
  j["probe"] = c.probe.to_json();
  j["split"] = task.plan.to_json(c.split.eval_fraction);
  j["complete"] = failures == 0;
  j["rows"] = rows;
  prepare_output(c.output_dir);
  write_text(c.output_dir / "rd_sweep.csv", csv);
  write_json(c.output_dir / "rd_sweep.json", j);
  if (first_failure) {
    rethrow_as(first_failure->first, "rd-sweep: " + std::to_string(failures) + " of " +
                                         std::to_string(stages.size()) + " rows failed (first at " +
                                         first_failure->second + "); partial results in " +
                                         (c.output_dir / "rd_sweep.json").string());
  }
  return j;
}

ojson run_pca_export(const Config& c) {
  const Frames features = load_frames(*c.inputs.features);
  const auto model = model_for(c, features.values);
  const Matrix x = represent(c.representation, model ? &*model : nullptr, features.values);
  std::vector<std::string> cluster(x.rows()), speaker(x.rows());
  if (c.inputs.frame_info) {
    for_each_frame_row(*c.inputs.frame_info, 3, x.rows(), [&](std::size_t t, const std::vector<std::string>& row) {
      cluster[t] = row[1];
      speaker[t] = row[2];
    });
  }
  const PcaResult pca = pca_project(x, 2);
  std::string csv = "frame_index,pc1,pc2,cluster_id,speaker_id\n";
  for (std::size_t t = 0; t < x.rows(); ++t) {
    csv += std::to_string(t) + "," + format_double(pca.coordinates(t, 0)) + "," +
           format_double(pca.coordinates(t, 1)) + "," + csv_escape(cluster[t]) + "," + csv_escape(speaker[t]) + "\n";
  }
  ojson j = header(c);
  j["frames"] = x.rows();
  j["dim"] = x.cols();
  j["explained_ratio"] = pca.explained_ratio;
  j["dataset"] = features.tag;
  add_representation(j, c, model ? &*model : nullptr);
  prepare_output(c.output_dir);
  write_text(c.output_dir / "pca.csv", csv);
  write_json(c.output_dir / "pca_export.json", j);
  return j;
}

}  // namespace

const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> commands = {"completeness", "probe-phone", "probe-pitch",
                                                    "probe-speaker", "eer", "finetune",
                                                    "rd-sweep", "pca-export"};
  return commands;
}

nlohmann::ordered_json run_experiment(const std::string& command, const nlohmann::json& config,
                                      const std::filesystem::path& base_dir) {
  const Config c = parse_config(command, config, base_dir);
  if (command == "completeness") return run_completeness(c);
  if (command == "probe-phone") return run_probe_phone(c);
  if (command == "probe-pitch") return run_probe_pitch(c);
  if (command == "probe-speaker") return run_probe_speaker(c);
  if (command == "eer") return run_eer(c);
  if (command == "finetune") return run_finetune(c);
  if (command == "rd-sweep") return run_rd_sweep(c);
  return run_pca_export(c);
}

nlohmann::ordered_json run_experiment_file(const std::string& command,
                                           const std::filesystem::path& config_path) {
  const std::string text = read_text(config_path);
  json config;
  try {
    config = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + config_path.string() + " is not valid JSON: " + e.what());
  }
  return run_experiment(command, config, config_path.parent_path());
}

}  // namespace rvqa
