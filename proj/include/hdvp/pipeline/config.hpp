#pragma once

// Single-document pipeline configuration: per-stage sections plus a global
// seed, validated against the documented defaults before any stage runs.

#include <cmath>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hdvp/dataset/synth.hpp"
#include "hdvp/eval/probe.hpp"
#include "hdvp/predict/predictor.hpp"
#include "hdvp/recon/config.hpp"

namespace hdvp::pipeline {

struct SynthSection {
  dataset::SynthesisSpec spec;
  int train_videos = 50;
  int test_videos = 100;
  std::string glyph_dir;       ///< empty: built-in digit font
  std::string background_dir;  ///< used when background_mode is corpus-image
};

struct EvalSection {
  std::string probe_task = "digit_sum";
  int probe_trials = 5;
  int probe_epochs = 60;
  int frame_probe_epochs = 10;
  int interp_steps = 8;
  int predict_examples = 4;
  bool memory = true;
  int memory_batch = 8;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  SynthSection synth;
  recon::ReconConfig recon;
  predict::PredictorConfig predict;
  EvalSection eval;

  /// Test-set videos use a seed disjoint from the training set's.
  std::uint64_t test_seed() const { return seed + 1000003; }
};

inline nlohmann::json section_json(const SynthSection& s) {
  nlohmann::json j = s.spec;
  j.erase("rng_seed");
  j["train_videos"] = s.train_videos;
  j["test_videos"] = s.test_videos;
  j["glyph_dir"] = s.glyph_dir;
  j["background_dir"] = s.background_dir;
  return j;
}

inline nlohmann::json section_json(const EvalSection& e) {
  return {{"probe_task", e.probe_task},
          {"probe_trials", e.probe_trials},
          {"probe_epochs", e.probe_epochs},
          {"frame_probe_epochs", e.frame_probe_epochs},
          {"interp_steps", e.interp_steps},
          {"predict_examples", e.predict_examples},
          {"memory", e.memory},
          {"memory_batch", e.memory_batch}};
}

inline nlohmann::json to_json_doc(const PipelineConfig& c) {
  nlohmann::json r = c.recon;
  r.erase("seed");
  nlohmann::json p = c.predict;
  p.erase("seed");
  return {{"seed", c.seed}, {"synth", section_json(c.synth)}, {"recon", r}, {"predict", p}, {"eval", section_json(c.eval)}};
}

namespace detail {

inline const char* type_name(const nlohmann::json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

inline bool compatible(const nlohmann::json& want, const nlohmann::json& got) {
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_number_integer()) return got.is_number_integer() || (got.is_number_float() && got.get<double>() == std::floor(got.get<double>()));
  if (want.is_number()) return got.is_number();
  if (want.is_string()) return got.is_string();
  if (want.is_array()) return got.is_array();
  if (want.is_object()) return got.is_object();
  return true;
}

/// Every key in `doc` must exist in `ref` with a compatible type.
inline void check_against(const nlohmann::json& ref, const nlohmann::json& doc, const std::string& path) {
  if (!compatible(ref, doc))
    fail(ErrorKind::kConfig, (path.empty() ? "<root>" : path) + ": expected " + type_name(ref) + ", got " + type_name(doc));
  if (ref.is_object()) {
    for (const auto& [k, v] : doc.items()) {
      const std::string sub = path.empty() ? k : path + "." + k;
      if (!ref.contains(k)) {
        if (k == "seed" || k == "rng_seed") fail(ErrorKind::kConfig, sub + ": per-stage seeds come from the global \"seed\"");
        fail(ErrorKind::kConfig, sub + ": unknown field");
      }
      check_against(ref.at(k), v, sub);
    }
  } else if (ref.is_array() && !ref.empty()) {
    if (doc.size() != ref.size())
      fail(ErrorKind::kConfig, path + ": expected " + std::to_string(ref.size()) + " elements, got " + std::to_string(doc.size()));
    for (std::size_t i = 0; i < doc.size(); ++i) check_against(ref[i], doc[i], path + "[" + std::to_string(i) + "]");
  }
}

/// Normalise integer-valued floats so typed parsing accepts them.
inline void integerize(const nlohmann::json& ref, nlohmann::json& doc) {
  if (ref.is_number_integer() && doc.is_number_float()) doc = static_cast<std::int64_t>(doc.get<double>());
  if (ref.is_object() && doc.is_object())
    for (auto& [k, v] : doc.items())
      if (ref.contains(k)) integerize(ref.at(k), v);
  if (ref.is_array() && doc.is_array())
    for (std::size_t i = 0; i < std::min(ref.size(), doc.size()); ++i) integerize(ref[i], doc[i]);
}

}  // namespace detail

/// Apply "a.b.c=value" overrides to a document; values parse as JSON when
/// possible and are taken as strings otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::kConfig, "--set expects KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), ErrorKind::kConfig, "--set: malformed key '" + key + "'");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

/// Fill defaults, check types and ranges, and check cross-section consistency.
inline PipelineConfig validate_config(const nlohmann::json& document) {
  const PipelineConfig defaults;
  const auto ref = to_json_doc(defaults);
  const nlohmann::json doc = document.is_null() ? nlohmann::json::object() : document;
  detail::check_against(ref, doc, "");
  nlohmann::json merged = ref;
  merged.merge_patch(doc);
  detail::integerize(ref, merged);

  PipelineConfig c;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    auto s = merged.at("synth");
    s["rng_seed"] = c.seed;
    c.synth.spec = s.get<dataset::SynthesisSpec>();
    c.synth.train_videos = s.at("train_videos").get<int>();
    c.synth.test_videos = s.at("test_videos").get<int>();
    c.synth.glyph_dir = s.at("glyph_dir").get<std::string>();
    c.synth.background_dir = s.at("background_dir").get<std::string>();
    c.recon = merged.at("recon").get<recon::ReconConfig>();
    c.recon.seed = c.seed;
    c.predict = merged.at("predict").get<predict::PredictorConfig>();
    c.predict.seed = c.seed;
    const auto& e = merged.at("eval");
    c.eval.probe_task = e.at("probe_task").get<std::string>();
    c.eval.probe_trials = e.at("probe_trials").get<int>();
    c.eval.probe_epochs = e.at("probe_epochs").get<int>();
    c.eval.frame_probe_epochs = e.at("frame_probe_epochs").get<int>();
    c.eval.interp_steps = e.at("interp_steps").get<int>();
    c.eval.predict_examples = e.at("predict_examples").get<int>();
    c.eval.memory = e.at("memory").get<bool>();
    c.eval.memory_batch = e.at("memory_batch").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kConfig, std::string("config: ") + ex.what());
  } catch (const Error& ex) {
    fail(ErrorKind::kConfig, std::string("config: ") + ex.what());
  }

  try {
    c.synth.spec.validate();
  } catch (const Error& ex) {
    fail(ErrorKind::kConfig, std::string("synth: ") + ex.what());
  }
  c.recon.validate();
  c.predict.validate();

  const auto& sp = c.synth.spec;
  auto conflict = [](const std::string& a, long va, const std::string& b, long vb, const std::string& why) {
    fail(ErrorKind::kConfig, a + " = " + std::to_string(va) + " conflicts with " + b + " = " + std::to_string(vb) + ": " + why);
  };
  if (sp.n_max != c.recon.max_objects)
    conflict("synth.n_objects_range[1]", sp.n_max, "recon.max_objects", c.recon.max_objects, "the slot count must equal the maximum object count");
  if (sp.frame_height != c.recon.height)
    conflict("synth.frame_height", sp.frame_height, "recon.height", c.recon.height, "frame sizes must agree");
  if (sp.frame_width != c.recon.width) conflict("synth.frame_width", sp.frame_width, "recon.width", c.recon.width, "frame sizes must agree");
  if (sp.video_length < c.predict.t_past + c.predict.t_fut)
    conflict("synth.video_length", sp.video_length, "predict.t_past + predict.t_fut", c.predict.t_past + c.predict.t_fut,
             "videos must cover the past and future windows");
  if (c.synth.train_videos < 2) fail(ErrorKind::kConfig, "synth.train_videos: must be >= 2 (training pairs need a second video)");
  if (c.synth.test_videos < 2) fail(ErrorKind::kConfig, "synth.test_videos: must be >= 2");
  if (sp.background_mode == dataset::BackgroundMode::kCorpusImage && c.synth.background_dir.empty())
    fail(ErrorKind::kConfig, "synth.background_dir: required when synth.background_mode is corpus-image");
  try {
    eval::ProbeTask::parse(c.eval.probe_task);
  } catch (const Error& ex) {
    fail(ErrorKind::kConfig, std::string("eval.probe_task: ") + ex.what());
  }
  if (c.eval.probe_trials < 1) fail(ErrorKind::kConfig, "eval.probe_trials: must be >= 1");
  if (c.eval.probe_epochs < 1) fail(ErrorKind::kConfig, "eval.probe_epochs: must be >= 1");
  if (c.eval.frame_probe_epochs < 1) fail(ErrorKind::kConfig, "eval.frame_probe_epochs: must be >= 1");
  if (c.eval.interp_steps < 2) fail(ErrorKind::kConfig, "eval.interp_steps: must be >= 2");
  if (c.eval.predict_examples < 0) fail(ErrorKind::kConfig, "eval.predict_examples: must be >= 0");
  if (c.eval.memory_batch < 1) fail(ErrorKind::kConfig, "eval.memory_batch: must be >= 1");
  return c;
}

}  // namespace hdvp::pipeline
