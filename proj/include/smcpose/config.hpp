#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "smcpose/evaluation.hpp"
#include "smcpose/predictor.hpp"
#include "smcpose/scenes.hpp"
#include "smcpose/tracker.hpp"
#include "smcpose/training.hpp"

namespace smcpose {

// Every tunable of a run. The JSON form has one top-level "history_len"
// shared by predictor and tracker, and the sections "predictor", "train",
// "tracker", "eval" and "scene".
struct RunConfig {
  PredictorConfig predictor;
  TrainConfig train;
  TrackerConfig tracker;
  EvalConfig eval;
  SceneConfig scene;

  std::size_t history_len() const { return tracker.smc.history_len; }
  void set_history_len(std::size_t len);

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  // "section.key=value" or "history_len=value"; value is parsed as JSON and
  // falls back to a plain string.
  void apply_override(const std::string& assignment);
};

}  // namespace smcpose
