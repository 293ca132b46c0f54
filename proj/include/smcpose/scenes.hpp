#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "smcpose/frame_stream.hpp"
#include "smcpose/geometry.hpp"
#include "smcpose/training.hpp"

namespace smcpose {

struct SceneConfig {
  std::size_t num_people = 6;
  std::size_t num_frames = 100;
  std::size_t num_keypoints = 17;
  int image_width = 640;
  int image_height = 480;

  // Root motion: speed is resampled into this range whenever it leaves it.
  double speed_min = 0.5;  // pixels/frame
  double speed_max = 7.0;
  double heading_noise = 0.2;   // radians/frame, random-walk std
  double speed_noise = 0.4;     // pixels/frame, random-walk std
  double scale_min = 50.0;      // pixels, sqrt of box area
  double scale_max = 90.0;
  double sway = 0.06;           // oscillation amplitude, fraction of pose height
  double sway_freq_min = 0.15;  // radians/frame
  double sway_freq_max = 0.35;

  // Detector jitter sigma = jitter_base + jitter_per_speed * keypoint speed.
  double jitter_base = 0.5;       // pixels
  double jitter_per_speed = 0.3;  // pixels per (pixel/frame)

  double occlusion_prob = 0.01;  // per person per frame
  std::size_t occlusion_min = 5;
  std::size_t occlusion_max = 15;
  double keypoint_hide_prob = 0.0;  // per keypoint per frame, both streams
  // When two roots come within one body scale, the smaller (farther) person
  // is hidden for an occlusion-length window with this probability.
  double crossing_occlusion_prob = 0.7;

  double camera_pan = 0.0;  // pixels/frame amplitude of a sinusoidal pan
  double pan_period = 120.0;

  double miss_prob = 0.0;     // per visible pose per frame
  double false_positives = 0.0;  // Poisson mean per frame

  std::uint64_t seed = 0;
  bool require_crossing = true;  // honored when num_people >= 2 and num_frames >= 100
  std::size_t max_attempts = 1000;

  void validate() const;
  nlohmann::json to_json() const;
  // Keys absent from `j` keep the value in `base`; unknown keys are rejected.
  static SceneConfig from_json(const nlohmann::json& j, SceneConfig base);
};

struct Scene {
  FrameStream detections;           // no track ids
  FrameStream ground_truth;         // track ids
  FrameStream labelled_detections;  // detections of real people with their ids
  std::size_t crossings = 0;        // person pairs whose roots came within one body scale
  std::size_t attempts = 1;
};

Scene simulate(const SceneConfig& config);

// Pose template for K keypoints in units of pose scale, root at the origin.
std::vector<std::pair<double, double>> skeleton_template(std::size_t num_keypoints);

// Single-keypoint constant-velocity tracks: a noise-free history of L
// positions and a target displaced from the true next position by Gaussian
// noise with sigma = noise_base + noise_per_speed * speed (pixels). The
// optimal predictive sigma is therefore known per pair and written to
// `true_sigma` when given.
struct MotionSampleConfig {
  std::size_t count = 50000;
  std::size_t history_len = 10;
  double scale = 60.0;  // pixels
  double speed_min = 0.0;
  double speed_max = 6.0;
  double noise_base = 1.0;
  double noise_per_speed = 0.0;
};

std::vector<TrainingPair> motion_samples(const MotionSampleConfig& config, std::uint64_t seed,
                                         std::vector<double>* true_sigma = nullptr);

}  // namespace smcpose
