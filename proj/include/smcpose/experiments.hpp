#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smcpose/config.hpp"
#include "smcpose/evaluation.hpp"
#include "smcpose/predictor.hpp"
#include "smcpose/scenes.hpp"
#include "smcpose/tracker.hpp"

namespace smcpose {

struct TrainingRun {
  PredictorModel model;
  std::vector<double> epoch_loss;
  std::size_t num_pairs = 0;
  bool diverged = false;
};

// Training pairs of every stream (each must carry track ids), shuffled with
// `seed` and truncated when more than `max_pairs` (0 keeps all).
std::vector<TrainingPair> collect_training_pairs(std::span<const FrameStream> streams,
                                                 std::size_t history_len, std::size_t max_pairs,
                                                 std::uint64_t seed);

// Trains with config.predictor and config.train at config.history_len() and
// sets the model's reference sigma from the result.
TrainingRun train_predictor(const RunConfig& config, std::span<const TrainingPair> data);

// Labelled detections of `num_scenes` benchmark scenes with seeds derived
// from `seed`, disjoint from the benchmark seeds.
std::vector<FrameStream> training_scenes(const SceneConfig& base, std::size_t num_scenes,
                                         std::uint64_t seed);

TrainingRun train_on_scenes(const RunConfig& config, std::size_t num_scenes,
                                    std::uint64_t seed, std::size_t max_pairs = 0);

// Benchmark scene `index`: seed base.seed + index, people_min..people_max
// people cycling with the index.
SceneConfig benchmark_scene(const SceneConfig& base, std::size_t index,
                            std::size_t people_min = 4, std::size_t people_max = 8);

struct AblationVariant {
  std::string name;
  std::size_t history_len = 10;
  std::size_t num_particles = 300;
  bool epistemic = true;
  bool aleatoric = true;
  double fixed_sigma = 0.0;  // see ProposalOptions
  double alpha = 0.45;
};

// One "both" row per length, then epistemic-only, aleatoric-only and none
// at `main_len`, then the single-hypothesis baseline at `main_len`.
std::vector<AblationVariant> ablation_variants(const std::vector<std::size_t>& lengths,
                                               std::size_t main_len, double alpha);

TrackerConfig apply_variant(TrackerConfig base, const AblationVariant& v);

struct SceneResult {
  std::uint64_t seed = 0;
  EvalReport report;
  RunStats stats;
};

SceneResult run_scene(const SceneConfig& scene, const PredictorModel& model,
                      const TrackerConfig& tracker, const EvalConfig& eval);

// Runs every scene index in [0, count) with up to `jobs` worker threads.
std::vector<SceneResult> run_scenes(const SceneConfig& base, std::size_t count,
                                    const PredictorModel& model, const TrackerConfig& tracker,
                                    const EvalConfig& eval, std::size_t jobs = 1);

// Paired comparison of per-scene counts: a win is a[i] < b[i]. Ties are
// dropped; p is the exact two-sided sign test under Binomial(wins + losses, 1/2).
struct SignTest {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
  double p_value = 1.0;
};

SignTest sign_test(std::span<const double> a, std::span<const double> b);

}  // namespace smcpose
