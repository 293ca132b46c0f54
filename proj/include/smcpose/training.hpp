#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "smcpose/frame_stream.hpp"
#include "smcpose/predictor.hpp"

namespace smcpose {

// A history and the residual (pixels) from its last visible coordinate to
// the next observed position.
struct TrainingPair {
  KeypointHistory history;
  double target_dx = 0.0;
  double target_dy = 0.0;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 30;
  double l2_lambda = 1e-4;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  // Adam constants.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

template <typename T>
using Gradients = std::vector<std::vector<T>>;  // one buffer per tensor slot

// Loss over a batch, in units of the pose scale:
//   sum_i (mu_i - mu*_i)^T Sigma_i^-1 (mu_i - mu*_i) + log|Sigma_i|  +  lambda ||theta||^2
// with log|Sigma_i| taken directly from the log-variance outputs. `masks`,
// when non-empty, holds one dropout mask per example.
template <typename T>
double nll_loss(const BasicPredictor<T>& model, std::span<const TrainingPair> batch, double lambda,
                std::span<const DropoutMask<T>> masks = {});

// Same loss, also accumulating d(loss)/d(theta) into `grads` (resized and
// zeroed by the call).
template <typename T>
double nll_loss_and_gradient(const BasicPredictor<T>& model, std::span<const TrainingPair> batch,
                             double lambda, std::span<const DropoutMask<T>> masks,
                             Gradients<T>& grads);

struct TrainResult {
  PredictorModel model;
  std::vector<double> epoch_loss;  // mean per-example data term for each epoch
  bool diverged = false;           // model is the last finite checkpoint when set
};

// Mini-batch Adam on nll_loss with dropout active. The model is initialized
// from config.seed; the log-variance bias starts at the log of the mean
// squared normalized target so early steps are not spent moving it.
TrainResult train(std::span<const TrainingPair> dataset, const PredictorConfig& model_config,
                  const TrainConfig& config);

// Continues training an existing model.
TrainResult train(std::span<const TrainingPair> dataset, PredictorModel model,
                  const TrainConfig& config);

// Median predicted sigma in units of pose scale, dropout off.
double median_normalized_sigma(const PredictorModel& model, std::span<const TrainingPair> data,
                               std::size_t max_samples = 2000);

// Every (track, keypoint, frame) with a visible position preceded by a full
// window of L frames inside the stream. Frames where the track is absent or
// the keypoint is invisible are zero-filled; windows without any visible
// step are skipped.
std::vector<TrainingPair> build_training_set(const FrameStream& frames, std::size_t history_len);

}  // namespace smcpose
