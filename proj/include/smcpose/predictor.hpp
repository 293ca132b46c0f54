#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "smcpose/geometry.hpp"
#include "smcpose/random.hpp"

namespace smcpose {

struct HistoryStep {
  double dx = 0.0;
  double dy = 0.0;
  bool visible = false;

  friend bool operator==(const HistoryStep&, const HistoryStep&) = default;
};

// One keypoint's last L positions, stored as offsets from the last visible
// coordinate in the window. Invisible steps carry (0, 0, false).
struct KeypointHistory {
  std::vector<HistoryStep> steps;  // oldest first
  double last_x = 0.0;
  double last_y = 0.0;
  double scale = 1.0;

  bool any_visible() const;

  // Residual-encodes keypoint `keypoint` of a pose queue (oldest first).
  // Returns nullopt when the keypoint is never visible in the queue. The
  // scale is taken from the pose holding the last visible coordinate.
  static std::optional<KeypointHistory> from_poses(std::span<const Pose> queue,
                                                   std::size_t keypoint);

  friend bool operator==(const KeypointHistory&, const KeypointHistory&) = default;
};

// Diagonal Gaussian over the residual from last_visible, in pixels.
struct GaussianPrediction {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
};

struct PredictorConfig {
  int history_len = 10;
  int hidden = 64;
  int fc_hidden = 40;
  double dropout_rate = 0.3;
  double leak_slope = 0.2;
  double sigma_floor = 1e-3;  // pixels
  // Median predicted sigma (in units of pose scale) over the training set;
  // used as the fixed sigma when heteroscedastic output is disabled.
  double reference_sigma = 0.0;

  void validate() const;
  friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

inline constexpr int kInputFeatures = 3;
inline constexpr int kOutputs = 4;

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  std::size_t size() const { return data.size(); }
};

// Per-keypoint recurrent predictor: LSTM over (dx/s, dy/s, visible) inputs,
// one leaky-ReLU hidden layer with dropout, and a 4-output head giving the
// mean residual and per-axis log-variance in units of the pose scale.
template <typename T>
class BasicPredictor {
 public:
  enum Slot : std::size_t {
    kInputWeights,      // 4H x 3, gate rows ordered input, forget, cell, output
    kRecurrentWeights,  // 4H x H
    kGateBias,          // 4H
    kHiddenWeights,     // F x H
    kHiddenBias,        // F
    kOutputWeights,     // 4 x F
    kOutputBias,        // 4: mean x, mean y, log-var x, log-var y
    kSlotCount
  };

  // All tensors zero.
  explicit BasicPredictor(PredictorConfig config = {});

  // Forget-gate bias 1, weights uniform in +-1/sqrt(fan_in), other biases 0.
  static BasicPredictor initialized(PredictorConfig config, std::uint64_t seed);

  const PredictorConfig& config() const { return config_; }
  PredictorConfig& mutable_config() { return config_; }

  std::vector<ParamTensor<T>>& tensors() { return tensors_; }
  const std::vector<ParamTensor<T>>& tensors() const { return tensors_; }
  ParamTensor<T>& tensor(Slot s) { return tensors_[s]; }
  const ParamTensor<T>& tensor(Slot s) const { return tensors_[s]; }

  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename U>
  BasicPredictor<U> cast() const {
    BasicPredictor<U> out(config_);
    for (std::size_t s = 0; s < tensors_.size(); ++s) {
      auto& dst = out.tensors()[s].data;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<U>(tensors_[s].data[i]);
    }
    return out;
  }

 private:
  PredictorConfig config_;
  std::vector<ParamTensor<T>> tensors_;
};

using PredictorModel = BasicPredictor<float>;

// Per-unit multipliers for the fully-connected hidden layer: 0 for dropped
// units, 1/(1-p) for kept ones.
template <typename T>
struct DropoutMask {
  std::vector<T> scale;

  static DropoutMask draw(const BasicPredictor<T>& model, Rng& rng);
};

// FC pre-activations for a batch of histories after running the recurrent
// cell. Column n corresponds to histories[n].
template <typename T>
struct EncodedBatch {
  int columns = 0;
  std::vector<T> hidden_preact;  // F x columns
  std::vector<double> scale;
  std::vector<double> last_x;
  std::vector<double> last_y;
};

template <typename T>
EncodedBatch<T> encode(const BasicPredictor<T>& model,
                       std::span<const KeypointHistory* const> histories);

// Applies the head to one encoded column. `mask` may be null (no dropout).
template <typename T>
GaussianPrediction head(const BasicPredictor<T>& model, const EncodedBatch<T>& batch,
                        int column, const std::type_identity_t<DropoutMask<T>>* mask);

template <typename T>
GaussianPrediction forward(const BasicPredictor<T>& model, const KeypointHistory& history,
                           const std::type_identity_t<DropoutMask<T>>* mask);

// With mc_dropout a fresh mask is drawn from rng (required in that case).
template <typename T>
GaussianPrediction forward(const BasicPredictor<T>& model, const KeypointHistory& history,
                           bool mc_dropout, Rng* rng);

// Independent Gaussian draw per axis; returns the residual (dx, dy).
std::pair<double, double> sample(const GaussianPrediction& pred, Rng& rng,
                                 double sigma_floor = 1e-3);

extern template class BasicPredictor<float>;
extern template class BasicPredictor<double>;

}  // namespace smcpose
