#include "smcpose/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lstm.hpp"
#include "smcpose/error.hpp"

namespace smcpose {

bool KeypointHistory::any_visible() const {
  return std::any_of(steps.begin(), steps.end(), [](const HistoryStep& s) { return s.visible; });
}

std::optional<KeypointHistory> KeypointHistory::from_poses(std::span<const Pose> queue,
                                                           std::size_t keypoint) {
  std::ptrdiff_t last = -1;
  for (std::ptrdiff_t t = static_cast<std::ptrdiff_t>(queue.size()) - 1; t >= 0; --t) {
    if (queue[t].keypoints[keypoint].visible) {
      last = t;
      break;
    }
  }
  if (last < 0) return std::nullopt;

  KeypointHistory h;
  const Keypoint& anchor = queue[last].keypoints[keypoint];
  h.last_x = anchor.x;
  h.last_y = anchor.y;
  h.scale = queue[last].scale > 0.0 ? queue[last].scale : 1.0;
  h.steps.resize(queue.size());
  for (std::size_t t = 0; t < queue.size(); ++t) {
    const Keypoint& k = queue[t].keypoints[keypoint];
    if (k.visible) h.steps[t] = HistoryStep{k.x - h.last_x, k.y - h.last_y, true};
  }
  return h;
}

void PredictorConfig::validate() const {
  if (history_len < 1) throw InvalidArgument("history_len must be >= 1");
  if (hidden < 1 || fc_hidden < 1) throw InvalidArgument("layer sizes must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InvalidArgument("dropout_rate must be in [0, 1)");
  }
  if (!(leak_slope > 0.0)) throw InvalidArgument("leak_slope must be positive");
  if (!(sigma_floor > 0.0)) throw InvalidArgument("sigma_floor must be positive");
}

template <typename T>
BasicPredictor<T>::BasicPredictor(PredictorConfig config) : config_(config) {
  config_.validate();
  const int h = config_.hidden;
  const int f = config_.fc_hidden;
  auto make = [](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return ParamTensor<T>{std::move(name), std::move(shape), std::vector<T>(n, T(0))};
  };
  tensors_.reserve(kSlotCount);
  tensors_.push_back(make("lstm.input_weights", {4 * h, kInputFeatures}));
  tensors_.push_back(make("lstm.recurrent_weights", {4 * h, h}));
  tensors_.push_back(make("lstm.bias", {4 * h}));
  tensors_.push_back(make("fc.hidden_weights", {f, h}));
  tensors_.push_back(make("fc.hidden_bias", {f}));
  tensors_.push_back(make("fc.output_weights", {kOutputs, f}));
  tensors_.push_back(make("fc.output_bias", {kOutputs}));
}

template <typename T>
BasicPredictor<T> BasicPredictor<T>::initialized(PredictorConfig config, std::uint64_t seed) {
  BasicPredictor model(config);
  Rng rng = make_rng(seed, 0x1417);
  auto fill = [&rng](ParamTensor<T>& t, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : t.data) v = static_cast<T>(dist(rng));
  };
  const int h = model.config_.hidden;
  const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(kInputFeatures + h));
  fill(model.tensor(kInputWeights), lstm_bound);
  fill(model.tensor(kRecurrentWeights), lstm_bound);
  fill(model.tensor(kHiddenWeights), 1.0 / std::sqrt(static_cast<double>(h)));
  fill(model.tensor(kOutputWeights), 1.0 / std::sqrt(static_cast<double>(model.config_.fc_hidden)));
  auto& bias = model.tensor(kGateBias).data;
  std::fill(bias.begin() + h, bias.begin() + 2 * h, T(1));
  return model;
}

template <typename T>
std::size_t BasicPredictor<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
bool BasicPredictor<T>::all_finite() const {
  for (const auto& t : tensors_) {
    for (T v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
DropoutMask<T> DropoutMask<T>::draw(const BasicPredictor<T>& model, Rng& rng) {
  const double p = model.config().dropout_rate;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  DropoutMask mask;
  mask.scale.resize(static_cast<std::size_t>(model.config().fc_hidden));
  for (T& s : mask.scale) s = uniform01(rng) < p ? T(0) : keep_scale;
  return mask;
}

template <typename T>
EncodedBatch<T> encode(const BasicPredictor<T>& model,
                       std::span<const KeypointHistory* const> histories) {
  using M = BasicPredictor<T>;
  const PredictorConfig& cfg = model.config();
  const int n = static_cast<int>(histories.size());
  const int hidden = cfg.hidden;
  const int steps = cfg.history_len;

  EncodedBatch<T> out;
  out.columns = n;
  out.scale.resize(n);
  out.last_x.resize(n);
  out.last_y.resize(n);
  for (int col = 0; col < n; ++col) {
    const KeypointHistory& h = *histories[col];
    if (static_cast<int>(h.steps.size()) != steps) {
      throw InvalidArgument("history length " + std::to_string(h.steps.size()) +
                            " does not match model history_len " + std::to_string(steps));
    }
    if (!(h.scale > 0.0)) throw InvalidArgument("history scale must be positive");
    out.scale[col] = h.scale;
    out.last_x[col] = h.last_x;
    out.last_y[col] = h.last_y;
  }
  if (n == 0) return out;

  // Columns are independent, so they are processed in cache-sized chunks;
  // per-column arithmetic does not depend on the chunking.
  constexpr int kChunk = 128;
  const int fc = cfg.fc_hidden;
  out.hidden_preact.resize(static_cast<std::size_t>(fc) * n);
  const T* b1 = model.tensor(M::kHiddenBias).data.data();
  const std::size_t max_block = static_cast<std::size_t>(hidden) * std::min(n, kChunk);
  std::vector<T> gates(4 * max_block);
  std::vector<T> cell(max_block);
  std::vector<T> tanh_cell(max_block);
  std::vector<T> h_a(max_block);
  std::vector<T> h_b(max_block);
  std::vector<T> preact(static_cast<std::size_t>(fc) * std::min(n, kChunk));
  for (int begin = 0; begin < n; begin += kChunk) {
    const int m = std::min(kChunk, n - begin);
    const std::vector<T> x = detail::encode_inputs<T>(histories.subspan(begin, m), steps);
    std::fill(cell.begin(), cell.end(), T(0));
    T* h_prev = nullptr;
    T* h_cur = h_a.data();
    for (int t = 0; t < steps; ++t) {
      detail::lstm_step(model, m, x.data() + static_cast<std::size_t>(t) * kInputFeatures * m,
                        h_prev, gates.data(), cell.data(), tanh_cell.data(), h_cur);
      h_prev = h_cur;
      h_cur = (h_cur == h_a.data()) ? h_b.data() : h_a.data();
    }
    for (int f = 0; f < fc; ++f) std::fill(preact.begin() + f * m, preact.begin() + (f + 1) * m, b1[f]);
    kernels::gemm_nn(fc, m, hidden, model.tensor(M::kHiddenWeights).data.data(), h_prev,
                     preact.data(), true);
    for (int f = 0; f < fc; ++f) {
      std::copy(preact.begin() + f * m, preact.begin() + (f + 1) * m,
                out.hidden_preact.begin() + static_cast<std::ptrdiff_t>(f) * n + begin);
    }
  }
  return out;
}

template <typename T>
GaussianPrediction head(const BasicPredictor<T>& model, const EncodedBatch<T>& batch, int column,
                        const std::type_identity_t<DropoutMask<T>>* mask) {
  T raw[kOutputs];
  detail::head_column(model, batch.hidden_preact.data() + column, batch.columns,
                      mask != nullptr ? mask->scale.data() : nullptr, raw);
  for (T v : raw) {
    if (!std::isfinite(v)) throw DivergenceError("predictor produced non-finite output");
  }
  const double s = batch.scale[column];
  const double floor = model.config().sigma_floor;
  GaussianPrediction p;
  p.mean_x = static_cast<double>(raw[0]) * s;
  p.mean_y = static_cast<double>(raw[1]) * s;
  p.sigma_x = std::max(std::exp(0.5 * static_cast<double>(raw[2])) * s, floor);
  p.sigma_y = std::max(std::exp(0.5 * static_cast<double>(raw[3])) * s, floor);
  if (!std::isfinite(p.sigma_x) || !std::isfinite(p.sigma_y)) {
    throw DivergenceError("predictor produced non-finite sigma");
  }
  return p;
}

template <typename T>
GaussianPrediction forward(const BasicPredictor<T>& model, const KeypointHistory& history,
                           const std::type_identity_t<DropoutMask<T>>* mask) {
  const KeypointHistory* ptr = &history;
  const EncodedBatch<T> batch = encode(model, std::span<const KeypointHistory* const>(&ptr, 1));
  return head(model, batch, 0, mask);
}

template <typename T>
GaussianPrediction forward(const BasicPredictor<T>& model, const KeypointHistory& history,
                           bool mc_dropout, Rng* rng) {
  if (!mc_dropout) return forward(model, history, static_cast<const DropoutMask<T>*>(nullptr));
  if (rng == nullptr) throw InvalidArgument("forward: mc_dropout requires a random source");
  const DropoutMask<T> mask = DropoutMask<T>::draw(model, *rng);
  return forward(model, history, &mask);
}

std::pair<double, double> sample(const GaussianPrediction& pred, Rng& rng, double sigma_floor) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double zx = normal(rng);
  const double zy = normal(rng);
  return {pred.mean_x + std::max(pred.sigma_x, sigma_floor) * zx,
          pred.mean_y + std::max(pred.sigma_y, sigma_floor) * zy};
}

template class BasicPredictor<float>;
template class BasicPredictor<double>;
template struct DropoutMask<float>;
template struct DropoutMask<double>;
template EncodedBatch<float> encode(const BasicPredictor<float>&,
                                    std::span<const KeypointHistory* const>);
template EncodedBatch<double> encode(const BasicPredictor<double>&,
                                     std::span<const KeypointHistory* const>);
template GaussianPrediction head(const BasicPredictor<float>&, const EncodedBatch<float>&, int,
                                 const DropoutMask<float>*);
template GaussianPrediction head(const BasicPredictor<double>&, const EncodedBatch<double>&, int,
                                 const DropoutMask<double>*);
template GaussianPrediction forward(const BasicPredictor<float>&, const KeypointHistory&,
                                    const DropoutMask<float>*);
template GaussianPrediction forward(const BasicPredictor<double>&, const KeypointHistory&,
                                    const DropoutMask<double>*);
template GaussianPrediction forward(const BasicPredictor<float>&, const KeypointHistory&, bool,
                                    Rng*);
template GaussianPrediction forward(const BasicPredictor<double>&, const KeypointHistory&, bool,
                                    Rng*);

}  // namespace smcpose
