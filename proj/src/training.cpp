#include "smcpose/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "lstm.hpp"
#include "smcpose/error.hpp"

namespace smcpose {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(l2_lambda >= 0.0)) throw InvalidArgument("l2_lambda must be non-negative");
}

namespace {

template <typename T>
double penalty(const BasicPredictor<T>& model) {
  double sum = 0.0;
  for (const auto& t : model.tensors()) {
    for (T v : t.data) sum += static_cast<double>(v) * static_cast<double>(v);
  }
  return sum;
}

// Forward pass with a full tape, loss, and (optionally) backpropagation
// through time.
template <typename T>
double loss_impl(const BasicPredictor<T>& model, std::span<const TrainingPair> batch,
                 double lambda, std::span<const DropoutMask<T>> masks, Gradients<T>* grads) {
  using M = BasicPredictor<T>;
  if (batch.empty()) throw InvalidArgument("nll_loss: empty batch");
  if (!masks.empty() && masks.size() != batch.size()) {
    throw InvalidArgument("nll_loss: one dropout mask per example required");
  }
  const PredictorConfig& cfg = model.config();
  const int n = static_cast<int>(batch.size());
  const int hidden = cfg.hidden;
  const int fc = cfg.fc_hidden;
  const int steps = cfg.history_len;
  const std::size_t block = static_cast<std::size_t>(hidden) * n;

  std::vector<const KeypointHistory*> histories(n);
  for (int col = 0; col < n; ++col) {
    const KeypointHistory& h = batch[col].history;
    if (static_cast<int>(h.steps.size()) != steps) {
      throw InvalidArgument("nll_loss: history length " + std::to_string(h.steps.size()) +
                            " does not match model history_len " + std::to_string(steps));
    }
    if (!(h.scale > 0.0)) throw InvalidArgument("nll_loss: history scale must be positive");
    histories[col] = &h;
  }
  const std::vector<T> x = detail::encode_inputs<T>(histories, steps);
  auto x_at = [&](int t) { return x.data() + static_cast<std::size_t>(t) * kInputFeatures * n; };

  std::vector<T> gates(static_cast<std::size_t>(steps) * 4 * block);
  std::vector<T> cells(static_cast<std::size_t>(steps) * block, T(0));
  std::vector<T> tanh_cells(static_cast<std::size_t>(steps) * block);
  std::vector<T> hs(static_cast<std::size_t>(steps) * block);
  for (int t = 0; t < steps; ++t) {
    T* cell = cells.data() + t * block;
    if (t > 0) std::copy_n(cells.data() + (t - 1) * block, block, cell);
    detail::lstm_step(model, n, x_at(t), t > 0 ? hs.data() + (t - 1) * block : nullptr,
                      gates.data() + t * 4 * block, cell, tanh_cells.data() + t * block,
                      hs.data() + t * block);
  }
  const T* h_last = hs.data() + (steps - 1) * block;

  // Fully-connected hidden layer with dropout.
  std::vector<T> preact(static_cast<std::size_t>(fc) * n);
  const T* b1 = model.tensor(M::kHiddenBias).data.data();
  for (int f = 0; f < fc; ++f) std::fill_n(preact.data() + f * n, n, b1[f]);
  kernels::gemm_nn(fc, n, hidden, model.tensor(M::kHiddenWeights).data.data(), h_last,
                   preact.data(), true);
  const T slope = static_cast<T>(cfg.leak_slope);
  std::vector<T> dropped(preact.size());
  for (int f = 0; f < fc; ++f) {
    for (int col = 0; col < n; ++col) {
      T r = detail::leaky(preact[f * n + col], slope);
      if (!masks.empty()) r *= masks[col].scale[f];
      dropped[f * n + col] = r;
    }
  }
  std::vector<T> out(static_cast<std::size_t>(kOutputs) * n);
  const T* b2 = model.tensor(M::kOutputBias).data.data();
  for (int o = 0; o < kOutputs; ++o) std::fill_n(out.data() + o * n, n, b2[o]);
  kernels::gemm_nn(kOutputs, n, fc, model.tensor(M::kOutputWeights).data.data(), dropped.data(),
                   out.data(), true);

  double loss = 0.0;
  std::vector<T> dout(static_cast<std::size_t>(kOutputs) * n);
  for (int col = 0; col < n; ++col) {
    const double inv_scale = 1.0 / batch[col].history.scale;
    const double target[2] = {batch[col].target_dx * inv_scale, batch[col].target_dy * inv_scale};
    for (int axis = 0; axis < 2; ++axis) {
      const double mu = static_cast<double>(out[axis * n + col]);
      const double logvar = static_cast<double>(out[(2 + axis) * n + col]);
      const double res = mu - target[axis];
      const double precision = std::exp(-logvar);
      loss += res * res * precision + logvar;
      dout[axis * n + col] = static_cast<T>(2.0 * res * precision);
      dout[(2 + axis) * n + col] = static_cast<T>(1.0 - res * res * precision);
    }
  }
  loss += lambda * penalty(model);
  if (!std::isfinite(loss)) throw DivergenceError("nll_loss is not finite");
  if (grads == nullptr) return loss;

  Gradients<T>& g = *grads;
  g.resize(M::kSlotCount);
  for (std::size_t s = 0; s < M::kSlotCount; ++s) g[s].assign(model.tensors()[s].size(), T(0));

  // Output layer.
  kernels::gemm_nt_acc(kOutputs, n, fc, dout.data(), dropped.data(), g[M::kOutputWeights].data());
  for (int o = 0; o < kOutputs; ++o) {
    T acc = T(0);
    for (int col = 0; col < n; ++col) acc += dout[o * n + col];
    g[M::kOutputBias][o] += acc;
  }
  std::vector<T> dpre(preact.size(), T(0));
  kernels::gemm_tn_acc(kOutputs, n, fc, model.tensor(M::kOutputWeights).data.data(), dout.data(),
                       dpre.data());
  for (int f = 0; f < fc; ++f) {
    for (int col = 0; col < n; ++col) {
      T d = dpre[f * n + col];
      if (!masks.empty()) d *= masks[col].scale[f];
      if (!(preact[f * n + col] > T(0))) d *= slope;
      dpre[f * n + col] = d;
    }
  }
  kernels::gemm_nt_acc(fc, n, hidden, dpre.data(), h_last, g[M::kHiddenWeights].data());
  for (int f = 0; f < fc; ++f) {
    T acc = T(0);
    for (int col = 0; col < n; ++col) acc += dpre[f * n + col];
    g[M::kHiddenBias][f] += acc;
  }
  std::vector<T> dh(block, T(0));
  kernels::gemm_tn_acc(fc, n, hidden, model.tensor(M::kHiddenWeights).data.data(), dpre.data(),
                       dh.data());

  // Backpropagation through time.
  std::vector<T> dc(block, T(0));
  std::vector<T> dz(4 * block);
  const T* w_h = model.tensor(M::kRecurrentWeights).data.data();
  for (int t = steps - 1; t >= 0; --t) {
    const T* gt = gates.data() + t * 4 * block;
    const T* gi = gt;
    const T* gf = gt + block;
    const T* gg = gt + 2 * block;
    const T* go = gt + 3 * block;
    const T* tc = tanh_cells.data() + t * block;
    const T* c_prev = t > 0 ? cells.data() + (t - 1) * block : nullptr;
    T* dzi = dz.data();
    T* dzf = dz.data() + block;
    T* dzg = dz.data() + 2 * block;
    T* dzo = dz.data() + 3 * block;
    for (std::size_t e = 0; e < block; ++e) {
      const T d_o = dh[e] * tc[e];
      dc[e] += dh[e] * go[e] * (T(1) - tc[e] * tc[e]);
      const T d_i = dc[e] * gg[e];
      const T d_g = dc[e] * gi[e];
      const T d_f = c_prev != nullptr ? dc[e] * c_prev[e] : T(0);
      dzi[e] = d_i * gi[e] * (T(1) - gi[e]);
      dzf[e] = d_f * gf[e] * (T(1) - gf[e]);
      dzg[e] = d_g * (T(1) - gg[e] * gg[e]);
      dzo[e] = d_o * go[e] * (T(1) - go[e]);
      dc[e] *= gf[e];
    }
    kernels::gemm_nt_acc(4 * hidden, n, kInputFeatures, dz.data(), x_at(t),
                         g[M::kInputWeights].data());
    for (int r = 0; r < 4 * hidden; ++r) {
      T acc = T(0);
      for (int col = 0; col < n; ++col) acc += dz[r * n + col];
      g[M::kGateBias][r] += acc;
    }
    if (t > 0) {
      const T* h_prev = hs.data() + (t - 1) * block;
      kernels::gemm_nt_acc(4 * hidden, n, hidden, dz.data(), h_prev,
                           g[M::kRecurrentWeights].data());
      std::fill(dh.begin(), dh.end(), T(0));
      kernels::gemm_tn_acc(4 * hidden, n, hidden, w_h, dz.data(), dh.data());
    }
  }

  if (lambda != 0.0) {
    const T two_lambda = static_cast<T>(2.0 * lambda);
    for (std::size_t s = 0; s < M::kSlotCount; ++s) {
      const auto& p = model.tensors()[s].data;
      for (std::size_t i = 0; i < p.size(); ++i) g[s][i] += two_lambda * p[i];
    }
  }
  return loss;
}

std::vector<DropoutMask<float>> draw_masks(const PredictorModel& model, std::size_t count,
                                           Rng& rng) {
  std::vector<DropoutMask<float>> masks;
  if (model.config().dropout_rate <= 0.0) return masks;
  masks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) masks.push_back(DropoutMask<float>::draw(model, rng));
  return masks;
}

}  // namespace

template <typename T>
double nll_loss(const BasicPredictor<T>& model, std::span<const TrainingPair> batch, double lambda,
                std::span<const DropoutMask<T>> masks) {
  return loss_impl<T>(model, batch, lambda, masks, nullptr);
}

template <typename T>
double nll_loss_and_gradient(const BasicPredictor<T>& model, std::span<const TrainingPair> batch,
                             double lambda, std::span<const DropoutMask<T>> masks,
                             Gradients<T>& grads) {
  return loss_impl<T>(model, batch, lambda, masks, &grads);
}

template double nll_loss(const BasicPredictor<float>&, std::span<const TrainingPair>, double,
                         std::span<const DropoutMask<float>>);
template double nll_loss(const BasicPredictor<double>&, std::span<const TrainingPair>, double,
                         std::span<const DropoutMask<double>>);
template double nll_loss_and_gradient(const BasicPredictor<float>&, std::span<const TrainingPair>,
                                      double, std::span<const DropoutMask<float>>,
                                      Gradients<float>&);
template double nll_loss_and_gradient(const BasicPredictor<double>&,
                                      std::span<const TrainingPair>, double,
                                      std::span<const DropoutMask<double>>, Gradients<double>&);

TrainResult train(std::span<const TrainingPair> dataset, const PredictorConfig& model_config,
                  const TrainConfig& config) {
  if (dataset.empty()) throw InvalidArgument("train: empty dataset");
  PredictorModel model = PredictorModel::initialized(model_config, config.seed);
  for (int axis = 0; axis < 2; ++axis) {
    double sq = 0.0;
    for (const TrainingPair& p : dataset) {
      const double t = (axis == 0 ? p.target_dx : p.target_dy) / p.history.scale;
      sq += t * t;
    }
    sq /= static_cast<double>(dataset.size());
    if (sq > 0.0 && std::isfinite(std::log(sq))) {
      model.tensor(PredictorModel::kOutputBias).data[2 + axis] = static_cast<float>(std::log(sq));
    }
  }
  return train(dataset, std::move(model), config);
}

TrainResult train(std::span<const TrainingPair> dataset, PredictorModel model,
                  const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw InvalidArgument("train: empty dataset");
  using M = PredictorModel;

  TrainResult result{model, {}, false};
  if (config.epochs == 0) return result;

  Rng rng = make_rng(config.seed, 0x7a11);
  std::vector<std::vector<double>> m1(M::kSlotCount);
  std::vector<std::vector<double>> m2(M::kSlotCount);
  for (std::size_t s = 0; s < M::kSlotCount; ++s) {
    m1[s].assign(model.tensors()[s].size(), 0.0);
    m2[s].assign(model.tensors()[s].size(), 0.0);
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<TrainingPair> batch;
  Gradients<float> grads;
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    PredictorModel checkpoint = model;
    std::shuffle(order.begin(), order.end(), rng);
    double data_sum = 0.0;
    bool diverged = false;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      const auto masks = draw_masks(model, batch.size(), rng);
      double loss = 0.0;
      try {
        loss = nll_loss_and_gradient<float>(model, batch, config.l2_lambda, masks, grads);
      } catch (const DivergenceError&) {
        diverged = true;
        break;
      }
      data_sum += loss - config.l2_lambda * penalty(model);

      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t s = 0; s < M::kSlotCount; ++s) {
        auto& p = model.tensors()[s].data;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gval = grads[s][i];
          m1[s][i] = config.beta1 * m1[s][i] + (1.0 - config.beta1) * gval;
          m2[s][i] = config.beta2 * m2[s][i] + (1.0 - config.beta2) * gval * gval;
          const double mhat = m1[s][i] / bc1;
          const double vhat = m2[s][i] / bc2;
          p[i] = static_cast<float>(p[i] - config.learning_rate * mhat /
                                               (std::sqrt(vhat) + config.epsilon));
        }
      }
      if (!model.all_finite()) {
        diverged = true;
        break;
      }
    }
    if (diverged) {
      result.model = std::move(checkpoint);
      result.diverged = true;
      return result;
    }
    result.epoch_loss.push_back(data_sum / static_cast<double>(dataset.size()));
  }
  result.model = std::move(model);
  return result;
}

double median_normalized_sigma(const PredictorModel& model, std::span<const TrainingPair> data,
                               std::size_t max_samples) {
  if (data.empty()) return 0.0;
  const std::size_t count = std::min(max_samples, data.size());
  const std::size_t stride = data.size() / count;
  std::vector<const KeypointHistory*> histories;
  histories.reserve(count);
  for (std::size_t i = 0; i < count; ++i) histories.push_back(&data[i * stride].history);
  const EncodedBatch<float> encoded = encode(model, histories);
  std::vector<double> sigmas;
  sigmas.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const GaussianPrediction p = head(model, encoded, static_cast<int>(i), nullptr);
    sigmas.push_back(0.5 * (p.sigma_x + p.sigma_y) / histories[i]->scale);
  }
  std::nth_element(sigmas.begin(), sigmas.begin() + sigmas.size() / 2, sigmas.end());
  return sigmas[sigmas.size() / 2];
}

std::vector<TrainingPair> build_training_set(const FrameStream& frames, std::size_t history_len) {
  if (history_len < 1) throw InvalidArgument("build_training_set: history_len must be >= 1");
  if (!frames.frames.empty() && !frames.has_track_ids()) {
    throw InvalidArgument("build_training_set: stream carries no track ids");
  }
  const std::size_t num_frames = frames.frames.size();
  const std::size_t num_kp = frames.meta.num_keypoints;

  std::map<std::int64_t, std::vector<const Pose*>> tracks;
  for (std::size_t fi = 0; fi < num_frames; ++fi) {
    const Frame& f = frames.frames[fi];
    for (std::size_t p = 0; p < f.poses.size(); ++p) {
      auto& column = tracks[f.track_ids[p]];
      if (column.empty()) column.assign(num_frames, nullptr);
      column[fi] = &f.poses[p];
    }
  }

  std::vector<TrainingPair> out;
  for (const auto& [id, column] : tracks) {
    for (std::size_t k = 0; k < num_kp; ++k) {
      for (std::size_t fi = history_len; fi < num_frames; ++fi) {
        const Pose* target = column[fi];
        if (target == nullptr || !target->keypoints[k].visible) continue;
        std::ptrdiff_t last = -1;
        for (std::size_t s = 0; s < history_len; ++s) {
          const Pose* p = column[fi - history_len + s];
          if (p != nullptr && p->keypoints[k].visible) last = static_cast<std::ptrdiff_t>(s);
        }
        if (last < 0) continue;
        const Pose& anchor_pose = *column[fi - history_len + static_cast<std::size_t>(last)];
        const Keypoint& anchor = anchor_pose.keypoints[k];
        TrainingPair pair;
        pair.history.last_x = anchor.x;
        pair.history.last_y = anchor.y;
        pair.history.scale = anchor_pose.scale > 0.0 ? anchor_pose.scale : 1.0;
        pair.history.steps.resize(history_len);
        for (std::size_t s = 0; s < history_len; ++s) {
          const Pose* p = column[fi - history_len + s];
          if (p == nullptr || !p->keypoints[k].visible) continue;
          pair.history.steps[s] =
              HistoryStep{p->keypoints[k].x - anchor.x, p->keypoints[k].y - anchor.y, true};
        }
        pair.target_dx = target->keypoints[k].x - anchor.x;
        pair.target_dy = target->keypoints[k].y - anchor.y;
        out.push_back(std::move(pair));
      }
    }
  }
  return out;
}

}  // namespace smcpose
