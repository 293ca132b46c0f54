#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "smcpose/frame_stream.hpp"
#include "smcpose/predictor.hpp"
#include "smcpose/random.hpp"
#include "smcpose/training.hpp"

namespace smcpose::testing {

inline KeypointHistory random_history(Rng& rng, int len, double scale = 50.0) {
  std::normal_distribution<double> step(0.0, 0.05 * scale);
  KeypointHistory h;
  h.scale = scale;
  h.last_x = 100.0 + 300.0 * uniform01(rng);
  h.last_y = 100.0 + 200.0 * uniform01(rng);
  h.steps.resize(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t) {
    HistoryStep& s = h.steps[static_cast<std::size_t>(t)];
    s.visible = t == len - 1 || uniform01(rng) < 0.8;
    if (s.visible && t != len - 1) {
      s.dx = step(rng) * (len - 1 - t);
      s.dy = step(rng) * (len - 1 - t);
    }
  }
  return h;
}

inline std::vector<TrainingPair> random_pairs(Rng& rng, int len, std::size_t count) {
  std::normal_distribution<double> target(0.0, 3.0);
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < count; ++i) {
    TrainingPair p;
    p.history = random_history(rng, len, 20.0 + 60.0 * uniform01(rng));
    p.target_dx = target(rng);
    p.target_dy = target(rng);
    out.push_back(std::move(p));
  }
  return out;
}

// Tiny double-precision model with every tensor randomized so that no
// gradient entry is structurally zero.
inline BasicPredictor<double> random_tiny_model(Rng& rng, int len) {
  PredictorConfig cfg;
  cfg.history_len = len;
  cfg.hidden = 5;
  cfg.fc_hidden = 4;
  cfg.dropout_rate = 0.3;
  BasicPredictor<double> m(cfg);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (auto& t : m.tensors()) {
    for (double& v : t.data) v = u(rng);
  }
  return m;
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
};

// Central differences on every parameter with the dropout masks held fixed.
inline GradientCheck check_gradient(std::uint64_t seed, int len = 3, std::size_t data = 5,
                                    double h = 1e-5) {
  Rng rng = make_rng(seed);
  BasicPredictor<double> model = random_tiny_model(rng, len);
  const std::vector<TrainingPair> batch = random_pairs(rng, len, data);
  std::vector<DropoutMask<double>> masks;
  for (std::size_t i = 0; i < data; ++i) masks.push_back(DropoutMask<double>::draw(model, rng));
  const double lambda = 1e-3;

  Gradients<double> analytic;
  nll_loss_and_gradient<double>(model, batch, lambda, masks, analytic);

  // Relative error per tensor in the max norm, so entries whose gradient is
  // close to zero are judged against the tensor's scale.
  GradientCheck out;
  for (std::size_t s = 0; s < model.tensors().size(); ++s) {
    auto& p = model.tensors()[s].data;
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = nll_loss<double>(model, batch, lambda, masks);
      p[i] = saved - h;
      const double down = nll_loss<double>(model, batch, lambda, masks);
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[s][i];
      diff = std::max(diff, std::abs(a - numeric));
      scale = std::max({scale, std::abs(a), std::abs(numeric)});
      ++out.parameters;
    }
    out.max_relative_error = std::max(out.max_relative_error, diff / std::max(scale, 1e-12));
  }
  return out;
}

// One track over `frames` frames holding a single keypoint at the given
// positions; invisible where `visible` is false.
inline FrameStream single_track_stream(const std::vector<double>& xs, const std::vector<double>& ys,
                                       const std::vector<bool>& visible, double scale = 40.0) {
  FrameStream s;
  s.meta.num_keypoints = 1;
  for (std::size_t f = 0; f < xs.size(); ++f) {
    Frame fr;
    fr.frame_id = static_cast<std::int64_t>(f);
    Pose p(1);
    p.keypoints[0] = {xs[f], ys[f], visible[f], visible[f] ? 1.0 : 0.0};
    p.scale = scale;
    p.score = 1.0;
    fr.poses.push_back(p);
    fr.track_ids.push_back(7);
    s.frames.push_back(std::move(fr));
  }
  return s;
}

}  // namespace smcpose::testing
