#include <cmath>
#include <sstream>

#include "doctest.h"
#include "smcpose/error.hpp"
#include "smcpose/predictor.hpp"
#include "smcpose/predictor_io.hpp"
#include "smcpose/training.hpp"
#include "support.hpp"

using namespace smcpose;
using smcpose::testing::random_history;
using smcpose::testing::random_pairs;

namespace {

PredictorModel trained_like_model(std::uint64_t seed, int len = 10) {
  PredictorConfig cfg;
  cfg.history_len = len;
  return PredictorModel::initialized(cfg, seed);
}

}  // namespace

TEST_CASE("zero model predicts zero mean and unit normalized sigma") {
  const PredictorModel m(PredictorConfig{});
  Rng rng = make_rng(4);
  KeypointHistory h = random_history(rng, 10, 1.0);
  const GaussianPrediction p = forward(m, h, false, nullptr);
  CHECK(p.mean_x == 0.0);
  CHECK(p.mean_y == 0.0);
  CHECK(p.sigma_x == 1.0);
  CHECK(p.sigma_y == 1.0);
  h.scale = 40.0;
  CHECK(forward(m, h, false, nullptr).sigma_x == doctest::Approx(40.0));
}

TEST_CASE("forward without dropout is deterministic") {
  const PredictorModel m = trained_like_model(5);
  Rng rng = make_rng(5);
  const KeypointHistory h = random_history(rng, 10);
  const GaussianPrediction a = forward(m, h, false, nullptr);
  const GaussianPrediction b = forward(m, h, false, nullptr);
  CHECK(a.mean_x == b.mean_x);
  CHECK(a.mean_y == b.mean_y);
  CHECK(a.sigma_x == b.sigma_x);
  CHECK(a.sigma_y == b.sigma_y);
}

TEST_CASE("batched encoding is bit-identical to single-item forward") {
  const PredictorModel m = trained_like_model(6);
  Rng rng = make_rng(6);
  std::vector<KeypointHistory> hs;
  for (int i = 0; i < 300; ++i) hs.push_back(random_history(rng, 10, 30.0 + i * 0.1));
  std::vector<const KeypointHistory*> ptrs;
  for (const auto& h : hs) ptrs.push_back(&h);
  const EncodedBatch<float> batch = encode(m, ptrs);
  Rng mrng = make_rng(60);
  const DropoutMask<float> mask = DropoutMask<float>::draw(m, mrng);
  for (int i = 0; i < 300; i += 7) {
    const GaussianPrediction a = head(m, batch, i, &mask);
    const GaussianPrediction b = forward(m, hs[i], &mask);
    CHECK(a.mean_x == b.mean_x);
    CHECK(a.mean_y == b.mean_y);
    CHECK(a.sigma_x == b.sigma_x);
    CHECK(a.sigma_y == b.sigma_y);
  }
}

TEST_CASE("float and double models agree") {
  const BasicPredictor<double> md = BasicPredictor<double>::initialized(PredictorConfig{}, 7);
  const PredictorModel mf = md.cast<float>();
  Rng rng = make_rng(7);
  for (int i = 0; i < 20; ++i) {
    const KeypointHistory h = random_history(rng, 10);
    const GaussianPrediction a = forward(md, h, false, nullptr);
    const GaussianPrediction b = forward(mf, h, false, nullptr);
    CHECK(b.mean_x == doctest::Approx(a.mean_x).epsilon(1e-4).scale(1.0));
    CHECK(b.sigma_y == doctest::Approx(a.sigma_y).epsilon(1e-4));
  }
}

TEST_CASE("MC dropout spreads the mean and averages to the dropout-off mean") {
  const PredictorModel m = trained_like_model(8);
  Rng rng = make_rng(8);
  const KeypointHistory h = random_history(rng, 10);
  const GaussianPrediction off = forward(m, h, false, nullptr);

  std::vector<double> means;
  for (int i = 0; i < 100; ++i) means.push_back(forward(m, h, true, &rng).mean_x);
  double mean = 0.0, var = 0.0;
  for (double v : means) mean += v;
  mean /= means.size();
  for (double v : means) var += (v - mean) * (v - mean);
  CHECK(var / (means.size() - 1) > 0.0);

  // The head is linear in the dropped layer, so the expectation is exact.
  const int n = 4000;
  double sx = 0.0, sxx = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = forward(m, h, true, &rng).mean_x;
    sx += v;
    sxx += v * v;
  }
  const double mc = sx / n;
  const double sd = std::sqrt(std::max(0.0, sxx / n - mc * mc));
  CHECK(std::abs(mc - off.mean_x) < 4.0 * sd / std::sqrt(double(n)) + 1e-9);
}

TEST_CASE("dropout masks use inverted scaling") {
  const PredictorModel m = trained_like_model(9);
  Rng rng = make_rng(9);
  std::size_t kept = 0, total = 0;
  for (int i = 0; i < 2000; ++i) {
    const DropoutMask<float> mask = DropoutMask<float>::draw(m, rng);
    REQUIRE(mask.scale.size() == 40);
    for (float s : mask.scale) {
      const bool ok = s == 0.0f || s == doctest::Approx(1.0 / 0.7);
      CHECK(ok);
      kept += s != 0.0f;
      ++total;
    }
  }
  const double p = double(kept) / total;
  CHECK(std::abs(p - 0.7) < 4.0 * std::sqrt(0.21 / total));
}

TEST_CASE("sampling follows the predicted Gaussian") {
  GaussianPrediction g;
  g.mean_x = 0.0;
  g.mean_y = 0.0;
  g.sigma_x = 2.0;
  g.sigma_y = 3.0;
  Rng rng = make_rng(10);
  const int n = 100000;
  double sx = 0, sy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    const auto [x, y] = sample(g, rng);
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
  }
  const double mx = sx / n, my = sy / n;
  CHECK(std::abs(mx) < 3.0 * 2.0 / std::sqrt(double(n)));
  CHECK(std::abs(my) < 3.0 * 3.0 / std::sqrt(double(n)));
  CHECK(std::sqrt(sxx / n - mx * mx) == doctest::Approx(2.0).epsilon(0.02));
  CHECK(std::sqrt(syy / n - my * my) == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("sampling at the sigma floor returns the mean") {
  GaussianPrediction g;
  g.mean_x = 3.0;
  g.mean_y = -1.0;
  g.sigma_x = 0.0;
  g.sigma_y = 0.0;
  Rng rng = make_rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto [x, y] = sample(g, rng, 1e-3);
    CHECK(std::abs(x - 3.0) < 1e-2);
    CHECK(std::abs(y + 1.0) < 1e-2);
  }
}

TEST_CASE("seeded sampling is reproducible") {
  GaussianPrediction g;
  Rng a = make_rng(12), b = make_rng(12);
  for (int i = 0; i < 100; ++i) CHECK(sample(g, a) == sample(g, b));
}

TEST_CASE("loss closed forms") {
  const BasicPredictor<double> zero(PredictorConfig{});
  Rng rng = make_rng(13);
  TrainingPair p;
  p.history = random_history(rng, 10, 1.0);
  CHECK(nll_loss<double>(zero, std::span(&p, 1), 0.0) == 0.0);
  p.target_dx = -1.0;
  CHECK(nll_loss<double>(zero, std::span(&p, 1), 0.0) == doctest::Approx(1.0));
  // Targets are in pose-scale units.
  p.history.scale = 4.0;
  p.target_dx = -4.0;
  CHECK(nll_loss<double>(zero, std::span(&p, 1), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("loss with zero log-variance is the sum of squared normalized residuals") {
  BasicPredictor<double> m = BasicPredictor<double>::initialized(PredictorConfig{}, 14);
  auto& w = m.tensor(BasicPredictor<double>::kOutputWeights).data;
  const int fc = m.config().fc_hidden;
  std::fill(w.begin() + 2 * fc, w.end(), 0.0);
  auto& b = m.tensor(BasicPredictor<double>::kOutputBias).data;
  b[2] = b[3] = 0.0;
  Rng rng = make_rng(14);
  const std::vector<TrainingPair> data = random_pairs(rng, 10, 25);
  double expected = 0.0;
  for (const TrainingPair& p : data) {
    const GaussianPrediction g = forward(m, p.history, false, nullptr);
    const double rx = (g.mean_x - p.target_dx) / p.history.scale;
    const double ry = (g.mean_y - p.target_dy) / p.history.scale;
    expected += rx * rx + ry * ry;
  }
  CHECK(nll_loss<double>(m, data, 0.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("L2 term adds lambda times the squared parameter norm") {
  const BasicPredictor<double> m = BasicPredictor<double>::initialized(PredictorConfig{}, 15);
  Rng rng = make_rng(15);
  const std::vector<TrainingPair> data = random_pairs(rng, 10, 5);
  double norm = 0.0;
  for (const auto& t : m.tensors()) {
    for (double v : t.data) norm += v * v;
  }
  CHECK(nll_loss<double>(m, data, 0.01) - nll_loss<double>(m, data, 0.0) ==
        doctest::Approx(0.01 * norm).epsilon(1e-9));
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    const auto r = smcpose::testing::check_gradient(seed);
    CHECK(r.parameters > 100);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("zero epochs return the model unchanged") {
  Rng rng = make_rng(16);
  const std::vector<TrainingPair> data = random_pairs(rng, 10, 30);
  const PredictorModel m = trained_like_model(16);
  TrainConfig tc;
  tc.epochs = 0;
  const TrainResult r = train(data, m, tc);
  CHECK(r.epoch_loss.empty());
  for (std::size_t s = 0; s < m.tensors().size(); ++s) {
    CHECK(r.model.tensors()[s].data == m.tensors()[s].data);
  }
}

TEST_CASE("training on identical pairs lowers the loss") {
  Rng rng = make_rng(17);
  TrainingPair p = random_pairs(rng, 10, 1).front();
  const std::vector<TrainingPair> data(300, p);
  TrainConfig tc;
  tc.epochs = 10;
  tc.l2_lambda = 0.0;
  PredictorConfig pc;
  const TrainResult r = train(data, pc, tc);
  REQUIRE(r.epoch_loss.size() == 10);
  CHECK_FALSE(r.diverged);
  // Dropout noise allows small rises between epochs.
  for (std::size_t e = 1; e < r.epoch_loss.size(); ++e) {
    CHECK(r.epoch_loss[e] <= r.epoch_loss[e - 1] + 0.1 * std::abs(r.epoch_loss[e - 1]) + 0.05);
  }
  CHECK(r.epoch_loss.back() < r.epoch_loss.front() - 1.0);
}

TEST_CASE("training set construction") {
  using smcpose::testing::single_track_stream;
  const std::size_t L = 4;
  SUBCASE("one pair from a window of L + 1 frames") {
    const FrameStream s = single_track_stream({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0},
                                              std::vector<bool>(5, true));
    const auto pairs = build_training_set(s, L);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].target_dx == 1.0);
    CHECK(pairs[0].history.last_x == 4.0);
    CHECK(pairs[0].history.steps[0].dx == -3.0);
    CHECK(pairs[0].history.scale == 40.0);
  }
  SUBCASE("stationary keypoint has zero residual") {
    const FrameStream s = single_track_stream({9, 9, 9, 9, 9, 9}, {3, 3, 3, 3, 3, 3},
                                              std::vector<bool>(6, true));
    const auto pairs = build_training_set(s, L);
    REQUIRE(pairs.size() == 2);
    for (const auto& p : pairs) {
      CHECK(p.target_dx == 0.0);
      CHECK(p.target_dy == 0.0);
    }
  }
  SUBCASE("occluded steps are zero-filled") {
    const std::size_t len = 6;
    const FrameStream s = single_track_stream({0, 1, 2, 3, 4, 5, 6}, {0, 0, 0, 0, 0, 0, 0},
                                              {true, true, false, false, false, true, true});
    const auto pairs = build_training_set(s, len);
    REQUIRE(pairs.size() == 1);
    const auto& steps = pairs[0].history.steps;
    for (std::size_t t = 2; t <= 4; ++t) CHECK(steps[t] == HistoryStep{0.0, 0.0, false});
    CHECK(steps[0] == HistoryStep{-5.0, 0.0, true});
    CHECK(steps[5] == HistoryStep{0.0, 0.0, true});
  }
  SUBCASE("streams without ids are rejected") {
    FrameStream s = single_track_stream({0, 1}, {0, 0}, {true, true});
    for (Frame& f : s.frames) f.track_ids.clear();
    CHECK_THROWS_AS(build_training_set(s, 1), InvalidArgument);
  }
}

TEST_CASE("history encoding from a pose queue") {
  std::vector<Pose> q(3, Pose(2));
  q[0].keypoints[0] = {10, 10, true, 1};
  q[1].keypoints[0] = {12, 11, true, 1};
  q[1].scale = 30.0;
  q[2].keypoints[1] = {50, 50, true, 1};
  q[2].scale = 60.0;
  const auto h = KeypointHistory::from_poses(q, 0);
  REQUIRE(h.has_value());
  CHECK(h->last_x == 12.0);
  CHECK(h->scale == 30.0);
  CHECK(h->steps[0] == HistoryStep{-2.0, -1.0, true});
  CHECK(h->steps[2] == HistoryStep{0.0, 0.0, false});
  std::vector<Pose> empty(3, Pose(2));
  CHECK_FALSE(KeypointHistory::from_poses(empty, 0).has_value());
}

TEST_CASE("model files reload bit-identically") {
  PredictorModel m = trained_like_model(18);
  m.mutable_config().reference_sigma = 0.0375;
  std::stringstream buf;
  save_model(m, buf);
  const PredictorModel r = load_model(buf);
  CHECK(r.config() == m.config());
  Rng rng = make_rng(18);
  for (int i = 0; i < 50; ++i) {
    const KeypointHistory h = random_history(rng, 10);
    const GaussianPrediction a = forward(m, h, false, nullptr);
    const GaussianPrediction b = forward(r, h, false, nullptr);
    CHECK(a.mean_x == b.mean_x);
    CHECK(a.sigma_y == b.sigma_y);
  }
}

TEST_CASE("corrupt model files are rejected") {
  std::stringstream bad("not a model at all");
  CHECK_THROWS_AS(load_model(bad), FormatError);
  std::stringstream buf;
  save_model(trained_like_model(19), buf);
  const std::string bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_model(truncated), FormatError);
}
