#include "smcpose/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <boost/math/distributions/binomial.hpp>

#include "smcpose/error.hpp"
#include "smcpose/random.hpp"
#include "smcpose/training.hpp"

namespace smcpose {

std::vector<TrainingPair> collect_training_pairs(std::span<const FrameStream> streams,
                                                 std::size_t history_len, std::size_t max_pairs,
                                                 std::uint64_t seed) {
  std::vector<TrainingPair> data;
  for (const FrameStream& stream : streams) {
    if (!stream.has_track_ids() && stream.num_poses() > 0) {
      throw InvalidArgument("training streams must carry track ids");
    }
    std::vector<TrainingPair> pairs = build_training_set(stream, history_len);
    data.insert(data.end(), std::make_move_iterator(pairs.begin()),
                std::make_move_iterator(pairs.end()));
  }
  if (max_pairs > 0 && data.size() > max_pairs) {
    Rng rng = make_rng(seed, 0x7ea1);
    std::shuffle(data.begin(), data.end(), rng);
    data.resize(max_pairs);
  }
  return data;
}

TrainingRun train_predictor(const RunConfig& config, std::span<const TrainingPair> data) {
  if (data.empty()) throw InvalidArgument("train_predictor: no training pairs");
  PredictorConfig pc = config.predictor;
  pc.history_len = static_cast<int>(config.history_len());
  TrainResult r = train(data, pc, config.train);
  r.model.mutable_config().reference_sigma = median_normalized_sigma(r.model, data);
  return {std::move(r.model), std::move(r.epoch_loss), data.size(), r.diverged};
}

std::vector<FrameStream> training_scenes(const SceneConfig& base, std::size_t num_scenes,
                                         std::uint64_t seed) {
  std::vector<FrameStream> out;
  out.reserve(num_scenes);
  for (std::size_t i = 0; i < num_scenes; ++i) {
    SceneConfig sc = benchmark_scene(base, i);
    sc.seed = derive_seed(seed, i);
    out.push_back(simulate(sc).labelled_detections);
  }
  return out;
}

TrainingRun train_on_scenes(const RunConfig& config, std::size_t num_scenes,
                                    std::uint64_t seed, std::size_t max_pairs) {
  if (num_scenes == 0) throw InvalidArgument("train_on_scenes: need at least one scene");
  const std::vector<FrameStream> streams = training_scenes(config.scene, num_scenes, seed);
  const std::vector<TrainingPair> data =
      collect_training_pairs(streams, config.history_len(), max_pairs, seed);
  return train_predictor(config, data);
}

SceneConfig benchmark_scene(const SceneConfig& base, std::size_t index, std::size_t people_min,
                            std::size_t people_max) {
  if (people_min < 1 || people_max < people_min) {
    throw InvalidArgument("benchmark_scene: invalid people range");
  }
  SceneConfig sc = base;
  sc.seed = base.seed + index;
  sc.num_people = people_min + index % (people_max - people_min + 1);
  return sc;
}

std::vector<AblationVariant> ablation_variants(const std::vector<std::size_t>& lengths,
                                               std::size_t main_len, double alpha) {
  std::vector<AblationVariant> rows;
  for (std::size_t len : lengths) {
    rows.push_back({"both_L" + std::to_string(len), len, 300, true, true, 0.0, alpha});
  }
  rows.push_back({"epistemic_only", main_len, 300, true, false, -1.0, alpha});
  rows.push_back({"aleatoric_only", main_len, 300, false, true, 0.0, alpha});
  rows.push_back({"none", main_len, 300, false, false, -1.0, alpha});
  rows.push_back({"baseline", main_len, 1, false, false, 0.0, 0.0});
  return rows;
}

TrackerConfig apply_variant(TrackerConfig base, const AblationVariant& v) {
  base.smc.history_len = v.history_len;
  base.smc.num_particles = v.num_particles;
  base.smc.alpha = v.alpha;
  base.proposal.epistemic = v.epistemic;
  base.proposal.aleatoric = v.aleatoric;
  base.proposal.fixed_sigma = v.fixed_sigma;
  return base;
}

SceneResult run_scene(const SceneConfig& scene, const PredictorModel& model,
                      const TrackerConfig& tracker, const EvalConfig& eval) {
  const Scene s = simulate(scene);
  SceneResult r;
  r.seed = scene.seed;
  const FrameStream tracked = track_stream(s.detections, model, tracker, &r.stats);
  r.report = evaluate(tracked, s.ground_truth, eval);
  return r;
}

std::vector<SceneResult> run_scenes(const SceneConfig& base, std::size_t count,
                                    const PredictorModel& model, const TrackerConfig& tracker,
                                    const EvalConfig& eval, std::size_t jobs) {
  std::vector<SceneResult> results(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        results[i] = run_scene(benchmark_scene(base, i), model, tracker, eval);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

SignTest sign_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("sign_test: samples differ in length");
  SignTest t;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) {
      ++t.wins;
    } else if (a[i] > b[i]) {
      ++t.losses;
    } else {
      ++t.ties;
    }
  }
  const std::size_t n = t.wins + t.losses;
  if (n == 0) return t;
  const boost::math::binomial_distribution<double> dist(static_cast<double>(n), 0.5);
  const double tail = boost::math::cdf(dist, static_cast<double>(std::min(t.wins, t.losses)));
  t.p_value = std::min(1.0, 2.0 * tail);
  return t;
}

}  // namespace smcpose
