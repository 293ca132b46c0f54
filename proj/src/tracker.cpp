#include "smcpose/tracker.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <string>

#include "smcpose/error.hpp"

namespace smcpose {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<double> pair_oks(const Pose& detection, std::span<const Pose> particles,
                             const OksParams& params) {
  std::vector<double> out(particles.size());
  for (std::size_t n = 0; n < particles.size(); ++n) out[n] = oks(detection, particles[n], params);
  return out;
}

}  // namespace

void TrackerConfig::validate() const {
  smc.validate();
  if (max_filters < 1) throw InvalidArgument("max_filters must be >= 1");
  if (!(match_threshold >= 0.0 && match_threshold <= 1.0)) {
    throw InvalidArgument("match_threshold must be in [0, 1]");
  }
  if (initial_lifetime < 0) throw InvalidArgument("initial_lifetime must be >= 0");
  if (max_lifetime < initial_lifetime) {
    throw InvalidArgument("max_lifetime must be >= initial_lifetime");
  }
  if (!(proposal.noise_correlation >= 0.0 && proposal.noise_correlation <= 1.0)) {
    throw InvalidArgument("noise_correlation must be in [0, 1]");
  }
  for (double k : oks.kappas) {
    if (!(k > 0.0)) throw InvalidArgument("OKS kappas must be positive");
  }
}

double elite_mean(std::span<const double> values, double eliteness) {
  if (values.empty()) return 0.0;
  const std::size_t m = elite_count(values.size(), eliteness);
  std::vector<double> v(values.begin(), values.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m - 1), v.end(),
                   std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += v[i];
  return sum / static_cast<double>(m);
}

ScoreMatrix score_matrix(std::span<const std::vector<Pose>> predicted,
                         std::span<const Pose> detections, double eliteness,
                         const OksParams& params) {
  ScoreMatrix s;
  s.rows = detections.size();
  s.cols = predicted.size();
  s.values.assign(s.rows * s.cols, 0.0);
  for (std::size_t j = 0; j < s.rows; ++j) {
    for (std::size_t k = 0; k < s.cols; ++k) {
      const std::vector<double> v = pair_oks(detections[j], predicted[k], params);
      s.values[j * s.cols + k] = elite_mean(v, eliteness);
    }
  }
  return s;
}

Assignment greedy_match(const ScoreMatrix& scores, double threshold) {
  Assignment a;
  a.filter_of_detection.assign(scores.rows, kUnmatched);
  a.detection_of_filter.assign(scores.cols, kUnmatched);
  struct Entry {
    double score;
    std::size_t j;
    std::size_t k;
  };
  std::vector<Entry> entries;
  for (std::size_t j = 0; j < scores.rows; ++j) {
    for (std::size_t k = 0; k < scores.cols; ++k) {
      if (scores(j, k) >= threshold) entries.push_back({scores(j, k), j, k});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.j != y.j) return x.j < y.j;
    return x.k < y.k;
  });
  for (const Entry& e : entries) {
    if (a.filter_of_detection[e.j] != kUnmatched || a.detection_of_filter[e.k] != kUnmatched) {
      continue;
    }
    a.filter_of_detection[e.j] = e.k;
    a.detection_of_filter[e.k] = e.j;
  }
  return a;
}

Assignment optimal_match(const ScoreMatrix& scores, double threshold) {
  Assignment a;
  a.filter_of_detection.assign(scores.rows, kUnmatched);
  a.detection_of_filter.assign(scores.cols, kUnmatched);
  if (scores.rows == 0 || scores.cols == 0) return a;

  // Hungarian algorithm (potentials form) on an n x m cost with n <= m.
  const bool transpose = scores.rows > scores.cols;
  const std::size_t n = transpose ? scores.cols : scores.rows;
  const std::size_t m = transpose ? scores.rows : scores.cols;
  auto cost = [&](std::size_t r, std::size_t c) {
    const double s = transpose ? scores(c, r) : scores(r, c);
    return s >= threshold ? -s : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t c = 1; c <= m; ++c) {
    if (p[c] == 0) continue;
    const std::size_t r = p[c] - 1;
    const std::size_t j = transpose ? c - 1 : r;
    const std::size_t k = transpose ? r : c - 1;
    if (scores(j, k) < threshold) continue;
    a.filter_of_detection[j] = k;
    a.detection_of_filter[k] = j;
  }
  return a;
}

Tracker::Tracker(const PredictorModel& model, TrackerConfig config)
    : model_(&model), config_(std::move(config)) {
  config_.validate();
  if (static_cast<int>(config_.smc.history_len) != model.config().history_len) {
    throw InvalidArgument("tracker history_len " + std::to_string(config_.smc.history_len) +
                          " does not match model history_len " +
                          std::to_string(model.config().history_len));
  }
}

std::vector<TrackedPose> Tracker::step(std::span<const Pose> detections, std::int64_t frame_id) {
  if (!detections.empty()) {
    if (num_keypoints_ == 0) num_keypoints_ = detections.front().size();
    for (std::size_t j = 0; j < detections.size(); ++j) {
      if (detections[j].size() != num_keypoints_) {
        throw InvalidArgument("frame " + std::to_string(frame_id) + ": detection " +
                              std::to_string(j) + " has " + std::to_string(detections[j].size()) +
                              " keypoints, expected " + std::to_string(num_keypoints_));
      }
    }
    if (config_.oks.kappas.empty()) {
      const double floor = config_.oks.scale_floor;
      const OksScale mode = config_.oks.scale_mode;
      config_.oks = OksParams::defaults(num_keypoints_);
      config_.oks.scale_floor = floor;
      config_.oks.scale_mode = mode;
    }
  }
  ++stats_.frames;
  stats_.detections += detections.size();
  stats_.filter_frames += filters_.size();
  const std::size_t num_filters = filters_.size();

  // Prediction.
  auto t0 = Clock::now();
  std::vector<std::vector<Pose>> proposed(num_filters);
  for (std::size_t k = 0; k < num_filters; ++k) {
    proposed[k] = propose(filters_[k].particles, *model_, config_.proposal, filters_[k].rng);
  }
  stats_.predict_seconds += seconds_since(t0);

  // Association.
  t0 = Clock::now();
  Assignment match;
  match.filter_of_detection.assign(detections.size(), kUnmatched);
  match.detection_of_filter.assign(num_filters, kUnmatched);
  last_scores_ = ScoreMatrix{detections.size(), num_filters,
                             std::vector<double>(detections.size() * num_filters, 0.0)};
  if (num_filters > 0 && !detections.empty()) {
    last_scores_ = score_matrix(proposed, detections, config_.smc.eliteness, config_.oks);
    stats_.score_seconds += seconds_since(t0);
    t0 = Clock::now();
    match = config_.matching == MatchAlgorithm::Greedy
                ? greedy_match(last_scores_, config_.match_threshold)
                : optimal_match(last_scores_, config_.match_threshold);
  }
  stats_.match_seconds += seconds_since(t0);

  // Emission and activation.
  t0 = Clock::now();
  std::vector<TrackedPose> out;
  out.reserve(detections.size());
  std::vector<TrackFilter> created;
  for (std::size_t j = 0; j < detections.size(); ++j) {
    const std::size_t k = match.filter_of_detection[j];
    if (k != kUnmatched) {
      out.push_back({detections[j], filters_[k].track_id, frame_id});
      continue;
    }
    const std::int64_t id = next_id_++;
    if (num_filters + created.size() >= config_.max_filters) {
      ++stats_.overflow_events;
    } else {
      PoseQueue queue = make_initial_queue(detections[j], config_.smc.history_len);
      TrackFilter f;
      f.track_id = id;
      f.particles = ParticleSet(config_.smc.num_particles, queue);
      f.observations = std::move(queue);
      f.lifetime = config_.initial_lifetime;
      f.rng = make_rng(config_.seed, static_cast<std::uint64_t>(id));
      created.push_back(std::move(f));
      ++stats_.filters_created;
    }
    out.push_back({detections[j], id, frame_id});
  }

  // Particle updates for filters that existed before this frame.
  last_ids_.resize(num_filters);
  for (std::size_t k = 0; k < num_filters; ++k) {
    last_ids_[k] = filters_[k].track_id;
    TrackFilter& f = filters_[k];
    f.particles.push(proposed[k]);
    f.observations.erase(f.observations.begin());
    const std::size_t j = match.detection_of_filter[k];
    if (j != kUnmatched) {
      f.observations.push_back(detections[j]);
      const std::vector<double> oks_values = pair_oks(detections[j], proposed[k], config_.oks);
      f.particles.set_weights(elite_weights(oks_values, config_.smc.eliteness));
      f.particles = resample(f.particles, f.rng, config_.smc.resampling);
      f.particles = select_mixture(f.particles, f.observations, config_.smc.alpha, f.rng);
      f.lifetime = std::min(f.lifetime + 1, config_.max_lifetime);
    } else {
      f.observations.push_back(Pose::invisible(f.particles.num_keypoints()));
      f.lifetime -= 1;
      if (f.lifetime < 0) f.active = false;
    }
  }
  const auto before = filters_.size();
  std::erase_if(filters_, [](const TrackFilter& f) { return !f.active; });
  stats_.filters_deactivated += before - filters_.size();
  for (TrackFilter& f : created) filters_.push_back(std::move(f));
  stats_.max_active_filters = std::max(stats_.max_active_filters, filters_.size());
  last_proposals_ = std::move(proposed);
  stats_.update_seconds += seconds_since(t0);
  return out;
}

FrameStream track_stream(const FrameStream& detections, const PredictorModel& model,
                         const TrackerConfig& config, RunStats* stats) {
  Tracker tracker(model, config);
  FrameStream out;
  out.meta = detections.meta;
  out.frames.reserve(detections.frames.size());
  for (const Frame& frame : detections.frames) {
    const std::vector<TrackedPose> tracked = tracker.step(frame.poses, frame.frame_id);
    Frame f;
    f.frame_id = frame.frame_id;
    for (const TrackedPose& t : tracked) {
      f.poses.push_back(t.pose);
      f.track_ids.push_back(t.track_id);
    }
    out.frames.push_back(std::move(f));
  }
  if (stats != nullptr) *stats = tracker.stats();
  return out;
}

}  // namespace smcpose
