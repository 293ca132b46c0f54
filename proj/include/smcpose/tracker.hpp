#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "smcpose/frame_stream.hpp"
#include "smcpose/geometry.hpp"
#include "smcpose/predictor.hpp"
#include "smcpose/random.hpp"
#include "smcpose/smc.hpp"

namespace smcpose {

inline constexpr std::size_t kUnmatched = std::numeric_limits<std::size_t>::max();

enum class MatchAlgorithm { Greedy, Optimal };

struct TrackerConfig {
  SmcConfig smc;
  ProposalOptions proposal;
  std::size_t max_filters = 100;
  double match_threshold = 0.3;
  int initial_lifetime = 1;
  int max_lifetime = 30;
  OksParams oks;  // empty kappas: OksParams::defaults(K) on the first frame
  MatchAlgorithm matching = MatchAlgorithm::Greedy;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrackFilter {
  std::int64_t track_id = 0;
  ParticleSet particles;
  PoseQueue observations;  // matched detections, invisible where unmatched
  int lifetime = 0;
  bool active = true;
  Rng rng;
};

struct TrackedPose {
  Pose pose;
  std::int64_t track_id = 0;
  std::int64_t frame_id = 0;
};

struct RunStats {
  std::size_t frames = 0;
  std::size_t detections = 0;
  std::size_t filters_created = 0;
  std::size_t filters_deactivated = 0;
  std::size_t overflow_events = 0;  // detections emitted without a filter at F_max
  std::size_t max_active_filters = 0;
  std::size_t filter_frames = 0;  // sum over frames of active filters at predict time
  double predict_seconds = 0.0;
  double score_seconds = 0.0;
  double match_seconds = 0.0;
  double update_seconds = 0.0;

  double total_seconds() const {
    return predict_seconds + score_seconds + match_seconds + update_seconds;
  }
  double frames_per_second() const {
    const double t = total_seconds();
    return t > 0.0 ? static_cast<double>(frames) / t : 0.0;
  }
};

// Row-major C x F matrix of pair scores.
struct ScoreMatrix {
  std::size_t rows = 0;  // detections
  std::size_t cols = 0;  // filters
  std::vector<double> values;

  double operator()(std::size_t j, std::size_t k) const { return values[j * cols + k]; }
};

// Mean of the top elite_count(P, e) values.
double elite_mean(std::span<const double> values, double eliteness);

// score(j, k) is the elite mean of OKS(detection j, particle n of filter k) over n.
ScoreMatrix score_matrix(std::span<const std::vector<Pose>> predicted,
                         std::span<const Pose> detections, double eliteness,
                         const OksParams& params);

struct Assignment {
  std::vector<std::size_t> filter_of_detection;  // kUnmatched when none
  std::vector<std::size_t> detection_of_filter;  // kUnmatched when none
};

// Repeatedly takes the largest remaining score >= threshold; ties go to the
// lower detection index, then the lower filter index.
Assignment greedy_match(const ScoreMatrix& scores, double threshold);

// Maximum total score over pairs >= threshold.
Assignment optimal_match(const ScoreMatrix& scores, double threshold);

class Tracker {
 public:
  Tracker(const PredictorModel& model, TrackerConfig config);

  // Processes one frame of detections and returns one tracked pose per
  // detection, in detection order.
  std::vector<TrackedPose> step(std::span<const Pose> detections, std::int64_t frame_id);

  const std::vector<TrackFilter>& filters() const { return filters_; }  // active only
  std::size_t num_active() const { return filters_.size(); }
  std::int64_t next_track_id() const { return next_id_; }
  const RunStats& stats() const { return stats_; }
  const TrackerConfig& config() const { return config_; }

  // Proposals and scores of the most recent step, one entry per filter that
  // was active before it.
  const std::vector<std::vector<Pose>>& last_proposals() const { return last_proposals_; }
  const std::vector<std::int64_t>& last_proposal_ids() const { return last_ids_; }
  const ScoreMatrix& last_scores() const { return last_scores_; }

 private:
  const PredictorModel* model_;
  TrackerConfig config_;
  std::vector<TrackFilter> filters_;
  std::int64_t next_id_ = 0;
  std::size_t num_keypoints_ = 0;
  RunStats stats_;
  std::vector<std::vector<Pose>> last_proposals_;
  std::vector<std::int64_t> last_ids_;
  ScoreMatrix last_scores_;
};

// Runs a tracker over every frame; the result carries track ids.
FrameStream track_stream(const FrameStream& detections, const PredictorModel& model,
                         const TrackerConfig& config, RunStats* stats = nullptr);

}  // namespace smcpose
