#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "smcpose/frame_stream.hpp"
#include "smcpose/geometry.hpp"

namespace smcpose {

struct MotCounters {
  std::size_t num_gt = 0;
  std::size_t num_hypotheses = 0;
  std::size_t num_matches = 0;
  std::size_t num_switches = 0;
  std::size_t num_misses = 0;
  std::size_t num_false_positives = 0;

  // 1 - (misses + false positives + switches) / num_gt; 1 when num_gt is 0.
  double mota() const;

  MotCounters& operator+=(const MotCounters& o);
  friend bool operator==(const MotCounters&, const MotCounters&) = default;
};

struct SwitchEvent {
  std::int64_t frame_id = 0;
  std::int64_t gt_id = 0;
  std::int64_t from_id = 0;
  std::int64_t to_id = 0;
  std::size_t gap = 0;  // frames since the identity was last assigned; 1 when continuous

  friend bool operator==(const SwitchEvent&, const SwitchEvent&) = default;
};

struct EvalReport {
  MotCounters total;                     // pose level
  std::vector<MotCounters> per_keypoint;  // keypoint level
  std::vector<SwitchEvent> switches;      // pose-level switch log
  std::size_t num_frames = 0;

  EvalReport& operator+=(const EvalReport& o);
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct EvalConfig {
  OksParams oks;  // empty kappas: defaults for the stream's keypoint count
  double assign_threshold = 0.5;
  // A matched pair's keypoint counts as found when within this fraction of
  // the ground-truth scale.
  double keypoint_distance_ratio = 0.25;
};

// Both streams must list the same frame ids in the same order, and both
// must carry track ids.
EvalReport evaluate(const FrameStream& output, const FrameStream& ground_truth,
                    const EvalConfig& config = {});

// "key: value" lines, pose-level counters first, then one block per keypoint.
void write_report(const EvalReport& report, std::ostream& out);

// Tab-separated: one header row, one row for the pose level and one per keypoint.
void write_report_table(const EvalReport& report, std::ostream& out);

}  // namespace smcpose
