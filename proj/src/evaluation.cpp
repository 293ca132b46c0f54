#include "smcpose/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "smcpose/error.hpp"

namespace smcpose {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct Candidate {
  double score;
  bool continues;
  std::size_t g;
  std::size_t h;
};

// Per-identity switch bookkeeping: last hypothesis id assigned to each
// ground-truth id, kept across frames where the identity is unassigned.
class SwitchCounter {
 public:
  struct Last {
    std::int64_t hyp_id;
    std::size_t frame_index;
  };

  // Returns the previous assignment when this one differs from it.
  std::optional<Last> update(std::int64_t gt_id, std::int64_t hyp_id, std::size_t frame_index) {
    auto [it, inserted] = last_.try_emplace(gt_id, Last{hyp_id, frame_index});
    if (inserted) return std::nullopt;
    const Last prev = it->second;
    it->second = Last{hyp_id, frame_index};
    if (prev.hyp_id == hyp_id) return std::nullopt;
    return prev;
  }
  const std::int64_t* last(std::int64_t gt_id) const {
    auto it = last_.find(gt_id);
    return it == last_.end() ? nullptr : &it->second.hyp_id;
  }

 private:
  std::map<std::int64_t, Last> last_;
};

}  // namespace

double MotCounters::mota() const {
  if (num_gt == 0) return 1.0;
  return 1.0 - static_cast<double>(num_misses + num_false_positives + num_switches) /
                   static_cast<double>(num_gt);
}

MotCounters& MotCounters::operator+=(const MotCounters& o) {
  num_gt += o.num_gt;
  num_hypotheses += o.num_hypotheses;
  num_matches += o.num_matches;
  num_switches += o.num_switches;
  num_misses += o.num_misses;
  num_false_positives += o.num_false_positives;
  return *this;
}

EvalReport& EvalReport::operator+=(const EvalReport& o) {
  total += o.total;
  if (per_keypoint.size() < o.per_keypoint.size()) per_keypoint.resize(o.per_keypoint.size());
  for (std::size_t i = 0; i < o.per_keypoint.size(); ++i) per_keypoint[i] += o.per_keypoint[i];
  switches.insert(switches.end(), o.switches.begin(), o.switches.end());
  num_frames += o.num_frames;
  return *this;
}

EvalReport evaluate(const FrameStream& output, const FrameStream& ground_truth,
                    const EvalConfig& config) {
  if (output.frames.size() != ground_truth.frames.size()) {
    throw InvalidArgument("evaluate: output has " + std::to_string(output.frames.size()) +
                          " frames, ground truth has " +
                          std::to_string(ground_truth.frames.size()));
  }
  if (!ground_truth.has_track_ids()) throw InvalidArgument("evaluate: ground truth lacks track ids");
  if (!output.has_track_ids()) throw InvalidArgument("evaluate: output lacks track ids");
  const std::size_t num_kp = ground_truth.meta.num_keypoints;
  if (output.meta.num_keypoints != num_kp) {
    throw InvalidArgument("evaluate: keypoint count differs between output and ground truth");
  }
  OksParams params = config.oks;
  if (params.kappas.empty()) {
    const OksParams d = OksParams::defaults(num_kp);
    params.kappas = d.kappas;
  }

  EvalReport report;
  report.per_keypoint.resize(num_kp);
  report.num_frames = ground_truth.frames.size();
  SwitchCounter pose_switches;
  std::vector<SwitchCounter> kp_switches(num_kp);

  for (std::size_t f = 0; f < ground_truth.frames.size(); ++f) {
    const Frame& gt = ground_truth.frames[f];
    const Frame& hyp = output.frames[f];
    if (gt.frame_id != hyp.frame_id) {
      throw InvalidArgument("evaluate: frame id mismatch at index " + std::to_string(f) +
                            " (output " + std::to_string(hyp.frame_id) + ", ground truth " +
                            std::to_string(gt.frame_id) + ")");
    }
    for (const Pose& p : gt.poses) {
      if (p.size() != num_kp) throw InvalidArgument("evaluate: ground-truth keypoint count");
    }
    for (const Pose& p : hyp.poses) {
      if (p.size() != num_kp) throw InvalidArgument("evaluate: output keypoint count");
    }

    std::vector<Candidate> cands;
    for (std::size_t g = 0; g < gt.poses.size(); ++g) {
      const std::int64_t* prev = pose_switches.last(gt.track_ids[g]);
      for (std::size_t h = 0; h < hyp.poses.size(); ++h) {
        const double s = oks(gt.poses[g], hyp.poses[h], params);
        if (s < config.assign_threshold || s <= 0.0) continue;
        cands.push_back({s, prev != nullptr && *prev == hyp.track_ids[h], g, h});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.continues != b.continues) return a.continues;
      if (a.g != b.g) return a.g < b.g;
      return a.h < b.h;
    });
    std::vector<std::size_t> hyp_of_gt(gt.poses.size(), kNone);
    std::vector<std::size_t> gt_of_hyp(hyp.poses.size(), kNone);
    for (const Candidate& c : cands) {
      if (hyp_of_gt[c.g] != kNone || gt_of_hyp[c.h] != kNone) continue;
      hyp_of_gt[c.g] = c.h;
      gt_of_hyp[c.h] = c.g;
    }

    MotCounters& tot = report.total;
    tot.num_gt += gt.poses.size();
    tot.num_hypotheses += hyp.poses.size();
    for (std::size_t g = 0; g < gt.poses.size(); ++g) {
      const std::size_t h = hyp_of_gt[g];
      if (h == kNone) {
        ++tot.num_misses;
        continue;
      }
      ++tot.num_matches;
      if (auto prev = pose_switches.update(gt.track_ids[g], hyp.track_ids[h], f)) {
        ++tot.num_switches;
        report.switches.push_back(
            {gt.frame_id, gt.track_ids[g], prev->hyp_id, hyp.track_ids[h], f - prev->frame_index});
      }
    }
    for (std::size_t h = 0; h < hyp.poses.size(); ++h) {
      if (gt_of_hyp[h] == kNone) ++tot.num_false_positives;
    }

    // Keypoint level: a visible ground-truth keypoint is found when its
    // pose is matched and the hypothesis keypoint lies within the distance.
    for (std::size_t i = 0; i < num_kp; ++i) {
      MotCounters& kc = report.per_keypoint[i];
      std::vector<bool> hyp_used(hyp.poses.size(), false);
      for (std::size_t g = 0; g < gt.poses.size(); ++g) {
        const Keypoint& gk = gt.poses[g].keypoints[i];
        if (!gk.visible) continue;
        ++kc.num_gt;
        const std::size_t h = hyp_of_gt[g];
        bool found = false;
        if (h != kNone) {
          const Keypoint& hk = hyp.poses[h].keypoints[i];
          const double limit = config.keypoint_distance_ratio *
                               std::max(gt.poses[g].scale, params.scale_floor);
          found = hk.visible && std::hypot(hk.x - gk.x, hk.y - gk.y) <= limit;
        }
        if (!found) {
          ++kc.num_misses;
          continue;
        }
        hyp_used[h] = true;
        ++kc.num_matches;
        if (kp_switches[i].update(gt.track_ids[g], hyp.track_ids[h], f)) ++kc.num_switches;
      }
      for (std::size_t h = 0; h < hyp.poses.size(); ++h) {
        if (!hyp.poses[h].keypoints[i].visible) continue;
        ++kc.num_hypotheses;
        if (!hyp_used[h]) ++kc.num_false_positives;
      }
    }
  }
  return report;
}

void write_report(const EvalReport& report, std::ostream& out) {
  auto block = [&out](const std::string& prefix, const MotCounters& c) {
    out << prefix << "num_gt: " << c.num_gt << '\n'
        << prefix << "num_hypotheses: " << c.num_hypotheses << '\n'
        << prefix << "num_matches: " << c.num_matches << '\n'
        << prefix << "num_switches: " << c.num_switches << '\n'
        << prefix << "num_misses: " << c.num_misses << '\n'
        << prefix << "num_false_positives: " << c.num_false_positives << '\n'
        << prefix << "mota: " << c.mota() << '\n';
  };
  out << "num_frames: " << report.num_frames << '\n';
  block("", report.total);
  for (std::size_t i = 0; i < report.per_keypoint.size(); ++i) {
    block("keypoint." + std::to_string(i) + ".", report.per_keypoint[i]);
  }
}

void write_report_table(const EvalReport& report, std::ostream& out) {
  out << "level\tnum_gt\tnum_hypotheses\tnum_matches\tnum_switches\tnum_misses\t"
         "num_false_positives\tmota\n";
  auto row = [&out](const std::string& level, const MotCounters& c) {
    out << level << '\t' << c.num_gt << '\t' << c.num_hypotheses << '\t' << c.num_matches << '\t'
        << c.num_switches << '\t' << c.num_misses << '\t' << c.num_false_positives << '\t'
        << c.mota() << '\n';
  };
  row("pose", report.total);
  for (std::size_t i = 0; i < report.per_keypoint.size(); ++i) {
    row("keypoint_" + std::to_string(i), report.per_keypoint[i]);
  }
}

}  // namespace smcpose
