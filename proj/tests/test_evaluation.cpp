#include <sstream>

#include "doctest.h"
#include "smcpose/error.hpp"
#include "smcpose/evaluation.hpp"
#include "smcpose/random.hpp"

using namespace smcpose;

namespace {

Pose person(double x, double y, std::size_t k = 4) {
  Pose p(k);
  for (std::size_t i = 0; i < k; ++i) p.keypoints[i] = {x + 5.0 * i, y + 7.0 * i, true, 1.0};
  p.scale = 50.0;
  p.score = 1.0;
  return p;
}

// Two people side by side for `frames` frames, both moving right.
FrameStream two_tracks(std::size_t frames) {
  FrameStream s;
  s.meta.num_keypoints = 4;
  for (std::size_t f = 0; f < frames; ++f) {
    Frame fr;
    fr.frame_id = static_cast<std::int64_t>(f);
    fr.poses = {person(10.0 + 2.0 * f, 50.0), person(10.0 + 2.0 * f, 250.0)};
    fr.track_ids = {1, 2};
    s.frames.push_back(fr);
  }
  return s;
}

// Brute-force CLEAR-MOT switch count for streams whose poses are matched by
// index: each GT identity's matched hypothesis id per frame, counting changes
// against the last assigned id.
std::size_t brute_switches(const FrameStream& hyp, const FrameStream& gt) {
  std::size_t switches = 0;
  for (std::size_t g = 0; g < 2; ++g) {
    std::int64_t last = -1;
    for (std::size_t f = 0; f < gt.frames.size(); ++f) {
      const std::int64_t id = hyp.frames[f].track_ids[g];
      if (last >= 0 && id != last) ++switches;
      last = id;
    }
  }
  return switches;
}

}  // namespace

TEST_CASE("perfect output scores MOTA one") {
  const FrameStream gt = two_tracks(20);
  const EvalReport r = evaluate(gt, gt);
  CHECK(r.total.num_switches == 0);
  CHECK(r.total.num_misses == 0);
  CHECK(r.total.num_false_positives == 0);
  CHECK(r.total.num_matches == 40);
  CHECK(r.total.num_gt == 40);
  CHECK(r.total.mota() == 1.0);
  REQUIRE(r.per_keypoint.size() == 4);
  for (const MotCounters& c : r.per_keypoint) {
    CHECK(c.num_gt == 40);
    CHECK(c.num_matches == 40);
    CHECK(c.mota() == 1.0);
  }
}

TEST_CASE("a single identity swap costs two switches") {
  const FrameStream gt = two_tracks(20);
  FrameStream hyp = gt;
  for (std::size_t f = 10; f < 20; ++f) hyp.frames[f].track_ids = {2, 1};
  const EvalReport r = evaluate(hyp, gt);
  CHECK(r.total.num_switches == 2);
  CHECK(brute_switches(hyp, gt) == 2);
  CHECK(r.total.mota() == doctest::Approx(1.0 - 2.0 / 40.0));
  REQUIRE(r.switches.size() == 2);
  CHECK(r.switches[0].frame_id == 10);
  CHECK(r.switches[0].gap == 1);
  CHECK(r.per_keypoint[0].num_switches == 2);
}

TEST_CASE("empty output misses everything") {
  const FrameStream gt = two_tracks(10);
  FrameStream hyp = gt;
  for (Frame& f : hyp.frames) {
    f.poses.clear();
    f.track_ids.clear();
  }
  const EvalReport r = evaluate(hyp, gt);
  CHECK(r.total.num_misses == 20);
  CHECK(r.total.mota() == 0.0);
}

TEST_CASE("switch memory persists across gaps") {
  const FrameStream gt = two_tracks(12);
  FrameStream hyp = gt;
  // Identity 1 is missed for frames 4..6 and returns under a new id.
  for (std::size_t f = 4; f < 7; ++f) {
    hyp.frames[f].poses.erase(hyp.frames[f].poses.begin());
    hyp.frames[f].track_ids.erase(hyp.frames[f].track_ids.begin());
  }
  for (std::size_t f = 7; f < 12; ++f) hyp.frames[f].track_ids[0] = 9;
  const EvalReport r = evaluate(hyp, gt);
  CHECK(r.total.num_switches == 1);
  CHECK(r.total.num_misses == 3);
  REQUIRE(r.switches.size() == 1);
  CHECK(r.switches[0].gap == 4);
  CHECK(r.switches[0].from_id == 1);
  CHECK(r.switches[0].to_id == 9);
}

TEST_CASE("false positives and far hypotheses") {
  const FrameStream gt = two_tracks(5);
  FrameStream hyp = gt;
  for (Frame& f : hyp.frames) {
    f.poses.push_back(person(500, 400));
    f.track_ids.push_back(77);
  }
  const EvalReport r = evaluate(hyp, gt);
  CHECK(r.total.num_false_positives == 5);
  CHECK(r.total.num_matches == 10);
  CHECK(r.per_keypoint[2].num_false_positives == 5);
}

TEST_CASE("a keypoint beyond the distance limit is a keypoint miss") {
  FrameStream gt = two_tracks(3);
  FrameStream hyp = gt;
  // 0.25 * 50 = 12.5 px limit.
  hyp.frames[1].poses[0].keypoints[3].x += 13.0;
  hyp.frames[2].poses[0].keypoints[3].x += 12.0;
  const EvalReport r = evaluate(hyp, gt);
  CHECK(r.total.num_misses == 0);
  CHECK(r.per_keypoint[3].num_misses == 1);
  CHECK(r.per_keypoint[3].num_false_positives == 1);
  CHECK(r.per_keypoint[0].num_misses == 0);
}

TEST_CASE("equal scores prefer continuing identities") {
  // Two hypotheses coincide with one ground truth; the earlier id continues.
  FrameStream gt;
  gt.meta.num_keypoints = 4;
  FrameStream hyp = gt;
  for (std::int64_t f = 0; f < 4; ++f) {
    gt.frames.push_back(Frame{f, {person(0, 0)}, {5}});
    if (f == 0) {
      hyp.frames.push_back(Frame{f, {person(0, 0)}, {3}});
    } else {
      hyp.frames.push_back(Frame{f, {person(0, 0), person(0, 0)}, {8, 3}});
    }
  }
  const EvalReport r = evaluate(hyp, gt);
  CHECK(r.total.num_switches == 0);
  CHECK(r.total.num_false_positives == 3);
}

TEST_CASE("relabeling hypothesis ids leaves counters unchanged") {
  Rng rng = make_rng(31);
  const FrameStream gt = two_tracks(30);
  for (int trial = 0; trial < 20; ++trial) {
    FrameStream hyp = gt;
    for (Frame& f : hyp.frames) {
      for (auto& id : f.track_ids) {
        if (uniform01(rng) < 0.1) id = 10 + static_cast<std::int64_t>(uniform01(rng) * 3);
      }
      if (f.track_ids[0] == f.track_ids[1]) f.track_ids[1] = 99;
      if (uniform01(rng) < 0.2) {
        f.poses.pop_back();
        f.track_ids.pop_back();
      }
    }
    FrameStream relabeled = hyp;
    for (Frame& f : relabeled.frames) {
      for (auto& id : f.track_ids) id = 1000 - 7 * id;
    }
    const EvalReport a = evaluate(hyp, gt);
    const EvalReport b = evaluate(relabeled, gt);
    CHECK(a.total == b.total);
    CHECK(a.per_keypoint == b.per_keypoint);
  }
}

TEST_CASE("constant assignment means zero switches") {
  const FrameStream gt = two_tracks(25);
  FrameStream hyp = gt;
  for (Frame& f : hyp.frames) f.track_ids = {40, 41};
  CHECK(evaluate(hyp, gt).total.num_switches == 0);
}

TEST_CASE("evaluate rejects mismatched streams") {
  const FrameStream gt = two_tracks(5);
  FrameStream shifted = gt;
  shifted.frames[2].frame_id = 50;
  shifted.frames[3].frame_id = 51;
  shifted.frames[4].frame_id = 52;
  CHECK_THROWS_AS(evaluate(shifted, gt), InvalidArgument);
  CHECK_THROWS_AS(evaluate(two_tracks(4), gt), InvalidArgument);
  FrameStream no_ids = gt;
  for (Frame& f : no_ids.frames) f.track_ids.clear();
  CHECK_THROWS_AS(evaluate(no_ids, gt), InvalidArgument);
}

TEST_CASE("reports are written as key-value and tab-separated text") {
  const FrameStream gt = two_tracks(4);
  const EvalReport r = evaluate(gt, gt);
  std::ostringstream kv, tsv;
  write_report(r, kv);
  write_report_table(r, tsv);
  CHECK(kv.str().find("num_switches: 0\n") != std::string::npos);
  CHECK(kv.str().find("keypoint.3.num_gt: 8\n") != std::string::npos);
  std::size_t lines = 0;
  for (char ch : tsv.str()) lines += ch == '\n';
  CHECK(lines == 1 + 1 + 4);
}

TEST_CASE("counters add up over sequences") {
  const FrameStream gt = two_tracks(6);
  EvalReport sum = evaluate(gt, gt);
  sum += evaluate(gt, gt);
  CHECK(sum.total.num_gt == 24);
  CHECK(sum.num_frames == 12);
  CHECK(sum.per_keypoint[1].num_matches == 24);
}
