#include <cmath>
#include <set>

#include "doctest.h"
#include "smcpose/error.hpp"
#include "smcpose/scenes.hpp"

using namespace smcpose;

namespace {

SceneConfig quiet_scene(std::uint64_t seed) {
  SceneConfig c;
  c.seed = seed;
  c.num_people = 4;
  c.num_frames = 120;
  c.occlusion_prob = 0.0;
  c.crossing_occlusion_prob = 0.0;
  return c;
}

}  // namespace

TEST_CASE("noise-free detector reproduces the ground truth") {
  SceneConfig c = quiet_scene(1);
  c.jitter_base = 0.0;
  c.jitter_per_speed = 0.0;
  c.occlusion_prob = 0.02;
  const Scene s = simulate(c);
  REQUIRE(s.detections.frames.size() == s.ground_truth.frames.size());
  CHECK_FALSE(s.detections.has_track_ids());
  for (std::size_t f = 0; f < s.detections.frames.size(); ++f) {
    const Frame& d = s.detections.frames[f];
    const Frame& g = s.ground_truth.frames[f];
    CHECK(d.frame_id == g.frame_id);
    REQUIRE(d.poses.size() == g.poses.size());
    for (std::size_t j = 0; j < d.poses.size(); ++j) {
      CHECK(d.poses[j].keypoints.size() == g.poses[j].keypoints.size());
      for (std::size_t k = 0; k < d.poses[j].size(); ++k) {
        CHECK(d.poses[j].keypoints[k].x == g.poses[j].keypoints[k].x);
        CHECK(d.poses[j].keypoints[k].y == g.poses[j].keypoints[k].y);
        CHECK(d.poses[j].keypoints[k].visible == g.poses[j].keypoints[k].visible);
      }
      CHECK(d.poses[j].scale == g.poses[j].scale);
    }
  }
}

TEST_CASE("same seed gives identical scenes") {
  SceneConfig c;
  c.seed = 2;
  c.false_positives = 0.5;
  c.miss_prob = 0.05;
  const Scene a = simulate(c);
  const Scene b = simulate(c);
  CHECK(a.detections == b.detections);
  CHECK(a.ground_truth == b.ground_truth);
  c.seed = 3;
  CHECK_FALSE(simulate(c).ground_truth == a.ground_truth);
}

TEST_CASE("without occlusion every person and keypoint is visible throughout") {
  const Scene s = simulate(quiet_scene(4));
  for (const Frame& f : s.ground_truth.frames) {
    REQUIRE(f.poses.size() == 4);
    for (const Pose& p : f.poses) CHECK(p.num_visible() == 17);
  }
}

TEST_CASE("identities survive occlusion gaps") {
  SceneConfig c;
  c.seed = 5;
  c.num_people = 6;
  c.occlusion_prob = 0.03;
  const Scene s = simulate(c);
  std::set<std::int64_t> ids;
  std::size_t gaps = 0;
  std::vector<int> last_seen(6, -1);
  for (std::size_t f = 0; f < s.ground_truth.frames.size(); ++f) {
    for (std::int64_t id : s.ground_truth.frames[f].track_ids) {
      ids.insert(id);
      if (last_seen[id] >= 0 && last_seen[id] + 1 < static_cast<int>(f)) ++gaps;
      last_seen[id] = static_cast<int>(f);
    }
  }
  CHECK(ids.size() == 6);
  CHECK(*ids.rbegin() == 5);
  CHECK(gaps > 0);
}

TEST_CASE("occlusion windows last between the configured bounds") {
  SceneConfig c;
  c.seed = 6;
  c.num_people = 5;
  c.num_frames = 400;
  c.occlusion_prob = 0.02;
  c.crossing_occlusion_prob = 0.0;
  const Scene s = simulate(c);
  std::vector<int> last_seen(5, -1);
  std::size_t windows = 0;
  for (std::size_t f = 0; f < s.ground_truth.frames.size(); ++f) {
    for (std::int64_t id : s.ground_truth.frames[f].track_ids) {
      const int gap = static_cast<int>(f) - last_seen[id] - 1;
      if (last_seen[id] >= 0 && gap > 0) {
        ++windows;
        // Back-to-back windows can merge.
        CHECK(gap >= 5);
      }
      last_seen[id] = static_cast<int>(f);
    }
  }
  CHECK(windows > 3);
}

TEST_CASE("coordinates stay inside the image") {
  SceneConfig c;
  c.seed = 7;
  c.camera_pan = 3.0;
  c.false_positives = 1.0;
  const Scene s = simulate(c);
  for (const FrameStream* st : {&s.ground_truth, &s.detections}) {
    for (const Frame& f : st->frames) {
      for (const Pose& p : f.poses) {
        for (const Keypoint& k : p.keypoints) {
          if (!k.visible) continue;
          CHECK(k.x >= 0.0);
          CHECK(k.x <= 640.0);
          CHECK(k.y >= 0.0);
          CHECK(k.y <= 480.0);
        }
      }
    }
  }
}

TEST_CASE("crossings are guaranteed for multi-person scenes") {
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    SceneConfig c;
    c.seed = seed;
    c.num_people = 2;
    const Scene s = simulate(c);
    CHECK(s.crossings >= 1);
    CHECK(s.attempts >= 1);
    CHECK(s.ground_truth.meta.extra["crossings"] == s.crossings);
  }
}

TEST_CASE("detector jitter grows with keypoint speed") {
  SceneConfig c = quiet_scene(8);
  c.num_frames = 300;
  c.jitter_base = 0.5;
  c.jitter_per_speed = 0.5;
  const Scene s = simulate(c);
  // Compare squared residuals of slow and fast keypoints.
  double slow_sum = 0, fast_sum = 0;
  std::size_t slow_n = 0, fast_n = 0;
  for (std::size_t f = 1; f < s.ground_truth.frames.size(); ++f) {
    const Frame& g = s.ground_truth.frames[f];
    const Frame& prev = s.ground_truth.frames[f - 1];
    const Frame& d = s.detections.frames[f];
    for (std::size_t j = 0; j < g.poses.size(); ++j) {
      for (std::size_t k = 0; k < 17; ++k) {
        const Keypoint& gk = g.poses[j].keypoints[k];
        const Keypoint& pk = prev.poses[j].keypoints[k];
        const Keypoint& dk = d.poses[j].keypoints[k];
        const double speed = std::hypot(gk.x - pk.x, gk.y - pk.y);
        const double r2 = (dk.x - gk.x) * (dk.x - gk.x) + (dk.y - gk.y) * (dk.y - gk.y);
        if (speed < 2.0) {
          slow_sum += r2;
          ++slow_n;
        } else if (speed > 5.0) {
          fast_sum += r2;
          ++fast_n;
        }
      }
    }
  }
  REQUIRE(slow_n > 100);
  REQUIRE(fast_n > 100);
  CHECK(fast_sum / fast_n > 2.0 * slow_sum / slow_n);
}

TEST_CASE("detector misses and false positives") {
  SceneConfig c = quiet_scene(9);
  c.miss_prob = 1.0;
  c.false_positives = 2.0;
  const Scene s = simulate(c);
  std::size_t fps = 0;
  for (const Frame& f : s.detections.frames) fps += f.poses.size();
  CHECK(fps == doctest::Approx(2.0 * 120).epsilon(0.25));
  for (const Frame& f : s.labelled_detections.frames) CHECK(f.poses.empty());
  c.miss_prob = 0.0;
  c.false_positives = 0.0;
  const Scene clean = simulate(c);
  for (std::size_t f = 0; f < clean.detections.frames.size(); ++f) {
    CHECK(clean.detections.frames[f].poses == clean.labelled_detections.frames[f].poses);
  }
}

TEST_CASE("scene config validation and JSON") {
  SceneConfig c;
  c.miss_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = SceneConfig{};
  c.occlusion_min = 10;
  c.occlusion_max = 5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);

  SceneConfig d;
  d.seed = 99;
  d.camera_pan = 2.5;
  const SceneConfig back = SceneConfig::from_json(d.to_json(), SceneConfig{});
  CHECK(back.to_json() == d.to_json());
  CHECK_THROWS_AS(SceneConfig::from_json(nlohmann::json{{"bogus", 1}}, SceneConfig{}), FormatError);
  const SceneConfig partial = SceneConfig::from_json(nlohmann::json{{"num_people", 3}}, d);
  CHECK(partial.num_people == 3);
  CHECK(partial.seed == 99);
}

TEST_CASE("motion samples carry their true noise scale") {
  MotionSampleConfig mc;
  mc.count = 2000;
  mc.history_len = 5;
  mc.noise_base = 0.5;
  mc.noise_per_speed = 0.5;
  std::vector<double> sigma;
  const auto pairs = motion_samples(mc, 3, &sigma);
  REQUIRE(pairs.size() == 2000);
  REQUIRE(sigma.size() == 2000);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& h = pairs[i].history;
    REQUIRE(h.steps.size() == 5);
    const double vx = h.steps[4].dx - h.steps[3].dx;
    const double vy = h.steps[4].dy - h.steps[3].dy;
    CHECK(sigma[i] == doctest::Approx(0.5 + 0.5 * std::hypot(vx, vy)));
  }
}

TEST_CASE("skeleton template") {
  CHECK(skeleton_template(17).size() == 17);
  CHECK(skeleton_template(5).size() == 5);
}
