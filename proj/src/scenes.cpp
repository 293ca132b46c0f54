#include "smcpose/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "json_fields.hpp"
#include "smcpose/error.hpp"
#include "smcpose/random.hpp"

namespace smcpose {

namespace {

using nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// COCO order: nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles.
constexpr std::pair<double, double> kCocoTemplate[17] = {
    {0.00, -0.72}, {0.05, -0.75},  {-0.05, -0.75}, {0.10, -0.74}, {-0.10, -0.74}, {0.19, -0.51},
    {-0.19, -0.51}, {0.26, -0.27}, {-0.26, -0.27}, {0.29, -0.05}, {-0.29, -0.05}, {0.13, 0.00},
    {-0.13, 0.00}, {0.14, 0.38},   {-0.14, 0.38},  {0.14, 0.74},  {-0.14, 0.74}};
constexpr double kCocoSway[17] = {0.0, 0.3, 0.3, 0.3, 0.3, 0.5, 0.5, 1.0, 1.0,
                                  1.5, 1.5, 0.3, 0.3, 1.0, 1.0, 1.5, 1.5};

std::vector<double> sway_weights(std::size_t k) {
  if (k == 17) return {std::begin(kCocoSway), std::end(kCocoSway)};
  std::vector<double> w(k, 1.0);
  w[0] = 0.0;
  return w;
}

struct Person {
  double x = 0.0, y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  double scale = 0.0;
  double sway_freq = 0.0;
  std::vector<double> phase;
  std::size_t occluded_until = 0;  // exclusive frame index
};

struct Bounds {
  double x_lo, x_hi, y_lo, y_hi;
};

Bounds root_bounds(const std::vector<std::pair<double, double>>& tmpl, double scale,
                   double sway, int width, int height) {
  double left = 0, right = 0, top = 0, bottom = 0;
  for (auto [tx, ty] : tmpl) {
    left = std::min(left, tx);
    right = std::max(right, tx);
    top = std::min(top, ty);
    bottom = std::max(bottom, ty);
  }
  const double pad = 1.5 * sway * scale + 1.0;
  Bounds b{-left * scale + pad, width - right * scale - pad, -top * scale + pad,
           height - bottom * scale - pad};
  if (b.x_lo >= b.x_hi || b.y_lo >= b.y_hi) {
    throw InvalidArgument("scene: image too small for the largest pose scale");
  }
  return b;
}

std::size_t occlusion_length(const SceneConfig& c, double u) {
  const std::size_t span = c.occlusion_max - c.occlusion_min + 1;
  return c.occlusion_min + std::min(static_cast<std::size_t>(u * static_cast<double>(span)), span - 1);
}

double reflect(double v, double lo, double hi, bool& flipped) {
  flipped = false;
  for (int i = 0; i < 8 && (v < lo || v > hi); ++i) {
    v = v < lo ? 2 * lo - v : 2 * hi - v;
    flipped = !flipped;
  }
  return std::clamp(v, lo, hi);
}

Pose render(const std::vector<std::pair<double, double>>& tmpl, const std::vector<double>& weights,
            double x, double y, double scale, double sway, double angle,
            const std::vector<double>& phase) {
  Pose p(tmpl.size());
  p.scale = scale;
  p.score = 1.0;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const double a = angle + phase[i];
    const double amp = sway * weights[i] * scale;
    Keypoint& k = p.keypoints[i];
    k.x = x + tmpl[i].first * scale + amp * std::sin(a);
    k.y = y + tmpl[i].second * scale + 0.3 * amp * std::cos(a);
    k.visible = true;
    k.confidence = 1.0;
  }
  return p;
}

StreamMetadata make_meta(const SceneConfig& c, const std::string& kind, std::size_t crossings,
                         std::size_t attempts) {
  StreamMetadata m;
  m.num_keypoints = c.num_keypoints;
  m.image_width = c.image_width;
  m.image_height = c.image_height;
  m.extra = json{{"generator", "smcpose-scene"},
                 {"stream", kind},
                 {"scene", c.to_json()},
                 {"crossings", crossings},
                 {"attempts", attempts}};
  return m;
}

struct Generated {
  std::vector<std::vector<Pose>> truth;  // [frame][person], unoccluded
  std::vector<std::vector<double>> sigma;  // [frame][person * K + k] jitter sigma
  std::vector<std::vector<char>> present;  // [frame][person]
  std::size_t crossings = 0;
};

Generated generate_motion(const SceneConfig& c, Rng& rng) {
  const auto tmpl = skeleton_template(c.num_keypoints);
  const auto weights = sway_weights(c.num_keypoints);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Person> people(c.num_people);
  std::vector<Bounds> bounds;
  for (Person& p : people) {
    p.scale = c.scale_min + (c.scale_max - c.scale_min) * unit(rng);
    const Bounds b = root_bounds(tmpl, p.scale, c.sway, c.image_width, c.image_height);
    bounds.push_back(b);
    p.x = b.x_lo + (b.x_hi - b.x_lo) * unit(rng);
    p.y = b.y_lo + (b.y_hi - b.y_lo) * unit(rng);
    p.heading = kTwoPi * unit(rng);
    p.speed = c.speed_min + (c.speed_max - c.speed_min) * unit(rng);
    p.sway_freq = c.sway_freq_min + (c.sway_freq_max - c.sway_freq_min) * unit(rng);
    p.phase.resize(c.num_keypoints);
    for (double& ph : p.phase) ph = kTwoPi * unit(rng);
  }

  Generated g;
  g.truth.resize(c.num_frames);
  g.sigma.resize(c.num_frames);
  g.present.resize(c.num_frames);
  std::vector<std::vector<char>> close(c.num_people, std::vector<char>(c.num_people, 0));
  std::vector<std::vector<char>> near_now = close;
  for (std::size_t t = 0; t < c.num_frames; ++t) {
    const double pan = c.camera_pan * std::sin(kTwoPi * static_cast<double>(t) / c.pan_period);
    for (std::size_t i = 0; i < c.num_people; ++i) {
      Person& p = people[i];
      if (t > 0) {
        p.heading += c.heading_noise * normal(rng);
        p.speed += c.speed_noise * normal(rng);
        bool ignored = false;
        p.speed = reflect(p.speed, c.speed_min, c.speed_max, ignored);
        bool fx = false, fy = false;
        p.x = reflect(p.x + p.speed * std::cos(p.heading) + pan, bounds[i].x_lo, bounds[i].x_hi, fx);
        p.y = reflect(p.y + p.speed * std::sin(p.heading), bounds[i].y_lo, bounds[i].y_hi, fy);
        if (fx) p.heading = std::numbers::pi - p.heading;
        if (fy) p.heading = -p.heading;
        if (p.occluded_until <= t && unit(rng) < c.occlusion_prob) {
          p.occluded_until = t + occlusion_length(c, unit(rng));
        }
      }
      g.truth[t].push_back(render(tmpl, weights, p.x, p.y, p.scale, c.sway,
                                  p.sway_freq * static_cast<double>(t), p.phase));
      g.present[t].push_back(0);
    }
    for (std::size_t i = 0; i < c.num_people; ++i) {
      const Pose& cur = g.truth[t][i];
      for (std::size_t k = 0; k < c.num_keypoints; ++k) {
        double speed = people[i].speed;
        if (t > 0) {
          const Keypoint& prev = g.truth[t - 1][i].keypoints[k];
          speed = std::hypot(cur.keypoints[k].x - prev.x, cur.keypoints[k].y - prev.y);
        }
        g.sigma[t].push_back(c.jitter_base + c.jitter_per_speed * speed);
      }
      for (std::size_t j = i + 1; j < c.num_people; ++j) {
        const double d = std::hypot(people[i].x - people[j].x, people[i].y - people[j].y);
        const bool near = d < 0.5 * (people[i].scale + people[j].scale);
        if (near && !near_now[i][j] && t > 0 && c.crossing_occlusion_prob > 0.0 &&
            unit(rng) < c.crossing_occlusion_prob) {
          Person& back = people[i].scale < people[j].scale ? people[i] : people[j];
          if (back.occluded_until <= t) back.occluded_until = t + occlusion_length(c, unit(rng));
        }
        near_now[i][j] = near;
        if (near) close[i][j] = 1;
      }
    }
    for (std::size_t i = 0; i < c.num_people; ++i) {
      g.present[t][i] = people[i].occluded_until <= t ? 1 : 0;
    }
  }
  for (const auto& row : close) g.crossings += static_cast<std::size_t>(std::count(row.begin(), row.end(), 1));
  return g;
}

}  // namespace

void SceneConfig::validate() const {
  if (num_people < 1 || num_frames < 1 || num_keypoints < 1) {
    throw InvalidArgument("scene: counts must be >= 1");
  }
  if (image_width < 1 || image_height < 1) throw InvalidArgument("scene: image size must be >= 1");
  if (!(speed_min >= 0.0 && speed_max >= speed_min)) throw InvalidArgument("scene: speed range");
  if (!(scale_min > 0.0 && scale_max >= scale_min)) throw InvalidArgument("scene: scale range");
  if (!(sway >= 0.0)) throw InvalidArgument("scene: sway must be >= 0");
  if (!(jitter_base >= 0.0 && jitter_per_speed >= 0.0)) throw InvalidArgument("scene: jitter");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument(std::string("scene: ") + name + " not in [0, 1]");
  };
  prob(occlusion_prob, "occlusion_prob");
  prob(keypoint_hide_prob, "keypoint_hide_prob");
  prob(miss_prob, "miss_prob");
  prob(crossing_occlusion_prob, "crossing_occlusion_prob");
  if (!(heading_noise >= 0.0 && speed_noise >= 0.0)) throw InvalidArgument("scene: motion noise");
  if (occlusion_min < 1 || occlusion_max < occlusion_min) {
    throw InvalidArgument("scene: occlusion duration range");
  }
  if (!(false_positives >= 0.0)) throw InvalidArgument("scene: false_positives must be >= 0");
  if (!(pan_period > 0.0)) throw InvalidArgument("scene: pan_period must be positive");
  if (max_attempts < 1) throw InvalidArgument("scene: max_attempts must be >= 1");
}

json SceneConfig::to_json() const {
  return json{{"num_people", num_people},
              {"num_frames", num_frames},
              {"num_keypoints", num_keypoints},
              {"image_width", image_width},
              {"image_height", image_height},
              {"speed_min", speed_min},
              {"speed_max", speed_max},
              {"heading_noise", heading_noise},
              {"speed_noise", speed_noise},
              {"scale_min", scale_min},
              {"scale_max", scale_max},
              {"sway", sway},
              {"sway_freq_min", sway_freq_min},
              {"sway_freq_max", sway_freq_max},
              {"jitter_base", jitter_base},
              {"jitter_per_speed", jitter_per_speed},
              {"occlusion_prob", occlusion_prob},
              {"occlusion_min", occlusion_min},
              {"occlusion_max", occlusion_max},
              {"keypoint_hide_prob", keypoint_hide_prob},
              {"crossing_occlusion_prob", crossing_occlusion_prob},
              {"camera_pan", camera_pan},
              {"pan_period", pan_period},
              {"miss_prob", miss_prob},
              {"false_positives", false_positives},
              {"seed", seed},
              {"require_crossing", require_crossing},
              {"max_attempts", max_attempts}};
}

SceneConfig SceneConfig::from_json(const json& j, SceneConfig c) {
  detail::FieldReader r(j, "scene");
  r("num_people", c.num_people)("num_frames", c.num_frames)("num_keypoints", c.num_keypoints)(
      "image_width", c.image_width)("image_height", c.image_height)("speed_min", c.speed_min)(
      "speed_max", c.speed_max)("heading_noise", c.heading_noise)("speed_noise", c.speed_noise)("scale_min", c.scale_min)(
      "scale_max", c.scale_max)("sway", c.sway)("sway_freq_min", c.sway_freq_min)(
      "sway_freq_max", c.sway_freq_max)("jitter_base", c.jitter_base)(
      "jitter_per_speed", c.jitter_per_speed)("occlusion_prob", c.occlusion_prob)(
      "occlusion_min", c.occlusion_min)("occlusion_max", c.occlusion_max)(
      "keypoint_hide_prob", c.keypoint_hide_prob)("crossing_occlusion_prob", c.crossing_occlusion_prob)("camera_pan", c.camera_pan)(
      "pan_period", c.pan_period)("miss_prob", c.miss_prob)("false_positives", c.false_positives)(
      "seed", c.seed)("require_crossing", c.require_crossing)("max_attempts", c.max_attempts);
  r.finish();
  return c;
}

std::vector<std::pair<double, double>> skeleton_template(std::size_t num_keypoints) {
  if (num_keypoints == 17) return {std::begin(kCocoTemplate), std::end(kCocoTemplate)};
  std::vector<std::pair<double, double>> t(num_keypoints);
  t[0] = {0.0, -0.72};
  for (std::size_t i = 1; i < num_keypoints; ++i) {
    const double a = kTwoPi * static_cast<double>(i - 1) / static_cast<double>(num_keypoints - 1);
    t[i] = {0.3 * std::cos(a), 0.6 * std::sin(a)};
  }
  return t;
}

Scene simulate(const SceneConfig& config) {
  config.validate();
  const bool need_crossing =
      config.require_crossing && config.num_people >= 2 && config.num_frames >= 100;
  Generated g;
  std::size_t attempt = 0;
  for (;;) {
    Rng motion = make_rng(config.seed, 2 * attempt);
    g = generate_motion(config, motion);
    ++attempt;
    if (!need_crossing || g.crossings > 0) break;
    if (attempt >= config.max_attempts) {
      throw Error("scene: no crossing after " + std::to_string(attempt) + " attempts");
    }
  }

  Scene scene;
  scene.crossings = g.crossings;
  scene.attempts = attempt;
  scene.detections.meta = make_meta(config, "detections", g.crossings, attempt);
  scene.ground_truth.meta = make_meta(config, "ground_truth", g.crossings, attempt);
  scene.labelled_detections.meta = make_meta(config, "labelled_detections", g.crossings, attempt);

  Rng det = make_rng(config.seed, 2 * (attempt - 1) + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::poisson_distribution<int> fp_count(config.false_positives);
  const auto tmpl = skeleton_template(config.num_keypoints);
  const auto weights = sway_weights(config.num_keypoints);
  const double w = config.image_width;
  const double h = config.image_height;
  const std::size_t num_kp = config.num_keypoints;

  for (std::size_t t = 0; t < config.num_frames; ++t) {
    Frame gt, dets, labelled;
    gt.frame_id = dets.frame_id = labelled.frame_id = static_cast<std::int64_t>(t);
    for (std::size_t i = 0; i < config.num_people; ++i) {
      if (!g.present[t][i]) continue;
      Pose truth = g.truth[t][i];
      for (Keypoint& k : truth.keypoints) {
        if (config.keypoint_hide_prob > 0.0 && unit(det) < config.keypoint_hide_prob) k = Keypoint{};
      }
      if (!truth.any_visible()) continue;
      gt.poses.push_back(truth);
      gt.track_ids.push_back(static_cast<std::int64_t>(i));
      if (config.miss_prob > 0.0 && unit(det) < config.miss_prob) continue;
      Pose d = truth;
      d.score = 0.9;
      for (std::size_t k = 0; k < num_kp; ++k) {
        Keypoint& kp = d.keypoints[k];
        if (!kp.visible) continue;
        const double sigma = g.sigma[t][i * num_kp + k];
        kp.x = std::clamp(kp.x + sigma * normal(det), 0.0, w);
        kp.y = std::clamp(kp.y + sigma * normal(det), 0.0, h);
        kp.confidence = 1.0 / (1.0 + sigma);
      }
      dets.poses.push_back(d);
      labelled.poses.push_back(d);
      labelled.track_ids.push_back(static_cast<std::int64_t>(i));
    }
    const int fps = config.false_positives > 0.0 ? fp_count(det) : 0;
    for (int n = 0; n < fps; ++n) {
      const double scale = config.scale_min + (config.scale_max - config.scale_min) * unit(det);
      const Bounds b = root_bounds(tmpl, scale, config.sway, config.image_width, config.image_height);
      std::vector<double> phase(num_kp);
      for (double& ph : phase) ph = kTwoPi * unit(det);
      Pose fp = render(tmpl, weights, b.x_lo + (b.x_hi - b.x_lo) * unit(det),
                       b.y_lo + (b.y_hi - b.y_lo) * unit(det), scale, config.sway, 0.0, phase);
      fp.score = 0.2 + 0.4 * unit(det);
      for (Keypoint& k : fp.keypoints) {
        k.x = std::clamp(k.x + config.jitter_base * normal(det), 0.0, w);
        k.y = std::clamp(k.y + config.jitter_base * normal(det), 0.0, h);
        k.confidence = 0.5;
      }
      dets.poses.push_back(std::move(fp));
    }
    scene.ground_truth.frames.push_back(std::move(gt));
    scene.detections.frames.push_back(std::move(dets));
    scene.labelled_detections.frames.push_back(std::move(labelled));
  }
  return scene;
}

std::vector<TrainingPair> motion_samples(const MotionSampleConfig& c, std::uint64_t seed,
                                         std::vector<double>* true_sigma) {
  if (c.history_len < 1) throw InvalidArgument("motion_samples: history_len must be >= 1");
  if (!(c.scale > 0.0)) throw InvalidArgument("motion_samples: scale must be positive");
  if (!(c.speed_min >= 0.0 && c.speed_max >= c.speed_min)) {
    throw InvalidArgument("motion_samples: speed range");
  }
  Rng rng = make_rng(seed, 0x5a);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<TrainingPair> out;
  out.reserve(c.count);
  if (true_sigma != nullptr) {
    true_sigma->clear();
    true_sigma->reserve(c.count);
  }
  const auto len = static_cast<double>(c.history_len);
  for (std::size_t n = 0; n < c.count; ++n) {
    const double speed = c.speed_min + (c.speed_max - c.speed_min) * unit(rng);
    const double heading = kTwoPi * unit(rng);
    const double vx = speed * std::cos(heading);
    const double vy = speed * std::sin(heading);
    const double sigma = c.noise_base + c.noise_per_speed * speed;
    TrainingPair p;
    p.history.scale = c.scale;
    p.history.last_x = 100.0 + vx * (len - 1.0);
    p.history.last_y = 100.0 + vy * (len - 1.0);
    p.history.steps.resize(c.history_len);
    for (std::size_t t = 0; t < c.history_len; ++t) {
      const double back = len - 1.0 - static_cast<double>(t);
      p.history.steps[t] = HistoryStep{-vx * back, -vy * back, true};
    }
    p.target_dx = vx + sigma * normal(rng);
    p.target_dy = vy + sigma * normal(rng);
    out.push_back(std::move(p));
    if (true_sigma != nullptr) true_sigma->push_back(sigma);
  }
  return out;
}

}  // namespace smcpose
