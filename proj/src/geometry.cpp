#include "smcpose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "smcpose/error.hpp"

namespace smcpose {

std::size_t Pose::num_visible() const {
  return static_cast<std::size_t>(
      std::count_if(keypoints.begin(), keypoints.end(), [](const Keypoint& k) { return k.visible; }));
}

Pose Pose::invisible(std::size_t num_keypoints) { return Pose(num_keypoints); }

OksParams OksParams::defaults(std::size_t num_keypoints) {
  OksParams params;
  if (num_keypoints == 17) {
    params.kappas.reserve(17);
    for (double sigma : kCocoSigmas) params.kappas.push_back(2.0 * sigma);
  } else {
    params.kappas.assign(num_keypoints, 0.05);
  }
  return params;
}

double oks(const Pose& a, const Pose& b, const OksParams& params) {
  if (a.size() != b.size() || params.kappas.size() != a.size()) {
    throw InvalidArgument("oks: keypoint count mismatch (" + std::to_string(a.size()) + ", " +
                          std::to_string(b.size()) + ", kappas " +
                          std::to_string(params.kappas.size()) + ")");
  }
  double s = a.scale;
  if (params.scale_mode == OksScale::Larger) s = std::max(s, b.scale);
  s = std::max(s, params.scale_floor);
  const double s2 = s * s;

  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Keypoint& ka = a.keypoints[i];
    const Keypoint& kb = b.keypoints[i];
    if (!ka.visible || !kb.visible) continue;
    const double dx = ka.x - kb.x;
    const double dy = ka.y - kb.y;
    const double kappa = params.kappas[i];
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * kappa * kappa));
    ++count;
  }
  if (count == 0) return 0.0;
  return sum / static_cast<double>(count);
}

void require_same_keypoint_count(const std::vector<Pose>& poses, std::size_t num_keypoints) {
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (poses[i].size() != num_keypoints) {
      throw InvalidArgument("pose " + std::to_string(i) + " has " +
                            std::to_string(poses[i].size()) + " keypoints, expected " +
                            std::to_string(num_keypoints));
    }
  }
}

}  // namespace smcpose
