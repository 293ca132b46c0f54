#pragma once

#include <cstddef>
#include <vector>

namespace smcpose {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;
  double confidence = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

// A fixed-size set of keypoints plus the object scale (square root of the
// bounding-box area, pixels) and the detection score.
struct Pose {
  std::vector<Keypoint> keypoints;
  double scale = 0.0;
  double score = 0.0;

  Pose() = default;
  explicit Pose(std::size_t num_keypoints) : keypoints(num_keypoints) {}

  std::size_t size() const { return keypoints.size(); }
  std::size_t num_visible() const;
  bool any_visible() const { return num_visible() > 0; }

  // Same keypoint count, every keypoint invisible and zero-filled.
  static Pose invisible(std::size_t num_keypoints);

  friend bool operator==(const Pose&, const Pose&) = default;
};

enum class OksScale {
  First,    // scale of the first argument (the detection)
  Larger,   // max of both scales
};

struct OksParams {
  std::vector<double> kappas;
  double scale_floor = 1.0;
  OksScale scale_mode = OksScale::First;

  // COCO falloff constants for 17 keypoints; uniform 0.05 otherwise.
  static OksParams defaults(std::size_t num_keypoints);
};

// The 17 COCO per-keypoint sigmas; the OKS falloff constant is twice these.
inline constexpr double kCocoSigmas[17] = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079,
                                           0.079, 0.072, 0.072, 0.062, 0.062, 0.107,
                                           0.107, 0.087, 0.087, 0.089, 0.089};

// Object keypoint similarity: mean over keypoints visible in both poses of
// exp(-d^2 / (2 s^2 kappa^2)). Returns 0 when no keypoint is jointly visible.
double oks(const Pose& a, const Pose& b, const OksParams& params);

// Validates that every pose has the same keypoint count; throws
// InvalidArgument naming the offending index otherwise.
void require_same_keypoint_count(const std::vector<Pose>& poses, std::size_t num_keypoints);

}  // namespace smcpose
