#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "smcpose/geometry.hpp"

namespace smcpose {

inline constexpr int kStreamFormatVersion = 1;

struct Frame {
  std::int64_t frame_id = 0;
  std::vector<Pose> poses;
  std::vector<std::int64_t> track_ids;  // empty, or aligned with poses

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct StreamMetadata {
  std::size_t num_keypoints = 17;
  int image_width = 0;
  int image_height = 0;
  int version = kStreamFormatVersion;
  nlohmann::json extra = nlohmann::json::object();  // provenance: config echo, generator info

  friend bool operator==(const StreamMetadata&, const StreamMetadata&) = default;
};

// Ordered per-frame pose lists, optionally carrying per-pose track ids.
struct FrameStream {
  StreamMetadata meta;
  std::vector<Frame> frames;

  bool has_track_ids() const;
  std::size_t num_poses() const;

  // Strictly increasing frame ids, consistent keypoint counts, aligned and
  // per-frame-unique track ids. Throws FormatError.
  void validate() const;

  friend bool operator==(const FrameStream&, const FrameStream&) = default;
};

// Line-delimited JSON: one header record, then one record per frame.
void write_stream(const FrameStream& stream, std::ostream& out);
void write_stream(const FrameStream& stream, const std::filesystem::path& path);
FrameStream read_stream(std::istream& in);
FrameStream read_stream(const std::filesystem::path& path);

}  // namespace smcpose
