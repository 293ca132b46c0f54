#include "smcpose/frame_stream.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <string>

#include "smcpose/error.hpp"

namespace smcpose {

namespace {

constexpr const char* kFormatTag = "smcpose-frames";

using nlohmann::json;

json pose_to_json(const Pose& pose) {
  json kps = json::array();
  for (const Keypoint& k : pose.keypoints) {
    kps.push_back(json::array({k.x, k.y, k.visible ? 1 : 0, k.confidence}));
  }
  return json{{"scale", pose.scale}, {"score", pose.score}, {"keypoints", std::move(kps)}};
}

[[noreturn]] void fail(std::size_t line, std::int64_t frame_id, const std::string& field,
                       const std::string& what) {
  std::string msg = "frame stream line " + std::to_string(line);
  if (frame_id >= 0) msg += ", frame_id " + std::to_string(frame_id);
  msg += ", field '" + field + "': " + what;
  throw FormatError(msg);
}

template <typename V>
V get_field(const json& obj, const char* name, std::size_t line, std::int64_t frame_id) {
  auto it = obj.find(name);
  if (it == obj.end()) fail(line, frame_id, name, "missing");
  try {
    return it->template get<V>();
  } catch (const json::exception& e) {
    fail(line, frame_id, name, e.what());
  }
}

}  // namespace

bool FrameStream::has_track_ids() const {
  for (const Frame& f : frames) {
    if (f.track_ids.size() != f.poses.size()) return false;
  }
  return true;
}

std::size_t FrameStream::num_poses() const {
  std::size_t n = 0;
  for (const Frame& f : frames) n += f.poses.size();
  return n;
}

void FrameStream::validate() const {
  bool any_ids = false;
  for (const Frame& f : frames) any_ids = any_ids || !f.track_ids.empty();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    if (i > 0 && f.frame_id <= frames[i - 1].frame_id) {
      throw FormatError("frame_id " + std::to_string(f.frame_id) + " is not strictly increasing");
    }
    if ((any_ids || !f.track_ids.empty()) && f.track_ids.size() != f.poses.size()) {
      throw FormatError("frame_id " + std::to_string(f.frame_id) +
                        ": track_ids not aligned with poses");
    }
    std::set<std::int64_t> seen;
    for (std::int64_t id : f.track_ids) {
      if (!seen.insert(id).second) {
        throw FormatError("frame_id " + std::to_string(f.frame_id) + ": duplicate track_id " +
                          std::to_string(id));
      }
    }
    for (const Pose& p : f.poses) {
      if (p.size() != meta.num_keypoints) {
        throw FormatError("frame_id " + std::to_string(f.frame_id) + ": pose has " +
                          std::to_string(p.size()) + " keypoints, expected " +
                          std::to_string(meta.num_keypoints));
      }
    }
  }
}

void write_stream(const FrameStream& stream, std::ostream& out) {
  stream.validate();
  const bool ids = stream.has_track_ids();
  json header{{"format", kFormatTag},
              {"version", stream.meta.version},
              {"num_keypoints", stream.meta.num_keypoints},
              {"image_width", stream.meta.image_width},
              {"image_height", stream.meta.image_height},
              {"track_ids", ids},
              {"meta", stream.meta.extra}};
  out << header.dump() << '\n';
  for (const Frame& f : stream.frames) {
    json poses = json::array();
    for (std::size_t p = 0; p < f.poses.size(); ++p) {
      json jp = pose_to_json(f.poses[p]);
      if (ids) jp["track_id"] = f.track_ids[p];
      poses.push_back(std::move(jp));
    }
    out << json{{"frame_id", f.frame_id}, {"poses", std::move(poses)}}.dump() << '\n';
  }
  if (!out) throw Error("write_stream: output failed");
}

void write_stream(const FrameStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_stream(stream, out);
}

FrameStream read_stream(std::istream& in) {
  FrameStream stream;
  std::string line;
  std::size_t line_no = 0;
  bool ids = false;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail(line_no, -1, "<record>", e.what());
    }
    if (!have_header) {
      if (get_field<std::string>(rec, "format", line_no, -1) != kFormatTag) {
        fail(line_no, -1, "format", "unknown format tag");
      }
      stream.meta.version = get_field<int>(rec, "version", line_no, -1);
      if (stream.meta.version != kStreamFormatVersion) {
        fail(line_no, -1, "version", "unsupported version " + std::to_string(stream.meta.version));
      }
      stream.meta.num_keypoints = get_field<std::size_t>(rec, "num_keypoints", line_no, -1);
      stream.meta.image_width = get_field<int>(rec, "image_width", line_no, -1);
      stream.meta.image_height = get_field<int>(rec, "image_height", line_no, -1);
      ids = get_field<bool>(rec, "track_ids", line_no, -1);
      if (auto it = rec.find("meta"); it != rec.end()) stream.meta.extra = *it;
      have_header = true;
      continue;
    }

    Frame frame;
    frame.frame_id = get_field<std::int64_t>(rec, "frame_id", line_no, -1);
    if (!stream.frames.empty() && frame.frame_id <= stream.frames.back().frame_id) {
      fail(line_no, frame.frame_id, "frame_id",
           "duplicate or decreasing (previous " + std::to_string(stream.frames.back().frame_id) +
               ")");
    }
    const json poses = get_field<json>(rec, "poses", line_no, frame.frame_id);
    if (!poses.is_array()) fail(line_no, frame.frame_id, "poses", "not an array");
    std::set<std::int64_t> seen;
    for (const json& jp : poses) {
      Pose pose;
      pose.scale = get_field<double>(jp, "scale", line_no, frame.frame_id);
      pose.score = get_field<double>(jp, "score", line_no, frame.frame_id);
      const json kps = get_field<json>(jp, "keypoints", line_no, frame.frame_id);
      if (!kps.is_array() || kps.size() != stream.meta.num_keypoints) {
        fail(line_no, frame.frame_id, "keypoints",
             "expected " + std::to_string(stream.meta.num_keypoints) + " entries");
      }
      pose.keypoints.reserve(kps.size());
      for (const json& jk : kps) {
        if (!jk.is_array() || jk.size() != 4) {
          fail(line_no, frame.frame_id, "keypoints", "entry must be [x, y, visible, confidence]");
        }
        try {
          pose.keypoints.push_back(Keypoint{jk[0].get<double>(), jk[1].get<double>(),
                                            jk[2].get<int>() != 0, jk[3].get<double>()});
        } catch (const json::exception& e) {
          fail(line_no, frame.frame_id, "keypoints", e.what());
        }
      }
      if (ids) {
        const auto id = get_field<std::int64_t>(jp, "track_id", line_no, frame.frame_id);
        if (!seen.insert(id).second) {
          fail(line_no, frame.frame_id, "track_id", "duplicate id " + std::to_string(id));
        }
        frame.track_ids.push_back(id);
      }
      frame.poses.push_back(std::move(pose));
    }
    stream.frames.push_back(std::move(frame));
  }
  if (!have_header) throw FormatError("frame stream: missing header record");
  return stream;
}

FrameStream read_stream(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_stream(in);
}

}  // namespace smcpose
