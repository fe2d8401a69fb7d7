#pragma once

// JSON forms of camera types:
//   trajectory:  {"duration_s": f, "frames": [{"rot6d": [6], "trans": [3], "focal": f}]}
//   camera path: {"fps": f, "frames": [{"c2w": [16, row-major], "fov_deg": f}]}

#include <array>
#include <string>

#include "chatcam/camera.hpp"
#include "json.hpp"

namespace chatcam {

using json = nlohmann::json;

inline json frame_to_json(const CameraFrame& f) {
  return json{{"rot6d", {f.rot.a.x(), f.rot.a.y(), f.rot.a.z(), f.rot.b.x(), f.rot.b.y(), f.rot.b.z()}},
              {"trans", {f.trans.x(), f.trans.y(), f.trans.z()}},
              {"focal", f.focal}};
}

inline CameraFrame frame_from_json(const json& j) {
  try {
    const auto r = j.at("rot6d").get<std::array<double, 6>>();
    const auto t = j.at("trans").get<std::array<double, 3>>();
    CameraFrame f{Rot6D{Vec3(r[0], r[1], r[2]), Vec3(r[3], r[4], r[5])}, Vec3(t[0], t[1], t[2]),
                  j.at("focal").get<double>()};
    validate(f);
    return f;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("camera frame: ") + e.what());
  }
}

inline json frames_to_json(const Trajectory& t) {
  json frames = json::array();
  for (const auto& f : t.frames) frames.push_back(frame_to_json(f));
  return frames;
}

inline json trajectory_to_json(const Trajectory& t) {
  return json{{"duration_s", t.duration_s}, {"frames", frames_to_json(t)}};
}

inline Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  try {
    t.duration_s = j.at("duration_s").get<double>();
    for (const auto& f : j.at("frames")) t.frames.push_back(frame_from_json(f));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("trajectory: ") + e.what());
  }
  validate(t);
  return t;
}

/// Export for external radiance-field viewers. fps is derived from duration.
inline json camera_path_json(const Trajectory& t) {
  const double fps = t.frames.size() > 1 ? static_cast<double>(t.frames.size() - 1) / t.duration_s : 0.0;
  json frames = json::array();
  for (const auto& f : t.frames) {
    const Eigen::Matrix4d m = camera_to_world(f);
    json c2w = json::array();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) c2w.push_back(m(r, c));
    frames.push_back({{"c2w", c2w}, {"fov_deg", fov_degrees(f.focal)}});
  }
  return json{{"fps", fps}, {"frames", frames}};
}

}  // namespace chatcam
