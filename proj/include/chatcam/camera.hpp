#pragma once

// Camera poses, trajectories, and the rigid/similarity algebra used to place
// them. Conventions: a camera's rotation columns are its right, up and back
// axes in world coordinates (the camera looks down its local -z); the pose is
// camera-to-world. Focal length is normalized by image width.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <vector>

#include "chatcam/error.hpp"

namespace chatcam {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kDegenerateEps = 1e-12;
inline constexpr double kRotationCheckTol = 1e-6;

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Continuous 6D rotation encoding: two (not necessarily orthonormal)
/// column directions, orthonormalized by Gram-Schmidt on use.
struct Rot6D {
  Vec3 a = Vec3::UnitX();
  Vec3 b = Vec3::UnitY();

  bool operator==(const Rot6D&) const = default;
};

struct CameraFrame {
  Rot6D rot;
  Vec3 trans = Vec3::Zero();
  double focal = 1.0;

  bool operator==(const CameraFrame&) const = default;
};

struct Trajectory {
  std::vector<CameraFrame> frames;
  double duration_s = 1.0;

  std::size_t size() const { return frames.size(); }
  const CameraFrame& front() const { return frames.front(); }
  const CameraFrame& back() const { return frames.back(); }

  bool operator==(const Trajectory&) const = default;
};

/// x -> scale * (rotation * x) + translation
struct SimilarityTransform {
  Rot6D rotation;
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
};

struct FrameVelocity {
  Vec3 linear = Vec3::Zero();  // scene units per second
  double angular = 0.0;        // radians per second
};

struct TrajectoryMse {
  double translation = 0.0;  // scene units^2
  double rotation = 0.0;     // degrees^2
};

enum class Endpoint { Start, End };

// ---------------------------------------------------------------------------
// Rotations

inline Mat3 rot6d_to_matrix(const Rot6D& r) {
  const double na = r.a.norm();
  if (!(na >= kDegenerateEps)) {
    throw Error(ErrorCode::DegenerateRotation, "first column has zero length");
  }
  const Vec3 c1 = r.a / na;
  const Vec3 b_perp = r.b - r.b.dot(c1) * c1;
  const double nb = b_perp.norm();
  if (!(nb >= kDegenerateEps)) {
    throw Error(ErrorCode::DegenerateRotation, "second column is parallel to the first");
  }
  const Vec3 c2 = b_perp / nb;
  Mat3 m;
  m.col(0) = c1;
  m.col(1) = c2;
  m.col(2) = c1.cross(c2);
  return m;
}

inline bool is_rotation(const Mat3& m, double tol = kRotationCheckTol) {
  if (!m.allFinite()) return false;
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(m.determinant() - 1.0) < tol;
}

inline Rot6D matrix_to_rot6d(const Mat3& m) {
  if (!is_rotation(m)) {
    throw Error(ErrorCode::InvalidRotation, "matrix is not orthonormal with determinant +1");
  }
  return Rot6D{m.col(0), m.col(1)};
}

/// Orthonormal 6D encoding of an arbitrary non-degenerate one.
inline Rot6D normalized(const Rot6D& r) {
  const Mat3 m = rot6d_to_matrix(r);
  return Rot6D{m.col(0), m.col(1)};
}

inline Mat3 axis_angle(const Vec3& axis, double radians) {
  return Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix();
}

/// Minimal rotation angle between two orientations, radians in [0, pi].
inline double geodesic_angle(const Mat3& r1, const Mat3& r2) {
  const Mat3 rel = r1.transpose() * r2;
  // atan2 form stays accurate near 0 and pi where acos does not.
  const Vec3 w(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  const double s = 0.5 * w.norm();
  const double c = 0.5 * (rel.trace() - 1.0);
  return std::atan2(s, c);
}

inline Mat3 rotation_of(const CameraFrame& f) { return rot6d_to_matrix(f.rot); }

/// Geodesic interpolation between two rotations, t in [0, 1].
inline Mat3 slerp(const Mat3& r0, const Mat3& r1, double t) {
  const Eigen::Quaterniond q0(r0), q1(r1);
  return q0.slerp(t, q1).normalized().toRotationMatrix();
}

// ---------------------------------------------------------------------------
// Validation

inline void validate(const CameraFrame& f) {
  if (!(f.focal > 0.0) || !std::isfinite(f.focal)) {
    throw Error(ErrorCode::InvalidTrajectory, "focal must be positive and finite");
  }
  if (!f.trans.allFinite() || !f.rot.a.allFinite() || !f.rot.b.allFinite()) {
    throw Error(ErrorCode::InvalidTrajectory, "non-finite pose component");
  }
  (void)rot6d_to_matrix(f.rot);
}

inline void validate(const Trajectory& t) {
  if (t.frames.size() < 2) {
    throw Error(ErrorCode::InvalidTrajectory, "trajectory needs at least 2 frames");
  }
  if (!(t.duration_s > 0.0) || !std::isfinite(t.duration_s)) {
    throw Error(ErrorCode::InvalidTrajectory, "duration must be positive");
  }
  for (const auto& f : t.frames) validate(f);
}

// ---------------------------------------------------------------------------
// Similarity transforms

inline SimilarityTransform identity_transform() { return {}; }

inline SimilarityTransform inverse(const SimilarityTransform& s) {
  const Mat3 r = rot6d_to_matrix(s.rotation);
  const Mat3 rt = r.transpose();
  return SimilarityTransform{Rot6D{rt.col(0), rt.col(1)},
                             -(rt * s.translation) / s.scale, 1.0 / s.scale};
}

inline CameraFrame apply_similarity(const CameraFrame& f, const Mat3& r, const Vec3& t,
                                    double scale) {
  const Mat3 rot = r * rotation_of(f);
  return CameraFrame{Rot6D{rot.col(0), rot.col(1)}, scale * (r * f.trans) + t, f.focal};
}

inline Trajectory apply_similarity(const Trajectory& traj, const SimilarityTransform& s) {
  const Mat3 r = rot6d_to_matrix(s.rotation);
  Trajectory out;
  out.duration_s = traj.duration_s;
  out.frames.reserve(traj.frames.size());
  for (const auto& f : traj.frames) {
    out.frames.push_back(apply_similarity(f, r, s.translation, s.scale));
  }
  return out;
}

/// Rigid transform taking `from`'s pose onto `to`'s pose.
inline SimilarityTransform rigid_between(const CameraFrame& from, const CameraFrame& to) {
  const Mat3 r = rotation_of(to) * rotation_of(from).transpose();
  return SimilarityTransform{Rot6D{r.col(0), r.col(1)}, to.trans - r * from.trans, 1.0};
}

/// Rigidly moves `traj` so the chosen endpoint lands exactly on `target`.
/// The endpoint frame is then overwritten with the target pose so the
/// postcondition holds bit-for-bit in rotation as well as within rounding.
inline Trajectory align_endpoint(const Trajectory& traj, const CameraFrame& target, Endpoint which) {
  const CameraFrame& anchor = which == Endpoint::Start ? traj.front() : traj.back();
  Trajectory out = apply_similarity(traj, rigid_between(anchor, target));
  CameraFrame& end = which == Endpoint::Start ? out.frames.front() : out.frames.back();
  end.trans = target.trans;
  end.rot = target.rot;
  return out;
}

// ---------------------------------------------------------------------------
// Kinematics, resampling, metrics

inline std::vector<FrameVelocity> frame_velocities(const Trajectory& traj) {
  const std::size_t m = traj.frames.size();
  std::vector<FrameVelocity> out;
  if (m < 2) return out;
  const double dt = traj.duration_s / static_cast<double>(m - 1);
  out.reserve(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    const auto& f0 = traj.frames[i];
    const auto& f1 = traj.frames[i + 1];
    out.push_back({(f1.trans - f0.trans) / dt,
                   geodesic_angle(rotation_of(f0), rotation_of(f1)) / dt});
  }
  return out;
}

inline CameraFrame interpolate(const CameraFrame& f0, const CameraFrame& f1, double w) {
  const Mat3 r = slerp(rotation_of(f0), rotation_of(f1), w);
  return CameraFrame{Rot6D{r.col(0), r.col(1)}, (1.0 - w) * f0.trans + w * f1.trans,
                     (1.0 - w) * f0.focal + w * f1.focal};
}

/// Uniform-in-time resampling; first and last frames are copied verbatim.
inline Trajectory resample(const Trajectory& traj, std::size_t target_frames) {
  if (target_frames < 2) {
    throw Error(ErrorCode::ShapeError, "resample needs at least 2 output frames");
  }
  const std::size_t m = traj.frames.size();
  if (m < 2) throw Error(ErrorCode::InvalidTrajectory, "trajectory needs at least 2 frames");
  Trajectory out;
  out.duration_s = traj.duration_s;
  out.frames.reserve(target_frames);
  for (std::size_t j = 0; j < target_frames; ++j) {
    if (j == 0) {
      out.frames.push_back(traj.frames.front());
      continue;
    }
    if (j + 1 == target_frames) {
      out.frames.push_back(traj.frames.back());
      continue;
    }
    // Exact rational position j*(m-1)/(n-1) keeps integer hits exact.
    const std::size_t num = j * (m - 1);
    const std::size_t den = target_frames - 1;
    const std::size_t i = num / den;
    const std::size_t rem = num % den;
    if (rem == 0) {
      out.frames.push_back(traj.frames[i]);
    } else {
      const double w = static_cast<double>(rem) / static_cast<double>(den);
      out.frames.push_back(interpolate(traj.frames[i], traj.frames[i + 1], w));
    }
  }
  return out;
}

inline TrajectoryMse trajectory_mse(const Trajectory& a, const Trajectory& b) {
  if (a.frames.size() != b.frames.size()) {
    throw Error(ErrorCode::LengthMismatch, "trajectories have " + std::to_string(a.frames.size()) +
                                               " and " + std::to_string(b.frames.size()) +
                                               " frames; resample first");
  }
  TrajectoryMse out;
  if (a.frames.empty()) return out;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    out.translation += (a.frames[i].trans - b.frames[i].trans).squaredNorm();
    const double deg = rad2deg(geodesic_angle(rotation_of(a.frames[i]), rotation_of(b.frames[i])));
    out.rotation += deg * deg;
  }
  const double n = static_cast<double>(a.frames.size());
  out.translation /= n;
  out.rotation /= n;
  return out;
}

/// Pose distance used for continuity checks: max of translation gap and
/// rotation-matrix entry gap.
inline double pose_gap(const CameraFrame& a, const CameraFrame& b) {
  const double dt = (a.trans - b.trans).norm();
  const double dr = (rotation_of(a) - rotation_of(b)).cwiseAbs().maxCoeff();
  return std::max(dt, dr);
}

inline CameraFrame canonical_frame(double focal = 1.0) {
  return CameraFrame{Rot6D{}, Vec3::Zero(), focal};
}

// ---------------------------------------------------------------------------
// Export

/// Horizontal field of view in degrees for a width-normalized focal length.
inline double fov_degrees(double focal) { return rad2deg(2.0 * std::atan(0.5 / focal)); }

inline Eigen::Matrix4d camera_to_world(const CameraFrame& f) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_of(f);
  m.topRightCorner<3, 1>() = f.trans;
  return m;
}

}  // namespace chatcam
