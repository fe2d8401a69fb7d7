#pragma once

// Places atomic trajectories in the scene through their anchors and joins
// them into one continuous path.
//
// Junction j is the pose between atomic j-1 and atomic j (junction 0 is the
// first start, junction n the last end). Start anchors pin the junction
// before their atomic, end anchors the one after. Atomics are then placed
// repeatedly, left to right: a known pose at both ends (anchor or an already
// placed neighbour) gives a similarity fit, one known end a rigid alignment.
// When nothing is known the first unplaced atomic stays where it is.

#include <Eigen/Geometry>

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "chatcam/camera.hpp"
#include "chatcam/planner.hpp"
#include "chatcam/trajectory_json.hpp"

namespace chatcam {

/// Resolved anchor poses keyed by plan step index.
using AnchorPoses = std::map<std::size_t, CameraFrame>;

enum class Placement { AsIs, StartAligned, EndAligned, Fitted };

inline std::string_view placement_name(Placement p) {
  switch (p) {
    case Placement::AsIs: return "as_is";
    case Placement::StartAligned: return "start_aligned";
    case Placement::EndAligned: return "end_aligned";
    case Placement::Fitted: return "fitted";
  }
  return "?";
}

struct SegmentInfo {
  std::size_t first_frame = 0;  // in the composed trajectory
  std::size_t last_frame = 0;
  Placement placement = Placement::AsIs;
  double scale = 1.0;
};

struct Composition {
  Trajectory trajectory;
  std::vector<SegmentInfo> segments;
  std::vector<Trajectory> placed;  // each atomic after placement, before joining
  TraceLog trace;
};

inline constexpr double kJunctionTol = 1e-9;

namespace detail {

inline void set_pose(CameraFrame& f, const CameraFrame& target) {
  f.trans = target.trans;
  f.rot = target.rot;
  f.focal = target.focal;
}

/// Rigid alignment of one endpoint onto `target`; focal lengths are rescaled
/// so the endpoint focal matches too.
inline Trajectory place_rigid(const Trajectory& t, const CameraFrame& target, Endpoint which) {
  Trajectory out = align_endpoint(t, target, which);
  const double ratio = target.focal / (which == Endpoint::Start ? t.front().focal : t.back().focal);
  for (auto& f : out.frames) f.focal *= ratio;
  set_pose(which == Endpoint::Start ? out.frames.front() : out.frames.back(), target);
  return out;
}

/// Start on `s`, then scale and rotate positions about the start so the end
/// lands on `e`; the orientation and focal mismatch left at the end is
/// blended in over the frames.
inline Trajectory place_between(const Trajectory& t, const CameraFrame& s, const CameraFrame& e, double& scale) {
  Trajectory out = align_endpoint(t, s, Endpoint::Start);
  const Vec3 p0 = s.trans;
  const Vec3 d = out.back().trans - p0;
  const Vec3 want = e.trans - s.trans;
  const double nd = d.norm(), nw = want.norm();
  Mat3 r = Mat3::Identity();
  scale = 1.0;
  if (nd > kJunctionTol || nw > kJunctionTol) {
    if (nd <= kJunctionTol || nw <= kJunctionTol) {
      throw Error(ErrorCode::InfeasibleComposition,
                  nd <= kJunctionTol ? "motion has no net displacement but its anchors are apart"
                                     : "anchors coincide but the motion has net displacement (scale would be 0)");
    }
    scale = nw / nd;
    r = Eigen::Quaterniond::FromTwoVectors(d, want).toRotationMatrix();
  }
  const std::size_t m = out.frames.size();
  const Mat3 mismatch = rotation_of(e) * rotation_of(out.back()).transpose();
  const double f_start = s.focal / t.front().focal;
  const double f_end = e.focal / t.back().focal;
  for (std::size_t k = 0; k < m; ++k) {
    const double w = m > 1 ? static_cast<double>(k) / static_cast<double>(m - 1) : 1.0;
    CameraFrame& f = out.frames[k];
    f.trans = p0 + scale * (r * (f.trans - p0));
    const Mat3 o = slerp(Mat3::Identity(), mismatch, w) * rotation_of(f);
    f.rot = Rot6D{o.col(0), o.col(1)};
    f.focal = t.frames[k].focal * std::pow(f_start, 1.0 - w) * std::pow(f_end, w);
  }
  set_pose(out.frames.front(), s);
  set_pose(out.frames.back(), e);
  return out;
}

inline bool same_pose(const CameraFrame& a, const CameraFrame& b) {
  return pose_gap(a, b) <= kJunctionTol && std::abs(a.focal - b.focal) <= kJunctionTol;
}

}  // namespace detail

/// Pure function of its inputs; `atomics` are in plan order.
inline Composition compose(const Plan& plan, const std::vector<Trajectory>& atomics, const AnchorPoses& anchors) {
  validate(plan);
  const std::size_t n = plan.atomic_count();
  if (atomics.size() != n) {
    throw Error(ErrorCode::BadRequest, "plan has " + std::to_string(n) + " atomic steps but " +
                                           std::to_string(atomics.size()) + " trajectories were given");
  }
  for (const auto& t : atomics) validate(t);

  Composition out;
  std::vector<std::size_t> atomic_step(n);
  std::vector<std::optional<CameraFrame>> pins(n + 1);
  for (std::size_t i = 0, a = 0; i < plan.steps.size(); ++i) {
    if (std::holds_alternative<AtomicStep>(plan.steps[i])) {
      atomic_step[a++] = i;
      continue;
    }
    const auto& an = std::get<AnchorStep>(plan.steps[i]);
    auto it = anchors.find(i);
    if (it == anchors.end()) throw Error(ErrorCode::BadRequest, "no pose for anchor step " + std::to_string(i)).with_step(i);
    validate(it->second);
    const std::size_t j = an.role == AnchorRole::Start ? an.attaches_to : an.attaches_to + 1;
    if (pins[j] && !detail::same_pose(*pins[j], it->second)) {
      throw Error(ErrorCode::InfeasibleComposition,
                  "anchors disagree on the pose between atomic steps " + std::to_string(j == 0 ? 0 : j - 1) + " and " +
                      std::to_string(j)).with_step(i);
    }
    pins[j] = it->second;
  }

  std::vector<std::optional<Trajectory>> placed(n);
  std::vector<SegmentInfo> info(n);
  std::size_t remaining = n;
  while (remaining > 0) {
    bool progress = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (placed[i]) continue;
      std::optional<CameraFrame> s = pins[i], e = pins[i + 1];
      if (!s && i > 0 && placed[i - 1]) s = placed[i - 1]->back();
      if (!e && i + 1 < n && placed[i + 1]) e = placed[i + 1]->front();
      try {
        if (s && e) {
          placed[i] = detail::place_between(atomics[i], *s, *e, info[i].scale);
          info[i].placement = Placement::Fitted;
        } else if (s) {
          placed[i] = detail::place_rigid(atomics[i], *s, Endpoint::Start);
          info[i].placement = Placement::StartAligned;
        } else if (e) {
          placed[i] = detail::place_rigid(atomics[i], *e, Endpoint::End);
          info[i].placement = Placement::EndAligned;
        } else {
          continue;
        }
      } catch (const Error& err) {
        throw err.with_step(atomic_step[i]);
      }
      --remaining;
      progress = true;
    }
    if (!progress) {
      const auto first = static_cast<std::size_t>(std::find(placed.begin(), placed.end(), std::nullopt) - placed.begin());
      placed[first] = atomics[first];
      info[first].placement = Placement::AsIs;
      --remaining;
    }
  }

  Trajectory& traj = out.trajectory;
  traj.duration_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& seg = *placed[i];
    traj.duration_s += seg.duration_s;
    info[i].first_frame = traj.frames.empty() ? 0 : traj.frames.size() - 1;
    traj.frames.insert(traj.frames.end(), seg.frames.begin() + (traj.frames.empty() ? 0 : 1), seg.frames.end());
    info[i].last_frame = traj.frames.size() - 1;
    out.trace.calls.push_back(ToolCall{"compose",
                                       atomic_step[i],
                                       json{{"atomic", i}, {"frames", seg.frames.size()}},
                                       json{{"placement", placement_name(info[i].placement)},
                                            {"scale", info[i].scale},
                                            {"first_frame", info[i].first_frame},
                                            {"last_frame", info[i].last_frame}},
                                       0.0});
  }
  out.segments = std::move(info);
  for (auto& p : placed) out.placed.push_back(std::move(*p));
  std::size_t pinned = 0;
  for (const auto& p : pins) pinned += p.has_value();
  out.trace.reasoning = "composed " + std::to_string(n) + " segment(s) through " + std::to_string(pinned) + " anchor pose(s)";
  return out;
}

}  // namespace chatcam
