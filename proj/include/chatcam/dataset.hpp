#pragma once

// Procedural text/trajectory corpus: motion primitives rendered to canonical
// trajectories plus closed-vocabulary descriptions, and the two rule-based
// taggers (text side and trajectory side) used to check semantic agreement.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "chatcam/camera.hpp"
#include "chatcam/trajectory_json.hpp"

namespace chatcam {

enum class MotionKind { Pan, Tilt, Roll, Dolly, Truck, Pedestal, Zoom, Orbit, DollyZoom, Static };
enum class Speed { Slow, Medium, Fast };

inline constexpr std::array<MotionKind, 10> kAllKinds = {
    MotionKind::Pan,  MotionKind::Tilt,  MotionKind::Roll,      MotionKind::Dolly,
    MotionKind::Truck, MotionKind::Pedestal, MotionKind::Zoom, MotionKind::Orbit,
    MotionKind::DollyZoom, MotionKind::Static};

inline std::string_view kind_name(MotionKind k) {
  switch (k) {
    case MotionKind::Pan: return "pan";
    case MotionKind::Tilt: return "tilt";
    case MotionKind::Roll: return "roll";
    case MotionKind::Dolly: return "dolly";
    case MotionKind::Truck: return "truck";
    case MotionKind::Pedestal: return "pedestal";
    case MotionKind::Zoom: return "zoom";
    case MotionKind::Orbit: return "orbit";
    case MotionKind::DollyZoom: return "dolly_zoom";
    case MotionKind::Static: return "static";
  }
  return "?";
}

inline std::string_view speed_name(Speed s) {
  switch (s) {
    case Speed::Slow: return "slow";
    case Speed::Medium: return "medium";
    case Speed::Fast: return "fast";
  }
  return "?";
}

/// Duration multiplier relative to the medium baseline.
inline double speed_factor(Speed s) {
  switch (s) {
    case Speed::Slow: return 2.0;
    case Speed::Medium: return 1.0;
    case Speed::Fast: return 0.5;
  }
  return 1.0;
}

/// Magnitude units: degrees for pan/tilt/roll/orbit, scene units for
/// dolly/truck/pedestal/dolly_zoom (camera travel), and for zoom the focal
/// ratio minus one. Direction +1 means left (pan, roll), up (tilt,
/// pedestal), forward (dolly), right (truck, orbit), in (zoom) and
/// backward-with-zoom-in (dolly_zoom).
struct MotionPrimitive {
  MotionKind kind = MotionKind::Static;
  double magnitude = 0.0;
  int direction = 1;
  Speed speed = Speed::Medium;

  bool operator==(const MotionPrimitive&) const = default;
};

/// What the taggers can recover without looking at magnitudes.
struct MotionTag {
  MotionKind kind = MotionKind::Static;
  int direction = 1;
  Speed speed = Speed::Medium;

  bool operator==(const MotionTag&) const = default;
};

inline MotionTag tag_of(const MotionPrimitive& p) {
  return MotionTag{p.kind, p.kind == MotionKind::Static ? 1 : p.direction, p.speed};
}

inline std::string describe(const MotionTag& t) {
  std::string s(kind_name(t.kind));
  if (t.kind != MotionKind::Static) s += t.direction > 0 ? "+" : "-";
  s += "/";
  s += speed_name(t.speed);
  return s;
}

struct GenConfig {
  std::size_t frames = 120;          // stored frames per trajectory
  double base_duration_s = 4.0;      // medium-speed duration of one primitive
  double native_fps = 15.0;          // segment sampling rate before resampling
  double base_focal = 1.0;
  std::size_t min_primitives = 1;
  std::size_t max_primitives = 4;
  std::size_t template_pool = 3;     // templates used for corpus text; the rest are held out
};

struct TextTrajPair {
  std::string text;
  Trajectory traj;

  bool operator==(const TextTrajPair&) const = default;
};

// ---------------------------------------------------------------------------
// Trajectory generation

inline Trajectory gen_primitive(const MotionPrimitive& p, std::size_t frames, double base_duration_s,
                                double start_focal = 1.0) {
  if (frames < 2) throw Error(ErrorCode::ShapeError, "gen_primitive needs at least 2 frames");
  Trajectory traj;
  traj.duration_s = base_duration_s * speed_factor(p.speed);
  traj.frames.reserve(frames);
  const double dir = p.direction >= 0 ? 1.0 : -1.0;
  const Vec3 subject(0.0, 0.0, -1.0);
  for (std::size_t k = 0; k < frames; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(frames - 1);
    Mat3 r = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    double f = start_focal;
    switch (p.kind) {
      case MotionKind::Pan: r = axis_angle(Vec3::UnitY(), dir * deg2rad(p.magnitude) * s); break;
      case MotionKind::Tilt: r = axis_angle(Vec3::UnitX(), dir * deg2rad(p.magnitude) * s); break;
      case MotionKind::Roll: r = axis_angle(Vec3::UnitZ(), dir * deg2rad(p.magnitude) * s); break;
      case MotionKind::Dolly: t = Vec3(0, 0, -dir * p.magnitude * s); break;
      case MotionKind::Truck: t = Vec3(dir * p.magnitude * s, 0, 0); break;
      case MotionKind::Pedestal: t = Vec3(0, dir * p.magnitude * s, 0); break;
      case MotionKind::Zoom: f = start_focal * std::pow(1.0 + p.magnitude, dir * s); break;
      case MotionKind::Orbit: {
        r = axis_angle(Vec3::UnitY(), dir * deg2rad(p.magnitude) * s);
        t = subject + r * (Vec3::Zero() - subject);
        break;
      }
      case MotionKind::DollyZoom: {
        // Subject one unit ahead; focal tracks distance so f/d stays constant.
        const double d = 1.0 + dir * p.magnitude * s;
        t = Vec3(0, 0, d - 1.0);
        f = start_focal * d;
        break;
      }
      case MotionKind::Static: break;
    }
    traj.frames.push_back(CameraFrame{Rot6D{r.col(0), r.col(1)}, t, f});
  }
  return traj;
}

/// Concatenates trajectories end to start. Each segment is rigidly moved onto
/// the previous final pose and its focal track rescaled to continue from the
/// previous final focal; shared junction frames appear once.
inline Trajectory chain_segments(const std::vector<Trajectory>& segments) {
  if (segments.empty()) throw Error(ErrorCode::InvalidTrajectory, "no segments to chain");
  Trajectory out = segments.front();
  for (std::size_t i = 1; i < segments.size(); ++i) {
    Trajectory seg = align_endpoint(segments[i], out.back(), Endpoint::Start);
    const double ratio = out.back().focal / seg.front().focal;
    for (auto& f : seg.frames) f.focal *= ratio;
    seg.frames.front().focal = out.back().focal;
    out.frames.insert(out.frames.end(), seg.frames.begin() + 1, seg.frames.end());
    out.duration_s += seg.duration_s;
  }
  return out;
}

inline Trajectory compose_primitives(const std::vector<MotionPrimitive>& ps,
                                     const std::vector<std::size_t>& frames_per_segment,
                                     double base_duration_s, double start_focal = 1.0) {
  if (ps.empty()) throw Error(ErrorCode::InvalidTrajectory, "need at least one primitive");
  if (frames_per_segment.size() != ps.size()) {
    throw Error(ErrorCode::LengthMismatch, "one frame count per primitive required");
  }
  std::vector<Trajectory> segs;
  segs.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    segs.push_back(gen_primitive(ps[i], frames_per_segment[i], base_duration_s, start_focal));
  }
  return chain_segments(segs);
}

inline Trajectory compose_primitives(const std::vector<MotionPrimitive>& ps, std::size_t frames,
                                     double base_duration_s, double start_focal = 1.0) {
  return compose_primitives(ps, std::vector<std::size_t>(ps.size(), frames), base_duration_s,
                            start_focal);
}

// ---------------------------------------------------------------------------
// Text rendering

namespace detail {

struct KindText {
  MotionKind kind;
  std::string_view positive;  // direction word for +1
  std::string_view negative;
  std::array<std::string_view, 4> templates;
};

// Slots: {dir} {mag} {adv} {adj} {dur}. Template 3 of each kind reuses only
// words from templates 0-2 so it can serve as an unseen paraphrase.
inline const std::array<KindText, 10>& kind_texts() {
  static const std::array<KindText, 10> table = {{
      {MotionKind::Pan, "left", "right",
       {"pan {dir} {mag} {adv}", "rotate the camera to the {dir} by {mag} {adv}",
        "make a {adj} pan to the {dir} by {mag}", "{adv} pan the camera {dir} by {mag}"}},
      {MotionKind::Tilt, "up", "down",
       {"tilt {dir} {mag} {adv}", "tilt the camera {dir} by {mag} {adv}",
        "make a {adj} tilt {dir} by {mag}", "{adv} tilt {dir} by {mag}"}},
      {MotionKind::Roll, "left", "right",
       {"roll {dir} {mag} {adv}", "roll the camera to the {dir} by {mag} {adv}",
        "make a {adj} roll to the {dir} by {mag}", "{adv} roll the camera {dir} by {mag}"}},
      {MotionKind::Dolly, "forward", "backward",
       {"dolly {dir} {mag} {adv}", "push the camera {dir} by {mag} {adv}",
        "make a {adj} dolly {dir} by {mag}", "{adv} dolly the camera {dir} by {mag}"}},
      {MotionKind::Truck, "right", "left",
       {"truck {dir} {mag} {adv}", "slide the camera to the {dir} by {mag} {adv}",
        "make a {adj} truck to the {dir} by {mag}", "{adv} truck the camera {dir} by {mag}"}},
      {MotionKind::Pedestal, "up", "down",
       {"pedestal {dir} {mag} {adv}", "crane the camera {dir} by {mag} {adv}",
        "make a {adj} pedestal {dir} by {mag}", "{adv} crane {dir} by {mag}"}},
      {MotionKind::Zoom, "in", "out",
       {"zoom {dir} {mag} {adv}", "zoom the lens {dir} {mag} {adv}", "make a {adj} zoom {dir} {mag}",
        "{adv} zoom the lens {dir} {mag}"}},
      {MotionKind::Orbit, "right", "left",
       {"orbit {dir} {mag} {adv}", "circle around the subject to the {dir} by {mag} {adv}",
        "make a {adj} orbit to the {dir} by {mag}", "{adv} orbit the subject {dir} by {mag}"}},
      {MotionKind::DollyZoom, "backward", "forward",
       {"dolly zoom {dir} {mag} {adv}", "perform a dolly zoom moving {dir} by {mag} {adv}",
        "make a {adj} dolly zoom {dir} by {mag}", "{adv} perform a dolly zoom {dir} by {mag}"}},
      {MotionKind::Static, "", "",
       {"hold the camera still {dur}", "keep the camera static {dur}", "stay still {dur}",
        "{dur} hold the camera static"}},
  }};
  return table;
}

inline const KindText& kind_text(MotionKind k) {
  for (const auto& kt : kind_texts())
    if (kt.kind == k) return kt;
  return kind_texts().back();
}

inline constexpr std::array<std::string_view, 3> kConnectives = {", then ", ", after that ",
                                                                 " and then "};

inline bool is_rotation_kind(MotionKind k) {
  return k == MotionKind::Pan || k == MotionKind::Tilt || k == MotionKind::Roll ||
         k == MotionKind::Orbit;
}

inline bool is_translation_kind(MotionKind k) {
  return k == MotionKind::Dolly || k == MotionKind::Truck || k == MotionKind::Pedestal ||
         k == MotionKind::DollyZoom;
}

struct MagnitudeWord {
  double value;
  std::string_view words;
};

inline constexpr std::array<MagnitudeWord, 3> kAngleWords = {
    {{30.0, "thirty degrees"}, {60.0, "sixty degrees"}, {90.0, "ninety degrees"}}};
inline constexpr std::array<MagnitudeWord, 3> kDistanceWords = {
    {{0.5, "half a unit"}, {1.0, "one unit"}, {2.0, "two units"}}};
inline constexpr std::array<MagnitudeWord, 2> kZoomWords = {{{0.5, "a little"}, {1.0, "a lot"}}};

inline std::string_view magnitude_words(const MotionPrimitive& p) {
  auto pick = [&](const auto& table) -> std::string_view {
    std::string_view best = table.front().words;
    double err = 1e300;
    for (const auto& w : table) {
      if (std::abs(w.value - p.magnitude) < err) {
        err = std::abs(w.value - p.magnitude);
        best = w.words;
      }
    }
    return best;
  };
  if (is_rotation_kind(p.kind)) return pick(kAngleWords);
  if (p.kind == MotionKind::Zoom) return pick(kZoomWords);
  if (is_translation_kind(p.kind)) return pick(kDistanceWords);
  return "";
}

inline std::string_view speed_adverb(Speed s) {
  return s == Speed::Slow ? "slowly" : s == Speed::Fast ? "quickly" : "";
}
inline std::string_view speed_adjective(Speed s) {
  return s == Speed::Slow ? "slow" : s == Speed::Fast ? "fast" : "";
}
inline std::string_view static_duration(Speed s) {
  return s == Speed::Slow ? "for a long time" : s == Speed::Fast ? "briefly" : "";
}

inline std::string collapse_spaces(const std::string& s) {
  std::string out;
  bool space = true;
  for (char c : s) {
    if (c == ' ') {
      if (!space) out.push_back(' ');
      space = true;
    } else {
      out.push_back(c);
      space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

inline std::string fill(std::string_view tmpl, const MotionPrimitive& p) {
  const KindText& kt = kind_text(p.kind);
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      const auto slot = tmpl.substr(i + 1, close - i - 1);
      if (slot == "dir") out += p.direction >= 0 ? kt.positive : kt.negative;
      else if (slot == "mag") out += magnitude_words(p);
      else if (slot == "adv") out += speed_adverb(p.speed);
      else if (slot == "adj") out += speed_adjective(p.speed);
      else if (slot == "dur") out += static_duration(p.speed);
      i = close + 1;
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return collapse_spaces(out);
}

}  // namespace detail

inline constexpr std::size_t kTemplatesPerKind = 4;

/// Deterministic description. Primitive i uses template (seed + i) mod
/// template_pool, so consecutive seeds always produce different paraphrases.
inline std::string render_description(const std::vector<MotionPrimitive>& ps, std::uint64_t seed,
                                      std::size_t template_pool = kTemplatesPerKind) {
  template_pool = std::clamp<std::size_t>(template_pool, 1, kTemplatesPerKind);
  std::string out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (i > 0) out += detail::kConnectives[(seed + i) % detail::kConnectives.size()];
    const auto& kt = detail::kind_text(ps[i].kind);
    out += detail::fill(kt.templates[(seed + i) % template_pool], ps[i]);
  }
  return out;
}

/// Renders with one fixed template index for every primitive.
inline std::string render_with_template(const std::vector<MotionPrimitive>& ps, std::size_t tmpl,
                                        std::uint64_t connective_seed = 0) {
  std::string out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (i > 0) out += detail::kConnectives[(connective_seed + i) % detail::kConnectives.size()];
    out += detail::fill(detail::kind_text(ps[i].kind).templates[tmpl % kTemplatesPerKind], ps[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Words

/// Lowercased, punctuation stripped, whitespace split.
inline std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '_' || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

/// Every word any description can contain, sorted.
inline std::vector<std::string> lexicon() {
  std::set<std::string> words;
  auto add = [&](std::string_view s) {
    for (auto& w : tokenize_words(s)) words.insert(w);
  };
  for (const auto& kt : detail::kind_texts()) {
    add(kt.positive);
    add(kt.negative);
    for (auto t : kt.templates) {
      std::string plain;
      bool in_slot = false;
      for (char c : t) {
        if (c == '{') in_slot = true;
        if (!in_slot) plain.push_back(c);
        if (c == '}') {
          in_slot = false;
          plain.push_back(' ');
        }
      }
      add(plain);
    }
  }
  for (const auto& w : detail::kAngleWords) add(w.words);
  for (const auto& w : detail::kDistanceWords) add(w.words);
  for (const auto& w : detail::kZoomWords) add(w.words);
  for (Speed s : {Speed::Slow, Speed::Fast}) {
    add(detail::speed_adverb(s));
    add(detail::speed_adjective(s));
    add(detail::static_duration(s));
  }
  for (auto c : detail::kConnectives) add(c);
  return {words.begin(), words.end()};
}

// ---------------------------------------------------------------------------
// Text-side tagger

namespace detail {

inline std::vector<std::vector<std::string>> split_clauses(std::string_view text) {
  // Connectives: "then", "after that", "and then", "next", commas.
  const auto words = tokenize_words(text);
  std::vector<std::vector<std::string>> clauses(1);
  // comma_before[i]: a comma precedes word i in the original text.
  std::vector<bool> comma_before(words.size() + 1, false);
  {
    std::size_t wi = 0;
    bool in_word = false;
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      const bool word_char = std::isalnum(c) || ch == '_' || ch == '\'';
      if (word_char && !in_word) {
        in_word = true;
      } else if (!word_char && in_word) {
        in_word = false;
        ++wi;
      }
      if (ch == ',' && wi < comma_before.size()) comma_before[wi] = true;
    }
  }
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i];
    bool boundary = comma_before[i];
    std::size_t skip = 0;
    if (w == "then" || w == "next") {
      boundary = true;
      skip = 1;
    } else if (w == "after" && i + 1 < words.size() && words[i + 1] == "that") {
      boundary = true;
      skip = 2;
    } else if (w == "and" && i + 1 < words.size() && words[i + 1] == "then") {
      boundary = true;
      skip = 2;
    }
    if (boundary && !clauses.back().empty()) clauses.emplace_back();
    if (skip > 0) {
      i += skip - 1;
      continue;
    }
    clauses.back().push_back(w);
  }
  if (clauses.back().empty()) clauses.pop_back();
  return clauses;
}

inline bool contains(const std::vector<std::string>& ws, std::string_view w) {
  return std::find(ws.begin(), ws.end(), w) != ws.end();
}

inline bool contains_seq(const std::vector<std::string>& ws, std::string_view phrase) {
  const auto p = tokenize_words(phrase);
  if (p.empty() || p.size() > ws.size()) return false;
  for (std::size_t i = 0; i + p.size() <= ws.size(); ++i) {
    if (std::equal(p.begin(), p.end(), ws.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

inline std::optional<MotionKind> clause_kind(const std::vector<std::string>& ws) {
  if (contains_seq(ws, "dolly zoom") || contains(ws, "vertigo")) return MotionKind::DollyZoom;
  if (contains(ws, "pan") || contains(ws, "rotate")) return MotionKind::Pan;
  if (contains(ws, "tilt")) return MotionKind::Tilt;
  if (contains(ws, "roll")) return MotionKind::Roll;
  if (contains(ws, "orbit") || contains(ws, "circle")) return MotionKind::Orbit;
  if (contains(ws, "zoom")) return MotionKind::Zoom;
  if (contains(ws, "dolly") || contains(ws, "push")) return MotionKind::Dolly;
  if (contains(ws, "truck") || contains(ws, "slide")) return MotionKind::Truck;
  if (contains(ws, "pedestal") || contains(ws, "crane")) return MotionKind::Pedestal;
  if (contains(ws, "hold") || contains(ws, "still") || contains(ws, "static") || contains(ws, "stay"))
    return MotionKind::Static;
  return std::nullopt;
}

}  // namespace detail

/// Words that identify a motion clause (used by the query planner).
inline bool has_motion_keyword(const std::vector<std::string>& words) {
  return detail::clause_kind(words).has_value();
}

/// Inverts render_description: recovers primitives (magnitudes snap to the
/// nearest vocabulary level, absent magnitudes take the middle level).
/// Returns nullopt when any clause has no motion keyword.
inline std::optional<std::vector<MotionPrimitive>> parse_description(std::string_view text) {
  std::vector<MotionPrimitive> out;
  for (const auto& ws : detail::split_clauses(text)) {
    const auto kind = detail::clause_kind(ws);
    if (!kind) return std::nullopt;
    MotionPrimitive p;
    p.kind = *kind;
    const auto& kt = detail::kind_text(p.kind);
    if (p.kind != MotionKind::Static) {
      const bool pos = detail::contains(ws, kt.positive);
      const bool neg = detail::contains(ws, kt.negative);
      p.direction = (neg && !pos) ? -1 : 1;
      if (p.kind == MotionKind::Dolly && !pos && !neg) {
        if (detail::contains(ws, "out")) p.direction = -1;
      }
      if (p.kind == MotionKind::DollyZoom && !pos && !neg && detail::contains(ws, "in")) {
        p.direction = -1;
      }
    }
    auto find_mag = [&](const auto& table, double fallback) {
      for (const auto& w : table)
        if (detail::contains_seq(ws, w.words)) return w.value;
      return fallback;
    };
    if (detail::is_rotation_kind(p.kind)) p.magnitude = find_mag(detail::kAngleWords, 60.0);
    else if (p.kind == MotionKind::Zoom) p.magnitude = find_mag(detail::kZoomWords, 0.5);
    else if (p.kind == MotionKind::DollyZoom) p.magnitude = find_mag(detail::kDistanceWords, 0.5);
    else if (detail::is_translation_kind(p.kind)) p.magnitude = find_mag(detail::kDistanceWords, 1.0);
    if (p.kind == MotionKind::Static) {
      p.speed = detail::contains(ws, "long") ? Speed::Slow
                : detail::contains(ws, "briefly") ? Speed::Fast
                                                  : Speed::Medium;
    } else {
      const bool slow = detail::contains(ws, "slowly") || detail::contains(ws, "slow");
      const bool fast = detail::contains(ws, "quickly") || detail::contains(ws, "fast");
      p.speed = slow ? Speed::Slow : fast ? Speed::Fast : Speed::Medium;
    }
    out.push_back(p);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

inline std::vector<MotionTag> tag_text(std::string_view text) {
  std::vector<MotionTag> tags;
  if (auto ps = parse_description(text)) {
    for (const auto& p : *ps) tags.push_back(tag_of(p));
  }
  return tags;
}

// ---------------------------------------------------------------------------
// Trajectory-side tagger

struct TrajectoryTaggerConfig {
  double base_duration_s = 4.0;
  // Thresholds on a piece's motion rate, expressed per whole trajectory
  // (slope per frame times frames - 1).
  double min_angle = deg2rad(15.0);
  double min_translation = 0.25;
  double min_log_zoom = 0.25;
  double penalty = 1.0;           // BIC multiplier for each extra piece
  double noise_floor = 0.12;      // minimum noise scale, in threshold units
  std::size_t min_segment = 4;    // steps
  std::size_t min_run = 6;        // steps; shorter runs merge into neighbours
};

namespace detail {

/// Optimal partition of a multichannel path x (frames x channels) into
/// straight-line pieces: squared residual of a per-channel line fit plus
/// `penalty` per piece. Pieces span at least `min_len` steps and share their
/// boundary frames. Returns piece start frames.
inline std::vector<std::size_t> changepoints(const Eigen::MatrixXd& x, double penalty, std::size_t min_len) {
  const auto frames = static_cast<std::size_t>(x.rows());
  const std::size_t n = frames - 1;
  if (n <= min_len) return {0};
  const Eigen::Index c = x.cols();
  // Prefix sums over frames of k, k^2, x, x^2, k*x.
  std::vector<double> sk(frames + 1, 0.0), skk(frames + 1, 0.0);
  Eigen::MatrixXd sx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frames) + 1, c), sxx = sx, skx = sx;
  for (std::size_t k = 0; k < frames; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double kd = static_cast<double>(k);
    sk[k + 1] = sk[k] + kd;
    skk[k + 1] = skk[k] + kd * kd;
    sx.row(i + 1) = sx.row(i) + x.row(i);
    sxx.row(i + 1) = sxx.row(i) + x.row(i).cwiseProduct(x.row(i));
    skx.row(i + 1) = skx.row(i) + kd * x.row(i);
  }
  auto cost = [&](std::size_t a, std::size_t b) {  // frames a..b inclusive
    const auto lo = static_cast<Eigen::Index>(a), hi = static_cast<Eigen::Index>(b) + 1;
    const double cnt = static_cast<double>(b - a + 1);
    const double mk = (sk[b + 1] - sk[a]) / cnt;
    const double vkk = (skk[b + 1] - skk[a]) - cnt * mk * mk;
    double total = 0.0;
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      const double sx_ = sx(hi, ch) - sx(lo, ch);
      const double vxx = (sxx(hi, ch) - sxx(lo, ch)) - sx_ * sx_ / cnt;
      const double vkx = (skx(hi, ch) - skx(lo, ch)) - mk * sx_;
      total += std::max(0.0, vxx - vkx * vkx / vkk);
    }
    return total;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(n + 1, inf);
  std::vector<std::size_t> prev(n + 1, 0);
  best[0] = 0.0;
  for (std::size_t b = min_len; b <= n; ++b) {
    for (std::size_t a = 0; a + min_len <= b; ++a) {
      if (best[a] == inf) continue;
      const double v = best[a] + cost(a, b) + penalty;
      if (v < best[b]) {
        best[b] = v;
        prev[b] = a;
      }
    }
  }
  std::vector<std::size_t> starts;
  for (std::size_t b = n; b > 0; b = prev[b]) starts.push_back(prev[b]);
  std::reverse(starts.begin(), starts.end());
  return starts;
}

}  // namespace detail

/// Segments a trajectory into runs of one motion kind and reports kind,
/// direction and speed class (from run duration) for each run. The
/// accumulated camera-local motion is split into straight-line pieces and
/// each piece is classified by its slope.
inline std::vector<MotionTag> tag_trajectory(const Trajectory& traj,
                                             const TrajectoryTaggerConfig& cfg = {}) {
  const std::size_t m = traj.frames.size();
  if (m < 2) return {};
  const std::size_t n = m - 1;
  const double dt = traj.duration_s / static_cast<double>(n);

  // Accumulated camera-local increments in threshold units: rotation (3),
  // translation (3), log focal.
  Eigen::MatrixXd path = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), 7);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const Mat3 r0 = rotation_of(traj.frames[i]);
    const Eigen::AngleAxisd aa(r0.transpose() * rotation_of(traj.frames[i + 1]));
    Eigen::Matrix<double, 1, 7> inc;
    inc.segment<3>(0) = (aa.axis() * aa.angle() / cfg.min_angle).transpose();
    inc.segment<3>(3) =
        (r0.transpose() * (traj.frames[i + 1].trans - traj.frames[i].trans) / cfg.min_translation).transpose();
    inc(6) = std::log(traj.frames[i + 1].focal / traj.frames[i].focal) / cfg.min_log_zoom;
    path.row(k + 1) = path.row(k) + inc;
  }
  // Channels standardized by a robust noise scale from second differences.
  Eigen::MatrixXd z = path;
  for (Eigen::Index ch = 0; ch < 7; ++ch) {
    double sigma = 0.0;
    if (m >= 3) {
      std::vector<double> d;
      for (Eigen::Index k = 1; k + 1 < static_cast<Eigen::Index>(m); ++k)
        d.push_back(std::abs(path(k + 1, ch) - 2.0 * path(k, ch) + path(k - 1, ch)));
      std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
      sigma = d[d.size() / 2] / (0.6745 * std::sqrt(6.0));
    }
    z.col(ch) /= std::max(sigma, cfg.noise_floor);
  }
  const double penalty = cfg.penalty * 14.0 * std::log(static_cast<double>(n));
  const auto starts = detail::changepoints(z, penalty, cfg.min_segment);

  struct Run {
    MotionKind kind;
    int dir;
    std::size_t steps;
  };
  auto same = [](const Run& a, const Run& b) { return a.kind == b.kind && a.dir == b.dir; };
  std::vector<Run> runs;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::size_t a = starts[k], b = k + 1 < starts.size() ? starts[k + 1] : n;
    // Least-squares slope per channel, scaled to motion per whole trajectory.
    Eigen::Matrix<double, 1, 7> slope = Eigen::Matrix<double, 1, 7>::Zero();
    const double mid = 0.5 * static_cast<double>(a + b);
    double den = 0.0;
    for (std::size_t f = a; f <= b; ++f) {
      const double dk = static_cast<double>(f) - mid;
      slope += dk * path.row(static_cast<Eigen::Index>(f));
      den += dk * dk;
    }
    slope *= static_cast<double>(n) / den;
    const Vec3 omega = slope.segment<3>(0).transpose(), v = slope.segment<3>(3).transpose();
    const double zr = slope(6);
    const bool rot = omega.norm() > 1.0;
    const bool lin = v.norm() > 1.0;
    const bool zoom = std::abs(zr) > 1.0;
    Run r{MotionKind::Static, 1, b - a};
    Eigen::Index axis = 0;
    if (zoom && lin) {
      r.kind = MotionKind::DollyZoom;
      r.dir = v.z() > 0 ? 1 : -1;
    } else if (zoom) {
      r.kind = MotionKind::Zoom;
      r.dir = zr > 0 ? 1 : -1;
    } else if (rot && lin) {
      r.kind = MotionKind::Orbit;
      r.dir = v.x() > 0 ? 1 : -1;
    } else if (rot) {
      omega.cwiseAbs().maxCoeff(&axis);
      r.kind = axis == 0 ? MotionKind::Tilt : axis == 1 ? MotionKind::Pan : MotionKind::Roll;
      r.dir = omega(axis) > 0 ? 1 : -1;
    } else if (lin) {
      v.cwiseAbs().maxCoeff(&axis);
      r.kind = axis == 0 ? MotionKind::Truck : axis == 1 ? MotionKind::Pedestal : MotionKind::Dolly;
      r.dir = (axis == 2 ? v.z() < 0 : v(axis) > 0) ? 1 : -1;
    }
    if (!runs.empty() && same(runs.back(), r)) runs.back().steps += r.steps;
    else runs.push_back(r);
  }
  // Absorb short runs into the longer neighbour until all runs are long enough.
  bool changed = true;
  while (changed && runs.size() > 1) {
    changed = false;
    std::size_t shortest = 0;
    for (std::size_t i = 1; i < runs.size(); ++i)
      if (runs[i].steps < runs[shortest].steps) shortest = i;
    if (runs[shortest].steps < cfg.min_run) {
      const std::size_t i = shortest;
      std::size_t into;
      if (i == 0) into = 1;
      else if (i + 1 == runs.size()) into = i - 1;
      else into = runs[i - 1].steps >= runs[i + 1].steps ? i - 1 : i + 1;
      runs[into].steps += runs[i].steps;
      runs.erase(runs.begin() + static_cast<std::ptrdiff_t>(i));
      std::vector<Run> merged;
      for (const auto& r : runs) {
        if (!merged.empty() && same(merged.back(), r)) merged.back().steps += r.steps;
        else merged.push_back(r);
      }
      runs = std::move(merged);
      changed = true;
    }
  }
  std::vector<MotionTag> tags;
  for (const auto& r : runs) {
    const double dur = static_cast<double>(r.steps) * dt;
    const double ratio = std::log2(dur / cfg.base_duration_s);
    const Speed s = ratio > 0.5 ? Speed::Slow : ratio < -0.5 ? Speed::Fast : Speed::Medium;
    tags.push_back(MotionTag{r.kind, r.kind == MotionKind::Static ? 1 : r.dir, s});
  }
  return tags;
}

// ---------------------------------------------------------------------------
// Corpus

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename T, std::size_t N>
const T& pick(std::mt19937_64& rng, const std::array<T, N>& a) {
  return a[rng() % N];
}

}  // namespace detail

/// One random primitive of the given kind from the closed magnitude levels.
inline MotionPrimitive random_primitive(std::mt19937_64& rng, MotionKind kind) {
  MotionPrimitive p;
  p.kind = kind;
  p.direction = (rng() % 2 == 0) ? 1 : -1;
  constexpr std::array<Speed, 3> speeds = {Speed::Slow, Speed::Medium, Speed::Fast};
  p.speed = detail::pick(rng, speeds);
  if (detail::is_rotation_kind(kind)) {
    p.magnitude = detail::pick(rng, detail::kAngleWords).value;
  } else if (kind == MotionKind::Zoom) {
    p.magnitude = detail::pick(rng, detail::kZoomWords).value;
  } else if (kind == MotionKind::DollyZoom) {
    // Moving forward must keep the subject in front of the camera.
    p.magnitude = p.direction > 0 ? detail::pick(rng, detail::kZoomWords).value : 0.5;
  } else if (detail::is_translation_kind(kind)) {
    p.magnitude = detail::pick(rng, detail::kDistanceWords).value;
  } else {
    p.direction = 1;
    p.magnitude = 0.0;
  }
  return p;
}

/// Segments sampled at native_fps so that time is uniform across the chained
/// trajectory, then resampled to cfg.frames.
inline Trajectory trajectory_for(const std::vector<MotionPrimitive>& ps, const GenConfig& cfg) {
  std::vector<std::size_t> frames;
  for (const auto& p : ps) {
    const double dur = cfg.base_duration_s * speed_factor(p.speed);
    frames.push_back(static_cast<std::size_t>(std::lround(dur * cfg.native_fps)) + 1);
  }
  return resample(compose_primitives(ps, frames, cfg.base_duration_s, cfg.base_focal), cfg.frames);
}

struct GeneratedItem {
  std::vector<MotionPrimitive> primitives;
  TextTrajPair pair;
};

/// Item i depends only on (seed, i). The first primitive of item i has kind
/// i mod 10, so any corpus of 10 or more items covers every kind.
inline GeneratedItem generate_item(std::uint64_t seed, std::size_t index, const GenConfig& cfg) {
  std::mt19937_64 rng(detail::splitmix64(seed * 0x100000001B3ULL + index));
  const std::size_t span = cfg.max_primitives - cfg.min_primitives + 1;
  const std::size_t count = cfg.min_primitives + rng() % span;
  GeneratedItem item;
  for (std::size_t j = 0; j < count; ++j) {
    MotionKind kind = j == 0 ? kAllKinds[index % kAllKinds.size()] : detail::pick(rng, kAllKinds);
    MotionPrimitive p = random_primitive(rng, kind);
    // Consecutive identical motions would be indistinguishable from one.
    while (!item.primitives.empty() && tag_of(item.primitives.back()).kind == p.kind &&
           tag_of(item.primitives.back()).direction == tag_of(p).direction) {
      p = random_primitive(rng, detail::pick(rng, kAllKinds));
    }
    item.primitives.push_back(p);
  }
  const std::uint64_t text_seed = rng();
  item.pair.text = render_description(item.primitives, text_seed % 997, cfg.template_pool);
  item.pair.traj = trajectory_for(item.primitives, cfg);
  return item;
}

inline std::vector<TextTrajPair> generate_dataset(std::size_t n, std::uint64_t seed,
                                                  const GenConfig& cfg = {}) {
  if (n < 1) throw Error(ErrorCode::BadRequest, "dataset size must be at least 1");
  std::vector<TextTrajPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_item(seed, i, cfg).pair);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

inline std::string pair_to_jsonl(const TextTrajPair& p) {
  json j{{"text", p.text}, {"duration_s", p.traj.duration_s}, {"frames", frames_to_json(p.traj)}};
  return j.dump();
}

inline TextTrajPair pair_from_json(const json& j) {
  TextTrajPair p;
  try {
    p.text = j.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("pair: ") + e.what());
  }
  p.traj = trajectory_from_json(j);
  if (p.text.empty()) throw Error(ErrorCode::FormatError, "pair text is empty");
  return p;
}

inline std::string to_jsonl(const std::vector<TextTrajPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += pair_to_jsonl(p);
    out.push_back('\n');
  }
  return out;
}

inline std::vector<TextTrajPair> from_jsonl(std::istream& in) {
  std::vector<TextTrajPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(pair_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::FormatError, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<TextTrajPair> from_jsonl(const std::string& text) {
  std::istringstream in(text);
  return from_jsonl(in);
}

inline void save_jsonl(const std::string& path, const std::vector<TextTrajPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << to_jsonl(pairs);
}

inline std::vector<TextTrajPair> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  return from_jsonl(in);
}

}  // namespace chatcam
