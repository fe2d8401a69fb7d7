#include <gtest/gtest.h>

#include <random>

#include "chatcam/compose.hpp"
#include "chatcam/planner.hpp"
#include "chatcam/vocab.hpp"
#include "test_util.hpp"

using namespace chatcam;

namespace {

Plan plan_of(std::vector<PlanStep> steps) { return Plan{std::move(steps)}; }

class ScriptedClient : public ChatClient {
 public:
  explicit ScriptedClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const std::vector<ChatMessage>& messages) const override {
    seen.push_back(messages);
    if (calls >= replies_.size()) throw Error(ErrorCode::RemotePlannerUnavailable, "script exhausted");
    return replies_[calls++];
  }
  mutable std::size_t calls = 0;
  mutable std::vector<std::vector<ChatMessage>> seen;

 private:
  std::vector<std::string> replies_;
};

class DownClient : public ChatClient {
 public:
  std::string complete(const std::vector<ChatMessage>&) const override {
    throw Error(ErrorCode::RemotePlannerUnavailable, "connection refused");
  }
};

Trajectory primitive_traj(MotionKind kind, int dir, double mag, std::size_t frames = 24) {
  MotionPrimitive p;
  p.kind = kind;
  p.direction = dir;
  p.magnitude = mag;
  return compose_primitives(std::vector<MotionPrimitive>{p}, frames, 4.0);
}

CameraFrame random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> f(0.6, 1.8);
  return CameraFrame{normalized(Rot6D{Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))}),
                     Vec3(n(rng), n(rng), n(rng)) * 3.0, f(rng)};
}

double focal_gap(const CameraFrame& a, const CameraFrame& b) { return std::abs(a.focal - b.focal); }

}  // namespace

// ---------------------------------------------------------------------------
// Grammar

TEST(ParseQuery, SingleMotion) {
  EXPECT_EQ(parse_query("pan left slowly"), plan_of({AtomicStep{"pan left slowly", {}}}));
  EXPECT_EQ(parse_query("  Pan LEFT slowly. "), plan_of({AtomicStep{"pan left slowly", {}}}));
}

TEST(ParseQuery, StartAnchorClauseAttachesToNextMotion) {
  // Clauses: [starting from the red chair] [dolly forward] [pan right]. The
  // anchor clause has no motion, so its start anchor binds to the following
  // motion clause, atomic 0.
  EXPECT_EQ(parse_query("starting from the red chair, dolly forward, then pan right"),
            plan_of({AtomicStep{"dolly forward", {}}, AnchorStep{"red chair", AnchorRole::Start, 0},
                     AtomicStep{"pan right", {}}}));
}

TEST(ParseQuery, AnchorForms) {
  EXPECT_EQ(parse_query("orbit right, ending above the fountain"),
            plan_of({AtomicStep{"orbit right", {}}, AnchorStep{"fountain", AnchorRole::End, 0}}));
  EXPECT_EQ(parse_query("orbit right ending above the fountain"),
            plan_of({AtomicStep{"orbit right", {}}, AnchorStep{"fountain", AnchorRole::End, 0}}));
  EXPECT_EQ(parse_query("dolly forward from the old door to the big window"),
            plan_of({AtomicStep{"dolly forward", {}}, AnchorStep{"old door", AnchorRole::Start, 0},
                     AnchorStep{"big window", AnchorRole::End, 0}}));
  EXPECT_EQ(parse_query("starting at the bench slowly pan left, then tilt up and end up near a lamp"),
            plan_of({AtomicStep{"slowly pan left", {}}, AnchorStep{"bench", AnchorRole::Start, 0},
                     AtomicStep{"tilt up", {}}, AnchorStep{"lamp", AnchorRole::End, 1}}));
  // An end anchor before any motion falls back to the following one.
  EXPECT_EQ(parse_query("ending at the gate, truck left"),
            plan_of({AtomicStep{"truck left", {}}, AnchorStep{"gate", AnchorRole::End, 0}}));
  EXPECT_EQ(parse_query("starting above the fountain, orbit right, then dolly in"),
            plan_of({AtomicStep{"orbit right", {}}, AnchorStep{"fountain", AnchorRole::Start, 0},
                     AtomicStep{"dolly in", {}}}));
}

TEST(ParseQuery, ConnectivesAndDurations) {
  const Plan p = parse_query("pan left, after that tilt up and then zoom in for 3 seconds next hold the camera still");
  ASSERT_EQ(p.steps.size(), 4u);
  EXPECT_EQ(std::get<AtomicStep>(p.steps[2]), (AtomicStep{"zoom in", 3.0}));
  EXPECT_EQ(std::get<AtomicStep>(p.steps[3]).prompt, "hold the camera still");
}

TEST(ParseQuery, Errors) {
  expect_error(ErrorCode::UnparsableQuery, [] { parse_query(""); });
  expect_error(ErrorCode::UnparsableQuery, [] { parse_query(" , ."); });
  expect_error(ErrorCode::UnparsableQuery, [] { parse_query("starting at the bench"); });
  expect_error(ErrorCode::UnparsableQuery, [] { parse_query("starting at the bench, pan left starting from a tree"); });
  expect_error(ErrorCode::UnparsableQuery, [] { parse_query("dolly forward from the door to"); });
  try {
    parse_query("pan left, then wobble sideways");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnparsableQuery);
    EXPECT_NE(std::string(e.what()).find("\"wobble sideways\""), std::string::npos) << e.what();
  }
}

TEST(ParseQuery, CorpusDescriptionsSplitIntoPrimitives) {
  const Vocab vocab = Vocab::standard(8);
  for (std::size_t k = 0; k < 300; ++k) {
    const auto item = generate_item(21, k, GenConfig{});
    const auto& pair = item.pair;
    const Plan p = parse_query(pair.text);
    ASSERT_EQ(p.atomic_count(), item.primitives.size()) << pair.text;
    EXPECT_EQ(p.steps.size(), p.atomic_count()) << pair.text;
    for (std::size_t i = 0; i < p.steps.size(); ++i) {
      const auto& a = std::get<AtomicStep>(p.steps[i]);
      EXPECT_NO_THROW(vocab.encode_text(a.prompt));
      EXPECT_EQ(tag_text(a.prompt), std::vector<MotionTag>{tag_of(item.primitives[i])}) << a.prompt;
    }
  }
}

TEST(PlanJson, RoundTripIsExact) {
  for (const char* q : {"pan left slowly", "starting from the red chair, dolly forward, then pan right",
                        "truck left for 4 seconds, then orbit right from the gate to the bench", "zoom in ending at the statue"}) {
    const Plan p = parse_query(q);
    const json j = plan_to_json(p);
    EXPECT_EQ(j["version"], 1);
    EXPECT_EQ(plan_from_json(j), p) << q;
    EXPECT_EQ(plan_to_json(plan_from_json(json::parse(j.dump()))).dump(), j.dump());
  }
}

TEST(PlanJson, ValidationRules) {
  expect_error(ErrorCode::PlanValidationFailed, [] { validate(Plan{}); });
  expect_error(ErrorCode::PlanValidationFailed,
               [] { validate(plan_of({AnchorStep{"x", AnchorRole::Start, 0}})); });
  expect_error(ErrorCode::PlanValidationFailed,
               [] { validate(plan_of({AtomicStep{"pan left", {}}, AnchorStep{"x", AnchorRole::Start, 1}})); });
  expect_error(ErrorCode::PlanValidationFailed, [] {
    validate(plan_of({AtomicStep{"pan left", {}}, AnchorStep{"x", AnchorRole::End, 0}, AnchorStep{"y", AnchorRole::End, 0}}));
  });
  expect_error(ErrorCode::PlanValidationFailed, [] { validate(plan_of({AtomicStep{"pan left", -1.0}})); });
  expect_error(ErrorCode::PlanValidationFailed, [] { validate(plan_of({AtomicStep{" ", {}}})); });
  expect_error(ErrorCode::PlanValidationFailed, [] { plan_from_json(json{{"version", 2}, {"steps", json::array()}}); });
  EXPECT_NO_THROW(validate(plan_of({AtomicStep{"pan left", {}}, AnchorStep{"x", AnchorRole::Start, 0},
                                    AnchorStep{"y", AnchorRole::End, 0}})));
}

// ---------------------------------------------------------------------------
// Chat planner

TEST(LlmPlan, ValidReplyPassesThrough) {
  const Plan want = parse_query("starting from the red chair, dolly forward, then pan right");
  ScriptedClient c({"```json\n" + plan_to_json(want).dump(2) + "\n```"});
  EXPECT_EQ(llm_plan("whatever", c), want);
  ASSERT_EQ(c.seen.size(), 1u);
  EXPECT_EQ(c.seen[0][0].role, "system");
  EXPECT_EQ(c.seen[0][0].content, planner_instructions());
  EXPECT_EQ(c.seen[0][1].content, "whatever");
}

TEST(LlmPlan, RetriesOnceWithFeedback) {
  const Plan want = parse_query("pan left");
  ScriptedClient c({"no idea", plan_to_json(want).dump()});
  TraceLog trace;
  EXPECT_EQ(llm_plan("pan left", c, &trace), want);
  ASSERT_EQ(c.seen.size(), 2u);
  EXPECT_NE(c.seen[1].back().content.find("invalid"), std::string::npos);
  EXPECT_EQ(trace.count("llm_plan"), 2u);

  ScriptedClient bad({"{", "{\"version\": 1, \"steps\": []}"});
  expect_error(ErrorCode::PlanValidationFailed, [&] { llm_plan("pan left", bad); });
  EXPECT_EQ(bad.calls, 2u);
}

TEST(LlmPlan, CosmeticRepairs) {
  ScriptedClient c({R"({"steps": [{"type": " Atomic", "prompt": "pan left"},
                                  {"type": "anchor", "prompt": "tree", "role": "END", "attaches_to": "0"}]})"});
  EXPECT_EQ(llm_plan("q", c), plan_of({AtomicStep{"pan left", {}}, AnchorStep{"tree", AnchorRole::End, 0}}));
}

TEST(LlmPlan, UnavailableEndpointFallsBackToGrammar) {
  DownClient down;
  expect_error(ErrorCode::RemotePlannerUnavailable, [&] { llm_plan("pan left", down); });
  TraceLog trace;
  EXPECT_EQ(make_plan("pan left, then tilt up", &down, &trace), parse_query("pan left, then tilt up"));
  EXPECT_NE(trace.reasoning.find("RemotePlannerUnavailable"), std::string::npos);
  ScriptedClient garbage({"x", "y"});
  EXPECT_EQ(make_plan("pan left", &garbage), parse_query("pan left"));
  EXPECT_EQ(make_plan("pan left", nullptr), parse_query("pan left"));
}

TEST(LlmPlan, MutationFuzzNeverCrashes) {
  const json base = plan_to_json(parse_query("starting at the gate, dolly forward, then orbit right ending above the fountain"));
  std::mt19937_64 rng(99);
  std::size_t accepted = 0;
  const std::vector<json> junk{json(), json(-1), json(1e12), json("0"), json(2.5), json::array(), json::object(),
                               json("end"), json(""), json(true)};
  for (int trial = 0; trial < 100; ++trial) {
    json j = base;
    const int edits = 1 + static_cast<int>(rng() % 3);
    for (int e = 0; e < edits; ++e) {
      auto& steps = j["steps"];
      const std::size_t si = rng() % steps.size();
      switch (rng() % 6) {
        case 0: steps[si]["attaches_to"] = static_cast<int>(rng() % 7) - 2; break;
        case 1: steps[si].erase(std::vector<std::string>{"type", "prompt", "role", "attaches_to"}[rng() % 4]); break;
        case 2: steps[si][std::vector<std::string>{"type", "prompt", "role", "attaches_to", "duration_hint"}[rng() % 5]] = junk[rng() % junk.size()]; break;
        case 3: steps.erase(si); if (steps.empty()) steps.push_back(json::object()); break;
        case 4: steps.push_back(steps[si]); break;
        case 5: j[std::vector<std::string>{"version", "steps"}[rng() % 2]] = junk[rng() % junk.size()]; break;
      }
      if (!j.contains("steps") || !j["steps"].is_array() || j["steps"].empty()) break;
    }
    ScriptedClient c({j.dump(), j.dump()});
    try {
      const Plan p = llm_plan("q", c);
      EXPECT_NO_THROW(validate(p));
      ++accepted;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::PlanValidationFailed) << e.what();
    } catch (const std::exception& e) {
      ADD_FAILURE() << "unexpected exception on " << j.dump() << ": " << e.what();
    }
  }
  EXPECT_GT(accepted, 0u);
  EXPECT_LT(accepted, 100u);
}

// ---------------------------------------------------------------------------
// Composition

TEST(Compose, SingleUnanchoredAtomicIsUnchanged) {
  const Trajectory t = primitive_traj(MotionKind::Dolly, 1, 1.0);
  const auto c = compose(parse_query("dolly forward"), {t}, {});
  EXPECT_EQ(c.trajectory, t);
  EXPECT_EQ(c.segments[0].placement, Placement::AsIs);
  EXPECT_EQ(c.trace.count("compose"), 1u);
}

TEST(Compose, StartAnchorSetsFirstPose) {
  std::mt19937_64 rng(1);
  const CameraFrame p = random_pose(rng);
  const Trajectory t = primitive_traj(MotionKind::Orbit, 1, 60.0);
  const auto c = compose(parse_query("orbit right starting from the tree"), {t}, {{1, p}});
  EXPECT_EQ(c.trajectory.front(), p);
  // Rigid: pairwise distances survive.
  for (std::size_t k = 1; k < t.size(); ++k)
    EXPECT_NEAR((c.trajectory.frames[k].trans - p.trans).norm(), (t.frames[k].trans - t.front().trans).norm(), 1e-12);
}

TEST(Compose, TwoAtomicsStartAndEndAnchorsMatchOracle) {
  std::mt19937_64 rng(2);
  const CameraFrame a = random_pose(rng), b = random_pose(rng);
  const Trajectory t0 = primitive_traj(MotionKind::Dolly, 1, 1.0), t1 = primitive_traj(MotionKind::Truck, 1, 2.0);
  const Plan plan = parse_query("dolly forward starting from the door, then truck right ending at the window");
  ASSERT_EQ(plan.steps.size(), 4u);
  const auto c = compose(plan, {t0, t1}, {{1, a}, {3, b}});

  // Oracle for segment 0: the rigid map taking t0's first pose to a.
  const Mat3 r = rotation_of(a) * rotation_of(t0.front()).transpose();
  for (std::size_t k = 0; k < t0.size(); ++k) {
    const Vec3 p = r * (t0.frames[k].trans - t0.front().trans) + a.trans;
    EXPECT_LT((c.trajectory.frames[k].trans - p).norm(), 1e-12);
  }
  // Segment 1 is pinned by the end of segment 0 and by b.
  const CameraFrame junction = c.placed[0].back();
  EXPECT_LT(pose_gap(junction, c.placed[1].front()), 1e-9);
  EXPECT_LT(focal_gap(junction, c.placed[1].front()), 1e-9);
  EXPECT_LT((c.trajectory.back().trans - b.trans).norm(), 1e-6);
  EXPECT_LT(pose_gap(c.trajectory.back(), b), 1e-9);
  // Similarity: distances from the junction scale uniformly.
  const double s = (b.trans - junction.trans).norm() / (t1.back().trans - t1.front().trans).norm();
  EXPECT_NEAR(c.segments[1].scale, s, 1e-12);
  for (std::size_t k = 0; k < t1.size(); ++k)
    EXPECT_NEAR((c.placed[1].frames[k].trans - junction.trans).norm(), s * (t1.frames[k].trans - t1.front().trans).norm(), 1e-9);
  EXPECT_EQ(c.trajectory.size(), t0.size() + t1.size() - 1);
  EXPECT_DOUBLE_EQ(c.trajectory.duration_s, t0.duration_s + t1.duration_s);
}

TEST(Compose, BothAnchorsBlendRotationAndFocal) {
  std::mt19937_64 rng(3);
  const CameraFrame s = random_pose(rng), e = random_pose(rng);
  const Trajectory t = primitive_traj(MotionKind::Pedestal, 1, 1.0, 40);
  const auto c = compose(parse_query("pedestal up from the floor to the roof"), {t}, {{1, s}, {2, e}});
  EXPECT_EQ(c.trajectory.front(), s);
  EXPECT_EQ(c.trajectory.back(), e);
  // Orientation changes smoothly: no step larger than the total angle spread
  // over the frames plus the motion's own rotation.
  const double total = geodesic_angle(rotation_of(s), rotation_of(e));
  for (std::size_t k = 1; k < c.trajectory.size(); ++k) {
    EXPECT_LT(geodesic_angle(rotation_of(c.trajectory.frames[k - 1]), rotation_of(c.trajectory.frames[k])),
              total / 39.0 + 1e-9);
    EXPECT_GT(c.trajectory.frames[k].focal, std::min(s.focal, e.focal) - 1e-12);
    EXPECT_LT(c.trajectory.frames[k].focal, std::max(s.focal, e.focal) + 1e-12);
  }
}

TEST(Compose, InfeasibleCases) {
  std::mt19937_64 rng(4);
  const CameraFrame a = random_pose(rng), b = random_pose(rng);
  // A pan has no net displacement, so two distinct anchor positions cannot be met.
  expect_error(ErrorCode::InfeasibleComposition, [&] {
    compose(parse_query("pan left from the door to the window"), {primitive_traj(MotionKind::Pan, 1, 60.0)}, {{1, a}, {2, b}});
  });
  // Coincident anchors would need scale 0 for a dolly.
  CameraFrame a2 = a;
  a2.rot = b.rot;
  expect_error(ErrorCode::InfeasibleComposition, [&] {
    compose(parse_query("dolly forward from the door to the window"), {primitive_traj(MotionKind::Dolly, 1, 1.0)}, {{1, a}, {2, a2}});
  });
  // End of one motion and start of the next pinned to different poses.
  const Plan p = plan_of({AtomicStep{"dolly forward", {}}, AnchorStep{"door", AnchorRole::End, 0},
                          AtomicStep{"truck left", {}}, AnchorStep{"window", AnchorRole::Start, 1}});
  try {
    compose(p, {primitive_traj(MotionKind::Dolly, 1, 1.0), primitive_traj(MotionKind::Truck, -1, 1.0)}, {{1, a}, {3, b}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleComposition);
    EXPECT_EQ(e.step(), std::optional<std::size_t>(3));
  }
  // Same pose from both sides is fine.
  EXPECT_NO_THROW(compose(p, {primitive_traj(MotionKind::Dolly, 1, 1.0), primitive_traj(MotionKind::Truck, -1, 1.0)},
                          {{1, a}, {3, a}}));
  expect_error(ErrorCode::BadRequest, [&] { compose(p, {primitive_traj(MotionKind::Dolly, 1, 1.0)}, {{1, a}, {3, a}}); });
  expect_error(ErrorCode::BadRequest, [&] {
    compose(p, {primitive_traj(MotionKind::Dolly, 1, 1.0), primitive_traj(MotionKind::Truck, -1, 1.0)}, {{1, a}});
  });
}

TEST(Compose, RandomPlansAreContinuousAndPassThroughAnchors) {
  std::mt19937_64 rng(5);
  const std::array<MotionKind, 5> moving{MotionKind::Dolly, MotionKind::Truck, MotionKind::Pedestal, MotionKind::Orbit,
                                         MotionKind::DollyZoom};
  double worst_gap = 0, worst_anchor = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 5;
    std::vector<Trajectory> atomics;
    Plan plan;
    AnchorPoses poses;
    std::vector<bool> junction_used(n + 1, false);
    std::vector<std::pair<std::size_t, std::size_t>> anchor_frames;  // plan step, atomic end index
    for (std::size_t i = 0; i < n; ++i) {
      const MotionKind k = moving[rng() % moving.size()];
      atomics.push_back(primitive_traj(k, rng() % 2 ? 1 : -1, k == MotionKind::Orbit ? 90.0 : (k == MotionKind::DollyZoom ? 0.5 : 1.0), 12 + rng() % 30));
      plan.steps.emplace_back(AtomicStep{std::string(kind_name(k)), {}});
      for (AnchorRole role : {AnchorRole::Start, AnchorRole::End}) {
        const std::size_t j = role == AnchorRole::Start ? i : i + 1;
        if (junction_used[j] || rng() % 3 != 0) continue;
        junction_used[j] = true;
        poses[plan.steps.size()] = random_pose(rng);
        plan.steps.emplace_back(AnchorStep{"place", role, i});
      }
    }
    const Plan plan_copy = plan;
    const auto atomics_copy = atomics;
    const auto poses_copy = poses;
    const Composition c = compose(plan, atomics, poses);
    EXPECT_EQ(plan, plan_copy);
    EXPECT_EQ(atomics, atomics_copy);
    EXPECT_EQ(poses, poses_copy);
    ASSERT_EQ(c.placed.size(), n);
    std::size_t frames = 1;
    for (std::size_t i = 0; i < n; ++i) frames += atomics[i].size() - 1;
    ASSERT_EQ(c.trajectory.size(), frames);
    validate(c.trajectory);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      worst_gap = std::max(worst_gap, pose_gap(c.placed[i].back(), c.placed[i + 1].front()));
      worst_gap = std::max(worst_gap, focal_gap(c.placed[i].back(), c.placed[i + 1].front()));
    }
    for (std::size_t i = 0; i < n; ++i) {
      // The composed path contains each placed segment verbatim.
      for (std::size_t k = 0; k < c.placed[i].size(); ++k)
        worst_gap = std::max(worst_gap, pose_gap(c.trajectory.frames[c.segments[i].first_frame + k], c.placed[i].frames[k]));
    }
    std::size_t a = 0;
    for (std::size_t s = 0; s < plan.steps.size(); ++s) {
      if (std::holds_alternative<AtomicStep>(plan.steps[s])) {
        ++a;
        continue;
      }
      const auto& an = std::get<AnchorStep>(plan.steps[s]);
      const auto& seg = c.segments[an.attaches_to];
      const std::size_t f = an.role == AnchorRole::Start ? seg.first_frame : seg.last_frame;
      worst_anchor = std::max(worst_anchor, (c.trajectory.frames[f].trans - poses.at(s).trans).norm());
    }
  }
  EXPECT_LT(worst_gap, 1e-9);
  EXPECT_LT(worst_anchor, 1e-6);
}
