#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "chatcam/anchor.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace chatcam;

namespace {

// Straight per-pixel splatting in long double, written independently of the
// library renderer (explicit world-to-camera via the inverse pose matrix).
Eigen::VectorXd oracle_render(const std::vector<Blob>& content, const CameraFrame& cam, int res) {
  const Eigen::Matrix4d w2c = camera_to_world(cam).inverse();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(3 * res * res);
  for (const auto& b : content) {
    const Eigen::Vector4d ph = w2c * Eigen::Vector4d(b.center.x(), b.center.y(), b.center.z(), 1.0);
    const long double depth = -ph.z();
    const long double near = 0.05L, s = 0.05L;
    const long double gate = 1.0L / (1.0L + std::exp(-40.0L * (depth - near)));
    const long double zeff = near + s * std::log1p(std::exp((depth - near) / s));
    const long double px = cam.focal * ph.x() / zeff, py = cam.focal * ph.y() / zeff;
    const long double sig = cam.focal * b.radius / zeff;
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c) {
        const long double u = (c + 0.5L) / res - 0.5L, v = 0.5L - (r + 0.5L) / res;
        const long double w = gate * std::exp(-((u - px) * (u - px) + (v - py) * (v - py)) / (2 * sig * sig));
        for (int ch = 0; ch < 3; ++ch) out((r * res + c) * 3 + ch) += static_cast<double>(w * b.color(ch));
      }
  }
  return out;
}

std::vector<std::string> labels(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("landmark number " + std::to_string(i));
  return out;
}

CameraFrame jittered(const CameraFrame& f, std::mt19937_64& rng, double amount) {
  std::normal_distribution<double> n(0.0, amount);
  CameraFrame out = f;
  out.rot = normalized(Rot6D{f.rot.a + Vec3(n(rng), n(rng), n(rng)), f.rot.b + Vec3(n(rng), n(rng), n(rng))});
  out.trans += Vec3(n(rng), n(rng), n(rng));
  out.focal *= 1.0 + n(rng);
  return out;
}

Scene oracle_scene() {
  Scene s;
  s.id = "oracle";
  s.bounds = Bounds{Vec3::Constant(-5), Vec3::Constant(5)};
  s.content = {{Vec3(0, 0, -3), 0.3, Vec3(1, 0, 0)},       {Vec3(0.8, 0.5, -4), 0.25, Vec3(0, 1, 0)},
               {Vec3(-0.9, -0.4, -2.5), 0.2, Vec3(0, 0, 1)}, {Vec3(0.5, -0.6, -2), 0.2, Vec3(1, 1, 0)},
               {Vec3(-0.4, 0.7, -5), 0.35, Vec3(0, 1, 1)}};
  s.images = {{"front", canonical_frame(), std::nullopt}};
  return s;
}

// Returns a fixed image embedding; text embeddings come from a table.
class FixedProvider : public EmbeddingProvider {
 public:
  FixedProvider(Embedding image, std::map<std::string, Embedding> texts) : image_(std::move(image)), texts_(std::move(texts)) {}
  std::size_t dim() const override { return static_cast<std::size_t>(image_.size()); }
  Embedding embed_text(std::string_view t) const override { return texts_.at(std::string(t)); }
  Embedding embed_image(const Raster&) const override { return image_; }

 private:
  Embedding image_;
  std::map<std::string, Embedding> texts_;
};

}  // namespace

TEST(RotationJacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    const Rot6D r{Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), n(rng))};
    const auto jac = rotation_jacobian(r);
    for (int k = 0; k < 6; ++k) {
      Rot6D up = r, dn = r;
      (k < 3 ? up.a : up.b)(k % 3) += 1e-6;
      (k < 3 ? dn.a : dn.b)(k % 3) -= 1e-6;
      const Mat3 fd = (rot6d_to_matrix(up) - rot6d_to_matrix(dn)) / 2e-6;
      EXPECT_LT((fd - jac[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff(), 1e-7);
    }
  }
}

TEST(ToyRender, EmptyContentGivesZeroRaster) {
  const Raster r = toy_render({}, canonical_frame());
  EXPECT_EQ(r.res, 32);
  EXPECT_EQ(r.data.size(), 3 * 32 * 32);
  EXPECT_EQ(r.data.norm(), 0.0);
}

TEST(ToyRender, BlobOnOpticalAxisIsCentered) {
  const Raster r = toy_render({Blob{Vec3(0, 0, -1), 0.05, Vec3(1, 1, 1)}}, canonical_frame());
  double total = 0, cx = 0, cy = 0;
  for (int row = 0; row < 32; ++row)
    for (int col = 0; col < 32; ++col) {
      const double w = r.at(row, col, 0);
      total += w;
      cx += w * (col + 0.5);
      cy += w * (row + 0.5);
      EXPECT_NEAR(w, r.at(31 - row, 31 - col, 0), 1e-15);
    }
  EXPECT_NEAR(cx / total, 16.0, 1e-9);
  EXPECT_NEAR(cy / total, 16.0, 1e-9);
  double peak = 0;
  for (Eigen::Index i = 0; i < r.data.size(); ++i) peak = std::max(peak, r.data(i));
  EXPECT_EQ(r.at(15, 15, 0), peak);
}

TEST(ToyRender, BlobBehindCameraIsGatedOff) {
  const Raster behind = toy_render({Blob{Vec3(0, 0, 1), 0.3, Vec3(1, 1, 1)}}, canonical_frame());
  EXPECT_LT(behind.data.cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_TRUE(behind.data.allFinite());
  // Crossing the camera plane stays finite and continuous: shrinking the
  // step shrinks the change in proportion.
  const auto total = [](double z) {
    const Raster r = toy_render({Blob{Vec3(0, 0, z), 0.3, Vec3(1, 1, 1)}}, canonical_frame());
    EXPECT_TRUE(r.data.allFinite());
    return r.data.sum();
  };
  for (double z = 0.2; z >= -0.2; z -= 0.02) {
    const double coarse = std::abs(total(z + 1e-3) - total(z));
    const double fine = std::abs(total(z + 1e-4) - total(z));
    EXPECT_LT(fine, 0.2 * coarse + 1e-9) << z;
  }
}

TEST(ToyRender, MatchesIndependentRenderer) {
  const Scene s = oracle_scene();
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const CameraFrame cam = jittered(canonical_frame(), rng, 0.2);
    EXPECT_LT((toy_render(s.content, cam, 24).data - oracle_render(s.content, cam, 24)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ToyRender, CameraJacobianMatchesFiniteDifferences) {
  const Scene s = oracle_scene();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const CameraFrame cam = jittered(canonical_frame(), rng, 0.15);
    Eigen::MatrixXd jac;
    toy_render(s.content, cam, 32, &jac);
    const CameraParams p = to_params(cam);
    double worst = 0;
    for (int k = 0; k < 10; ++k) {
      CameraParams up = p, dn = p;
      up(k) += 1e-5;
      dn(k) -= 1e-5;
      const Eigen::VectorXd fd =
          (toy_render(s.content, from_params(up)).data - toy_render(s.content, from_params(dn)).data) / 2e-5;
      for (Eigen::Index i = 0; i < fd.size(); ++i) worst = std::max(worst, test::rel_err(jac(i, k), fd(i)));
    }
    EXPECT_LT(worst, 1e-4) << "trial " << trial;
  }
}

TEST(Selection, HandCases) {
  const std::vector<Embedding> ims{Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
  Match m = best_match(ims, Eigen::Vector2d(0, 1));
  EXPECT_EQ(m.index, 1u);
  EXPECT_DOUBLE_EQ(m.score, 1.0);
  m = best_match(ims, Eigen::Vector2d(0, 5));
  EXPECT_EQ(m.index, 1u);
  EXPECT_DOUBLE_EQ(m.score, 1.0);
  // Tie: both images at 45 degrees.
  EXPECT_EQ(best_match(ims, Eigen::Vector2d(1, 1)).index, 0u);
  expect_error(ErrorCode::EmptyScene, [&] { best_match({}, Eigen::Vector2d(1, 0)); });
  Scene empty;
  empty.id = "empty";
  SyntheticProvider prov(8);
  expect_error(ErrorCode::EmptyScene, [&] { select_initial_anchor(empty, prov, "anything"); });
}

TEST(Selection, MatchesExhaustiveScanAndIsScaleInvariant) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 64; ++trial) {
    std::vector<Embedding> ims;
    for (int i = 0; i < 64; ++i) {
      Embedding e(16);
      for (auto& x : e) x = n(rng);
      ims.push_back(e.normalized());
    }
    Embedding q(16);
    for (auto& x : q) x = n(rng);
    std::size_t oracle = 0;
    double best = -2;
    for (std::size_t i = 0; i < ims.size(); ++i) {
      double dot = 0, nq = 0;
      for (Eigen::Index k = 0; k < 16; ++k) {
        dot += ims[i](k) * q(k);
        nq += q(k) * q(k);
      }
      const double c = dot / std::sqrt(nq);
      if (c > best) best = c, oracle = i;
    }
    const Match m = best_match(ims, q);
    EXPECT_EQ(m.index, oracle);
    EXPECT_NEAR(m.score, best, 1e-12);
    for (auto& e : ims) e *= scale(rng);
    EXPECT_EQ(best_match(ims, q * scale(rng)).index, oracle);
  }
}

TEST(Selection, UniqueMatchesGiveFullAccuracy) {
  SyntheticProvider prov(64);
  const auto names = labels(64);
  const Scene s = synthetic_scene("ring", names, prov, 5);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const AnchorResult r = select_initial_anchor(s, prov, names[k]);
    correct += r.source_image_id == names[k];
    EXPECT_NEAR(r.score, 1.0, 1e-12);
    EXPECT_EQ(r.camera, s.images[k].camera);
    EXPECT_TRUE(r.warnings.empty());
  }
  EXPECT_EQ(correct, names.size());
}

TEST(Selection, DeferredEmbeddingsAreRendered) {
  SyntheticProvider prov(32);
  Scene s = synthetic_scene("ring", labels(4), prov, 6);
  for (auto& im : s.images) im.embedding.reset();
  const AnchorResult r = select_initial_anchor(s, prov, "the blue thing");
  const Embedding text = prov.embed_text("the blue thing");
  std::size_t best = 0;
  double best_c = -2;
  for (std::size_t i = 0; i < s.images.size(); ++i) {
    const Embedding e = prov.embed_image(toy_render(s.content, s.images[i].camera));
    const double c = e.dot(text) / (e.norm() * text.norm());
    if (c > best_c) best_c = c, best = i;
  }
  EXPECT_EQ(r.source_image_id, s.images[best].id);
  EXPECT_NEAR(r.score, best_c, 1e-12);
}

TEST(SyntheticProvider, DeterministicUnitOutputs) {
  SyntheticProvider a(48, 32, 9), b(48, 32, 9);
  EXPECT_EQ(a.embed_text("Orbit the Fountain!"), b.embed_text("orbit the fountain"));
  EXPECT_NEAR(a.embed_text("x y").norm(), 1.0, 1e-12);
  EXPECT_EQ(a.embed_text("the fountain"), a.embed_text("fountain"));
  EXPECT_EQ(a.embed_text("the"), a.embed_text("The."));
  EXPECT_LT(a.embed_text("red chair").dot(a.embed_text("blue bench")), 0.5);
  const Raster img = toy_render(oracle_scene().content, canonical_frame());
  EXPECT_EQ(a.embed_image(img), b.embed_image(img));
  EXPECT_NEAR(a.embed_image(img).norm(), 1.0, 1e-12);
  EXPECT_NE(SyntheticProvider(48, 32, 10).embed_text("x"), a.embed_text("x"));
  expect_error(ErrorCode::EmptyPrompt, [&] { a.embed_text(" ... "); });
  expect_error(ErrorCode::ShapeError, [&] { a.embed_image(toy_render({}, canonical_frame(), 16)); });
}

TEST(GroundingObjective, HandCases) {
  Scene s = oracle_scene();
  FixedProvider same(Eigen::Vector3d(0, 0.6, 0.8), {{"same", Eigen::Vector3d(0, 0.6, 0.8)},
                                                    {"orth", Eigen::Vector3d(1, 0, 0)}});
  EXPECT_NEAR(grounding_objective(s, same, "same", canonical_frame()), -1.0, 1e-15);
  EXPECT_NEAR(grounding_objective(s, same, "orth", canonical_frame()), 0.0, 1e-15);
}

TEST(GroundingObjective, MatchesRecomputation) {
  const Scene s = oracle_scene();
  SyntheticProvider prov(32);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const CameraFrame cam = jittered(canonical_frame(), rng, 0.3);
    const Raster img{32, oracle_render(s.content, cam, 32)};
    const Embedding e = prov.embed_image(img), t = prov.embed_text("a red ball");
    double dot = 0, ne = 0, nt = 0;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      dot += e(i) * t(i);
      ne += e(i) * e(i);
      nt += t(i) * t(i);
    }
    EXPECT_NEAR(grounding_objective(s, prov, "a red ball", cam), -dot / std::sqrt(ne * nt), 1e-10);
  }
}

TEST(Refinement, FullChainGradientMatchesFiniteDifferences) {
  SyntheticProvider prov(32);
  const Scene s = synthetic_scene("ring", labels(6), prov, 8);
  const Embedding text = prov.embed_text("landmark number 2");
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const CameraFrame cam = jittered(s.images[static_cast<std::size_t>(trial) % 6].camera, rng, 0.1);
    CameraParams g;
    grounding_loss(s, prov, text, cam, &g);
    const CameraParams p = to_params(cam);
    double worst = 0;
    for (int k = 0; k < 10; ++k) {
      CameraParams up = p, dn = p;
      up(k) += 1e-5;
      dn(k) -= 1e-5;
      const double fd =
          (grounding_loss(s, prov, text, from_params(up)) - grounding_loss(s, prov, text, from_params(dn))) / 2e-5;
      worst = std::max(worst, test::rel_err(g(k), fd));
    }
    EXPECT_LT(worst, 1e-4) << "camera " << trial;
    EXPECT_GT(g.norm(), 1e-6);
  }
}

TEST(Refinement, DefaultsAndErrors) {
  EXPECT_EQ(RefineOptions{}.lr, 0.002);
  EXPECT_TRUE(RefineOptions{}.optimize_focal);
  Scene s = oracle_scene();
  FixedProvider fixed(Eigen::Vector2d(1, 0), {{"p", Eigen::Vector2d(1, 0)}});
  expect_error(ErrorCode::NotDifferentiable, [&] { refine_anchor(s, fixed, "p", canonical_frame()); });
  SyntheticProvider prov(16);
  Scene bare = s;
  bare.content.clear();
  expect_error(ErrorCode::EmptyScene, [&] { refine_anchor(bare, prov, "p", canonical_frame()); });
  expect_error(ErrorCode::BadRequest, [&] { refine_anchor(s, prov, "p", canonical_frame(), RefineOptions{.lr = 0.0}); });
}

TEST(Refinement, AtOptimumNothingMoves) {
  const Scene s = oracle_scene();
  const CameraFrame target{Rot6D{}, Vec3(0.1, -0.05, 0.2), 1.0};
  TargetViewProvider prov(s.content, target, 10.0);
  const AnchorResult r = refine_anchor(s, prov, "the target view", target);
  EXPECT_EQ(r.refinement_steps, 0u);
  EXPECT_EQ(r.camera, target);
  EXPECT_DOUBLE_EQ(r.score, 1.0);
}

TEST(Refinement, QuadraticOracleConvergesToKnownOptimum) {
  const Scene s = oracle_scene();
  const CameraFrame target{Rot6D{}, Vec3(0.1, -0.05, 0.2), 1.0};
  TargetViewProvider prov(s.content, target, 10.0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    CameraFrame init = target;
    init.trans += 0.08 * Vec3(u(rng), u(rng), u(rng));
    const Mat3 rot = axis_angle(Vec3(u(rng), u(rng), u(rng)), deg2rad(2.0));
    init.rot = Rot6D{rot.col(0), rot.col(1)};
    init.focal *= 1.0 + 0.03 * u(rng);
    const AnchorResult r = refine_anchor(s, prov, "the target view", init);
    EXPECT_LE(r.refinement_steps, 1000u);
    EXPECT_LT((r.camera.trans - target.trans).norm(), 1e-3) << trial;
    EXPECT_LT(geodesic_angle(rotation_of(r.camera), rotation_of(target)), 1e-3);
    EXPECT_LT(std::abs(r.camera.focal - target.focal), 1e-3);
    EXPECT_TRUE(is_rotation(rotation_of(r.camera), 1e-12));
    for (std::size_t i = 1; i < r.losses.size(); ++i) EXPECT_LE(r.losses[i], r.losses[i - 1]);
    EXPECT_LE(-r.score, r.losses.front());
  }
}

TEST(Refinement, MonotoneOnSyntheticProviderAndFocalFlag) {
  SyntheticProvider prov(32);
  const Scene s = synthetic_scene("ring", labels(6), prov, 12);
  const CameraFrame init = s.images[0].camera;
  const AnchorResult r = refine_anchor(s, prov, "landmark number 1", init, RefineOptions{.max_steps = 200});
  ASSERT_GE(r.losses.size(), 2u);
  for (std::size_t i = 1; i < r.losses.size(); ++i) EXPECT_LE(r.losses[i], r.losses[i - 1]);
  EXPECT_LT(r.losses.back(), r.losses.front());
  EXPECT_NEAR(-r.score, grounding_objective(s, prov, "landmark number 1", r.camera), 1e-12);
  const AnchorResult fixed =
      refine_anchor(s, prov, "landmark number 1", init, RefineOptions{.max_steps = 50, .optimize_focal = false});
  EXPECT_EQ(fixed.camera.focal, init.focal);
  EXPECT_GT(fixed.refinement_steps, 0u);
  // Same inputs, same result.
  EXPECT_EQ(refine_anchor(s, prov, "landmark number 1", init, RefineOptions{.max_steps = 200}).camera, r.camera);
}

TEST(Refinement, OutOfBoundsWarnsOnly) {
  const Scene s = oracle_scene();
  Scene tight = s;
  tight.bounds = Bounds{Vec3::Constant(-0.01), Vec3::Constant(0.01)};
  const CameraFrame target{Rot6D{}, Vec3(0.1, -0.05, 0.2), 1.0};
  TargetViewProvider prov(s.content, target, 10.0);
  const AnchorResult r = refine_anchor(tight, prov, "view", target);
  ASSERT_EQ(r.warnings.size(), 1u);
}

TEST(SceneIo, RoundTripAndValidation) {
  SyntheticProvider prov(8);
  const Scene s = synthetic_scene("park", labels(3), prov, 1);
  const Scene back = scene_from_json(scene_to_json(s));
  EXPECT_EQ(back.id, "park");
  ASSERT_EQ(back.images.size(), 3u);
  EXPECT_EQ(scene_to_json(back), scene_to_json(s));

  json bad = scene_to_json(s);
  bad["images"][0]["embedding"][0] = 5.0;
  expect_error(ErrorCode::FormatError, [&] { scene_from_json(bad); });
  bad = scene_to_json(s);
  bad["images"][1]["embedding"].erase(0);
  expect_error(ErrorCode::FormatError, [&] { scene_from_json(bad); });
  bad = scene_to_json(s);
  bad["images"] = json::array();
  expect_error(ErrorCode::EmptyScene, [&] { scene_from_json(bad); });
  bad = scene_to_json(s);
  bad.erase("bounds");
  expect_error(ErrorCode::FormatError, [&] { scene_from_json(bad); });
  bad = scene_to_json(s);
  bad["images"][0]["camera"]["focal"] = -1.0;
  expect_error(ErrorCode::InvalidTrajectory, [&] { scene_from_json(bad); });
}

TEST(SceneIo, EmbeddingFilesAndDeferredEmbeddings) {
  const auto dir = std::filesystem::temp_directory_path() / "chatcam_scene_io";
  std::filesystem::create_directories(dir);
  SyntheticProvider prov(8);
  const Scene s = synthetic_scene("", labels(2), prov, 2);
  json j = scene_to_json(s);
  const Embedding e0 = *s.images[0].embedding;
  std::ofstream(dir / "e0.json") << json(std::vector<double>(e0.data(), e0.data() + e0.size())).dump();
  j["images"][0].erase("embedding");
  j["images"][0]["embedding_file"] = "e0.json";
  j["images"][1].erase("embedding");
  j.erase("id");
  std::ofstream(dir / "garden.json") << j.dump();
  const Scene back = load_scene(dir / "garden.json");
  EXPECT_EQ(back.id, "garden");
  ASSERT_TRUE(back.images[0].embedding.has_value());
  EXPECT_EQ(*back.images[0].embedding, e0);
  EXPECT_FALSE(back.images[1].embedding.has_value());
  expect_error(ErrorCode::IoError, [&] { load_scene(dir / "missing.json"); });
  std::ofstream(dir / "broken.json") << "{ nope";
  expect_error(ErrorCode::FormatError, [&] { load_scene(dir / "broken.json"); });
  std::filesystem::remove_all(dir);
}

TEST(FileProvider, LooksUpNormalizedPrompts) {
  const json j{{"dim", 2}, {"texts", {{"The Fountain", {3.0, 4.0}}}}};
  const FileProvider p = FileProvider::from_json(j);
  EXPECT_EQ(p.dim(), 2u);
  EXPECT_NEAR((p.embed_text("the fountain.") - Eigen::Vector2d(0.6, 0.8)).norm(), 0.0, 1e-15);
  EXPECT_FALSE(p.differentiable());
  expect_error(ErrorCode::BadRequest, [&] { p.embed_text("the bench"); });
  expect_error(ErrorCode::FormatError, [&] { FileProvider::from_json(json{{"dim", 3}, {"texts", {{"x", {1.0}}}}}); });
}
