#include <gtest/gtest.h>

#include "chatcam/dataset.hpp"
#include "chatcam/tokenizer.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace chatcam;
using M = nn::Mat<double>;

namespace {

std::vector<int> brute_force_ids(const M& cb, const M& z) {
  std::vector<int> ids;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (Eigen::Index k = 0; k < cb.rows(); ++k) {
      double d = 0;
      for (Eigen::Index c = 0; c < cb.cols(); ++c) d += (z(i, c) - cb(k, c)) * (z(i, c) - cb(k, c));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    ids.push_back(best);
  }
  return ids;
}

TokenizerConfig mini_config() {
  TokenizerConfig c;
  c.frames = 8;
  c.hidden = 8;
  c.latent_dim = 8;
  c.codebook_size = 4;
  return c;
}

std::vector<Trajectory> corpus_trajs(std::size_t n, std::uint64_t seed, GenConfig cfg = {}) {
  std::vector<Trajectory> out;
  for (auto& p : generate_dataset(n, seed, cfg)) out.push_back(p.traj);
  return out;
}

}  // namespace

TEST(Quantize, HandCases) {
  M cb(2, 2);
  cb << 0, 0, 1, 1;
  M z(2, 2);
  z << 0.2, 0.1, 0.5, 0.5;
  const auto r = quantize(cb, z);
  EXPECT_EQ(r.ids, (std::vector<int>{0, 0}));
  EXPECT_EQ(r.quantized.row(0), cb.row(0));
  expect_error(ErrorCode::ShapeError, [&] { quantize(cb, M(M::Zero(1, 3))); });
}

TEST(Quantize, MatchesBruteForceAndIsOptimal) {
  nn::Rng rng(9);
  M cb(16, 6), z(100, 6);
  nn::fill_normal(cb, rng, 1.0);
  nn::fill_normal(z, rng, 1.0);
  // Exact duplicates force ties; the lowest index must win.
  cb.row(11) = cb.row(3);
  z.row(0) = cb.row(3);
  const auto r = quantize(cb, z);
  EXPECT_EQ(r.ids, brute_force_ids(cb, z));
  EXPECT_EQ(r.ids[0], 3);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int id = r.ids[static_cast<std::size_t>(i)];
    EXPECT_EQ(r.quantized.row(i), cb.row(id));
    for (Eigen::Index k = 0; k < cb.rows(); ++k)
      EXPECT_LE((z.row(i) - r.quantized.row(i)).norm(), (z.row(i) - cb.row(k)).norm());
  }
}

TEST(VqLoss, Definitions) {
  M z(3, 2);
  z << 1, 2, 3, 4, 5, 6;
  const auto zero = vq_losses(z, z, 0.25);
  EXPECT_EQ(zero.embed, 0.0);
  EXPECT_EQ(zero.commit, 0.0);
  M q = z;
  q.col(0).array() += 1.0;  // every row at distance 1
  const auto one = vq_losses(z, q, 0.25);
  EXPECT_DOUBLE_EQ(one.embed, 1.0);
  EXPECT_DOUBLE_EQ(one.commit, 0.25);
}

TEST(VqLoss, PerfectReconstructionGivesZero) {
  // Output layer emits the static canonical features; codebook holds the
  // exact encoder outputs; the duration head emits the target.
  TrajTokenizer<double> tok(mini_config(), 1);
  Trajectory t{std::vector<CameraFrame>(8, canonical_frame()), 4.0};
  auto params = tok.parameters();
  for (auto& [name, p] : params) {
    if (name == "decoder.out.weight" || name == "duration_head.weight") p->value.setZero();
    if (name == "decoder.out.bias") p->value = tok.features(t).row(0);
    if (name == "duration_head.bias") p->value(0, 0) = tok.normalized_log_duration(4.0);
  }
  const M zhat = tok.encode(t);
  ASSERT_EQ(zhat.rows(), 2);
  tok.codebook_mut().row(0) = zhat.row(0);
  tok.codebook_mut().row(1) = zhat.row(1);
  tok.codebook_mut().row(2).setConstant(50.0);
  tok.codebook_mut().row(3).setConstant(-50.0);
  const auto loss = tok.sample_loss(tok.make_sample(t), 0.0);
  EXPECT_EQ(loss.recon, 0.0);
  EXPECT_EQ(loss.embed, 0.0);
  EXPECT_EQ(loss.commit, 0.0);
}

TEST(Tokenizer, ShapesAndErrors) {
  TrajTokenizer<double> tok(mini_config(), 2);
  const Trajectory t = resample(generate_dataset(1, 3).front().traj, 8);
  EXPECT_EQ(tok.encode(t).rows(), 2);
  EXPECT_EQ(tok.encode(t).cols(), 8);
  expect_error(ErrorCode::ShapeError, [&] { tok.encode(resample(t, 10)); });
  const Trajectory one = tok.decode({1});
  EXPECT_EQ(one.size(), 4u);
  validate(one);
  EXPECT_EQ(tok.decode({0, 3, 2}, 2.5), tok.decode({0, 3, 2}, 2.5));
  EXPECT_EQ(tok.decode({0, 3}, 2.5).duration_s, 2.5);
  expect_error(ErrorCode::IndexError, [&] { tok.decode({0, 4}); });
  expect_error(ErrorCode::IndexError, [&] { tok.decode({-1}); });
  // tokenize resamples to the configured length.
  EXPECT_EQ(tok.tokenize(resample(t, 13)).ids.size(), 2u);
  EXPECT_THROW(TrajTokenizer<double>(TokenizerConfig{.frames = 10}, 0), Error);
}

TEST(Tokenizer, FeatureRoundTrip) {
  TrajTokenizer<double> tok(mini_config(), 2);
  tok.set_stats(FeatureStats{0.7, 1.0, 0.5});
  const Trajectory t = test::random_trajectory(4, 8);
  const Trajectory back = tok.from_features(tok.features(t), t.duration_s);
  EXPECT_TRUE(test::traj_near(back, t, 1e-12));
  EXPECT_NEAR(tok.duration_from_normalized(tok.normalized_log_duration(3.3)), 3.3, 1e-12);
}

TEST(Tokenizer, GradientCheckAllParameters) {
  TrajTokenizer<double> tok(mini_config(), 5);
  const auto trajs = corpus_trajs(2, 5);
  tok.set_stats(compute_stats(trajs));
  std::vector<TrajTokenizer<double>::Sample> samples;
  for (const auto& t : trajs) samples.push_back(tok.make_sample(resample(t, 8)));
  // Pull two codebook rows onto encoder outputs so every term is active.
  tok.codebook_mut().row(1) = tok.encode_features(samples[0].features).row(0) * 1.1;
  std::vector<FrozenQuantization<double>> frozen(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) tok.sample_loss(samples[i], 0.0, nullptr, &frozen[i]);
  auto params = tok.parameters();
  const auto rep = test::gradcheck<double>(params, [&](bool acc) {
    double total = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
      total += tok.sample_loss(samples[i], acc ? 0.5 : 0.0, &frozen[i]).total() * 0.5;
    return total;
  });
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst;
  EXPECT_EQ(rep.checked, nn::parameter_count(params));
}

TEST(Tokenizer, StraightThroughMatchesUnfrozenAtBasePoint) {
  TrajTokenizer<double> tok(mini_config(), 6);
  const auto s = tok.make_sample(resample(generate_dataset(1, 1).front().traj, 8));
  FrozenQuantization<double> q;
  const auto a = tok.sample_loss(s, 0.0, nullptr, &q);
  const auto b = tok.sample_loss(s, 0.0, &q);
  EXPECT_EQ(a.total(), b.total());
}

TEST(Tokenizer, CheckpointRoundTripBitExact) {
  TrajTokenizer<float> tok(TokenizerConfig{.frames = 16, .hidden = 16, .latent_dim = 8, .codebook_size = 8}, 7);
  tok.set_stats(FeatureStats{0.3, 1.2, 0.4});
  const std::string bytes = tok.to_checkpoint().serialize();
  auto back = TrajTokenizer<float>::from_checkpoint(nn::Checkpoint::deserialize(bytes));
  EXPECT_EQ(back.to_checkpoint().serialize(), bytes);
  EXPECT_EQ(back.decode({1, 2, 3}), tok.decode({1, 2, 3}));
  nn::Checkpoint wrong;
  wrong.meta = {{"kind", "cinegpt"}};
  expect_error(ErrorCode::FormatError, [&] { TrajTokenizer<float>::from_checkpoint(wrong); });
}

TEST(Training, DeterministicAndDefaultLr) {
  EXPECT_EQ(TokenizerTrainConfig{}.lr, 1e-4);
  EXPECT_EQ(TokenizerConfig{}.codebook_size, 256);
  EXPECT_EQ(TokenizerConfig{}.latent_dim, 256);
  EXPECT_EQ(TokenizerConfig{}.beta, 0.25);
  const auto trajs = corpus_trajs(6, 2);
  TokenizerConfig cfg{.frames = 32, .hidden = 16, .latent_dim = 16, .codebook_size = 16};
  TokenizerTrainConfig tc{.steps = 20, .batch_size = 4, .lr = 1e-3};
  auto a = train_tokenizer<float>(trajs, cfg, tc, 11);
  auto b = train_tokenizer<float>(trajs, cfg, tc, 11);
  EXPECT_EQ(a.tokenizer.to_checkpoint().serialize(), b.tokenizer.to_checkpoint().serialize());
  EXPECT_EQ(a.step_losses, b.step_losses);
  auto c = train_tokenizer<float>(trajs, cfg, tc, 12);
  EXPECT_NE(a.tokenizer.to_checkpoint().serialize(), c.tokenizer.to_checkpoint().serialize());
  EXPECT_FALSE(a.history.empty());
}

TEST(Training, DivergenceIsReported) {
  const auto trajs = corpus_trajs(4, 2);
  TokenizerConfig cfg{.frames = 16, .hidden = 8, .latent_dim = 8, .codebook_size = 4};
  TokenizerTrainConfig tc{.steps = 50, .batch_size = 2, .lr = 1e30, .clip_norm = 0.0};
  expect_error(ErrorCode::TrainingDiverged, [&] { train_tokenizer<float>(trajs, cfg, tc, 1); });
  expect_error(ErrorCode::BadRequest, [&] { train_tokenizer<float>({}, cfg, tc, 1); });
}

TEST(Training, EpochLossDecreasesOnDefaultCorpus) {
  const auto trajs = corpus_trajs(64, 0);
  TokenizerTrainConfig tc;
  tc.steps = 40;  // 10 epochs of 4 batches
  const auto res = train_tokenizer<float>(trajs, TokenizerConfig{}, tc, 0);
  ASSERT_GE(res.history.size(), 10u);
  for (std::size_t e = 1; e < 10; ++e)
    EXPECT_LT(res.history[e].mean.total(), res.history[e - 1].mean.total()) << "epoch " << e;
}
