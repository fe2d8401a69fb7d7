#pragma once

// VQ-VAE trajectory tokenizer. A trajectory of M frames becomes L = M/4
// codebook indices: the encoder is a kernel-3 temporal conv followed by two
// stride-2 convs; the decoder mirrors it with nearest-neighbour upsampling.
// A scalar head on the pooled quantized latent predicts the duration.
//
// Per-frame features (F = 10): orthonormal rot6d (6), translation divided by
// the corpus RMS translation (3), log focal (1).

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "chatcam/camera.hpp"
#include "chatcam/error.hpp"
#include "chatcam/nn/adam.hpp"
#include "chatcam/nn/checkpoint.hpp"
#include "chatcam/nn/layers.hpp"
#include "chatcam/nn/tensor.hpp"

namespace chatcam {

inline constexpr int kFrameFeatures = 10;
inline constexpr int kDownsample = 4;

struct TokenizerConfig {
  int frames = 120;        // M; must be divisible by 4
  int hidden = 128;        // conv channels
  int latent_dim = 256;    // d
  int codebook_size = 256; // K
  double beta = 0.25;      // commitment weight
  double duration_weight = 1.0;

  int tokens() const { return frames / kDownsample; }
};

struct TokenizerTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  double clip_norm = 1.0;
  std::size_t dead_code_steps = 256;  // re-seed entries unused this long
};

/// Corpus statistics used to normalize features.
struct FeatureStats {
  double trans_scale = 1.0;
  double log_duration_mean = std::log(4.0);
  double log_duration_std = 1.0;
};

struct TrajTokenSeq {
  std::vector<int> ids;
  double duration_s = 1.0;

  bool operator==(const TrajTokenSeq&) const = default;
};

template <typename S>
struct QuantizeResult {
  std::vector<int> ids;
  nn::Mat<S> quantized;
};

/// Nearest codebook row per latent row (squared Euclidean, ties to the
/// lowest index). Quantized rows are copies of codebook rows.
template <typename S>
QuantizeResult<S> quantize(const nn::Mat<S>& codebook, const nn::Mat<S>& latent) {
  if (codebook.cols() != latent.cols()) {
    throw Error(ErrorCode::ShapeError, "latent width does not match codebook dimension");
  }
  QuantizeResult<S> r;
  r.ids.resize(static_cast<std::size_t>(latent.rows()));
  r.quantized.resize(latent.rows(), latent.cols());
  for (Eigen::Index i = 0; i < latent.rows(); ++i) {
    const auto d2 = (codebook.rowwise() - latent.row(i)).rowwise().squaredNorm().eval();
    Eigen::Index best = 0;
    S best_d = d2(0);
    for (Eigen::Index k = 1; k < d2.size(); ++k) {
      if (d2(k) < best_d) {
        best_d = d2(k);
        best = k;
      }
    }
    r.ids[static_cast<std::size_t>(i)] = static_cast<int>(best);
    r.quantized.row(i) = codebook.row(best);
  }
  return r;
}

struct VqLosses {
  double embed = 0.0;
  double commit = 0.0;
};

/// Embedding and commitment terms for a latent and its quantization
/// (mean over rows of the squared row distance; commitment scaled by beta).
template <typename S>
VqLosses vq_losses(const nn::Mat<S>& latent, const nn::Mat<S>& quantized, double beta) {
  const double d = static_cast<double>((latent - quantized).rowwise().squaredNorm().mean());
  return VqLosses{d, beta * d};
}

struct TokenizerLoss {
  double recon = 0.0;  // frame MSE + weighted duration error
  double embed = 0.0;
  double commit = 0.0;
  double total() const { return recon + embed + commit; }
};

/// Quantization state captured at a base point. Evaluating the loss with
/// it held fixed gives the function whose exact gradient the
/// straight-through estimator computes.
template <typename S>
struct FrozenQuantization {
  std::vector<int> ids;
  nn::Mat<S> quantized;  // sg(z)
  nn::Mat<S> latent;     // sg(z_hat)
};

struct TokenizerEpochLog {
  std::size_t epoch = 0;
  TokenizerLoss mean;
  std::size_t codes_used = 0;
};

template <typename S>
class TrajTokenizer {
 public:
  using Mat = nn::Mat<S>;

  TrajTokenizer() : TrajTokenizer(TokenizerConfig{}, 0) {}

  TrajTokenizer(const TokenizerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.frames % kDownsample != 0 || cfg.frames < kDownsample) {
      throw Error(ErrorCode::ShapeError, "frame count must be a positive multiple of 4");
    }
    if (cfg.codebook_size < 2) throw Error(ErrorCode::ShapeError, "codebook needs at least 2 entries");
    const int h = cfg.hidden, d = cfg.latent_dim;
    e_in_ = nn::Conv1d<S>(kFrameFeatures, h, 3, 1, 1);
    e_down1_ = nn::Conv1d<S>(h, h, 3, 2, 1);
    e_down2_ = nn::Conv1d<S>(h, d, 3, 2, 1);
    d_in_ = nn::Conv1d<S>(d, h, 3, 1, 1);
    d_up1_ = nn::Conv1d<S>(h, h, 3, 1, 1);
    d_up2_ = nn::Conv1d<S>(h, h, 3, 1, 1);
    d_out_ = nn::Conv1d<S>(h, kFrameFeatures, 3, 1, 1);
    duration_head_ = nn::Linear<S>(d, 1);
    codebook_ = nn::Param<S>(cfg.codebook_size, d);
    nn::Rng rng(seed);
    for (auto* c : convs()) c->init(rng);
    // Small output layer so training starts near the mean trajectory.
    d_out_.weight.value *= S(0.1);
    duration_head_.init(rng, 0.01);
    nn::fill_normal(codebook_.value, rng, 1.0);
  }

  const TokenizerConfig& config() const { return cfg_; }
  const FeatureStats& stats() const { return stats_; }
  void set_stats(const FeatureStats& s) { stats_ = s; }
  const Mat& codebook() const { return codebook_.value; }
  Mat& codebook_mut() { return codebook_.value; }

  nn::NamedParams<S> parameters() {
    nn::NamedParams<S> out;
    e_in_.collect(out, "encoder.in");
    e_down1_.collect(out, "encoder.down1");
    e_down2_.collect(out, "encoder.down2");
    d_in_.collect(out, "decoder.in");
    d_up1_.collect(out, "decoder.up1");
    d_up2_.collect(out, "decoder.up2");
    d_out_.collect(out, "decoder.out");
    duration_head_.collect(out, "duration_head");
    out.emplace_back("codebook", &codebook_);
    return out;
  }

  // -------------------------------------------------------------------------
  // Features

  Mat features(const Trajectory& traj) const {
    Mat x(static_cast<Eigen::Index>(traj.frames.size()), kFrameFeatures);
    for (std::size_t i = 0; i < traj.frames.size(); ++i) {
      const auto& f = traj.frames[i];
      const Mat3 r = rotation_of(f);
      const auto row = static_cast<Eigen::Index>(i);
      for (int k = 0; k < 3; ++k) {
        x(row, k) = static_cast<S>(r(k, 0));
        x(row, 3 + k) = static_cast<S>(r(k, 1));
        x(row, 6 + k) = static_cast<S>(f.trans(k) / stats_.trans_scale);
      }
      x(row, 9) = static_cast<S>(std::log(f.focal));
    }
    return x;
  }

  Trajectory from_features(const Mat& y, double duration_s) const {
    Trajectory t;
    t.duration_s = duration_s;
    Rot6D prev{};
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      Rot6D rot{Vec3(y(i, 0), y(i, 1), y(i, 2)), Vec3(y(i, 3), y(i, 4), y(i, 5))};
      try {
        rot = normalized(rot);
      } catch (const Error&) {
        rot = prev;
      }
      prev = rot;
      const Vec3 trans = Vec3(y(i, 6), y(i, 7), y(i, 8)) * stats_.trans_scale;
      t.frames.push_back(CameraFrame{rot, trans, std::exp(static_cast<double>(y(i, 9)))});
    }
    return t;
  }

  S normalized_log_duration(double duration_s) const {
    return static_cast<S>((std::log(duration_s) - stats_.log_duration_mean) / stats_.log_duration_std);
  }

  double duration_from_normalized(S v) const {
    return std::exp(static_cast<double>(v) * stats_.log_duration_std + stats_.log_duration_mean);
  }

  // -------------------------------------------------------------------------
  // Encode / quantize / decode

  Mat encode_features(const Mat& x) const {
    if (x.rows() % kDownsample != 0 || x.rows() == 0) {
      throw Error(ErrorCode::ShapeError, "frame count " + std::to_string(x.rows()) +
                                             " is not a positive multiple of 4; resample first");
    }
    const Mat h0 = nn::relu<S>(e_in_.forward(x));
    const Mat h1 = nn::relu<S>(e_down1_.forward(h0));
    return e_down2_.forward(h1);
  }

  /// Latent L x d for a trajectory whose frame count is a multiple of 4.
  Mat encode(const Trajectory& traj) const { return encode_features(features(traj)); }

  QuantizeResult<S> quantize_latent(const Mat& latent) const { return quantize(codebook_.value, latent); }

  Mat lookup(const std::vector<int>& ids) const {
    Mat z(static_cast<Eigen::Index>(ids.size()), codebook_.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= cfg_.codebook_size) {
        throw Error(ErrorCode::IndexError, "trajectory token " + std::to_string(ids[i]) + " outside codebook");
      }
      z.row(static_cast<Eigen::Index>(i)) = codebook_.value.row(ids[i]);
    }
    return z;
  }

  Mat decode_latent(const Mat& z) const {
    const Mat g0 = nn::relu<S>(d_in_.forward(z));
    const Mat g1 = nn::relu<S>(d_up1_.forward(nn::upsample_rows(g0, 2)));
    const Mat g2 = nn::relu<S>(d_up2_.forward(nn::upsample_rows(g1, 2)));
    return d_out_.forward(g2);
  }

  double predict_duration(const Mat& z) const {
    const Mat pooled = z.colwise().mean();
    return duration_from_normalized(duration_head_.forward(pooled)(0, 0));
  }

  /// ids -> trajectory of 4*len(ids) frames with valid rotations. The
  /// duration head is used when no duration is supplied.
  Trajectory decode(const std::vector<int>& ids, std::optional<double> duration_s = std::nullopt) const {
    if (ids.empty()) throw Error(ErrorCode::IndexError, "no trajectory tokens to decode");
    const Mat z = lookup(ids);
    const double dur = duration_s ? *duration_s : predict_duration(z);
    return from_features(decode_latent(z), dur);
  }

  /// Resamples to the configured frame count, then encodes and quantizes.
  TrajTokenSeq tokenize(const Trajectory& traj) const {
    const Trajectory t = traj.frames.size() == static_cast<std::size_t>(cfg_.frames)
                             ? traj
                             : resample(traj, static_cast<std::size_t>(cfg_.frames));
    return TrajTokenSeq{quantize_latent(encode(t)).ids, traj.duration_s};
  }

  /// encode -> quantize -> decode, keeping the source duration.
  Trajectory reconstruct(const Trajectory& traj) const {
    const TrajTokenSeq seq = tokenize(traj);
    return decode(seq.ids, seq.duration_s);
  }

  // -------------------------------------------------------------------------
  // Loss

  struct Sample {
    Mat features;
    S log_duration;  // normalized
  };

  Sample make_sample(const Trajectory& traj) const {
    return Sample{features(traj), normalized_log_duration(traj.duration_s)};
  }

  /// Loss of one sample; when grad_scale > 0, accumulates grad_scale * dL
  /// into parameter gradients. `frozen` pins the quantization (see
  /// FrozenQuantization); `used` receives the chosen ids.
  TokenizerLoss sample_loss(const Sample& s, S grad_scale, const FrozenQuantization<S>* frozen = nullptr,
                            FrozenQuantization<S>* capture = nullptr) {
    const Mat& x = s.features;
    const Mat a0 = e_in_.forward(x);
    const Mat h0 = nn::relu<S>(a0);
    const Mat a1 = e_down1_.forward(h0);
    const Mat h1 = nn::relu<S>(a1);
    const Mat zhat = e_down2_.forward(h1);

    FrozenQuantization<S> q;
    if (frozen) {
      q = *frozen;
    } else {
      auto r = quantize(codebook_.value, zhat);
      q.ids = std::move(r.ids);
      q.quantized = std::move(r.quantized);
      q.latent = zhat;
    }
    if (capture) *capture = q;
    const Eigen::Index rows = zhat.rows();
    const S inv_rows = S(1) / static_cast<S>(rows);

    // Straight-through: value of the quantized latent, gradient of z_hat.
    const Mat zst = zhat + (q.quantized - q.latent);
    const Mat b0 = d_in_.forward(zst);
    const Mat g0 = nn::relu<S>(b0);
    const Mat u1 = nn::upsample_rows(g0, 2);
    const Mat b1 = d_up1_.forward(u1);
    const Mat g1 = nn::relu<S>(b1);
    const Mat u2 = nn::upsample_rows(g1, 2);
    const Mat b2 = d_up2_.forward(u2);
    const Mat g2 = nn::relu<S>(b2);
    const Mat y = d_out_.forward(g2);
    const Mat pooled = zst.colwise().mean();
    const S dur_pred = duration_head_.forward(pooled)(0, 0);

    Mat cb_rows(rows, zhat.cols());
    for (Eigen::Index i = 0; i < rows; ++i) cb_rows.row(i) = codebook_.value.row(q.ids[static_cast<std::size_t>(i)]);

    const Mat diff = y - x;
    const S n_el = static_cast<S>(diff.size());
    const S dur_err = dur_pred - s.log_duration;
    TokenizerLoss loss;
    loss.recon = static_cast<double>(diff.squaredNorm() / n_el) +
                 cfg_.duration_weight * static_cast<double>(dur_err * dur_err);
    loss.embed = static_cast<double>((q.latent - cb_rows).rowwise().squaredNorm().mean());
    loss.commit = cfg_.beta * static_cast<double>((zhat - q.quantized).rowwise().squaredNorm().mean());

    if (grad_scale > S(0)) {
      const Mat dy = diff * (S(2) * grad_scale / n_el);
      const Mat dg2 = d_out_.backward(g2, dy);
      const Mat du2 = d_up2_.backward(u2, nn::relu_backward<S>(b2, dg2));
      const Mat dg1 = nn::upsample_rows_backward<S>(du2, 2);
      const Mat du1 = d_up1_.backward(u1, nn::relu_backward<S>(b1, dg1));
      const Mat dg0 = nn::upsample_rows_backward<S>(du1, 2);
      Mat dzst = d_in_.backward(zst, nn::relu_backward<S>(b0, dg0));
      Mat ddur(1, 1);
      ddur(0, 0) = S(2) * static_cast<S>(cfg_.duration_weight) * dur_err * grad_scale;
      const Mat dpooled = duration_head_.backward(pooled, ddur);
      dzst.rowwise() += dpooled.row(0) * inv_rows;

      const Mat dzhat = dzst + (zhat - q.quantized) * (S(2) * static_cast<S>(cfg_.beta) * inv_rows * grad_scale);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const int id = q.ids[static_cast<std::size_t>(i)];
        codebook_.grad.row(id) += (cb_rows.row(i) - q.latent.row(i)) * (S(2) * inv_rows * grad_scale);
      }
      const Mat dh1 = e_down2_.backward(h1, dzhat);
      const Mat dh0 = e_down1_.backward(h0, nn::relu_backward<S>(a1, dh1));
      e_in_.backward(x, nn::relu_backward<S>(a0, dh0));
    }
    return loss;
  }

  // -------------------------------------------------------------------------
  // Persistence

  nn::Checkpoint to_checkpoint() {
    nn::Checkpoint ck;
    ck.meta = {{"kind", "traj-tokenizer"},
               {"version", 1},
               {"config",
                {{"frames", cfg_.frames},
                 {"hidden", cfg_.hidden},
                 {"latent_dim", cfg_.latent_dim},
                 {"codebook_size", cfg_.codebook_size},
                 {"beta", cfg_.beta},
                 {"duration_weight", cfg_.duration_weight}}},
               {"stats",
                {{"trans_scale", stats_.trans_scale},
                 {"log_duration_mean", stats_.log_duration_mean},
                 {"log_duration_std", stats_.log_duration_std}}}};
    ck.put_params(parameters());
    return ck;
  }

  static TrajTokenizer from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.meta.value("kind", "") != "traj-tokenizer") {
      throw Error(ErrorCode::FormatError, "checkpoint is not a trajectory tokenizer");
    }
    if (ck.meta.value("version", 0) != 1) throw Error(ErrorCode::FormatError, "unsupported tokenizer version");
    const auto& c = ck.meta.at("config");
    TokenizerConfig cfg;
    cfg.frames = c.at("frames").get<int>();
    cfg.hidden = c.at("hidden").get<int>();
    cfg.latent_dim = c.at("latent_dim").get<int>();
    cfg.codebook_size = c.at("codebook_size").get<int>();
    cfg.beta = c.at("beta").get<double>();
    cfg.duration_weight = c.at("duration_weight").get<double>();
    TrajTokenizer tok(cfg, 0);
    const auto& s = ck.meta.at("stats");
    tok.stats_ = FeatureStats{s.at("trans_scale").get<double>(), s.at("log_duration_mean").get<double>(),
                              s.at("log_duration_std").get<double>()};
    ck.get_params(tok.parameters());
    return tok;
  }

  void save(const std::string& path) { to_checkpoint().save(path); }
  static TrajTokenizer load(const std::string& path) { return from_checkpoint(nn::Checkpoint::load(path)); }

 private:
  TokenizerConfig cfg_;
  FeatureStats stats_;
  nn::Conv1d<S> e_in_, e_down1_, e_down2_, d_in_, d_up1_, d_up2_, d_out_;
  nn::Linear<S> duration_head_;
  nn::Param<S> codebook_;

  std::vector<nn::Conv1d<S>*> convs() { return {&e_in_, &e_down1_, &e_down2_, &d_in_, &d_up1_, &d_up2_, &d_out_}; }
};

// ---------------------------------------------------------------------------
// Training

inline FeatureStats compute_stats(const std::vector<Trajectory>& corpus) {
  double sq = 0.0;
  std::size_t n = 0;
  double lsum = 0.0, lsq = 0.0;
  for (const auto& t : corpus) {
    for (const auto& f : t.frames) {
      sq += f.trans.squaredNorm();
      n += 3;
    }
    const double l = std::log(t.duration_s);
    lsum += l;
    lsq += l * l;
  }
  FeatureStats s;
  s.trans_scale = n > 0 && sq > 0.0 ? std::sqrt(sq / static_cast<double>(n)) : 1.0;
  const double m = static_cast<double>(corpus.size());
  if (m > 0) {
    s.log_duration_mean = lsum / m;
    const double var = lsq / m - s.log_duration_mean * s.log_duration_mean;
    s.log_duration_std = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return s;
}

template <typename S>
struct TokenizerTrainResult {
  TrajTokenizer<S> tokenizer;
  std::vector<TokenizerEpochLog> history;
  std::vector<double> step_losses;
};

/// Deterministic given (corpus, configs, seed). Throws TrainingDiverged when
/// the loss becomes non-finite.
template <typename S>
TokenizerTrainResult<S> train_tokenizer(const std::vector<Trajectory>& corpus, const TokenizerConfig& cfg,
                                        const TokenizerTrainConfig& tcfg, std::uint64_t seed,
                                        const std::function<void(const TokenizerEpochLog&)>& on_epoch = {}) {
  if (corpus.empty()) throw Error(ErrorCode::BadRequest, "tokenizer corpus is empty");
  TokenizerTrainResult<S> res{TrajTokenizer<S>(cfg, seed), {}, {}};
  TrajTokenizer<S>& tok = res.tokenizer;

  std::vector<Trajectory> data;
  data.reserve(corpus.size());
  for (const auto& t : corpus) {
    data.push_back(t.frames.size() == static_cast<std::size_t>(cfg.frames)
                       ? t
                       : resample(t, static_cast<std::size_t>(cfg.frames)));
  }
  tok.set_stats(compute_stats(data));
  std::vector<typename TrajTokenizer<S>::Sample> samples;
  samples.reserve(data.size());
  for (const auto& t : data) samples.push_back(tok.make_sample(t));

  nn::Rng rng(seed ^ 0x7A6B5C4D3E2F1011ULL);
  auto params = tok.parameters();
  nn::Adam<S> opt(params, nn::AdamConfig{tcfg.lr, 0.9, 0.999, 1e-8, tcfg.clip_norm});
  const std::size_t codebook_index = params.size() - 1;

  // Data-dependent codebook initialization from encoder outputs.
  {
    std::vector<nn::Mat<S>> latents;
    for (std::size_t i = 0; i < std::min<std::size_t>(samples.size(), 64); ++i)
      latents.push_back(tok.encode_features(samples[i].features));
    auto& cb = tok.codebook_mut();
    for (Eigen::Index k = 0; k < cb.rows(); ++k) {
      const auto& l = latents[rng.index(latents.size())];
      cb.row(k) = l.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(l.rows()))));
      for (Eigen::Index c = 0; c < cb.cols(); ++c) cb(k, c) += static_cast<S>(0.01 * rng.normal());
    }
  }

  const std::size_t batch = std::max<std::size_t>(1, std::min(tcfg.batch_size, samples.size()));
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  std::vector<long> last_used(static_cast<std::size_t>(cfg.codebook_size), 0);

  TokenizerEpochLog epoch_log;
  std::size_t epoch_count = 0;
  std::vector<char> epoch_used(static_cast<std::size_t>(cfg.codebook_size), 0);
  auto finish_epoch = [&]() {
    if (epoch_count == 0) return;
    const double n = static_cast<double>(epoch_count);
    epoch_log.mean.recon /= n;
    epoch_log.mean.embed /= n;
    epoch_log.mean.commit /= n;
    epoch_log.codes_used = static_cast<std::size_t>(std::count(epoch_used.begin(), epoch_used.end(), 1));
    res.history.push_back(epoch_log);
    if (on_epoch) on_epoch(epoch_log);
    epoch_log = TokenizerEpochLog{res.history.size(), {}, 0};
    epoch_count = 0;
    std::fill(epoch_used.begin(), epoch_used.end(), 0);
  };

  for (std::size_t step = 0; step < tcfg.steps; ++step) {
    nn::zero_grads(params);
    std::vector<nn::Mat<S>> batch_latents;
    TokenizerLoss step_loss;
    const S scale = S(1) / static_cast<S>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor >= order.size()) {
        finish_epoch();
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        cursor = 0;
      }
      FrozenQuantization<S> q;
      const TokenizerLoss l = tok.sample_loss(samples[order[cursor++]], scale, nullptr, &q);
      step_loss.recon += l.recon / static_cast<double>(batch);
      step_loss.embed += l.embed / static_cast<double>(batch);
      step_loss.commit += l.commit / static_cast<double>(batch);
      for (int id : q.ids) {
        last_used[static_cast<std::size_t>(id)] = static_cast<long>(step);
        epoch_used[static_cast<std::size_t>(id)] = 1;
      }
      batch_latents.push_back(std::move(q.latent));
    }
    if (!std::isfinite(step_loss.total())) {
      throw Error(ErrorCode::TrainingDiverged, "tokenizer loss became non-finite at step " + std::to_string(step));
    }
    opt.step();
    res.step_losses.push_back(step_loss.total());
    epoch_log.mean.recon += step_loss.recon;
    epoch_log.mean.embed += step_loss.embed;
    epoch_log.mean.commit += step_loss.commit;
    ++epoch_count;

    // Dead-code refresh.
    auto& cb = tok.codebook_mut();
    for (std::size_t k = 0; k < last_used.size(); ++k) {
      if (static_cast<long>(step) - last_used[k] >= static_cast<long>(tcfg.dead_code_steps)) {
        const auto& l = batch_latents[rng.index(batch_latents.size())];
        cb.row(static_cast<Eigen::Index>(k)) = l.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(l.rows()))));
        opt.reset_rows(codebook_index, static_cast<Eigen::Index>(k));
        last_used[k] = static_cast<long>(step);
      }
    }
  }
  finish_epoch();
  return res;
}

/// Distinct codebook entries used when tokenizing `corpus`.
template <typename S>
std::size_t codes_in_use(const TrajTokenizer<S>& tok, const std::vector<Trajectory>& corpus) {
  std::vector<char> used(static_cast<std::size_t>(tok.config().codebook_size), 0);
  for (const auto& t : corpus)
    for (int id : tok.tokenize(t).ids) used[static_cast<std::size_t>(id)] = 1;
  return static_cast<std::size_t>(std::count(used.begin(), used.end(), 1));
}

}  // namespace chatcam
