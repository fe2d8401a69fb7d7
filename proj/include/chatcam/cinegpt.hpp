#pragma once

// Decoder-only transformer over the joint text/duration/trajectory
// vocabulary. Pre-LayerNorm blocks, learned absolute positions, GELU MLP
// (4x width), separate (untied) output head with bias.
//
// Sequence formats:
//   text -> trajectory:  BOS text SEP TO_TRAJ DUR traj EOS
//   trajectory -> text:  BOS DUR traj SEP TO_TEXT text EOS
//   text continuation:   BOS text EOS
//   traj continuation:   BOS DUR traj EOS  (first half of traj is source)
// The loss is the mean NLL over the target span only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "chatcam/dataset.hpp"
#include "chatcam/error.hpp"
#include "chatcam/nn/adam.hpp"
#include "chatcam/nn/checkpoint.hpp"
#include "chatcam/nn/layers.hpp"
#include "chatcam/nn/tensor.hpp"
#include "chatcam/tokenizer.hpp"
#include "chatcam/vocab.hpp"

namespace chatcam {

struct GptConfig {
  int layers = 4;
  int model_dim = 128;
  int heads = 4;
  int head_dim = 32;
  int context = 128;
  double dropout = 0.0;

  static GptConfig reduced() { return {}; }
  static GptConfig paper() { return GptConfig{24, 256, 4, 64, 128, 0.1}; }

  void check() const {
    if (layers < 1 || heads < 1 || head_dim < 1 || model_dim < 1 || context < 4)
      throw Error(ErrorCode::BadRequest, "GPT dimensions must be positive");
    if (model_dim % heads != 0) throw Error(ErrorCode::BadRequest, "model_dim must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::BadRequest, "dropout must be in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"layers", layers}, {"model_dim", model_dim}, {"heads", heads},
            {"head_dim", head_dim}, {"context", context}, {"dropout", dropout}};
  }
  static GptConfig from_json(const nlohmann::json& j) {
    return GptConfig{j.at("layers").get<int>(),   j.at("model_dim").get<int>(), j.at("heads").get<int>(),
                     j.at("head_dim").get<int>(), j.at("context").get<int>(),   j.at("dropout").get<double>()};
  }
};

/// One training sequence. Tokens at positions >= length are padding and
/// never influence the loss; targets are positions [source_len, length).
struct Example {
  std::vector<int> tokens;
  std::size_t source_len = 0;
  std::size_t length = 0;
};

inline Example make_example(std::vector<int> tokens, std::size_t source_len) {
  const std::size_t n = tokens.size();
  return Example{std::move(tokens), source_len, n};
}

inline Example text_to_traj_example(const std::vector<int>& text, int duration, const std::vector<int>& traj) {
  std::vector<int> t{kBos};
  t.insert(t.end(), text.begin(), text.end());
  t.push_back(kSep);
  t.push_back(kToTraj);
  const std::size_t src = t.size();
  t.push_back(duration);
  t.insert(t.end(), traj.begin(), traj.end());
  t.push_back(kEos);
  return make_example(std::move(t), src);
}

inline Example traj_to_text_example(int duration, const std::vector<int>& traj, const std::vector<int>& text) {
  std::vector<int> t{kBos, duration};
  t.insert(t.end(), traj.begin(), traj.end());
  t.push_back(kSep);
  t.push_back(kToText);
  const std::size_t src = t.size();
  t.insert(t.end(), text.begin(), text.end());
  t.push_back(kEos);
  return make_example(std::move(t), src);
}

inline Example text_lm_example(const std::vector<int>& text) {
  std::vector<int> t{kBos};
  t.insert(t.end(), text.begin(), text.end());
  t.push_back(kEos);
  return make_example(std::move(t), 1);
}

inline Example traj_lm_example(int duration, const std::vector<int>& traj) {
  std::vector<int> t{kBos, duration};
  t.insert(t.end(), traj.begin(), traj.end());
  t.push_back(kEos);
  return make_example(std::move(t), 2 + traj.size() / 2);
}

/// Mean NLL of tokens[source_len, length) where logits row p predicts
/// token p+1. Optionally writes dLoss/dlogits and per-target NLLs.
template <typename S>
double nll_from_logits(const nn::Mat<S>& logits, const std::vector<int>& tokens, std::size_t source_len,
                       std::size_t length, nn::Mat<S>* dlogits = nullptr, std::vector<double>* per_token = nullptr) {
  if (source_len < 1 || length <= source_len || length > tokens.size())
    throw Error(ErrorCode::ShapeError, "target span is empty or out of range");
  if (logits.rows() < static_cast<Eigen::Index>(length - 1))
    throw Error(ErrorCode::ShapeError, "not enough logit rows");
  const double n = static_cast<double>(length - source_len);
  if (dlogits) *dlogits = nn::Mat<S>::Zero(logits.rows(), logits.cols());
  if (per_token) per_token->clear();
  double total = 0.0;
  for (std::size_t p = source_len; p < length; ++p) {
    const auto row = logits.row(static_cast<Eigen::Index>(p - 1));
    const double mx = static_cast<double>(row.maxCoeff());
    double z = 0.0;
    for (Eigen::Index v = 0; v < row.size(); ++v) z += std::exp(static_cast<double>(row(v)) - mx);
    const double lse = mx + std::log(z);
    const double nll = lse - static_cast<double>(row(tokens[p]));
    total += nll;
    if (per_token) per_token->push_back(nll);
    if (dlogits) {
      auto d = dlogits->row(static_cast<Eigen::Index>(p - 1));
      for (Eigen::Index v = 0; v < row.size(); ++v)
        d(v) = static_cast<S>(std::exp(static_cast<double>(row(v)) - lse) / n);
      d(tokens[p]) -= static_cast<S>(1.0 / n);
    }
  }
  return total / n;
}

template <typename S>
struct KvCache {
  std::vector<nn::Mat<S>> k, v;  // per layer: context x (heads*head_dim)
  int len = 0;
};

template <typename S>
class CineGpt {
 public:
  using Mat = nn::Mat<S>;
  using Row = nn::RowVec<S>;

  struct Block {
    nn::LayerNorm<S> ln1, ln2;
    nn::Linear<S> qkv, proj, fc1, fc2;
  };

  struct BlockCache {
    Mat x_in, a1, qkv, att, h, a2, f1, g, drop1, drop2;
    nn::LayerNormCache<S> c1, c2;
    std::vector<Mat> probs;
  };

  struct Cache {
    std::vector<int> tokens;
    std::vector<BlockCache> blocks;
    Mat x_last, a_final;
    nn::LayerNormCache<S> cf;
  };

  CineGpt() = default;

  CineGpt(const GptConfig& cfg, Vocab vocab, std::uint64_t seed) : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.check();
    const int d = cfg_.model_dim, inner = cfg_.heads * cfg_.head_dim, v = vocab_.size();
    tok_emb_ = nn::Param<S>(v, d);
    pos_emb_ = nn::Param<S>(cfg_.context, d);
    nn::Rng rng(seed);
    nn::fill_normal(tok_emb_.value, rng, 0.02);
    nn::fill_normal(pos_emb_.value, rng, 0.02);
    const double resid_std = 0.02 / std::sqrt(2.0 * cfg_.layers);
    blocks_.resize(static_cast<std::size_t>(cfg_.layers));
    for (auto& b : blocks_) {
      b.ln1 = nn::LayerNorm<S>(d);
      b.ln2 = nn::LayerNorm<S>(d);
      b.qkv = nn::Linear<S>(d, 3 * inner);
      b.proj = nn::Linear<S>(inner, d);
      b.fc1 = nn::Linear<S>(d, 4 * d);
      b.fc2 = nn::Linear<S>(4 * d, d);
      b.qkv.init(rng, 0.02);
      b.proj.init(rng, resid_std);
      b.fc1.init(rng, 0.02);
      b.fc2.init(rng, resid_std);
    }
    ln_f_ = nn::LayerNorm<S>(d);
    head_ = nn::Linear<S>(d, v);
    head_.init(rng, 0.02);
  }

  const GptConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  nn::Linear<S>& head() { return head_; }

  nn::NamedParams<S> parameters() {
    nn::NamedParams<S> out;
    out.emplace_back("tok_emb", &tok_emb_);
    out.emplace_back("pos_emb", &pos_emb_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i);
      auto& b = blocks_[i];
      b.ln1.collect(out, p + ".ln1");
      b.qkv.collect(out, p + ".qkv");
      b.proj.collect(out, p + ".proj");
      b.ln2.collect(out, p + ".ln2");
      b.fc1.collect(out, p + ".fc1");
      b.fc2.collect(out, p + ".fc2");
    }
    ln_f_.collect(out, "ln_f");
    head_.collect(out, "head");
    return out;
  }

  // -------------------------------------------------------------------------
  // Full-sequence forward/backward

  /// Logits T x V for every position. `dropout_rng` enables dropout.
  Mat forward(const std::vector<int>& tokens, Cache* cache = nullptr, nn::Rng* dropout_rng = nullptr) const {
    const auto t_len = static_cast<Eigen::Index>(tokens.size());
    if (t_len > cfg_.context) {
      throw Error(ErrorCode::ContextOverflow, "sequence of " + std::to_string(t_len) +
                                                  " tokens exceeds context " + std::to_string(cfg_.context));
    }
    if (t_len == 0) throw Error(ErrorCode::ShapeError, "empty sequence");
    Mat x(t_len, cfg_.model_dim);
    for (Eigen::Index t = 0; t < t_len; ++t) {
      const int tok = tokens[static_cast<std::size_t>(t)];
      if (tok < 0 || tok >= vocab_.size()) throw Error(ErrorCode::IndexError, "token id out of range");
      x.row(t) = tok_emb_.value.row(tok) + pos_emb_.value.row(t);
    }
    if (cache) {
      cache->tokens = tokens;
      cache->blocks.assign(blocks_.size(), BlockCache{});
    }
    const int hd = cfg_.head_dim, inner = cfg_.heads * cfg_.head_dim;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
    for (std::size_t li = 0; li < blocks_.size(); ++li) {
      const Block& b = blocks_[li];
      BlockCache local;
      BlockCache& c = cache ? cache->blocks[li] : local;
      c.x_in = x;
      c.a1 = b.ln1.forward(x, &c.c1);
      c.qkv = b.qkv.forward(c.a1);
      c.att.resize(t_len, inner);
      c.probs.resize(static_cast<std::size_t>(cfg_.heads));
      for (int h = 0; h < cfg_.heads; ++h) {
        const auto q = c.qkv.middleCols(h * hd, hd);
        const auto k = c.qkv.middleCols(inner + h * hd, hd);
        const auto v = c.qkv.middleCols(2 * inner + h * hd, hd);
        Mat s = (q * k.transpose()) * scale;
        for (Eigen::Index i = 0; i < t_len; ++i)
          for (Eigen::Index j = i + 1; j < t_len; ++j) s(i, j) = -std::numeric_limits<S>::infinity();
        Mat p = nn::softmax_rows<S>(s);
        c.att.middleCols(h * hd, hd) = p * v;
        c.probs[static_cast<std::size_t>(h)] = std::move(p);
      }
      Mat o = b.proj.forward(c.att);
      apply_dropout(o, c.drop1, dropout_rng);
      c.h = x + o;
      c.a2 = b.ln2.forward(c.h, &c.c2);
      c.f1 = b.fc1.forward(c.a2);
      c.g = nn::gelu<S>(c.f1);
      Mat m = b.fc2.forward(c.g);
      apply_dropout(m, c.drop2, dropout_rng);
      x = c.h + m;
      if (!cache) c = BlockCache{};
    }
    nn::LayerNormCache<S> cf;
    Mat a = ln_f_.forward(x, &cf);
    Mat logits = head_.forward(a);
    if (cache) {
      cache->x_last = std::move(x);
      cache->a_final = std::move(a);
      cache->cf = std::move(cf);
    }
    return logits;
  }

  /// Accumulates parameter gradients given dLoss/dlogits.
  void backward(const Cache& c, const Mat& dlogits) {
    Mat dx = ln_f_.backward(c.cf, head_.backward(c.a_final, dlogits));
    const int hd = cfg_.head_dim, inner = cfg_.heads * cfg_.head_dim;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
    for (std::size_t li = blocks_.size(); li-- > 0;) {
      Block& b = blocks_[li];
      const BlockCache& bc = c.blocks[li];
      Mat dm = dx;
      if (bc.drop2.size() > 0) dm = dm.cwiseProduct(bc.drop2);
      const Mat dg = b.fc2.backward(bc.g, dm);
      const Mat da2 = b.fc1.backward(bc.a2, nn::gelu_backward<S>(bc.f1, dg));
      Mat dh = dx + b.ln2.backward(bc.c2, da2);
      Mat dout = dh;
      if (bc.drop1.size() > 0) dout = dout.cwiseProduct(bc.drop1);
      const Mat datt = b.proj.backward(bc.att, dout);
      Mat dqkv = Mat::Zero(bc.qkv.rows(), bc.qkv.cols());
      for (int h = 0; h < cfg_.heads; ++h) {
        const Mat& p = bc.probs[static_cast<std::size_t>(h)];
        const auto q = bc.qkv.middleCols(h * hd, hd);
        const auto k = bc.qkv.middleCols(inner + h * hd, hd);
        const auto v = bc.qkv.middleCols(2 * inner + h * hd, hd);
        const auto dho = datt.middleCols(h * hd, hd);
        const Mat dp = dho * v.transpose();
        dqkv.middleCols(2 * inner + h * hd, hd) = p.transpose() * dho;
        Mat ds = p.cwiseProduct(dp);
        const auto rowsum = ds.rowwise().sum().eval();
        ds -= p.cwiseProduct(rowsum.replicate(1, p.cols()));
        dqkv.middleCols(h * hd, hd) = (ds * k) * scale;
        dqkv.middleCols(inner + h * hd, hd) = (ds.transpose() * q) * scale;
      }
      const Mat da1 = b.qkv.backward(bc.a1, dqkv);
      dx = dh + b.ln1.backward(bc.c1, da1);
    }
    for (Eigen::Index t = 0; t < dx.rows(); ++t) {
      tok_emb_.grad.row(c.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
      pos_emb_.grad.row(t) += dx.row(t);
    }
  }

  /// Mean target NLL of an example; with grad_scale > 0 accumulates
  /// grad_scale * dLoss into parameter gradients.
  double example_loss(const Example& ex, S grad_scale = S(0), nn::Rng* dropout_rng = nullptr,
                      std::vector<double>* per_token = nullptr) {
    if (ex.length > static_cast<std::size_t>(cfg_.context)) {
      throw Error(ErrorCode::ContextOverflow, "sequence of " + std::to_string(ex.length) +
                                                  " tokens exceeds context " + std::to_string(cfg_.context));
    }
    const std::vector<int> input(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(ex.length - 1));
    if (grad_scale <= S(0)) {
      const Mat logits = forward(input, nullptr, dropout_rng);
      return nll_from_logits<S>(logits, ex.tokens, ex.source_len, ex.length, nullptr, per_token);
    }
    Cache cache;
    const Mat logits = forward(input, &cache, dropout_rng);
    Mat dlogits;
    const double loss = nll_from_logits<S>(logits, ex.tokens, ex.source_len, ex.length, &dlogits, per_token);
    dlogits *= grad_scale;
    backward(cache, dlogits);
    return loss;
  }

  /// Loss of a target sequence given a source prefix.
  double lm_loss(const std::vector<int>& source, const std::vector<int>& target) {
    std::vector<int> t = source;
    t.insert(t.end(), target.begin(), target.end());
    return example_loss(make_example(std::move(t), source.size()));
  }

  // -------------------------------------------------------------------------
  // Incremental decoding

  KvCache<S> new_cache() const {
    KvCache<S> c;
    const int inner = cfg_.heads * cfg_.head_dim;
    c.k.assign(blocks_.size(), Mat::Zero(cfg_.context, inner));
    c.v.assign(blocks_.size(), Mat::Zero(cfg_.context, inner));
    return c;
  }

  /// Appends one token and returns next-token logits.
  Row step(int token, KvCache<S>& kv) const {
    if (kv.len >= cfg_.context) throw Error(ErrorCode::ContextOverflow, "context is full");
    if (token < 0 || token >= vocab_.size()) throw Error(ErrorCode::IndexError, "token id out of range");
    const int hd = cfg_.head_dim, inner = cfg_.heads * cfg_.head_dim;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
    const int pos = kv.len;
    Mat x = tok_emb_.value.row(token) + pos_emb_.value.row(pos);
    for (std::size_t li = 0; li < blocks_.size(); ++li) {
      const Block& b = blocks_[li];
      const Mat qkv = b.qkv.forward(b.ln1.forward(x));
      kv.k[li].row(pos) = qkv.middleCols(inner, inner);
      kv.v[li].row(pos) = qkv.middleCols(2 * inner, inner);
      Mat att(1, inner);
      for (int h = 0; h < cfg_.heads; ++h) {
        const auto keys = kv.k[li].block(0, h * hd, pos + 1, hd);
        const auto vals = kv.v[li].block(0, h * hd, pos + 1, hd);
        Mat s = (qkv.middleCols(h * hd, hd) * keys.transpose()) * scale;
        const Mat p = nn::softmax_rows<S>(s);
        att.middleCols(h * hd, hd) = p * vals;
      }
      const Mat hres = x + b.proj.forward(att);
      x = hres + b.fc2.forward(nn::gelu<S>(b.fc1.forward(b.ln2.forward(hres))));
    }
    ++kv.len;
    return head_.forward(ln_f_.forward(x)).row(0);
  }

  // -------------------------------------------------------------------------
  // Persistence

  nn::Checkpoint to_checkpoint() {
    nn::Checkpoint ck;
    ck.meta = {{"kind", "cinegpt"}, {"version", 1}, {"config", cfg_.to_json()}, {"vocab", vocab_.to_json()}};
    ck.put_params(parameters());
    return ck;
  }

  static CineGpt from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.meta.value("kind", "") != "cinegpt") throw Error(ErrorCode::FormatError, "checkpoint is not a CineGPT model");
    if (ck.meta.value("version", 0) != 1) throw Error(ErrorCode::FormatError, "unsupported CineGPT version");
    CineGpt m(GptConfig::from_json(ck.meta.at("config")), Vocab::from_json(ck.meta.at("vocab")), 0);
    ck.get_params(m.parameters());
    return m;
  }

  void save(const std::string& path) { to_checkpoint().save(path); }
  static CineGpt load(const std::string& path) { return from_checkpoint(nn::Checkpoint::load(path)); }

 private:
  GptConfig cfg_;
  Vocab vocab_;
  nn::Param<S> tok_emb_, pos_emb_;
  std::vector<Block> blocks_;
  nn::LayerNorm<S> ln_f_;
  nn::Linear<S> head_;

  void apply_dropout(Mat& m, Mat& mask, nn::Rng* rng) const {
    if (!rng || cfg_.dropout <= 0.0) {
      mask.resize(0, 0);
      return;
    }
    const S keep = static_cast<S>(1.0 - cfg_.dropout);
    mask.resize(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      mask.data()[i] = rng->uniform() < cfg_.dropout ? S(0) : S(1) / keep;
    m = m.cwiseProduct(mask);
  }
};

// ---------------------------------------------------------------------------
// Corpus tokenization

struct TokenizedPair {
  std::vector<int> text;
  int duration = 0;
  std::vector<int> traj;  // vocabulary ids
  std::optional<std::vector<MotionPrimitive>> primitives;
};

template <typename T>
std::vector<int> traj_vocab_tokens(const Vocab& vocab, const TrajTokenSeq& seq) {
  std::vector<int> out;
  out.reserve(seq.ids.size());
  for (int id : seq.ids) out.push_back(vocab.traj_token(id));
  return out;
}

template <typename T>
std::vector<TokenizedPair> tokenize_corpus(const std::vector<TextTrajPair>& pairs, const TrajTokenizer<T>& tok,
                                           const Vocab& vocab) {
  std::vector<TokenizedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    TokenizedPair tp;
    tp.text = vocab.encode_text(p.text);
    const TrajTokenSeq seq = tok.tokenize(p.traj);
    tp.duration = vocab.duration_token(seq.duration_s);
    tp.traj = traj_vocab_tokens<T>(vocab, seq);
    tp.primitives = parse_description(p.text);
    out.push_back(std::move(tp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct GptTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double min_lr_ratio = 0.1;  // cosine decay floor
  std::size_t warmup_steps = 0;
  double clip_norm = 1.0;
  std::array<double, 4> mixture = {0.25, 0.25, 0.25, 0.25};  // text, traj, text->traj, traj->text
  double paraphrase_prob = 0.5;  // text->traj examples re-rendered with another template
  double word_dropout = 0.0;     // per-word drop probability on text->traj prompts
  std::size_t template_pool = 3;
};

struct GptTrainResult {
  std::vector<double> step_losses;
  double final_loss = 0.0;  // mean over the last min(50, steps) steps
};

enum class TrainStage { Pretrain = 1, Translation = 2 };

namespace detail {

inline std::vector<int> paraphrase_tokens(const TokenizedPair& p, const Vocab& vocab, nn::Rng& rng,
                                          const GptTrainConfig& cfg) {
  std::vector<int> text = p.text;
  if (p.primitives && rng.uniform() < cfg.paraphrase_prob)
    text = vocab.encode_text(render_description(*p.primitives, rng.next() % 997, cfg.template_pool));
  if (cfg.word_dropout <= 0.0) return text;
  std::vector<int> kept;
  for (int t : text)
    if (rng.uniform() >= cfg.word_dropout) kept.push_back(t);
  if (kept.empty()) kept.push_back(text[rng.index(text.size())]);
  return kept;
}

inline double lr_at(const GptTrainConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  if (cfg.steps <= 1) return cfg.lr;
  const double prog = static_cast<double>(step) / static_cast<double>(cfg.steps - 1);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * prog));
  return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

}  // namespace detail

/// Training example the given stage draws for pair `p`.
inline Example draw_example(TrainStage stage, const TokenizedPair& p, const Vocab& vocab, nn::Rng& rng,
                            const GptTrainConfig& cfg, int forced_task = -1) {
  int task;
  if (forced_task >= 0) {
    task = forced_task;
  } else if (stage == TrainStage::Translation) {
    task = 2 + static_cast<int>(rng.index(2));
  } else {
    const double total = cfg.mixture[0] + cfg.mixture[1] + cfg.mixture[2] + cfg.mixture[3];
    double u = rng.uniform() * total;
    task = 3;
    for (int i = 0; i < 4; ++i) {
      if (u < cfg.mixture[static_cast<std::size_t>(i)]) {
        task = i;
        break;
      }
      u -= cfg.mixture[static_cast<std::size_t>(i)];
    }
  }
  switch (task) {
    case 0: return text_lm_example(p.text);
    case 1: return traj_lm_example(p.duration, p.traj);
    case 2: return text_to_traj_example(detail::paraphrase_tokens(p, vocab, rng, cfg), p.duration, p.traj);
    default: return traj_to_text_example(p.duration, p.traj, p.text);
  }
}

/// Deterministic given (model state, data, config, seed).
template <typename S>
GptTrainResult train_gpt(CineGpt<S>& model, const std::vector<TokenizedPair>& data, TrainStage stage,
                         const GptTrainConfig& cfg, std::uint64_t seed,
                         const std::function<void(std::size_t, double)>& on_step = {}) {
  if (data.empty()) throw Error(ErrorCode::BadRequest, "training corpus is empty");
  nn::Rng rng(seed ^ (stage == TrainStage::Pretrain ? 0x5151ULL : 0xA2A2ULL));
  nn::Rng dropout_rng(seed ^ 0xD0D0ULL);
  auto params = model.parameters();
  nn::Adam<S> opt(params, nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
  GptTrainResult res;
  // Stage 2 walks (pair, direction) combinations in shuffled epochs.
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const std::size_t units = stage == TrainStage::Translation ? data.size() * 2 : data.size();
  const S scale = S(1) / static_cast<S>(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    nn::zero_grads(params);
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        order.resize(units);
        for (std::size_t i = 0; i < units; ++i) order[i] = i;
        for (std::size_t i = units; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        cursor = 0;
      }
      const std::size_t u = order[cursor++];
      Example ex = stage == TrainStage::Translation
                       ? draw_example(stage, data[u / 2], model.vocab(), rng, cfg, 2 + static_cast<int>(u % 2))
                       : draw_example(stage, data[u], model.vocab(), rng, cfg);
      loss += model.example_loss(ex, scale, &dropout_rng) / static_cast<double>(cfg.batch_size);
    }
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::TrainingDiverged, "language-model loss became non-finite at step " + std::to_string(step));
    }
    opt.step(detail::lr_at(cfg, step));
    res.step_losses.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  const std::size_t tail = std::min<std::size_t>(50, res.step_losses.size());
  for (std::size_t i = res.step_losses.size() - tail; i < res.step_losses.size(); ++i)
    res.final_loss += res.step_losses[i] / static_cast<double>(tail);
  return res;
}

// ---------------------------------------------------------------------------
// Sampling

enum class SamplerMode { Greedy, TopK, Nucleus };

struct SamplerParams {
  SamplerMode mode = SamplerMode::Greedy;
  double temperature = 1.0;
  int top_k = 20;
  double top_p = 0.9;
  std::uint64_t seed = 0;
  int max_traj_tokens = 0;  // 0: tokenizer sequence length
  int max_text_tokens = 64;

  void check() const {
    if (mode != SamplerMode::Greedy && !(temperature > 0.0))
      throw Error(ErrorCode::BadRequest, "temperature must be positive");
    if (mode == SamplerMode::TopK && top_k < 1) throw Error(ErrorCode::BadRequest, "top_k must be >= 1");
    if (mode == SamplerMode::Nucleus && !(top_p > 0.0 && top_p <= 1.0))
      throw Error(ErrorCode::BadRequest, "top_p must be in (0, 1]");
  }
};

inline std::string_view sampler_mode_name(SamplerMode m) {
  switch (m) {
    case SamplerMode::Greedy: return "greedy";
    case SamplerMode::TopK: return "top_k";
    case SamplerMode::Nucleus: return "nucleus";
  }
  return "greedy";
}

inline SamplerMode sampler_mode_from(std::string_view s) {
  if (s == "greedy") return SamplerMode::Greedy;
  if (s == "top_k" || s == "top-k" || s == "topk") return SamplerMode::TopK;
  if (s == "nucleus" || s == "top_p") return SamplerMode::Nucleus;
  throw Error(ErrorCode::BadRequest, "unknown sampler mode " + std::string(s));
}

/// Softmax of logits/temperature restricted to allowed tokens (others 0).
template <typename S>
std::vector<double> next_token_distribution(const nn::RowVec<S>& logits, const std::vector<char>& allowed,
                                            double temperature) {
  std::vector<double> p(static_cast<std::size_t>(logits.size()), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (allowed[static_cast<std::size_t>(i)]) mx = std::max(mx, static_cast<double>(logits(i)) / temperature);
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!allowed[static_cast<std::size_t>(i)]) continue;
    p[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(logits(i)) / temperature - mx);
    z += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= z;
  return p;
}

template <typename S>
int sample_token(const nn::RowVec<S>& logits, const std::vector<char>& allowed, const SamplerParams& sp,
                 nn::Rng& rng) {
  if (sp.mode == SamplerMode::Greedy) {
    int best = -1;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      if (!allowed[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || logits(i) > logits(best)) best = static_cast<int>(i);
    }
    return best;
  }
  std::vector<double> p = next_token_distribution(logits, allowed, sp.temperature);
  std::vector<int> idx;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) idx.push_back(static_cast<int>(i));
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)]; });
  std::size_t keep = idx.size();
  if (sp.mode == SamplerMode::TopK) {
    keep = std::min(keep, static_cast<std::size_t>(sp.top_k));
  } else {
    double cum = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      cum += p[static_cast<std::size_t>(idx[i])];
      if (cum >= sp.top_p) {
        keep = i + 1;
        break;
      }
    }
  }
  keep = std::max<std::size_t>(keep, 1);
  double z = 0.0;
  for (std::size_t i = 0; i < keep; ++i) z += p[static_cast<std::size_t>(idx[i])];
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= p[static_cast<std::size_t>(idx[i])];
    if (u < 0.0) return idx[i];
  }
  return idx[keep - 1];
}

struct TrajTokenResult {
  int duration_token = 0;
  double duration_s = 0.0;
  std::vector<int> codes;   // codebook ids
  std::vector<int> tokens;  // generated vocabulary ids: DUR traj... [EOS]
  bool truncated = false;
};

struct GeneratedTrajectory {
  Trajectory traj;
  TrajTokenResult tokens;
  bool truncated = false;
};

struct GeneratedText {
  std::string text;
  std::vector<int> tokens;  // word ids [EOS]
  bool truncated = false;
};

template <typename S>
TrajTokenResult generate_traj_tokens(const CineGpt<S>& model, const std::vector<int>& text_tokens,
                                     const SamplerParams& sp, int default_max_tokens) {
  sp.check();
  const Vocab& vocab = model.vocab();
  std::vector<int> prompt{kBos};
  prompt.insert(prompt.end(), text_tokens.begin(), text_tokens.end());
  prompt.push_back(kSep);
  prompt.push_back(kToTraj);
  const int ctx = model.config().context;
  if (static_cast<int>(prompt.size()) + 2 > ctx) {
    throw Error(ErrorCode::ContextOverflow, "prompt of " + std::to_string(text_tokens.size()) + " words is too long");
  }
  const int max_tokens = sp.max_traj_tokens > 0 ? sp.max_traj_tokens : default_max_tokens;
  nn::Rng rng(sp.seed);
  KvCache<S> kv = model.new_cache();
  nn::RowVec<S> logits;
  for (int t : prompt) logits = model.step(t, kv);

  std::vector<char> dur_mask(static_cast<std::size_t>(vocab.size()), 0), traj_mask = dur_mask;
  for (int t = vocab.duration_begin(); t < vocab.traj_begin(); ++t) dur_mask[static_cast<std::size_t>(t)] = 1;
  for (int t = vocab.traj_begin(); t < vocab.size(); ++t) traj_mask[static_cast<std::size_t>(t)] = 1;
  std::vector<char> traj_eos_mask = traj_mask;
  traj_eos_mask[kEos] = 1;

  TrajTokenResult r;
  r.duration_token = sample_token(logits, dur_mask, sp, rng);
  r.duration_s = vocab.duration_of(r.duration_token);
  r.tokens.push_back(r.duration_token);
  if (kv.len < ctx) logits = model.step(r.duration_token, kv);
  while (true) {
    const bool full = static_cast<int>(r.codes.size()) >= max_tokens || kv.len >= ctx;
    const auto& mask = r.codes.empty() ? traj_mask : traj_eos_mask;
    const int tok = sample_token(logits, mask, sp, rng);
    if (tok == kEos) {
      r.tokens.push_back(kEos);
      break;
    }
    if (full) {
      r.truncated = true;
      break;
    }
    r.codes.push_back(vocab.code_of(tok));
    r.tokens.push_back(tok);
    if (kv.len < ctx) logits = model.step(tok, kv);
  }
  return r;
}

/// Text -> trajectory. Unknown words raise UnknownToken; decoding uses the
/// generated duration token.
template <typename S, typename T>
GeneratedTrajectory generate_trajectory(const CineGpt<S>& model, const TrajTokenizer<T>& tok, std::string_view text,
                                        const SamplerParams& sp = {}) {
  const std::vector<int> words = model.vocab().encode_text(text);
  GeneratedTrajectory g;
  g.tokens = generate_traj_tokens(model, words, sp, tok.config().tokens());
  if (g.tokens.codes.empty()) {
    g.tokens.codes.push_back(0);
    g.tokens.truncated = true;
  }
  g.truncated = g.tokens.truncated;
  g.traj = tok.decode(g.tokens.codes, g.tokens.duration_s);
  return g;
}

template <typename S>
GeneratedText generate_text_tokens(const CineGpt<S>& model, int duration_token, const std::vector<int>& traj_tokens,
                                   const SamplerParams& sp) {
  sp.check();
  const Vocab& vocab = model.vocab();
  std::vector<int> prompt{kBos, duration_token};
  prompt.insert(prompt.end(), traj_tokens.begin(), traj_tokens.end());
  prompt.push_back(kSep);
  prompt.push_back(kToText);
  const int ctx = model.config().context;
  if (static_cast<int>(prompt.size()) + 2 > ctx) throw Error(ErrorCode::ContextOverflow, "trajectory is too long");
  nn::Rng rng(sp.seed);
  KvCache<S> kv = model.new_cache();
  nn::RowVec<S> logits;
  for (int t : prompt) logits = model.step(t, kv);
  std::vector<char> word_mask(static_cast<std::size_t>(vocab.size()), 0);
  for (int t = vocab.word_begin(); t < vocab.duration_begin(); ++t) word_mask[static_cast<std::size_t>(t)] = 1;
  std::vector<char> word_eos = word_mask;
  word_eos[kEos] = 1;
  GeneratedText g;
  std::vector<int> words;
  while (true) {
    const bool full = static_cast<int>(words.size()) >= sp.max_text_tokens || kv.len >= ctx;
    const int t = sample_token(logits, words.empty() ? word_mask : word_eos, sp, rng);
    if (t == kEos) {
      g.tokens.push_back(kEos);
      break;
    }
    if (full) {
      g.truncated = true;
      break;
    }
    words.push_back(t);
    g.tokens.push_back(t);
    if (kv.len < ctx) logits = model.step(t, kv);
  }
  g.text = vocab.decode_text(words);
  return g;
}

/// Trajectory -> text (resampled to the tokenizer's frame count first).
template <typename S, typename T>
GeneratedText trajectory_to_text(const CineGpt<S>& model, const TrajTokenizer<T>& tok, const Trajectory& traj,
                                 const SamplerParams& sp = {}) {
  validate(traj);
  const TrajTokenSeq seq = tok.tokenize(traj);
  return generate_text_tokens(model, model.vocab().duration_token(seq.duration_s),
                              traj_vocab_tokens<T>(model.vocab(), seq), sp);
}

}  // namespace chatcam
