#pragma once

// Scene grounding: pick the input view that best matches a prompt, then
// refine that camera by gradient descent on rendered-view similarity.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chatcam/camera.hpp"
#include "chatcam/dataset.hpp"
#include "chatcam/error.hpp"
#include "chatcam/nn/tensor.hpp"
#include "chatcam/trajectory_json.hpp"

namespace chatcam {

using Embedding = Eigen::VectorXd;
using CameraParams = Eigen::Matrix<double, 10, 1>;  // rot6d a, rot6d b, trans, focal

struct Blob {
  Vec3 center = Vec3::Zero();
  double radius = 0.1;
  Vec3 color = Vec3::Ones();
};

struct Bounds {
  Vec3 min = Vec3::Constant(-1.0);
  Vec3 max = Vec3::Constant(1.0);

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

struct SceneImage {
  std::string id;
  CameraFrame camera;
  std::optional<Embedding> embedding;  // empty: rendered and embedded on demand
};

struct Scene {
  std::string id;
  std::size_t embedding_dim = 0;
  std::vector<SceneImage> images;
  std::vector<Blob> content;
  Bounds bounds;
};

struct AnchorResult {
  CameraFrame camera;
  double score = 0.0;  // cosine similarity
  std::string source_image_id;
  std::size_t refinement_steps = 0;
  std::vector<double> losses;  // objective after each accepted step, starting with the initial value
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Camera parameter vector

inline CameraParams to_params(const CameraFrame& f) {
  CameraParams p;
  p << f.rot.a, f.rot.b, f.trans, f.focal;
  return p;
}

inline CameraFrame from_params(const CameraParams& p) {
  return CameraFrame{Rot6D{p.segment<3>(0), p.segment<3>(3)}, p.segment<3>(6), p(9)};
}

/// Derivatives of the Gram-Schmidt rotation with respect to the six rot6d
/// coordinates (a then b).
inline std::array<Mat3, 6> rotation_jacobian(const Rot6D& r) {
  const double na = r.a.norm();
  const Vec3 c1 = r.a / na;
  const Vec3 bp = r.b - r.b.dot(c1) * c1;
  const double nb = bp.norm();
  if (!(na >= kDegenerateEps) || !(nb >= kDegenerateEps)) {
    throw Error(ErrorCode::DegenerateRotation, "rotation jacobian at a degenerate rot6d");
  }
  const Vec3 c2 = bp / nb;
  const Mat3 p1 = (Mat3::Identity() - c1 * c1.transpose()) / na;
  const Mat3 p2 = (Mat3::Identity() - c2 * c2.transpose()) / nb;
  std::array<Mat3, 6> out;
  for (int k = 0; k < 6; ++k) {
    Vec3 da = Vec3::Zero(), db = Vec3::Zero();
    if (k < 3) da(k) = 1.0;
    else db(k - 3) = 1.0;
    const Vec3 dc1 = p1 * da;
    const Vec3 dbp = db - db.dot(c1) * c1 - r.b.dot(dc1) * c1 - r.b.dot(c1) * dc1;
    const Vec3 dc2 = p2 * dbp;
    out[static_cast<std::size_t>(k)].col(0) = dc1;
    out[static_cast<std::size_t>(k)].col(1) = dc2;
    out[static_cast<std::size_t>(k)].col(2) = dc1.cross(c2) + c1.cross(dc2);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy renderer

/// res x res x 3 feature image, row-major with channels innermost.
struct Raster {
  int res = 0;
  Eigen::VectorXd data;

  double at(int row, int col, int ch) const { return data((row * res + col) * 3 + ch); }
};

struct RenderConfig {
  double near = 0.05;
  double gate_sharpness = 40.0;  // behind-camera gate slope
  double depth_softness = 0.05;  // softplus width keeping depth positive
};

namespace detail {
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
}  // namespace detail

/// Gaussian splatting of the scene blobs through a pinhole camera. With
/// `jacobian` set, also returns d raster / d camera params (3*res^2 x 10).
inline Raster toy_render(const std::vector<Blob>& content, const CameraFrame& cam, int res = 32,
                         Eigen::MatrixXd* jacobian = nullptr, const RenderConfig& rc = {}) {
  if (res <= 0) throw Error(ErrorCode::ShapeError, "render resolution must be positive");
  validate(cam);
  const Mat3 rot = rotation_of(cam);
  const auto n = static_cast<Eigen::Index>(3 * res * res);
  Raster out{res, Eigen::VectorXd::Zero(n)};
  std::array<Mat3, 6> drot;
  if (jacobian) {
    jacobian->setZero(n, 10);
    drot = rotation_jacobian(cam.rot);
  }
  const double f = cam.focal;
  for (const Blob& blob : content) {
    const Vec3 d = blob.center - cam.trans;
    const Vec3 q = rot.transpose() * d;
    const double z = -q.z();
    const double g = detail::sigmoid(rc.gate_sharpness * (z - rc.near));
    const double s = rc.depth_softness;
    const double ze = rc.near + s * detail::softplus((z - rc.near) / s);
    const double x = f * q.x() / ze;
    const double y = f * q.y() / ze;
    const double sigma = f * blob.radius / ze;

    // d(x, y, sigma, g) / d params
    Eigen::Matrix<double, 4, 10> dv = Eigen::Matrix<double, 4, 10>::Zero();
    if (jacobian) {
      Eigen::Matrix<double, 3, 10> dq = Eigen::Matrix<double, 3, 10>::Zero();
      for (int k = 0; k < 6; ++k) dq.col(k) = drot[static_cast<std::size_t>(k)].transpose() * d;
      dq.block<3, 3>(0, 6) = -rot.transpose();
      const double dze_dz = detail::sigmoid((z - rc.near) / s);
      const Eigen::Matrix<double, 1, 10> dze = -dze_dz * dq.row(2);
      dv.row(0) = f * dq.row(0) / ze - f * q.x() * dze / (ze * ze);
      dv.row(1) = f * dq.row(1) / ze - f * q.y() * dze / (ze * ze);
      dv.row(2) = -f * blob.radius * dze / (ze * ze);
      dv(0, 9) += q.x() / ze;
      dv(1, 9) += q.y() / ze;
      dv(2, 9) += blob.radius / ze;
      dv.row(3) = -rc.gate_sharpness * g * (1.0 - g) * dq.row(2);
    }

    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int row = 0; row < res; ++row) {
      const double v = 0.5 - (row + 0.5) / res;
      for (int col = 0; col < res; ++col) {
        const double u = (col + 0.5) / res - 0.5;
        const double du = u - x, dvv = v - y;
        const double r2 = du * du + dvv * dvv;
        const double e = std::exp(-r2 * inv2s2);
        const double w = g * e;
        const Eigen::Index base = (row * res + col) * 3;
        out.data.segment<3>(base) += w * blob.color;
        if (jacobian) {
          const Eigen::Matrix<double, 1, 4> dw(w * du / (sigma * sigma), w * dvv / (sigma * sigma),
                                               w * r2 / (sigma * sigma * sigma), e);
          const Eigen::Matrix<double, 1, 10> dwp = dw * dv;
          for (int c = 0; c < 3; ++c) jacobian->row(base + c) += blob.color(c) * dwp;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding providers

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual Embedding embed_text(std::string_view text) const = 0;
  virtual Embedding embed_image(const Raster& image) const = 0;
  virtual bool differentiable() const { return false; }
  /// Gradient of <embed_image(image), g> with respect to the raster.
  virtual Eigen::VectorXd image_vjp(const Raster&, const Embedding&) const {
    throw Error(ErrorCode::NotDifferentiable, "embedding provider has no image gradient");
  }
};

namespace detail {

inline std::string normalize_prompt(std::string_view text) {
  std::string out;
  for (const auto& w : tokenize_words(text)) out += (out.empty() ? "" : " ") + w;
  if (out.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt has no words");
  return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

inline Embedding unit(const Embedding& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorCode::BadRequest, "embedding has zero or non-finite norm");
  return v / n;
}

/// Gradient of u / |u| pulled back from g.
inline Eigen::VectorXd normalize_vjp(const Eigen::VectorXd& u, const Eigen::VectorXd& g) {
  const double n = u.norm();
  const Eigen::VectorXd e = u / n;
  return (g - e * e.dot(g)) / n;
}

}  // namespace detail

/// Deterministic stand-in: prompts hash to random unit vectors; images go
/// through a fixed random affine map followed by normalization.
class SyntheticProvider : public EmbeddingProvider {
 public:
  explicit SyntheticProvider(std::size_t dim = 64, int res = 32, std::uint64_t seed = 0)
      : dim_(dim), res_(res), seed_(seed) {
    const auto n = static_cast<Eigen::Index>(3 * res * res);
    nn::Rng rng(detail::splitmix64(seed ^ 0x5eedULL));
    proj_.resize(static_cast<Eigen::Index>(dim), n);
    for (Eigen::Index i = 0; i < proj_.size(); ++i) proj_.data()[i] = rng.normal() / std::sqrt(static_cast<double>(n));
    bias_.resize(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < bias_.size(); ++i) bias_(i) = 0.1 * rng.normal();
  }

  std::size_t dim() const override { return dim_; }
  bool differentiable() const override { return true; }

  /// Normalized sum of per-word random vectors; articles are skipped unless
  /// nothing else is left.
  Embedding embed_text(std::string_view text) const override {
    detail::normalize_prompt(text);
    auto words = tokenize_words(text);
    std::vector<std::string> content;
    for (const auto& w : words)
      if (w != "the" && w != "a" && w != "an") content.push_back(w);
    if (!content.empty()) words = content;
    Embedding v = Embedding::Zero(static_cast<Eigen::Index>(dim_));
    for (const auto& w : words) {
      nn::Rng rng(detail::splitmix64(detail::fnv1a(w) ^ seed_));
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += rng.normal();
    }
    return v.normalized();
  }

  Embedding embed_image(const Raster& image) const override { return detail::unit(pre(image)); }

  Eigen::VectorXd image_vjp(const Raster& image, const Embedding& g) const override {
    return proj_.transpose() * detail::normalize_vjp(pre(image), g);
  }

 private:
  Eigen::VectorXd pre(const Raster& image) const {
    if (image.res != res_) throw Error(ErrorCode::ShapeError, "raster resolution does not match provider");
    return proj_ * image.data + bias_;
  }

  std::size_t dim_;
  int res_;
  std::uint64_t seed_;
  Eigen::MatrixXd proj_;
  Eigen::VectorXd bias_;
};

/// Quadratic oracle. Every prompt means "the view from `target`": the image
/// embedding is normalize([1, gain * P (image - render(target))]) where P is
/// the pseudo-inverse of the render Jacobian at the target, i.e. a linear
/// read-out of the camera offset. The objective is minimized exactly at the
/// target camera and is locally gain^2 |offset|^2 / 2 - 1 around it.
class TargetViewProvider : public EmbeddingProvider {
 public:
  TargetViewProvider(const std::vector<Blob>& content, const CameraFrame& target, double gain, int res = 32)
      : gain_(gain) {
    Eigen::MatrixXd jac;
    target_ = toy_render(content, target, res, &jac);
    readout_ = jac.completeOrthogonalDecomposition().pseudoInverse();
  }

  std::size_t dim() const override { return 11; }
  bool differentiable() const override { return true; }

  Embedding embed_text(std::string_view text) const override {
    detail::normalize_prompt(text);
    Embedding e = Embedding::Zero(11);
    e(0) = 1.0;
    return e;
  }

  Embedding embed_image(const Raster& image) const override { return pre(image).normalized(); }

  Eigen::VectorXd image_vjp(const Raster& image, const Embedding& g) const override {
    return gain_ * readout_.transpose() * detail::normalize_vjp(pre(image), g).tail(10);
  }

 private:
  Eigen::VectorXd pre(const Raster& image) const {
    if (image.res != target_.res) throw Error(ErrorCode::ShapeError, "raster resolution does not match provider");
    Eigen::VectorXd u(11);
    u(0) = 1.0;
    u.tail(10) = gain_ * readout_ * (image.data - target_.data);
    return u;
  }

  Raster target_;
  Eigen::MatrixXd readout_;  // 10 x 3 res^2
  double gain_;
};

/// Precomputed text embeddings: {"dim": E, "texts": {"prompt": [E floats]}}.
/// Prompts are matched after word normalization.
class FileProvider : public EmbeddingProvider {
 public:
  static FileProvider from_json(const json& j) {
    FileProvider p;
    try {
      p.dim_ = j.at("dim").get<std::size_t>();
      for (const auto& [k, v] : j.at("texts").items()) {
        const auto vals = v.get<std::vector<double>>();
        if (vals.size() != p.dim_) throw Error(ErrorCode::FormatError, "embedding for '" + k + "' has wrong length");
        p.texts_[detail::normalize_prompt(k)] = detail::unit(Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::FormatError, std::string("embedding file: ") + e.what());
    }
    return p;
  }

  static FileProvider load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    try {
      return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
    }
  }

  std::size_t dim() const override { return dim_; }

  Embedding embed_text(std::string_view text) const override {
    auto it = texts_.find(detail::normalize_prompt(text));
    if (it == texts_.end()) throw Error(ErrorCode::BadRequest, "no precomputed embedding for prompt '" + std::string(text) + "'");
    return it->second;
  }

  Embedding embed_image(const Raster&) const override {
    throw Error(ErrorCode::BadRequest, "file provider cannot embed rendered images");
  }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, Embedding> texts_;
};

// ---------------------------------------------------------------------------
// Scene I/O

inline json scene_to_json(const Scene& s) {
  json images = json::array();
  for (const auto& im : s.images) {
    json j{{"id", im.id}, {"camera", frame_to_json(im.camera)}};
    if (im.embedding) j["embedding"] = std::vector<double>(im.embedding->data(), im.embedding->data() + im.embedding->size());
    images.push_back(j);
  }
  json content = json::array();
  for (const auto& b : s.content)
    content.push_back({{"center", {b.center.x(), b.center.y(), b.center.z()}},
                       {"radius", b.radius},
                       {"color", {b.color.x(), b.color.y(), b.color.z()}}});
  return json{{"id", s.id},
              {"embedding_dim", s.embedding_dim},
              {"images", images},
              {"content", content},
              {"bounds",
               {{"min", {s.bounds.min.x(), s.bounds.min.y(), s.bounds.min.z()}},
                {"max", {s.bounds.max.x(), s.bounds.max.y(), s.bounds.max.z()}}}}};
}

namespace detail {
inline Vec3 vec3_from(const json& j) {
  const auto a = j.get<std::array<double, 3>>();
  return Vec3(a[0], a[1], a[2]);
}

inline Embedding checked_embedding(const std::vector<double>& v, std::size_t dim, const std::string& who) {
  if (v.size() != dim) throw Error(ErrorCode::FormatError, who + ": embedding length " + std::to_string(v.size()) + " != " + std::to_string(dim));
  Embedding e = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  if (!e.allFinite() || std::abs(e.norm() - 1.0) >= 1e-6) throw Error(ErrorCode::FormatError, who + ": embedding is not unit norm");
  return e;
}
}  // namespace detail

/// `base_dir` resolves relative "embedding_file" paths.
inline Scene scene_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  Scene s;
  try {
    s.id = j.value("id", "");
    s.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    for (const auto& ji : j.at("images")) {
      SceneImage im;
      im.id = ji.at("id").get<std::string>();
      im.camera = frame_from_json(ji.at("camera"));
      if (ji.contains("embedding")) {
        im.embedding = detail::checked_embedding(ji.at("embedding").get<std::vector<double>>(), s.embedding_dim, im.id);
      } else if (ji.contains("embedding_file")) {
        const auto path = base_dir / ji.at("embedding_file").get<std::string>();
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
        im.embedding = detail::checked_embedding(json::parse(in).get<std::vector<double>>(), s.embedding_dim, im.id);
      }
      s.images.push_back(std::move(im));
    }
    if (j.contains("content"))
      for (const auto& jb : j.at("content")) {
        Blob b{detail::vec3_from(jb.at("center")), jb.at("radius").get<double>(), detail::vec3_from(jb.at("color"))};
        if (!(b.radius > 0.0)) throw Error(ErrorCode::FormatError, "blob radius must be positive");
        s.content.push_back(b);
      }
    const auto& jb = j.at("bounds");
    s.bounds = Bounds{detail::vec3_from(jb.at("min")), detail::vec3_from(jb.at("max"))};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("scene manifest: ") + e.what());
  }
  if (s.images.empty()) throw Error(ErrorCode::EmptyScene, "scene has no images");
  return s;
}

inline Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  Scene s = scene_from_json(j, path.parent_path());
  if (s.id.empty()) s.id = path.stem().string();
  return s;
}

/// A ring of blobs with one labelled view per blob. Each view's embedding is
/// the provider's text embedding of its label, so label k uniquely selects
/// view k.
inline Scene synthetic_scene(const std::string& id, const std::vector<std::string>& labels,
                             const EmbeddingProvider& provider, std::uint64_t seed = 0) {
  Scene s;
  s.id = id;
  s.embedding_dim = provider.dim();
  s.bounds = Bounds{Vec3(-4, -1, -4), Vec3(4, 3, 4)};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.2, 0.2), unit01(0.0, 1.0);
  const std::size_t n = labels.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(n, 1));
    const Vec3 c(1.5 * std::cos(phi), 0.3 + jitter(rng), 1.5 * std::sin(phi));
    s.content.push_back(Blob{c, 0.25 + 0.1 * unit01(rng), Vec3(unit01(rng), unit01(rng), unit01(rng))});
    // Camera outside the ring looking at the blob: back axis points away from it.
    const Vec3 eye = c * 2.0 + Vec3(0.0, 0.5, 0.0);
    const Vec3 back = (eye - c).normalized();
    const Vec3 right = Vec3::UnitY().cross(back).normalized();
    s.images.push_back(SceneImage{labels[k], CameraFrame{Rot6D{right, back.cross(right)}, eye, 1.2},
                                  provider.embed_text(labels[k])});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Selection and refinement

struct Match {
  std::size_t index = 0;
  double score = 0.0;
};

inline double cosine(const Embedding& a, const Embedding& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::BadRequest, "cosine of a zero vector");
  return a.dot(b) / (na * nb);
}

/// Highest-cosine candidate; ties go to the lowest index.
inline Match best_match(const std::vector<Embedding>& candidates, const Embedding& query) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyScene, "no candidate images");
  Match best{0, cosine(candidates[0], query)};
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double c = cosine(candidates[i], query);
    if (c > best.score) best = {i, c};
  }
  return best;
}

inline constexpr int kAnchorRenderRes = 32;

inline Embedding image_embedding(const Scene& scene, const SceneImage& im, const EmbeddingProvider& provider) {
  if (im.embedding) return *im.embedding;
  return provider.embed_image(toy_render(scene.content, im.camera, kAnchorRenderRes));
}

namespace detail {
inline void check_bounds(const Scene& scene, AnchorResult& r) {
  if (!scene.bounds.contains(r.camera.trans)) r.warnings.push_back("anchor camera lies outside the scene bounds");
}
}  // namespace detail

inline AnchorResult select_initial_anchor(const Scene& scene, const EmbeddingProvider& provider,
                                          std::string_view prompt) {
  if (scene.images.empty()) throw Error(ErrorCode::EmptyScene, "scene '" + scene.id + "' has no images");
  const Embedding text = provider.embed_text(prompt);
  std::vector<Embedding> ims;
  ims.reserve(scene.images.size());
  for (const auto& im : scene.images) ims.push_back(image_embedding(scene, im, provider));
  const Match m = best_match(ims, text);
  AnchorResult r{scene.images[m.index].camera, m.score, scene.images[m.index].id, 0, {}, {}};
  detail::check_bounds(scene, r);
  return r;
}

/// Negative cosine between the rendered view's embedding and the prompt's;
/// with `grad` set, also its gradient with respect to the camera params.
inline double grounding_loss(const Scene& scene, const EmbeddingProvider& provider, const Embedding& text,
                             const CameraFrame& camera, CameraParams* grad = nullptr) {
  Eigen::MatrixXd jac;
  const Raster img = toy_render(scene.content, camera, kAnchorRenderRes, grad ? &jac : nullptr);
  const Embedding e = provider.embed_image(img);
  const double ne = e.norm(), nt = text.norm();
  const double c = e.dot(text) / (ne * nt);
  if (grad) {
    const Embedding dl_de = -(text / (ne * nt) - c * e / (ne * ne));
    *grad = jac.transpose() * provider.image_vjp(img, dl_de);
  }
  return -c;
}

/// Negative cosine of the rendered view against `prompt`.
inline double grounding_objective(const Scene& scene, const EmbeddingProvider& provider, std::string_view prompt,
                                  const CameraFrame& camera) {
  return grounding_loss(scene, provider, provider.embed_text(prompt), camera);
}

struct RefineOptions {
  double lr = 0.002;
  std::size_t max_steps = 1000;
  double tolerance = 1e-7;  // stop when an accepted step changes the loss by less
  bool optimize_focal = true;
  int max_halvings = 40;
};

/// Plain gradient descent on rot6d, translation and (optionally) focal,
/// halving the step until the loss does not increase. The rotation is
/// re-orthonormalized after every step.
inline AnchorResult refine_anchor(const Scene& scene, const EmbeddingProvider& provider, std::string_view prompt,
                                  const CameraFrame& init, const RefineOptions& opt = {}) {
  if (!provider.differentiable()) throw Error(ErrorCode::NotDifferentiable, "anchor refinement needs a differentiable provider");
  if (scene.content.empty()) throw Error(ErrorCode::EmptyScene, "scene '" + scene.id + "' has no renderable content");
  if (!(opt.lr > 0.0)) throw Error(ErrorCode::BadRequest, "refinement learning rate must be positive");
  validate(init);
  const Embedding text = provider.embed_text(prompt);

  AnchorResult r;
  r.camera = init;
  CameraParams grad;
  double loss = grounding_loss(scene, provider, text, r.camera, &grad);
  r.losses.push_back(loss);
  for (std::size_t step = 0; step < opt.max_steps; ++step) {
    if (!opt.optimize_focal) grad(9) = 0.0;
    if (!grad.allFinite()) throw Error(ErrorCode::NotDifferentiable, "non-finite anchor gradient");
    if (grad.squaredNorm() == 0.0) break;
    const CameraParams p = to_params(r.camera);
    double eta = opt.lr;
    std::optional<CameraFrame> next;
    double next_loss = loss;
    for (int h = 0; h <= opt.max_halvings; ++h, eta *= 0.5) {
      CameraFrame cand = from_params(p - eta * grad);
      if (cand.focal <= 0.0) continue;
      cand.rot = normalized(cand.rot);
      const double l = grounding_loss(scene, provider, text, cand);
      if (l <= loss) {
        next = cand;
        next_loss = l;
        break;
      }
    }
    if (!next) break;
    const double change = loss - next_loss;
    r.camera = *next;
    loss = grounding_loss(scene, provider, text, r.camera, &grad);
    r.losses.push_back(loss);
    ++r.refinement_steps;
    if (change < opt.tolerance) break;
  }
  r.score = -loss;
  detail::check_bounds(scene, r);
  return r;
}

}  // namespace chatcam
