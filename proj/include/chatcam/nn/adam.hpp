#pragma once

#include <cmath>
#include <vector>

#include "chatcam/nn/tensor.hpp"

namespace chatcam::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

template <typename S>
class Adam {
 public:
  Adam(NamedParams<S> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& [name, p] : params_) {
      m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& [name, p] : params_) sq += static_cast<double>(p->grad.squaredNorm());
    return std::sqrt(sq);
  }

  /// One update with learning rate `lr` (defaults to the configured rate).
  void step(double lr = -1.0) {
    if (lr < 0.0) lr = cfg_.lr;
    ++t_;
    double scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
      const double n = grad_norm();
      if (n > cfg_.clip_norm) scale = cfg_.clip_norm / n;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S step_size = static_cast<S>(lr / bc1);
    const S inv_bc2 = static_cast<S>(1.0 / bc2);
    const S eps = static_cast<S>(cfg_.eps);
    const S sc = static_cast<S>(scale);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param<S>& p = *params_[i].second;
      const auto g = (p.grad.array() * sc).eval();
      m_[i].array() = b1 * m_[i].array() + (S(1) - b1) * g;
      v_[i].array() = b2 * v_[i].array() + (S(1) - b2) * g.square();
      p.value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

  /// Clears moment estimates for the rows of parameter `index` (used when
  /// codebook entries are re-seeded).
  void reset_rows(std::size_t index, Eigen::Index row) {
    m_[index].row(row).setZero();
    v_[index].row(row).setZero();
  }

  long steps() const { return t_; }

 private:
  NamedParams<S> params_;
  AdamConfig cfg_;
  std::vector<Mat<S>> m_, v_;
  long t_ = 0;
};

}  // namespace chatcam::nn
