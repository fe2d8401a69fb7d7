#pragma once

// Layers with hand-written backward passes. Forward functions are pure given
// parameters; backward functions take the forward inputs (or a cache) plus
// the upstream gradient, accumulate parameter gradients and return the input
// gradient.

#include <cmath>
#include <string>

#include "chatcam/nn/tensor.hpp"

namespace chatcam::nn {

template <typename S>
struct Linear {
  Param<S> weight;  // in x out
  Param<S> bias;    // 1 x out

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out) : weight(in, out), bias(1, out) {}

  void init(Rng& rng, double stddev) {
    fill_normal(weight.value, rng, stddev);
    bias.value.setZero();
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) {
    weight.grad.noalias() += x.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  void collect(NamedParams<S>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

/// Temporal convolution over rows. Weight is (kernel*in) x out, laid out so
/// that row (j*in + c) multiplies input channel c at tap j.
template <typename S>
struct Conv1d {
  Param<S> weight;
  Param<S> bias;
  int in = 0, out = 0, kernel = 3, stride = 1, pad = 1;

  Conv1d() = default;
  Conv1d(int in_ch, int out_ch, int k, int s, int p)
      : weight(static_cast<Eigen::Index>(k) * in_ch, out_ch), bias(1, out_ch), in(in_ch), out(out_ch),
        kernel(k), stride(s), pad(p) {}

  void init(Rng& rng) {
    fill_normal(weight.value, rng, std::sqrt(2.0 / (kernel * in)));
    bias.value.setZero();
  }

  Eigen::Index out_length(Eigen::Index t) const { return (t + 2 * pad - kernel) / stride + 1; }

  Mat<S> im2col(const Mat<S>& x) const {
    const Eigen::Index t_out = out_length(x.rows());
    Mat<S> cols = Mat<S>::Zero(t_out, static_cast<Eigen::Index>(kernel) * in);
    for (Eigen::Index t = 0; t < t_out; ++t) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index src = t * stride - pad + j;
        if (src < 0 || src >= x.rows()) continue;
        cols.block(t, static_cast<Eigen::Index>(j) * in, 1, in) = x.row(src);
      }
    }
    return cols;
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = im2col(x) * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) {
    const Mat<S> cols = im2col(x);
    weight.grad.noalias() += cols.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    const Mat<S> dcols = dy * weight.value.transpose();
    Mat<S> dx = Mat<S>::Zero(x.rows(), in);
    for (Eigen::Index t = 0; t < dcols.rows(); ++t) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index src = t * stride - pad + j;
        if (src < 0 || src >= x.rows()) continue;
        dx.row(src) += dcols.block(t, static_cast<Eigen::Index>(j) * in, 1, in);
      }
    }
    return dx;
  }

  void collect(NamedParams<S>& out_params, const std::string& prefix) {
    out_params.emplace_back(prefix + ".weight", &weight);
    out_params.emplace_back(prefix + ".bias", &bias);
  }
};

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;
  RowVec<S> inv_std;  // one per row
};

template <typename S>
struct LayerNorm {
  Param<S> gain;  // 1 x dim
  Param<S> shift;
  S eps = S(1e-5);

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index dim) : gain(1, dim), shift(1, dim) { gain.value.setOnes(); }

  Mat<S> forward(const Mat<S>& x, LayerNormCache<S>* cache = nullptr) const {
    const Eigen::Index n = x.cols();
    Mat<S> xhat(x.rows(), n);
    RowVec<S> inv(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const S mean = x.row(r).mean();
      const S var = (x.row(r).array() - mean).square().mean();
      inv(r) = S(1) / std::sqrt(var + eps);
      xhat.row(r) = (x.row(r).array() - mean) * inv(r);
    }
    Mat<S> y = xhat.array().rowwise() * gain.value.row(0).array();
    y.rowwise() += shift.value.row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv);
    }
    return y;
  }

  Mat<S> backward(const LayerNormCache<S>& c, const Mat<S>& dy) {
    gain.grad.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    shift.grad.row(0) += dy.colwise().sum();
    const Mat<S> dxhat = dy.array().rowwise() * gain.value.row(0).array();
    const S n = static_cast<S>(dy.cols());
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const S m1 = dxhat.row(r).mean();
      const S m2 = (dxhat.row(r).array() * c.xhat.row(r).array()).sum() / n;
      dx.row(r) = c.inv_std(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
    }
    return dx;
  }

  void collect(NamedParams<S>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".gain", &gain);
    out.emplace_back(prefix + ".shift", &shift);
  }
};

template <typename S>
Mat<S> relu(const Mat<S>& x) {
  return x.cwiseMax(S(0));
}

template <typename S>
Mat<S> relu_backward(const Mat<S>& x, const Mat<S>& dy) {
  return (x.array() > S(0)).select(dy, S(0));
}

// tanh-approximated GELU; smooth, which keeps finite-difference checks clean.
template <typename S>
Mat<S> gelu(const Mat<S>& x) {
  const S c = static_cast<S>(0.7978845608028654);
  return x.unaryExpr([c](S v) {
    const S u = c * (v + S(0.044715) * v * v * v);
    return S(0.5) * v * (S(1) + std::tanh(u));
  });
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  const S c = static_cast<S>(0.7978845608028654);
  const Mat<S> d = x.unaryExpr([c](S v) {
    const S u = c * (v + S(0.044715) * v * v * v);
    const S t = std::tanh(u);
    const S du = c * (S(1) + S(3) * S(0.044715) * v * v);
    return S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du;
  });
  return dy.cwiseProduct(d);
}

/// Row-wise softmax, numerically stabilized.
template <typename S>
Mat<S> softmax_rows(const Mat<S>& x) {
  Mat<S> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

/// Nearest-neighbour temporal upsampling by an integer factor and its adjoint.
template <typename S>
Mat<S> upsample_rows(const Mat<S>& x, int factor) {
  Mat<S> y(x.rows() * factor, x.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) = x.row(r / factor);
  return y;
}

template <typename S>
Mat<S> upsample_rows_backward(const Mat<S>& dy, int factor) {
  Mat<S> dx = Mat<S>::Zero(dy.rows() / factor, dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) dx.row(r / factor) += dy.row(r);
  return dx;
}

}  // namespace chatcam::nn
