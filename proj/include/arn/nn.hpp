#pragma once

// Small dense-math primitives shared by the encoders, grounding and
// reconstruction code. Everything is templated on the scalar type: float
// for training and checkpoints, double for gradient checking.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

namespace arn {

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
Vec<T> softmax(const Vec<T>& logits) {
  if (logits.size() == 0) {
    throw std::invalid_argument("softmax: empty logit vector");
  }
  const T m = logits.maxCoeff();
  Vec<T> e = (logits.array() - m).exp();
  return e / e.sum();
}

// Given y = softmax(z) and dL/dy, returns dL/dz.
template <typename T>
Vec<T> softmax_backward(const Vec<T>& y, const Vec<T>& dy) {
  const T dot = y.dot(dy);
  return (y.array() * (dy.array() - dot)).matrix();
}

template <typename T>
T log_sum_exp(const Vec<T>& z) {
  const T m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

template <typename T>
Vec<T> relu(const Vec<T>& x) {
  return x.cwiseMax(T(0));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Affine map y = W x + b with accumulate-into-grads backward.
template <typename T>
struct Affine {
  Mat<T> weight;
  Vec<T> bias;

  void init(int out_dim, int in_dim, std::mt19937_64& rng);

  Vec<T> forward(const Vec<T>& x) const { return weight * x + bias; }

  // Accumulates parameter gradients; returns dL/dx.
  Vec<T> backward(const Vec<T>& x, const Vec<T>& dy, Affine<T>& grads) const {
    grads.weight.noalias() += dy * x.transpose();
    grads.bias += dy;
    return weight.transpose() * dy;
  }

  void set_zero(int out_dim, int in_dim) {
    weight = Mat<T>::Zero(out_dim, in_dim);
    bias = Vec<T>::Zero(out_dim);
  }
};

// Glorot-style uniform fill, deterministic per rng state.
template <typename T>
void glorot_fill(Mat<T>& m, std::mt19937_64& rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      m(i, j) = static_cast<T>(dist(rng));
    }
  }
}

template <typename T>
void uniform_fill(Mat<T>& m, std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      m(i, j) = static_cast<T>(dist(rng));
    }
  }
}

template <typename T>
void Affine<T>::init(int out_dim, int in_dim, std::mt19937_64& rng) {
  weight.resize(out_dim, in_dim);
  glorot_fill(weight, rng);
  bias = Vec<T>::Zero(out_dim);
}

}  // namespace arn
