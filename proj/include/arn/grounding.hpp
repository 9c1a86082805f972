#pragma once

// Hierarchical attention scoring: a two-layer perceptron per modality
// produces proposal logits, softmax over proposals gives per-modality
// distributions, and the query's modality weights fuse them.

#include "arn/nn.hpp"
#include "arn/proposal_encoder.hpp"

#include <array>
#include <limits>
#include <random>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace arn {

// Stand-in logit for proposals whose context candidate list is all PAD;
// large enough that the softmax mass vanishes, finite so nothing NaNs.
inline constexpr double kAllPadContextLogit = -1e4;

template <typename T>
struct AttentionMlpParams {
  Mat<T> w1;  // hidden x (d_q + d_r)
  Vec<T> b1;
  Vec<T> w2;  // hidden
  Vec<T> b2;  // 1

  int input_dim() const { return static_cast<int>(w1.cols()); }

  void init(int hidden, int in_dim, std::mt19937_64& rng) {
    w1.resize(hidden, in_dim);
    glorot_fill(w1, rng);
    b1 = Vec<T>::Zero(hidden);
    Mat<T> w2m(hidden, 1);
    glorot_fill(w2m, rng);
    w2 = w2m.col(0);
    b2 = Vec<T>::Zero(1);
  }

  void set_zero(int hidden, int in_dim) {
    w1 = Mat<T>::Zero(hidden, in_dim);
    b1 = Vec<T>::Zero(hidden);
    w2 = Vec<T>::Zero(hidden);
    b2 = Vec<T>::Zero(1);
  }
};

template <typename T>
struct AttentionMlpCache {
  Vec<T> input;
  Vec<T> preact;
  Vec<T> hidden;
};

/// Two-layer perceptron logit for a (query feature, proposal feature) pair.
template <typename T>
T attention_score(const AttentionMlpParams<T>& p, const Vec<T>& q,
                  const Vec<T>& r, AttentionMlpCache<T>* cache = nullptr) {
  if (q.size() + r.size() != p.input_dim()) {
    throw std::invalid_argument("attention_score: input dimension mismatch");
  }
  Vec<T> in(q.size() + r.size());
  in.head(q.size()) = q;
  in.tail(r.size()) = r;
  Vec<T> preact = p.w1 * in + p.b1;
  Vec<T> hidden = relu(preact);
  const T score = p.w2.dot(hidden) + p.b2(0);
  if (cache) {
    cache->input = std::move(in);
    cache->preact = std::move(preact);
    cache->hidden = std::move(hidden);
  }
  return score;
}

// Accumulates parameter gradients and the gradients on q and r.
template <typename T>
void attention_score_backward(const AttentionMlpParams<T>& p,
                              const AttentionMlpCache<T>& cache,
                              std::type_identity_t<T> d_score,
                              AttentionMlpParams<T>& grads, Vec<T>& d_q,
                              std::type_identity_t<Vec<T>>* d_r) {
  grads.w2 += d_score * cache.hidden;
  grads.b2(0) += d_score;
  Vec<T> d_hidden = d_score * p.w2;
  Vec<T> d_preact =
      (d_hidden.array() * (cache.preact.array() > T(0)).template cast<T>())
          .matrix();
  grads.w1.noalias() += d_preact * cache.input.transpose();
  grads.b1 += d_preact;
  const Vec<T> d_in = p.w1.transpose() * d_preact;
  const Eigen::Index nq = d_q.size();
  d_q += d_in.head(nq);
  if (d_r) *d_r += d_in.tail(d_in.size() - nq);
}

template <typename T>
struct ContextChoice {
  T logit = T(0);
  int slot = -1;  // candidate row, -1 when every candidate is PAD
  AttentionMlpCache<T> cache;
};

/// Max response over the valid context candidate rows; ties keep the lowest
/// index. Gradient flows only through the chosen candidate.
template <typename T>
ContextChoice<T> context_select(const AttentionMlpParams<T>& p,
                                const Vec<T>& q_c, const Mat<T>& candidates,
                                const std::array<bool, kNeighborCount>& valid) {
  ContextChoice<T> choice;
  choice.logit = static_cast<T>(kAllPadContextLogit);
  for (int n = 0; n < kNeighborCount; ++n) {
    if (!valid[static_cast<std::size_t>(n)]) continue;
    AttentionMlpCache<T> cache;
    const Vec<T> row = candidates.row(n).transpose();
    const T s = attention_score(p, q_c, row, &cache);
    if (choice.slot == -1 || s > choice.logit) {
      choice.logit = s;
      choice.slot = n;
      choice.cache = std::move(cache);
    }
  }
  return choice;
}

/// Column-wise softmax over proposals.
template <typename T>
Mat<T> normalize_scores(const Mat<T>& raw) {
  if (raw.rows() < 1) {
    throw std::invalid_argument("normalize_scores: need at least one proposal");
  }
  Mat<T> out(raw.rows(), raw.cols());
  for (Eigen::Index m = 0; m < raw.cols(); ++m) {
    out.col(m) = softmax(Vec<T>(raw.col(m)));
  }
  return out;
}

/// Convex combination of the per-modality distributions.
template <typename T>
Vec<T> fuse(const Mat<T>& per_modality, const Vec<T>& weights) {
  if (per_modality.cols() != weights.size()) {
    throw std::invalid_argument("fuse: modality count mismatch");
  }
  return per_modality * weights;
}

/// Argmax with lowest-index tie-break.
template <typename T>
int argmax_index(const Vec<T>& scores) {
  if (scores.size() == 0) {
    throw std::invalid_argument("argmax_index: empty score vector");
  }
  int best = 0;
  for (int i = 1; i < scores.size(); ++i) {
    if (scores(i) > scores(best)) best = i;
  }
  return best;
}

template <typename T>
struct ScoreSheet {
  Mat<T> raw;           // N x n_mod logits
  Mat<T> per_modality;  // N x n_mod distributions
  Vec<T> fused;         // N
  std::vector<int> context_choice;  // chosen candidate slot per proposal
};

}  // namespace arn
