#pragma once

// Collaborative training objective: adaptive visual reconstruction (score-
// weighted proposal features projected back onto the query's modality
// embeddings), adaptive and direct language reconstruction through
// decoders, weighted attribute classification, and their composition.

#include "arn/decoder.hpp"
#include "arn/grounding.hpp"
#include "arn/nn.hpp"
#include "arn/proposal_encoder.hpp"
#include "arn/scene.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace arn {

struct LossWeights {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double lambda = 0.0;
};

struct LossBreakdown {
  double avis = 0.0;
  double alan = 0.0;
  double adp = 0.0;
  double lan = 0.0;
  std::optional<double> att;
  double total = 0.0;
};

/// Exact linear composition: adp = alpha*avis + beta*alan,
/// total = adp + gamma*lan + lambda*att (a missing att contributes 0).
inline LossBreakdown collaborative_loss(double avis, double alan, double lan,
                                        std::optional<double> att,
                                        const LossWeights& w) {
  LossBreakdown out;
  out.avis = avis;
  out.alan = alan;
  out.lan = lan;
  out.att = att;
  out.adp = w.alpha * avis + w.beta * alan;
  out.total = out.adp + w.gamma * lan + w.lambda * att.value_or(0.0);
  return out;
}

template <typename T>
struct ReconstructionParams {
  std::vector<Affine<T>> visual_proj;  // per modality, d_e x dim(r_x)
  Affine<T> alan_seed;                 // d_e x n_mod*d_e, then ReLU
  Affine<T> lan_visual;                // d_e x concat proposal feature dim
  DecoderParams<T> alan_decoder;
  DecoderParams<T> lan_decoder;
  Affine<T> attribute_head;  // n_attr x d_s; empty when no attribute table

  int n_modalities() const { return static_cast<int>(visual_proj.size()); }
  bool has_attribute_head() const { return attribute_head.weight.rows() > 0; }

  void init(int vocab, int d_e, int d_dec, int d_s, int d_v, int n_attr,
            bool context_enabled, std::mt19937_64& rng) {
    const int n_mod = context_enabled ? 3 : 2;
    const int dims[3] = {d_s, kLocationDim, d_v + 5};
    visual_proj.resize(static_cast<std::size_t>(n_mod));
    int concat = 0;
    for (int m = 0; m < n_mod; ++m) {
      visual_proj[static_cast<std::size_t>(m)].init(d_e, dims[m], rng);
      concat += dims[m];
    }
    alan_seed.init(d_e, n_mod * d_e, rng);
    lan_visual.init(d_e, concat, rng);
    alan_decoder.init(vocab, d_e, d_dec, rng);
    lan_decoder.init(vocab, d_e, d_dec, rng);
    if (n_attr > 0) {
      attribute_head.init(n_attr, d_s, rng);
    } else {
      attribute_head.set_zero(0, d_s);
    }
  }
};

// Score-weighted sums of the per-proposal modality features. The context
// slot of each proposal is its selected candidate row (zero when all PAD).
template <typename T>
std::vector<Vec<T>> attend_visual(const std::vector<ProposalFeatures<T>>& feats,
                                  const Vec<T>& fused,
                                  const std::vector<int>& context_choice,
                                  bool context_enabled) {
  const std::size_t n = feats.size();
  if (fused.size() != static_cast<Eigen::Index>(n)) {
    throw std::invalid_argument("attend_visual: score count mismatch");
  }
  const int n_mod = context_enabled ? 3 : 2;
  std::vector<Vec<T>> vtil(static_cast<std::size_t>(n_mod));
  vtil[kSubject] = Vec<T>::Zero(feats[0].subject.size());
  vtil[kLocation] = Vec<T>::Zero(kLocationDim);
  if (context_enabled) {
    vtil[kContext] = Vec<T>::Zero(feats[0].context_dim());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T s = fused(static_cast<Eigen::Index>(i));
    vtil[kSubject] += s * feats[i].subject;
    vtil[kLocation] += s * feats[i].location;
    if (context_enabled && context_choice[i] >= 0) {
      vtil[kContext] += s * feats[i].context_cands.row(context_choice[i]).transpose();
    }
  }
  return vtil;
}

/// FC mapping of an attended visual feature into the query feature space.
template <typename T>
Vec<T> project_visual(const Affine<T>& proj, const Vec<T>& vtil) {
  return proj.forward(vtil);
}

/// Coordinate-mean squared error.
template <typename T>
T mse(const Vec<T>& a, const Vec<T>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("mse: dimension mismatch");
  }
  return (a - b).squaredNorm() / static_cast<T>(a.size());
}

/// Modality-weighted sum of per-modality reconstruction MSEs.
template <typename T>
T adaptive_visual_loss(const std::vector<Vec<T>>& v,
                       const std::vector<Vec<T>>& q, const Vec<T>& weights,
                       std::vector<T>* per_modality = nullptr) {
  T loss = T(0);
  if (per_modality) per_modality->resize(v.size());
  for (std::size_t m = 0; m < v.size(); ++m) {
    const T l = mse(v[m], q[m]);
    if (per_modality) (*per_modality)[m] = l;
    loss += weights(static_cast<Eigen::Index>(m)) * l;
  }
  return loss;
}

template <typename T>
struct SeedCache {
  Vec<T> input;   // concatenated source vector
  Vec<T> preact;  // affine output before ReLU
  Vec<T> seed;    // ReLU(preact)
};

// ReLU(W [x...] + b) seed used by both reconstruction branches.
template <typename T>
SeedCache<T> seed_forward(const Affine<T>& layer,
                          const std::vector<const Vec<T>*>& parts) {
  Eigen::Index total = 0;
  for (const auto* part : parts) total += part->size();
  SeedCache<T> cache;
  cache.input.resize(total);
  Eigen::Index at = 0;
  for (const auto* part : parts) {
    cache.input.segment(at, part->size()) = *part;
    at += part->size();
  }
  cache.preact = layer.forward(cache.input);
  cache.seed = relu(cache.preact);
  return cache;
}

// Returns the gradient on the concatenated input.
template <typename T>
Vec<T> seed_backward(const Affine<T>& layer, const SeedCache<T>& cache,
                     const Vec<T>& d_seed, Affine<T>& grads) {
  const Vec<T> d_preact =
      (d_seed.array() * (cache.preact.array() > T(0)).template cast<T>())
          .matrix();
  return layer.backward(cache.input, d_preact, grads);
}

/// Reconstruct the query from its own modality embeddings.
template <typename T>
T adaptive_language_loss(const ReconstructionParams<T>& p,
                         const std::vector<Vec<T>>& q,
                         const std::vector<int>& target,
                         SeedCache<T>* seed_cache = nullptr,
                         DecoderTrace<T>* dec_trace = nullptr) {
  std::vector<const Vec<T>*> parts;
  for (const auto& qm : q) parts.push_back(&qm);
  SeedCache<T> cache = seed_forward(p.alan_seed, parts);
  const T loss = decode_query(p.alan_decoder, cache.seed, target, dec_trace);
  if (seed_cache) *seed_cache = std::move(cache);
  return loss;
}

template <typename T>
struct LanguageReconstructionCache {
  std::vector<SeedCache<T>> r_vis;  // per proposal
  Vec<T> f_vis;
  DecoderTrace<T> dec_trace;
};

/// Reconstruct the query from score-weighted proposal features.
template <typename T>
T language_reconstruction_loss(const ReconstructionParams<T>& p,
                               const std::vector<ProposalFeatures<T>>& feats,
                               const Vec<T>& fused,
                               const std::vector<int>& context_choice,
                               bool context_enabled,
                               const std::vector<int>& target,
                               LanguageReconstructionCache<T>* cache = nullptr) {
  const std::size_t n = feats.size();
  LanguageReconstructionCache<T> local;
  local.r_vis.resize(n);
  Vec<T> f_vis = Vec<T>::Zero(p.lan_visual.weight.rows());
  for (std::size_t i = 0; i < n; ++i) {
    Vec<T> ctx_row;
    std::vector<const Vec<T>*> parts = {&feats[i].subject, &feats[i].location};
    if (context_enabled) {
      ctx_row = context_choice[i] >= 0
                    ? Vec<T>(feats[i].context_cands.row(context_choice[i]).transpose())
                    : Vec<T>(Vec<T>::Zero(feats[i].context_dim()));
      parts.push_back(&ctx_row);
    }
    local.r_vis[i] = seed_forward(p.lan_visual, parts);
    f_vis += fused(static_cast<Eigen::Index>(i)) * local.r_vis[i].seed;
  }
  local.f_vis = f_vis;
  const T loss = decode_query(p.lan_decoder, f_vis, target,
                              cache ? &local.dec_trace : nullptr);
  if (cache) *cache = std::move(local);
  return loss;
}

/// Frequency-weighted binary cross-entropy averaged over attribute
/// classes. `labels` is multi-hot over the attribute inventory.
template <typename T>
T attribute_loss(const Vec<T>& logits, const std::vector<int>& label_ids,
                 const Vec<T>& class_weights) {
  const Eigen::Index n_classes = logits.size();
  if (n_classes == 0) {
    throw std::invalid_argument("attribute_loss: no attribute classes configured");
  }
  if (class_weights.size() != n_classes) {
    throw std::invalid_argument("attribute_loss: weight count mismatch");
  }
  Vec<T> y = Vec<T>::Zero(n_classes);
  for (int id : label_ids) {
    if (id < 0 || id >= n_classes) {
      throw std::out_of_range("attribute_loss: label id out of range");
    }
    y(id) = T(1);
  }
  T loss = T(0);
  for (Eigen::Index j = 0; j < n_classes; ++j) {
    const T z = logits(j);
    // Stable BCE-with-logits: max(z,0) - z*y + log(1 + exp(-|z|)).
    const T l = std::max(z, T(0)) - z * y(j) + std::log1p(std::exp(-std::abs(z)));
    loss += class_weights(j) * l;
  }
  return loss / static_cast<T>(n_classes);
}

// d/dz of attribute_loss: weight_j * (sigmoid(z_j) - y_j) / n_classes.
template <typename T>
Vec<T> attribute_loss_backward(const Vec<T>& logits,
                               const std::vector<int>& label_ids,
                               const Vec<T>& class_weights, T d_loss) {
  Vec<T> y = Vec<T>::Zero(logits.size());
  for (int id : label_ids) y(id) = T(1);
  Vec<T> d(logits.size());
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    d(j) = d_loss * class_weights(j) * (sigmoid(logits(j)) - y(j)) /
           static_cast<T>(logits.size());
  }
  return d;
}

}  // namespace arn
