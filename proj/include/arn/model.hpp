#pragma once

// Whole-model assembly: parameter aggregate with a named-block registry,
// the per-query loss forward pass, the matching hand-written backward
// pass, and grounding inference.

#include "arn/grounding.hpp"
#include "arn/proposal_encoder.hpp"
#include "arn/query_encoder.hpp"
#include "arn/reconstruction.hpp"
#include "arn/scene.hpp"

#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace arn {

struct ModelDims {
  int vocab = 0;
  int d_e = 512;
  int d_h = 512;
  int d_s = 512;
  int att_hidden = 512;
  int dec_hidden = 512;
  int d_v = 0;     // raw visual feature dimension, from the dataset
  int n_attr = 0;  // attribute inventory size, 0 disables the branch
  bool context_enabled = true;

  int n_modalities() const { return context_enabled ? 3 : 2; }
  int context_dim() const { return d_v + 5; }

  int modality_feature_dim(int m) const {
    switch (m) {
      case kSubject: return d_s;
      case kLocation: return kLocationDim;
      default: return context_dim();
    }
  }
};

template <typename T>
struct ArnParams {
  ModelDims dims;
  QueryEncoderParams<T> encoder;
  ProposalEncoderParams<T> proposal;
  std::vector<AttentionMlpParams<T>> attention;  // per modality
  ReconstructionParams<T> recon;

  void init(const ModelDims& d, std::mt19937_64& rng) {
    dims = d;
    encoder.init(d.vocab, d.d_e, d.d_h, d.context_enabled, rng);
    proposal.init(d.d_s, d.d_v, rng);
    const int n_mod = d.n_modalities();
    attention.resize(static_cast<std::size_t>(n_mod));
    for (int m = 0; m < n_mod; ++m) {
      attention[static_cast<std::size_t>(m)].init(
          d.att_hidden, d.d_e + d.modality_feature_dim(m), rng);
    }
    recon.init(d.vocab, d.d_e, d.dec_hidden, d.d_s, d.d_v, d.n_attr,
               d.context_enabled, rng);
  }
};

template <typename T>
struct BlockRef {
  std::string name;
  T* data;
  Eigen::Index rows;
  Eigen::Index cols;

  Eigen::Index size() const { return rows * cols; }
};

/// Every trainable block, in a fixed order shared by the optimizer, the
/// checkpoint format, and the gradient checker.
template <typename T>
std::vector<BlockRef<T>> collect_blocks(ArnParams<T>& p) {
  std::vector<BlockRef<T>> out;
  auto push = [&out](const std::string& name, auto& m) {
    out.push_back({name, m.data(), m.rows(), m.cols()});
  };
  auto push_lstm = [&](const std::string& prefix, LstmParams<T>& l) {
    push(prefix + ".w_input", l.w_input);
    push(prefix + ".w_hidden", l.w_hidden);
    push(prefix + ".bias", l.bias);
  };
  auto push_affine = [&](const std::string& prefix, Affine<T>& a) {
    push(prefix + ".weight", a.weight);
    push(prefix + ".bias", a.bias);
  };
  auto push_decoder = [&](const std::string& prefix, DecoderParams<T>& d) {
    push(prefix + ".embedding", d.embedding);
    push_lstm(prefix + ".lstm", d.lstm);
    push_affine(prefix + ".output", d.output);
  };

  push("encoder.embedding", p.encoder.embedding);
  push_lstm("encoder.lstm_fwd", p.encoder.lstm_fwd);
  push_lstm("encoder.lstm_bwd", p.encoder.lstm_bwd);
  for (int m = 0; m < p.encoder.n_modalities(); ++m) {
    const std::string prefix = std::string("encoder.head_") + modality_name(m);
    push(prefix + ".weight", p.encoder.heads[static_cast<std::size_t>(m)].weight);
    push(prefix + ".bias", p.encoder.heads[static_cast<std::size_t>(m)].bias);
  }
  push_affine("encoder.weight_head", p.encoder.weight_head);
  push_affine("proposal.subject_proj", p.proposal.subject_proj);
  for (std::size_t m = 0; m < p.attention.size(); ++m) {
    const std::string prefix =
        std::string("ground.") + modality_name(static_cast<int>(m));
    push(prefix + ".w1", p.attention[m].w1);
    push(prefix + ".b1", p.attention[m].b1);
    push(prefix + ".w2", p.attention[m].w2);
    push(prefix + ".b2", p.attention[m].b2);
  }
  for (std::size_t m = 0; m < p.recon.visual_proj.size(); ++m) {
    push_affine(std::string("recon.vproj_") + modality_name(static_cast<int>(m)),
                p.recon.visual_proj[m]);
  }
  push_affine("recon.alan_seed", p.recon.alan_seed);
  push_affine("recon.lan_visual", p.recon.lan_visual);
  push_decoder("recon.alan_decoder", p.recon.alan_decoder);
  push_decoder("recon.lan_decoder", p.recon.lan_decoder);
  if (p.recon.has_attribute_head()) {
    push_affine("recon.attribute", p.recon.attribute_head);
  }
  return out;
}

template <typename T>
ArnParams<T> zeros_like(const ArnParams<T>& p) {
  ArnParams<T> z = p;
  for (auto& block : collect_blocks(z)) {
    std::fill(block.data, block.data + block.size(), T(0));
  }
  return z;
}

// ---------------------------------------------------------------------------
// Grounding forward (used by both inference and the loss).

template <typename T>
struct GroundingCache {
  std::vector<AttentionMlpCache<T>> subject;
  std::vector<AttentionMlpCache<T>> location;
  std::vector<ContextChoice<T>> context;
};

/// Scores every proposal against an encoded query: per-modality logits,
/// softmax over proposals, fused distribution.
template <typename T>
ScoreSheet<T> score_proposals(const ArnParams<T>& p,
                              const SceneEncoding<T>& enc,
                              const EncodedQuery<T>& q,
                              std::type_identity_t<GroundingCache<T>>* cache = nullptr,
                              const std::vector<int>* frozen_context = nullptr) {
  const int n = static_cast<int>(enc.features.size());
  const int n_mod = p.dims.n_modalities();
  ScoreSheet<T> sheet;
  sheet.raw.resize(n, n_mod);
  sheet.context_choice.assign(static_cast<std::size_t>(n), -1);
  if (cache) {
    cache->subject.resize(static_cast<std::size_t>(n));
    cache->location.resize(static_cast<std::size_t>(n));
    cache->context.resize(static_cast<std::size_t>(n));
  }
  for (int i = 0; i < n; ++i) {
    const auto& f = enc.features[static_cast<std::size_t>(i)];
    sheet.raw(i, kSubject) = attention_score(
        p.attention[kSubject], q.q[kSubject], f.subject,
        cache ? &cache->subject[static_cast<std::size_t>(i)] : nullptr);
    sheet.raw(i, kLocation) = attention_score(
        p.attention[kLocation], q.q[kLocation], f.location,
        cache ? &cache->location[static_cast<std::size_t>(i)] : nullptr);
    if (p.dims.context_enabled) {
      ContextChoice<T> choice;
      if (frozen_context) {
        const int slot = (*frozen_context)[static_cast<std::size_t>(i)];
        choice.slot = slot;
        if (slot >= 0) {
          const Vec<T> row = f.context_cands.row(slot).transpose();
          choice.logit = attention_score(p.attention[kContext], q.q[kContext],
                                         row, &choice.cache);
        } else {
          choice.logit = static_cast<T>(kAllPadContextLogit);
        }
      } else {
        choice = context_select(p.attention[kContext], q.q[kContext],
                                f.context_cands, f.context_valid);
      }
      sheet.raw(i, kContext) = choice.logit;
      sheet.context_choice[static_cast<std::size_t>(i)] = choice.slot;
      if (cache) cache->context[static_cast<std::size_t>(i)] = std::move(choice);
    }
  }
  sheet.per_modality = normalize_scores(sheet.raw);
  sheet.fused = fuse(sheet.per_modality, q.weights);
  return sheet;
}

/// Inference: argmax of the fused distribution. The reconstruction branch
/// is never touched here.
template <typename T>
int ground(const ArnParams<T>& p, const SceneEncoding<T>& enc,
           const std::vector<int>& token_ids, ScoreSheet<T>* sheet_out = nullptr,
           EncodedQuery<T>* query_out = nullptr) {
  const EncodedQuery<T> q = encode_query(p.encoder, token_ids);
  ScoreSheet<T> sheet = score_proposals(p, enc, q);
  const int best = argmax_index(sheet.fused);
  if (sheet_out) *sheet_out = std::move(sheet);
  if (query_out) *query_out = q;
  return best;
}

template <typename T>
int ground(const ArnParams<T>& p, const Scene& scene,
           const std::vector<int>& token_ids, ScoreSheet<T>* sheet_out = nullptr) {
  const SceneEncoding<T> enc =
      encode_proposals(scene, p.proposal, p.dims.context_enabled);
  return ground(p, enc, token_ids, sheet_out);
}

// ---------------------------------------------------------------------------
// Per-query collaborative loss: forward trace and backward pass.

template <typename T>
struct QueryLossTrace {
  QueryEncoderTrace<T> encoder;
  GroundingCache<T> grounding;
  ScoreSheet<T> scores;
  std::vector<Vec<T>> vtil;      // attended visual features per modality
  std::vector<Vec<T>> v;         // projected
  std::vector<T> modality_mse;   // L_s, L_l[, L_c]
  T avis = T(0);
  SeedCache<T> alan_seed;
  DecoderTrace<T> alan_decoder;
  T alan = T(0);
  LanguageReconstructionCache<T> lan;
  T lan_loss = T(0);
  Vec<T> attribute_logits;
  std::optional<T> att;
  LossBreakdown breakdown;
};

/// Collaborative loss for one query against an encoded scene. The
/// attribute branch runs only when lambda > 0, the query carries labels,
/// and an attribute head exists (missing head with labels is an error).
/// `frozen_context` pins the per-proposal context choices (finite
/// differences perturb around a fixed argmax).
template <typename T>
QueryLossTrace<T> query_loss_forward(const ArnParams<T>& p,
                                     const SceneEncoding<T>& enc,
                                     const std::vector<int>& token_ids,
                                     const std::vector<int>& attribute_ids,
                                     const Vec<T>& attribute_class_weights,
                                     const LossWeights& w,
                                     const std::vector<int>* frozen_context = nullptr) {
  QueryLossTrace<T> out;
  const EncodedQuery<T> q = [&] {
    encode_query(p.encoder, token_ids, &out.encoder);
    return out.encoder.out;
  }();

  out.scores = score_proposals(p, enc, q, &out.grounding, frozen_context);

  out.vtil = attend_visual(enc.features, out.scores.fused,
                           out.scores.context_choice, p.dims.context_enabled);
  const int n_mod = p.dims.n_modalities();
  out.v.resize(static_cast<std::size_t>(n_mod));
  for (int m = 0; m < n_mod; ++m) {
    out.v[static_cast<std::size_t>(m)] = project_visual(
        p.recon.visual_proj[static_cast<std::size_t>(m)], out.vtil[static_cast<std::size_t>(m)]);
  }
  out.avis = adaptive_visual_loss(out.v, q.q, q.weights, &out.modality_mse);

  out.alan = adaptive_language_loss(p.recon, q.q, token_ids, &out.alan_seed,
                                    &out.alan_decoder);
  out.lan_loss = language_reconstruction_loss(
      p.recon, enc.features, out.scores.fused, out.scores.context_choice,
      p.dims.context_enabled, token_ids, &out.lan);

  if (w.lambda > 0.0 && !attribute_ids.empty()) {
    if (!p.recon.has_attribute_head()) {
      throw std::runtime_error(
          "query_loss_forward: query carries attribute labels but no "
          "attribute vocabulary is configured");
    }
    out.attribute_logits = p.recon.attribute_head.forward(out.vtil[kSubject]);
    out.att = attribute_loss(out.attribute_logits, attribute_ids,
                             attribute_class_weights);
  }

  std::optional<double> att_d;
  if (out.att) att_d = static_cast<double>(*out.att);
  out.breakdown = collaborative_loss(static_cast<double>(out.avis),
                                     static_cast<double>(out.alan),
                                     static_cast<double>(out.lan_loss), att_d, w);
  return out;
}

/// Exact gradient of `multiplier * total` for one query, accumulated into
/// `grads` (same shapes as the parameters).
template <typename T>
void query_loss_backward(const ArnParams<T>& p, const SceneEncoding<T>& enc,
                         const QueryLossTrace<T>& trace,
                         const std::vector<int>& attribute_ids,
                         const Vec<T>& attribute_class_weights,
                         const LossWeights& w, T multiplier,
                         ArnParams<T>& grads) {
  const int n = static_cast<int>(enc.features.size());
  const int n_mod = p.dims.n_modalities();
  const EncodedQuery<T>& q = trace.encoder.out;

  std::vector<Vec<T>> d_q(static_cast<std::size_t>(n_mod));
  for (int m = 0; m < n_mod; ++m) d_q[static_cast<std::size_t>(m)] = Vec<T>::Zero(p.dims.d_e);
  Vec<T> d_weights = Vec<T>::Zero(n_mod);
  Vec<T> d_fused = Vec<T>::Zero(n);
  std::vector<Vec<T>> d_subject(static_cast<std::size_t>(n), Vec<T>::Zero(p.dims.d_s));
  std::vector<Vec<T>> d_vtil(static_cast<std::size_t>(n_mod));
  for (int m = 0; m < n_mod; ++m) {
    d_vtil[static_cast<std::size_t>(m)] = Vec<T>::Zero(p.dims.modality_feature_dim(m));
  }

  // Attribute branch.
  if (trace.att) {
    const Vec<T> d_logits = attribute_loss_backward(
        trace.attribute_logits, attribute_ids, attribute_class_weights,
        multiplier * static_cast<T>(w.lambda));
    d_vtil[kSubject] += p.recon.attribute_head.backward(
        trace.vtil[kSubject], d_logits, grads.recon.attribute_head);
  }

  // Direct language reconstruction.
  {
    const Vec<T> d_fvis = decode_query_backward(
        p.recon.lan_decoder, trace.lan.dec_trace,
        multiplier * static_cast<T>(w.gamma), grads.recon.lan_decoder);
    for (int i = 0; i < n; ++i) {
      const auto& rv = trace.lan.r_vis[static_cast<std::size_t>(i)];
      d_fused(i) += rv.seed.dot(d_fvis);
      const Vec<T> d_seed = trace.scores.fused(i) * d_fvis;
      const Vec<T> d_in =
          seed_backward(p.recon.lan_visual, rv, d_seed, grads.recon.lan_visual);
      d_subject[static_cast<std::size_t>(i)] += d_in.head(p.dims.d_s);
      // Location and context slices flow into fixed inputs.
    }
  }

  // Adaptive language reconstruction.
  {
    const Vec<T> d_seed = decode_query_backward(
        p.recon.alan_decoder, trace.alan_decoder,
        multiplier * static_cast<T>(w.beta), grads.recon.alan_decoder);
    const Vec<T> d_cat = seed_backward(p.recon.alan_seed, trace.alan_seed,
                                       d_seed, grads.recon.alan_seed);
    for (int m = 0; m < n_mod; ++m) {
      d_q[static_cast<std::size_t>(m)] += d_cat.segment(m * p.dims.d_e, p.dims.d_e);
    }
  }

  // Adaptive visual reconstruction.
  {
    const T d_avis = multiplier * static_cast<T>(w.alpha);
    for (int m = 0; m < n_mod; ++m) {
      const auto mu = static_cast<std::size_t>(m);
      d_weights(m) += d_avis * trace.modality_mse[mu];
      const T d_l = d_avis * q.weights(m);
      const Vec<T> resid = trace.v[mu] - q.q[mu];
      const Vec<T> d_v = (T(2) / static_cast<T>(resid.size())) * d_l * resid;
      d_q[mu] -= d_v;
      d_vtil[mu] += p.recon.visual_proj[mu].backward(trace.vtil[mu], d_v,
                                                     grads.recon.visual_proj[mu]);
    }
  }

  // Attended visual features back to scores and subject features.
  for (int i = 0; i < n; ++i) {
    const auto& f = enc.features[static_cast<std::size_t>(i)];
    d_fused(i) += f.subject.dot(d_vtil[kSubject]);
    d_subject[static_cast<std::size_t>(i)] += trace.scores.fused(i) * d_vtil[kSubject];
    d_fused(i) += f.location.dot(d_vtil[kLocation]);
    if (p.dims.context_enabled) {
      const int slot = trace.scores.context_choice[static_cast<std::size_t>(i)];
      if (slot >= 0) {
        d_fused(i) += f.context_cands.row(slot) * d_vtil[kContext];
      }
    }
  }

  // Fusion back to per-modality distributions and modality weights.
  Mat<T> d_raw(n, n_mod);
  for (int m = 0; m < n_mod; ++m) {
    const Vec<T> col = trace.scores.per_modality.col(m);
    d_weights(m) += col.dot(d_fused);
    const Vec<T> d_col = q.weights(m) * d_fused;
    d_raw.col(m) = softmax_backward(col, d_col);
  }

  // Attention perceptrons.
  for (int i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    attention_score_backward(p.attention[kSubject], trace.grounding.subject[iu],
                             d_raw(i, kSubject), grads.attention[kSubject],
                             d_q[kSubject], &d_subject[iu]);
    attention_score_backward(p.attention[kLocation], trace.grounding.location[iu],
                             d_raw(i, kLocation), grads.attention[kLocation],
                             d_q[kLocation], nullptr);
    if (p.dims.context_enabled) {
      const auto& choice = trace.grounding.context[iu];
      if (choice.slot >= 0) {
        attention_score_backward(p.attention[kContext], choice.cache,
                                 d_raw(i, kContext), grads.attention[kContext],
                                 d_q[kContext], nullptr);
      }
    }
  }

  // Encoders.
  encode_query_backward(p.encoder, trace.encoder, d_q, d_weights, grads.encoder);
  encode_proposals_backward(enc, d_subject, grads.proposal);
}

}  // namespace arn
