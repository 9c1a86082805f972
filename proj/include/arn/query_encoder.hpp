#pragma once

// Query side of the model: word embeddings, a bidirectional LSTM, one word
// attention head per modality that pools raw embeddings, and the modality
// weight head computed from the sequence endpoints.

#include "arn/lstm.hpp"
#include "arn/nn.hpp"
#include "arn/scene.hpp"

#include <cstdio>
#include <random>
#include <stdexcept>
#include <vector>

namespace arn {

// Word attention: a scalar logit per hidden state, softmaxed over time.
template <typename T>
struct WordAttentionHead {
  Vec<T> weight;  // 2*d_h
  Vec<T> bias;    // 1

  void init(int hidden2, std::mt19937_64& rng) {
    Mat<T> w(hidden2, 1);
    glorot_fill(w, rng);
    weight = w.col(0);
    bias = Vec<T>::Zero(1);
  }

  void set_zero(int hidden2) {
    weight = Vec<T>::Zero(hidden2);
    bias = Vec<T>::Zero(1);
  }
};

template <typename T>
struct QueryEncoderParams {
  Mat<T> embedding;  // V x d_e, rows are token embeddings
  LstmParams<T> lstm_fwd;
  LstmParams<T> lstm_bwd;
  std::vector<WordAttentionHead<T>> heads;  // one per enabled modality
  Affine<T> weight_head;                    // n_mod x 4*d_h

  int n_modalities() const { return static_cast<int>(heads.size()); }
  int embed_dim() const { return static_cast<int>(embedding.cols()); }
  int vocab_size() const { return static_cast<int>(embedding.rows()); }
  int hidden_dim() const { return lstm_fwd.hidden_dim(); }

  void init(int vocab, int d_e, int d_h, bool context_enabled,
            std::mt19937_64& rng) {
    embedding.resize(vocab, d_e);
    uniform_fill(embedding, rng, 0.08);
    lstm_fwd.init(d_e, d_h, rng);
    lstm_bwd.init(d_e, d_h, rng);
    const int n_mod = context_enabled ? 3 : 2;
    heads.resize(static_cast<std::size_t>(n_mod));
    for (auto& h : heads) h.init(2 * d_h, rng);
    weight_head.init(n_mod, 4 * d_h, rng);
  }
};

template <typename T>
struct EncodedQuery {
  std::vector<Vec<T>> q;      // q_s, q_l[, q_c], each d_e
  Vec<T> weights;             // modality weights, simplex point
  std::vector<Vec<T>> alpha;  // word attentions, one row per modality
  std::vector<Vec<T>> hiddens;  // h_t, each 2*d_h
  Vec<T> h_first, h_last;
};

template <typename T>
struct QueryEncoderTrace {
  std::vector<int> ids;
  std::vector<Vec<T>> emb;
  LstmTrace<T> fwd_trace, bwd_trace;
  Vec<T> weight_logits;
  EncodedQuery<T> out;
};

/// Rows of the embedding table for a token id sequence.
template <typename T>
Mat<T> embed_tokens(const Mat<T>& embedding, const std::vector<int>& ids) {
  Mat<T> out(static_cast<Eigen::Index>(ids.size()), embedding.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= embedding.rows()) {
      throw std::out_of_range("embed_tokens: token id out of vocabulary");
    }
    out.row(static_cast<Eigen::Index>(t)) = embedding.row(ids[t]);
  }
  return out;
}

// Bidirectional encoding: h_t = [forward_t ; backward_t].
template <typename T>
std::vector<Vec<T>> encode_sequence(const QueryEncoderParams<T>& p,
                                    const std::vector<Vec<T>>& emb,
                                    LstmTrace<T>* fwd_trace = nullptr,
                                    LstmTrace<T>* bwd_trace = nullptr) {
  if (emb.empty()) {
    throw std::invalid_argument("encode_sequence: empty token sequence");
  }
  const std::size_t len = emb.size();
  const auto fwd = lstm_forward(p.lstm_fwd, emb, fwd_trace);
  std::vector<Vec<T>> rev(emb.rbegin(), emb.rend());
  const auto bwd_rev = lstm_forward(p.lstm_bwd, rev, bwd_trace);
  const int d_h = p.hidden_dim();
  std::vector<Vec<T>> hiddens(len);
  for (std::size_t t = 0; t < len; ++t) {
    Vec<T> h(2 * d_h);
    h.head(d_h) = fwd[t];
    h.tail(d_h) = bwd_rev[len - 1 - t];
    hiddens[t] = h;
  }
  return hiddens;
}

template <typename T>
struct ModalityEmbedding {
  Vec<T> q;
  Vec<T> alpha;
};

/// Word attention per Eq.-style pooling: logits from hidden states,
/// averaged vectors are the raw embeddings.
template <typename T>
ModalityEmbedding<T> modality_embedding(const std::vector<Vec<T>>& hiddens,
                                        const std::vector<Vec<T>>& emb,
                                        const WordAttentionHead<T>& head) {
  const std::size_t len = hiddens.size();
  Vec<T> logits(static_cast<Eigen::Index>(len));
  for (std::size_t t = 0; t < len; ++t) {
    logits(static_cast<Eigen::Index>(t)) = head.weight.dot(hiddens[t]) + head.bias(0);
  }
  ModalityEmbedding<T> out;
  out.alpha = softmax(logits);
  out.q = Vec<T>::Zero(emb[0].size());
  for (std::size_t t = 0; t < len; ++t) {
    out.q += out.alpha(static_cast<Eigen::Index>(t)) * emb[t];
  }
  return out;
}

/// Simplex weights over the enabled modalities from the endpoint states.
template <typename T>
Vec<T> modality_weights(const QueryEncoderParams<T>& p, const Vec<T>& h_first,
                        const Vec<T>& h_last, Vec<T>* logits_out = nullptr) {
  Vec<T> u(h_first.size() + h_last.size());
  u.head(h_first.size()) = h_first;
  u.tail(h_last.size()) = h_last;
  const Vec<T> logits = p.weight_head.forward(u);
  if (logits_out) *logits_out = logits;
  return softmax(logits);
}

/// Full query encoding. Token sequences longer than kMaxQueryTokens are
/// truncated with a warning.
template <typename T>
EncodedQuery<T> encode_query(const QueryEncoderParams<T>& p,
                             std::vector<int> ids,
                             QueryEncoderTrace<T>* trace = nullptr) {
  if (ids.empty()) {
    throw std::invalid_argument("encode_query: empty token sequence");
  }
  if (ids.size() > static_cast<std::size_t>(kMaxQueryTokens)) {
    std::fprintf(stderr,
                 "warning: query of %zu tokens truncated to %d tokens\n",
                 ids.size(), kMaxQueryTokens);
    ids.resize(kMaxQueryTokens);
  }
  const Mat<T> emb_rows = embed_tokens(p.embedding, ids);
  std::vector<Vec<T>> emb(ids.size());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    emb[t] = emb_rows.row(static_cast<Eigen::Index>(t)).transpose();
  }

  LstmTrace<T> fwd_trace, bwd_trace;
  EncodedQuery<T> out;
  out.hiddens = encode_sequence(p, emb, trace ? &fwd_trace : nullptr,
                                trace ? &bwd_trace : nullptr);
  out.h_first = out.hiddens.front();
  out.h_last = out.hiddens.back();

  const int n_mod = p.n_modalities();
  out.q.resize(static_cast<std::size_t>(n_mod));
  out.alpha.resize(static_cast<std::size_t>(n_mod));
  for (int m = 0; m < n_mod; ++m) {
    auto me = modality_embedding(out.hiddens, emb, p.heads[static_cast<std::size_t>(m)]);
    out.q[static_cast<std::size_t>(m)] = std::move(me.q);
    out.alpha[static_cast<std::size_t>(m)] = std::move(me.alpha);
  }
  Vec<T> logits;
  out.weights = modality_weights(p, out.h_first, out.h_last, &logits);

  if (trace) {
    trace->ids = std::move(ids);
    trace->emb = std::move(emb);
    trace->fwd_trace = std::move(fwd_trace);
    trace->bwd_trace = std::move(bwd_trace);
    trace->weight_logits = std::move(logits);
    trace->out = out;
  }
  return out;
}

template <typename T>
struct QueryEncoderGrads {
  QueryEncoderParams<T> g;

  void init_like(const QueryEncoderParams<T>& p) {
    g.embedding = Mat<T>::Zero(p.embedding.rows(), p.embedding.cols());
    g.lstm_fwd.set_zero(p.lstm_fwd.input_dim(), p.lstm_fwd.hidden_dim());
    g.lstm_bwd.set_zero(p.lstm_bwd.input_dim(), p.lstm_bwd.hidden_dim());
    g.heads.resize(p.heads.size());
    for (std::size_t m = 0; m < p.heads.size(); ++m) {
      g.heads[m].set_zero(static_cast<int>(p.heads[m].weight.size()));
    }
    g.weight_head.set_zero(static_cast<int>(p.weight_head.weight.rows()),
                           static_cast<int>(p.weight_head.weight.cols()));
  }
};

// Backward through the full query encoding. `d_q[m]` is the gradient on
// q_m and `d_weights` the gradient on the modality weight vector.
template <typename T>
void encode_query_backward(const QueryEncoderParams<T>& p,
                           const QueryEncoderTrace<T>& trace,
                           const std::vector<Vec<T>>& d_q,
                           const Vec<T>& d_weights,
                           QueryEncoderParams<T>& grads) {
  const std::size_t len = trace.emb.size();
  const int d_h = p.hidden_dim();
  const int n_mod = p.n_modalities();
  const EncodedQuery<T>& out = trace.out;

  std::vector<Vec<T>> d_emb(len, Vec<T>::Zero(p.embed_dim()));
  std::vector<Vec<T>> d_hidden(len, Vec<T>::Zero(2 * d_h));

  // Word attention heads.
  for (int m = 0; m < n_mod; ++m) {
    const Vec<T>& alpha = out.alpha[static_cast<std::size_t>(m)];
    const Vec<T>& dq = d_q[static_cast<std::size_t>(m)];
    Vec<T> d_alpha(static_cast<Eigen::Index>(len));
    for (std::size_t t = 0; t < len; ++t) {
      d_alpha(static_cast<Eigen::Index>(t)) = trace.emb[t].dot(dq);
      d_emb[t] += alpha(static_cast<Eigen::Index>(t)) * dq;
    }
    const Vec<T> d_logits = softmax_backward(alpha, d_alpha);
    auto& head_grads = grads.heads[static_cast<std::size_t>(m)];
    const auto& head = p.heads[static_cast<std::size_t>(m)];
    for (std::size_t t = 0; t < len; ++t) {
      const T dm = d_logits(static_cast<Eigen::Index>(t));
      head_grads.weight += dm * out.hiddens[t];
      head_grads.bias(0) += dm;
      d_hidden[t] += dm * head.weight;
    }
  }

  // Modality weight head.
  {
    const Vec<T> d_logits = softmax_backward(out.weights, d_weights);
    Vec<T> u(4 * d_h);
    u.head(2 * d_h) = out.h_first;
    u.tail(2 * d_h) = out.h_last;
    const Vec<T> du = p.weight_head.backward(u, d_logits, grads.weight_head);
    d_hidden.front() += du.head(2 * d_h);
    d_hidden.back() += du.tail(2 * d_h);
  }

  // BiLSTM.
  std::vector<Vec<T>> d_fwd(len), d_bwd_rev(len);
  for (std::size_t t = 0; t < len; ++t) {
    d_fwd[t] = d_hidden[t].head(d_h);
    d_bwd_rev[len - 1 - t] = d_hidden[t].tail(d_h);
  }
  const auto dx_fwd = lstm_backward(p.lstm_fwd, trace.fwd_trace, d_fwd, grads.lstm_fwd);
  const auto dx_bwd_rev =
      lstm_backward(p.lstm_bwd, trace.bwd_trace, d_bwd_rev, grads.lstm_bwd);
  for (std::size_t t = 0; t < len; ++t) {
    d_emb[t] += dx_fwd[t];
    d_emb[t] += dx_bwd_rev[len - 1 - t];
  }

  // Embedding rows.
  for (std::size_t t = 0; t < len; ++t) {
    grads.embedding.row(trace.ids[t]) += d_emb[t].transpose();
  }
}

}  // namespace arn
