#pragma once

// One-layer recurrent decoder used by both reconstruction branches.
// Teacher forcing: the seed vector is the recurrent input at step 0 from a
// zero initial state, followed by the embeddings of [BOS, target...]; the
// scored labels are [target..., EOS], so the seed step itself is unscored.

#include "arn/lstm.hpp"
#include "arn/nn.hpp"
#include "arn/vocab.hpp"

#include <random>
#include <stdexcept>
#include <vector>

namespace arn {

template <typename T>
struct DecoderParams {
  Mat<T> embedding;  // V x d_e, decoder-private table
  LstmParams<T> lstm;
  Affine<T> output;  // V x d_dec

  int vocab_size() const { return static_cast<int>(embedding.rows()); }
  int embed_dim() const { return static_cast<int>(embedding.cols()); }

  void init(int vocab, int d_e, int d_dec, std::mt19937_64& rng) {
    embedding.resize(vocab, d_e);
    uniform_fill(embedding, rng, 0.08);
    lstm.init(d_e, d_dec, rng);
    output.init(vocab, d_dec, rng);
  }
};

template <typename T>
struct DecoderTrace {
  std::vector<int> wrapped;  // BOS, target..., EOS
  std::vector<Vec<T>> inputs;
  LstmTrace<T> lstm_trace;
  std::vector<Vec<T>> probs;  // softmax at each scored step
};

/// Teacher-forced negative log-likelihood of `target` (token ids without
/// BOS/EOS) given the seed vector; summed over the scored steps.
template <typename T>
T decode_query(const DecoderParams<T>& p, const Vec<T>& seed,
               const std::vector<int>& target,
               DecoderTrace<T>* trace = nullptr) {
  if (target.empty()) {
    throw std::invalid_argument("decode_query: empty target sequence");
  }
  if (seed.size() != p.embed_dim()) {
    throw std::invalid_argument("decode_query: seed dimension mismatch");
  }
  std::vector<int> wrapped;
  wrapped.reserve(target.size() + 2);
  wrapped.push_back(Vocabulary::kBos);
  wrapped.insert(wrapped.end(), target.begin(), target.end());
  wrapped.push_back(Vocabulary::kEos);

  std::vector<Vec<T>> inputs;
  inputs.reserve(wrapped.size());
  inputs.push_back(seed);
  for (std::size_t k = 0; k + 1 < wrapped.size(); ++k) {
    if (wrapped[k] < 0 || wrapped[k] >= p.vocab_size()) {
      throw std::out_of_range("decode_query: token id out of vocabulary");
    }
    inputs.push_back(p.embedding.row(wrapped[k]).transpose());
  }

  LstmTrace<T> lstm_trace;
  const auto hidden = lstm_forward(p.lstm, inputs, &lstm_trace);

  T nll = T(0);
  std::vector<Vec<T>> probs;
  probs.reserve(wrapped.size() - 1);
  for (std::size_t k = 1; k < wrapped.size(); ++k) {
    const Vec<T> logits = p.output.forward(hidden[k]);
    const int label = wrapped[k];
    nll += log_sum_exp(logits) - logits(label);
    probs.push_back(softmax(logits));
  }
  if (trace) {
    trace->wrapped = std::move(wrapped);
    trace->inputs = std::move(inputs);
    trace->lstm_trace = std::move(lstm_trace);
    trace->probs = std::move(probs);
  }
  return nll;
}

/// Accumulates parameter gradients scaled by `d_nll`; returns the gradient
/// on the seed vector.
template <typename T>
Vec<T> decode_query_backward(const DecoderParams<T>& p,
                             const DecoderTrace<T>& trace, T d_nll,
                             DecoderParams<T>& grads) {
  const std::size_t steps = trace.inputs.size();
  std::vector<Vec<T>> d_hidden(steps, Vec<T>::Zero(p.lstm.hidden_dim()));
  for (std::size_t k = 1; k < steps; ++k) {
    Vec<T> d_logits = trace.probs[k - 1];
    d_logits(trace.wrapped[k]) -= T(1);
    d_logits *= d_nll;
    d_hidden[k] += p.output.backward(trace.lstm_trace.hidden[k], d_logits,
                                     grads.output);
  }
  const auto d_inputs =
      lstm_backward(p.lstm, trace.lstm_trace, d_hidden, grads.lstm);
  for (std::size_t k = 1; k < steps; ++k) {
    grads.embedding.row(trace.wrapped[k - 1]) += d_inputs[k].transpose();
  }
  return d_inputs[0];
}

}  // namespace arn
