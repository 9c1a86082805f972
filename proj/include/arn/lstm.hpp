#pragma once

// Single LSTM cell with cached forward and exact backward-through-time.
// Used by both directions of the query encoder and by the reconstruction
// decoders.

#include "arn/nn.hpp"

#include <random>
#include <stdexcept>
#include <vector>

namespace arn {

// Gate packing along rows of the 4H-dim pre-activation: input, forget,
// cell candidate, output.
template <typename T>
struct LstmParams {
  Mat<T> w_input;   // 4H x n_in
  Mat<T> w_hidden;  // 4H x H
  Vec<T> bias;      // 4H

  int hidden_dim() const { return static_cast<int>(w_hidden.cols()); }
  int input_dim() const { return static_cast<int>(w_input.cols()); }

  void init(int n_in, int hidden, std::mt19937_64& rng) {
    w_input.resize(4 * hidden, n_in);
    w_hidden.resize(4 * hidden, hidden);
    glorot_fill(w_input, rng);
    glorot_fill(w_hidden, rng);
    bias = Vec<T>::Zero(4 * hidden);
    bias.segment(hidden, hidden).setOnes();  // forget gate starts open
  }

  void set_zero(int n_in, int hidden) {
    w_input = Mat<T>::Zero(4 * hidden, n_in);
    w_hidden = Mat<T>::Zero(4 * hidden, hidden);
    bias = Vec<T>::Zero(4 * hidden);
  }
};

template <typename T>
struct LstmStepCache {
  Vec<T> input;
  Vec<T> gate_i, gate_f, gate_g, gate_o;
  Vec<T> cell, tanh_cell;
  Vec<T> h_prev, c_prev;
};

template <typename T>
struct LstmTrace {
  std::vector<LstmStepCache<T>> steps;
  std::vector<Vec<T>> hidden;  // h_1..h_T
};

// Runs the cell over `inputs` from zero initial state; returns the hidden
// sequence and fills `trace` for the backward pass.
template <typename T>
std::vector<Vec<T>> lstm_forward(const LstmParams<T>& p,
                                 const std::vector<Vec<T>>& inputs,
                                 LstmTrace<T>* trace = nullptr) {
  const int hidden = p.hidden_dim();
  Vec<T> h = Vec<T>::Zero(hidden);
  Vec<T> c = Vec<T>::Zero(hidden);
  std::vector<Vec<T>> out;
  out.reserve(inputs.size());
  if (trace) {
    trace->steps.clear();
    trace->hidden.clear();
    trace->steps.reserve(inputs.size());
  }
  for (const Vec<T>& x : inputs) {
    if (x.size() != p.input_dim()) {
      throw std::invalid_argument("lstm_forward: input dimension mismatch");
    }
    Vec<T> z = p.w_input * x + p.w_hidden * h + p.bias;
    LstmStepCache<T> step;
    step.input = x;
    step.h_prev = h;
    step.c_prev = c;
    step.gate_i = z.segment(0, hidden).unaryExpr([](T v) { return sigmoid(v); });
    step.gate_f = z.segment(hidden, hidden).unaryExpr([](T v) { return sigmoid(v); });
    step.gate_g = z.segment(2 * hidden, hidden).array().tanh().matrix();
    step.gate_o = z.segment(3 * hidden, hidden).unaryExpr([](T v) { return sigmoid(v); });
    c = (step.gate_f.array() * c.array() +
         step.gate_i.array() * step.gate_g.array())
            .matrix();
    step.cell = c;
    step.tanh_cell = c.array().tanh().matrix();
    h = (step.gate_o.array() * step.tanh_cell.array()).matrix();
    out.push_back(h);
    if (trace) {
      trace->steps.push_back(std::move(step));
      trace->hidden.push_back(h);
    }
  }
  return out;
}

// Backward through time. `d_hidden[t]` is the external gradient on h_{t+1}.
// Accumulates parameter gradients into `grads` and returns the gradients on
// the inputs.
template <typename T>
std::vector<Vec<T>> lstm_backward(const LstmParams<T>& p,
                                  const LstmTrace<T>& trace,
                                  const std::vector<Vec<T>>& d_hidden,
                                  LstmParams<T>& grads) {
  const int hidden = p.hidden_dim();
  const int steps = static_cast<int>(trace.steps.size());
  if (static_cast<int>(d_hidden.size()) != steps) {
    throw std::invalid_argument("lstm_backward: gradient count mismatch");
  }
  std::vector<Vec<T>> d_inputs(static_cast<std::size_t>(steps));
  Vec<T> dh_carry = Vec<T>::Zero(hidden);
  Vec<T> dc_carry = Vec<T>::Zero(hidden);
  for (int t = steps - 1; t >= 0; --t) {
    const LstmStepCache<T>& s = trace.steps[static_cast<std::size_t>(t)];
    const Vec<T> dh = dh_carry + d_hidden[static_cast<std::size_t>(t)];
    const Vec<T> d_o = (dh.array() * s.tanh_cell.array()).matrix();
    Vec<T> dc = dc_carry +
                (dh.array() * s.gate_o.array() *
                 (T(1) - s.tanh_cell.array().square()))
                    .matrix();
    const Vec<T> d_i = (dc.array() * s.gate_g.array()).matrix();
    const Vec<T> d_f = (dc.array() * s.c_prev.array()).matrix();
    const Vec<T> d_g = (dc.array() * s.gate_i.array()).matrix();
    dc_carry = (dc.array() * s.gate_f.array()).matrix();

    Vec<T> dz(4 * hidden);
    dz.segment(0, hidden) =
        (d_i.array() * s.gate_i.array() * (T(1) - s.gate_i.array())).matrix();
    dz.segment(hidden, hidden) =
        (d_f.array() * s.gate_f.array() * (T(1) - s.gate_f.array())).matrix();
    dz.segment(2 * hidden, hidden) =
        (d_g.array() * (T(1) - s.gate_g.array().square())).matrix();
    dz.segment(3 * hidden, hidden) =
        (d_o.array() * s.gate_o.array() * (T(1) - s.gate_o.array())).matrix();

    grads.w_input.noalias() += dz * s.input.transpose();
    grads.w_hidden.noalias() += dz * s.h_prev.transpose();
    grads.bias += dz;
    d_inputs[static_cast<std::size_t>(t)] = p.w_input.transpose() * dz;
    dh_carry = p.w_hidden.transpose() * dz;
  }
  return d_inputs;
}

}  // namespace arn
