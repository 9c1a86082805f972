#pragma once

// Per-proposal feature assembly: a trainable projection of the precomputed
// visual feature (subject), the 30-dim location encoding, and context
// candidate rows from the 5 nearest any-category neighbors.

#include "arn/geometry.hpp"
#include "arn/nn.hpp"
#include "arn/scene.hpp"

#include <array>
#include <random>
#include <stdexcept>
#include <vector>

namespace arn {

inline constexpr int kLocationDim = 30;

template <typename T>
struct ProposalEncoderParams {
  Affine<T> subject_proj;  // d_s x d_v

  int subject_dim() const { return static_cast<int>(subject_proj.weight.rows()); }
  int raw_dim() const { return static_cast<int>(subject_proj.weight.cols()); }

  void init(int d_s, int d_v, std::mt19937_64& rng) {
    subject_proj.init(d_s, d_v, rng);
  }
};

template <typename T>
struct ProposalFeatures {
  Vec<T> subject;        // d_s, trainable projection of subject_raw
  Vec<T> location;       // 30
  Mat<T> context_cands;  // 5 x (d_v + 5); PAD rows exactly zero
  std::array<bool, kNeighborCount> context_valid{};
  std::array<int, kNeighborCount> context_neighbor{};  // pool indices, -1 PAD

  int context_dim() const { return static_cast<int>(context_cands.cols()); }
  bool any_context() const {
    for (bool v : context_valid) {
      if (v) return true;
    }
    return false;
  }
};

template <typename T>
struct SceneEncoding {
  std::vector<ProposalFeatures<T>> features;
  std::vector<Vec<T>> subject_raw;  // cast inputs, kept for the backward pass
};

template <typename T>
SceneEncoding<T> encode_proposals(const Scene& scene,
                                  const ProposalEncoderParams<T>& p,
                                  bool context_enabled) {
  scene.validate();
  const int d_v = p.raw_dim();
  const int ctx_dim = d_v + 5;
  SceneEncoding<T> enc;
  enc.features.resize(scene.proposals.size());
  enc.subject_raw.resize(scene.proposals.size());

  for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
    const Proposal& prop = scene.proposals[i];
    if (static_cast<int>(prop.subject_raw.size()) != d_v) {
      throw std::invalid_argument(
          "encode_proposals: proposal " + std::to_string(prop.id) +
          " feature dimension " + std::to_string(prop.subject_raw.size()) +
          " does not match expected " + std::to_string(d_v));
    }
    Vec<T> raw(d_v);
    for (int k = 0; k < d_v; ++k) raw(k) = static_cast<T>(prop.subject_raw[static_cast<std::size_t>(k)]);
    enc.subject_raw[i] = raw;

    ProposalFeatures<T>& f = enc.features[i];
    f.subject = p.subject_proj.forward(raw);

    const auto loc = location_feature(prop, scene.proposals, scene.width,
                                      scene.height).flatten();
    f.location.resize(kLocationDim);
    for (int k = 0; k < kLocationDim; ++k) f.location(k) = static_cast<T>(loc[static_cast<std::size_t>(k)]);

    f.context_cands = Mat<T>::Zero(kNeighborCount, ctx_dim);
    f.context_neighbor.fill(kPadNeighbor);
    if (context_enabled) {
      const auto nbrs =
          select_neighbors(prop, scene.proposals, /*same_category_only=*/false);
      for (int n = 0; n < kNeighborCount; ++n) {
        const int j = nbrs[static_cast<std::size_t>(n)];
        f.context_neighbor[static_cast<std::size_t>(n)] = j;
        if (j == kPadNeighbor) continue;
        f.context_valid[static_cast<std::size_t>(n)] = true;
        const Proposal& nbr = scene.proposals[static_cast<std::size_t>(j)];
        for (int k = 0; k < d_v; ++k) {
          f.context_cands(n, k) = static_cast<T>(nbr.subject_raw[static_cast<std::size_t>(k)]);
        }
        const auto off = relative_offset(prop.box, nbr.box);
        for (int k = 0; k < 5; ++k) {
          f.context_cands(n, d_v + k) = static_cast<T>(off[static_cast<std::size_t>(k)]);
        }
      }
    }
  }
  return enc;
}

// Only the subject projection is trainable; location and context rows are
// functions of the raw inputs.
template <typename T>
void encode_proposals_backward(const SceneEncoding<T>& enc,
                               const std::vector<Vec<T>>& d_subject,
                               ProposalEncoderParams<T>& grads) {
  for (std::size_t i = 0; i < enc.features.size(); ++i) {
    grads.subject_proj.weight.noalias() +=
        d_subject[i] * enc.subject_raw[i].transpose();
    grads.subject_proj.bias += d_subject[i];
  }
}

}  // namespace arn
