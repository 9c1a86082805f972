#include "arn/proposal_encoder.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "fd_helpers.hpp"

namespace arn {
namespace {

Proposal make_proposal(int id, Box box, int category,
                       std::vector<float> raw) {
  Proposal p;
  p.id = id;
  p.box = box;
  p.category = category;
  p.subject_raw = std::move(raw);
  return p;
}

Scene one_proposal_scene() {
  Scene s;
  s.image_id = "img0";
  s.width = 100;
  s.height = 100;
  s.proposals.push_back(make_proposal(0, Box{10, 10, 40, 40}, 1, {1, 2, 3}));
  return s;
}

ProposalEncoderParams<double> identity_params(int d) {
  ProposalEncoderParams<double> p;
  p.subject_proj.set_zero(d, d);
  p.subject_proj.weight.setIdentity();
  return p;
}

TEST(EncodeProposals, SingleProposalHasNoContextAndZeroRelatives) {
  const Scene s = one_proposal_scene();
  const auto p = identity_params(3);
  const auto enc = encode_proposals(s, p, true);
  ASSERT_EQ(enc.features.size(), 1u);
  const auto& f = enc.features[0];
  EXPECT_FALSE(f.any_context());
  EXPECT_DOUBLE_EQ(f.context_cands.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(f.location.size(), kLocationDim);
  EXPECT_DOUBLE_EQ(f.location.tail(25).cwiseAbs().maxCoeff(), 0.0);
}

TEST(EncodeProposals, IdentityProjectionDuplicateBoxes) {
  Scene s;
  s.image_id = "img1";
  s.width = 100;
  s.height = 100;
  s.proposals.push_back(make_proposal(0, Box{10, 10, 40, 40}, 1, {1, 2, 3}));
  s.proposals.push_back(make_proposal(1, Box{10, 10, 40, 40}, 1, {1, 2, 3}));
  const auto p = identity_params(3);
  const auto enc = encode_proposals(s, p, true);
  // Identical inputs produce identical subject and location features.
  EXPECT_TRUE(enc.features[0].subject == enc.features[1].subject);
  EXPECT_TRUE(enc.features[0].location == enc.features[1].location);
  Vec<double> expect(3);
  expect << 1, 2, 3;
  EXPECT_TRUE(enc.features[0].subject == expect);
}

TEST(EncodeProposals, FourProposalSceneMatchesStraightLineRecomputation) {
  Scene s;
  s.image_id = "img2";
  s.width = 200;
  s.height = 100;
  s.proposals.push_back(make_proposal(0, Box{0, 0, 40, 40}, 1, {1, 0, 2}));
  s.proposals.push_back(make_proposal(1, Box{50, 0, 90, 40}, 1, {0, 1, 0}));
  s.proposals.push_back(make_proposal(2, Box{120, 30, 160, 70}, 2, {2, 2, 2}));
  s.proposals.push_back(make_proposal(3, Box{10, 60, 50, 90}, 1, {3, 1, 4}));

  std::mt19937_64 rng(77);
  ProposalEncoderParams<double> p;
  p.init(4, 3, rng);
  const auto enc = encode_proposals(s, p, true);
  ASSERT_EQ(enc.features.size(), 4u);

  for (std::size_t i = 0; i < 4; ++i) {
    // Subject: affine map of the raw feature.
    Vec<double> raw(3);
    for (int k = 0; k < 3; ++k) raw(k) = s.proposals[i].subject_raw[k];
    const Vec<double> expect_subject =
        p.subject_proj.weight * raw + p.subject_proj.bias;
    ASSERT_LT((enc.features[i].subject - expect_subject).cwiseAbs().maxCoeff(),
              1e-12);

    // Location: absolute then same-category neighbor offsets.
    const auto flat =
        location_feature(s.proposals[i], s.proposals, s.width, s.height)
            .flatten();
    for (int k = 0; k < kLocationDim; ++k) {
      ASSERT_DOUBLE_EQ(enc.features[i].location(k), flat[k]);
    }

    // Context rows: nearest any-category neighbors, feature then offset.
    const auto nbrs = select_neighbors(s.proposals[i], s.proposals, false);
    for (int n = 0; n < kNeighborCount; ++n) {
      if (nbrs[n] == kPadNeighbor) {
        ASSERT_FALSE(enc.features[i].context_valid[n]);
        ASSERT_DOUBLE_EQ(
            enc.features[i].context_cands.row(n).cwiseAbs().maxCoeff(), 0.0);
        continue;
      }
      ASSERT_TRUE(enc.features[i].context_valid[n]);
      const auto& nbr = s.proposals[nbrs[n]];
      for (int k = 0; k < 3; ++k) {
        ASSERT_DOUBLE_EQ(enc.features[i].context_cands(n, k),
                         nbr.subject_raw[k]);
      }
      const auto off = relative_offset(s.proposals[i].box, nbr.box);
      for (int k = 0; k < 5; ++k) {
        ASSERT_DOUBLE_EQ(enc.features[i].context_cands(n, 3 + k), off[k]);
      }
    }
  }
}

TEST(EncodeProposals, PermutationEquivariantWithDistinctDistances) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(0.0, 200.0);
  Scene s;
  s.image_id = "img3";
  s.width = 260;
  s.height = 260;
  for (int i = 0; i < 6; ++i) {
    const double x = pos(rng), y = pos(rng);
    s.proposals.push_back(make_proposal(
        i, Box{x, y, x + 20 + i, y + 25 + 2 * i}, i % 2,
        {static_cast<float>(i), static_cast<float>(i * 2), 1.0f}));
  }
  ProposalEncoderParams<double> p;
  p.init(4, 3, rng);
  const auto base = encode_proposals(s, p, true);

  Scene shuffled = s;
  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.proposals[i] = s.proposals[perm[i]];
  }
  const auto enc = encode_proposals(shuffled, p, true);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    ASSERT_TRUE(enc.features[i].subject == base.features[perm[i]].subject);
    ASSERT_TRUE(enc.features[i].location == base.features[perm[i]].location);
    ASSERT_TRUE(enc.features[i].context_cands ==
                base.features[perm[i]].context_cands);
  }
}

TEST(EncodeProposals, ErrorsOnEmptySceneAndDimensionMismatch) {
  Scene empty;
  empty.image_id = "bad";
  empty.width = 10;
  empty.height = 10;
  const auto p = identity_params(3);
  EXPECT_THROW(encode_proposals(empty, p, true), std::invalid_argument);

  Scene s = one_proposal_scene();
  s.proposals[0].subject_raw = {1, 2};  // wrong dimension
  EXPECT_THROW(encode_proposals(s, p, true), std::invalid_argument);
}

TEST(EncodeProposals, ContextDisabledLeavesCandidatesEmpty) {
  Scene s = one_proposal_scene();
  s.proposals.push_back(make_proposal(1, Box{60, 60, 90, 90}, 1, {4, 5, 6}));
  const auto p = identity_params(3);
  const auto enc = encode_proposals(s, p, false);
  for (const auto& f : enc.features) {
    EXPECT_FALSE(f.any_context());
  }
}

TEST(EncodeProposals, SubjectProjectionGradientMatchesFiniteDifferences) {
  Scene s = one_proposal_scene();
  s.proposals.push_back(make_proposal(1, Box{50, 50, 80, 80}, 1, {-1, 4, 0.5}));
  std::mt19937_64 rng(9);
  ProposalEncoderParams<double> p;
  p.init(4, 3, rng);

  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<Vec<double>> probes(2, Vec<double>(4));
  for (auto& v : probes) {
    for (int k = 0; k < 4; ++k) v(k) = dist(rng);
  }
  auto loss = [&] {
    const auto enc = encode_proposals(s, p, true);
    return enc.features[0].subject.dot(probes[0]) +
           enc.features[1].subject.dot(probes[1]);
  };

  const auto enc = encode_proposals(s, p, true);
  ProposalEncoderParams<double> grads;
  grads.subject_proj.set_zero(4, 3);
  encode_proposals_backward(enc, probes, grads);

  EXPECT_LT(testing::max_rel_err(
                grads.subject_proj.weight,
                testing::finite_diff(p.subject_proj.weight, loss)),
            1e-6);
  Vec<double> bias_fd = testing::finite_diff_vec(p.subject_proj.bias, loss);
  EXPECT_LT(testing::max_rel_err_vec(grads.subject_proj.bias, bias_fd), 1e-6);
}

}  // namespace
}  // namespace arn
