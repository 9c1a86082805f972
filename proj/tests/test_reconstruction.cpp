#include "arn/reconstruction.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fd_helpers.hpp"

namespace arn {
namespace {

Vec<double> rand_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Vec<double> v(n);
  for (int i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

TEST(CollaborativeLoss, GammaLambdaZeroReducesToAdp) {
  const LossWeights w{0.3, 0.7, 0.0, 0.0};
  const LossBreakdown bd = collaborative_loss(1.25, 0.5, 9.0, 4.0, w);
  EXPECT_EQ(bd.total, bd.adp);  // bit-identical
  EXPECT_DOUBLE_EQ(bd.adp, 0.3 * 1.25 + 0.7 * 0.5);
}

TEST(CollaborativeLoss, CompositionIdentities) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> val(0.0, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    const LossWeights w{val(rng), val(rng), val(rng), val(rng)};
    const double avis = val(rng), alan = val(rng), lan = val(rng);
    const bool with_att = trial % 2 == 0;
    const std::optional<double> att =
        with_att ? std::optional<double>(val(rng)) : std::nullopt;
    const LossBreakdown bd = collaborative_loss(avis, alan, lan, att, w);
    ASSERT_NEAR(bd.adp, w.alpha * avis + w.beta * alan, 1e-9);
    ASSERT_NEAR(bd.total,
                bd.adp + w.gamma * lan + w.lambda * (with_att ? *att : 0.0),
                1e-9);
  }
}

TEST(CollaborativeLoss, ReferenceHyperparameterCompositions) {
  // Context-enabled default composition: alpha 0.01, beta 1, gamma 5, lambda 1.
  {
    const LossWeights w{0.01, 1.0, 5.0, 1.0};
    const LossBreakdown bd = collaborative_loss(2.0, 3.0, 0.5, 0.25, w);
    EXPECT_NEAR(bd.adp, 0.01 * 2.0 + 3.0, 1e-12);
    EXPECT_NEAR(bd.total, bd.adp + 5.0 * 0.5 + 0.25, 1e-12);
  }
  // Context-disabled default composition: alpha 0.001, beta 1, gamma 30, lambda 1.
  {
    const LossWeights w{0.001, 1.0, 30.0, 1.0};
    const LossBreakdown bd = collaborative_loss(2.0, 3.0, 0.5, 0.25, w);
    EXPECT_NEAR(bd.adp, 0.001 * 2.0 + 3.0, 1e-12);
    EXPECT_NEAR(bd.total, bd.adp + 30.0 * 0.5 + 0.25, 1e-12);
  }
}

std::vector<ProposalFeatures<double>> make_features(int n, int d_s, int d_v,
                                                    std::mt19937_64& rng) {
  std::vector<ProposalFeatures<double>> feats(n);
  for (auto& f : feats) {
    f.subject = rand_vec(d_s, rng);
    f.location = rand_vec(kLocationDim, rng);
    f.context_cands = Mat<double>::Zero(kNeighborCount, d_v + 5);
    for (int k = 0; k < kNeighborCount; ++k) {
      f.context_cands.row(k) = rand_vec(d_v + 5, rng).transpose();
      f.context_valid[k] = true;
    }
  }
  return feats;
}

TEST(AttendVisual, OneHotFusedSelectsProposal) {
  std::mt19937_64 rng(31);
  auto feats = make_features(3, 4, 3, rng);
  Vec<double> fused(3);
  fused << 0, 1, 0;
  const std::vector<int> choice = {2, 0, 4};
  const auto vtil = attend_visual(feats, fused, choice, true);
  EXPECT_LT((vtil[kSubject] - feats[1].subject).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((vtil[kLocation] - feats[1].location).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((vtil[kContext] - feats[1].context_cands.row(0).transpose())
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
}

TEST(AttendVisual, IdenticalFeaturesAreFixedPoint) {
  std::mt19937_64 rng(32);
  auto feats = make_features(1, 4, 3, rng);
  feats.push_back(feats[0]);
  feats.push_back(feats[0]);
  Vec<double> fused(3);
  fused << 0.2, 0.5, 0.3;
  const std::vector<int> choice = {1, 1, 1};
  const auto vtil = attend_visual(feats, fused, choice, true);
  EXPECT_LT((vtil[kSubject] - feats[0].subject).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((vtil[kLocation] - feats[0].location).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AttendVisual, ThreeProposalHandComputedSum) {
  std::mt19937_64 rng(33);
  auto feats = make_features(3, 2, 2, rng);
  Vec<double> fused(3);
  fused << 0.6, 0.1, 0.3;
  const std::vector<int> choice = {0, 3, 2};
  const auto vtil = attend_visual(feats, fused, choice, true);
  for (int k = 0; k < 2; ++k) {
    const double expect = 0.6 * feats[0].subject(k) +
                          0.1 * feats[1].subject(k) +
                          0.3 * feats[2].subject(k);
    ASSERT_NEAR(vtil[kSubject](k), expect, 1e-12);
  }
  for (int k = 0; k < 7; ++k) {
    const double expect = 0.6 * feats[0].context_cands(0, k) +
                          0.1 * feats[1].context_cands(3, k) +
                          0.3 * feats[2].context_cands(2, k);
    ASSERT_NEAR(vtil[kContext](k), expect, 1e-12);
  }
}

TEST(ProjectVisual, ZeroAndIdentityAndRandom) {
  Affine<double> zero;
  zero.set_zero(3, 3);
  Vec<double> x(3);
  x << 1, 2, 3;
  EXPECT_DOUBLE_EQ(project_visual(zero, x).cwiseAbs().maxCoeff(), 0.0);

  Affine<double> ident;
  ident.set_zero(3, 3);
  ident.weight.setIdentity();
  EXPECT_TRUE(project_visual(ident, x) == x);

  std::mt19937_64 rng(41);
  Affine<double> proj;
  proj.init(2, 3, rng);
  const Vec<double> out = project_visual(proj, x);
  for (int i = 0; i < 2; ++i) {
    double expect = proj.bias(i);
    for (int k = 0; k < 3; ++k) expect += proj.weight(i, k) * x(k);
    ASSERT_NEAR(out(i), expect, 1e-12);
  }
}

TEST(AdaptiveVisualLoss, ZeroResidualAndVertexWeights) {
  std::mt19937_64 rng(51);
  std::vector<Vec<double>> q = {rand_vec(4, rng), rand_vec(4, rng),
                                rand_vec(4, rng)};
  Vec<double> w(3);
  w << 0.5, 0.25, 0.25;
  EXPECT_DOUBLE_EQ(adaptive_visual_loss(q, q, w), 0.0);

  auto v = q;
  v[0] = q[0].array() + 2.0;  // L_s = 4
  Vec<double> vertex(3);
  vertex << 1, 0, 0;
  std::vector<double> per;
  const double loss = adaptive_visual_loss(v, q, vertex, &per);
  EXPECT_NEAR(loss, per[0], 1e-15);
  EXPECT_NEAR(per[0], 4.0, 1e-12);
}

TEST(AdaptiveVisualLoss, OnesResidualUniformWeights) {
  // v_s - q_s = ones in d = 4, other residuals zero, uniform weights -> 1/3.
  std::vector<Vec<double>> q = {Vec<double>::Zero(4), Vec<double>::Zero(4),
                                Vec<double>::Zero(4)};
  std::vector<Vec<double>> v = {Vec<double>::Ones(4), Vec<double>::Zero(4),
                                Vec<double>::Zero(4)};
  Vec<double> w = Vec<double>::Constant(3, 1.0 / 3.0);
  EXPECT_NEAR(adaptive_visual_loss(v, q, w), 1.0 / 3.0, 1e-12);
}

DecoderParams<double> zero_decoder(int vocab, int d_e, int d_dec) {
  DecoderParams<double> p;
  p.embedding = Mat<double>::Zero(vocab, d_e);
  p.lstm.set_zero(d_e, d_dec);
  p.output.set_zero(vocab, d_dec);
  return p;
}

TEST(DecodeQuery, UniformHeadGivesLengthTimesLogV) {
  // Vocabulary of one real token plus the four specials: V = 5.
  const int vocab = 5;
  const auto p = zero_decoder(vocab, 3, 4);
  const Vec<double> seed = Vec<double>::Zero(3);
  for (int len = 1; len <= 4; ++len) {
    const std::vector<int> target(len, 4);
    const double loss = decode_query(p, seed, target);
    EXPECT_NEAR(loss, (len + 1) * std::log(5.0), 1e-9) << "len " << len;
  }
}

TEST(DecodeQuery, ForcedEosIsNearZeroLoss) {
  auto p = zero_decoder(5, 3, 4);
  p.output.bias(Vocabulary::kEos) = 60.0;  // logits one-hot on EOS
  const Vec<double> seed = Vec<double>::Zero(3);
  const double loss = decode_query(p, seed, {Vocabulary::kEos});
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(DecodeQuery, EmptyTargetThrows) {
  const auto p = zero_decoder(5, 3, 4);
  const Vec<double> seed = Vec<double>::Zero(3);
  EXPECT_THROW(decode_query(p, seed, {}), std::invalid_argument);
}

// Independent step-by-step recomputation of the decoder: explicit scalar
// loops for the LSTM gates, the output projection, and the chain of
// softmax cross-entropies.
double decoder_oracle(const DecoderParams<double>& p, const Vec<double>& seed,
                      const std::vector<int>& target) {
  std::vector<int> wrapped;
  wrapped.push_back(Vocabulary::kBos);
  wrapped.insert(wrapped.end(), target.begin(), target.end());
  wrapped.push_back(Vocabulary::kEos);

  const int H = p.lstm.hidden_dim();
  const int d_e = p.embed_dim();
  std::vector<double> h(H, 0.0), c(H, 0.0);
  double nll = 0.0;
  for (std::size_t step = 0; step + 1 < wrapped.size() + 1; ++step) {
    std::vector<double> x(d_e);
    if (step == 0) {
      for (int k = 0; k < d_e; ++k) x[k] = seed(k);
    } else {
      for (int k = 0; k < d_e; ++k) x[k] = p.embedding(wrapped[step - 1], k);
    }
    std::vector<double> nh(H), nc(H);
    for (int u = 0; u < H; ++u) {
      double zi = p.lstm.bias(u), zf = p.lstm.bias(H + u),
             zg = p.lstm.bias(2 * H + u), zo = p.lstm.bias(3 * H + u);
      for (int k = 0; k < d_e; ++k) {
        zi += p.lstm.w_input(u, k) * x[k];
        zf += p.lstm.w_input(H + u, k) * x[k];
        zg += p.lstm.w_input(2 * H + u, k) * x[k];
        zo += p.lstm.w_input(3 * H + u, k) * x[k];
      }
      for (int k = 0; k < H; ++k) {
        zi += p.lstm.w_hidden(u, k) * h[k];
        zf += p.lstm.w_hidden(H + u, k) * h[k];
        zg += p.lstm.w_hidden(2 * H + u, k) * h[k];
        zo += p.lstm.w_hidden(3 * H + u, k) * h[k];
      }
      const double gi = 1.0 / (1.0 + std::exp(-zi));
      const double gf = 1.0 / (1.0 + std::exp(-zf));
      const double gg = std::tanh(zg);
      const double go = 1.0 / (1.0 + std::exp(-zo));
      nc[u] = gf * c[u] + gi * gg;
      nh[u] = go * std::tanh(nc[u]);
    }
    h = nh;
    c = nc;
    if (step >= 1) {
      // scored step: predict wrapped[step]
      std::vector<double> logits(static_cast<std::size_t>(p.vocab_size()));
      for (int v = 0; v < p.vocab_size(); ++v) {
        double z = p.output.bias(v);
        for (int k = 0; k < H; ++k) z += p.output.weight(v, k) * h[k];
        logits[static_cast<std::size_t>(v)] = z;
      }
      double mx = logits[0];
      for (double z : logits) mx = std::max(mx, z);
      double sum = 0.0;
      for (double z : logits) sum += std::exp(z - mx);
      nll += mx + std::log(sum) - logits[static_cast<std::size_t>(wrapped[step])];
    }
    if (step + 1 == wrapped.size()) break;
  }
  return nll;
}

TEST(DecodeQuery, MatchesStepByStepOracle) {
  std::mt19937_64 rng(61);
  DecoderParams<double> p;
  p.init(7, 3, 4, rng);
  const Vec<double> seed = rand_vec(3, rng);
  const std::vector<int> target = {4, 6, 5};
  EXPECT_NEAR(decode_query(p, seed, target), decoder_oracle(p, seed, target),
              1e-10);
}

TEST(DecodeQuery, TeacherForcingIsPermutationSensitive) {
  std::mt19937_64 rng(62);
  DecoderParams<double> p;
  p.init(8, 3, 4, rng);
  const Vec<double> seed = rand_vec(3, rng);
  const double fwd = decoder_oracle(p, seed, {4, 5, 6});
  const double rev = decoder_oracle(p, seed, {6, 5, 4});
  EXPECT_GT(std::abs(fwd - rev), 1e-9);
  // Palindromic targets are reversal-invariant trivially.
  EXPECT_DOUBLE_EQ(decoder_oracle(p, seed, {4, 5, 4}),
                   decoder_oracle(p, seed, {4, 5, 4}));
}

TEST(DecodeQuery, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(63);
  DecoderParams<double> p;
  p.init(6, 3, 3, rng);
  Vec<double> seed = rand_vec(3, rng);
  const std::vector<int> target = {4, 5};
  auto loss = [&] { return decode_query(p, seed, target); };

  DecoderTrace<double> trace;
  decode_query(p, seed, target, &trace);
  DecoderParams<double> grads = zero_decoder(6, 3, 3);
  const Vec<double> d_seed = decode_query_backward(p, trace, 1.0, grads);

  EXPECT_LT(testing::max_rel_err(grads.embedding,
                                 testing::finite_diff(p.embedding, loss)),
            1e-4);
  EXPECT_LT(testing::max_rel_err(grads.lstm.w_input,
                                 testing::finite_diff(p.lstm.w_input, loss)),
            1e-4);
  EXPECT_LT(testing::max_rel_err(grads.lstm.w_hidden,
                                 testing::finite_diff(p.lstm.w_hidden, loss)),
            1e-4);
  EXPECT_LT(testing::max_rel_err_vec(
                grads.lstm.bias, testing::finite_diff_vec(p.lstm.bias, loss)),
            1e-4);
  EXPECT_LT(testing::max_rel_err(grads.output.weight,
                                 testing::finite_diff(p.output.weight, loss)),
            1e-4);
  EXPECT_LT(testing::max_rel_err_vec(
                grads.output.bias, testing::finite_diff_vec(p.output.bias, loss)),
            1e-4);
  EXPECT_LT(testing::max_rel_err_vec(d_seed,
                                     testing::finite_diff_vec(seed, loss)),
            1e-4);
}

TEST(AdaptiveLanguageLoss, ZeroInputsLeaveOnlySeedBias) {
  std::mt19937_64 rng(71);
  ReconstructionParams<double> p;
  p.init(6, 3, 3, 4, 2, 0, true, rng);
  p.alan_seed.weight.setZero();
  p.alan_seed.bias << 0.5, -1.0, 2.0;

  std::vector<Vec<double>> q(3, Vec<double>::Zero(3));
  SeedCache<double> cache;
  adaptive_language_loss(p, q, {4, 5}, &cache);
  Vec<double> expect(3);
  expect << 0.5, 0.0, 2.0;  // ReLU clips the negative bias entry
  EXPECT_TRUE(cache.seed == expect);
}

TEST(AdaptiveLanguageLoss, ComposesSeedAndDecoder) {
  std::mt19937_64 rng(72);
  ReconstructionParams<double> p;
  p.init(7, 3, 4, 4, 2, 0, true, rng);
  std::vector<Vec<double>> q = {rand_vec(3, rng), rand_vec(3, rng),
                                rand_vec(3, rng)};
  SeedCache<double> cache;
  const double loss = adaptive_language_loss(p, q, {4, 6}, &cache);
  EXPECT_NEAR(loss, decode_query(p.alan_decoder, cache.seed, {4, 6}), 1e-12);
  EXPECT_NEAR(loss, decoder_oracle(p.alan_decoder, cache.seed, {4, 6}), 1e-10);
}

TEST(LanguageReconstructionLoss, OneHotFusedSelectsProposalSeed) {
  std::mt19937_64 rng(81);
  ReconstructionParams<double> p;
  p.init(7, 3, 4, 4, 2, 0, true, rng);
  auto feats = make_features(3, 4, 2, rng);
  Vec<double> fused(3);
  fused << 0, 0, 1;
  const std::vector<int> choice = {0, 1, 2};
  LanguageReconstructionCache<double> cache;
  const double loss = language_reconstruction_loss(p, feats, fused, choice,
                                                   true, {4, 5}, &cache);
  EXPECT_LT((cache.f_vis - cache.r_vis[2].seed).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(loss, decode_query(p.lan_decoder, cache.f_vis, {4, 5}), 1e-12);
}

TEST(LanguageReconstructionLoss, ZeroWeightsMakeLossProposalIndependent) {
  std::mt19937_64 rng(82);
  ReconstructionParams<double> p;
  p.init(7, 3, 4, 4, 2, 0, true, rng);
  p.lan_visual.weight.setZero();
  p.lan_visual.bias = rand_vec(3, rng);

  auto feats_a = make_features(3, 4, 2, rng);
  auto feats_b = make_features(3, 4, 2, rng);
  Vec<double> fused(3);
  fused << 0.2, 0.3, 0.5;
  const std::vector<int> choice = {0, 0, 0};
  const double la =
      language_reconstruction_loss(p, feats_a, fused, choice, true, {4});
  const double lb =
      language_reconstruction_loss(p, feats_b, fused, choice, true, {4});
  EXPECT_NEAR(la, lb, 1e-12);
}

TEST(LanguageReconstructionLoss, MatchesHandAssembledAggregate) {
  std::mt19937_64 rng(83);
  ReconstructionParams<double> p;
  p.init(7, 3, 4, 4, 2, 0, true, rng);
  auto feats = make_features(2, 4, 2, rng);
  Vec<double> fused(2);
  fused << 0.4, 0.6;
  const std::vector<int> choice = {1, 3};
  LanguageReconstructionCache<double> cache;
  const double loss = language_reconstruction_loss(p, feats, fused, choice,
                                                   true, {5, 6}, &cache);

  Vec<double> f_vis = Vec<double>::Zero(3);
  for (int i = 0; i < 2; ++i) {
    Vec<double> in(4 + kLocationDim + 7);
    in << feats[i].subject, feats[i].location,
        feats[i].context_cands.row(choice[i]).transpose();
    const Vec<double> r = relu(Vec<double>(p.lan_visual.forward(in)));
    f_vis += fused(i) * r;
  }
  ASSERT_LT((cache.f_vis - f_vis).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(loss, decoder_oracle(p.lan_decoder, f_vis, {5, 6}), 1e-10);
}

TEST(AttributeLoss, SaturatedCorrectPredictionIsNearZero) {
  Vec<double> logits(3);
  logits << 40.0, -40.0, 40.0;
  Vec<double> weights = Vec<double>::Ones(3);
  EXPECT_NEAR(attribute_loss(logits, {0, 2}, weights), 0.0, 1e-12);
}

TEST(AttributeLoss, UniformPredictionIsLogTwo) {
  Vec<double> logits = Vec<double>::Zero(4);
  Vec<double> weights = Vec<double>::Ones(4);
  EXPECT_NEAR(attribute_loss(logits, {1}, weights), std::log(2.0), 1e-12);
}

TEST(AttributeLoss, TwoClassWeightedHandComputation) {
  // Frequencies {a: 2, b: 1} -> weights (0.5, 1.0). Label is {a}.
  Vec<double> logits(2);
  logits << 0.3, -0.7;
  Vec<double> weights(2);
  weights << 0.5, 1.0;
  const double pa = 1.0 / (1.0 + std::exp(-0.3));
  const double pb = 1.0 / (1.0 + std::exp(0.7));
  const double expect = (0.5 * (-std::log(pa)) + 1.0 * (-std::log(1 - pb))) / 2.0;
  EXPECT_NEAR(attribute_loss(logits, {0}, weights), expect, 1e-12);
}

TEST(AttributeLoss, EmptyInventoryThrows) {
  Vec<double> logits(0);
  Vec<double> weights(0);
  EXPECT_THROW(attribute_loss(logits, {}, weights), std::invalid_argument);
}

TEST(AttributeLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(91);
  Vec<double> logits = rand_vec(4, rng, 2.0);
  Vec<double> weights(4);
  weights << 0.5, 1.0, 0.25, 2.0;
  const std::vector<int> labels = {0, 3};
  auto loss = [&] { return attribute_loss(logits, labels, weights); };
  const Vec<double> analytic =
      attribute_loss_backward(logits, labels, weights, 1.0);
  const Vec<double> numeric = testing::finite_diff_vec(logits, loss);
  EXPECT_LT(testing::max_rel_err_vec(analytic, numeric), 1e-6);
}

}  // namespace
}  // namespace arn
