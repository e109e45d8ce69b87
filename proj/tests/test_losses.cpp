#include <gtest/gtest.h>

#include <cmath>

#include "dml/gradcheck.hpp"
#include "dml/losses.hpp"
#include "reference_losses.hpp"

using namespace dml;

namespace {

EmbeddingBatch batch_of(Mat z, std::vector<int> labels) {
  EmbeddingBatch b;
  b.embeddings = std::move(z);
  b.labels = std::move(labels);
  return b;
}

Mat random_mat(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

struct Instance {
  EmbeddingBatch batch;
  ProxyBank bank1;
  ProxyBank bank2;
};

Instance random_instance(Rng& rng) {
  Instance in;
  std::vector<int> labels{0, 0, 1, 1, 2, 2};
  rng.shuffle(labels);
  in.batch = batch_of(random_mat(rng, 6, 8), labels);
  in.bank1 = init_proxies(3, 1, 8, rng);
  in.bank2 = init_proxies(3, 2, 8, rng);
  return in;
}

}  // namespace

TEST(CceLoss, KnownValues) {
  const Mat onehot{{1, 0}, {0, 1}};
  EXPECT_EQ(cce_loss(onehot, std::vector<int>{0, 1}).value, 0.0);
  const Mat uniform{{0.5, 0.5}};
  EXPECT_NEAR(cce_loss(uniform, std::vector<int>{1}).value, std::log(2.0), 1e-15);
  EXPECT_THROW(cce_loss(uniform, std::vector<int>{2}), LabelError);
}

TEST(CceLoss, ClampsConfidentMistakes) {
  const Mat wrong{{1, 0}};
  const double v = cce_loss(wrong, std::vector<int>{1}).value;
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
}

TEST(TripletLoss, KnownValues) {
  const std::vector<TripletSpec> t{{0, 1, 2, 1.0}};
  EXPECT_EQ(triplet_loss(batch_of(Mat{{0, 0}, {1, 0}, {0, 2}}, {0, 0, 1}), t).value, 0.0);
  EXPECT_DOUBLE_EQ(triplet_loss(batch_of(Mat{{0, 0}, {0, 1}, {1, 0}}, {0, 0, 1}), t).value, 1.0);
  EXPECT_EQ(triplet_loss(batch_of(Mat{{0, 0}, {0, 0}, {3, 0}}, {0, 0, 1}), t).value, 0.0);
}

TEST(TripletLoss, RejectsInvalidTriplets) {
  const auto b = batch_of(Mat{{0, 0}, {0, 1}, {1, 0}}, {0, 0, 1});
  EXPECT_THROW(triplet_loss(b, std::vector<TripletSpec>{{0, 2, 1, 1.0}}), PairingError);
  EXPECT_THROW(triplet_loss(b, std::vector<TripletSpec>{{0, 0, 2, 1.0}}), PairingError);
  EXPECT_THROW(triplet_loss(b, std::vector<TripletSpec>{{0, 1, 5, 1.0}}), PairingError);
  EXPECT_THROW(triplet_loss(b, std::vector<TripletSpec>{}), PairingError);
}

TEST(TripletLoss, TranslationInvariant) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    Instance in = random_instance(rng);
    Rng mining(trial);
    const auto ts = mine_triplets(in.batch.labels, 1.0, 512, mining);
    EmbeddingBatch shifted = in.batch;
    const Vec shift = random_mat(rng, 1, 8).row(0).transpose() * 3.0;
    shifted.embeddings.rowwise() += shift.transpose();
    EXPECT_NEAR(triplet_loss(in.batch, ts).value, triplet_loss(shifted, ts).value, 1e-9);
  }
}

TEST(NPairsLoss, KnownValues) {
  const std::vector<PairSpec> p{{0, 1}};
  EXPECT_EQ(npairs_loss(batch_of(Mat{{1, 2}, {3, -1}}, {0, 0}), p).value, 0.0);
  // anchor . positive == anchor . negative
  EXPECT_NEAR(npairs_loss(batch_of(Mat{{1, 0}, {0.5, 1}, {0.5, -2}}, {0, 0, 1}), p).value, std::log(2.0),
              1e-15);
}

TEST(NPairsLoss, RejectsBadPairs) {
  const auto b = batch_of(Mat{{1, 0}, {0, 1}, {1, 1}}, {0, 0, 1});
  EXPECT_THROW(npairs_loss(b, std::vector<PairSpec>{{0, 2}}), PairingError);
  EXPECT_THROW(npairs_loss(b, std::vector<PairSpec>{{0, 1}, {0, 1}}), PairingError);
  EXPECT_THROW(npairs_loss(b, std::vector<PairSpec>{}), PairingError);
}

TEST(SupConLoss, KnownValuesAndErrors) {
  EXPECT_NEAR(supcon_loss(batch_of(Mat{{1, 0}, {0.6, 0.8}}, {1, 1}), 0.1).value, 0.0, 1e-12);
  EXPECT_THROW(supcon_loss(batch_of(Mat{{1, 0}, {0, 1}}, {0, 1}), 0.1), DegenerateError);
  EXPECT_THROW(supcon_loss(batch_of(Mat{{1, 0}, {0, 1}}, {0, 0}), 0.0), ConfigError);
}

TEST(SupConLoss, SingletonAnchorsContributeNothing) {
  const Mat z{{1, 0}, {0.6, 0.8}, {-1, 0.2}};
  const auto with = supcon_loss(batch_of(z, {0, 0, 1}), 0.5);
  EXPECT_NEAR(with.value, reference::supcon(batch_of(z, {0, 0, 1}), 0.5), 1e-12);
}

TEST(ProxyNcaLoss, KnownValues) {
  const auto b = batch_of(Mat{{0, 0}}, {0});
  const ProxyBank bank{Mat{{0, 0}, {3, 4}}, 2, 1};
  EXPECT_NEAR(proxynca_loss(b, bank, 1.0, false).value, -5.0, 1e-9);
  EXPECT_NEAR(proxynca_loss(b, bank, 2.0, false).value, -10.0, 1e-9);
  const ProxyBank one{Mat{{0, 1}}, 1, 1};
  EXPECT_THROW(proxynca_loss(b, one, 1.0, false), DegenerateError);
}

TEST(SoftTripleLoss, KnownValues) {
  const auto b = batch_of(Mat{{1, 0}}, {0});
  const ProxyBank w{Mat{{1, 0}, {0, 1}}, 2, 1};
  const double expected = std::log1p(std::exp(-1.0));
  EXPECT_NEAR(softtriple_loss(b, w, {1.0, 0.1, 0.0}).value, expected, 1e-12);
  EXPECT_NEAR(expected, 0.313262, 1e-6);

  // equal similarities everywhere, no margin: ln C
  const ProxyBank flat{Mat{{0, 1}, {0, 1}, {0, 1}}, 3, 1};
  EXPECT_NEAR(softtriple_loss(b, flat, {5.0, 0.1, 0.0}).value, std::log(3.0), 1e-12);
  EXPECT_THROW(softtriple_loss(b, w, {1.0, 0.0, 0.0}), ConfigError);
}

TEST(ProxyAnchorLoss, KnownValues) {
  const auto b = batch_of(Mat{{0.6, 0.8}}, {0});
  const ProxyBank single{Mat{{0.6, 0.8}}, 1, 1};
  const double v = proxyanchor_loss(b, single, 32, 0.1).value;
  EXPECT_NEAR(v, std::log1p(std::exp(-28.8)), 1e-25);
  EXPECT_LT(v, 1e-10);
  EXPECT_THROW(proxyanchor_loss(batch_of(Mat{{1, 0}}, {3}), single, 32, 0.1), LabelError);
}

TEST(CombinedLoss, EndpointsAndArithmetic) {
  LossOutput cce{0.8, Mat{{1, 2}}, std::nullopt};
  LossOutput dml{0.2, Mat{{-3, 5}}, Mat{{7, 7}}};
  EXPECT_DOUBLE_EQ(combined_loss(cce, dml, 0.5).value, 0.5);
  const auto one = combined_loss(cce, dml, 1.0);
  EXPECT_EQ(one.value, cce.value);
  EXPECT_EQ(one.grad_embeddings, cce.grad_embeddings);
  const auto zero = combined_loss(cce, dml, 0.0);
  EXPECT_EQ(zero.value, dml.value);
  EXPECT_EQ(zero.grad_embeddings, dml.grad_embeddings);
  EXPECT_EQ(*zero.grad_proxies, *dml.grad_proxies);
  EXPECT_THROW(combined_loss(cce, dml, 1.5), ConfigError);
}

TEST(CombinedLoss, AffineInBeta) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    LossOutput cce{rng.uniform() * 3, Mat::Zero(1, 1), std::nullopt};
    LossOutput dml{rng.normal() * 3, Mat::Zero(1, 1), std::nullopt};
    const double a = combined_loss(cce, dml, 0.1).value;
    const double b = combined_loss(cce, dml, 0.4).value;
    const double c = combined_loss(cce, dml, 0.7).value;
    EXPECT_NEAR(c - b, b - a, 1e-12);
  }
}

// Every batch loss agrees with a direct transcription of its formula.
TEST(BatchLosses, MatchReferenceFormulas) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Instance in = random_instance(rng);
    Rng mining(trial);
    const auto ts = mine_triplets(in.batch.labels, 1.5, 512, mining);
    const auto ps = mine_pairs(in.batch.labels, 512, mining);
    const auto& b = in.batch;
    EXPECT_NEAR(triplet_loss(b, ts).value, reference::triplet(b, ts), 1e-10);
    EXPECT_NEAR(npairs_loss(b, ps).value, reference::npairs(b, ps), 1e-10);
    EXPECT_NEAR(supcon_loss(b, 0.5).value, reference::supcon(b, 0.5), 1e-9);
    for (bool norm : {true, false}) {
      EXPECT_NEAR(proxynca_loss(b, in.bank1, 2.0, norm).value, reference::proxynca(b, in.bank1, 2.0, norm), 1e-10);
      EXPECT_NEAR(softtriple_loss(b, in.bank2, {3.3, 0.1, 0.2}, norm).value,
                  reference::softtriple(b, in.bank2, {3.3, 0.1, 0.2}, norm), 1e-9);
    }
    EXPECT_NEAR(proxyanchor_loss(b, in.bank1, 16, 0.1).value, reference::proxyanchor(b, in.bank1, 16, 0.1), 1e-9);
    const Mat probs = softmax_rows(random_mat(rng, 6, 3));
    EXPECT_NEAR(cce_loss(probs, b.labels).value, reference::cce(probs, b.labels), 1e-12);
  }
}

TEST(BatchLosses, NonNegative) {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    Instance in = random_instance(rng);
    Rng mining(trial);
    const auto& b = in.batch;
    EXPECT_GE(triplet_loss(b, mine_triplets(b.labels, 1.0, 512, mining)).value, -1e-12);
    EXPECT_GE(npairs_loss(b, mine_pairs(b.labels, 512, mining)).value, -1e-12);
    EXPECT_GE(supcon_loss(b, 0.1).value, -1e-12);
    EXPECT_GE(softtriple_loss(b, in.bank2, {4, 0.1, 0.1}).value, -1e-12);
    EXPECT_GE(proxyanchor_loss(b, in.bank1, 32, 0.1).value, -1e-12);
    EXPECT_GE(cce_loss(softmax_rows(random_mat(rng, 6, 3)), b.labels).value, -1e-12);
  }
}

TEST(BatchLosses, GradientShapesAndFiniteness) {
  Rng rng(8);
  Instance in = random_instance(rng);
  const auto out = proxyanchor_loss(in.batch, in.bank1, 128, 0.1);
  EXPECT_EQ(out.grad_embeddings.rows(), 6);
  EXPECT_EQ(out.grad_embeddings.cols(), 8);
  ASSERT_TRUE(out.grad_proxies.has_value());
  EXPECT_EQ(out.grad_proxies->rows(), 3);
  EXPECT_TRUE(all_finite(*out.grad_proxies));
  EXPECT_FALSE(supcon_loss(in.batch, 0.1).grad_proxies.has_value());
}

TEST(Mining, TripletsAndPairsAreValidAndCapped) {
  Rng rng(2);
  const std::vector<int> labels{0, 1, 0, 1, 2, 0, 2, 1};
  const auto ts = mine_triplets(labels, 2.0, 10, rng);
  EXPECT_EQ(ts.size(), 10u);
  for (const auto& t : ts) {
    EXPECT_EQ(labels[t.anchor], labels[t.positive]);
    EXPECT_NE(labels[t.anchor], labels[t.negative]);
    EXPECT_NE(t.anchor, t.positive);
    EXPECT_EQ(t.margin, 2.0);
  }
  const auto ps = mine_pairs(labels, 512, rng);
  std::set<int> anchors;
  for (const auto& p : ps) {
    EXPECT_EQ(labels[p.anchor], labels[p.positive]);
    EXPECT_TRUE(anchors.insert(p.anchor).second);
  }
  Rng empty(1);
  EXPECT_TRUE(mine_triplets(std::vector<int>{0, 1}, 1.0, 512, empty).empty());
}

TEST(DmlLoss, ZeroWhenBatchHasNoStructure) {
  Rng rng(1);
  const auto b = batch_of(Mat{{1, 0}, {0, 1}}, {0, 1});
  for (LossKind kind : {LossKind::Triplet, LossKind::NPairs, LossKind::SupCon}) {
    LossConfig c;
    c.kind = kind;
    const auto out = dml_loss(c, b, nullptr, rng);
    EXPECT_EQ(out.value, 0.0);
    EXPECT_TRUE(out.grad_embeddings.isZero());
  }
}

TEST(LossConfig, ParsingAndValidation) {
  for (LossKind k : {LossKind::CCE, LossKind::Triplet, LossKind::NPairs, LossKind::SupCon, LossKind::ProxyNCA,
                     LossKind::SoftTriple, LossKind::ProxyAnchor}) {
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_loss_kind("arcface"), ConfigError);
  LossConfig c;
  c.kind = LossKind::SupCon;
  c.temperature = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.kind = LossKind::SoftTriple;
  c.temperature = 0.1;
  c.st_proxies = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.st_proxies = 5;
  EXPECT_EQ(c.proxies_per_class(), 5);
  c.beta = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Gradcheck, ReducedSuitePasses) {
  GradcheckOptions o;
  o.instances = 10;
  o.model_instances = 3;
  const auto report = run_gradcheck(o);
  for (const auto& row : report.rows) EXPECT_TRUE(row.ok()) << row.loss << " / " << row.wrt;
  EXPECT_TRUE(report.ok());
}
