#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "ngramlab/corpus.hpp"
#include "ngramlab/gen.hpp"

using namespace ngramlab;

namespace {

template <class LM>
std::vector<std::vector<double>> all_conditionals(const LM& lm) {
  std::vector<std::vector<double>> out;
  TabularLM shape(lm.alphabet(), lm.order());
  std::vector<double> buf(lm.alphabet().with_eos());
  shape.for_each_history([&](std::span<const Symbol> w) {
    lm.fill_next(w, buf);
    out.push_back(buf);
  });
  return out;
}

Eigen::MatrixXd as_matrix(const std::vector<double>& flat, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = flat[i * cols + j];
  return m;
}

}  // namespace

TEST(GenerateGeneral, EosIsHardCoded) {
  GeneralLMSpec spec;
  spec.n = 2;
  spec.alphabet_size = 8;
  spec.seed = 7;
  auto lm = generate_general(spec);
  const auto rows = all_conditionals(*lm);
  EXPECT_EQ(rows.size(), 9u);
  for (const auto& r : rows) {
    EXPECT_EQ(r[8], 1.0 / 40.0);
    EXPECT_EQ(r[8], 0.025);
    EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(GenerateGeneral, LargeConcentrationIsNearUniform) {
  GeneralLMSpec spec;
  spec.n = 3;
  spec.alphabet_size = 8;
  spec.alpha = 1e6;
  spec.seed = 3;
  auto lm = generate_general(spec);
  for (const auto& r : all_conditionals(*lm)) {
    for (std::size_t y = 0; y < 8; ++y) EXPECT_NEAR(r[y] / (1.0 - r[8]), 1.0 / 8.0, 1e-2);
  }
}

TEST(GenerateGeneral, DeterministicPerSeed) {
  GeneralLMSpec spec;
  spec.n = 3;
  spec.alphabet_size = 5;
  spec.seed = 11;
  const auto a = all_conditionals(*generate_general(spec));
  const auto b = all_conditionals(*generate_general(spec));
  EXPECT_EQ(a, b);
  spec.seed = 12;
  EXPECT_NE(a, all_conditionals(*generate_general(spec)));
}

TEST(GenerateGeneral, SpecErrors) {
  GeneralLMSpec spec;
  spec.expected_length = 1.0;
  EXPECT_THROW(generate_general(spec), SpecError);
  spec.expected_length = 40;
  spec.alpha = 0.0;
  EXPECT_THROW(generate_general(spec), SpecError);
  spec.alpha = 0.1;
  spec.n = 6;
  spec.alphabet_size = 64;
  EXPECT_THROW(generate_general(spec), ResourceError);
}

TEST(GenerateRepresentation, DenseShapeAndRank) {
  for (std::size_t rank : {1u, 2u, 8u, 16u}) {
    RepLMSpec spec;
    spec.n = 4;
    spec.alphabet_size = 16;
    spec.kind = RepresentationKind::dense;
    spec.embed_dim = 16;
    spec.rank = rank;
    spec.seed = 100 + rank;
    auto lm = generate_representation(spec);
    EXPECT_EQ(lm->representation_dim(), 48u);
    const auto e = as_matrix(lm->output_matrix(), 16, 48);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
    const auto& s = svd.singularValues();
    EXPECT_GT(s(static_cast<Eigen::Index>(rank) - 1), 1e-8 * s(0));
    if (rank < 16) {
      EXPECT_LT(s(static_cast<Eigen::Index>(rank)), 1e-8 * s(0));
    }
  }
}

TEST(GenerateRepresentation, SparseRepresentationIsOneHot) {
  RepLMSpec spec;
  spec.n = 4;
  spec.alphabet_size = 64;
  spec.kind = RepresentationKind::sparse;
  spec.seed = 5;
  auto lm = generate_representation(spec);
  EXPECT_EQ(lm->representation_dim(), 195u);
  for (const std::vector<Symbol>& w : {std::vector<Symbol>{64, 64, 64}, {64, 3, 63}, {0, 1, 2}}) {
    const auto h = lm->representation(w);
    ASSERT_EQ(h.size(), 195u);
    int ones = 0;
    for (double x : h) {
      EXPECT_TRUE(x == 0.0 || x == 1.0);
      ones += x == 1.0;
    }
    EXPECT_EQ(ones, 3);
  }
}

TEST(GenerateRepresentation, RankAboveBoundIsSpecError) {
  RepLMSpec spec;
  spec.n = 2;
  spec.alphabet_size = 64;
  spec.embed_dim = 16;
  spec.rank = 17;
  EXPECT_THROW(generate_representation(spec), SpecError);
  spec.rank = 0;
  EXPECT_THROW(generate_representation(spec), SpecError);
}

TEST(GenerateRepresentation, ConditionalsNormalizeWithExactEos) {
  for (auto kind : {RepresentationKind::sparse, RepresentationKind::dense}) {
    RepLMSpec spec;
    spec.n = 3;
    spec.alphabet_size = 6;
    spec.kind = kind;
    spec.embed_dim = 4;
    spec.rank = 3;
    spec.seed = 9;
    auto lm = generate_representation(spec);
    for (const auto& r : all_conditionals(*lm)) {
      EXPECT_EQ(r[6], 0.025);
      EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-9);
    }
  }
}

// At full rank the product E1·E2 has entry variance R, so its logits should
// match a single Gaussian matrix with N(0, R) entries in the first two
// moments.
TEST(GenerateRepresentation, FullRankLogitMomentsMatchGaussian) {
  const std::size_t sigma = 8, dprime = 4, rank = 8, d = 8;
  const int samples = 10000;
  double m1 = 0, m2 = 0, o1 = 0, o2 = 0;
  Rng oracle(424242);
  for (int i = 0; i < samples; ++i) {
    RepLMSpec spec;
    spec.n = 3;
    spec.alphabet_size = sigma;
    spec.embed_dim = dprime;
    spec.rank = rank;
    spec.seed = static_cast<std::uint64_t>(i);
    auto lm = generate_representation(spec);
    const auto h = lm->representation(std::vector<Symbol>{8, 8});
    const auto& e = lm->output_matrix();
    double logit = 0;
    for (std::size_t j = 0; j < d; ++j) logit += e[j] * h[j];
    m1 += logit;
    m2 += logit * logit;

    // The all-BOS history repeats one embedding in both position blocks.
    std::vector<double> emb(dprime);
    for (auto& x : emb) x = oracle.normal();
    double ref = 0;
    for (std::size_t j = 0; j < d; ++j) ref += std::sqrt(static_cast<double>(rank)) * oracle.normal() * emb[j % dprime];
    o1 += ref;
    o2 += ref * ref;
  }
  m1 /= samples;
  m2 /= samples;
  o1 /= samples;
  o2 /= samples;
  // Both second moments are R·D = 64 in expectation.
  EXPECT_NEAR(m2 / o2, 1.0, 0.05);
  EXPECT_NEAR(m2, 64.0, 0.05 * 64.0);
  EXPECT_NEAR(m1 - o1, 0.0, 0.05 * std::sqrt(o2));
}

TEST(GenerateRepresentation, FileRoundTripDeterminism) {
  RepLMSpec spec;
  spec.n = 3;
  spec.alphabet_size = 5;
  spec.rank = 2;
  spec.embed_dim = 3;
  spec.seed = 1;
  const auto a = all_conditionals(*generate_representation(spec));
  const auto b = all_conditionals(*generate_representation(spec));
  EXPECT_EQ(a, b);
}

TEST(Generate, MeanLengthIsExpectedMinusOne) {
  GeneralLMSpec gspec;
  gspec.n = 2;
  gspec.alphabet_size = 8;
  gspec.seed = 21;
  auto general = generate_general(gspec);
  RepLMSpec rspec;
  rspec.n = 4;
  rspec.alphabet_size = 16;
  rspec.rank = 8;
  rspec.seed = 22;
  auto dense = generate_representation(rspec);
  for (const NGramLM* lm : {static_cast<const NGramLM*>(general.get()), static_cast<const NGramLM*>(dense.get())}) {
    Rng rng(5);
    double sum = 0, sq = 0;
    const int m = 100000;
    for (int i = 0; i < m; ++i) {
      const double len = static_cast<double>(sample_string(*lm, rng).size());
      sum += len;
      sq += len * len;
    }
    const double mean = sum / m;
    const double se = std::sqrt((sq / m - mean * mean) / m);
    EXPECT_LT(std::abs(mean - 39.0), 3 * se) << lm->family();
  }
}

TEST(Dirichlet, ConcentrationMonotonicity) {
  Rng rng(8);
  auto mean_max = [&](double alpha) {
    double s = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto d = rng.dirichlet(8, alpha);
      s += *std::max_element(d.begin(), d.end());
    }
    return s / 1000;
  };
  EXPECT_GT(mean_max(0.1), mean_max(10.0));
}

TEST(Dirichlet, EntryMeanIsUniform) {
  Rng rng(9);
  std::vector<double> acc(4, 0.0);
  const int m = 20000;
  for (int i = 0; i < m; ++i) {
    const auto d = rng.dirichlet(4, 0.1);
    for (int k = 0; k < 4; ++k) acc[k] += d[k];
  }
  // Var of one entry of Dirichlet(0.1·1_4) is (1/4)(3/4)/(0.4+1).
  const double se = std::sqrt(0.25 * 0.75 / 1.4 / m);
  for (double a : acc) EXPECT_NEAR(a / m, 0.25, 4 * se);
}

TEST(Rng, SplitStreamsDiffer) {
  Rng r(1);
  auto a = r.split("a"), b = r.split("b");
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_EQ(Rng(1).split("a").next_u64(), Rng(1).split("a").next_u64());
}
