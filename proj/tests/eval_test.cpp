#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ngramlab/classic.hpp"
#include "ngramlab/eval.hpp"
#include "ngramlab/gen.hpp"

using namespace ngramlab;

namespace {

std::unique_ptr<TabularLM> constant_lm(std::size_t sigma, int n, std::vector<double> probs) {
  auto lm = std::make_unique<TabularLM>(Alphabet(sigma), n, "test");
  std::vector<std::vector<Symbol>> hs;
  lm->for_each_history([&](std::span<const Symbol> w) { hs.emplace_back(w.begin(), w.end()); });
  for (const auto& h : hs) lm->set(h, probs);
  return lm;
}

std::unique_ptr<TabularLM> random_lm(std::size_t sigma, int n, std::uint64_t seed, double alpha = 1.0,
                                     double expected_length = 10.0) {
  GeneralLMSpec spec;
  spec.n = n;
  spec.alphabet_size = sigma;
  spec.alpha = alpha;
  spec.expected_length = expected_length;
  spec.seed = seed;
  return generate_general(spec);
}

// A tabular LM whose EOS probability also varies by history.
std::unique_ptr<TabularLM> random_free_lm(std::size_t sigma, int n, std::uint64_t seed) {
  auto lm = std::make_unique<TabularLM>(Alphabet(sigma), n, "test");
  Rng rng(seed);
  std::vector<std::vector<Symbol>> hs;
  lm->for_each_history([&](std::span<const Symbol> w) { hs.emplace_back(w.begin(), w.end()); });
  for (const auto& h : hs) {
    auto d = rng.dirichlet(sigma + 1, 1.0);
    d[sigma] = 0.05 + 0.5 * d[sigma];
    double s = std::accumulate(d.begin(), d.end(), 0.0);
    for (auto& x : d) x /= s;
    lm->set(h, d);
  }
  return lm;
}

ScoreFile scores(std::vector<double> v, std::string lm_id = "lm") {
  ScoreFile sf;
  sf.lm_id = std::move(lm_id);
  sf.logprobs = std::move(v);
  return sf;
}

}  // namespace

TEST(ScoreFile, RoundTrip) {
  ScoreFile sf = scores({-1.5, kNegInf, -0.1 - 1e-17, 0.0});
  sf.model_id = "wb-n3";
  std::ostringstream os;
  write_scores(os, sf);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "#model_id=wb-n3 lm_id=lm split=test n=4");
  std::istringstream is(os.str());
  const auto back = read_scores(is);
  EXPECT_EQ(back.model_id, "wb-n3");
  EXPECT_EQ(back.lm_id, "lm");
  EXPECT_EQ(back.split, Split::test);
  EXPECT_EQ(back.logprobs, sf.logprobs);
}

TEST(ScoreFile, EmptyCorpus) {
  std::ostringstream os;
  write_scores(os, scores({}));
  std::istringstream is(os.str());
  EXPECT_EQ(read_scores(is).size(), 0u);
}

TEST(ScoreFile, MalformedFiles) {
  std::istringstream wrong_n("#model_id=m lm_id=l split=test n=3\n0\t-1\n1\t-2\n");
  EXPECT_THROW(read_scores(wrong_n), ProtocolError);
  std::istringstream out_of_order("#model_id=m lm_id=l split=test n=2\n1\t-1\n0\t-2\n");
  EXPECT_THROW(read_scores(out_of_order), ProtocolError);
  std::istringstream positive("#model_id=m lm_id=l split=test n=1\n0\t0.5\n");
  EXPECT_THROW(read_scores(positive), InputError);
  std::istringstream no_header("0\t-1\n");
  EXPECT_THROW(read_scores(no_header), InputError);
}

TEST(EmpiricalEntropy, DeterministicLmIsZero) {
  auto lm = constant_lm(2, 2, {0.0, 0.0, 1.0});
  Corpus c;
  c.strings.assign(50, SymbolString{});
  EXPECT_EQ(empirical_entropy(*lm, c), 0.0);
}

TEST(EmpiricalEntropy, HandFactors) {
  auto lm = constant_lm(1, 2, {0.5, 0.5});
  Corpus c;
  c.strings = {{}, {0}};
  EXPECT_NEAR(empirical_entropy(*lm, c), -(std::log(0.5) + std::log(0.25)) / 2, 1e-15);
  EXPECT_NEAR(empirical_entropy(*lm, c), 1.0397, 1e-4);
}

TEST(EmpiricalEntropy, UnseenHistoryUnderMleIsInfinite) {
  Corpus train;
  train.strings = {{0}};
  auto mle_lm = as_lm(std::make_shared<CountTable>(count(train, Alphabet(2), 2)), {Smoothing::mle, 0, 2});
  Corpus test;
  test.strings = {{0}, {1, 0}};
  auto truth = constant_lm(2, 2, {0.4, 0.4, 0.2});
  const auto r = empirical_kl(score_corpus(*truth, test, "truth"), score_corpus(*mle_lm, test, "mle"));
  EXPECT_EQ(empirical_entropy(score_corpus(*mle_lm, test, "mle")), kInf);
  EXPECT_EQ(r.n_inf, 1u);
  EXPECT_EQ(r.KL_hat, kInf);
  EXPECT_TRUE(std::isfinite(r.KL_hat_finite));
}

TEST(EmpiricalKl, IdenticalFilesGiveZero) {
  auto s = scores({-1.0, -2.5, -0.3});
  const auto r = empirical_kl(s, s);
  EXPECT_EQ(r.KL_hat, 0.0);
  EXPECT_EQ(r.std_error, 0.0);
  EXPECT_EQ(r.n_strings, 3u);
}

TEST(EmpiricalKl, MisalignedIsProtocolError) {
  EXPECT_THROW(empirical_kl(scores({-1.0}), scores({-1.0, -2.0})), ProtocolError);
  EXPECT_THROW(empirical_kl(scores({-1.0}, "x"), scores({-1.0}, "y")), ProtocolError);
}

TEST(EmpiricalKl, ReportJsonRoundTrip) {
  EvalReport r = empirical_kl(scores({-1.0, -2.0}), scores({kNegInf, -2.5}));
  const Json j = to_json(r);
  EXPECT_EQ(j.at("KL_hat"), "inf");
  EXPECT_EQ(j.at("unit"), "nats");
  const auto back = eval_report_from_json(j);
  EXPECT_EQ(back.KL_hat, kInf);
  EXPECT_EQ(back.n_inf, 1u);
  EXPECT_EQ(back.KL_hat_finite, 0.5);
}

TEST(ExactEntropy, GeometricLm) {
  auto lm = constant_lm(1, 2, {0.5, 0.5});
  EXPECT_NEAR(exact_entropy(*lm), 2 * std::log(2.0), 1e-12);
  const auto vc = expected_visits(*lm);
  ASSERT_EQ(vc.states.size(), 2u);
  EXPECT_NEAR(vc.mu[0], 1.0, 1e-12);
  EXPECT_NEAR(vc.mu[1], 1.0, 1e-12);
}

TEST(ExactEntropy, PointMassOnEmptyString) {
  EXPECT_EQ(exact_entropy(*constant_lm(3, 3, {0, 0, 0, 1})), 0.0);
}

TEST(ExactEntropy, NonAbsorbingChainIsDivergence) {
  auto lm = std::make_unique<TabularLM>(Alphabet(2), 2, "test");
  lm->set(std::vector<Symbol>{2}, std::vector<double>{0.5, 0.0, 0.5});
  lm->set(std::vector<Symbol>{0}, std::vector<double>{0.0, 1.0, 0.0});
  lm->set(std::vector<Symbol>{1}, std::vector<double>{1.0, 0.0, 0.0});
  EXPECT_THROW(exact_entropy(*lm), DivergenceError);
}

TEST(ExactEntropy, StateCap) {
  auto lm = random_lm(8, 5, 1);
  EXPECT_THROW(exact_entropy(*lm, 4096), ResourceError);
  EXPECT_THROW(exact_entropy(*random_lm(3, 3, 1), 5), ResourceError);
}

TEST(ExactKl, HandExample) {
  auto p = constant_lm(1, 2, {0.5, 0.5});
  auto q = constant_lm(1, 2, {0.75, 0.25});
  EXPECT_NEAR(exact_kl(*p, *q), std::log(2.0) + std::log(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(exact_kl(*p, *q), 0.28768, 1e-5);
  EXPECT_EQ(exact_kl(*p, *p), 0.0);
}

TEST(ExactKl, MissingSupportIsInfinite) {
  auto p = constant_lm(2, 2, {0.4, 0.4, 0.2});
  auto q = constant_lm(2, 2, {0.8, 0.0, 0.2});
  EXPECT_EQ(exact_kl(*p, *q), kInf);
  EXPECT_EQ(exact_cross_entropy(*p, *q), kInf);
}

TEST(ExactKl, GibbsAndIdentity) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t sigma = 2 + seed % 3;
    const int n = 2 + static_cast<int>(seed % 2);
    auto p = random_free_lm(sigma, n, seed);
    auto q = random_free_lm(sigma, n, seed + 1000);
    const double kl = exact_kl(*p, *q);
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(exact_kl(*p, *p), 0.0, 1e-12);
    EXPECT_NEAR(exact_cross_entropy(*p, *q) - exact_entropy(*p), kl, 1e-10);
    const auto vc = expected_visits(*p);
    double absorbed = 0;
    for (std::size_t s = 0; s < vc.states.size(); ++s) {
      absorbed += vc.mu[s] * p->next(History(vc.states[s], p->alphabet(), n)).eos();
    }
    EXPECT_NEAR(absorbed, 1.0, 1e-9);
  }
}

TEST(ExactKl, HigherOrderModelOnLiftedStates) {
  auto p = random_free_lm(3, 2, 4);
  // The same conditionals as a trigram table.
  auto lifted = std::make_unique<TabularLM>(Alphabet(3), 3, "test");
  std::vector<std::vector<Symbol>> hs;
  lifted->for_each_history([&](std::span<const Symbol> w) { hs.emplace_back(w.begin(), w.end()); });
  std::vector<double> d(4);
  for (const auto& h : hs) {
    p->fill_next(std::span<const Symbol>(h).last(1), d);
    lifted->set(h, d);
  }
  EXPECT_NEAR(exact_kl(*p, *lifted), 0.0, 1e-12);
  EXPECT_NEAR(exact_entropy(*lifted), exact_entropy(*p), 1e-10);
  auto q = random_free_lm(3, 3, 5);
  EXPECT_NEAR(exact_cross_entropy(*p, *q) - exact_entropy(*p), exact_kl(*p, *q), 1e-10);
}

TEST(Empirical, AgreesWithExactWithinThreeStandardErrors) {
  auto p = random_lm(3, 2, 8);
  auto q = random_lm(3, 2, 9);
  const Corpus test = sample_corpus(*p, 100000, 10);
  const auto sp = score_corpus(*p, test, "p");
  const auto sq = score_corpus(*q, test, "q");
  RunningStats h;
  for (double lp : sp.logprobs) h.add(-lp);
  EXPECT_LT(std::abs(h.mean - exact_entropy(*p)), 3 * h.stderr_of_mean());
  const auto r = empirical_kl(sp, sq);
  EXPECT_LT(std::abs(r.KL_hat - exact_kl(*p, *q)), 3 * r.std_error);
}

TEST(EmpiricalKl, AsymmetryOnGeometricPair) {
  auto p = constant_lm(1, 2, {0.5, 0.5});
  auto q = constant_lm(1, 2, {0.75, 0.25});
  const Corpus from_p = sample_corpus(*p, 100000, 1);
  const Corpus from_q = sample_corpus(*q, 100000, 2);
  const auto pq = empirical_kl(score_corpus(*p, from_p, "p"), score_corpus(*q, from_p, "q"));
  const auto qp = empirical_kl(score_corpus(*q, from_q, "q"), score_corpus(*p, from_q, "p"));
  EXPECT_LT(std::abs(pq.KL_hat - 0.28768), 3 * pq.std_error);
  // KL(q‖p): per-state 0.75 ln(0.75/0.5) + 0.25 ln(0.25/0.5), μ_q total 4.
  const double kl_qp = 4 * (0.75 * std::log(1.5) + 0.25 * std::log(0.5));
  EXPECT_NEAR(exact_kl(*q, *p), kl_qp, 1e-12);
  EXPECT_LT(std::abs(qp.KL_hat - kl_qp), 3 * qp.std_error);
  EXPECT_GT(std::abs(kl_qp - 0.28768), 6 * (pq.std_error + qp.std_error));
}

TEST(ScoreCorpus, ThreadCountDoesNotChangeScores) {
  RepLMSpec spec;
  spec.n = 3;
  spec.alphabet_size = 6;
  spec.embed_dim = 4;
  spec.rank = 3;
  spec.seed = 3;
  auto lm = generate_representation(spec);
  const Corpus c = sample_corpus(*lm, 500, 4);
  const auto one = score_corpus(*lm, c, "m");
  ScoreOptions opts;
  opts.jobs = 3;
  EXPECT_EQ(score_corpus(*lm, c, "m", opts).logprobs, one.logprobs);
  opts.cache_entries = 7;
  opts.jobs = 1;
  EXPECT_EQ(score_corpus(*lm, c, "m", opts).logprobs, one.logprobs);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(one.logprobs[i], string_logprob(*lm, c.strings[i]), 1e-12);
}

TEST(RunningStats, MergeMatchesSequential) {
  Rng rng(1);
  RunningStats all, a, b;
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal() * 3 + 1;
    all.add(x);
    (i % 3 ? a : b).add(x);
  }
  a.merge(b);
  EXPECT_EQ(a.n, all.n);
  EXPECT_NEAR(a.mean, all.mean, 1e-12);
  EXPECT_NEAR(a.sample_variance(), all.sample_variance(), 1e-10);
}
