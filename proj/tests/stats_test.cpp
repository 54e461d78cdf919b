#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "ngramlab/rng.hpp"
#include "ngramlab/stats.hpp"

using namespace ngramlab;

namespace {

// Student-t CDF by composite Simpson integration of the density from 0.
double t_cdf_by_quadrature(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * std::numbers::pi);
  auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / dof, -(dof + 1) / 2); };
  const int m = 20000;
  const double h = std::abs(t) / m;
  double s = pdf(0.0) + pdf(std::abs(t));
  for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  const double half = s * h / 3.0;
  return t >= 0 ? 0.5 + half : 0.5 - half;
}

}  // namespace

TEST(Zscore, SmallExample) {
  const std::vector<double> x{1, 2, 3};
  const auto z = zscore(x);
  EXPECT_NEAR(z[0], -1.0, 1e-15);
  EXPECT_NEAR(z[1], 0.0, 1e-15);
  EXPECT_NEAR(z[2], 1.0, 1e-15);
}

TEST(Zscore, Idempotent) {
  Rng rng(4);
  std::vector<double> x(50);
  for (double& v : x) v = 3.0 + 2.0 * rng.normal();
  const auto z = zscore(x);
  const auto z2 = zscore(z);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], z2[i], 1e-12);
}

TEST(Zscore, ConstantColumnIsDegenerate) {
  const std::vector<double> x{5, 5, 5};
  EXPECT_THROW(zscore(x), DegenerateColumnError);
  const std::vector<double> one{1};
  EXPECT_THROW(zscore(one), DegenerateColumnError);
}

TEST(Ols, PerfectFit) {
  Eigen::MatrixXd x(10, 1);
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) {
    x(i, 0) = i;
    y(i) = 2.0 * i + 1.0;
  }
  const auto r = ols_fit(x, y, {"x"});
  EXPECT_NEAR(r.beta(0), 1.0, 1e-12);
  EXPECT_NEAR(r.beta(1), 2.0, 1e-12);
  EXPECT_NEAR(r.r2, 1.0, 1e-12);
  EXPECT_LT(r.p(1), 1e-6);
  EXPECT_EQ(r.names, (std::vector<std::string>{"intercept", "x"}));
}

TEST(Ols, PlantedCoefficientsRecovered) {
  Rng rng(11);
  const int n = 10000;
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
    y(i) = 0.5 * x(i, 0) - 0.3 * x(i, 1) + 0.1 * rng.normal();
  }
  const auto r = ols_fit(x, y);
  EXPECT_NEAR(r.beta(1), 0.5, 0.02);
  EXPECT_NEAR(r.beta(2), -0.3, 0.02);
  EXPECT_GE(r.r2, 0.0);
  EXPECT_LE(r.r2, 1.0);
}

TEST(Ols, IrrelevantPredictorRarelySignificant) {
  int above = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const int n = 10000;
    Eigen::MatrixXd x(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
      y(i) = 0.5 * x(i, 0) - 0.3 * x(i, 1) + 0.1 * rng.normal();
    }
    if (ols_fit(x, y).p(3) > 0.05) ++above;
  }
  EXPECT_GE(above, 90);
}

TEST(Ols, ResidualsOrthogonalToColumns) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const int n = 200, k = 4;
    Eigen::MatrixXd x(n, k);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) x(i, j) = 10.0 * rng.normal() + j;
      y(i) = 3.0 + rng.normal() * 5.0 + x(i, 0);
    }
    const auto r = ols_fit(x, y);
    EXPECT_LT(std::abs(r.residuals.sum()), 1e-8);
    for (int j = 0; j < k; ++j) EXPECT_LT(std::abs(x.col(j).dot(r.residuals)), 1e-8);
    EXPECT_GE(r.r2, 0.0);
    EXPECT_LE(r.r2, 1.0);
  }
}

TEST(Ols, StandardErrorsMatchTextbookFormula) {
  // Simple regression: se(slope) = sqrt(σ̂² / Σ(x - x̄)²).
  Rng rng(3);
  const int n = 50;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    y(i) = 1.0 + 0.7 * x(i, 0) + rng.normal();
  }
  const auto r = ols_fit(x, y);
  const double sxx = (x.col(0).array() - x.col(0).mean()).square().sum();
  const double s2 = r.residuals.squaredNorm() / (n - 2);
  EXPECT_NEAR(r.std_error(1), std::sqrt(s2 / sxx), 1e-12);
  EXPECT_EQ(r.dof, 48u);
}

TEST(Ols, RankDeficiencyNamesColumns) {
  Rng rng(1);
  Eigen::MatrixXd x(20, 3);
  Eigen::VectorXd y(20);
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    x(i, 2) = x(i, 0) - 2.0 * x(i, 1);
    y(i) = rng.normal();
  }
  try {
    ols_fit(x, y, {"n", "sigma", "combo"});
    FAIL() << "expected RankDeficiencyError";
  } catch (const RankDeficiencyError& e) {
    EXPECT_NE(std::string(e.what()).find("combo"), std::string::npos);
    EXPECT_EQ(std::string(e.what()).find("sigma"), std::string::npos);
  }
}

TEST(Ols, TooFewRowsRejected) {
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, 3, 4, 5, 7;
  Eigen::VectorXd y(3);
  y << 1, 2, 3;
  EXPECT_THROW(ols_fit(x, y), InputError);
}

TEST(StudentT, CdfMatchesQuadrature) {
  for (double dof : {1.0, 2.0, 5.0, 17.0, 100.0, 9996.0}) {
    for (double t : {-6.0, -2.5, -1.0, -0.1, 0.0, 0.3, 1.96, 4.0, 8.0}) {
      EXPECT_NEAR(student_t_cdf(t, dof), t_cdf_by_quadrature(t, dof), 1e-6) << "dof " << dof << " t " << t;
    }
  }
}

TEST(StudentT, PValuesFromFitMatchQuadrature) {
  Rng rng(8);
  const int n = 30;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    y(i) = 0.4 * x(i, 0) + rng.normal();
  }
  const auto r = ols_fit(x, y);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double oracle = 2.0 * (1.0 - t_cdf_by_quadrature(std::abs(r.t(j)), static_cast<double>(r.dof)));
    EXPECT_NEAR(r.p(j), oracle, 1e-6);
  }
}

TEST(Regress, CsvExcludesInfiniteRowsAndDropsConstants) {
  std::ostringstream csv;
  csv << "n,sigma,dense,kl\n";
  Rng rng(2);
  for (int i = 0; i < 40; ++i) {
    const double n = 2 + (i % 3) * 2, s = 8 + (i % 5);
    csv << n << "," << s << ",0," << 0.6 * n + 0.1 * s + 0.05 * rng.normal() << "\n";
  }
  csv << "4,8,0,inf\n";
  std::istringstream is(csv.str());
  const auto t = read_csv(is);
  const auto rep = regress_table(t, "kl", {"n", "sigma", "dense"});
  EXPECT_EQ(rep.n_rows, 40u);
  EXPECT_EQ(rep.n_excluded, 1u);
  EXPECT_EQ(rep.dropped, (std::vector<std::string>{"dense"}));
  EXPECT_GT(rep.fit.beta(1), 0.0);
  const Json j = to_json(rep);
  EXPECT_EQ(j["coefficients"].size(), 3u);
  EXPECT_EQ(j["coefficients"][1]["predictor"], "n");
  EXPECT_TRUE(j.contains("r2"));
  EXPECT_THROW(regress_table(t, "kl", {"n", "sigma", "dense"}, false), DegenerateColumnError);
  EXPECT_THROW(regress_table(t, "missing", {"n"}), InputError);
}

TEST(Regress, MalformedCsvRejected) {
  std::istringstream bad("a,b\n1,2,3\n");
  EXPECT_THROW(read_csv(bad), InputError);
  std::istringstream text("a,kl\nx,1\n1,2\n2,3\n3,4\n");
  const auto t = read_csv(text);
  EXPECT_THROW(regress_table(t, "kl", {"a"}), InputError);
}
