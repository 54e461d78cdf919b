#pragma once

// z-score standardization and ordinary least squares with t-test p-values.

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "ngramlab/error.hpp"
#include "ngramlab/json_io.hpp"

namespace ngramlab {

/// (x - mean) / sd with the n-1 sample standard deviation.
inline std::vector<double> zscore(std::span<const double> x, const std::string& name = "column") {
  if (x.size() < 2) throw DegenerateColumnError(name + ": need at least 2 values to standardize");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
  if (!(sd > 0.0) || !std::isfinite(sd)) throw DegenerateColumnError(name + " is constant");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / sd;
  return out;
}

/// P(T <= t) for Student's t with dof degrees of freedom.
inline double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw InputError("t distribution needs positive degrees of freedom");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  return boost::math::cdf(boost::math::students_t(dof), t);
}

/// Two-sided p-value of a t statistic.
inline double two_sided_p(double t, double dof) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(dof), std::abs(t)));
}

struct OlsResult {
  std::vector<std::string> names;  // "intercept" first, then the predictors
  Eigen::VectorXd beta;
  Eigen::VectorXd std_error;
  Eigen::VectorXd t;
  Eigen::VectorXd p;
  Eigen::VectorXd residuals;
  double r2 = 0.0;
  double sigma2 = 0.0;
  std::size_t n = 0;
  std::size_t dof = 0;
};

/// Least squares of y on [1, X]. Throws RankDeficiencyError naming every
/// column that lies in the span of the columns before it.
inline OlsResult ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> names = {}) {
  const auto n = x.rows();
  const auto k = x.cols();
  if (y.size() != n) throw InputError("design matrix and response have different row counts");
  if (names.empty()) {
    for (Eigen::Index j = 0; j < k; ++j) names.push_back("x" + std::to_string(j + 1));
  }
  if (static_cast<Eigen::Index>(names.size()) != k) throw InputError("one name per predictor column is required");
  if (n <= k + 1) {
    throw InputError("OLS needs more rows (" + std::to_string(n) + ") than columns + 1 (" + std::to_string(k + 1) + ")");
  }
  if (!x.allFinite() || !y.allFinite()) throw InputError("OLS inputs must be finite");

  Eigen::MatrixXd a(n, k + 1);
  a.col(0).setOnes();
  a.rightCols(k) = x;
  names.insert(names.begin(), "intercept");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < k + 1) {
    std::vector<std::string> collinear;
    Eigen::Index rank = 0;
    for (Eigen::Index j = 0; j <= k; ++j) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> part(a.leftCols(j + 1));
      part.setThreshold(1e-10);
      if (part.rank() == rank) {
        collinear.push_back(names[static_cast<std::size_t>(j)]);
      } else {
        rank = part.rank();
      }
    }
    std::string msg = "design matrix is rank deficient; collinear columns:";
    for (const auto& c : collinear) msg += " " + c;
    throw RankDeficiencyError(msg);
  }

  OlsResult r;
  r.names = std::move(names);
  r.n = static_cast<std::size_t>(n);
  r.dof = static_cast<std::size_t>(n - k - 1);
  r.beta = qr.solve(y);
  r.residuals = y - a * r.beta;
  const double ssr = r.residuals.squaredNorm();
  const double sst = (y.array() - y.mean()).square().sum();
  r.r2 = sst > 0.0 ? 1.0 - ssr / sst : 1.0;
  r.sigma2 = ssr / static_cast<double>(r.dof);
  const Eigen::MatrixXd xtx_inv = (a.transpose() * a).ldlt().solve(Eigen::MatrixXd::Identity(k + 1, k + 1));
  r.std_error = (r.sigma2 * xtx_inv.diagonal().array()).sqrt();
  r.t.resize(k + 1);
  r.p.resize(k + 1);
  for (Eigen::Index j = 0; j <= k; ++j) {
    const double se = r.std_error(j);
    if (se > 0.0) {
      r.t(j) = r.beta(j) / se;
    } else {
      r.t(j) = r.beta(j) == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                : std::copysign(std::numeric_limits<double>::infinity(), r.beta(j));
    }
    r.p(j) = two_sided_p(r.t(j), static_cast<double>(r.dof));
  }
  return r;
}

// ------------------------------------------------------------- CSV tables

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw InputError("CSV line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw InputError("CSV input is empty");
  return t;
}

inline double parse_real(const std::string& s, const std::string& where) {
  if (s == "inf" || s == "+inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
  if (s == "-inf" || s == "-Infinity") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw InputError("not a number at " + where + ": '" + s + "'");
  }
  if (pos != s.size()) throw InputError("not a number at " + where + ": '" + s + "'");
  return v;
}

struct RegressionReport {
  OlsResult fit;
  std::vector<std::string> dropped;  // constant predictors left out of the fit
  std::size_t n_rows = 0;            // rows used
  std::size_t n_excluded = 0;        // rows with an infinite response
};

/// Regresses `response` on the z-scored `predictors` of a CSV table. Rows
/// whose response is +inf are excluded and counted; constant predictors are
/// dropped (they carry no information once standardized) unless
/// `drop_constant` is false, in which case they raise DegenerateColumnError.
inline RegressionReport regress_table(const CsvTable& t, const std::string& response,
                                      const std::vector<std::string>& predictors, bool drop_constant = true) {
  if (predictors.empty()) throw InputError("no predictors given");
  const std::size_t yc = t.column(response);
  std::vector<std::size_t> pc;
  for (const auto& p : predictors) pc.push_back(t.column(p));

  RegressionReport rep;
  std::vector<double> y;
  std::vector<std::vector<double>> cols(predictors.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = "row " + std::to_string(r + 1);
    const double v = parse_real(t.rows[r][yc], where + ", column " + response);
    if (v == std::numeric_limits<double>::infinity()) {
      ++rep.n_excluded;
      continue;
    }
    if (!std::isfinite(v)) throw InputError("non-finite response at " + where);
    y.push_back(v);
    for (std::size_t j = 0; j < pc.size(); ++j) {
      const double xv = parse_real(t.rows[r][pc[j]], where + ", column " + predictors[j]);
      if (!std::isfinite(xv)) throw InputError("non-finite predictor at " + where + ", column " + predictors[j]);
      cols[j].push_back(xv);
    }
  }
  rep.n_rows = y.size();

  std::vector<std::vector<double>> kept;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    try {
      kept.push_back(zscore(cols[j], predictors[j]));
      names.push_back(predictors[j]);
    } catch (const DegenerateColumnError&) {
      if (!drop_constant) throw;
      rep.dropped.push_back(predictors[j]);
    }
  }
  if (kept.empty()) throw DegenerateColumnError("every predictor is constant");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) {
    x.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(kept[j].data(), x.rows());
  }
  rep.fit = ols_fit(x, Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())), names);
  return rep;
}

inline Json to_json(const RegressionReport& rep) {
  Json rows = Json::array();
  const auto& f = rep.fit;
  for (std::size_t j = 0; j < f.names.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    Json row;
    row["predictor"] = f.names[j];
    row["beta"] = f.beta(i);
    row["stderr"] = f.std_error(i);
    row["p"] = f.p(i);
    rows.push_back(std::move(row));
  }
  Json j;
  j["coefficients"] = std::move(rows);
  j["r2"] = f.r2;
  j["n_rows"] = rep.n_rows;
  j["n_excluded"] = rep.n_excluded;
  j["dropped"] = rep.dropped;
  return j;
}

}  // namespace ngramlab
