#pragma once

// Scoring, empirical entropy / cross-entropy / KL, and exact oracles for
// small tabular LMs via expected visit counts of the history Markov chain.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ngramlab/core.hpp"
#include "ngramlab/corpus.hpp"
#include "ngramlab/json_io.hpp"

namespace ngramlab {

// ---------------------------------------------------------------- ScoreFile

struct ScoreFile {
  std::string model_id;
  std::string lm_id;
  Split split = Split::test;
  std::vector<double> logprobs;  // natural log; -inf allowed

  std::size_t size() const { return logprobs.size(); }
};

namespace detail {

inline std::string format_logprob(double v) {
  if (v == kNegInf) return "-inf";
  if (!std::isfinite(v)) throw InputError("log-probability must be finite or -inf");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string header_token(const std::string& s) {
  if (s.find_first_of(" \t\n=") != std::string::npos) {
    throw InputError("score header values may not contain whitespace or '=': '" + s + "'");
  }
  return s.empty() ? "-" : s;
}

}  // namespace detail

inline void write_scores(std::ostream& os, const ScoreFile& sf) {
  os << "#model_id=" << detail::header_token(sf.model_id) << " lm_id=" << detail::header_token(sf.lm_id)
     << " split=" << to_string(sf.split) << " n=" << sf.size() << '\n';
  for (std::size_t i = 0; i < sf.size(); ++i) os << i << '\t' << detail::format_logprob(sf.logprobs[i]) << '\n';
}

inline ScoreFile read_scores(std::istream& is) {
  ScoreFile sf;
  std::string line;
  if (!std::getline(is, line) || line.rfind('#', 0) != 0) throw InputError("score file lacks a '#' header");
  std::istringstream hs(line.substr(1));
  std::size_t n = 0;
  bool have_n = false;
  for (std::string tok; hs >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw InputError("bad score header token '" + tok + "'");
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    const std::string v = val == "-" ? std::string{} : val;
    if (key == "model_id") {
      sf.model_id = v;
    } else if (key == "lm_id") {
      sf.lm_id = v;
    } else if (key == "split") {
      sf.split = parse_split(val);
    } else if (key == "n") {
      n = std::stoull(val);
      have_n = true;
    }
  }
  if (!have_n) throw InputError("score header lacks n=");
  sf.logprobs.reserve(n);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError("score line without a tab: '" + line + "'");
    const std::size_t idx = std::stoull(line.substr(0, tab));
    if (idx != sf.logprobs.size()) {
      throw ProtocolError("score file index " + std::to_string(idx) + " out of order (expected " +
                          std::to_string(sf.logprobs.size()) + ")");
    }
    const std::string val = line.substr(tab + 1);
    double v;
    if (val == "-inf") {
      v = kNegInf;
    } else {
      std::size_t used = 0;
      v = std::stod(val, &used);
      if (used != val.size() || !std::isfinite(v)) throw InputError("bad log-probability '" + val + "'");
      if (v > 1e-9) throw InputError("positive log-probability " + val + " in score file");
    }
    sf.logprobs.push_back(v);
  }
  if (sf.logprobs.size() != n) {
    throw ProtocolError("score file header says n=" + std::to_string(n) + " but has " +
                        std::to_string(sf.logprobs.size()) + " lines");
  }
  return sf;
}

inline void save_scores(const std::filesystem::path& path, const ScoreFile& sf) {
  std::ostringstream os;
  write_scores(os, sf);
  write_file_atomic(path, os.str());
}

inline ScoreFile load_scores(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read scores " + path.string());
  return read_scores(is);
}

// ------------------------------------------------------------------ scoring

struct ScoreOptions {
  std::size_t jobs = 1;
  // Distinct histories whose full log-distribution is kept per worker.
  std::size_t cache_entries = std::size_t{1} << 18;
};

namespace detail {

/// Log-probabilities of strings [begin, end) of c, caching per-history
/// log-distributions when point queries are expensive.
inline void score_range(const NGramLM& lm, const Corpus& c, std::size_t begin, std::size_t end,
                        std::span<double> out, std::size_t cache_entries) {
  const Alphabet& a = lm.alphabet();
  const std::size_t width = lm.history_length();
  const std::size_t v = a.with_eos();
  const bool cached = !lm.cheap_point_queries() && cache_entries > 0;
  std::unordered_map<std::u32string, std::vector<double>> cache;
  std::vector<double> buf(v);
  std::vector<Symbol> padded;
  std::u32string key(width, U'\0');
  for (std::size_t i = begin; i < end; ++i) {
    const auto& y = c.strings[i];
    a.validate(y);
    padded.assign(width, a.bos());
    padded.insert(padded.end(), y.begin(), y.end());
    double total = 0.0;
    for (std::size_t t = 0; t <= y.size() && total != kNegInf; ++t) {
      const std::span<const Symbol> window(padded.data() + t, width);
      const std::size_t target = t < y.size() ? y[t] : a.eos_index();
      double lp;
      if (cached) {
        for (std::size_t k = 0; k < width; ++k) key[k] = static_cast<char32_t>(window[k]);
        auto it = cache.find(key);
        if (it == cache.end()) {
          if (cache.size() >= cache_entries) cache.clear();
          lm.fill_next(window, buf);
          std::vector<double> logs(v);
          for (std::size_t k = 0; k < v; ++k) logs[k] = buf[k] > 0.0 ? std::log(buf[k]) : kNegInf;
          it = cache.emplace(key, std::move(logs)).first;
        }
        lp = it->second[target];
      } else {
        const double p = lm.prob(window, t < y.size() ? y[t] : a.eos());
        lp = p > 0.0 ? std::log(p) : kNegInf;
      }
      total = lp == kNegInf ? kNegInf : total + lp;
    }
    out[i - begin] = total;
  }
}

}  // namespace detail

/// One log-probability per string, in corpus order. Sharded by string across
/// `jobs` threads; the result does not depend on the thread count.
inline ScoreFile score_corpus(const NGramLM& lm, const Corpus& c, std::string model_id,
                              const ScoreOptions& opts = {}) {
  ScoreFile sf;
  sf.model_id = std::move(model_id);
  sf.lm_id = c.lm_id;
  sf.split = c.split;
  sf.logprobs.assign(c.size(), 0.0);
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, c.size()));
  if (jobs <= 1) {
    detail::score_range(lm, c, 0, c.size(), sf.logprobs, opts.cache_entries);
    return sf;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  const std::size_t chunk = (c.size() + jobs - 1) / jobs;
  for (std::size_t j = 0; j < jobs; ++j) {
    const std::size_t b = std::min(c.size(), j * chunk), e = std::min(c.size(), b + chunk);
    workers.emplace_back([&, j, b, e] {
      try {
        detail::score_range(lm, c, b, e, std::span<double>(sf.logprobs).subspan(b, e - b),
                            opts.cache_entries);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return sf;
}

// ---------------------------------------------------------- empirical KL

/// Streaming mean / variance (Welford), mergeable across shards.
struct RunningStats {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }

  void merge(const RunningStats& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double total = static_cast<double>(n + o.n);
    const double d = o.mean - mean;
    mean += d * static_cast<double>(o.n) / total;
    m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) / total;
    n += o.n;
  }

  double sample_variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stderr_of_mean() const {
    return n > 0 ? std::sqrt(sample_variance() / static_cast<double>(n)) : 0.0;
  }
};

struct EvalReport {
  double H_hat = 0.0;   // Ĥ(p)
  double HX_hat = 0.0;  // Ĥ(p, q); +inf when any string scores -inf under q
  double KL_hat = 0.0;
  double std_error = 0.0;
  std::size_t n_inf = 0;
  std::size_t n_strings = 0;
  // Same estimate restricted to strings q scores finitely.
  double KL_hat_finite = 0.0;
  double std_error_finite = 0.0;
  std::string unit = "nats";
};

namespace detail {

inline Json real_or_inf(double v) {
  if (v == kInf) return "inf";
  if (v == kNegInf) return "-inf";
  return v;
}

inline double real_from_json(const Json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return kNegInf;
    throw InputError("bad real '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace detail

inline Json to_json(const EvalReport& r) {
  Json j;
  j["H_hat"] = detail::real_or_inf(r.H_hat);
  j["HX_hat"] = detail::real_or_inf(r.HX_hat);
  j["KL_hat"] = detail::real_or_inf(r.KL_hat);
  j["stderr"] = detail::real_or_inf(r.std_error);
  j["n_inf"] = r.n_inf;
  j["n_strings"] = r.n_strings;
  j["KL_hat_finite"] = detail::real_or_inf(r.KL_hat_finite);
  j["stderr_finite"] = detail::real_or_inf(r.std_error_finite);
  j["unit"] = r.unit;
  return j;
}

inline EvalReport eval_report_from_json(const Json& j) {
  EvalReport r;
  r.H_hat = detail::real_from_json(j.at("H_hat"));
  r.HX_hat = detail::real_from_json(j.at("HX_hat"));
  r.KL_hat = detail::real_from_json(j.at("KL_hat"));
  r.std_error = detail::real_from_json(j.at("stderr"));
  r.n_inf = j.at("n_inf").get<std::size_t>();
  r.n_strings = j.at("n_strings").get<std::size_t>();
  r.KL_hat_finite = detail::real_from_json(j.value("KL_hat_finite", Json(r.KL_hat)));
  r.std_error_finite = detail::real_from_json(j.value("stderr_finite", Json(r.std_error)));
  r.unit = j.value("unit", std::string{"nats"});
  return r;
}

/// Mean negative log-probability in nats; +inf if any string scores -inf.
inline double empirical_entropy(const ScoreFile& sf) {
  if (sf.size() == 0) throw InputError("empirical entropy of an empty corpus");
  RunningStats s;
  for (double lp : sf.logprobs) {
    if (lp == kNegInf) return kInf;
    s.add(-lp);
  }
  return s.mean;
}

inline double empirical_entropy(const NGramLM& lm, const Corpus& test) {
  return empirical_entropy(score_corpus(lm, test, "entropy"));
}

/// K̂L(p‖q) = Ĥ(p, q) - Ĥ(p) on the strings of a test corpus drawn from p,
/// with standard error sd(ln p - ln q)/√M.
inline EvalReport empirical_kl(const ScoreFile& truth, const ScoreFile& model) {
  if (truth.size() != model.size()) {
    throw ProtocolError("score files cover different corpora (" + std::to_string(truth.size()) + " vs " +
                        std::to_string(model.size()) + " strings)");
  }
  if (!truth.lm_id.empty() && !model.lm_id.empty() && truth.lm_id != model.lm_id) {
    throw ProtocolError("score files refer to different LMs: " + truth.lm_id + " vs " + model.lm_id);
  }
  if (truth.split != model.split) throw ProtocolError("score files refer to different splits");
  if (truth.size() == 0) throw InputError("empirical KL on an empty corpus");

  EvalReport r;
  r.n_strings = truth.size();
  RunningStats h, hx, diff, diff_finite;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double lp = truth.logprobs[i], lq = model.logprobs[i];
    if (lp == kNegInf) {
      throw ProtocolError("string " + std::to_string(i) + " has zero probability under the reference LM");
    }
    h.add(-lp);
    if (lq == kNegInf) {
      ++r.n_inf;
      continue;
    }
    hx.add(-lq);
    diff.add(lp - lq);
  }
  diff_finite = diff;
  r.H_hat = h.mean;
  if (r.n_inf > 0) {
    r.HX_hat = kInf;
    r.KL_hat = kInf;
    r.std_error = kInf;
  } else {
    r.HX_hat = hx.mean;
    r.KL_hat = r.HX_hat - r.H_hat;
    r.std_error = diff.stderr_of_mean();
  }
  if (diff_finite.n > 0) {
    r.KL_hat_finite = diff_finite.mean;
    r.std_error_finite = diff_finite.stderr_of_mean();
  } else {
    r.KL_hat_finite = kInf;
    r.std_error_finite = kInf;
  }
  return r;
}

// ----------------------------------------------------------- exact oracles

inline constexpr std::size_t kDefaultStateCap = 4096;

/// Expected number of visits to every reachable history state before
/// absorption in EOS, for a chain over histories of length `order - 1`.
struct VisitCounts {
  int order = 0;
  std::vector<std::vector<Symbol>> states;  // states[0] is the all-BOS start
  std::vector<double> mu;
};

/// Expected visit counts of p's history chain, lifted to histories of
/// `order` (>= p.order()) so models of a different order can be compared
/// on the same states.
inline VisitCounts expected_visits(const NGramLM& p, int order = 0, std::size_t cap = kDefaultStateCap) {
  const Alphabet& a = p.alphabet();
  if (order == 0) order = p.order();
  if (order < p.order()) throw InputError("state order must be >= the LM's order");
  const std::size_t width = static_cast<std::size_t>(order - 1);
  const std::size_t pw = p.history_length();
  const std::size_t v = a.with_eos();

  VisitCounts vc;
  vc.order = order;
  std::unordered_map<std::u32string, std::size_t> index;
  auto key_of = [](std::span<const Symbol> w) { return std::u32string(w.begin(), w.end()); };
  std::vector<std::vector<double>> dists;
  std::deque<std::size_t> frontier;

  auto intern = [&](std::vector<Symbol> w) -> std::size_t {
    auto k = key_of(w);
    auto it = index.find(k);
    if (it != index.end()) return it->second;
    if (vc.states.size() >= cap) {
      throw ResourceError("history chain has more than " + std::to_string(cap) + " reachable states");
    }
    const std::size_t id = vc.states.size();
    index.emplace(std::move(k), id);
    vc.states.push_back(std::move(w));
    frontier.push_back(id);
    return id;
  };

  intern(std::vector<Symbol>(width, a.bos()));
  // (from, to, prob) transitions among transient states
  std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
  std::vector<double> absorb;
  while (!frontier.empty()) {
    const std::size_t s = frontier.front();
    frontier.pop_front();
    std::vector<double> dist(v);
    const auto w = vc.states[s];
    p.fill_next(std::span<const Symbol>(w).last(pw), dist);
    if (absorb.size() <= s) absorb.resize(s + 1, 0.0);
    absorb[s] = dist[a.eos_index()];
    for (std::size_t y = 0; y < a.size(); ++y) {
      if (dist[y] <= 0.0) continue;
      std::vector<Symbol> next;
      if (width > 0) {
        next.assign(w.begin() + 1, w.end());
        next.push_back(static_cast<Symbol>(y));
      }
      const std::size_t t = intern(std::move(next));
      edges.emplace_back(s, t, dist[y]);
    }
    dists.push_back(std::move(dist));
  }
  const std::size_t m = vc.states.size();
  absorb.resize(m, 0.0);

  // Every reachable state must be able to reach a state with p(EOS) > 0.
  std::vector<std::vector<std::size_t>> preds(m);
  for (const auto& [f, t, pr] : edges) preds[t].push_back(f);
  std::vector<char> can_absorb(m, 0);
  std::deque<std::size_t> q;
  for (std::size_t s = 0; s < m; ++s) {
    if (absorb[s] > 0.0) {
      can_absorb[s] = 1;
      q.push_back(s);
    }
  }
  while (!q.empty()) {
    const std::size_t s = q.front();
    q.pop_front();
    for (std::size_t f : preds[s]) {
      if (!can_absorb[f]) {
        can_absorb[f] = 1;
        q.push_back(f);
      }
    }
  }
  for (std::size_t s = 0; s < m; ++s) {
    if (!can_absorb[s]) throw DivergenceError("a reachable history can never emit EOS; the chain does not absorb");
  }

  // (I - Pᵀ) μ = e_start
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (const auto& [f, t, pr] : edges) A(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f)) -= pr;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  rhs(0) = 1.0;
  const Eigen::VectorXd mu = A.partialPivLu().solve(rhs);
  vc.mu.assign(mu.data(), mu.data() + m);

  double absorbed = 0.0;
  for (std::size_t s = 0; s < m; ++s) {
    if (!std::isfinite(vc.mu[s]) || vc.mu[s] < -1e-9) {
      throw DivergenceError("visit-count solve produced an invalid value (spectral radius near 1?)");
    }
    absorbed += vc.mu[s] * absorb[s];
  }
  if (std::abs(absorbed - 1.0) > 1e-9) {
    throw DivergenceError("absorption probability " + std::to_string(absorbed) + " differs from 1");
  }
  return vc;
}

namespace detail {

template <class F>
double mu_weighted(const NGramLM& p, const VisitCounts& vc, F&& per_state) {
  std::vector<double> dist(p.alphabet().with_eos());
  const std::size_t pw = p.history_length();
  double total = 0.0;
  for (std::size_t s = 0; s < vc.states.size(); ++s) {
    const std::span<const Symbol> w(vc.states[s]);
    p.fill_next(w.last(pw), dist);
    const double term = per_state(w, dist);
    if (term == kInf) return kInf;
    total += vc.mu[s] * term;
  }
  return total;
}

}  // namespace detail

/// H(p) = Σ_s μ(s) H(p(·|s)) in nats.
inline double exact_entropy(const NGramLM& p, std::size_t cap = kDefaultStateCap) {
  const auto vc = expected_visits(p, 0, cap);
  return detail::mu_weighted(p, vc, [](std::span<const Symbol>, const std::vector<double>& d) {
    double h = 0.0;
    for (double x : d) {
      if (x > 0.0) h -= x * std::log(x);
    }
    return h;
  });
}

/// H(p, q) = Σ_s μ_p(s) Σ_y p(y|s) ln 1/q(y|s); +inf when q misses p's support.
inline double exact_cross_entropy(const NGramLM& p, const NGramLM& q, std::size_t cap = kDefaultStateCap) {
  if (p.alphabet() != q.alphabet()) throw InputError("LMs have different alphabets");
  const auto vc = expected_visits(p, std::max(p.order(), q.order()), cap);
  std::vector<double> qd(q.alphabet().with_eos());
  const std::size_t qw = q.history_length();
  return detail::mu_weighted(p, vc, [&](std::span<const Symbol> w, const std::vector<double>& pd) {
    q.fill_next(w.last(qw), qd);
    double h = 0.0;
    for (std::size_t y = 0; y < pd.size(); ++y) {
      if (pd[y] <= 0.0) continue;
      if (qd[y] <= 0.0) return kInf;
      h -= pd[y] * std::log(qd[y]);
    }
    return h;
  });
}

/// KL(p‖q) = Σ_s μ_p(s) Σ_y p(y|s) ln(p(y|s)/q(y|s)).
inline double exact_kl(const NGramLM& p, const NGramLM& q, std::size_t cap = kDefaultStateCap) {
  if (p.alphabet() != q.alphabet()) throw InputError("LMs have different alphabets");
  const auto vc = expected_visits(p, std::max(p.order(), q.order()), cap);
  std::vector<double> qd(q.alphabet().with_eos());
  const std::size_t qw = q.history_length();
  return detail::mu_weighted(p, vc, [&](std::span<const Symbol> w, const std::vector<double>& pd) {
    q.fill_next(w.last(qw), qd);
    double kl = 0.0;
    for (std::size_t y = 0; y < pd.size(); ++y) {
      if (pd[y] <= 0.0) continue;
      if (qd[y] <= 0.0) return kInf;
      kl += pd[y] * std::log(pd[y] / qd[y]);
    }
    return kl;
  });
}

}  // namespace ngramlab
