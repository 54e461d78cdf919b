#pragma once

// Count-based estimation: MLE, add-λ, absolute discounting and Witten-Bell
// over n-gram counts of every order up to n̂.
//
// Only observed n-grams are stored. Lower orders are counted from the same
// events by shortening the BOS-padded history, and the backoff recursions
// bottom out in a uniform order-0 distribution over Σ̄.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "ngramlab/core.hpp"
#include "ngramlab/corpus.hpp"

namespace ngramlab {

class CountTable {
 public:
  struct Node {
    std::uint64_t total = 0;
    // (outcome index, count), sorted by outcome. EOS is outcome |Σ|.
    std::vector<std::pair<std::uint32_t, std::uint64_t>> continuations;

    std::uint64_t count(std::size_t outcome) const {
      auto it = std::lower_bound(continuations.begin(), continuations.end(), outcome,
                                 [](const auto& e, std::size_t o) { return e.first < o; });
      return it != continuations.end() && it->first == outcome ? it->second : 0;
    }
    // N_T(h, •)
    std::size_t types() const { return continuations.size(); }
  };

  CountTable(Alphabet alphabet, int n_hat) : alphabet_(alphabet), n_hat_(n_hat) {
    if (n_hat < 1) throw InputError("count order must be >= 1");
    if (alphabet.size() > 0xfff0) throw InputError("alphabet too large for count keys");
    orders_.resize(static_cast<std::size_t>(n_hat));
    type_by_outcome_.assign(static_cast<std::size_t>(n_hat), std::vector<std::size_t>(alphabet.with_eos(), 0));
    type_total_.assign(static_cast<std::size_t>(n_hat), 0);
  }

  const Alphabet& alphabet() const { return alphabet_; }
  int n_hat() const { return n_hat_; }

  /// Adds every event of y: one per symbol plus the terminal EOS, at every
  /// order k <= n̂.
  void add(std::span<const Symbol> y) {
    alphabet_.validate(y);
    const std::size_t width = static_cast<std::size_t>(n_hat_ - 1);
    std::vector<Symbol> padded(width, alphabet_.bos());
    padded.insert(padded.end(), y.begin(), y.end());
    for (std::size_t t = 0; t <= y.size(); ++t) {
      const std::size_t outcome = t < y.size() ? y[t] : alphabet_.eos_index();
      for (int k = 1; k <= n_hat_; ++k) {
        const std::size_t hl = static_cast<std::size_t>(k - 1);
        add_event(k, std::span<const Symbol>(padded.data() + t + width - hl, hl), outcome, 1);
      }
    }
  }

  void add(const Corpus& corpus) {
    for (const auto& y : corpus.strings) add(y);
  }

  void add_event(int k, std::span<const Symbol> history, std::size_t outcome, std::uint64_t count) {
    if (count == 0) return;
    auto& node = orders_[static_cast<std::size_t>(k - 1)][key(history)];
    node.total += count;
    auto& conts = node.continuations;
    auto it = std::lower_bound(conts.begin(), conts.end(), outcome,
                               [](const auto& e, std::size_t o) { return e.first < o; });
    if (it != conts.end() && it->first == outcome) {
      it->second += count;
    } else {
      conts.insert(it, {static_cast<std::uint32_t>(outcome), count});
      ++type_by_outcome_[static_cast<std::size_t>(k - 1)][outcome];
      ++type_total_[static_cast<std::size_t>(k - 1)];
    }
  }

  /// Associative merge; counts of `other` are added to this table.
  void merge(const CountTable& other) {
    if (other.alphabet_ != alphabet_ || other.n_hat_ != n_hat_) {
      throw InputError("cannot merge count tables with different shapes");
    }
    for (int k = 1; k <= n_hat_; ++k) {
      for (const auto& [hkey, node] : other.orders_[static_cast<std::size_t>(k - 1)]) {
        const auto h = unkey(hkey);
        for (const auto& [o, c] : node.continuations) add_event(k, h, o, c);
      }
    }
  }

  /// Node for a history of length k-1 at order k, or nullptr when unseen.
  const Node* find(std::span<const Symbol> history) const {
    const std::size_t k = history.size() + 1;
    if (k > static_cast<std::size_t>(n_hat_)) throw InputError("history longer than n̂-1");
    const auto& m = orders_[k - 1];
    auto it = m.find(key(history));
    return it == m.end() ? nullptr : &it->second;
  }

  std::uint64_t count(std::span<const Symbol> history, std::size_t outcome) const {
    const Node* n = find(history);
    return n ? n->count(outcome) : 0;
  }
  std::uint64_t history_total(std::span<const Symbol> history) const {
    const Node* n = find(history);
    return n ? n->total : 0;
  }
  // N_T(•, y) at order k.
  std::size_t types_before(int k, std::size_t outcome) const {
    return type_by_outcome_[static_cast<std::size_t>(k - 1)][outcome];
  }
  // N_T(•, •) at order k.
  std::size_t types_total(int k) const { return type_total_[static_cast<std::size_t>(k - 1)]; }

  std::size_t num_histories(int k) const { return orders_[static_cast<std::size_t>(k - 1)].size(); }

  template <class F>
  void for_each_node(int k, F&& f) const {
    for (const auto& [hkey, node] : orders_[static_cast<std::size_t>(k - 1)]) f(unkey(hkey), node);
  }

  /// Sorted "k<TAB>h-ids<TAB>y-id<TAB>count" lines; EOS is written with its
  /// symbol id |Σ|+1.
  void write(std::ostream& os) const {
    std::vector<std::tuple<int, std::vector<Symbol>, Symbol, std::uint64_t>> rows;
    for (int k = 1; k <= n_hat_; ++k) {
      for_each_node(k, [&](const std::vector<Symbol>& h, const Node& node) {
        for (const auto& [o, c] : node.continuations) {
          const Symbol y = o == alphabet_.eos_index() ? alphabet_.eos() : o;
          rows.emplace_back(k, h, y, c);
        }
      });
    }
    std::sort(rows.begin(), rows.end());
    for (const auto& [k, h, y, c] : rows) {
      os << k << '\t';
      for (std::size_t i = 0; i < h.size(); ++i) os << (i ? " " : "") << h[i];
      os << '\t' << y << '\t' << c << '\n';
    }
  }

  static CountTable read(std::istream& is, Alphabet alphabet, int n_hat) {
    CountTable t(alphabet, n_hat);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::vector<std::string> fields;
      std::size_t start = 0;
      for (;;) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (fields.size() != 4) throw InputError("count line " + std::to_string(lineno) + ": expected 4 fields");
      const int k = std::stoi(fields[0]);
      std::vector<Symbol> h;
      std::istringstream hs(fields[1]);
      for (unsigned long v; hs >> v;) h.push_back(static_cast<Symbol>(v));
      const auto y = static_cast<Symbol>(std::stoul(fields[2]));
      const auto c = static_cast<std::uint64_t>(std::stoull(fields[3]));
      if (k < 1 || k > n_hat || h.size() != static_cast<std::size_t>(k - 1)) {
        throw InputError("count line " + std::to_string(lineno) + ": bad order/history");
      }
      std::size_t outcome;
      if (y == alphabet.eos()) {
        outcome = alphabet.eos_index();
      } else if (alphabet.is_symbol(y)) {
        outcome = y;
      } else {
        throw InputError("count line " + std::to_string(lineno) + ": bad outcome id");
      }
      t.add_event(k, h, outcome, c);
    }
    return t;
  }

 private:
  static std::u16string key(std::span<const Symbol> h) {
    std::u16string s(h.size(), u'\0');
    for (std::size_t i = 0; i < h.size(); ++i) s[i] = static_cast<char16_t>(h[i]);
    return s;
  }
  static std::vector<Symbol> unkey(const std::u16string& s) {
    return std::vector<Symbol>(s.begin(), s.end());
  }

  Alphabet alphabet_;
  int n_hat_;
  std::vector<std::unordered_map<std::u16string, Node>> orders_;
  std::vector<std::vector<std::size_t>> type_by_outcome_;
  std::vector<std::size_t> type_total_;
};

inline CountTable count(const Corpus& corpus, const Alphabet& alphabet, int n_hat) {
  CountTable t(alphabet, n_hat);
  t.add(corpus);
  return t;
}

enum class Smoothing { mle, add_lambda, absolute_discounting, witten_bell };

inline std::string to_string(Smoothing m) {
  switch (m) {
    case Smoothing::mle: return "mle";
    case Smoothing::add_lambda: return "add_lambda";
    case Smoothing::absolute_discounting: return "absolute_discounting";
    case Smoothing::witten_bell: return "witten_bell";
  }
  return "mle";
}

inline Smoothing parse_smoothing(const std::string& s) {
  if (s == "mle") return Smoothing::mle;
  if (s == "add_lambda") return Smoothing::add_lambda;
  if (s == "absolute_discounting") return Smoothing::absolute_discounting;
  if (s == "witten_bell") return Smoothing::witten_bell;
  throw InputError("unknown smoothing method '" + s + "'");
}

struct SmoothingConfig {
  Smoothing method = Smoothing::mle;
  double param = 0.0;  // λ for add-λ, δ for absolute discounting
  int n_hat = 2;
};

// Hyperparameter grids for the tunable methods.
inline const std::vector<double>& default_lambda_grid() {
  static const std::vector<double> g{0.01, 0.1, 1.0};
  return g;
}
inline const std::vector<double>& default_delta_grid() {
  static const std::vector<double> g{0.6, 0.8, 0.95};
  return g;
}

namespace detail {

inline std::size_t outcome_index(const Alphabet& a, Symbol y) {
  if (y == a.eos()) return a.eos_index();
  if (a.is_symbol(y)) return y;
  throw InputError("outcome id " + std::to_string(y) + " is neither a symbol nor EOS");
}

}  // namespace detail

/// C(h y) / C(h), or nullopt when the history was never observed.
inline std::optional<double> mle(const CountTable& tbl, std::span<const Symbol> h, Symbol y) {
  const std::size_t o = detail::outcome_index(tbl.alphabet(), y);
  const auto* node = tbl.find(h);
  if (!node || node->total == 0) return std::nullopt;
  return static_cast<double>(node->count(o)) / static_cast<double>(node->total);
}

/// (C(h y) + λ) / (C(h) + (|Σ|+1) λ).
inline double add_lambda(const CountTable& tbl, double lambda, std::span<const Symbol> h, Symbol y) {
  if (!(lambda > 0.0)) throw InputError("add-λ requires λ > 0");
  const std::size_t o = detail::outcome_index(tbl.alphabet(), y);
  const auto* node = tbl.find(h);
  const double c = node ? static_cast<double>(node->count(o)) : 0.0;
  const double total = node ? static_cast<double>(node->total) : 0.0;
  return (c + lambda) / (total + static_cast<double>(tbl.alphabet().with_eos()) * lambda);
}

/// Interpolated absolute discounting, recursing through every shorter
/// suffix of h down to the uniform order-0 distribution.
inline double absolute_discounting(const CountTable& tbl, double delta, std::span<const Symbol> h,
                                   Symbol y) {
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("absolute discounting requires 0 < δ <= 1");
  const std::size_t o = detail::outcome_index(tbl.alphabet(), y);
  double q = 1.0 / static_cast<double>(tbl.alphabet().with_eos());
  for (std::size_t len = 0; len <= h.size(); ++len) {
    const auto* node = tbl.find(h.last(len));
    if (!node || node->total == 0) continue;
    const double total = static_cast<double>(node->total);
    const double c = static_cast<double>(node->count(o));
    q = std::max(c - delta, 0.0) / total + delta * static_cast<double>(node->types()) / total * q;
  }
  return q;
}

/// Witten-Bell interpolation: (C(h y) + N_T(h,•) q_{k-1}) / (N_T(h,•) + C(h)).
inline double witten_bell(const CountTable& tbl, std::span<const Symbol> h, Symbol y) {
  const std::size_t o = detail::outcome_index(tbl.alphabet(), y);
  double q = 1.0 / static_cast<double>(tbl.alphabet().with_eos());
  for (std::size_t len = 0; len <= h.size(); ++len) {
    const auto* node = tbl.find(h.last(len));
    if (!node || node->total == 0) continue;
    const double nt = static_cast<double>(node->types());
    q = (static_cast<double>(node->count(o)) + nt * q) / (nt + static_cast<double>(node->total));
  }
  return q;
}

/// Full conditional over Σ̄ for a history of any length <= n̂-1. MLE at an
/// unseen history yields an all-zero vector.
inline void smoothed_distribution(const CountTable& tbl, const SmoothingConfig& cfg,
                                  std::span<const Symbol> h, std::span<double> out) {
  const std::size_t v = tbl.alphabet().with_eos();
  switch (cfg.method) {
    case Smoothing::mle: {
      std::fill(out.begin(), out.end(), 0.0);
      const auto* node = tbl.find(h);
      if (!node || node->total == 0) return;
      for (const auto& [o, c] : node->continuations) {
        out[o] = static_cast<double>(c) / static_cast<double>(node->total);
      }
      return;
    }
    case Smoothing::add_lambda: {
      const double lambda = cfg.param;
      if (!(lambda > 0.0)) throw InputError("add-λ requires λ > 0");
      const auto* node = tbl.find(h);
      const double total = node ? static_cast<double>(node->total) : 0.0;
      const double denom = total + static_cast<double>(v) * lambda;
      std::fill(out.begin(), out.end(), lambda / denom);
      if (node) {
        for (const auto& [o, c] : node->continuations) out[o] = (static_cast<double>(c) + lambda) / denom;
      }
      return;
    }
    case Smoothing::absolute_discounting:
    case Smoothing::witten_bell: {
      const bool ad = cfg.method == Smoothing::absolute_discounting;
      const double delta = cfg.param;
      if (ad && !(delta > 0.0 && delta <= 1.0)) {
        throw InputError("absolute discounting requires 0 < δ <= 1");
      }
      std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(v));
      for (std::size_t len = 0; len <= h.size(); ++len) {
        const auto* node = tbl.find(h.last(len));
        if (!node || node->total == 0) continue;
        const double total = static_cast<double>(node->total);
        const double nt = static_cast<double>(node->types());
        if (ad) {
          const double backoff = delta * nt / total;
          for (double& q : out) q *= backoff;
          for (const auto& [o, c] : node->continuations) {
            out[o] += std::max(static_cast<double>(c) - delta, 0.0) / total;
          }
        } else {
          const double denom = nt + total;
          for (double& q : out) q *= nt / denom;
          for (const auto& [o, c] : node->continuations) out[o] += static_cast<double>(c) / denom;
        }
      }
      return;
    }
  }
}

/// Lazily evaluated LM view of a count table under one smoothing config.
class SmoothedLM final : public NGramLM {
 public:
  SmoothedLM(std::shared_ptr<const CountTable> table, SmoothingConfig cfg)
      : NGramLM(table->alphabet(), cfg.n_hat), table_(std::move(table)), cfg_(cfg) {
    if (cfg.n_hat > table_->n_hat()) throw InputError("fitted order exceeds the counted order");
  }

  std::string family() const override { return to_string(cfg_.method); }
  bool cheap_point_queries() const override { return true; }
  const SmoothingConfig& config() const { return cfg_; }
  const CountTable& table() const { return *table_; }

  void fill_next(std::span<const Symbol> window, std::span<double> out) const override {
    smoothed_distribution(*table_, cfg_, window, out);
  }

  double prob(std::span<const Symbol> window, Symbol y) const override {
    const Symbol target = y == alphabet().eos_index() ? alphabet().eos() : y;
    switch (cfg_.method) {
      case Smoothing::mle: return mle(*table_, window, target).value_or(0.0);
      case Smoothing::add_lambda: return add_lambda(*table_, cfg_.param, window, target);
      case Smoothing::absolute_discounting: return absolute_discounting(*table_, cfg_.param, window, target);
      case Smoothing::witten_bell: return witten_bell(*table_, window, target);
    }
    return 0.0;
  }

  /// True when the MLE has no estimate at this history.
  bool undefined_at(std::span<const Symbol> window) const {
    if (cfg_.method != Smoothing::mle) return false;
    const auto* node = table_->find(window);
    return !node || node->total == 0;
  }

 private:
  std::shared_ptr<const CountTable> table_;
  SmoothingConfig cfg_;
};

inline std::unique_ptr<SmoothedLM> as_lm(std::shared_ptr<const CountTable> table, const SmoothingConfig& cfg) {
  return std::make_unique<SmoothedLM>(std::move(table), cfg);
}

}  // namespace ngramlab
