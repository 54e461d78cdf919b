#pragma once

// Alphabet, strings, histories and the autoregressive LM contract.
//
// Plain symbols are dense ids 0..|Σ|-1. BOS = |Σ| and EOS = |Σ|+1. A
// conditional distribution is indexed by plain symbols followed by EOS, so
// EOS sits at index |Σ| inside the probability vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ngramlab/error.hpp"

namespace ngramlab {

using Symbol = std::uint32_t;
using SymbolString = std::vector<Symbol>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

class Alphabet {
 public:
  explicit Alphabet(std::size_t size) : size_(size) {
    if (size == 0) throw InputError("alphabet must be non-empty");
  }

  std::size_t size() const { return size_; }
  Symbol bos() const { return static_cast<Symbol>(size_); }
  Symbol eos() const { return static_cast<Symbol>(size_ + 1); }
  // Position of EOS inside a ConditionalDistribution.
  std::size_t eos_index() const { return size_; }
  std::size_t with_eos() const { return size_ + 1; }
  std::size_t with_bos() const { return size_ + 1; }

  bool is_symbol(Symbol s) const { return s < size_; }

  void validate(std::span<const Symbol> y) const {
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!is_symbol(y[i])) {
        throw InputError("symbol id " + std::to_string(y[i]) + " at position " +
                         std::to_string(i) + " outside alphabet of size " +
                         std::to_string(size_));
      }
    }
  }

  friend bool operator==(const Alphabet&, const Alphabet&) = default;

 private:
  std::size_t size_;
};

/// Throws unless `window` is a well-formed history of an order-`order` model:
/// exactly order-1 ids from Σ ∪ {BOS}, BOS only as a contiguous prefix.
inline void validate_history(std::span<const Symbol> window, const Alphabet& alphabet, int order) {
  if (order < 1) throw InputError("model order must be >= 1");
  if (window.size() != static_cast<std::size_t>(order - 1)) {
    throw InputError("history length " + std::to_string(window.size()) + " != order-1 = " +
                     std::to_string(order - 1));
  }
  bool seen_plain = false;
  for (Symbol s : window) {
    if (s == alphabet.bos()) {
      if (seen_plain) throw InputError("BOS after a plain symbol in history");
    } else if (alphabet.is_symbol(s)) {
      seen_plain = true;
    } else {
      throw InputError("history id " + std::to_string(s) + " is neither a symbol nor BOS");
    }
  }
}

class History {
 public:
  History(std::vector<Symbol> window, const Alphabet& alphabet, int order)
      : window_(std::move(window)) {
    validate_history(window_, alphabet, order);
  }

  static History start(const Alphabet& alphabet, int order) {
    return History(std::vector<Symbol>(static_cast<std::size_t>(order - 1), alphabet.bos()),
                   alphabet, order);
  }

  std::span<const Symbol> window() const { return window_; }
  std::size_t size() const { return window_.size(); }
  Symbol operator[](std::size_t i) const { return window_[i]; }

  friend bool operator==(const History&, const History&) = default;

 private:
  std::vector<Symbol> window_;
};

/// The n-1 symbols preceding 1-based position t of y, left-padded with BOS.
/// t = |y|+1 addresses the EOS factor.
inline History history_at(const Alphabet& alphabet, std::span<const Symbol> y, std::size_t t,
                          int order) {
  if (t < 1 || t > y.size() + 1) {
    throw InputError("position " + std::to_string(t) + " outside [1, " +
                     std::to_string(y.size() + 1) + "]");
  }
  alphabet.validate(y);
  const std::size_t width = static_cast<std::size_t>(order - 1);
  std::vector<Symbol> window(width, alphabet.bos());
  // Position t-1 (0-based) is predicted; symbols y[t-1-width .. t-2] precede it.
  for (std::size_t k = 0; k < width; ++k) {
    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - 1 -
                               static_cast<std::ptrdiff_t>(width) + static_cast<std::ptrdiff_t>(k);
    if (src >= 0) window[k] = y[static_cast<std::size_t>(src)];
  }
  return History(std::move(window), alphabet, order);
}

class ConditionalDistribution {
 public:
  explicit ConditionalDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    for (double p : probs_) {
      if (!std::isfinite(p) || p < 0.0) throw InputError("probabilities must be finite and >= 0");
    }
  }

  std::span<const double> probs() const { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }
  double eos() const { return probs_.back(); }
  std::size_t size() const { return probs_.size(); }

  double sum() const { return std::accumulate(probs_.begin(), probs_.end(), 0.0); }
  bool normalized(double tol = 1e-9) const { return std::abs(sum() - 1.0) <= tol; }

  // All-zero vector: the estimator has no opinion at this history (MLE on an
  // unseen history).
  bool undefined() const {
    return std::all_of(probs_.begin(), probs_.end(), [](double p) { return p == 0.0; });
  }

 private:
  std::vector<double> probs_;
};

/// Base of every n-gram LM: ground truth, smoothed counts, trained networks.
/// Implementations are immutable after construction and safe to query from
/// many threads.
class NGramLM {
 public:
  NGramLM(Alphabet alphabet, int order) : alphabet_(alphabet), order_(order) {
    if (order < 1) throw InputError("model order must be >= 1");
  }
  virtual ~NGramLM() = default;

  const Alphabet& alphabet() const { return alphabet_; }
  int order() const { return order_; }
  std::size_t history_length() const { return static_cast<std::size_t>(order_ - 1); }

  ConditionalDistribution next(const History& h) const {
    validate_history(h.window(), alphabet_, order_);
    std::vector<double> out(alphabet_.with_eos());
    fill_next(h.window(), out);
    return ConditionalDistribution(std::move(out));
  }

  /// Writes p(· | window) into out (|Σ̄| entries). The window must already be
  /// a valid history; hot loops call this directly.
  virtual void fill_next(std::span<const Symbol> window, std::span<double> out) const = 0;

  virtual double prob(std::span<const Symbol> window, Symbol y) const {
    std::vector<double> out(alphabet_.with_eos());
    fill_next(window, out);
    return out[y == alphabet_.eos() ? alphabet_.eos_index() : y];
  }

  virtual std::string family() const = 0;

  // True when prob() is much cheaper than fill_next(); scorers then skip
  // caching whole distributions.
  virtual bool cheap_point_queries() const { return false; }

 private:
  Alphabet alphabet_;
  int order_;
};

/// Natural-log probability of y under lm: Σ_t ln p(y_t | history_t) plus the
/// EOS factor. Returns -inf as soon as one factor is zero.
inline double string_logprob(const NGramLM& lm, std::span<const Symbol> y) {
  const Alphabet& a = lm.alphabet();
  a.validate(y);
  const std::size_t width = lm.history_length();
  std::vector<Symbol> padded(width, a.bos());
  padded.insert(padded.end(), y.begin(), y.end());
  double total = 0.0;
  for (std::size_t t = 0; t <= y.size(); ++t) {
    const std::span<const Symbol> window(padded.data() + t, width);
    const Symbol target = t < y.size() ? y[t] : a.eos();
    const double p = lm.prob(window, target);
    if (p <= 0.0) return kNegInf;
    total += std::log(p);
  }
  return total;
}

/// Rescales a distribution over Σ by (1 - 1/E[|y|]) and appends EOS with
/// probability exactly 1/E[|y|].
inline std::vector<double> apply_eos_rule(std::span<const double> dist_over_symbols,
                                          double expected_length) {
  if (!(expected_length > 1.0) || !std::isfinite(expected_length)) {
    throw SpecError("expected length must be a finite real > 1");
  }
  const double total = std::accumulate(dist_over_symbols.begin(), dist_over_symbols.end(), 0.0);
  if (dist_over_symbols.empty() || std::abs(total - 1.0) > 1e-9) {
    throw InputError("apply_eos_rule: input must sum to 1");
  }
  const double eos = 1.0 / expected_length;
  const double keep = 1.0 - eos;
  std::vector<double> out;
  out.reserve(dist_over_symbols.size() + 1);
  for (double p : dist_over_symbols) out.push_back(keep * p);
  out.push_back(eos);
  return out;
}

namespace detail {

inline void softmax_inplace(std::span<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : x) v /= z;
}

inline std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (r > std::numeric_limits<std::size_t>::max() / base) {
      return std::numeric_limits<std::size_t>::max();
    }
    r *= base;
  }
  return r;
}

}  // namespace detail

/// Conditional table over every BOS-padded history, stored densely with
/// histories encoded in base |Σ̲| (oldest symbol most significant).
class TabularLM final : public NGramLM {
 public:
  static constexpr std::size_t kDefaultMaxEntries = std::size_t{1} << 26;

  TabularLM(Alphabet alphabet, int order, std::string family = "general",
            std::uint64_t seed = 0, std::size_t max_entries = kDefaultMaxEntries)
      : NGramLM(alphabet, order), family_(std::move(family)), seed_(seed) {
    const std::size_t slots = detail::ipow(alphabet.with_bos(), history_length());
    if (slots == std::numeric_limits<std::size_t>::max() ||
        slots > max_entries / alphabet.with_eos()) {
      throw ResourceError("tabular LM with " + std::to_string(alphabet.size()) +
                          " symbols and order " + std::to_string(order) +
                          " exceeds the table cap of " + std::to_string(max_entries) +
                          " entries");
    }
    probs_.assign(slots * alphabet.with_eos(), 0.0);
    present_.assign(slots, 0);
  }

  std::string family() const override { return family_; }
  bool cheap_point_queries() const override { return true; }
  std::uint64_t seed() const { return seed_; }

  std::size_t slot_of(std::span<const Symbol> window) const {
    std::size_t idx = 0;
    for (Symbol s : window) idx = idx * alphabet().with_bos() + s;
    return idx;
  }

  void set(std::span<const Symbol> window, std::span<const double> probs) {
    validate_history(window, alphabet(), order());
    if (probs.size() != alphabet().with_eos()) throw InputError("distribution has wrong size");
    ConditionalDistribution check({probs.begin(), probs.end()});
    if (!check.normalized()) throw InputError("distribution does not sum to 1");
    const std::size_t slot = slot_of(window);
    std::copy(probs.begin(), probs.end(), probs_.begin() + slot * alphabet().with_eos());
    present_[slot] = 1;
  }

  bool has(std::span<const Symbol> window) const { return present_[slot_of(window)] != 0; }

  void fill_next(std::span<const Symbol> window, std::span<double> out) const override {
    const std::size_t slot = slot_of(window);
    if (!present_[slot]) throw InputError("history missing from tabular LM");
    const auto first = probs_.begin() + static_cast<std::ptrdiff_t>(slot * alphabet().with_eos());
    std::copy(first, first + static_cast<std::ptrdiff_t>(alphabet().with_eos()), out.begin());
  }

  double prob(std::span<const Symbol> window, Symbol y) const override {
    const std::size_t slot = slot_of(window);
    if (!present_[slot]) throw InputError("history missing from tabular LM");
    const std::size_t col = y == alphabet().eos() ? alphabet().eos_index() : y;
    return probs_[slot * alphabet().with_eos() + col];
  }

  /// Calls f(window) for every valid BOS-padded history in slot order.
  template <class F>
  void for_each_history(F&& f) const {
    const std::size_t width = history_length();
    const std::size_t base = alphabet().with_bos();
    std::vector<Symbol> window(width);
    for (std::size_t slot = 0; slot < present_.size(); ++slot) {
      std::size_t rest = slot;
      for (std::size_t k = width; k-- > 0;) {
        window[k] = static_cast<Symbol>(rest % base);
        rest /= base;
      }
      if (is_padded_history(window)) f(std::span<const Symbol>(window));
    }
  }

  bool complete() const {
    bool ok = true;
    for_each_history([&](std::span<const Symbol> w) { ok = ok && has(w); });
    return ok;
  }

  std::size_t num_histories() const {
    std::size_t n = 0;
    for (std::size_t j = 0; j <= history_length(); ++j) {
      n += detail::ipow(alphabet().size(), history_length() - j);
    }
    return n;
  }

 private:
  bool is_padded_history(std::span<const Symbol> w) const {
    bool seen_plain = false;
    for (Symbol s : w) {
      if (s == alphabet().bos()) {
        if (seen_plain) return false;
      } else {
        seen_plain = true;
      }
    }
    return true;
  }

  std::string family_;
  std::uint64_t seed_;
  std::vector<double> probs_;
  std::vector<std::uint8_t> present_;
};

/// p(ȳ | h) = softmax(E · concat(V[h_1], ..., V[h_{n-1}])).
///
/// V is a per-symbol vector table over Σ̲ (identity for one-hot
/// representations). E has either |Σ| rows, in which case EOS is hard-coded
/// with `eos_prob`, or |Σ̄| rows, in which case EOS is an ordinary logit.
class RepresentationLM final : public NGramLM {
 public:
  struct Params {
    std::string family;          // "sparse" | "dense"
    std::size_t symbol_dim = 0;  // D' (|Σ̲| for one-hot)
    std::size_t rank = 0;        // R for factored outputs, 0 otherwise
    std::vector<double> symbol_vectors;  // |Σ̲| x D', row-major
    std::vector<double> e1;              // rows x R (or rows x D when rank == 0)
    std::vector<double> e2;              // R x D (empty when rank == 0)
    std::size_t output_rows = 0;         // |Σ| or |Σ̄|
    double eos_prob = 0.0;               // used when output_rows == |Σ|
    std::uint64_t seed = 0;
  };

  RepresentationLM(Alphabet alphabet, int order, Params params)
      : NGramLM(alphabet, order), params_(std::move(params)) {
    const std::size_t d_sym = params_.symbol_dim;
    const std::size_t d = d_sym * history_length();
    const std::size_t rows = params_.output_rows;
    if (rows != alphabet.size() && rows != alphabet.with_eos()) {
      throw SpecError("output matrix must have |Σ| or |Σ̄| rows");
    }
    if (d_sym == 0 || params_.symbol_vectors.size() != alphabet.with_bos() * d_sym) {
      throw SpecError("symbol vector table has wrong shape");
    }
    if (params_.rank == 0) {
      if (params_.e1.size() != rows * d) throw SpecError("output matrix has wrong shape");
      output_ = params_.e1;
    } else {
      if (params_.e1.size() != rows * params_.rank || params_.e2.size() != params_.rank * d) {
        throw SpecError("factored output matrices have wrong shape");
      }
      output_.assign(rows * d, 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t r = 0; r < params_.rank; ++r) {
          const double a = params_.e1[i * params_.rank + r];
          for (std::size_t j = 0; j < d; ++j) output_[i * d + j] += a * params_.e2[r * d + j];
        }
      }
    }
    if (rows == alphabet.size() && !(params_.eos_prob > 0.0 && params_.eos_prob < 1.0)) {
      throw SpecError("hard-coded EOS probability must lie in (0, 1)");
    }
    // contributions_[(pos * |Σ̲| + sym) * rows + i] = E[i, pos block] · V[sym]
    const std::size_t v = alphabet.with_bos();
    contributions_.assign(history_length() * v * rows, 0.0);
    for (std::size_t pos = 0; pos < history_length(); ++pos) {
      for (std::size_t sym = 0; sym < v; ++sym) {
        const double* vec = &params_.symbol_vectors[sym * d_sym];
        double* dst = &contributions_[(pos * v + sym) * rows];
        for (std::size_t i = 0; i < rows; ++i) {
          const double* erow = &output_[i * d + pos * d_sym];
          double acc = 0.0;
          for (std::size_t k = 0; k < d_sym; ++k) acc += erow[k] * vec[k];
          dst[i] = acc;
        }
      }
    }
  }

  std::string family() const override { return params_.family; }
  const Params& params() const { return params_; }
  std::size_t representation_dim() const { return params_.symbol_dim * history_length(); }

  /// Output matrix E (rows x D), row-major; E = E1·E2 when factored.
  const std::vector<double>& output_matrix() const { return output_; }

  std::vector<double> representation(std::span<const Symbol> window) const {
    std::vector<double> h;
    h.reserve(representation_dim());
    for (Symbol s : window) {
      const double* vec = &params_.symbol_vectors[s * params_.symbol_dim];
      h.insert(h.end(), vec, vec + params_.symbol_dim);
    }
    return h;
  }

  void fill_next(std::span<const Symbol> window, std::span<double> out) const override {
    const std::size_t rows = params_.output_rows;
    const std::size_t v = alphabet().with_bos();
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(rows), 0.0);
    for (std::size_t pos = 0; pos < window.size(); ++pos) {
      const double* c = &contributions_[(pos * v + window[pos]) * rows];
      for (std::size_t i = 0; i < rows; ++i) out[i] += c[i];
    }
    detail::softmax_inplace(out.first(rows));
    if (rows == alphabet().size()) {
      const double keep = 1.0 - params_.eos_prob;
      for (std::size_t i = 0; i < rows; ++i) out[i] *= keep;
      out[alphabet().eos_index()] = params_.eos_prob;
    }
  }

 private:
  Params params_;
  std::vector<double> output_;
  std::vector<double> contributions_;
};

}  // namespace ngramlab
