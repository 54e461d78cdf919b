#pragma once

// Ancestral sampling and disjoint train/test corpus construction.

#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ngramlab/core.hpp"
#include "ngramlab/rng.hpp"

namespace ngramlab {

enum class Split { train, test, dev };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::dev: return "dev";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "dev") return Split::dev;
  throw InputError("unknown split '" + s + "'");
}

struct Corpus {
  std::vector<SymbolString> strings;
  Split split = Split::train;
  std::string lm_id;
  std::uint64_t seed = 0;

  std::size_t size() const { return strings.size(); }
};

struct SymbolStringHash {
  std::size_t operator()(const SymbolString& s) const noexcept {
    std::uint64_t h = 0x84222325cbf29ce4ULL ^ s.size();
    for (Symbol x : s) h = splitmix64(h ^ x);
    return static_cast<std::size_t>(h);
  }
};

using StringSet = std::unordered_set<SymbolString, SymbolStringHash>;

inline constexpr std::size_t kDefaultMaxStringLength = 10000;

/// Draws y_t ~ p(·|history) until EOS. BOS/EOS are not part of the result.
inline SymbolString sample_string(const NGramLM& lm, Rng& rng,
                                  std::size_t max_length = kDefaultMaxStringLength) {
  const Alphabet& a = lm.alphabet();
  const std::size_t width = lm.history_length();
  std::vector<Symbol> padded(width, a.bos());
  std::vector<double> dist(a.with_eos());
  for (;;) {
    lm.fill_next(std::span<const Symbol>(padded.data() + padded.size() - width, width), dist);
    const std::size_t y = rng.categorical(dist);
    if (y == a.eos_index()) break;
    padded.push_back(static_cast<Symbol>(y));
    if (padded.size() - width > max_length) {
      throw SamplingError("sampled string exceeded the length cap of " +
                          std::to_string(max_length) + " symbols (degenerate LM?)");
    }
  }
  return SymbolString(padded.begin() + static_cast<std::ptrdiff_t>(width), padded.end());
}

inline Corpus sample_corpus(const NGramLM& lm, std::size_t count, std::uint64_t seed,
                            Split split = Split::train, std::string lm_id = {}) {
  Corpus c;
  c.split = split;
  c.lm_id = std::move(lm_id);
  c.seed = seed;
  c.strings.reserve(count);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) c.strings.push_back(sample_string(lm, rng));
  return c;
}

struct DisjointOptions {
  // Pool draws = pool_factor * (n_train + n_test), before de-duplication.
  double pool_factor = 2.0;
  // The de-duplicated pool must hold at least min(n_train + n_test,
  // min_pool_distinct) strings, otherwise the LM is too low-entropy to give
  // two meaningfully disjoint samples.
  std::size_t min_pool_distinct = 16;
  // Each side gives up after max_draw_factor * requested draws.
  double max_draw_factor = 16.0;
  std::size_t max_length = kDefaultMaxStringLength;
};

/// Five-step protocol: (1) sample a de-duplicated pool, (2) split it 50/50
/// into train-allowed and test-allowed sets, (3) sample a multiset per side,
/// (4) drop strings allowed only on the other side, (5) keep the requested
/// number. Steps 3-5 run as one stream per side that stops at the requested
/// size. Strings never seen in the pool are assigned to a side by a seeded
/// hash, so set-level disjointness holds for every string.
inline std::pair<Corpus, Corpus> make_disjoint_corpora(const NGramLM& lm, std::size_t n_train,
                                                       std::size_t n_test, std::uint64_t seed,
                                                       const std::string& lm_id = {},
                                                       const DisjointOptions& opts = {}) {
  if (n_train < 1 || n_test < 1) throw InputError("corpus sizes must be >= 1");
  const Rng root(seed);

  // (1)
  Rng pool_rng = root.split("pool");
  const auto draws = static_cast<std::size_t>(opts.pool_factor * static_cast<double>(n_train + n_test));
  std::vector<SymbolString> pool;
  StringSet seen;
  for (std::size_t i = 0; i < draws; ++i) {
    auto y = sample_string(lm, pool_rng, opts.max_length);
    if (seen.insert(y).second) pool.push_back(std::move(y));
  }
  const std::size_t needed = std::min(n_train + n_test, opts.min_pool_distinct);
  if (pool.size() < needed) {
    throw ProtocolError("cannot build disjoint corpora: " + std::to_string(draws) +
                        " pool draws gave only " + std::to_string(pool.size()) +
                        " distinct strings (need " + std::to_string(needed) + ")");
  }

  // (2)
  Rng part_rng = root.split("partition");
  part_rng.shuffle(pool);
  StringSet allowed[2];
  for (std::size_t i = 0; i < pool.size(); ++i) allowed[i < pool.size() / 2 ? 0 : 1].insert(pool[i]);
  const std::uint64_t side_salt = derive_seed(seed, "unseen-side");
  auto side_of = [&](const SymbolString& y) -> int {
    if (allowed[0].count(y)) return 0;
    if (allowed[1].count(y)) return 1;
    return static_cast<int>(SymbolStringHash{}(y) ^ side_salt) & 1;
  };

  // (3)-(5)
  auto fill = [&](int side, std::size_t target, const char* label) {
    Corpus c;
    c.split = side == 0 ? Split::train : Split::test;
    c.lm_id = lm_id;
    c.seed = seed;
    c.strings.reserve(target);
    Rng rng = root.split(label);
    const auto max_draws = static_cast<std::size_t>(opts.max_draw_factor * static_cast<double>(target));
    std::size_t drawn = 0, rejected = 0;
    while (c.size() < target) {
      if (drawn >= max_draws) {
        throw ProtocolError(std::string("cannot fill the ") + label + " side disjointly: " +
                            std::to_string(c.size()) + "/" + std::to_string(target) +
                            " strings after " + std::to_string(drawn) + " draws (" +
                            std::to_string(rejected) + " rejected)");
      }
      auto y = sample_string(lm, rng, opts.max_length);
      ++drawn;
      if (side_of(y) == side) {
        c.strings.push_back(std::move(y));
      } else {
        ++rejected;
      }
    }
    return c;
  };
  Corpus train = fill(0, n_train, "train");
  Corpus test = fill(1, n_test, "test");
  return {std::move(train), std::move(test)};
}

/// Seeded split of a corpus into two parts by whole strings; `fraction` of
/// the strings land in the first part.
inline std::pair<Corpus, Corpus> split_corpus(const Corpus& c, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  const auto cut = static_cast<std::size_t>(fraction * static_cast<double>(c.size()));
  Corpus a, b;
  a.split = c.split;
  b.split = Split::dev;
  a.lm_id = b.lm_id = c.lm_id;
  a.seed = b.seed = seed;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (i < cut ? a : b).strings.push_back(c.strings[idx[i]]);
  }
  return {std::move(a), std::move(b)};
}

// Text format: one string per line, space-separated decimal ids; an empty
// line is the empty string.
inline void write_corpus_text(std::ostream& os, const Corpus& c) {
  for (const auto& y : c.strings) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (i) os << ' ';
      os << y[i];
    }
    os << '\n';
  }
}

inline std::vector<SymbolString> read_corpus_text(std::istream& is) {
  std::vector<SymbolString> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    SymbolString y;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw InputError("bad symbol id '" + tok + "' in corpus");
      y.push_back(static_cast<Symbol>(v));
    }
    out.push_back(std::move(y));
  }
  return out;
}

}  // namespace ngramlab
