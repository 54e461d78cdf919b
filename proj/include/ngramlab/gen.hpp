#pragma once

// Random ground-truth n-gram LMs: general (Dirichlet tables), sparse
// (one-hot representations) and dense (random embeddings, rank-R output).

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ngramlab/core.hpp"
#include "ngramlab/rng.hpp"

namespace ngramlab {

struct GeneralLMSpec {
  int n = 2;
  std::size_t alphabet_size = 8;
  double alpha = 0.1;
  double expected_length = 40.0;
  std::uint64_t seed = 0;
  std::size_t max_entries = TabularLM::kDefaultMaxEntries;
};

enum class RepresentationKind { sparse, dense };

inline std::string to_string(RepresentationKind k) {
  return k == RepresentationKind::sparse ? "sparse" : "dense";
}

struct RepLMSpec {
  int n = 4;
  std::size_t alphabet_size = 64;
  RepresentationKind kind = RepresentationKind::dense;
  std::size_t embed_dim = 16;  // dense only
  std::size_t rank = 8;        // dense only
  double expected_length = 40.0;
  std::uint64_t seed = 0;
};

/// One Dirichlet(alpha·1) draw over Σ per BOS-padded history, EOS
/// hard-coded to 1/E[|y|]. Histories are visited in slot order, which fixes
/// the draw order for a seed.
inline std::unique_ptr<TabularLM> generate_general(const GeneralLMSpec& spec) {
  if (spec.n < 2) throw SpecError("ground-truth order must be >= 2");
  if (!(spec.alpha > 0.0)) throw SpecError("Dirichlet concentration must be > 0");
  if (!(spec.expected_length > 1.0)) throw SpecError("expected length must be > 1");
  Alphabet alphabet(spec.alphabet_size);
  auto lm = std::make_unique<TabularLM>(alphabet, spec.n, "general", spec.seed, spec.max_entries);
  Rng rng = Rng(spec.seed).split("general");
  std::vector<std::vector<Symbol>> histories;
  lm->for_each_history([&](std::span<const Symbol> w) { histories.emplace_back(w.begin(), w.end()); });
  for (const auto& w : histories) {
    const auto over_symbols = rng.dirichlet(alphabet.size(), spec.alpha);
    lm->set(w, apply_eos_rule(over_symbols, spec.expected_length));
  }
  return lm;
}

inline void validate(const RepLMSpec& spec) {
  if (spec.n < 2) throw SpecError("ground-truth order must be >= 2");
  if (spec.alphabet_size == 0) throw SpecError("alphabet must be non-empty");
  if (!(spec.expected_length > 1.0)) throw SpecError("expected length must be > 1");
  if (spec.kind == RepresentationKind::dense) {
    if (spec.embed_dim == 0) throw SpecError("embedding dimension must be positive");
    const std::size_t d = static_cast<std::size_t>(spec.n - 1) * spec.embed_dim;
    if (spec.rank == 0 || spec.rank > std::min(spec.alphabet_size, d)) {
      throw SpecError("rank " + std::to_string(spec.rank) + " must lie in [1, min(|Σ|, D)] = [1, " +
                      std::to_string(std::min(spec.alphabet_size, d)) + "]");
    }
  }
}

/// Sparse: E (|Σ| x (n-1)|Σ̲|) iid N(0,1) over one-hot histories.
/// Dense: symbol embeddings (over Σ̲) iid N(0,1) in R^D', E = E1·E2 with
/// E1 (|Σ| x R) and E2 (R x D) iid N(0,1).
inline std::unique_ptr<RepresentationLM> generate_representation(const RepLMSpec& spec) {
  validate(spec);
  Alphabet alphabet(spec.alphabet_size);
  const std::size_t v = alphabet.with_bos();
  const std::size_t width = static_cast<std::size_t>(spec.n - 1);
  Rng rng = Rng(spec.seed).split(to_string(spec.kind));

  RepresentationLM::Params p;
  p.family = to_string(spec.kind);
  p.output_rows = alphabet.size();
  p.eos_prob = 1.0 / spec.expected_length;
  p.seed = spec.seed;
  if (spec.kind == RepresentationKind::sparse) {
    p.symbol_dim = v;
    p.symbol_vectors.assign(v * v, 0.0);
    for (std::size_t i = 0; i < v; ++i) p.symbol_vectors[i * v + i] = 1.0;
    p.rank = 0;
    p.e1.resize(alphabet.size() * width * v);
    for (double& x : p.e1) x = rng.normal();
  } else {
    const std::size_t d = width * spec.embed_dim;
    p.symbol_dim = spec.embed_dim;
    p.rank = spec.rank;
    p.symbol_vectors.resize(v * spec.embed_dim);
    for (double& x : p.symbol_vectors) x = rng.normal();
    p.e1.resize(alphabet.size() * spec.rank);
    for (double& x : p.e1) x = rng.normal();
    p.e2.resize(spec.rank * d);
    for (double& x : p.e2) x = rng.normal();
  }
  return std::make_unique<RepresentationLM>(alphabet, spec.n, std::move(p));
}

/// Materializes any LM as a table over all BOS-padded histories.
inline std::unique_ptr<TabularLM> to_tabular(const NGramLM& lm, std::uint64_t seed = 0,
                                             std::size_t max_entries = TabularLM::kDefaultMaxEntries) {
  auto table = std::make_unique<TabularLM>(lm.alphabet(), lm.order(), lm.family(), seed, max_entries);
  std::vector<std::vector<Symbol>> histories;
  table->for_each_history([&](std::span<const Symbol> w) { histories.emplace_back(w.begin(), w.end()); });
  std::vector<double> buf(lm.alphabet().with_eos());
  for (const auto& w : histories) {
    lm.fill_next(w, buf);
    table->set(w, buf);
  }
  return table;
}

}  // namespace ngramlab
