#pragma once

// File formats: LM JSON (tabular and representation-backed), corpus text +
// sidecar, and a JSON writer that prints every real with 17 significant
// digits.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ngramlab/core.hpp"
#include "ngramlab/corpus.hpp"

namespace ngramlab {

using Json = nlohmann::ordered_json;

namespace detail {

inline void write_real(std::ostream& os, double v) {
  if (!std::isfinite(v)) throw InputError("non-finite real cannot be written as JSON");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  // Keep reals recognizable as reals when they happen to be integral.
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  os << s;
}

inline void write_json_impl(std::ostream& os, const Json& j, int indent, int depth) {
  const auto pad = [&](int d) {
    if (indent >= 0) {
      os << '\n';
      for (int i = 0; i < d * indent; ++i) os << ' ';
    }
  };
  switch (j.type()) {
    case Json::value_t::object: {
      os << '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ',';
        first = false;
        pad(depth + 1);
        os << Json(it.key()).dump() << (indent >= 0 ? ": " : ":");
        write_json_impl(os, it.value(), indent, depth + 1);
      }
      if (!j.empty()) pad(depth);
      os << '}';
      break;
    }
    case Json::value_t::array: {
      // Numeric arrays stay on one line.
      const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_number(); });
      os << '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) os << ',';
        first = false;
        if (!flat) pad(depth + 1);
        write_json_impl(os, e, indent, depth + 1);
      }
      if (!flat && !j.empty()) pad(depth);
      os << ']';
      break;
    }
    case Json::value_t::number_float:
      write_real(os, j.get<double>());
      break;
    default:
      os << j.dump();
  }
}

}  // namespace detail

inline void write_json(std::ostream& os, const Json& j, int indent = 1) {
  detail::write_json_impl(os, j, indent, 0);
  os << '\n';
}

inline std::string write_json(const Json& j, int indent = 1) {
  std::ostringstream os;
  write_json(os, j, indent);
  return os.str();
}

/// Writes to path.tmp then renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw InputError("cannot write " + tmp.string());
    os << contents;
    if (!os) throw InputError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ostringstream os;
  write_json(os, j);
  write_file_atomic(path, os.str());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline Json read_json_file(const std::filesystem::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- LM files

inline Json lm_to_json(const NGramLM& lm) {
  Json j;
  if (const auto* tab = dynamic_cast<const TabularLM*>(&lm)) {
    j["family"] = tab->family();
    j["order"] = tab->order();
    j["alphabet_size"] = tab->alphabet().size();
    j["seed"] = tab->seed();
    Json table = Json::array();
    tab->for_each_history([&](std::span<const Symbol> w) {
      std::vector<double> probs(tab->alphabet().with_eos());
      tab->fill_next(w, probs);
      Json row;
      row["history"] = std::vector<Symbol>(w.begin(), w.end());
      row["probs"] = probs;
      table.push_back(std::move(row));
    });
    j["table"] = std::move(table);
    return j;
  }
  if (const auto* rep = dynamic_cast<const RepresentationLM*>(&lm)) {
    const auto& p = rep->params();
    const bool one_hot = p.family == "sparse";
    const std::size_t d = rep->representation_dim();
    auto rows_of = [](const std::vector<double>& flat, std::size_t cols) {
      Json m = Json::array();
      if (cols == 0) return m;
      for (std::size_t i = 0; i < flat.size(); i += cols) {
        m.push_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(i),
                                        flat.begin() + static_cast<std::ptrdiff_t>(i + cols)));
      }
      return m;
    };
    j["family"] = p.family;
    j["order"] = rep->order();
    j["alphabet_size"] = rep->alphabet().size();
    j["embed_dim"] = p.symbol_dim;
    j["rank"] = p.rank;
    // One-hot symbol vectors are implied by the family.
    j["embeddings"] = one_hot ? Json::array() : rows_of(p.symbol_vectors, p.symbol_dim);
    j["E1"] = rows_of(p.e1, p.rank == 0 ? d : p.rank);
    j["E2"] = rows_of(p.e2, d);
    if (p.output_rows == rep->alphabet().size()) {
      j["eos_prob"] = p.eos_prob;
    } else {
      j["eos_prob"] = nullptr;
    }
    j["seed"] = p.seed;
    return j;
  }
  throw InputError("only tabular and representation-backed LMs have a file format");
}

inline std::unique_ptr<NGramLM> lm_from_json(const Json& j) {
  try {
    const std::string family = j.at("family").get<std::string>();
    const int order = j.at("order").get<int>();
    const Alphabet alphabet(j.at("alphabet_size").get<std::size_t>());
    const std::uint64_t seed = j.value("seed", std::uint64_t{0});
    if (j.contains("table")) {
      auto lm = std::make_unique<TabularLM>(alphabet, order, family, seed);
      for (const auto& row : j.at("table")) {
        lm->set(row.at("history").get<std::vector<Symbol>>(), row.at("probs").get<std::vector<double>>());
      }
      if (!lm->complete()) throw InputError("tabular LM file does not cover every history");
      return lm;
    }
    RepresentationLM::Params p;
    p.family = family;
    p.symbol_dim = j.at("embed_dim").get<std::size_t>();
    p.rank = j.at("rank").get<std::size_t>();
    p.seed = seed;
    auto flatten = [](const Json& m) {
      std::vector<double> out;
      for (const auto& row : m) {
        for (const auto& x : row) out.push_back(x.get<double>());
      }
      return out;
    };
    if (family == "sparse") {
      const std::size_t v = alphabet.with_bos();
      p.symbol_vectors.assign(v * v, 0.0);
      for (std::size_t i = 0; i < v; ++i) p.symbol_vectors[i * v + i] = 1.0;
    } else {
      p.symbol_vectors = flatten(j.at("embeddings"));
    }
    p.e1 = flatten(j.at("E1"));
    p.e2 = flatten(j.at("E2"));
    p.output_rows = j.at("E1").size();
    if (!j.at("eos_prob").is_null()) p.eos_prob = j.at("eos_prob").get<double>();
    return std::make_unique<RepresentationLM>(alphabet, order, std::move(p));
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed LM file: ") + e.what());
  }
}

inline void save_lm(const std::filesystem::path& path, const NGramLM& lm) {
  write_json_file(path, lm_to_json(lm));
}

inline std::unique_ptr<NGramLM> load_lm(const std::filesystem::path& path) {
  return lm_from_json(read_json_file(path));
}

// ------------------------------------------------------------ corpus files

inline std::filesystem::path sidecar_path(const std::filesystem::path& corpus_path) {
  return std::filesystem::path(corpus_path.string() + ".json");
}

inline void save_corpus(const std::filesystem::path& path, const Corpus& c) {
  std::ostringstream os;
  write_corpus_text(os, c);
  write_file_atomic(path, os.str());
  Json side;
  side["lm_id"] = c.lm_id;
  side["split"] = to_string(c.split);
  side["seed"] = c.seed;
  side["size"] = c.size();
  write_json_file(sidecar_path(path), side);
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  Corpus c;
  std::ifstream is(path);
  if (!is) throw InputError("cannot read corpus " + path.string());
  c.strings = read_corpus_text(is);
  const auto side_path = sidecar_path(path);
  if (std::filesystem::exists(side_path)) {
    const Json side = read_json_file(side_path);
    c.lm_id = side.value("lm_id", std::string{});
    c.split = parse_split(side.value("split", std::string{"train"}));
    c.seed = side.value("seed", std::uint64_t{0});
    const auto size = side.value("size", c.size());
    if (size != c.size()) {
      throw ProtocolError("corpus " + path.string() + " has " + std::to_string(c.size()) +
                          " strings but its sidecar says " + std::to_string(size));
    }
  }
  return c;
}

}  // namespace ngramlab
