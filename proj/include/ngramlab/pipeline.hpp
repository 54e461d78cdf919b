#pragma once

// Experiment orchestration: config grids → cells → (LM, corpora, fitted
// models, ScoreFiles, EvalReports) on disk, plus the results table, the
// regression and the aggregate report.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ngramlab/classic.hpp"
#include "ngramlab/corpus.hpp"
#include "ngramlab/eval.hpp"
#include "ngramlab/gen.hpp"
#include "ngramlab/json_io.hpp"
#include "ngramlab/neural.hpp"
#include "ngramlab/stats.hpp"

namespace ngramlab {

namespace fs = std::filesystem;

// Part of every cell hash; bump when any stage's output for a fixed spec changes.
inline constexpr const char* kPipelineVersion = "1";

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_hash(const fs::path& p) { return hex64(fnv1a64(read_file(p))); }

inline std::string format_real(double v) {
  if (v == kInf) return "inf";
  if (v == kNegInf) return "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ------------------------------------------------------------ model files

/// Serialized classic model: smoothing config plus the count table as text.
inline Json classic_model_json(const CountTable& tbl, const SmoothingConfig& cfg) {
  std::ostringstream counts;
  tbl.write(counts);
  Json j;
  j["kind"] = "classic";
  j["smoothing"] = to_string(cfg.method);
  j["param"] = cfg.param;
  j["n_hat"] = cfg.n_hat;
  j["alphabet_size"] = tbl.alphabet().size();
  j["counts"] = counts.str();
  return j;
}

/// Any scorable model file: classic, loglinear/neural checkpoint, or a
/// ground-truth LM file. A classic model either inlines its counts or names
/// a counts file relative to `base_dir`.
inline std::unique_ptr<NGramLM> model_from_json(const Json& j, const fs::path& base_dir = {}) {
  const std::string kind = j.value("kind", std::string{});
  if (kind == "classic") {
    try {
      const Alphabet a(j.at("alphabet_size").get<std::size_t>());
      SmoothingConfig cfg;
      cfg.method = parse_smoothing(j.at("smoothing").get<std::string>());
      cfg.param = j.at("param").get<double>();
      cfg.n_hat = j.at("n_hat").get<int>();
      std::istringstream is(j.contains("counts") ? j.at("counts").get<std::string>()
                                                 : read_file(base_dir / j.at("counts_file").get<std::string>()));
      auto tbl = std::make_shared<const CountTable>(CountTable::read(is, a, cfg.n_hat));
      return as_lm(std::move(tbl), cfg);
    } catch (const Json::exception& e) {
      throw InputError(std::string("malformed classic model file: ") + e.what());
    }
  }
  if (kind == "loglinear" || kind == "neural") return model_from_checkpoint(j);
  if (!kind.empty()) throw InputError("unknown model kind '" + kind + "'");
  return lm_from_json(j);
}

inline std::unique_ptr<NGramLM> load_model(const fs::path& p) {
  return model_from_json(read_json_file(p), p.parent_path());
}

// --------------------------------------------------------------- config

/// Order-grid entry: an integer, "n", "n±k", "kn", or "min(<expr>,K)".
inline int eval_order_rule(const std::string& rule, int n) {
  static const std::regex simple(R"(^\s*(\d*)\s*n\s*(([+-])\s*(\d+))?\s*$)");
  static const std::regex literal(R"(^\s*(\d+)\s*$)");
  static const std::regex minimum(R"(^\s*min\s*\((.*),\s*(\d+)\s*\)\s*$)");
  std::smatch m;
  if (std::regex_match(rule, m, literal)) return std::stoi(m[1]);
  if (std::regex_match(rule, m, minimum)) {
    const std::string inner = m[1];
    return std::min(eval_order_rule(inner, n), std::stoi(m[2]));
  }
  if (std::regex_match(rule, m, simple)) {
    int v = (m[1].length() ? std::stoi(m[1]) : 1) * n;
    if (m[2].matched) v += (m[3] == "-" ? -1 : 1) * std::stoi(m[4]);
    return v;
  }
  throw InputError("bad model-order rule '" + rule + "'");
}

/// Distinct orders >= min_order from the rules, in rule order.
inline std::vector<int> expand_orders(const std::vector<std::string>& rules, int n, int min_order = 1) {
  std::vector<int> out;
  for (const auto& r : rules) {
    const int v = eval_order_rule(r, n);
    if (v >= min_order && std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

struct FamilyGrid {
  std::string family = "general";  // general | dense | sparse
  std::vector<int> n{2};
  std::vector<std::size_t> alphabet_size{8};
  std::vector<std::size_t> rank{8};  // dense only
  std::size_t embed_dim = 16;        // dense only
  double alpha = 0.1;                // general only
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int replicates = 5;
  std::size_t n_train = 50000;
  std::size_t n_test = 30000;
  double expected_length = 40.0;
  std::vector<FamilyGrid> grids;
  std::vector<std::string> n_hat{"n-2", "n", "min(2n,20)"};
  std::vector<std::string> methods{"mle", "add_lambda", "absolute_discounting", "witten_bell", "loglinear", "neural"};
  std::vector<double> lambda_grid = default_lambda_grid();
  std::vector<double> delta_grid = default_delta_grid();
  double dev_fraction = 0.1;
  TrainConfig loglinear = loglinear_defaults();
  TrainConfig neural = neural_defaults();
  NeuralShape neural_shape;
  std::size_t score_jobs = 1;
};

inline bool is_classic_method(const std::string& m) {
  return m == "mle" || m == "add_lambda" || m == "absolute_discounting" || m == "witten_bell";
}

inline void validate(const ExperimentConfig& c) {
  if (c.replicates < 1) throw SpecError("replicates must be >= 1");
  if (c.n_train < 2 || c.n_test < 1) throw SpecError("corpus sizes too small");
  if (c.grids.empty()) throw SpecError("config has no LM grid");
  if (c.n_hat.empty()) throw SpecError("config has no model-order grid");
  if (!(c.dev_fraction > 0.0 && c.dev_fraction < 1.0)) throw SpecError("dev_fraction must lie in (0, 1)");
  for (const auto& m : c.methods) {
    if (!is_classic_method(m) && m != "loglinear" && m != "neural") throw SpecError("unknown method '" + m + "'");
  }
  for (const auto& g : c.grids) {
    if (g.family != "general" && g.family != "dense" && g.family != "sparse") {
      throw SpecError("unknown LM family '" + g.family + "'");
    }
    if (g.n.empty() || g.alphabet_size.empty()) throw SpecError("empty grid axis for " + g.family);
    if (g.family == "dense" && g.rank.empty()) throw SpecError("dense grid needs at least one rank");
    for (const auto& r : c.n_hat) {
      for (int n : g.n) eval_order_rule(r, n);
    }
  }
}

inline Json to_json(const NeuralShape& s) {
  Json j;
  j["embed_dim"] = s.embed_dim;
  j["hidden"] = s.hidden;
  j["dropout"] = s.dropout;
  j["bias"] = s.bias;
  return j;
}

inline NeuralShape neural_shape_from_json(const Json& j, NeuralShape s) {
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  s.hidden = j.value("hidden", s.hidden);
  s.dropout = j.value("dropout", s.dropout);
  s.bias = j.value("bias", s.bias);
  return s;
}

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["replicates"] = c.replicates;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["expected_length"] = c.expected_length;
  Json grids = Json::array();
  for (const auto& g : c.grids) {
    Json gj;
    gj["family"] = g.family;
    gj["n"] = g.n;
    gj["alphabet_size"] = g.alphabet_size;
    if (g.family == "dense") {
      gj["rank"] = g.rank;
      gj["embed_dim"] = g.embed_dim;
    }
    if (g.family == "general") gj["alpha"] = g.alpha;
    grids.push_back(std::move(gj));
  }
  j["grids"] = std::move(grids);
  j["n_hat"] = c.n_hat;
  j["methods"] = c.methods;
  j["lambda_grid"] = c.lambda_grid;
  j["delta_grid"] = c.delta_grid;
  j["dev_fraction"] = c.dev_fraction;
  j["loglinear"] = to_json(c.loglinear);
  Json nj = to_json(c.neural);
  nj.update(to_json(c.neural_shape));
  j["neural"] = std::move(nj);
  j["score_jobs"] = c.score_jobs;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const Json& j) {
  try {
    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    c.replicates = j.value("replicates", c.replicates);
    c.n_train = j.value("n_train", c.n_train);
    c.n_test = j.value("n_test", c.n_test);
    c.expected_length = j.value("expected_length", c.expected_length);
    for (const auto& gj : j.at("grids")) {
      FamilyGrid g;
      g.family = gj.at("family").get<std::string>();
      g.n = gj.value("n", g.n);
      g.alphabet_size = gj.value("alphabet_size", g.alphabet_size);
      g.rank = gj.value("rank", g.rank);
      g.embed_dim = gj.value("embed_dim", g.embed_dim);
      g.alpha = gj.value("alpha", g.alpha);
      c.grids.push_back(std::move(g));
    }
    c.n_hat = j.value("n_hat", c.n_hat);
    c.methods = j.value("methods", c.methods);
    c.lambda_grid = j.value("lambda_grid", c.lambda_grid);
    c.delta_grid = j.value("delta_grid", c.delta_grid);
    c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
    if (j.contains("loglinear")) c.loglinear = train_config_from_json(j.at("loglinear"), c.loglinear);
    if (j.contains("neural")) {
      c.neural = train_config_from_json(j.at("neural"), c.neural);
      c.neural_shape = neural_shape_from_json(j.at("neural"), c.neural_shape);
    }
    c.score_jobs = j.value("score_jobs", c.score_jobs);
    validate(c);
    return c;
  } catch (const Json::exception& e) {
    throw SpecError(std::string("malformed experiment config: ") + e.what());
  }
}

/// Full-scale grids: general n∈{2,4,6}, |Σ|∈{8,12,16}; representation
/// n∈{4,8,12}, |Σ|∈{64,128,256}, R∈{2,8,16}; five LMs per configuration.
inline ExperimentConfig paper_config() {
  ExperimentConfig c;
  FamilyGrid general;
  general.family = "general";
  general.n = {2, 4, 6};
  general.alphabet_size = {8, 12, 16};
  FamilyGrid dense;
  dense.family = "dense";
  dense.n = {4, 8, 12};
  dense.alphabet_size = {64, 128, 256};
  dense.rank = {2, 8, 16};
  FamilyGrid sparse = dense;
  sparse.family = "sparse";
  sparse.rank.clear();
  c.grids = {general, dense, sparse};
  return c;
}

/// Smoke-scale run: one general LM, n=2, |Σ|=8, 5k/3k corpora, classic only.
inline ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.replicates = 1;
  c.n_train = 5000;
  c.n_test = 3000;
  FamilyGrid g;
  g.family = "general";
  g.n = {2};
  g.alphabet_size = {8};
  c.grids = {g};
  c.methods = {"mle", "add_lambda", "absolute_discounting", "witten_bell"};
  return c;
}

// ----------------------------------------------------------------- cells

struct CellSpec {
  std::string id;
  std::string family;
  int n = 2;
  std::size_t alphabet_size = 8;
  std::size_t rank = 0;  // 0 for general and sparse LMs
  std::size_t embed_dim = 16;
  double alpha = 0.1;
  double expected_length = 40.0;
  int replicate = 0;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::vector<int> classic_orders;
  std::vector<int> neural_orders;
  std::vector<std::string> methods;
  std::vector<double> lambda_grid;
  std::vector<double> delta_grid;
  double dev_fraction = 0.1;
  TrainConfig loglinear;
  TrainConfig neural;
  NeuralShape neural_shape;
  std::size_t score_jobs = 1;
};

inline Json to_json(const CellSpec& s) {
  Json j;
  j["id"] = s.id;
  j["family"] = s.family;
  j["n"] = s.n;
  j["alphabet_size"] = s.alphabet_size;
  j["rank"] = s.rank;
  j["embed_dim"] = s.embed_dim;
  j["alpha"] = s.alpha;
  j["expected_length"] = s.expected_length;
  j["replicate"] = s.replicate;
  j["seed"] = s.seed;
  j["n_train"] = s.n_train;
  j["n_test"] = s.n_test;
  j["classic_orders"] = s.classic_orders;
  j["neural_orders"] = s.neural_orders;
  j["methods"] = s.methods;
  j["lambda_grid"] = s.lambda_grid;
  j["delta_grid"] = s.delta_grid;
  j["dev_fraction"] = s.dev_fraction;
  j["loglinear"] = to_json(s.loglinear);
  j["neural"] = to_json(s.neural);
  j["neural_shape"] = to_json(s.neural_shape);
  j["score_jobs"] = s.score_jobs;
  return j;
}

inline CellSpec cell_spec_from_json(const Json& j) {
  try {
    CellSpec s;
    s.id = j.at("id").get<std::string>();
    s.family = j.at("family").get<std::string>();
    s.n = j.at("n").get<int>();
    s.alphabet_size = j.at("alphabet_size").get<std::size_t>();
    s.rank = j.at("rank").get<std::size_t>();
    s.embed_dim = j.at("embed_dim").get<std::size_t>();
    s.alpha = j.at("alpha").get<double>();
    s.expected_length = j.at("expected_length").get<double>();
    s.replicate = j.at("replicate").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.n_train = j.at("n_train").get<std::size_t>();
    s.n_test = j.at("n_test").get<std::size_t>();
    s.classic_orders = j.at("classic_orders").get<std::vector<int>>();
    s.neural_orders = j.at("neural_orders").get<std::vector<int>>();
    s.methods = j.at("methods").get<std::vector<std::string>>();
    s.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    s.delta_grid = j.at("delta_grid").get<std::vector<double>>();
    s.dev_fraction = j.at("dev_fraction").get<double>();
    s.loglinear = train_config_from_json(j.at("loglinear"), loglinear_defaults());
    s.neural = train_config_from_json(j.at("neural"), neural_defaults());
    s.neural_shape = neural_shape_from_json(j.at("neural_shape"), NeuralShape{});
    s.score_jobs = j.value("score_jobs", std::size_t{1});
    return s;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed cell spec: ") + e.what());
  }
}

/// Content hash of everything that determines a cell's artifacts.
inline std::string cell_hash(const CellSpec& s) {
  Json j = to_json(s);
  j.erase("score_jobs");  // thread count does not change any output
  return hex64(fnv1a64(std::string(kPipelineVersion) + "\n" + write_json(j, -1)));
}

inline std::vector<CellSpec> expand_cells(const ExperimentConfig& c) {
  validate(c);
  std::vector<CellSpec> cells;
  for (const auto& g : c.grids) {
    const std::vector<std::size_t> ranks = g.family == "dense" ? g.rank : std::vector<std::size_t>{0};
    for (int n : g.n) {
      for (std::size_t sigma : g.alphabet_size) {
        for (std::size_t r : ranks) {
          for (int rep = 0; rep < c.replicates; ++rep) {
            CellSpec s;
            std::ostringstream id;
            id << g.family << "_n" << n << "_s" << sigma;
            if (g.family == "dense") id << "_R" << r;
            id << "_r" << rep;
            s.id = id.str();
            s.family = g.family;
            s.n = n;
            s.alphabet_size = sigma;
            s.rank = r;
            s.embed_dim = g.embed_dim;
            s.alpha = g.alpha;
            s.expected_length = c.expected_length;
            s.replicate = rep;
            s.seed = derive_seed(c.seed, s.id);
            s.n_train = c.n_train;
            s.n_test = c.n_test;
            s.classic_orders = expand_orders(c.n_hat, n, 1);
            s.neural_orders = expand_orders(c.n_hat, n, 2);
            s.methods = c.methods;
            s.lambda_grid = c.lambda_grid;
            s.delta_grid = c.delta_grid;
            s.dev_fraction = c.dev_fraction;
            s.loglinear = c.loglinear;
            s.neural = c.neural;
            s.neural_shape = c.neural_shape;
            s.score_jobs = c.score_jobs;
            cells.push_back(std::move(s));
          }
        }
      }
    }
  }
  return cells;
}

inline std::unique_ptr<NGramLM> generate_cell_lm(const CellSpec& s) {
  const std::uint64_t seed = derive_seed(s.seed, "lm");
  if (s.family == "general") {
    GeneralLMSpec g;
    g.n = s.n;
    g.alphabet_size = s.alphabet_size;
    g.alpha = s.alpha;
    g.expected_length = s.expected_length;
    g.seed = seed;
    return generate_general(g);
  }
  RepLMSpec r;
  r.n = s.n;
  r.alphabet_size = s.alphabet_size;
  r.kind = s.family == "sparse" ? RepresentationKind::sparse : RepresentationKind::dense;
  r.embed_dim = s.embed_dim;
  r.rank = s.rank;
  r.expected_length = s.expected_length;
  r.seed = seed;
  return generate_representation(r);
}

// ----------------------------------------------------------- result rows

struct ResultRow {
  std::string cell_id;
  std::string family;
  int n = 0;
  std::size_t alphabet_size = 0;
  std::size_t rank = 0;
  int dense = 0;
  double entropy = 0.0;  // H(p), exact when the visit-count solve fits, else Ĥ(p)
  std::string entropy_source;
  int replicate = 0;
  std::string method;
  int n_hat = 0;
  std::string param;            // hyperparameter, empty when the method has none
  std::optional<double> dev_ce; // classic only: mean nats per dev string
  EvalReport eval;
  std::string eval_path;        // relative to the results directory
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{
      "cell_id", "family", "n",       "alphabet_size", "rank",    "dense",       "entropy",       "entropy_source",
      "replicate", "method", "n_hat", "param",         "dev_ce",  "H_hat",       "HX_hat",        "kl_hat",
      "stderr",  "n_inf",  "n_strings", "kl_hat_finite", "stderr_finite", "eval_path"};
  return cols;
}

inline std::string to_csv_line(const ResultRow& r) {
  std::ostringstream os;
  os << r.cell_id << ',' << r.family << ',' << r.n << ',' << r.alphabet_size << ',' << r.rank << ',' << r.dense
     << ',' << format_real(r.entropy) << ',' << r.entropy_source << ',' << r.replicate << ',' << r.method << ','
     << r.n_hat << ',' << r.param << ',' << (r.dev_ce ? format_real(*r.dev_ce) : "") << ','
     << format_real(r.eval.H_hat) << ',' << format_real(r.eval.HX_hat) << ',' << format_real(r.eval.KL_hat) << ','
     << format_real(r.eval.std_error) << ',' << r.eval.n_inf << ',' << r.eval.n_strings << ','
     << format_real(r.eval.KL_hat_finite) << ',' << format_real(r.eval.std_error_finite) << ',' << r.eval_path;
  return os.str();
}

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  const auto& cols = result_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : rows) os << to_csv_line(r) << '\n';
  return os.str();
}

inline std::vector<ResultRow> read_results(std::istream& is) {
  const CsvTable t = read_csv(is);
  if (t.header != result_columns()) throw InputError("results CSV has an unexpected header");
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& c = t.rows[i];
    const std::string where = "results row " + std::to_string(i + 1);
    ResultRow r;
    r.cell_id = c[0];
    r.family = c[1];
    r.n = std::stoi(c[2]);
    r.alphabet_size = std::stoul(c[3]);
    r.rank = std::stoul(c[4]);
    r.dense = std::stoi(c[5]);
    r.entropy = parse_real(c[6], where);
    r.entropy_source = c[7];
    r.replicate = std::stoi(c[8]);
    r.method = c[9];
    r.n_hat = std::stoi(c[10]);
    r.param = c[11];
    if (!c[12].empty()) r.dev_ce = parse_real(c[12], where);
    r.eval.H_hat = parse_real(c[13], where);
    r.eval.HX_hat = parse_real(c[14], where);
    r.eval.KL_hat = parse_real(c[15], where);
    r.eval.std_error = parse_real(c[16], where);
    r.eval.n_inf = std::stoul(c[17]);
    r.eval.n_strings = std::stoul(c[18]);
    r.eval.KL_hat_finite = parse_real(c[19], where);
    r.eval.std_error_finite = parse_real(c[20], where);
    r.eval_path = c[21];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ResultRow> load_results(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw InputError("cannot read " + p.string());
  return read_results(is);
}

// ------------------------------------------------------------- cell runs

struct CellOutcome {
  std::vector<ResultRow> rows;
  std::map<std::string, std::string> files;  // path relative to the cell dir → content hash
  std::size_t trainings = 0;
  bool skipped = false;
};

namespace detail {

inline void record(CellOutcome& out, const fs::path& cell_dir, const fs::path& file) {
  out.files[fs::relative(file, cell_dir).generic_string()] = file_hash(file);
}

inline double mean_nll(const ScoreFile& sf) {
  double s = 0.0;
  for (double lp : sf.logprobs) {
    if (lp == kNegInf) return kInf;
    s -= lp;
  }
  return s / static_cast<double>(std::max<std::size_t>(sf.size(), 1));
}

/// Validates a finished cell on disk; nullopt when it must be recomputed.
inline std::optional<CellOutcome> load_finished_cell(const CellSpec& s, const fs::path& cell_dir,
                                                     std::string& why) {
  const fs::path marker = cell_dir / "cell.json";
  if (!fs::exists(marker)) {
    why = fs::exists(cell_dir) ? "no completion marker" : "";
    return std::nullopt;
  }
  try {
    const Json j = read_json_file(marker);
    if (j.at("hash").get<std::string>() != cell_hash(s)) {
      why = "config changed";
      return std::nullopt;
    }
    CellOutcome out;
    out.skipped = true;
    for (const auto& [rel, h] : j.at("files").items()) {
      const fs::path p = cell_dir / rel;
      if (!fs::exists(p)) {
        why = "missing " + rel;
        return std::nullopt;
      }
      if (file_hash(p) != h.get<std::string>()) {
        why = "content hash mismatch in " + rel;
        return std::nullopt;
      }
      out.files[rel] = h.get<std::string>();
    }
    std::istringstream rows(j.at("rows").get<std::string>());
    out.rows = read_results(rows);
    return out;
  } catch (const Error& e) {
    why = std::string("unreadable completion marker: ") + e.what();
  } catch (const std::exception& e) {
    why = std::string("unreadable completion marker: ") + e.what();
  }
  return std::nullopt;
}

}  // namespace detail

/// Materializes one cell under cell_dir: lm.json, train/test corpora,
/// truth.scores, per-order count tables, and runs/<run>/{model.json,
/// scores.tsv, eval.json}. cell.json is written last and marks completion.
/// `rel_prefix` is prepended to eval paths in the result rows.
inline CellOutcome run_cell(const CellSpec& s, const fs::path& cell_dir, const std::string& rel_prefix = "",
                            bool reuse = true, std::ostream* log = nullptr) {
  if (reuse) {
    std::string why;
    if (auto done = detail::load_finished_cell(s, cell_dir, why)) return *done;
    if (!why.empty() && log) *log << "cell " << s.id << ": recomputing (" << why << ")\n";
  }
  fs::remove_all(cell_dir);
  fs::create_directories(cell_dir);
  CellOutcome out;

  const auto lm = generate_cell_lm(s);
  const fs::path lm_path = cell_dir / "lm.json";
  save_lm(lm_path, *lm);
  detail::record(out, cell_dir, lm_path);
  const std::string lm_id = file_hash(lm_path);

  auto [train, test] = make_disjoint_corpora(*lm, s.n_train, s.n_test, derive_seed(s.seed, "corpus"), lm_id);
  save_corpus(cell_dir / "train.txt", train);
  save_corpus(cell_dir / "test.txt", test);
  for (const char* f : {"train.txt", "train.txt.json", "test.txt", "test.txt.json"}) {
    detail::record(out, cell_dir, cell_dir / f);
  }

  ScoreOptions so;
  so.jobs = s.score_jobs;
  const ScoreFile truth = score_corpus(*lm, test, "truth", so);
  save_scores(cell_dir / "truth.scores", truth);
  detail::record(out, cell_dir, cell_dir / "truth.scores");

  ResultRow base;
  base.cell_id = s.id;
  base.family = s.family;
  base.n = s.n;
  base.alphabet_size = s.alphabet_size;
  base.rank = s.rank;
  base.dense = s.family == "dense" ? 1 : 0;
  base.replicate = s.replicate;
  try {
    base.entropy = exact_entropy(*lm);
    base.entropy_source = "exact";
  } catch (const ResourceError&) {
    base.entropy = empirical_entropy(truth);
    base.entropy_source = "empirical";
  }

  auto finish_run = [&](const std::string& run_id, const std::string& method, int n_hat, const std::string& param,
                        std::optional<double> dev_ce, const NGramLM& model, const Json& model_json) {
    const fs::path dir = cell_dir / "runs" / run_id;
    fs::create_directories(dir);
    if (!model_json.is_null()) {
      write_json_file(dir / "model.json", model_json);
      detail::record(out, cell_dir, dir / "model.json");
    }
    const ScoreFile sf = score_corpus(model, test, run_id, so);
    save_scores(dir / "scores.tsv", sf);
    detail::record(out, cell_dir, dir / "scores.tsv");
    ResultRow row = base;
    row.method = method;
    row.n_hat = n_hat;
    row.param = param;
    row.dev_ce = dev_ce;
    row.eval = empirical_kl(truth, sf);
    write_json_file(dir / "eval.json", to_json(row.eval));
    detail::record(out, cell_dir, dir / "eval.json");
    row.eval_path = rel_prefix + "runs/" + run_id + "/eval.json";
    out.rows.push_back(std::move(row));
  };

  const bool any_classic = std::any_of(s.methods.begin(), s.methods.end(), is_classic_method);
  if (any_classic) {
    auto [fit_part, dev] = split_corpus(train, 1.0 - s.dev_fraction, derive_seed(s.seed, "dev"));
    for (int n_hat : s.classic_orders) {
      auto full = std::make_shared<const CountTable>(count(train, lm->alphabet(), n_hat));
      auto held = std::make_shared<const CountTable>(count(fit_part, lm->alphabet(), n_hat));
      out.trainings += 2;
      {
        std::ostringstream os;
        full->write(os);
        const fs::path p = cell_dir / "counts" / ("n" + std::to_string(n_hat) + ".tsv");
        fs::create_directories(p.parent_path());
        write_file_atomic(p, os.str());
        detail::record(out, cell_dir, p);
      }
      for (const auto& m : s.methods) {
        if (!is_classic_method(m)) continue;
        const Smoothing method = parse_smoothing(m);
        std::vector<std::optional<double>> params{std::nullopt};
        if (method == Smoothing::add_lambda) params.assign(s.lambda_grid.begin(), s.lambda_grid.end());
        if (method == Smoothing::absolute_discounting) params.assign(s.delta_grid.begin(), s.delta_grid.end());
        for (const auto& p : params) {
          SmoothingConfig cfg{method, p.value_or(0.0), n_hat};
          const std::string pstr = p ? format_param(*p) : "";
          const std::string run_id = m + "_n" + std::to_string(n_hat) + (p ? "_p" + pstr : "");
          const auto dev_model = as_lm(held, cfg);
          const double dev_ce = detail::mean_nll(score_corpus(*dev_model, dev, run_id, so));
          const auto model = as_lm(full, cfg);
          Json mj;
          mj["kind"] = "classic";
          mj["smoothing"] = m;
          mj["param"] = cfg.param;
          mj["n_hat"] = n_hat;
          mj["alphabet_size"] = s.alphabet_size;
          mj["counts_file"] = "../../counts/n" + std::to_string(n_hat) + ".tsv";
          finish_run(run_id, m, n_hat, pstr, dev_ce, *model, mj);
        }
      }
    }
  }

  for (const auto& m : s.methods) {
    if (m != "loglinear" && m != "neural") continue;
    const ModelKind kind = parse_model_kind(m);
    for (int n_hat : s.neural_orders) {
      const std::string run_id = m + "_n" + std::to_string(n_hat);
      TrainConfig cfg = kind == ModelKind::loglinear ? s.loglinear : s.neural;
      cfg.seed = derive_seed(s.seed, run_id);
      auto model = make_model(kind, lm->alphabet(), n_hat, s.neural_shape, derive_seed(cfg.seed, "init"));
      const TrainResult res = ngramlab::train(*model, train, cfg);
      ++out.trainings;
      finish_run(run_id, m, n_hat, "", std::nullopt, *model, checkpoint_json(*model, cfg, res));
    }
  }

  Json marker;
  marker["id"] = s.id;
  marker["hash"] = cell_hash(s);
  marker["spec"] = to_json(s);
  marker["files"] = out.files;
  {
    std::ostringstream rows;
    for (const auto& r : out.rows) rows << to_csv_line(r) << '\n';
    marker["rows"] = results_csv({}) + rows.str();
  }
  write_json_file(cell_dir / "cell.json", marker);
  return out;
}

// --------------------------------------------------------------- report

struct ReportRow {
  std::string group;  // family/n/|Σ|/R
  std::string family;
  int n = 0;
  std::size_t alphabet_size = 0;
  std::size_t rank = 0;
  int n_hat = 0;
  std::string method;  // a method name, or "classic" for the best classic estimator
  std::size_t replicates = 0;
  double mean = 0.0;
  double sd = 0.0;
  bool has_inf = false;
  double finite_mean = 0.0;
  double finite_sd = 0.0;
  bool best = false;
};

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  RunningStats s;
  for (double x : v) s.add(x);
  return {s.mean, v.size() > 1 ? std::sqrt(s.sample_variance()) : 0.0};
}

}  // namespace detail

/// Per (LM configuration, n̂, method): mean and sample sd of K̂L over
/// replicates, each replicate using its best hyperparameter. The "classic"
/// row takes the minimum over all classic estimators per replicate.
inline std::vector<ReportRow> aggregate(const std::vector<ResultRow>& rows) {
  struct Key {
    std::string family;
    int n;
    std::size_t sigma, rank;
    int n_hat;
    std::string method;
    auto operator<=>(const Key&) const = default;
  };
  // (key, cell) → (best KL, its finite-only KL)
  std::map<std::pair<Key, std::string>, std::pair<double, double>> best;
  auto consider = [&](const Key& k, const std::string& cell, const EvalReport& e) {
    auto [it, fresh] = best.try_emplace({k, cell}, e.KL_hat, e.KL_hat_finite);
    if (!fresh && (e.KL_hat < it->second.first ||
                   (e.KL_hat == it->second.first && e.KL_hat_finite < it->second.second))) {
      it->second = {e.KL_hat, e.KL_hat_finite};
    }
  };
  for (const auto& r : rows) {
    Key k{r.family, r.n, r.alphabet_size, r.rank, r.n_hat, r.method};
    consider(k, r.cell_id, r.eval);
    if (is_classic_method(r.method)) {
      k.method = "classic";
      consider(k, r.cell_id, r.eval);
    }
  }
  std::map<Key, std::vector<std::pair<double, double>>> per_key;
  for (const auto& [kc, v] : best) per_key[kc.first].push_back(v);

  std::vector<ReportRow> out;
  for (const auto& [k, vals] : per_key) {
    ReportRow r;
    r.family = k.family;
    r.n = k.n;
    r.alphabet_size = k.sigma;
    r.rank = k.rank;
    r.n_hat = k.n_hat;
    r.method = k.method;
    std::ostringstream g;
    g << k.family << " n=" << k.n << " |Σ|=" << k.sigma;
    if (k.family == "dense") g << " R=" << k.rank;
    r.group = g.str();
    r.replicates = vals.size();
    std::vector<double> kl, fin;
    for (const auto& [a, b] : vals) {
      kl.push_back(a);
      fin.push_back(b);
      r.has_inf = r.has_inf || std::isinf(a);
    }
    std::tie(r.finite_mean, r.finite_sd) = detail::mean_sd(fin);
    if (r.has_inf) {
      r.mean = kInf;
      r.sd = 0.0;
    } else {
      std::tie(r.mean, r.sd) = detail::mean_sd(kl);
    }
    out.push_back(std::move(r));
  }
  // Best individual method per (configuration, n̂).
  std::map<std::pair<std::string, int>, std::size_t> winner;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].method == "classic") continue;
    const auto key = std::make_pair(out[i].group, out[i].n_hat);
    auto it = winner.find(key);
    if (it == winner.end() || out[i].mean < out[it->second].mean ||
        (out[i].mean == out[it->second].mean && out[i].finite_mean < out[it->second].finite_mean)) {
      winner[key] = i;
    }
  }
  for (const auto& [key, i] : winner) out[i].best = true;
  return out;
}

/// "3.00±1.58"; a single replicate gets a trailing "†" (sd undefined);
/// an infinite mean renders as "inf (finite 2.31±0.10)".
inline std::string format_mean_sd(const ReportRow& r) {
  char buf[96];
  if (r.has_inf) {
    std::snprintf(buf, sizeof buf, "inf (finite %.2f±%.2f)", r.finite_mean, r.finite_sd);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", r.mean, r.sd);
  }
  std::string s = buf;
  if (r.replicates == 1) s += "†";
  return s;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "family,n,alphabet_size,rank,n_hat,method,replicates,mean,sd,finite_mean,finite_sd,has_inf,best,display\n";
  for (const auto& r : rows) {
    os << r.family << ',' << r.n << ',' << r.alphabet_size << ',' << r.rank << ',' << r.n_hat << ',' << r.method
       << ',' << r.replicates << ',' << format_real(r.mean) << ',' << format_real(r.sd) << ','
       << format_real(r.finite_mean) << ',' << format_real(r.finite_sd) << ',' << (r.has_inf ? 1 : 0) << ','
       << (r.best ? 1 : 0) << ',' << format_mean_sd(r) << '\n';
  }
  return os.str();
}

inline std::string report_text(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  std::string group;
  int n_hat = -1;
  bool single = false;
  for (const auto& r : rows) {
    if (r.group != group || r.n_hat != n_hat) {
      group = r.group;
      n_hat = r.n_hat;
      os << "\n## " << group << ", n̂=" << n_hat << "\n\n| method | K̂L (nats) |\n|---|---|\n";
    }
    const std::string cell = format_mean_sd(r);
    os << "| " << r.method << " | " << (r.best ? "**" + cell + "**" : cell) << " |\n";
    single = single || r.replicates == 1;
  }
  if (single) os << "\n† single replicate: sd shown as 0.00\n";
  return os.str();
}

/// Reads results.csv from a results directory, writes report.csv and
/// report.txt next to it and returns the text form.
inline std::string report(const fs::path& results_dir) {
  const auto rows = aggregate(load_results(results_dir / "results.csv"));
  write_file_atomic(results_dir / "report.csv", report_csv(rows));
  const std::string text = report_text(rows);
  write_file_atomic(results_dir / "report.txt", text);
  return text;
}

// ------------------------------------------------------------ regression

inline const std::vector<std::string>& default_predictors() {
  static const std::vector<std::string> p{"n", "alphabet_size", "rank", "entropy", "dense", "n_hat"};
  return p;
}

/// OLS of kl_hat on z-scored predictors over the results table, optionally
/// restricted to some methods.
inline RegressionReport regress_results(const fs::path& csv, const std::vector<std::string>& predictors,
                                        const std::vector<std::string>& methods = {}) {
  std::ifstream is(csv);
  if (!is) throw InputError("cannot read " + csv.string());
  CsvTable t = read_csv(is);
  if (!methods.empty()) {
    const std::size_t mc = t.column("method");
    std::erase_if(t.rows, [&](const auto& row) {
      return std::find(methods.begin(), methods.end(), row[mc]) == methods.end();
    });
  }
  return regress_table(t, "kl_hat", predictors);
}

// -------------------------------------------------------------- the run

struct RunSummary {
  std::size_t cells_total = 0;
  std::size_t cells_run = 0;
  std::size_t cells_skipped = 0;
  std::size_t trainings = 0;
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};

/// Runs every cell (skipping finished ones), then writes results.csv,
/// manifest.json, regression.json and the report.
inline RunSummary run(const ExperimentConfig& cfg, const fs::path& out_dir, std::size_t jobs = 1,
                      std::ostream* log = nullptr) {
  const auto cells = expand_cells(cfg);
  fs::create_directories(out_dir / "cells");
  RunSummary sum;
  sum.cells_total = cells.size();
  std::vector<std::optional<CellOutcome>> outcomes(cells.size());
  std::vector<std::string> errors(cells.size());
  std::mutex log_mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto& s = cells[i];
      try {
        std::ostringstream cell_log;
        outcomes[i] = run_cell(s, out_dir / "cells" / s.id, "cells/" + s.id + "/", true, &cell_log);
        if (log) {
          std::lock_guard lock(log_mu);
          *log << cell_log.str() << "cell " << s.id << ": " << (outcomes[i]->skipped ? "up to date" : "done")
               << '\n';
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (log) {
          std::lock_guard lock(log_mu);
          *log << "cell " << s.id << ": FAILED: " << e.what() << '\n';
        }
      }
    }
  };
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<ResultRow> rows;
  Json manifest;
  manifest["version"] = kPipelineVersion;
  manifest["config"] = to_json(cfg);
  Json mcells = Json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!outcomes[i]) {
      sum.failures.push_back(cells[i].id + ": " + errors[i]);
      continue;
    }
    const auto& o = *outcomes[i];
    (o.skipped ? sum.cells_skipped : sum.cells_run)++;
    sum.trainings += o.trainings;
    rows.insert(rows.end(), o.rows.begin(), o.rows.end());
    Json c;
    c["id"] = cells[i].id;
    c["hash"] = cell_hash(cells[i]);
    c["seed"] = cells[i].seed;
    c["spec"] = to_json(cells[i]);
    c["files"] = o.files;
    mcells.push_back(std::move(c));
  }
  manifest["cells"] = std::move(mcells);
  write_json_file(out_dir / "manifest.json", manifest);
  write_file_atomic(out_dir / "results.csv", results_csv(rows));

  Json reg;
  try {
    reg = to_json(regress_results(out_dir / "results.csv", default_predictors()));
  } catch (const Error& e) {
    reg["error"] = e.what();
  }
  write_json_file(out_dir / "regression.json", reg);
  if (!rows.empty()) report(out_dir);
  return sum;
}

struct ReplayResult {
  std::vector<std::string> mismatched;  // files whose bytes differ from the manifest
  std::vector<std::string> missing;
  std::size_t compared = 0;

  bool identical() const { return mismatched.empty() && missing.empty(); }
};

/// Recomputes one cell from its manifest entry alone into out_dir and
/// compares every artifact's content hash with the manifest.
inline ReplayResult replay_cell(const fs::path& manifest_path, const std::string& cell_id, const fs::path& out_dir) {
  const Json m = read_json_file(manifest_path);
  for (const auto& c : m.at("cells")) {
    if (c.at("id").get<std::string>() != cell_id) continue;
    const CellSpec s = cell_spec_from_json(c.at("spec"));
    const CellOutcome o = run_cell(s, out_dir, "", false);
    ReplayResult r;
    for (const auto& [rel, h] : c.at("files").items()) {
      ++r.compared;
      const auto it = o.files.find(rel);
      if (it == o.files.end()) {
        r.missing.push_back(rel);
      } else if (it->second != h.get<std::string>()) {
        r.mismatched.push_back(rel);
      }
    }
    return r;
  }
  throw InputError("manifest has no cell '" + cell_id + "'");
}

}  // namespace ngramlab
