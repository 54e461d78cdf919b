// Command-line front end: gen-lm, sample, fit, score, eval, regress, report,
// run and replay.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "ngramlab/ngramlab.hpp"

using namespace ngramlab;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void emit_json(const Json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    write_json(std::cout, j);
  } else {
    write_json_file(out, j);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate n-gram LMs, sample corpora, fit and evaluate estimators"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string out;
  std::size_t jobs = 1;

  // gen-lm
  auto* gen = app.add_subcommand("gen-lm", "Generate a ground-truth n-gram LM");
  std::string family = "general";
  int n = 2;
  std::size_t sigma = 8, rank = 8, embed_dim = 16;
  double alpha = 0.1, expected_length = 40.0;
  gen->add_option("--family", family, "general | dense | sparse")->check(CLI::IsMember({"general", "dense", "sparse"}));
  gen->add_option("--n", n, "order of the LM")->required();
  gen->add_option("--alphabet-size", sigma, "|Σ|")->required();
  gen->add_option("--alpha", alpha, "Dirichlet concentration (general)");
  gen->add_option("--rank", rank, "rank R of the representation map (dense)");
  gen->add_option("--embed-dim", embed_dim, "symbol vector size (dense)");
  gen->add_option("--expected-length", expected_length, "expected string length E; p(EOS) = 1/E");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out, "LM file (JSON)")->required();

  // sample
  auto* sample = app.add_subcommand("sample", "Sample corpora from an LM");
  std::string lm_path, split_name = "train";
  std::size_t n_train = 0, n_test = 0;
  sample->add_option("--lm", lm_path)->required()->check(CLI::ExistingFile);
  sample->add_option("--train", n_train, "strings in the training corpus (or the only corpus)")->required();
  sample->add_option("--test", n_test, "strings in a string-disjoint test corpus; 0 writes one corpus");
  sample->add_option("--split", split_name, "split label when writing one corpus");
  sample->add_option("--seed", seed);
  sample->add_option("--out", out, "corpus file, or a directory when --test > 0")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "Fit an estimator on a training corpus");
  std::string method, train_path;
  int n_hat = 2;
  double param = 0.0;
  std::size_t alphabet_size = 0;
  std::optional<double> lr;
  std::optional<int> epochs;
  std::optional<std::size_t> batch, hidden, model_embed;
  std::optional<double> dropout;
  fit->add_option("--method", method, "mle | add_lambda | absolute_discounting | witten_bell | loglinear | neural")
      ->required();
  fit->add_option("--train", train_path)->required()->check(CLI::ExistingFile);
  fit->add_option("--alphabet-size", alphabet_size, "|Σ| (default: from the LM named in the corpus sidecar)");
  fit->add_option("--lm", lm_path, "ground-truth LM file, used only for its alphabet");
  fit->add_option("--n-hat", n_hat, "model order")->required();
  fit->add_option("--param", param, "λ for add_lambda, δ for absolute_discounting");
  fit->add_option("--lr", lr);
  fit->add_option("--epochs", epochs);
  fit->add_option("--batch", batch);
  fit->add_option("--hidden", hidden);
  fit->add_option("--embed-dim", model_embed);
  fit->add_option("--dropout", dropout);
  fit->add_option("--seed", seed);
  fit->add_option("--out", out, "model file (JSON)")->required();

  // score
  auto* score = app.add_subcommand("score", "Score a corpus under a model or LM");
  std::string model_path, corpus_path, model_id;
  score->add_option("--model", model_path, "model or LM file")->required()->check(CLI::ExistingFile);
  score->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  score->add_option("--model-id", model_id, "id written into the ScoreFile header (default: file stem)");
  score->add_option("--jobs", jobs);
  score->add_option("--out", out, "ScoreFile")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Empirical entropy and KL from ScoreFiles");
  std::string truth_scores, model_scores, exact_lm, exact_model;
  eval->add_option("--truth", truth_scores, "ScoreFile of the ground-truth LM")->check(CLI::ExistingFile);
  eval->add_option("--model", model_scores, "ScoreFile of the model")->check(CLI::ExistingFile);
  eval->add_option("--exact-lm", exact_lm, "also compute exact H(p) and KL from this LM file")
      ->check(CLI::ExistingFile);
  eval->add_option("--exact-model", exact_model, "model file for the exact KL")->check(CLI::ExistingFile);
  eval->add_option("--out", out, "EvalReport JSON (default stdout)");

  // regress
  auto* regress = app.add_subcommand("regress", "OLS of K̂L on z-scored predictors");
  std::string csv_path, predictors = "n,alphabet_size,rank,entropy,dense,n_hat", response = "kl_hat", methods;
  regress->add_option("--csv", csv_path, "results.csv or any CSV with named columns")
      ->required()
      ->check(CLI::ExistingFile);
  regress->add_option("--predictors", predictors, "comma-separated predictor columns");
  regress->add_option("--response", response);
  regress->add_option("--methods", methods, "keep only these methods (comma-separated)");
  regress->add_option("--out", out, "JSON (default stdout)");

  // report
  auto* rep = app.add_subcommand("report", "Aggregate a results directory into tables");
  std::string results_dir;
  rep->add_option("results", results_dir)->required()->check(CLI::ExistingDirectory);

  // run
  auto* runc = app.add_subcommand("run", "Run an experiment grid end to end");
  std::string config_path, preset;
  std::optional<std::uint64_t> seed_override;
  runc->add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  runc->add_option("--preset", preset, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  runc->add_option("--seed", seed_override, "overrides the config seed");
  runc->add_option("--jobs", jobs, "cells run in parallel");
  runc->add_option("--out", out, "results directory")->required();

  // replay
  auto* replay = app.add_subcommand("replay", "Recompute one cell from a manifest and compare bytes");
  std::string manifest_path, cell_id;
  replay->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
  replay->add_option("--cell", cell_id)->required();
  replay->add_option("--out", out, "scratch directory for the recomputed cell")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      std::unique_ptr<NGramLM> lm;
      if (family == "general") {
        GeneralLMSpec s;
        s.n = n;
        s.alphabet_size = sigma;
        s.alpha = alpha;
        s.expected_length = expected_length;
        s.seed = seed;
        lm = generate_general(s);
      } else {
        RepLMSpec s;
        s.n = n;
        s.alphabet_size = sigma;
        s.kind = family == "sparse" ? RepresentationKind::sparse : RepresentationKind::dense;
        s.rank = rank;
        s.embed_dim = embed_dim;
        s.expected_length = expected_length;
        s.seed = seed;
        lm = generate_representation(s);
      }
      save_lm(out, *lm);
      std::cout << out << '\n';
    } else if (*sample) {
      const auto lm = load_lm(lm_path);
      const std::string lm_id = hex64(fnv1a64(read_file(lm_path)));
      if (n_test == 0) {
        const Corpus c = sample_corpus(*lm, n_train, seed, parse_split(split_name), lm_id);
        save_corpus(out, c);
        std::cout << out << '\n';
      } else {
        auto [train, test] = make_disjoint_corpora(*lm, n_train, n_test, seed, lm_id);
        fs::create_directories(out);
        save_corpus(fs::path(out) / "train.txt", train);
        save_corpus(fs::path(out) / "test.txt", test);
        std::cout << (fs::path(out) / "train.txt").string() << '\n' << (fs::path(out) / "test.txt").string() << '\n';
      }
    } else if (*fit) {
      const Corpus c = load_corpus(train_path);
      if (alphabet_size == 0 && !lm_path.empty()) alphabet_size = load_lm(lm_path)->alphabet().size();
      if (alphabet_size == 0) {
        for (const auto& y : c.strings) {
          for (Symbol s : y) alphabet_size = std::max<std::size_t>(alphabet_size, std::size_t{s} + 1);
        }
        std::cerr << "warning: alphabet size inferred from the corpus as " << alphabet_size
                  << "; pass --alphabet-size or --lm to be explicit\n";
      }
      const Alphabet a(alphabet_size);
      if (is_classic_method(method)) {
        SmoothingConfig cfg{parse_smoothing(method), param, n_hat};
        const CountTable tbl = count(c, a, n_hat);
        write_json_file(out, classic_model_json(tbl, cfg));
      } else {
        const ModelKind kind = parse_model_kind(method);
        TrainConfig cfg = kind == ModelKind::loglinear ? loglinear_defaults() : neural_defaults();
        NeuralShape shape;
        if (lr) cfg.lr = *lr;
        if (epochs) cfg.epochs = *epochs;
        if (batch) cfg.batch = *batch;
        if (hidden) shape.hidden = *hidden;
        if (model_embed) shape.embed_dim = *model_embed;
        if (dropout) shape.dropout = *dropout;
        cfg.seed = seed;
        auto model = make_model(kind, a, n_hat, shape, derive_seed(seed, "init"));
        const TrainResult res = train(*model, c, cfg);
        write_json_file(out, checkpoint_json(*model, cfg, res));
        std::cerr << "epochs " << res.epochs_run << ", final loss " << res.epoch_loss.back() << " nats/event\n";
      }
      std::cout << out << '\n';
    } else if (*score) {
      const auto model = load_model(model_path);
      const Corpus c = load_corpus(corpus_path);
      ScoreOptions so;
      so.jobs = jobs;
      const ScoreFile sf = score_corpus(*model, c, model_id.empty() ? fs::path(model_path).stem().string() : model_id, so);
      save_scores(out, sf);
      std::cout << out << '\n';
    } else if (*eval) {
      Json j;
      if (!truth_scores.empty() && !model_scores.empty()) {
        j = to_json(empirical_kl(load_scores(truth_scores), load_scores(model_scores)));
      } else if (!truth_scores.empty()) {
        j["H_hat"] = detail::real_or_inf(empirical_entropy(load_scores(truth_scores)));
      } else if (exact_lm.empty()) {
        throw InputError("eval needs --truth (and --model), or --exact-lm");
      }
      if (!exact_lm.empty()) {
        const auto p = load_lm(exact_lm);
        j["H_exact"] = exact_entropy(*p);
        if (!exact_model.empty()) j["KL_exact"] = detail::real_or_inf(exact_kl(*p, *load_model(exact_model)));
      }
      emit_json(j, out);
    } else if (*regress) {
      std::ifstream is(csv_path);
      CsvTable t = read_csv(is);
      if (!methods.empty()) {
        const auto keep = split_list(methods);
        const std::size_t mc = t.column("method");
        std::erase_if(t.rows, [&](const auto& row) { return std::find(keep.begin(), keep.end(), row[mc]) == keep.end(); });
      }
      emit_json(to_json(regress_table(t, response, split_list(predictors))), out);
    } else if (*rep) {
      std::cout << report(results_dir);
    } else if (*runc) {
      ExperimentConfig cfg;
      if (!config_path.empty()) {
        cfg = experiment_config_from_json(read_json_file(config_path));
      } else if (preset == "paper") {
        cfg = paper_config();
      } else if (preset == "desk") {
        cfg = desk_config();
      } else {
        throw InputError("run needs --config or --preset");
      }
      if (seed_override) cfg.seed = *seed_override;
      const RunSummary sum = run(cfg, out, jobs, &std::cerr);
      std::cerr << sum.cells_run << " cells run, " << sum.cells_skipped << " up to date, " << sum.failures.size()
                << " failed, " << sum.trainings << " fits\n";
      for (const auto& f : sum.failures) std::cerr << "failed: " << f << '\n';
      return sum.ok() ? 0 : 1;
    } else if (*replay) {
      const ReplayResult r = replay_cell(manifest_path, cell_id, out);
      for (const auto& f : r.mismatched) std::cout << "differs: " << f << '\n';
      for (const auto& f : r.missing) std::cout << "missing: " << f << '\n';
      std::cout << r.compared << " files compared, " << (r.identical() ? "identical" : "NOT identical") << '\n';
      return r.identical() ? 0 : 1;
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
