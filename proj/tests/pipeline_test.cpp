#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "ngramlab/pipeline.hpp"

using namespace ngramlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ngramlab_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 3;
  c.replicates = 2;
  c.n_train = 400;
  c.n_test = 200;
  c.expected_length = 8.0;
  FamilyGrid g;
  g.family = "general";
  g.n = {2};
  g.alphabet_size = {4};
  c.grids = {g};
  c.methods = {"mle", "add_lambda", "absolute_discounting", "witten_bell"};
  return c;
}

ExperimentConfig tiny_neural_config() {
  ExperimentConfig c = tiny_config();
  c.replicates = 1;
  FamilyGrid d;
  d.family = "dense";
  d.n = {3};
  d.alphabet_size = {5};
  d.rank = {2};
  d.embed_dim = 4;
  c.grids = {d};
  c.n_hat = {"n"};
  c.methods = {"witten_bell", "loglinear", "neural"};
  c.loglinear.epochs = 2;
  c.neural.epochs = 2;
  c.neural.lr = 1e-3;
  c.neural_shape.embed_dim = 4;
  c.neural_shape.hidden = 8;
  return c;
}

std::string slurp(const fs::path& p) { return read_file(p); }

ResultRow fake_row(const std::string& cell, const std::string& method, double kl, double kl_finite) {
  ResultRow r;
  r.cell_id = cell;
  r.family = "general";
  r.n = 2;
  r.alphabet_size = 8;
  r.method = method;
  r.n_hat = 2;
  r.eval.KL_hat = kl;
  r.eval.KL_hat_finite = kl_finite;
  return r;
}

}  // namespace

TEST(OrderGrid, ExpandsRules) {
  EXPECT_EQ(expand_orders({"n-2", "n", "2n"}, 4), (std::vector<int>{2, 4, 8}));
  EXPECT_EQ(expand_orders({"n-2", "n", "min(2n,20)"}, 12), (std::vector<int>{10, 12, 20}));
  EXPECT_EQ(expand_orders({"n-2", "n", "min(2n,20)"}, 2), (std::vector<int>{2, 4}));
  EXPECT_EQ(expand_orders({"n-2", "n", "min(2n,20)"}, 2, 1), (std::vector<int>{2, 4}));
  EXPECT_EQ(expand_orders({"n-1", "3", "n"}, 2, 1), (std::vector<int>{1, 3, 2}));
  EXPECT_EQ(expand_orders({"n-2", "n", "2n"}, 3, 2), (std::vector<int>{3, 6}));
  EXPECT_THROW(eval_order_rule("n*2", 4), InputError);
}

TEST(Config, JsonRoundTripAndValidation) {
  ExperimentConfig c = paper_config();
  c.neural.lr = 1e-3;
  c.neural_shape.hidden = 64;
  const ExperimentConfig back = experiment_config_from_json(Json::parse(write_json(to_json(c))));
  EXPECT_EQ(write_json(to_json(back)), write_json(to_json(c)));
  EXPECT_EQ(expand_cells(paper_config()).size(), 5u * (9 + 27 + 9));

  Json bad = to_json(desk_config());
  bad["methods"] = {"kneser_ney"};
  EXPECT_THROW(experiment_config_from_json(bad), SpecError);
  bad = to_json(desk_config());
  bad["grids"][0]["family"] = "cyclic";
  EXPECT_THROW(experiment_config_from_json(bad), SpecError);
  bad = to_json(desk_config());
  bad.erase("grids");
  EXPECT_THROW(experiment_config_from_json(bad), SpecError);
}

TEST(Cells, SeedsAndHashesAreStable) {
  const auto a = expand_cells(tiny_config());
  const auto b = expand_cells(tiny_config());
  ASSERT_EQ(a.size(), 2u);
  EXPECT_NE(a[0].seed, a[1].seed);
  EXPECT_EQ(cell_hash(a[0]), cell_hash(b[0]));
  auto c = a[0];
  c.score_jobs = 4;
  EXPECT_EQ(cell_hash(c), cell_hash(a[0]));
  c.n_train += 1;
  EXPECT_NE(cell_hash(c), cell_hash(a[0]));
  EXPECT_EQ(cell_hash(cell_spec_from_json(to_json(a[1]))), cell_hash(a[1]));
}

TEST(Run, DeskConfigEndToEnd) {
  const fs::path out = scratch("desk");
  const ExperimentConfig cfg = desk_config();
  const auto sum = run(cfg, out);
  ASSERT_TRUE(sum.ok()) << sum.failures.front();
  EXPECT_EQ(sum.cells_run, 1u);
  const auto rows = load_results(out / "results.csv");
  // n=2: n̂ ∈ {2, 4} (n-2 = 0 is not a model order); 1 + 3 + 3 + 1 hyperparameter settings each.
  EXPECT_EQ(rows.size(), 16u);
  std::set<std::tuple<std::string, std::string, int, std::string>> keys;
  for (const auto& r : rows) {
    keys.emplace(r.cell_id, r.method, r.n_hat, r.param);
    EXPECT_TRUE(fs::exists(out / r.eval_path));
    EXPECT_EQ(r.entropy_source, "exact");
    EXPECT_EQ(r.eval.n_strings, 3000u);
    if (r.method != "mle") {
      EXPECT_EQ(r.eval.n_inf, 0u);
    }
    ASSERT_TRUE(r.dev_ce.has_value());
  }
  EXPECT_EQ(keys.size(), rows.size());
  for (const char* f : {"manifest.json", "regression.json", "report.csv", "report.txt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  // Smoothed estimators at the true order beat no model at all, and are finite.
  for (const auto& r : rows) {
    if (r.method == "witten_bell") {
      EXPECT_TRUE(std::isfinite(r.eval.KL_hat));
      EXPECT_LT(r.eval.KL_hat, 5.0);
    }
  }
}

TEST(Run, RerunPerformsNoTraining) {
  const fs::path out = scratch("rerun");
  const auto cfg = tiny_config();
  const auto first = run(cfg, out);
  ASSERT_TRUE(first.ok());
  EXPECT_EQ(first.cells_run, 2u);
  EXPECT_GT(first.trainings, 0u);
  const std::string csv = slurp(out / "results.csv");
  const std::string manifest = slurp(out / "manifest.json");
  const auto second = run(cfg, out);
  EXPECT_EQ(second.cells_run, 0u);
  EXPECT_EQ(second.cells_skipped, 2u);
  EXPECT_EQ(second.trainings, 0u);
  EXPECT_EQ(slurp(out / "results.csv"), csv);
  EXPECT_EQ(slurp(out / "manifest.json"), manifest);
}

TEST(Run, CorruptedCellIsRequeued) {
  const fs::path out = scratch("corrupt");
  const auto cfg = tiny_config();
  ASSERT_TRUE(run(cfg, out).ok());
  const std::string csv = slurp(out / "results.csv");
  const auto cells = expand_cells(cfg);
  const fs::path victim = out / "cells" / cells[1].id / "runs" / "witten_bell_n2" / "scores.tsv";
  ASSERT_TRUE(fs::exists(victim));
  write_file_atomic(victim, "garbage\n");
  std::ostringstream log;
  const auto again = run(cfg, out, 1, &log);
  EXPECT_EQ(again.cells_run, 1u);
  EXPECT_EQ(again.cells_skipped, 1u);
  EXPECT_NE(log.str().find("content hash mismatch"), std::string::npos) << log.str();
  EXPECT_EQ(slurp(out / "results.csv"), csv);

  fs::remove(out / "cells" / cells[0].id / "cell.json");
  const auto third = run(cfg, out);
  EXPECT_EQ(third.cells_run, 1u);
  EXPECT_EQ(slurp(out / "results.csv"), csv);
}

TEST(Run, ChangedConfigRecomputes) {
  const fs::path out = scratch("changed");
  auto cfg = tiny_config();
  cfg.replicates = 1;
  ASSERT_TRUE(run(cfg, out).ok());
  cfg.delta_grid = {0.5};
  const auto again = run(cfg, out);
  EXPECT_EQ(again.cells_run, 1u);
  for (const auto& r : load_results(out / "results.csv")) {
    if (r.method == "absolute_discounting") {
      EXPECT_EQ(r.param, "0.5");
    }
  }
}

TEST(Run, ThreeOrdersPerCountMethodAtFour) {
  const fs::path out = scratch("orders");
  auto cfg = tiny_config();
  cfg.replicates = 1;
  cfg.grids[0].n = {4};
  cfg.grids[0].alphabet_size = {3};
  cfg.n_hat = {"n-2", "n", "2n"};
  ASSERT_TRUE(run(cfg, out).ok());
  std::map<std::string, std::set<int>> orders;
  for (const auto& r : load_results(out / "results.csv")) orders[r.method].insert(r.n_hat);
  ASSERT_EQ(orders.size(), 4u);
  for (const auto& [m, o] : orders) EXPECT_EQ(o, (std::set<int>{2, 4, 8})) << m;
}

TEST(Run, JobsDoNotChangeArtifacts) {
  const fs::path a = scratch("jobs1"), b = scratch("jobs3");
  auto cfg = tiny_config();
  cfg.replicates = 3;
  ASSERT_TRUE(run(cfg, a, 1).ok());
  cfg.score_jobs = 2;
  ASSERT_TRUE(run(cfg, b, 3).ok());
  EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
  const Json ma = read_json_file(a / "manifest.json"), mb = read_json_file(b / "manifest.json");
  ASSERT_EQ(ma.at("cells").size(), mb.at("cells").size());
  for (std::size_t i = 0; i < ma.at("cells").size(); ++i) {
    EXPECT_EQ(ma["cells"][i]["hash"], mb["cells"][i]["hash"]);
    EXPECT_EQ(ma["cells"][i]["files"], mb["cells"][i]["files"]);
  }
}

TEST(Replay, ManifestReproducesCellBitIdentically) {
  const fs::path out = scratch("replay");
  const auto cfg = tiny_neural_config();
  ASSERT_TRUE(run(cfg, out).ok());
  const auto cells = expand_cells(cfg);
  const auto r = replay_cell(out / "manifest.json", cells[0].id, scratch("replay_copy"));
  EXPECT_GT(r.compared, 10u);
  EXPECT_TRUE(r.identical());
  EXPECT_THROW(replay_cell(out / "manifest.json", "nope", scratch("replay_none")), InputError);
}

TEST(Models, SavedModelsRescoreToSavedScores) {
  const fs::path out = scratch("models");
  const auto cfg = tiny_neural_config();
  ASSERT_TRUE(run(cfg, out).ok());
  const fs::path cell = out / "cells" / expand_cells(cfg)[0].id;
  const Corpus test = load_corpus(cell / "test.txt");
  for (const char* run_id : {"witten_bell_n3", "loglinear_n3", "neural_n3"}) {
    const auto model = load_model(cell / "runs" / run_id / "model.json");
    const ScoreFile saved = load_scores(cell / "runs" / run_id / "scores.tsv");
    const ScoreFile again = score_corpus(*model, test, run_id);
    EXPECT_EQ(again.logprobs, saved.logprobs) << run_id;
  }
  const auto truth = load_model(cell / "lm.json");
  EXPECT_EQ(score_corpus(*truth, test, "truth").logprobs, load_scores(cell / "truth.scores").logprobs);
}

TEST(Report, MeanAndSampleSd) {
  std::vector<ResultRow> rows;
  for (int i = 1; i <= 5; ++i) rows.push_back(fake_row("c" + std::to_string(i), "witten_bell", i, i));
  const auto agg = aggregate(rows);
  ASSERT_EQ(agg.size(), 2u);  // witten_bell and the classic aggregate
  for (const auto& r : agg) {
    EXPECT_EQ(format_mean_sd(r), "3.00±1.58");
    EXPECT_EQ(r.replicates, 5u);
  }
}

TEST(Report, SingleReplicateIsFlagged) {
  const auto agg = aggregate({fake_row("c1", "neural", 1.25, 1.25)});
  ASSERT_EQ(agg.size(), 1u);
  EXPECT_EQ(format_mean_sd(agg[0]), "1.25±0.00†");
  EXPECT_NE(report_text(agg).find("single replicate"), std::string::npos);
}

TEST(Report, InfinityShownWithFiniteValue) {
  const auto agg = aggregate({fake_row("c1", "mle", kInf, 2.0), fake_row("c2", "mle", 3.0, 3.0)});
  const auto it = std::find_if(agg.begin(), agg.end(), [](const ReportRow& r) { return r.method == "mle"; });
  ASSERT_NE(it, agg.end());
  EXPECT_TRUE(it->has_inf);
  EXPECT_EQ(format_mean_sd(*it), "inf (finite 2.50±0.71)");
}

TEST(Report, ClassicRowTakesPerReplicateMinimumAndBestIsMarked) {
  std::vector<ResultRow> rows{fake_row("c1", "mle", kInf, 1.0),        fake_row("c1", "witten_bell", 2.0, 2.0),
                              fake_row("c1", "add_lambda", 1.5, 1.5), fake_row("c2", "witten_bell", 1.0, 1.0),
                              fake_row("c2", "add_lambda", 3.0, 3.0), fake_row("c1", "neural", 1.7, 1.7),
                              fake_row("c2", "neural", 1.7, 1.7)};
  rows[2].param = "0.1";
  auto extra = fake_row("c1", "add_lambda", 1.2, 1.2);
  extra.param = "1";
  rows.push_back(extra);  // best add-λ setting in c1
  const auto agg = aggregate(rows);
  std::map<std::string, ReportRow> by;
  for (const auto& r : agg) by[r.method] = r;
  EXPECT_DOUBLE_EQ(by["classic"].mean, (1.2 + 1.0) / 2);
  EXPECT_DOUBLE_EQ(by["add_lambda"].mean, (1.2 + 3.0) / 2);
  EXPECT_TRUE(by["witten_bell"].best);
  EXPECT_FALSE(by["classic"].best);
  EXPECT_FALSE(by["neural"].best);
}

TEST(Report, AggregatesMatchRawEvalReports) {
  const fs::path out = scratch("aggregate");
  auto cfg = tiny_config();
  cfg.replicates = 3;
  ASSERT_TRUE(run(cfg, out).ok());
  const auto rows = load_results(out / "results.csv");
  // Recompute witten_bell at n̂=2 from the eval.json files alone.
  std::vector<double> kl;
  for (const auto& r : rows) {
    if (r.method == "witten_bell" && r.n_hat == 2) {
      kl.push_back(eval_report_from_json(read_json_file(out / r.eval_path)).KL_hat);
    }
  }
  ASSERT_EQ(kl.size(), 3u);
  double mean = 0.0;
  for (double v : kl) mean += v;
  mean /= 3.0;
  double ss = 0.0;
  for (double v : kl) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / 2.0);
  for (const auto& r : aggregate(rows)) {
    if (r.method == "witten_bell" && r.n_hat == 2) {
      EXPECT_NEAR(r.mean, mean, 1e-15);
      EXPECT_NEAR(r.sd, sd, 1e-15);
    }
  }
  const std::string text = report(out);
  EXPECT_NE(text.find("witten_bell"), std::string::npos);
  EXPECT_NE(text.find("classic"), std::string::npos);
}

TEST(Regress, ResultsTableRegression) {
  const fs::path out = scratch("regress");
  auto cfg = tiny_config();
  cfg.replicates = 2;
  cfg.grids[0].n = {2, 3};
  cfg.grids[0].alphabet_size = {3, 4};
  ASSERT_TRUE(run(cfg, out).ok());
  const auto rep = regress_results(out / "results.csv", {"n", "alphabet_size", "n_hat"}, {"witten_bell"});
  EXPECT_EQ(rep.fit.names.size(), 4u);
  EXPECT_EQ(rep.n_excluded, 0u);
  EXPECT_GT(rep.n_rows, 4u);
  const Json j = read_json_file(out / "regression.json");
  EXPECT_TRUE(j.contains("coefficients") || j.contains("error"));
}
