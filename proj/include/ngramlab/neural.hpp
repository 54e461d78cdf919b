#pragma once

// Gradient-trained n-gram models: the log-linear model over one-hot history
// concatenations and the feed-forward neural n-gram LM, plus their trainer,
// gradient checker and JSON checkpoints.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ngramlab/autodiff.hpp"
#include "ngramlab/core.hpp"
#include "ngramlab/corpus.hpp"
#include "ngramlab/json_io.hpp"
#include "ngramlab/rng.hpp"

namespace ngramlab {

enum class ModelKind { loglinear, neural };

inline std::string to_string(ModelKind k) { return k == ModelKind::loglinear ? "loglinear" : "neural"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "loglinear") return ModelKind::loglinear;
  if (s == "neural") return ModelKind::neural;
  throw InputError("unknown model kind '" + s + "'");
}

struct TrainConfig {
  double lr = 0.1;
  std::size_t batch = 1024;
  int epochs = 16;
  int halve_every = 5;          // 0 disables the step schedule
  double dev_fraction = 0.0;    // > 0 enables early stopping on a held-out string split
  int patience = 3;
  bool full_data_loss = true;   // epoch loss = inference-mode loss on all training events
  // Rejects an epoch whose full-data loss rose: parameters and moments roll
  // back and the learning rate is halved for the rest of the run.
  bool monotone = true;
  ad::AdamConfig adam;
  std::uint64_t seed = 0;
};

inline TrainConfig loglinear_defaults() { return TrainConfig{}; }

inline TrainConfig neural_defaults() {
  TrainConfig c;
  c.lr = 5e-5;
  c.batch = 128;
  c.epochs = 20;
  c.halve_every = 0;
  c.dev_fraction = 0.2;
  c.patience = 3;
  c.full_data_loss = false;
  c.monotone = false;
  return c;
}

inline Json to_json(const TrainConfig& c) {
  Json j;
  j["lr"] = c.lr;
  j["batch"] = c.batch;
  j["epochs"] = c.epochs;
  j["halve_every"] = c.halve_every;
  j["dev_fraction"] = c.dev_fraction;
  j["patience"] = c.patience;
  j["full_data_loss"] = c.full_data_loss;
  j["monotone"] = c.monotone;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["eps"] = c.adam.eps;
  j["seed"] = c.seed;
  return j;
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.halve_every = j.value("halve_every", c.halve_every);
  c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
  c.patience = j.value("patience", c.patience);
  c.full_data_loss = j.value("full_data_loss", c.full_data_loss);
  c.monotone = j.value("monotone", c.monotone);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("eps", c.adam.eps);
  c.seed = j.value("seed", c.seed);
  return c;
}

/// (history, next symbol) events of a corpus, histories BOS-padded and
/// flattened row-major; the EOS event of each string is included.
struct Events {
  std::size_t width = 0;
  std::vector<Symbol> histories;
  std::vector<Symbol> targets;  // distribution index; EOS = |Σ|

  std::size_t size() const { return targets.size(); }
};

inline Events make_events(const Corpus& c, const Alphabet& a, int n_hat) {
  Events ev;
  ev.width = static_cast<std::size_t>(n_hat - 1);
  std::vector<Symbol> padded;
  for (const auto& y : c.strings) {
    a.validate(y);
    padded.assign(ev.width, a.bos());
    padded.insert(padded.end(), y.begin(), y.end());
    for (std::size_t t = 0; t <= y.size(); ++t) {
      ev.histories.insert(ev.histories.end(), padded.begin() + static_cast<std::ptrdiff_t>(t),
                          padded.begin() + static_cast<std::ptrdiff_t>(t + ev.width));
      ev.targets.push_back(t < y.size() ? y[t] : static_cast<Symbol>(a.eos_index()));
    }
  }
  return ev;
}

/// Common interface of the two gradient-trained models.
class TrainableLM : public NGramLM {
 public:
  using NGramLM::NGramLM;

  virtual ModelKind kind() const = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;
  std::vector<const ad::Parameter*> parameters() const {
    auto ps = const_cast<TrainableLM*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }
  /// Batch logits on a tape; `ids` holds batch × (n̂-1) history ids.
  virtual ad::Tape::Var logits(ad::Tape& tape, std::span<const Symbol> ids, bool train_mode, Rng* rng) = 0;
  /// Rebuilds inference caches after the parameters changed.
  virtual void refresh() = 0;
  virtual Json shape_json() const = 0;

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  /// Conditional for one history through the tape path. With train_mode
  /// the neural model applies dropout drawn from rng.
  ConditionalDistribution forward(const History& h, bool train_mode = false, Rng* rng = nullptr) {
    validate_history(h.window(), alphabet(), order());
    if (h.size() != history_length()) throw ModelError("history length does not match the model order");
    ad::Tape tape;
    const auto z = tape.value(logits(tape, h.window(), train_mode, rng));
    std::vector<double> out(z.data(), z.data() + z.size());
    detail::softmax_inplace(out);
    return ConditionalDistribution(std::move(out));
  }

  bool cheap_point_queries() const override { return false; }
};

/// p(y|h) = softmax(Ê · onehot-concat(h)) over Σ̄, with Ê of shape
/// |Σ̄| × (n̂-1)|Σ̲|.
class LogLinearModel final : public TrainableLM {
 public:
  LogLinearModel(Alphabet alphabet, int n_hat)
      : TrainableLM(alphabet, n_hat),
        w_("E", static_cast<Eigen::Index>(alphabet.with_eos()),
           static_cast<Eigen::Index>(history_length() * alphabet.with_bos())) {
    if (n_hat < 2) throw ModelError("the log-linear model needs n̂ >= 2");
  }

  ModelKind kind() const override { return ModelKind::loglinear; }
  std::string family() const override { return "loglinear"; }
  std::vector<ad::Parameter*> parameters() override { return {&w_}; }
  ad::Parameter& output_matrix() { return w_; }
  const ad::Parameter& output_matrix() const { return w_; }

  ad::Tape::Var logits(ad::Tape& tape, std::span<const Symbol> ids, bool, Rng*) override {
    return tape.sparse_linear(w_, ids, history_length(), alphabet().with_bos());
  }

  void refresh() override {}

  void fill_next(std::span<const Symbol> window, std::span<double> out) const override {
    const std::size_t rows = alphabet().with_eos();
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(rows), 0.0);
    for (std::size_t k = 0; k < window.size(); ++k) {
      const auto col = static_cast<Eigen::Index>(k * alphabet().with_bos() + window[k]);
      for (std::size_t i = 0; i < rows; ++i) out[i] += w_.value(static_cast<Eigen::Index>(i), col);
    }
    detail::softmax_inplace(out.first(rows));
  }

  Json shape_json() const override { return Json::object(); }

 private:
  ad::Parameter w_;
};

struct NeuralShape {
  std::size_t embed_dim = 128;
  std::size_t hidden = 512;
  double dropout = 0.5;
  bool bias = true;  // hidden and output biases
};

/// Embeddings over Σ̲, concatenated, one ReLU hidden layer with dropout,
/// softmax output over Σ̄.
class NeuralNGramModel final : public TrainableLM {
 public:
  NeuralNGramModel(Alphabet alphabet, int n_hat, NeuralShape shape = {})
      : TrainableLM(alphabet, n_hat), shape_(shape) {
    if (n_hat < 2) throw ModelError("the neural n-gram model needs n̂ >= 2");
    if (shape.embed_dim == 0 || shape.hidden == 0) throw ModelError("layer sizes must be positive");
    if (shape.dropout < 0.0 || shape.dropout > 1.0) throw ModelError("dropout rate must lie in [0, 1]");
    const auto v = static_cast<Eigen::Index>(alphabet.with_bos());
    const auto d = static_cast<Eigen::Index>(shape.embed_dim);
    const auto h = static_cast<Eigen::Index>(shape.hidden);
    const auto out = static_cast<Eigen::Index>(alphabet.with_eos());
    const auto in = static_cast<Eigen::Index>(history_length()) * d;
    emb_ = ad::Parameter("embeddings", v, d);
    w1_ = ad::Parameter("W1", h, in);
    b1_ = ad::Parameter("b1", 1, h);
    w2_ = ad::Parameter("W2", out, h);
    b2_ = ad::Parameter("b2", 1, out);
    refresh();
  }

  ModelKind kind() const override { return ModelKind::neural; }
  std::string family() const override { return "neural"; }
  const NeuralShape& shape() const { return shape_; }
  void set_dropout(double rate) { shape_.dropout = rate; }

  std::vector<ad::Parameter*> parameters() override {
    if (shape_.bias) return {&emb_, &w1_, &b1_, &w2_, &b2_};
    return {&emb_, &w1_, &w2_};
  }

  /// Zero-mean uniform init with fan-in scaling; one-hot embedding lookups
  /// have fan-in 1.
  void initialize(std::uint64_t seed) {
    Rng rng = Rng(seed).split("init");
    auto fill = [&](ad::Parameter& p, double bound) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
    };
    fill(emb_, 1.0);
    fill(w1_, 1.0 / std::sqrt(static_cast<double>(w1_.value.cols())));
    fill(w2_, 1.0 / std::sqrt(static_cast<double>(w2_.value.cols())));
    if (shape_.bias) {
      fill(b1_, 1.0 / std::sqrt(static_cast<double>(w1_.value.cols())));
      fill(b2_, 1.0 / std::sqrt(static_cast<double>(w2_.value.cols())));
    }
    refresh();
  }

  ad::Tape::Var logits(ad::Tape& tape, std::span<const Symbol> ids, bool train_mode, Rng* rng) override {
    auto x = tape.embedding_concat(emb_, ids, history_length());
    auto h = tape.relu(tape.linear(x, w1_, shape_.bias ? &b1_ : nullptr));
    if (train_mode && shape_.dropout > 0.0) {
      if (!rng) throw ModelError("train-mode forward needs a random source for dropout");
      h = tape.dropout(h, shape_.dropout, *rng);
    }
    return tape.linear(h, w2_, shape_.bias ? &b2_ : nullptr);
  }

  /// Caches W1 applied to every (position, symbol) embedding so inference
  /// costs (n̂-1)·hidden additions instead of a full first-layer product.
  void refresh() override {
    const std::size_t v = alphabet().with_bos();
    const auto d = static_cast<Eigen::Index>(shape_.embed_dim);
    const auto h = static_cast<Eigen::Index>(shape_.hidden);
    first_layer_.assign(history_length() * v * shape_.hidden, 0.0);
    for (std::size_t pos = 0; pos < history_length(); ++pos) {
      const auto block = w1_.value.middleCols(static_cast<Eigen::Index>(pos) * d, d);
      for (std::size_t s = 0; s < v; ++s) {
        Eigen::Map<Eigen::VectorXd> dst(&first_layer_[(pos * v + s) * shape_.hidden], h);
        dst = block * emb_.value.row(static_cast<Eigen::Index>(s)).transpose();
      }
    }
  }

  void fill_next(std::span<const Symbol> window, std::span<double> out) const override {
    const std::size_t v = alphabet().with_bos();
    const auto h = static_cast<Eigen::Index>(shape_.hidden);
    Eigen::VectorXd act = shape_.bias ? Eigen::VectorXd(b1_.value.row(0).transpose()) : Eigen::VectorXd::Zero(h);
    for (std::size_t pos = 0; pos < window.size(); ++pos) {
      act += Eigen::Map<const Eigen::VectorXd>(&first_layer_[(pos * v + window[pos]) * shape_.hidden], h);
    }
    act = act.cwiseMax(0.0);
    Eigen::Map<Eigen::VectorXd> z(out.data(), static_cast<Eigen::Index>(alphabet().with_eos()));
    z.noalias() = w2_.value * act;
    if (shape_.bias) z += b2_.value.row(0).transpose();
    detail::softmax_inplace(out.first(alphabet().with_eos()));
  }

  Json shape_json() const override {
    Json j;
    j["embed_dim"] = shape_.embed_dim;
    j["hidden"] = shape_.hidden;
    j["dropout"] = shape_.dropout;
    j["bias"] = shape_.bias;
    return j;
  }

 private:
  NeuralShape shape_;
  ad::Parameter emb_, w1_, b1_, w2_, b2_;
  std::vector<double> first_layer_;
};

inline std::unique_ptr<TrainableLM> make_model(ModelKind kind, const Alphabet& a, int n_hat,
                                               const NeuralShape& shape = {}, std::uint64_t seed = 0) {
  if (kind == ModelKind::loglinear) return std::make_unique<LogLinearModel>(a, n_hat);
  auto m = std::make_unique<NeuralNGramModel>(a, n_hat, shape);
  m->initialize(seed);
  return m;
}

// ------------------------------------------------------------------ training

struct TrainResult {
  double initial_loss = 0.0;          // only with full_data_loss
  std::vector<double> epoch_loss;     // per epoch, nats per event
  std::vector<double> dev_loss;       // per epoch, when early stopping is on
  int best_epoch = -1;                // 0-based; -1 without a dev split
  int epochs_run = 0;
  int rejected_epochs = 0;
  std::size_t train_events = 0;
  std::size_t dev_events = 0;
};

/// Mean per-event negative log-likelihood in inference mode.
inline double mean_nll(TrainableLM& model, const Events& ev, std::size_t batch = 4096) {
  if (ev.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < ev.size(); b += batch) {
    const std::size_t e = std::min(ev.size(), b + batch);
    ad::Tape tape;
    auto z = model.logits(tape, std::span<const Symbol>(ev.histories).subspan(b * ev.width, (e - b) * ev.width),
                          false, nullptr);
    auto loss = tape.softmax_cross_entropy(z, std::span<const Symbol>(ev.targets).subspan(b, e - b));
    total += tape.value(loss)(0, 0) * static_cast<double>(e - b);
  }
  return total / static_cast<double>(ev.size());
}

/// Minimizes the mean per-event cross-entropy with Adam over shuffled event
/// mini-batches. Deterministic given cfg.seed.
inline TrainResult train(TrainableLM& model, const Corpus& corpus, const TrainConfig& cfg) {
  if (corpus.size() == 0) throw InputError("cannot train on an empty corpus");
  if (cfg.batch == 0 || cfg.epochs < 0 || cfg.lr < 0.0) throw InputError("bad training configuration");
  const Rng root(cfg.seed);
  Corpus train_part = corpus, dev_part;
  const bool early_stop = cfg.dev_fraction > 0.0;
  if (early_stop) {
    auto parts = split_corpus(corpus, 1.0 - cfg.dev_fraction, root.split("dev-split").seed());
    train_part = std::move(parts.first);
    dev_part = std::move(parts.second);
    if (train_part.size() == 0 || dev_part.size() == 0) {
      throw InputError("corpus too small for a dev split of " + std::to_string(cfg.dev_fraction));
    }
  }
  const Events ev = make_events(train_part, model.alphabet(), model.order());
  const Events dev = early_stop ? make_events(dev_part, model.alphabet(), model.order()) : Events{};

  TrainResult res;
  res.train_events = ev.size();
  res.dev_events = dev.size();
  if (cfg.full_data_loss) res.initial_loss = mean_nll(model, ev);

  auto params = model.parameters();
  for (auto* p : params) {
    p->m.setZero();
    p->v.setZero();
  }
  Rng shuffle_rng = root.split("shuffle");
  Rng dropout_rng = root.split("dropout");
  std::vector<std::size_t> order(ev.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Symbol> hbuf, tbuf;
  long step = 0;
  double best_dev = kInf;
  int since_best = 0;
  std::vector<ad::Matrix> best_values;
  const bool monotone = cfg.monotone && cfg.full_data_loss;
  double accepted_loss = res.initial_loss;
  double lr_scale = 1.0;
  std::vector<ad::Parameter> epoch_start;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        lr_scale * (cfg.halve_every > 0 ? cfg.lr * std::pow(0.5, epoch / cfg.halve_every) : cfg.lr);
    const long step_at_start = step;
    if (monotone) {
      epoch_start.clear();
      for (auto* p : params) epoch_start.push_back(*p);
    }
    shuffle_rng.shuffle(order);
    double batch_loss_sum = 0.0;
    for (std::size_t b = 0; b < ev.size(); b += cfg.batch) {
      const std::size_t e = std::min(ev.size(), b + cfg.batch);
      hbuf.clear();
      tbuf.clear();
      for (std::size_t i = b; i < e; ++i) {
        const std::size_t idx = order[i];
        hbuf.insert(hbuf.end(), ev.histories.begin() + static_cast<std::ptrdiff_t>(idx * ev.width),
                    ev.histories.begin() + static_cast<std::ptrdiff_t>((idx + 1) * ev.width));
        tbuf.push_back(ev.targets[idx]);
      }
      for (auto* p : params) p->zero_grad();
      ad::Tape tape;
      auto z = model.logits(tape, hbuf, true, &dropout_rng);
      auto loss = tape.softmax_cross_entropy(z, tbuf);
      const double lv = tape.value(loss)(0, 0);
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite loss " << lv << " at epoch " << epoch + 1 << ", events " << b << ".." << e
            << " (lr " << lr << ")";
        throw TrainingError(msg.str());
      }
      tape.backward(loss);
      ++step;
      for (auto* p : params) ad::adam_update(*p, lr, step, cfg.adam);
      batch_loss_sum += lv * static_cast<double>(e - b);
    }
    model.refresh();
    res.epoch_loss.push_back(cfg.full_data_loss ? mean_nll(model, ev)
                                                : batch_loss_sum / static_cast<double>(ev.size()));
    if (!std::isfinite(res.epoch_loss.back())) {
      throw TrainingError("non-finite epoch loss at epoch " + std::to_string(epoch + 1));
    }
    if (monotone) {
      if (res.epoch_loss.back() > accepted_loss) {
        for (std::size_t i = 0; i < params.size(); ++i) *params[i] = epoch_start[i];
        step = step_at_start;
        lr_scale *= 0.5;
        model.refresh();
        res.epoch_loss.back() = accepted_loss;
        ++res.rejected_epochs;
      }
      accepted_loss = res.epoch_loss.back();
    }
    ++res.epochs_run;
    if (early_stop) {
      const double d = mean_nll(model, dev);
      res.dev_loss.push_back(d);
      if (d < best_dev) {
        best_dev = d;
        res.best_epoch = epoch;
        since_best = 0;
        best_values.clear();
        for (auto* p : params) best_values.push_back(p->value);
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (early_stop && !best_values.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  }
  model.refresh();
  return res;
}

// ------------------------------------------------------------- gradcheck

/// Largest |g - ĝ| / max(|g|, |ĝ|, 1e-8) between analytic gradients and
/// central differences (step 1e-5) over every parameter of a small random
/// model on a random batch, with dropout off. For the neural model, hidden
/// pre-activations are first pushed at least 1e-3 away from the ReLU kink.
inline double gradcheck(ModelKind kind, std::uint64_t seed) {
  const Alphabet a(3);
  const int n_hat = 3;
  Rng rng = Rng(seed).split("gradcheck");
  std::unique_ptr<TrainableLM> model;
  if (kind == ModelKind::loglinear) {
    model = std::make_unique<LogLinearModel>(a, n_hat);
  } else {
    NeuralShape shape;
    shape.embed_dim = 4;
    shape.hidden = 6;
    shape.dropout = 0.0;
    model = std::make_unique<NeuralNGramModel>(a, n_hat, shape);
  }
  auto params = model->parameters();
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = 0.5 * rng.normal();
  }
  const std::size_t batch = 8;
  std::vector<Symbol> ids, targets;
  for (std::size_t b = 0; b < batch; ++b) {
    // Valid padded histories: j leading BOS then plain symbols.
    const std::size_t j = rng.below(n_hat);
    for (std::size_t k = 0; k < static_cast<std::size_t>(n_hat - 1); ++k) {
      ids.push_back(k < j ? a.bos() : static_cast<Symbol>(rng.below(a.size())));
    }
    targets.push_back(static_cast<Symbol>(rng.below(a.with_eos())));
  }

  auto loss_of = [&]() {
    ad::Tape tape;
    auto z = model->logits(tape, ids, false, nullptr);
    return tape.value(tape.softmax_cross_entropy(z, targets))(0, 0);
  };

  if (kind == ModelKind::neural) {
    auto* nm = static_cast<NeuralNGramModel*>(model.get());
    auto* b1 = nm->parameters()[2];
    for (int iter = 0; iter < 100; ++iter) {
      ad::Tape tape;
      auto* emb = nm->parameters()[0];
      auto* w1 = nm->parameters()[1];
      auto x = tape.embedding_concat(*emb, ids, static_cast<std::size_t>(n_hat - 1));
      const ad::Matrix pre = tape.value(tape.linear(x, *w1, b1));
      bool moved = false;
      for (Eigen::Index j = 0; j < pre.cols(); ++j) {
        if (pre.col(j).cwiseAbs().minCoeff() < 1e-3) {
          b1->value(0, j) += 3e-3;
          moved = true;
        }
      }
      if (!moved) break;
    }
  }

  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    auto z = model->logits(tape, ids, false, nullptr);
    tape.backward(tape.softmax_cross_entropy(z, targets));
  }
  const double h = 1e-5;
  double worst = 0.0;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss_of();
      x = saved - h;
      const double down = loss_of();
      x = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

// ------------------------------------------------------------ checkpoints

inline Json checkpoint_json(const TrainableLM& model, const TrainConfig& cfg, const TrainResult& res) {
  Json j;
  j["kind"] = to_string(model.kind());
  j["n_hat"] = model.order();
  j["alphabet_size"] = model.alphabet().size();
  j["shape"] = model.shape_json();
  Json shapes = Json::object(), values = Json::object();
  for (const auto* p : model.parameters()) {
    shapes[p->name] = std::vector<Eigen::Index>{p->value.rows(), p->value.cols()};
    values[p->name] = std::vector<double>(p->value.data(), p->value.data() + p->value.size());
  }
  j["shapes"] = std::move(shapes);
  j["params"] = std::move(values);
  j["cfg"] = to_json(cfg);
  j["seed"] = cfg.seed;
  j["final_losses"] = res.epoch_loss;
  j["dev_losses"] = res.dev_loss;
  j["best_epoch"] = res.best_epoch;
  return j;
}

inline std::unique_ptr<TrainableLM> model_from_checkpoint(const Json& j) {
  try {
    const auto kind = parse_model_kind(j.at("kind").get<std::string>());
    const Alphabet a(j.at("alphabet_size").get<std::size_t>());
    const int n_hat = j.at("n_hat").get<int>();
    std::unique_ptr<TrainableLM> m;
    if (kind == ModelKind::loglinear) {
      m = std::make_unique<LogLinearModel>(a, n_hat);
    } else {
      const auto& s = j.at("shape");
      NeuralShape shape;
      shape.embed_dim = s.at("embed_dim").get<std::size_t>();
      shape.hidden = s.at("hidden").get<std::size_t>();
      shape.dropout = s.at("dropout").get<double>();
      shape.bias = s.at("bias").get<bool>();
      m = std::make_unique<NeuralNGramModel>(a, n_hat, shape);
    }
    for (auto* p : m->parameters()) {
      const auto dims = j.at("shapes").at(p->name).get<std::vector<Eigen::Index>>();
      const auto flat = j.at("params").at(p->name).get<std::vector<double>>();
      if (dims.size() != 2 || dims[0] != p->value.rows() || dims[1] != p->value.cols() ||
          static_cast<Eigen::Index>(flat.size()) != p->value.size()) {
        throw ModelError("checkpoint parameter " + p->name + " has the wrong shape");
      }
      std::copy(flat.begin(), flat.end(), p->value.data());
    }
    m->refresh();
    return m;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace ngramlab
