#include "gtf/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

namespace gtf {

using nlohmann::json;

std::string task_name(Task task) {
  switch (task) {
    case Task::kBinary: return "binary";
    case Task::kMulticlass: return "multiclass";
    case Task::kMultilabel: return "multilabel";
  }
  throw ConfigError("task_name: bad task value");
}

Task task_from_name(const std::string& name) {
  if (name == "binary") return Task::kBinary;
  if (name == "multiclass") return Task::kMulticlass;
  if (name == "multilabel") return Task::kMultilabel;
  throw ConfigError("config: unknown task '" + name + "'");
}

PipelineConfig TrainConfig::pipeline() const {
  PipelineConfig p;
  p.tau = tau;
  p.iterations = iterations;
  p.ablation = ablation;
  p.label_axis = label_axis;
  p.downward_identity = downward_identity;
  return p;
}

ModelConfig TrainConfig::model_config(int n_labels) const {
  ModelConfig m;
  m.d = d;
  m.n_labels = n_labels;
  m.combine = gat_combine;
  m.trainable_embedding = embedding.kind == EmbeddingBackend::kTable;
  return m;
}

void TrainConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ConfigError("config: tau must lie in (0,1), got " + std::to_string(tau));
  }
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("config: max_epochs must be >= 1");
  if (d < 1) throw ConfigError("config: d must be >= 1");
  if (iterations < 1) throw ConfigError("config: iterations must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
    throw ConfigError("config: lr_decay_factor must lie in (0,1]");
  }
  if (min_count < 1) throw ConfigError("config: min_count must be >= 1");
  if (patience < 1) throw ConfigError("config: patience must be >= 1");
  if (embedding.kind == EmbeddingBackend::kFile && embedding.path.empty()) {
    throw ConfigError("config: embedding backend 'file' needs a path");
  }
}

TrainConfig parse_train_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");

  static const std::set<std::string> known = {
      "lr",         "lr_decay_factor", "batch_size",         "max_epochs",
      "tau",        "d",               "seed",               "task",
      "ablate",     "embedding",       "iterations",         "gat_combine",
      "label_softmax_axis", "downward_identity", "min_count", "patience"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  }

  TrainConfig cfg;
  try {
    cfg.lr = j.value("lr", cfg.lr);
    cfg.lr_decay_factor = j.value("lr_decay_factor", cfg.lr_decay_factor);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.d = j.value("d", static_cast<long>(cfg.d));
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("task")) cfg.task = task_from_name(j.at("task").get<std::string>());
    if (j.contains("ablate")) {
      std::vector<std::string> flags = j.at("ablate").get<std::vector<std::string>>();
      cfg = apply_ablation(std::move(cfg), flags);
    }
    if (j.contains("embedding")) {
      const json& e = j.at("embedding");
      for (const auto& [key, value] : e.items()) {
        if (key != "backend" && key != "path") {
          throw ConfigError("config: unknown embedding key '" + key + "'");
        }
      }
      const std::string backend = e.value("backend", std::string("table"));
      if (backend == "table") {
        cfg.embedding.kind = EmbeddingBackend::kTable;
      } else if (backend == "file") {
        cfg.embedding.kind = EmbeddingBackend::kFile;
      } else {
        throw ConfigError("config: unknown embedding backend '" + backend + "'");
      }
      cfg.embedding.path = e.value("path", std::string());
    }
    cfg.iterations = j.value("iterations", cfg.iterations);
    if (j.contains("gat_combine")) {
      const std::string c = j.at("gat_combine").get<std::string>();
      if (c == "mean") {
        cfg.gat_combine = GatCombine::kMean;
      } else if (c == "concat") {
        cfg.gat_combine = GatCombine::kConcat;
      } else {
        throw ConfigError("config: unknown gat_combine '" + c + "'");
      }
    }
    if (j.contains("label_softmax_axis")) {
      const std::string a = j.at("label_softmax_axis").get<std::string>();
      if (a == "labels") {
        cfg.label_axis = LabelSoftmaxAxis::kLabels;
      } else if (a == "sentences") {
        cfg.label_axis = LabelSoftmaxAxis::kSentences;
      } else {
        throw ConfigError("config: unknown label_softmax_axis '" + a + "'");
      }
    }
    cfg.downward_identity = j.value("downward_identity", cfg.downward_identity);
    cfg.min_count = j.value("min_count", cfg.min_count);
    cfg.patience = j.value("patience", cfg.patience);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config_text(buf.str());
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["batch_size"] = cfg.batch_size;
  j["max_epochs"] = cfg.max_epochs;
  j["tau"] = cfg.tau;
  j["d"] = static_cast<long>(cfg.d);
  j["seed"] = cfg.seed;
  j["task"] = task_name(cfg.task);
  json flags = json::array();
  if (cfg.ablation.no_ctt) flags.push_back("no_ctt");
  if (cfg.ablation.no_dtt) flags.push_back("no_dtt");
  if (cfg.ablation.no_gat) flags.push_back("no_gat");
  if (cfg.ablation.no_bidir) flags.push_back("no_bidir");
  j["ablate"] = flags;
  j["embedding"] = {
      {"backend", cfg.embedding.kind == EmbeddingBackend::kTable ? "table" : "file"},
      {"path", cfg.embedding.path}};
  j["iterations"] = cfg.iterations;
  j["gat_combine"] = cfg.gat_combine == GatCombine::kMean ? "mean" : "concat";
  j["label_softmax_axis"] =
      cfg.label_axis == LabelSoftmaxAxis::kLabels ? "labels" : "sentences";
  j["downward_identity"] = cfg.downward_identity;
  j["min_count"] = cfg.min_count;
  j["patience"] = cfg.patience;
  return j.dump();
}

TrainConfig apply_ablation(TrainConfig cfg, const std::vector<std::string>& flags) {
  for (const std::string& f : flags) {
    if (f == "no_ctt") {
      cfg.ablation.no_ctt = true;
    } else if (f == "no_dtt") {
      cfg.ablation.no_dtt = true;
    } else if (f == "no_tree") {
      cfg.ablation.no_ctt = true;
      cfg.ablation.no_dtt = true;
    } else if (f == "no_gat") {
      cfg.ablation.no_gat = true;
    } else if (f == "no_bidir") {
      cfg.ablation.no_bidir = true;
    } else {
      throw ConfigError("config: unknown ablation flag '" + f + "'");
    }
  }
  return cfg;
}

Tensor classify(const Tensor& doc_vec, const HeadParams& head, Task task) {
  Tensor z = tanh(affine(doc_vec, head.w1, head.b1));
  Tensor logits = affine(z, head.w2, head.b2);
  return task == Task::kMultilabel ? sigmoid(logits) : softmax(logits, 0);
}

Tensor loss_fn(const Tensor& probs, const std::vector<int>& gold, Task task) {
  const Index n_labels = probs.numel();
  for (int g : gold) {
    if (g < 0 || g >= n_labels) {
      throw DataError("loss: gold label " + std::to_string(g) + " outside 0.." +
                      std::to_string(n_labels - 1));
    }
  }
  if (task != Task::kMultilabel) {
    if (gold.size() != 1) {
      throw DataError("loss: single-label task expects exactly one gold label, got " +
                      std::to_string(gold.size()));
    }
    Tensor p = gather_rows(probs, {static_cast<Index>(gold[0])});
    return scale(log(clamp(p, 1e-12, 1.0 - 1e-12)), -1.0);
  }
  Vec pos_mask = Vec::Zero(n_labels);
  for (int g : gold) pos_mask[g] = 1.0;
  Tensor y = Tensor::from_flat(pos_mask, {n_labels}, false);
  Tensor not_y = Tensor::from_flat((1.0 - pos_mask.array()).matrix(), {n_labels}, false);
  Tensor cp = clamp(probs, 1e-12, 1.0 - 1e-12);
  Tensor pos = mul(y, log(cp));
  Tensor neg = mul(not_y, log(add_scalar(scale(cp, -1.0), 1.0)));
  return scale(sum_all(add(pos, neg)), -1.0 / static_cast<Scalar>(n_labels));
}

double next_lr(double lr, double factor, bool validation_declined) {
  return validation_declined ? lr * factor : lr;
}

namespace {

Tensor forward_doc(const Model& model, const Document& doc, const TrainConfig& cfg) {
  TwoPassResult r = iterate_updates(doc, model, cfg.pipeline(), cfg.iterations);
  return classify(r.doc_final, model.params.head, cfg.task);
}

struct DocPrediction {
  int argmax = 0;
  std::vector<bool> positive;
};

DocPrediction prediction_from(const Vec& probs) {
  DocPrediction p;
  p.positive.resize(static_cast<std::size_t>(probs.size()));
  for (Index j = 0; j < probs.size(); ++j) {
    if (probs[j] > probs[p.argmax]) p.argmax = static_cast<int>(j);
    p.positive[static_cast<std::size_t>(j)] = probs[j] >= 0.5;
  }
  return p;
}

double metric_over(const std::vector<DocPrediction>& preds,
                   const std::vector<const Document*>& docs, Task task, int n_labels) {
  if (task != Task::kMultilabel) {
    std::vector<int> predicted, gold;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (docs[i]->gold.size() != 1) {
        throw DataError("evaluate: single-label task expects one gold label per document");
      }
      predicted.push_back(preds[i].argmax);
      gold.push_back(docs[i]->gold[0]);
    }
    return accuracy_from(predicted, gold);
  }
  std::vector<std::vector<bool>> predicted, gold;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    predicted.push_back(preds[i].positive);
    std::vector<bool> g(static_cast<std::size_t>(n_labels), false);
    for (int label : docs[i]->gold) g[static_cast<std::size_t>(label)] = true;
    gold.push_back(std::move(g));
  }
  return macro_f1_from(predicted, gold, n_labels);
}

double metric_for_docs(const Model& model, const std::vector<const Document*>& docs,
                       const TrainConfig& cfg) {
  std::vector<DocPrediction> preds;
  preds.reserve(docs.size());
  for (const Document* doc : docs) {
    Tensor probs = forward_doc(model, *doc, cfg);
    preds.push_back(prediction_from(probs.values()));
  }
  return metric_over(preds, docs, cfg.task, model.labels.size());
}

int stratum_of(const Document& doc, Task task, int n_labels,
               const std::vector<long>& label_freq) {
  if (task != Task::kMultilabel) {
    return doc.gold.empty() ? n_labels : doc.gold[0];
  }
  int best = -1;
  long best_freq = -1;
  for (int g : doc.gold) {
    if (label_freq[static_cast<std::size_t>(g)] > best_freq) {
      best_freq = label_freq[static_cast<std::size_t>(g)];
      best = g;
    }
  }
  return best < 0 ? n_labels : best;
}

std::vector<std::vector<int>> stratified_folds(const std::vector<Document>& docs, int k,
                                               Task task, int n_labels,
                                               std::uint64_t seed, bool warn) {
  std::vector<long> label_freq(static_cast<std::size_t>(n_labels), 0);
  for (const Document& d : docs) {
    for (int g : d.gold) ++label_freq[static_cast<std::size_t>(g)];
  }
  std::vector<std::vector<int>> strata(static_cast<std::size_t>(n_labels) + 1);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    strata[static_cast<std::size_t>(stratum_of(docs[i], task, n_labels, label_freq))]
        .push_back(static_cast<int>(i));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  int cursor = 0;  // carries over between strata so fold sizes stay balanced
  for (auto& members : strata) {
    if (members.empty()) continue;
    if (warn && static_cast<int>(members.size()) < k) {
      std::cerr << "cross_validate: a class has fewer members (" << members.size()
                << ") than folds (" << k << "); placement degrades to unstratified\n";
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (int idx : members) {
      folds[static_cast<std::size_t>(cursor % k)].push_back(idx);
      ++cursor;
    }
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());
  return folds;
}

struct TrainValSplit {
  std::vector<int> train, val;
};

TrainValSplit train_val_split(const std::vector<Document>& docs, const TrainConfig& cfg,
                              int n_labels) {
  TrainValSplit split;
  if (docs.size() < 2) {
    split.train = {0};
    split.val = {0};
    return split;
  }
  auto folds =
      stratified_folds(docs, 10, cfg.task, n_labels, cfg.seed ^ 0xA5A5A5A5ull, false);
  std::vector<bool> in_val(docs.size(), false);
  for (int i : folds[0]) {
    split.val.push_back(i);
    in_val[static_cast<std::size_t>(i)] = true;
  }
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!in_val[i]) split.train.push_back(static_cast<int>(i));
  }
  if (split.val.empty()) split.val.push_back(split.train.back());
  return split;
}

Model clone_model(const Model& master, const TrainConfig& cfg) {
  Model clone;
  clone.vocab = master.vocab;
  clone.labels = master.labels;
  std::mt19937_64 rng(0);
  clone.params =
      init_model_params(cfg.model_config(master.labels.size()), clone.vocab, rng);
  restore_values(clone.params, snapshot_values(master.params));
  return clone;
}

/// Per-document gradients of the batch, merged in document order so the
/// result is identical whether computed sequentially or on worker threads.
double batch_gradients(Model& model, const std::vector<const Document*>& batch,
                       const TrainConfig& cfg, int threads, std::vector<double>& losses) {
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  std::vector<Tensor> trainable = model.params.trainable_parameters();
  std::vector<std::vector<Vec>> per_doc(batch.size());
  losses.assign(batch.size(), 0.0);

  auto run_on = [&](Model& m, std::size_t position) {
    std::vector<Tensor> params = m.params.trainable_parameters();
    zero_grads(params);
    Tape tape;
    double loss_value = 0.0;
    {
      TapeScope scope(tape);
      Tensor probs = forward_doc(m, *batch[position], cfg);
      Tensor loss = loss_fn(probs, batch[position]->gold, cfg.task);
      loss_value = loss(0);
      if (!std::isfinite(loss_value)) {
        throw NumericalError("train: non-finite loss on document '" +
                             batch[position]->id + "'");
      }
      tape.backward(loss, Tensor::scalar(inv_batch));
    }
    losses[position] = loss_value;
    std::vector<Vec> grads;
    grads.reserve(params.size());
    for (Tensor& p : params) {
      grads.push_back(p.has_grad() ? p.grad() : Vec(Vec::Zero(p.numel())));
    }
    per_doc[position] = std::move(grads);
  };

  if (threads <= 1 || batch.size() == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) run_on(model, i);
  } else {
    const int workers = std::min<int>(threads, static_cast<int>(batch.size()));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          Model local = clone_model(model, cfg);
          for (std::size_t i = static_cast<std::size_t>(w); i < batch.size();
               i += static_cast<std::size_t>(workers)) {
            run_on(local, i);
          }
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  zero_grads(trainable);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t t = 0; t < trainable.size(); ++t) {
      trainable[t].grad_mut() += per_doc[i][t];
    }
  }
  double loss_sum = 0.0;
  for (double l : losses) loss_sum += l;
  return loss_sum;
}

Corpus subset_corpus(const Corpus& corpus, const std::vector<int>& indices) {
  Corpus out;
  out.labels = corpus.labels;
  for (int i : indices) out.docs.push_back(corpus.docs[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<const Document*> doc_pointers(const Corpus& corpus,
                                          const std::vector<int>& indices) {
  std::vector<const Document*> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(&corpus.docs[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

TrainResult train(const Corpus& corpus, const TrainConfig& cfg, int threads) {
  cfg.validate();
  if (corpus.docs.empty()) throw DataError("train: empty corpus");

  std::mt19937_64 rng(cfg.seed);
  Model model;
  model.vocab = build_vocab(corpus, cfg.min_count);
  model.labels = corpus.labels;
  model.params =
      init_model_params(cfg.model_config(model.labels.size()), model.vocab, rng);
  if (cfg.embedding.kind == EmbeddingBackend::kFile) {
    std::mt19937_64 erng(cfg.seed ^ 0x5eedull);
    model.params.embedding = load_embedding_file(cfg.embedding.path, model.vocab, erng);
    if (model.params.embedding.dim() != cfg.d) {
      throw ConfigError("config: embedding file width " +
                        std::to_string(model.params.embedding.dim()) +
                        " does not match d=" + std::to_string(cfg.d));
    }
  }

  TrainValSplit split = train_val_split(corpus.docs, cfg, model.labels.size());
  std::vector<const Document*> val_docs = doc_pointers(corpus, split.val);

  std::vector<Tensor> trainable = model.params.trainable_parameters();
  AdagradState opt;
  opt.lr = cfg.lr;

  double best_val = -std::numeric_limits<double>::infinity();
  double prev_val = -std::numeric_limits<double>::infinity();
  std::vector<Vec> best_snapshot = snapshot_values(model.params);
  int best_epoch = 0;
  std::mt19937_64 shuffle_rng(cfg.seed + 0x51ABull);
  std::vector<EpochRecord> history;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<int> order = split.train;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr_in_effect = opt.lr;

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Document*> batch;
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&corpus.docs[static_cast<std::size_t>(order[i])]);
      }
      std::vector<double> losses;
      loss_sum += batch_gradients(model, batch, cfg, threads, losses);
      adagrad_step(trainable, opt);
    }

    const double train_loss = loss_sum / static_cast<double>(split.train.size());
    const double val_metric = metric_for_docs(model, val_docs, cfg);
    history.push_back({epoch, lr_in_effect, train_loss, val_metric});

    if (val_metric >= best_val) {
      // ties keep the most recent weights; patience counts strict gains only
      if (val_metric > best_val) best_epoch = epoch;
      best_val = val_metric;
      best_snapshot = snapshot_values(model.params);
    }
    if (epoch > 1 && val_metric < prev_val) {
      opt.lr = next_lr(opt.lr, cfg.lr_decay_factor, true);
    }
    prev_val = val_metric;
    if (epoch - best_epoch >= cfg.patience) break;
  }

  restore_values(model.params, best_snapshot);
  return {std::move(model), std::move(history)};
}

double evaluate_metric(const Model& model, const std::vector<Document>& docs,
                       const TrainConfig& cfg) {
  std::vector<const Document*> ptrs;
  ptrs.reserve(docs.size());
  for (const Document& d : docs) ptrs.push_back(&d);
  return metric_for_docs(model, ptrs, cfg);
}

Metrics evaluate(const Model& model, const Corpus& corpus, const TrainConfig& cfg) {
  Metrics m;
  m.metric = cfg.task == Task::kMultilabel ? "macro_f1" : "accuracy";
  const double value = evaluate_metric(model, corpus.docs, cfg);
  m.mean = value;
  m.stdev = 0.0;
  m.per_fold = {value};
  return m;
}

double accuracy_from(const std::vector<int>& predicted, const std::vector<int>& gold) {
  if (predicted.size() != gold.size()) {
    throw ShapeError("accuracy_from: prediction/gold size mismatch");
  }
  if (predicted.empty()) return 0.0;
  long correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == gold[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

double macro_f1_from(const std::vector<std::vector<bool>>& predicted,
                     const std::vector<std::vector<bool>>& gold, int n_labels) {
  if (predicted.size() != gold.size()) {
    throw ShapeError("macro_f1_from: prediction/gold size mismatch");
  }
  if (n_labels <= 0) return 0.0;
  double f1_sum = 0.0;
  for (int label = 0; label < n_labels; ++label) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const bool p = predicted[i][static_cast<std::size_t>(label)];
      const bool g = gold[i][static_cast<std::size_t>(label)];
      if (p && g) ++tp;
      if (p && !g) ++fp;
      if (!p && g) ++fn;
    }
    const long denom = 2 * tp + fp + fn;
    f1_sum += denom > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
  }
  return f1_sum / n_labels;
}

std::vector<std::vector<int>> stratified_fold_indices(const Corpus& corpus, int k,
                                                      const TrainConfig& cfg) {
  return stratified_folds(corpus.docs, k, cfg.task, corpus.labels.size(), cfg.seed,
                          /*warn=*/false);
}

std::vector<Eigen::VectorXd> predict(const Model& model, const Corpus& corpus,
                                     const TrainConfig& cfg) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(corpus.docs.size());
  for (const Document& doc : corpus.docs) {
    out.push_back(forward_doc(model, doc, cfg).values());
  }
  return out;
}

Metrics cross_validate(const Corpus& corpus, int k, const TrainConfig& cfg,
                       int threads) {
  if (k < 2) throw ConfigError("cross_validate: fold count must be >= 2");
  if (static_cast<int>(corpus.docs.size()) < k) {
    throw DataError("cross_validate: corpus of " + std::to_string(corpus.docs.size()) +
                    " documents cannot fill " + std::to_string(k) + " folds");
  }
  auto folds = stratified_folds(corpus.docs, k, cfg.task, corpus.labels.size(),
                                cfg.seed, /*warn=*/true);

  Metrics m;
  m.metric = cfg.task == Task::kMultilabel ? "macro_f1" : "accuracy";
  m.per_fold.assign(static_cast<std::size_t>(k), 0.0);

  auto run_fold = [&](int f) {
    std::vector<int> train_idx;
    for (int g = 0; g < k; ++g) {
      if (g == f) continue;
      for (int i : folds[static_cast<std::size_t>(g)]) train_idx.push_back(i);
    }
    std::sort(train_idx.begin(), train_idx.end());
    Corpus train_part = subset_corpus(corpus, train_idx);
    Corpus test_part = subset_corpus(corpus, folds[static_cast<std::size_t>(f)]);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(f + 1));
    TrainResult r = train(train_part, fold_cfg, 1);
    m.per_fold[static_cast<std::size_t>(f)] =
        evaluate_metric(r.model, test_part.docs, fold_cfg);
  };

  if (threads <= 1) {
    for (int f = 0; f < k; ++f) run_fold(f);
  } else {
    const int workers = std::min(threads, k);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (int f = w; f < k; f += workers) run_fold(f);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  double sum = 0.0;
  for (double v : m.per_fold) sum += v;
  m.mean = sum / static_cast<double>(k);
  double sq = 0.0;
  for (double v : m.per_fold) sq += (v - m.mean) * (v - m.mean);
  m.stdev = std::sqrt(sq / static_cast<double>(k));
  return m;
}

std::vector<double> tau_coarse_grid() {
  std::vector<double> grid;
  for (int k = 5; k <= 50; k += 5) grid.push_back(static_cast<double>(k) / 100.0);
  return grid;
}

std::vector<double> tau_fine_grid(double coarse_best) {
  const int center = static_cast<int>(std::lround(coarse_best * 100.0));
  std::vector<double> grid;
  for (int k = std::max(1, center - 5); k <= std::min(99, center + 5); ++k) {
    grid.push_back(static_cast<double>(k) / 100.0);
  }
  return grid;
}

TauSearchResult tune_tau(const Corpus& corpus, const TrainConfig& cfg) {
  TrainValSplit split = train_val_split(corpus.docs, cfg, corpus.labels.size());
  Corpus train_part = subset_corpus(corpus, split.train);
  Corpus val_part = subset_corpus(corpus, split.val);

  std::map<int, double> scores;  // tau in hundredths -> validation metric
  auto evaluate_tau = [&](double tau) {
    const int hundredths = static_cast<int>(std::lround(tau * 100.0));
    if (scores.count(hundredths)) return;
    TrainConfig t = cfg;
    t.tau = tau;
    TrainResult r = train(train_part, t, 1);
    scores[hundredths] = evaluate_metric(r.model, val_part.docs, t);
  };

  for (double tau : tau_coarse_grid()) evaluate_tau(tau);
  int coarse_best = 5;
  for (int k = 5; k <= 50; k += 5) {
    if (scores.at(k) > scores.at(coarse_best)) coarse_best = k;
  }
  for (double tau : tau_fine_grid(static_cast<double>(coarse_best) / 100.0)) {
    evaluate_tau(tau);
  }

  int winner = -1;
  for (const auto& [k, score] : scores) {
    if (winner < 0 || score > scores.at(winner)) winner = k;  // ties keep the smaller tau
  }

  TauSearchResult result;
  result.best_tau = static_cast<double>(winner) / 100.0;
  for (const auto& [k, score] : scores) {
    result.table.emplace_back(static_cast<double>(k) / 100.0, score);
  }
  return result;
}

ChunkFractions chunk_analysis(const Model& model, const Corpus& corpus,
                              const TrainConfig& cfg) {
  // selection happens in the first pass, so the downward machinery is skipped
  TrainConfig fast = cfg;
  fast.ablation.no_bidir = true;

  double sums[3] = {0, 0, 0};
  long counts[3] = {0, 0, 0};
  for (const Document& doc : corpus.docs) {
    TwoPassResult r = iterate_updates(doc, model, fast.pipeline(), 1);
    const int n = static_cast<int>(doc.sentences.size());
    const int base = n / 3, rem = n % 3;
    int start = 0;
    for (int c = 0; c < 3; ++c) {
      const int size = base + (c < rem ? 1 : 0);
      if (size == 0) continue;
      int selected = 0;
      for (int i = start; i < start + size; ++i) {
        if (r.state.attention.selected[static_cast<std::size_t>(i)]) ++selected;
      }
      sums[c] += static_cast<double>(selected) / static_cast<double>(size);
      ++counts[c];
      start += size;
    }
  }
  ChunkFractions out;
  for (int c = 0; c < 3; ++c) {
    out.fraction[c] = counts[c] > 0 ? sums[c] / static_cast<double>(counts[c]) : 0.0;
  }
  return out;
}

std::vector<AblationRow> run_ablation_suite(const Corpus& corpus, const TrainConfig& cfg,
                                            int threads,
                                            const std::vector<std::string>& only) {
  auto folds = stratified_folds(corpus.docs, 5, cfg.task, corpus.labels.size(),
                                cfg.seed ^ 0xAB1A7E, false);
  std::vector<int> train_idx;
  for (int g = 1; g < 5; ++g) {
    for (int i : folds[static_cast<std::size_t>(g)]) train_idx.push_back(i);
  }
  std::sort(train_idx.begin(), train_idx.end());
  Corpus train_part = subset_corpus(corpus, train_idx);
  Corpus test_part = subset_corpus(corpus, folds[0]);

  std::vector<std::pair<std::string, std::vector<std::string>>> variants = {
      {"full", {}},
      {"no_ctt", {"no_ctt"}},
      {"no_dtt", {"no_dtt"}},
      {"no_tree", {"no_tree"}},
      {"no_gat", {"no_gat"}},
      {"no_bidir", {"no_bidir"}},
  };
  if (!only.empty()) {
    std::vector<std::pair<std::string, std::vector<std::string>>> kept = {variants[0]};
    for (const std::string& name : only) {
      bool found = false;
      for (const auto& v : variants) {
        if (v.first == name) {
          kept.push_back(v);
          found = true;
        }
      }
      if (!found) throw ConfigError("ablate: unknown variant '" + name + "'");
    }
    variants = std::move(kept);
  }
  std::vector<AblationRow> rows;
  for (const auto& [name, flags] : variants) {
    TrainConfig variant = apply_ablation(cfg, flags);
    TrainResult r = train(train_part, variant, threads);
    rows.push_back({name, evaluate_metric(r.model, test_part.docs, variant)});
  }
  return rows;
}

// -- persistence --------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'G', 'T', 'F', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("checkpoint " + path + ": truncated file");
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kFormatVersion);

  json echo;
  echo["config"] = json::parse(train_config_to_json(cfg));
  echo["vocab"] = model.vocab.id_to_token;
  echo["labels"] = model.labels.names;
  const std::string blob = echo.dump();
  write_pod<std::uint64_t>(out, blob.size());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));

  auto named = model.params.named_parameters();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (Index d : tensor.shape()) write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(sizeof(double) * tensor.numel()));
  }
  if (!out) throw DataError("checkpoint " + path + ": write failed");
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("checkpoint " + path + ": bad magic, not a model container");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kFormatVersion) {
    throw DataError("checkpoint " + path + ": unsupported format version " +
                    std::to_string(version));
  }
  const auto blob_len = read_pod<std::uint64_t>(in, path);
  std::string blob(blob_len, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(blob_len));
  if (!in) throw DataError("checkpoint " + path + ": truncated config block");

  json echo;
  try {
    echo = json::parse(blob);
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path + ": bad config block: " + e.what());
  }

  LoadedModel loaded;
  loaded.cfg = parse_train_config_text(echo.at("config").dump());
  loaded.model.vocab.id_to_token = echo.at("vocab").get<std::vector<std::string>>();
  if (loaded.model.vocab.id_to_token.empty() ||
      loaded.model.vocab.id_to_token[0] != "<unk>") {
    throw DataError("checkpoint " + path + ": malformed vocabulary block");
  }
  for (int i = Vocab::kHashBuckets + 1;
       i < static_cast<int>(loaded.model.vocab.id_to_token.size()); ++i) {
    loaded.model.vocab.token_to_id.emplace(
        loaded.model.vocab.id_to_token[static_cast<std::size_t>(i)], i);
  }
  loaded.model.labels.names = echo.at("labels").get<std::vector<std::string>>();

  std::mt19937_64 rng(loaded.cfg.seed);
  loaded.model.params =
      init_model_params(loaded.cfg.model_config(loaded.model.labels.size()),
                        loaded.model.vocab, rng);

  auto named = loaded.model.params.named_parameters();
  std::map<std::string, Tensor> by_name(named.begin(), named.end());
  const auto count = read_pod<std::uint32_t>(in, path);
  if (count != named.size()) {
    throw DataError("checkpoint " + path + ": expected " + std::to_string(named.size()) +
                    " tensors, found " + std::to_string(count));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(in, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<Index>(read_pod<std::uint64_t>(in, path)));
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw DataError("checkpoint " + path + ": unexpected tensor '" + name + "'");
    }
    if (it->second.shape() != shape) {
      throw DataError("checkpoint " + path + ": tensor '" + name + "' has shape " +
                      shape_str(shape) + ", expected " + shape_str(it->second.shape()));
    }
    in.read(reinterpret_cast<char*>(it->second.values_mut().data()),
            static_cast<std::streamsize>(sizeof(double) * it->second.numel()));
    if (!in) throw DataError("checkpoint " + path + ": truncated tensor '" + name + "'");
  }
  return loaded;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write history file " + path);
  out << "epoch,lr,train_loss,val_metric\n";
  char line[160];
  for (const EpochRecord& r : history) {
    std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g\n", r.epoch, r.lr,
                  r.train_loss, r.val_metric);
    out << line;
  }
}

std::string metrics_to_json(const Metrics& metrics) {
  json j;
  j["metric"] = metrics.metric;
  j["mean"] = metrics.mean;
  j["std"] = metrics.stdev;
  j["per_fold"] = metrics.per_fold;
  j["report"] = format_report(metrics);
  return j.dump(2) + "\n";
}

void write_metrics_json(const std::string& path, const Metrics& metrics) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics file " + path);
  out << metrics_to_json(metrics);
}

void write_chunk_csv(const std::string& path, const ChunkFractions& fractions) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write chunk file " + path);
  out << "chunk,fraction\n";
  char line[64];
  for (int c = 0; c < 3; ++c) {
    std::snprintf(line, sizeof(line), "%d,%.10g\n", c + 1, fractions.fraction[c]);
    out << line;
  }
}

std::string format_report(const Metrics& metrics) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f ±%.2f", 100.0 * metrics.mean,
                100.0 * metrics.stdev);
  return buf;
}

}  // namespace gtf
