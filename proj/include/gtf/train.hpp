#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gtf/adagrad.hpp"
#include "gtf/model.hpp"

namespace gtf {

enum class Task { kBinary, kMulticlass, kMultilabel };

std::string task_name(Task task);
Task task_from_name(const std::string& name);

struct EmbeddingBackend {
  enum Kind { kTable, kFile } kind = kTable;
  std::string path;  // for kFile
};

struct TrainConfig {
  double lr = 0.1;
  double lr_decay_factor = 0.2;
  int batch_size = 10;
  int max_epochs = 100;
  double tau = 0.3;
  Index d = 64;
  std::uint64_t seed = 0;
  Task task = Task::kMulticlass;
  AblationFlags ablation;
  EmbeddingBackend embedding;

  int iterations = 1;
  GatCombine gat_combine = GatCombine::kMean;
  LabelSoftmaxAxis label_axis = LabelSoftmaxAxis::kLabels;
  bool downward_identity = false;
  int min_count = 1;
  int patience = 10;

  PipelineConfig pipeline() const;
  ModelConfig model_config(int n_labels) const;
  void validate() const;
};

/// Strict JSON parse: unknown keys are rejected.
TrainConfig parse_train_config_text(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

/// Flags: no_ctt, no_dtt, no_tree (both), no_gat, no_bidir.
TrainConfig apply_ablation(TrainConfig cfg, const std::vector<std::string>& flags);

/// Dense tanh layer then the output projection; softmax for single-label
/// tasks, elementwise sigmoid for multilabel.
Tensor classify(const Tensor& doc_vec, const HeadParams& head, Task task);

/// Cross-entropy (single-label) or mean binary cross-entropy over labels
/// (multilabel); probabilities clamped to [1e-12, 1 - 1e-12].
Tensor loss_fn(const Tensor& probs, const std::vector<int>& gold, Task task);

double next_lr(double lr, double factor, bool validation_declined);

struct EpochRecord {
  int epoch;
  double lr;
  double train_loss;
  double val_metric;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
};

/// Splits the corpus 90/10 (stratified, from cfg.seed), trains with Adagrad
/// on averaged mini-batch gradients, decays the learning rate whenever the
/// validation metric declines against the previous epoch, and returns the
/// best-validation parameters. threads > 1 spreads the documents of a batch
/// over workers; the gradient merge order is fixed, so results match the
/// single-threaded run bit for bit.
TrainResult train(const Corpus& corpus, const TrainConfig& cfg, int threads = 1);

struct Metrics {
  std::string metric;  // "accuracy" or "macro_f1"
  double mean = 0.0;
  double stdev = 0.0;
  std::vector<double> per_fold;
};

double evaluate_metric(const Model& model, const std::vector<Document>& docs,
                       const TrainConfig& cfg);
Metrics evaluate(const Model& model, const Corpus& corpus, const TrainConfig& cfg);

/// Fraction of documents whose argmax prediction equals the gold label.
double accuracy_from(const std::vector<int>& predicted, const std::vector<int>& gold);
/// Unweighted mean over labels of F1 = 2tp / (2tp + fp + fn); a label with
/// no gold and no predicted positives contributes 0.
double macro_f1_from(const std::vector<std::vector<bool>>& predicted,
                     const std::vector<std::vector<bool>>& gold, int n_labels);

/// Fold membership per document index; disjoint and covering.
std::vector<std::vector<int>> stratified_fold_indices(const Corpus& corpus, int k,
                                                      const TrainConfig& cfg);

/// Per-document probability vectors.
std::vector<Eigen::VectorXd> predict(const Model& model, const Corpus& corpus,
                                     const TrainConfig& cfg);

/// Stratified k-fold: single-label tasks stratify on the label, multilabel
/// on each document's most corpus-frequent positive label. Classes smaller
/// than k degrade to unstratified placement with a warning.
Metrics cross_validate(const Corpus& corpus, int k, const TrainConfig& cfg,
                       int threads = 1);

struct TauSearchResult {
  double best_tau = 0.0;
  std::vector<std::pair<double, double>> table;  // (tau, validation metric)
};

std::vector<double> tau_coarse_grid();
std::vector<double> tau_fine_grid(double coarse_best);

/// Coarse grid 0.05..0.50 step 0.05, then a 0.01-step grid within 0.05 of
/// the best coarse point (clamped to (0,1)); ties prefer the smaller tau.
TauSearchResult tune_tau(const Corpus& corpus, const TrainConfig& cfg);

struct ChunkFractions {
  double fraction[3] = {0.0, 0.0, 0.0};
};

/// Sentence-selection rate per document third (remainder tokens go to the
/// earlier chunks), averaged over the documents that populate each chunk.
ChunkFractions chunk_analysis(const Model& model, const Corpus& corpus,
                              const TrainConfig& cfg);

struct AblationRow {
  std::string name;
  double metric;
};

/// Trains and evaluates the full model plus the five ablation variants on a
/// stratified 80/20 split. A non-empty `only` restricts the run to "full"
/// plus the named variants.
std::vector<AblationRow> run_ablation_suite(const Corpus& corpus, const TrainConfig& cfg,
                                            int threads = 1,
                                            const std::vector<std::string>& only = {});

// -- persistence ------------------------------------------------------------

/// Binary container: magic "GTFM", format version, a JSON echo of the config
/// plus vocabulary and label set, then named parameter tensors with shapes.
void save_checkpoint(const std::string& path, const Model& model,
                     const TrainConfig& cfg);

struct LoadedModel {
  Model model;
  TrainConfig cfg;
};

LoadedModel load_checkpoint(const std::string& path);

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);
void write_metrics_json(const std::string& path, const Metrics& metrics);
std::string metrics_to_json(const Metrics& metrics);
void write_chunk_csv(const std::string& path, const ChunkFractions& fractions);
/// Table-style "95.4 ±0.92" line (percent, one decimal; std two decimals).
std::string format_report(const Metrics& metrics);

}  // namespace gtf
