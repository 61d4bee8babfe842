#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gtf/corpus.hpp"
#include "gtf/propagation.hpp"

namespace gtf {

/// Classifier head: dense tanh layer, then the output projection.
struct HeadParams {
  Tensor w1, b1;  // d x d, d
  Tensor w2, b2;  // d x L, L
};

struct ModelConfig {
  Index d = 64;
  int n_labels = 2;
  int n_branches = 4;
  int doc_heads = 6;
  int down_heads = 1;
  GatCombine combine = GatCombine::kMean;
  Index ffn_inner_multiple = 4;
  bool trainable_embedding = true;
};

/// Every learnable weight of the pipeline.
struct ModelParams {
  EmbeddingTable embedding;
  TreeTransformerParams dtt, ctt;
  GATParams doc_gat;
  FFNParams doc_ffn;
  DownwardParams down;
  HeadParams head;

  /// Deterministically ordered (name, tensor) view over all weights,
  /// including a frozen embedding table.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> trainable_parameters() const;
};

/// Weights plus the vocabulary and label set they were built against.
struct Model {
  ModelParams params;
  Vocab vocab;
  LabelSet labels;
};

ModelParams init_model_params(const ModelConfig& cfg, const Vocab& vocab,
                              std::mt19937_64& rng);

/// Snapshot / restore of parameter values, used to keep the best-validation
/// weights and to clone models for worker threads.
std::vector<Vec> snapshot_values(const ModelParams& params);
void restore_values(ModelParams& params, const std::vector<Vec>& snapshot);

}  // namespace gtf
