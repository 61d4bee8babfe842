#pragma once

#include <functional>

#include "gtf/doc_graph.hpp"
#include "gtf/tree_encoder.hpp"

namespace gtf {

struct Model;  // aggregate in model.hpp

struct AblationFlags {
  bool no_ctt = false;
  bool no_dtt = false;
  bool no_gat = false;
  bool no_bidir = false;

  bool dep_active() const { return !no_dtt; }
  bool cons_active() const { return !no_ctt; }
  bool tree_disabled() const { return no_ctt && no_dtt; }
};

/// Forward-pass behavior shared by training and inference.
struct PipelineConfig {
  double tau = 0.3;
  int iterations = 1;
  AblationFlags ablation;
  LabelSoftmaxAxis label_axis = LabelSoftmaxAxis::kLabels;
  /// Diagnostic switch: the downward stages become identity maps, so with
  /// full selection the second pass reproduces the first bit for bit.
  bool downward_identity = false;
};

/// Downward parameters: a GAT + feed-forward pair per stage and channel.
/// Disjoint from the upward (tree / document encoder) parameters.
struct DownwardParams {
  GATParams ds_gat_dep, ds_gat_cons;  // document -> sentence
  FFNParams ds_ffn_dep, ds_ffn_cons;
  GATParams sw_gat_dep, sw_gat_cons;  // sentence -> word
  FFNParams sw_ffn_dep, sw_ffn_cons;
};

/// Rolling state across passes of one document.
struct PassState {
  std::vector<SentenceEncoding> sentences;  // pass-1 encodings, all N
  LabelAttention attention;
  std::vector<int> selected;  // S', ascending
  DocGraph graph;
  DocEncoding doc;  // latest upward document encoding

  // channel features of the selected sentences, aligned with graph.sentence_ids
  std::vector<Tensor> sel_dep, sel_cons, sel_fused;
  // channel word embeddings per word node, aligned with graph.word_tokens
  std::vector<Tensor> word_dep, word_cons;
  int iteration = 0;
};

struct PropagationHooks {
  std::function<void(int sentence_id)> on_reencode_sentence;
};

struct TwoPassResult {
  PassState state;
  Tensor doc_pass1;  // document vector after the first upward pass
  Tensor doc_final;  // document vector fed to the classifier head
};

/// The document->sentence->word update: channel-specific attention from the
/// current document vector to the selected sentences (then a feed-forward),
/// followed by attention from the updated sentences to the word types (then
/// its feed-forward). Requires a completed upward pass.
void downward_update(PassState& state, const Model& model, const PipelineConfig& cfg);

/// Upward pass over every sentence, selection, graph construction and
/// document encoding; then one downward update and an upward re-encode of
/// the selected sentences with the channel-specific word embeddings.
TwoPassResult two_pass_encode(const Document& doc, const Model& model,
                              const PipelineConfig& cfg,
                              const PropagationHooks* hooks = nullptr);

/// T repetitions of (downward update, upward re-encode); T = 1 is exactly
/// two_pass_encode.
TwoPassResult iterate_updates(const Document& doc, const Model& model,
                              const PipelineConfig& cfg, int iterations,
                              const PropagationHooks* hooks = nullptr);

DownwardParams init_downward(Index d, int heads, std::mt19937_64& rng);
void collect_parameters(const DownwardParams& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out);

}  // namespace gtf
