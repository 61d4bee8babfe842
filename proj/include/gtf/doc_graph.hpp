#pragma once

#include <Eigen/Core>

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gtf/corpus.hpp"
#include "gtf/ops.hpp"

namespace gtf {

/// Normalization axis for the label-wise scores. The default gives each
/// sentence a distribution over labels; the alternative normalizes each
/// label across sentences.
enum class LabelSoftmaxAxis { kLabels, kSentences };

struct LabelAttention {
  Eigen::MatrixXd scores;      // N x L after normalization
  Eigen::VectorXd row_max;     // per-sentence max score
  std::vector<bool> selected;  // filled by select_sentences
};

/// Dot products between sentence encodings and label embeddings, softmax
/// normalized. Detached from the tape: the scores only drive selection.
LabelAttention labelwise_scores(const Eigen::MatrixXd& sent_encs,
                                const Eigen::MatrixXd& label_embs,
                                LabelSoftmaxAxis axis = LabelSoftmaxAxis::kLabels);

/// Indices with max score >= tau, ascending. When nothing clears the
/// threshold, the single best sentence is kept (ties to the lowest index).
std::vector<int> select_sentences(LabelAttention& att, double tau);

enum class EdgeType { kSentenceToDoc, kDocToSentence, kSentenceToWord, kWordToSentence };

/// Heterogeneous document graph. Node 0 is the document, nodes 1..K the
/// selected sentences, then one node per word type occurring in them, in
/// first-occurrence order. Every node carries a self-loop.
struct DocGraph {
  struct Edge {
    int src, dst;
  };

  std::vector<int> sentence_ids;  // original sentence indices, ascending
  std::vector<int> word_tokens;   // vocab id per word node
  std::vector<Edge> sent_to_doc, doc_to_sent, sent_to_word, word_to_sent;
  std::vector<int> self_loops;

  int doc_node() const { return 0; }
  int num_sentences() const { return static_cast<int>(sentence_ids.size()); }
  int num_words() const { return static_cast<int>(word_tokens.size()); }
  int num_nodes() const { return 1 + num_sentences() + num_words(); }
  int sentence_node(int k) const { return 1 + k; }
  int word_node(int w) const { return 1 + num_sentences() + w; }

  const std::vector<Edge>& edges(EdgeType type) const;
  /// (target, sources) pairs for one edge type, targets ascending. Self
  /// loops are not listed; gat_layer prepends them.
  std::vector<std::pair<int, std::vector<int>>> neighborhoods(EdgeType type) const;
};

DocGraph build_doc_graph(const Document& doc, const std::vector<int>& selected,
                         const Vocab& vocab);

enum class GatCombine { kMean, kConcat };

struct GATParams {
  std::vector<Tensor> head_w;  // d x d_h per head
  std::vector<Tensor> head_a;  // 2*d_h per head
  GatCombine combine = GatCombine::kMean;
  Scalar leaky_slope = 0.2;
  bool include_self = true;
  int heads() const { return static_cast<int>(head_w.size()); }
};

/// Attention weights actually used, one entry per (target, head).
struct GatTrace {
  struct Item {
    int target;
    int head;
    Tensor weights;
  };
  std::vector<Item> items;
};

/// Attention aggregation over each (target, sources) neighborhood:
/// e = LeakyReLU(a^T [W h_target || W h_source]), softmax over the
/// neighborhood, per-head tanh of the weighted feature sum, heads combined
/// by concat or mean. Returns one vector per neighborhood entry.
std::vector<Tensor> gat_layer(
    const std::vector<Tensor>& feats,
    const std::vector<std::pair<int, std::vector<int>>>& neighborhoods,
    const GATParams& params, GatTrace* trace = nullptr);

struct FFNParams {
  Tensor w1, b1, w2, b2;
};

Tensor ffn_apply(const FFNParams& ffn, const Tensor& x);

struct DocEncoding {
  Tensor h_init;  // mean of the selected sentence encodings
  Tensor h_gat;   // after attention over sentence->document edges
  Tensor h_ffn;   // after the position-wise feed-forward
};

/// When use_gat is false the attention stage is replaced by elementwise
/// max pooling over the sentence encodings.
DocEncoding encode_document(const std::vector<Tensor>& sent_encs, const GATParams& gat,
                            const FFNParams& ffn, bool use_gat = true);

GATParams init_gat(Index d, int heads, GatCombine combine, std::mt19937_64& rng);
FFNParams init_ffn(Index d_in, Index d_hidden, Index d_out, std::mt19937_64& rng);

void collect_parameters(const GATParams& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out);
void collect_parameters(const FFNParams& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out);

}  // namespace gtf
