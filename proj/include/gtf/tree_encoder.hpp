#pragma once

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gtf/corpus.hpp"
#include "gtf/ops.hpp"

namespace gtf {

/// One attention branch: full-width Q/K/V projections, the residual
/// projection with its layer norm and scaling, a position-wise two-layer
/// map, and the learnable aggregation weight.
struct BranchParams {
  Tensor wq, wk, wv;               // d x d
  Tensor wb;                       // d x d
  Tensor ln_gain, ln_bias;         // d
  Tensor kappa;                    // scalar
  Tensor pcnn_w1, pcnn_b1;         // d x d, d
  Tensor pcnn_w2, pcnn_b2;         // d x d, d
  Tensor alpha;                    // scalar
};

struct TreeTransformerParams {
  std::vector<BranchParams> branches;
  Tensor out_w;  // d x d
  Tensor out_b;  // d
  Index dim() const { return out_w.rows(); }
};

/// Per-sentence encodings: dependency channel, constituency channel, and
/// their mean. h == (h_dep + h_cons) / 2 for every produced encoding.
struct SentenceEncoding {
  Tensor h_dep;
  Tensor h_cons;
  Tensor h;
};

/// Optional traversal probes, fired after a node's vector is produced.
struct EncodeHooks {
  std::function<void(int node)> on_dep_node;
  std::function<void(int cons_node)> on_cons_node;
};

/// Multi-branch attention over the k node rows of x: per branch, scaled
/// dot-product self-attention, a scaled layer-norm residual block and a
/// position-wise map, aggregated with the branch weights.
Tensor branch_attention(const Tensor& x, const TreeTransformerParams& params);

/// Parent vector for one tree node. Dependency nodes pass their own word
/// vector as parent_init with encoded children below it; constituency nodes
/// pass no parent and at least one child row.
Tensor encode_tree_node(const Tensor* parent_init, const std::vector<Tensor>& children,
                        const TreeTransformerParams& params);

/// Dependency channel: bottom-up over the head-modifier tree, each node
/// seeded with its own word row, encoded children as the rows below it.
Tensor encode_dep_channel(const Sentence& s, const Tensor& words,
                          const TreeTransformerParams& dtt,
                          const EncodeHooks* hooks = nullptr);

/// Constituency channel: leaves contribute their word rows directly,
/// internal nodes attend over their encoded children.
Tensor encode_cons_channel(const Sentence& s, const Tensor& words,
                           const TreeTransformerParams& ctt,
                           const EncodeHooks* hooks = nullptr);

/// Bottom-up recursion over both trees. Word matrices are row-aligned with
/// s.tokens and may differ per channel.
SentenceEncoding encode_sentence(const Sentence& s, const Tensor& words_dep,
                                 const Tensor& words_cons,
                                 const TreeTransformerParams& dtt,
                                 const TreeTransformerParams& ctt,
                                 const EncodeHooks* hooks = nullptr);

TreeTransformerParams init_tree_transformer(Index d, int n_branches,
                                            std::mt19937_64& rng);

void collect_parameters(const TreeTransformerParams& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out);

}  // namespace gtf
