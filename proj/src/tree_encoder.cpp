#include "gtf/tree_encoder.hpp"

#include <cmath>

namespace gtf {

Tensor branch_attention(const Tensor& x, const TreeTransformerParams& params) {
  if (x.rank() != 2) {
    throw ShapeError("branch_attention: rank-2 input required, shape " +
                     shape_str(x.shape()));
  }
  const Scalar inv_sqrt_d = 1.0 / std::sqrt(static_cast<Scalar>(x.cols()));
  Tensor out;
  for (const BranchParams& br : params.branches) {
    Tensor q = matmul(x, br.wq);
    Tensor k = matmul(x, br.wk);
    Tensor v = matmul(x, br.wv);
    Tensor attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), 1);
    Tensor b = matmul(attn, v);
    Tensor scaled = mul(layer_norm(add(matmul(b, br.wb), b), br.ln_gain, br.ln_bias),
                        br.kappa);
    Tensor pcnn = affine(relu(affine(scaled, br.pcnn_w1, br.pcnn_b1)), br.pcnn_w2,
                         br.pcnn_b2);
    Tensor contrib = mul(pcnn, br.alpha);
    out = out.defined() ? add(out, contrib) : contrib;
  }
  return out;
}

Tensor encode_tree_node(const Tensor* parent_init, const std::vector<Tensor>& children,
                        const TreeTransformerParams& params) {
  std::vector<Tensor> rows;
  rows.reserve(children.size() + 1);
  if (parent_init) rows.push_back(*parent_init);
  for (const Tensor& c : children) rows.push_back(c);
  if (rows.empty()) {
    throw DataError("encode_tree_node: constituency node without children");
  }
  Tensor x_rows = stack_rows(rows);
  Tensor x_in = mean(x_rows, 0);
  Tensor x_out = mean(branch_attention(x_rows, params), 0);
  return tanh(affine(add(x_out, x_in), params.out_w, params.out_b));
}

namespace {

void check_alignment(const char* what, const Tensor& words, int n) {
  if (words.rank() != 2 || words.rows() != n) {
    throw ShapeError(std::string(what) + ": word matrix " + shape_str(words.shape()) +
                     " not aligned with " + std::to_string(n) + " tokens");
  }
}

}  // namespace

Tensor encode_dep_channel(const Sentence& s, const Tensor& words,
                          const TreeTransformerParams& dtt, const EncodeHooks* hooks) {
  const int n = static_cast<int>(s.tokens.size());
  check_alignment("encode_dep_channel", words, n);
  if (s.dep.size() != n) {
    throw DataError("encode_dep_channel: dependency tree has " +
                    std::to_string(s.dep.size()) + " nodes for " + std::to_string(n) +
                    " tokens");
  }
  const auto dep_children = s.dep.children();
  std::function<Tensor(int)> enc = [&](int node) -> Tensor {
    std::vector<Tensor> kids;
    for (int c : dep_children[static_cast<std::size_t>(node)]) kids.push_back(enc(c));
    Tensor parent = row(words, node);
    Tensor out = encode_tree_node(&parent, kids, dtt);
    if (hooks && hooks->on_dep_node) hooks->on_dep_node(node);
    return out;
  };
  return enc(s.dep.root);
}

Tensor encode_cons_channel(const Sentence& s, const Tensor& words,
                           const TreeTransformerParams& ctt, const EncodeHooks* hooks) {
  const int n = static_cast<int>(s.tokens.size());
  check_alignment("encode_cons_channel", words, n);
  if (s.cons.leaf_count != n) {
    throw DataError("encode_cons_channel: constituency tree has " +
                    std::to_string(s.cons.leaf_count) + " leaves for " +
                    std::to_string(n) + " tokens");
  }
  std::function<Tensor(int)> enc = [&](int id) -> Tensor {
    const ConstTree::Node& node = s.cons.nodes[static_cast<std::size_t>(id)];
    if (node.is_leaf()) {
      Tensor leaf = row(words, node.token);
      if (hooks && hooks->on_cons_node) hooks->on_cons_node(id);
      return leaf;
    }
    std::vector<Tensor> kids;
    for (int c : node.children) kids.push_back(enc(c));
    Tensor out = encode_tree_node(nullptr, kids, ctt);
    if (hooks && hooks->on_cons_node) hooks->on_cons_node(id);
    return out;
  };
  return enc(s.cons.root);
}

SentenceEncoding encode_sentence(const Sentence& s, const Tensor& words_dep,
                                 const Tensor& words_cons,
                                 const TreeTransformerParams& dtt,
                                 const TreeTransformerParams& ctt,
                                 const EncodeHooks* hooks) {
  SentenceEncoding enc;
  enc.h_dep = encode_dep_channel(s, words_dep, dtt, hooks);
  enc.h_cons = encode_cons_channel(s, words_cons, ctt, hooks);
  enc.h = scale(add(enc.h_dep, enc.h_cons), 0.5);
  return enc;
}

namespace {

Tensor xavier(Index rows, Index cols, std::mt19937_64& rng) {
  const Scalar stddev = std::sqrt(2.0 / static_cast<Scalar>(rows + cols));
  return Tensor::randn({rows, cols}, rng, stddev, true);
}

}  // namespace

TreeTransformerParams init_tree_transformer(Index d, int n_branches,
                                            std::mt19937_64& rng) {
  TreeTransformerParams p;
  for (int i = 0; i < n_branches; ++i) {
    BranchParams br;
    br.wq = xavier(d, d, rng);
    br.wk = xavier(d, d, rng);
    br.wv = xavier(d, d, rng);
    br.wb = xavier(d, d, rng);
    br.ln_gain = Tensor::constant({d}, 1.0, true);
    br.ln_bias = Tensor::zeros({d}, true);
    br.kappa = Tensor::scalar(1.0, true);
    br.pcnn_w1 = xavier(d, d, rng);
    br.pcnn_b1 = Tensor::zeros({d}, true);
    // residual-dominant start: branch outputs begin small, so a node vector
    // starts near its squashed input mean and the attention path grows in
    br.pcnn_w2 = xavier(d, d, rng);
    br.pcnn_w2.values_mut() *= 0.1;
    br.pcnn_b2 = Tensor::zeros({d}, true);
    br.alpha = Tensor::scalar(1.0 / static_cast<Scalar>(n_branches), true);
    p.branches.push_back(std::move(br));
  }
  // identity plus noise keeps a residual path from the word rows to the
  // node vector, so sentence encodings stay comparable to embeddings
  p.out_w = xavier(d, d, rng);
  for (Index i = 0; i < d; ++i) p.out_w.values_mut()[i * d + i] += 1.0;
  p.out_b = Tensor::zeros({d}, true);
  return p;
}

void collect_parameters(const TreeTransformerParams& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out) {
  for (std::size_t i = 0; i < params.branches.size(); ++i) {
    const BranchParams& br = params.branches[i];
    const std::string b = prefix + ".branch" + std::to_string(i) + ".";
    out.emplace_back(b + "wq", br.wq);
    out.emplace_back(b + "wk", br.wk);
    out.emplace_back(b + "wv", br.wv);
    out.emplace_back(b + "wb", br.wb);
    out.emplace_back(b + "ln_gain", br.ln_gain);
    out.emplace_back(b + "ln_bias", br.ln_bias);
    out.emplace_back(b + "kappa", br.kappa);
    out.emplace_back(b + "pcnn_w1", br.pcnn_w1);
    out.emplace_back(b + "pcnn_b1", br.pcnn_b1);
    out.emplace_back(b + "pcnn_w2", br.pcnn_w2);
    out.emplace_back(b + "pcnn_b2", br.pcnn_b2);
    out.emplace_back(b + "alpha", br.alpha);
  }
  out.emplace_back(prefix + ".out_w", params.out_w);
  out.emplace_back(prefix + ".out_b", params.out_b);
}

}  // namespace gtf
