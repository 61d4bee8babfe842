#include "gtf/doc_graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace gtf {

LabelAttention labelwise_scores(const Eigen::MatrixXd& sent_encs,
                                const Eigen::MatrixXd& label_embs,
                                LabelSoftmaxAxis axis) {
  if (label_embs.rows() < 1) throw ShapeError("labelwise_scores: no labels");
  if (sent_encs.cols() != label_embs.cols()) {
    throw ShapeError("labelwise_scores: width mismatch [" +
                     std::to_string(sent_encs.cols()) + "] vs [" +
                     std::to_string(label_embs.cols()) + "]");
  }
  RowMat raw = sent_encs * label_embs.transpose();  // N x L
  Tensor logits = Tensor::from_flat(Eigen::Map<const Vec>(raw.data(), raw.size()),
                                    {raw.rows(), raw.cols()}, false);
  Tensor normalized = softmax(logits, axis == LabelSoftmaxAxis::kLabels ? 1 : 0);

  LabelAttention att;
  att.scores =
      Eigen::Map<const RowMat>(normalized.values().data(), raw.rows(), raw.cols());
  att.row_max = att.scores.rowwise().maxCoeff();
  return att;
}

std::vector<int> select_sentences(LabelAttention& att, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ConfigError("select_sentences: tau must lie in (0,1), got " + std::to_string(tau));
  }
  const int n = static_cast<int>(att.scores.rows());
  att.selected.assign(static_cast<std::size_t>(n), false);
  std::vector<int> picked;
  for (int i = 0; i < n; ++i) {
    if (att.row_max[i] >= tau) {
      att.selected[static_cast<std::size_t>(i)] = true;
      picked.push_back(i);
    }
  }
  if (picked.empty()) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
      if (att.row_max[i] > att.row_max[best]) best = i;
    }
    att.selected[static_cast<std::size_t>(best)] = true;
    picked.push_back(best);
  }
  return picked;
}

const std::vector<DocGraph::Edge>& DocGraph::edges(EdgeType type) const {
  switch (type) {
    case EdgeType::kSentenceToDoc: return sent_to_doc;
    case EdgeType::kDocToSentence: return doc_to_sent;
    case EdgeType::kSentenceToWord: return sent_to_word;
    case EdgeType::kWordToSentence: return word_to_sent;
  }
  throw ConfigError("edges: unknown edge type");
}

std::vector<std::pair<int, std::vector<int>>> DocGraph::neighborhoods(
    EdgeType type) const {
  std::map<int, std::vector<int>> by_target;
  for (const Edge& e : edges(type)) by_target[e.dst].push_back(e.src);
  return {by_target.begin(), by_target.end()};
}

DocGraph build_doc_graph(const Document& doc, const std::vector<int>& selected,
                         const Vocab& vocab) {
  if (selected.empty()) throw DataError("build_doc_graph: empty sentence selection");
  DocGraph g;
  g.sentence_ids = selected;
  std::sort(g.sentence_ids.begin(), g.sentence_ids.end());

  std::map<int, int> type_to_node;  // vocab id -> word node offset
  std::vector<std::vector<int>> sentence_types;
  for (int sid : g.sentence_ids) {
    const Sentence& s = doc.sentences[static_cast<std::size_t>(sid)];
    std::vector<int> types;
    std::set<int> seen;
    for (const std::string& tok : s.tokens) {
      const int vid = vocab.lookup(tok);
      if (!seen.insert(vid).second) continue;
      if (!type_to_node.count(vid)) {
        type_to_node.emplace(vid, static_cast<int>(g.word_tokens.size()));
        g.word_tokens.push_back(vid);
      }
      types.push_back(type_to_node.at(vid));
    }
    sentence_types.push_back(std::move(types));
  }

  for (int k = 0; k < g.num_sentences(); ++k) {
    g.sent_to_doc.push_back({g.sentence_node(k), g.doc_node()});
    g.doc_to_sent.push_back({g.doc_node(), g.sentence_node(k)});
    for (int w : sentence_types[static_cast<std::size_t>(k)]) {
      g.sent_to_word.push_back({g.sentence_node(k), g.word_node(w)});
      g.word_to_sent.push_back({g.word_node(w), g.sentence_node(k)});
    }
  }
  for (int v = 0; v < g.num_nodes(); ++v) g.self_loops.push_back(v);
  return g;
}

std::vector<Tensor> gat_layer(
    const std::vector<Tensor>& feats,
    const std::vector<std::pair<int, std::vector<int>>>& neighborhoods,
    const GATParams& params, GatTrace* trace) {
  if (feats.empty()) throw ShapeError("gat_layer: no node features");
  if (params.heads() == 0) throw ConfigError("gat_layer: no attention heads");
  const Index n = static_cast<Index>(feats.size());
  Tensor h = stack_rows(feats);  // n x d

  struct HeadState {
    Tensor f;      // n x d_h
    Tensor s_dst;  // n
    Tensor s_src;  // n
  };
  std::vector<HeadState> heads;
  for (int k = 0; k < params.heads(); ++k) {
    const Tensor& w = params.head_w[static_cast<std::size_t>(k)];
    const Tensor& a = params.head_a[static_cast<std::size_t>(k)];
    const Index dh = w.cols();
    if (a.numel() != 2 * dh) {
      throw ShapeError("gat_layer: attention vector " + shape_str(a.shape()) +
                       " does not match head width " + std::to_string(dh));
    }
    std::vector<Index> first(static_cast<std::size_t>(dh)), second(static_cast<std::size_t>(dh));
    for (Index i = 0; i < dh; ++i) {
      first[static_cast<std::size_t>(i)] = i;
      second[static_cast<std::size_t>(i)] = dh + i;
    }
    HeadState hs;
    hs.f = matmul(h, w);
    hs.s_dst = reshape(matmul(hs.f, reshape(gather_rows(a, first), {dh, 1})), {n});
    hs.s_src = reshape(matmul(hs.f, reshape(gather_rows(a, second), {dh, 1})), {n});
    heads.push_back(std::move(hs));
  }

  std::vector<Tensor> out;
  out.reserve(neighborhoods.size());
  for (const auto& [target, sources] : neighborhoods) {
    std::vector<Index> idx;
    if (params.include_self) idx.push_back(target);
    for (int s : sources) idx.push_back(s);
    if (idx.empty()) {
      throw DataError("gat_layer: node " + std::to_string(target) +
                      " has an empty neighborhood and no self-edge");
    }
    std::vector<Tensor> head_outs;
    for (int k = 0; k < params.heads(); ++k) {
      const HeadState& hs = heads[static_cast<std::size_t>(k)];
      Tensor e = leaky_relu(add(gather_rows(hs.s_dst, {static_cast<Index>(target)}),
                                gather_rows(hs.s_src, idx)),
                            params.leaky_slope);
      Tensor att = softmax(e, 0);
      if (trace) trace->items.push_back({target, k, att});
      Tensor msg = matmul(reshape(att, {1, static_cast<Index>(idx.size())}),
                          gather_rows(hs.f, idx));
      head_outs.push_back(tanh(reshape(msg, {hs.f.cols()})));
    }
    if (params.combine == GatCombine::kConcat) {
      out.push_back(concat(head_outs, 0));
    } else {
      Tensor acc = head_outs[0];
      for (std::size_t k = 1; k < head_outs.size(); ++k) acc = add(acc, head_outs[k]);
      out.push_back(scale(acc, 1.0 / static_cast<Scalar>(head_outs.size())));
    }
  }
  return out;
}

Tensor ffn_apply(const FFNParams& ffn, const Tensor& x) {
  return affine(relu(affine(x, ffn.w1, ffn.b1)), ffn.w2, ffn.b2);
}

DocEncoding encode_document(const std::vector<Tensor>& sent_encs, const GATParams& gat,
                            const FFNParams& ffn, bool use_gat) {
  if (sent_encs.empty()) throw DataError("encode_document: no sentence encodings");
  DocEncoding enc;
  Tensor stacked = stack_rows(sent_encs);
  enc.h_init = mean(stacked, 0);
  if (use_gat) {
    std::vector<Tensor> feats;
    feats.push_back(enc.h_init);
    for (const Tensor& s : sent_encs) feats.push_back(s);
    std::vector<int> sources;
    for (std::size_t k = 0; k < sent_encs.size(); ++k) {
      sources.push_back(static_cast<int>(k) + 1);
    }
    enc.h_gat = gat_layer(feats, {{0, sources}}, gat)[0];
  } else {
    enc.h_gat = reduce_max(stacked, 0);
  }
  enc.h_ffn = ffn_apply(ffn, enc.h_gat);
  return enc;
}

GATParams init_gat(Index d, int heads, GatCombine combine, std::mt19937_64& rng) {
  if (heads < 1) throw ConfigError("init_gat: head count must be >= 1");
  Index dh = d;
  if (combine == GatCombine::kConcat) {
    if (d % heads != 0) {
      throw ConfigError("init_gat: concat combine needs d divisible by heads (d=" +
                        std::to_string(d) + ", heads=" + std::to_string(heads) + ")");
    }
    dh = d / heads;
  }
  GATParams p;
  p.combine = combine;
  for (int k = 0; k < heads; ++k) {
    const Scalar w_std = std::sqrt(2.0 / static_cast<Scalar>(d + dh));
    p.head_w.push_back(Tensor::randn({d, dh}, rng, w_std, true));
    const Scalar a_std = std::sqrt(2.0 / static_cast<Scalar>(2 * dh + 1));
    p.head_a.push_back(Tensor::randn({2 * dh}, rng, a_std, true));
  }
  return p;
}

FFNParams init_ffn(Index d_in, Index d_hidden, Index d_out, std::mt19937_64& rng) {
  FFNParams f;
  f.w1 = Tensor::randn({d_in, d_hidden}, rng,
                       std::sqrt(2.0 / static_cast<Scalar>(d_in + d_hidden)), true);
  f.b1 = Tensor::zeros({d_hidden}, true);
  f.w2 = Tensor::randn({d_hidden, d_out}, rng,
                       std::sqrt(2.0 / static_cast<Scalar>(d_hidden + d_out)), true);
  f.b2 = Tensor::zeros({d_out}, true);
  return f;
}

void collect_parameters(const GATParams& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out) {
  for (int k = 0; k < params.heads(); ++k) {
    out.emplace_back(prefix + ".head" + std::to_string(k) + ".w",
                     params.head_w[static_cast<std::size_t>(k)]);
    out.emplace_back(prefix + ".head" + std::to_string(k) + ".a",
                     params.head_a[static_cast<std::size_t>(k)]);
  }
}

void collect_parameters(const FFNParams& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".w1", params.w1);
  out.emplace_back(prefix + ".b1", params.b1);
  out.emplace_back(prefix + ".w2", params.w2);
  out.emplace_back(prefix + ".b2", params.b2);
}

}  // namespace gtf
