#include "gtf/propagation.hpp"

#include <map>
#include <stdexcept>

#include "gtf/model.hpp"

namespace gtf {

namespace {

/// Channel encodings for one sentence under the active ablation flags. With
/// both trees removed the sentence collapses to the mean of its word rows,
/// carried on the dep slot as the single remaining channel.
SentenceEncoding encode_channels(const Sentence& s, const Tensor& words_dep,
                                 const Tensor& words_cons, const ModelParams& p,
                                 const AblationFlags& fl) {
  SentenceEncoding enc;
  if (fl.tree_disabled()) {
    enc.h = mean(words_dep, 0);
    enc.h_dep = enc.h;
    return enc;
  }
  if (fl.dep_active()) enc.h_dep = encode_dep_channel(s, words_dep, p.dtt);
  if (fl.cons_active()) enc.h_cons = encode_cons_channel(s, words_cons, p.ctt);
  if (fl.dep_active() && fl.cons_active()) {
    enc.h = scale(add(enc.h_dep, enc.h_cons), 0.5);
  } else {
    enc.h = fl.dep_active() ? enc.h_dep : enc.h_cons;
  }
  return enc;
}

PassState upward_pass1(const Document& doc, const Model& model,
                       const PipelineConfig& cfg) {
  const ModelParams& p = model.params;
  const AblationFlags& fl = cfg.ablation;
  const Index d = p.embedding.dim();

  PassState state;
  for (const Sentence& s : doc.sentences) {
    Tensor words = embed_tokens(s, p.embedding, model.vocab);
    state.sentences.push_back(encode_channels(s, words, words, p, fl));
  }

  const int n = static_cast<int>(doc.sentences.size());
  RowMat sent_mat(n, d);
  for (int i = 0; i < n; ++i) {
    sent_mat.row(i) = state.sentences[static_cast<std::size_t>(i)].h.values().transpose();
  }
  const int n_labels = model.labels.size();
  RowMat label_mat(n_labels, d);
  for (int j = 0; j < n_labels; ++j) {
    label_mat.row(j) =
        label_embedding(model.labels.names[static_cast<std::size_t>(j)], p.embedding,
                        model.vocab)
            .values()
            .transpose();
  }
  state.attention = labelwise_scores(sent_mat, label_mat, cfg.label_axis);
  state.selected = select_sentences(state.attention, cfg.tau);
  state.graph = build_doc_graph(doc, state.selected, model.vocab);

  for (int sid : state.graph.sentence_ids) {
    const SentenceEncoding& e = state.sentences[static_cast<std::size_t>(sid)];
    if (e.h_dep.defined()) state.sel_dep.push_back(e.h_dep);
    if (e.h_cons.defined()) state.sel_cons.push_back(e.h_cons);
    state.sel_fused.push_back(e.h);
  }
  for (int vid : state.graph.word_tokens) {
    Tensor base = reshape(gather_rows(p.embedding.weights, {vid}), {d});
    state.word_dep.push_back(base);
    state.word_cons.push_back(base);
  }
  state.doc = encode_document(state.sel_fused, p.doc_gat, p.doc_ffn, !fl.no_gat);
  return state;
}

void upward_reencode(const Document& doc, const Model& model, const PipelineConfig& cfg,
                     PassState& state, const PropagationHooks* hooks) {
  const ModelParams& p = model.params;
  const AblationFlags& fl = cfg.ablation;
  const DocGraph& g = state.graph;

  std::map<int, int> type_node;
  for (int w = 0; w < g.num_words(); ++w) {
    type_node.emplace(g.word_tokens[static_cast<std::size_t>(w)], w);
  }
  auto node_of = [&](const std::string& token) {
    auto it = type_node.find(model.vocab.lookup(token));
    if (it == type_node.end()) {
      throw std::logic_error("pass-2 read of a word type outside the selection: " + token);
    }
    return it->second;
  };

  for (int k = 0; k < g.num_sentences(); ++k) {
    const int sid = g.sentence_ids[static_cast<std::size_t>(k)];
    const Sentence& s = doc.sentences[static_cast<std::size_t>(sid)];
    std::vector<Tensor> rows_dep, rows_cons;
    for (const std::string& tok : s.tokens) {
      const int w = node_of(tok);
      rows_dep.push_back(state.word_dep[static_cast<std::size_t>(w)]);
      if (fl.cons_active() && !fl.tree_disabled()) {
        rows_cons.push_back(state.word_cons[static_cast<std::size_t>(w)]);
      }
    }
    Tensor words_dep = stack_rows(rows_dep);
    Tensor words_cons = rows_cons.empty() ? words_dep : stack_rows(rows_cons);
    SentenceEncoding enc = encode_channels(s, words_dep, words_cons, p, fl);
    if (enc.h_dep.defined()) state.sel_dep[static_cast<std::size_t>(k)] = enc.h_dep;
    if (enc.h_cons.defined()) state.sel_cons[static_cast<std::size_t>(k)] = enc.h_cons;
    state.sel_fused[static_cast<std::size_t>(k)] = enc.h;
    if (hooks && hooks->on_reencode_sentence) hooks->on_reencode_sentence(sid);
  }
  state.doc = encode_document(state.sel_fused, p.doc_gat, p.doc_ffn, !fl.no_gat);
}

}  // namespace

void downward_update(PassState& state, const Model& model, const PipelineConfig& cfg) {
  if (!state.doc.h_ffn.defined()) {
    throw NumericalError("downward_update: called before the first upward pass");
  }
  if (cfg.downward_identity) {
    ++state.iteration;
    return;
  }
  const ModelParams& p = model.params;
  const AblationFlags& fl = cfg.ablation;
  const DocGraph& g = state.graph;
  const Tensor doc_vec = state.doc.h_ffn;

  auto run_channel = [&](std::vector<Tensor>& sel_ch, std::vector<Tensor>& word_ch,
                         const GATParams& ds_gat, const FFNParams& ds_ffn,
                         const GATParams& sw_gat, const FFNParams& sw_ffn) {
    std::vector<Tensor> feats(static_cast<std::size_t>(g.num_nodes()));
    feats[0] = doc_vec;
    for (int k = 0; k < g.num_sentences(); ++k) {
      feats[static_cast<std::size_t>(g.sentence_node(k))] =
          sel_ch[static_cast<std::size_t>(k)];
    }
    for (int w = 0; w < g.num_words(); ++w) {
      feats[static_cast<std::size_t>(g.word_node(w))] =
          word_ch[static_cast<std::size_t>(w)];
    }

    auto ds_neigh = g.neighborhoods(EdgeType::kDocToSentence);
    std::vector<Tensor> updated = gat_layer(feats, ds_neigh, ds_gat);
    for (std::size_t i = 0; i < ds_neigh.size(); ++i) {
      const int k = ds_neigh[i].first - 1;
      sel_ch[static_cast<std::size_t>(k)] = ffn_apply(ds_ffn, updated[i]);
      feats[static_cast<std::size_t>(ds_neigh[i].first)] =
          sel_ch[static_cast<std::size_t>(k)];
    }

    auto sw_neigh = g.neighborhoods(EdgeType::kSentenceToWord);
    std::vector<Tensor> words = gat_layer(feats, sw_neigh, sw_gat);
    for (std::size_t i = 0; i < sw_neigh.size(); ++i) {
      const int w = sw_neigh[i].first - 1 - g.num_sentences();
      word_ch[static_cast<std::size_t>(w)] = ffn_apply(sw_ffn, words[i]);
    }
  };

  if (fl.dep_active() || fl.tree_disabled()) {
    run_channel(fl.tree_disabled() ? state.sel_fused : state.sel_dep, state.word_dep,
                p.down.ds_gat_dep, p.down.ds_ffn_dep, p.down.sw_gat_dep,
                p.down.sw_ffn_dep);
  }
  if (fl.cons_active() && !fl.tree_disabled()) {
    run_channel(state.sel_cons, state.word_cons, p.down.ds_gat_cons, p.down.ds_ffn_cons,
                p.down.sw_gat_cons, p.down.sw_ffn_cons);
  }
  ++state.iteration;
}

TwoPassResult iterate_updates(const Document& doc, const Model& model,
                              const PipelineConfig& cfg, int iterations,
                              const PropagationHooks* hooks) {
  if (iterations < 1) {
    throw ConfigError("iterate_updates: iteration count must be >= 1, got " +
                      std::to_string(iterations));
  }
  TwoPassResult result;
  result.state = upward_pass1(doc, model, cfg);
  result.doc_pass1 = result.state.doc.h_ffn;
  if (cfg.ablation.no_bidir) {
    result.doc_final = result.doc_pass1;
    return result;
  }
  for (int t = 0; t < iterations; ++t) {
    downward_update(result.state, model, cfg);
    upward_reencode(doc, model, cfg, result.state, hooks);
  }
  result.doc_final = result.state.doc.h_ffn;
  return result;
}

TwoPassResult two_pass_encode(const Document& doc, const Model& model,
                              const PipelineConfig& cfg, const PropagationHooks* hooks) {
  return iterate_updates(doc, model, cfg, 1, hooks);
}

DownwardParams init_downward(Index d, int heads, std::mt19937_64& rng) {
  DownwardParams p;
  p.ds_gat_dep = init_gat(d, heads, GatCombine::kMean, rng);
  p.ds_ffn_dep = init_ffn(d, 4 * d, d, rng);
  p.ds_gat_cons = init_gat(d, heads, GatCombine::kMean, rng);
  p.ds_ffn_cons = init_ffn(d, 4 * d, d, rng);
  p.sw_gat_dep = init_gat(d, heads, GatCombine::kMean, rng);
  p.sw_ffn_dep = init_ffn(d, 4 * d, d, rng);
  p.sw_gat_cons = init_gat(d, heads, GatCombine::kMean, rng);
  p.sw_ffn_cons = init_ffn(d, 4 * d, d, rng);
  return p;
}

void collect_parameters(const DownwardParams& params, const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out) {
  collect_parameters(params.ds_gat_dep, prefix + ".ds_gat_dep", out);
  collect_parameters(params.ds_ffn_dep, prefix + ".ds_ffn_dep", out);
  collect_parameters(params.ds_gat_cons, prefix + ".ds_gat_cons", out);
  collect_parameters(params.ds_ffn_cons, prefix + ".ds_ffn_cons", out);
  collect_parameters(params.sw_gat_dep, prefix + ".sw_gat_dep", out);
  collect_parameters(params.sw_ffn_dep, prefix + ".sw_ffn_dep", out);
  collect_parameters(params.sw_gat_cons, prefix + ".sw_gat_cons", out);
  collect_parameters(params.sw_ffn_cons, prefix + ".sw_ffn_cons", out);
}

}  // namespace gtf
