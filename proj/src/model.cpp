#include "gtf/model.hpp"

#include <cmath>

namespace gtf {

namespace {

Tensor xavier(Index rows, Index cols, std::mt19937_64& rng) {
  const Scalar stddev = std::sqrt(2.0 / static_cast<Scalar>(rows + cols));
  return Tensor::randn({rows, cols}, rng, stddev, true);
}

}  // namespace

ModelParams init_model_params(const ModelConfig& cfg, const Vocab& vocab,
                              std::mt19937_64& rng) {
  ModelParams p;
  p.embedding = init_embedding_table(vocab, cfg.d, rng, 0.02, cfg.trainable_embedding);
  p.dtt = init_tree_transformer(cfg.d, cfg.n_branches, rng);
  p.ctt = init_tree_transformer(cfg.d, cfg.n_branches, rng);
  p.doc_gat = init_gat(cfg.d, cfg.doc_heads, cfg.combine, rng);
  p.doc_ffn = init_ffn(cfg.d, cfg.ffn_inner_multiple * cfg.d, cfg.d, rng);
  p.down = init_downward(cfg.d, cfg.down_heads, rng);
  p.head.w1 = xavier(cfg.d, cfg.d, rng);
  p.head.b1 = Tensor::zeros({cfg.d}, true);
  p.head.w2 = xavier(cfg.d, cfg.n_labels, rng);
  p.head.b2 = Tensor::zeros({cfg.n_labels}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding.table", embedding.weights);
  collect_parameters(dtt, "dtt", out);
  collect_parameters(ctt, "ctt", out);
  collect_parameters(doc_gat, "doc_gat", out);
  collect_parameters(doc_ffn, "doc_ffn", out);
  collect_parameters(down, "down", out);
  out.emplace_back("head.w1", head.w1);
  out.emplace_back("head.b1", head.b1);
  out.emplace_back("head.w2", head.w2);
  out.emplace_back("head.b2", head.b2);
  return out;
}

std::vector<Tensor> ModelParams::trainable_parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) {
    if (t.requires_grad()) out.push_back(t);
  }
  return out;
}

std::vector<Vec> snapshot_values(const ModelParams& params) {
  std::vector<Vec> out;
  for (auto& [name, t] : params.named_parameters()) out.push_back(t.values());
  return out;
}

void restore_values(ModelParams& params, const std::vector<Vec>& snapshot) {
  auto named = params.named_parameters();
  if (named.size() != snapshot.size()) {
    throw NumericalError("restore_values: snapshot size mismatch");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    named[i].second.values_mut() = snapshot[i];
  }
}

}  // namespace gtf
