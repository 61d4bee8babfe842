#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "gtf/grad_check.hpp"
#include "gtf/propagation.hpp"
#include "gtf/train.hpp"
#include "support/random_trees.hpp"
#include "support/synthetic.hpp"

using namespace gtf;
namespace ts = gtf::testsupport;

namespace {

Corpus small_corpus(std::uint64_t seed, int docs = 3) {
  ts::SyntheticSpec spec;
  spec.docs = docs;
  spec.seed = seed;
  spec.min_sentences = 2;
  spec.max_sentences = 4;
  spec.min_tokens = 3;
  spec.max_tokens = 5;
  return ts::make_planted_corpus(spec);
}

PipelineConfig base_cfg(double tau = 1e-9) {
  PipelineConfig cfg;
  cfg.tau = tau;
  return cfg;
}

}  // namespace

TEST_CASE("downward update before any pass is rejected") {
  Corpus corpus = small_corpus(1);
  Model model = ts::make_test_model(corpus, 6, 1);
  PassState empty;
  CHECK_THROWS_AS(downward_update(empty, model, base_cfg()), NumericalError);
}

TEST_CASE("identity downward stages leave everything unchanged") {
  Corpus corpus = small_corpus(2);
  Model model = ts::make_test_model(corpus, 6, 2);
  PipelineConfig cfg = base_cfg();
  cfg.downward_identity = true;
  TwoPassResult r = two_pass_encode(corpus.docs[0], model, cfg);
  // representations unchanged across the update, so both passes agree
  REQUIRE(r.doc_pass1.numel() == r.doc_final.numel());
  for (Index j = 0; j < r.doc_final.numel(); ++j) {
    CHECK(r.doc_final(j) == r.doc_pass1(j));
  }
}

TEST_CASE("identity downward with full selection reproduces pass 1 bit for bit") {
  std::mt19937_64 seeds(3);
  for (int trial = 0; trial < 10; ++trial) {
    Corpus corpus = small_corpus(seeds());
    Model model = ts::make_test_model(corpus, 8, seeds());
    PipelineConfig cfg = base_cfg(1e-9);  // tau -> 0+: everything selected
    cfg.downward_identity = true;
    for (const Document& doc : corpus.docs) {
      TwoPassResult r = two_pass_encode(doc, model, cfg);
      CHECK(static_cast<int>(r.state.selected.size()) ==
            static_cast<int>(doc.sentences.size()));
      for (Index j = 0; j < r.doc_final.numel(); ++j) {
        CHECK(r.doc_final(j) == r.doc_pass1(j));
      }
    }
  }
}

TEST_CASE("a word in a single sentence takes all its attention") {
  Corpus corpus = small_corpus(4, 1);
  Model model = ts::make_test_model(corpus, 6, 4);
  // neighborhood of each word: its sentences, plus self unless disabled
  model.params.down.sw_gat_dep.include_self = false;
  const Document& doc = corpus.docs[0];
  PipelineConfig cfg = base_cfg();
  TwoPassResult r = two_pass_encode(doc, model, cfg);

  // rebuild the sentence->word attention of the dep channel with a trace
  const DocGraph& g = r.state.graph;
  std::vector<Tensor> feats(static_cast<std::size_t>(g.num_nodes()));
  feats[0] = r.state.doc.h_ffn;
  for (int k = 0; k < g.num_sentences(); ++k) {
    feats[static_cast<std::size_t>(g.sentence_node(k))] =
        r.state.sel_dep[static_cast<std::size_t>(k)];
  }
  for (int w = 0; w < g.num_words(); ++w) {
    feats[static_cast<std::size_t>(g.word_node(w))] =
        r.state.word_dep[static_cast<std::size_t>(w)];
  }
  GatTrace trace;
  gat_layer(feats, g.neighborhoods(EdgeType::kSentenceToWord),
            model.params.down.sw_gat_dep, &trace);
  // find a word type occurring in exactly one sentence
  for (const auto& item : trace.items) {
    if (item.weights.numel() == 1) {
      CHECK(item.weights(0) == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("two sentences with identical features update a shared word like one") {
  Corpus corpus = small_corpus(5, 1);
  Model model = ts::make_test_model(corpus, 6, 5);
  std::mt19937_64 rng(17);
  Tensor shared = Tensor::randn({6}, rng, 0.5, false);
  GATParams gat = init_gat(6, 1, GatCombine::kMean, rng);
  gat.include_self = false;  // attention over the (equal) sentence keys alone
  FFNParams ffn = init_ffn(6, 12, 6, rng);
  Tensor word = Tensor::randn({6}, rng, 0.5, false);

  // word attending over one sentence vs two identical copies
  std::vector<Tensor> feats_one = {word, shared};
  std::vector<Tensor> one = gat_layer(feats_one, {{0, {1}}}, gat);
  std::vector<Tensor> feats_two = {word, shared, shared};
  std::vector<Tensor> two = gat_layer(feats_two, {{0, {1, 2}}}, gat);
  Tensor u_one = ffn_apply(ffn, one[0]);
  Tensor u_two = ffn_apply(ffn, two[0]);
  for (Index j = 0; j < 6; ++j) {
    CHECK(u_one(j) == doctest::Approx(u_two(j)).epsilon(1e-12));
  }
}

TEST_CASE("the second pass produces a different document vector") {
  Corpus corpus = small_corpus(6, 2);
  Model model = ts::make_test_model(corpus, 8, 6);
  PipelineConfig cfg = base_cfg(0.3);
  TwoPassResult r = two_pass_encode(corpus.docs[0], model, cfg);
  double diff = 0;
  for (Index j = 0; j < r.doc_final.numel(); ++j) {
    diff += std::abs(r.doc_final(j) - r.doc_pass1(j));
  }
  CHECK(diff > 1e-10);
}

TEST_CASE("one iteration is exactly the two-pass flow") {
  Corpus corpus = small_corpus(7, 2);
  Model model = ts::make_test_model(corpus, 6, 7);
  PipelineConfig cfg = base_cfg(0.4);
  TwoPassResult a = two_pass_encode(corpus.docs[1], model, cfg);
  TwoPassResult b = iterate_updates(corpus.docs[1], model, cfg, 1);
  for (Index j = 0; j < a.doc_final.numel(); ++j) {
    CHECK(a.doc_final(j) == b.doc_final(j));
  }
}

TEST_CASE("identity stages are a fixed point of iteration") {
  Corpus corpus = small_corpus(8, 1);
  Model model = ts::make_test_model(corpus, 6, 8);
  PipelineConfig cfg = base_cfg(1e-9);
  cfg.downward_identity = true;
  TwoPassResult one = iterate_updates(corpus.docs[0], model, cfg, 1);
  TwoPassResult two = iterate_updates(corpus.docs[0], model, cfg, 2);
  for (Index j = 0; j < one.doc_final.numel(); ++j) {
    CHECK(one.doc_final(j) == two.doc_final(j));
  }
}

TEST_CASE("a second iteration with live parameters changes the output") {
  Corpus corpus = small_corpus(9, 1);
  Model model = ts::make_test_model(corpus, 6, 9);
  PipelineConfig cfg = base_cfg(0.3);
  TwoPassResult one = iterate_updates(corpus.docs[0], model, cfg, 1);
  TwoPassResult two = iterate_updates(corpus.docs[0], model, cfg, 2);
  double diff = 0;
  for (Index j = 0; j < one.doc_final.numel(); ++j) {
    diff += std::abs(one.doc_final(j) - two.doc_final(j));
  }
  CHECK(diff > 1e-10);
}

TEST_CASE("iteration counts below one are a config error") {
  Corpus corpus = small_corpus(10, 1);
  Model model = ts::make_test_model(corpus, 6, 10);
  CHECK_THROWS_AS(iterate_updates(corpus.docs[0], model, base_cfg(), 0), ConfigError);
}

TEST_CASE("the second pass touches only selected sentences and their words") {
  // craft a document where one sentence cannot clear the threshold
  Corpus corpus = small_corpus(11, 1);
  Model model = ts::make_test_model(corpus, 8, 11);
  PipelineConfig cfg = base_cfg(0.9);  // forces pruning (or the fallback)
  std::vector<int> reencoded;
  PropagationHooks hooks;
  hooks.on_reencode_sentence = [&](int sid) { reencoded.push_back(sid); };
  TwoPassResult r = two_pass_encode(corpus.docs[0], model, cfg, &hooks);
  CHECK(r.state.selected.size() < corpus.docs[0].sentences.size());

  std::set<int> selected(r.state.selected.begin(), r.state.selected.end());
  CHECK(reencoded.size() == selected.size());
  for (int sid : reencoded) CHECK(selected.count(sid) == 1);

  // word nodes cover exactly the types of the selected sentences
  std::set<int> expected_types;
  for (int sid : r.state.selected) {
    for (const std::string& tok :
         corpus.docs[0].sentences[static_cast<std::size_t>(sid)].tokens) {
      expected_types.insert(model.vocab.lookup(tok));
    }
  }
  std::set<int> graph_types(r.state.graph.word_tokens.begin(),
                            r.state.graph.word_tokens.end());
  CHECK(graph_types == expected_types);
}

TEST_CASE("gradients reach every parameter group") {
  Corpus corpus = small_corpus(12, 1);
  Model model = ts::make_test_model(corpus, 6, 12);
  PipelineConfig cfg = base_cfg(0.3);
  const Document& doc = corpus.docs[0];

  Tape tape;
  {
    TapeScope scope(tape);
    TwoPassResult r = two_pass_encode(doc, model, cfg);
    Tensor probs = classify(r.doc_final, model.params.head, Task::kMulticlass);
    Tensor loss = loss_fn(probs, doc.gold, Task::kMulticlass);
    tape.backward(loss, Tensor::scalar(1.0));
  }

  auto group_grad = [&](const std::string& prefix) {
    double total = 0;
    for (auto& [name, t] : model.params.named_parameters()) {
      if (name.rfind(prefix, 0) == 0 && t.has_grad()) {
        total += t.grad().cwiseAbs().sum();
      }
    }
    return total;
  };
  for (const char* group : {"embedding", "dtt", "ctt", "doc_gat", "doc_ffn",
                            "down.ds_gat_dep", "down.ds_ffn_dep", "down.ds_gat_cons",
                            "down.sw_gat_dep", "down.sw_ffn_cons", "head"}) {
    INFO(group);
    CHECK(group_grad(group) > 0.0);
  }
}

TEST_CASE("two-pass encoding is deterministic") {
  Corpus corpus = small_corpus(13, 1);
  Model model = ts::make_test_model(corpus, 6, 13);
  PipelineConfig cfg = base_cfg(0.3);
  TwoPassResult a = two_pass_encode(corpus.docs[0], model, cfg);
  TwoPassResult b = two_pass_encode(corpus.docs[0], model, cfg);
  for (Index j = 0; j < a.doc_final.numel(); ++j) {
    CHECK(a.doc_final(j) == b.doc_final(j));
  }
}

TEST_CASE("single-sentence documents always select that sentence") {
  std::mt19937_64 rng(14);
  Corpus corpus;
  corpus.labels.names = {"alpha", "beta"};
  Document doc = ts::random_document(1, 4, rng);
  doc.gold = {0};
  corpus.docs.push_back(doc);
  Model model = ts::make_test_model(corpus, 6, 14);
  for (double tau : {1e-9, 0.4, 0.97}) {
    TwoPassResult r = two_pass_encode(corpus.docs[0], model, base_cfg(tau));
    CHECK(r.state.selected == std::vector<int>{0});
    CHECK(r.doc_final.numel() == 6);
  }
}

TEST_CASE("gradient through the full two-pass composite matches finite differences") {
  Corpus corpus = small_corpus(36, 1);
  Model model = ts::make_test_model(corpus, 6, 36, 1, 1, 1);
  PipelineConfig cfg = base_cfg(0.01);  // stable full selection
  const Document& doc = corpus.docs[0];

  std::vector<Tensor> leaves;
  for (auto& [name, t] : model.params.named_parameters()) leaves.push_back(t);
  double err = grad_check_leaves(
      [&]() {
        TwoPassResult r = two_pass_encode(doc, model, cfg);
        return sum_all(tanh(r.doc_final));
      },
      leaves, 1e-5, /*max_coords_per_leaf=*/6, /*seed=*/5);
  CHECK(err < 1e-4);
}
