#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "gtf/doc_graph.hpp"
#include "gtf/grad_check.hpp"
#include "support/oracles.hpp"
#include "support/random_trees.hpp"

using namespace gtf;
namespace ts = gtf::testsupport;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool rg = false) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Vec v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from_flat(std::move(v), std::move(shape), rg);
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  }
  return m;
}

Document doc_from_token_lists(const std::vector<std::vector<std::string>>& sents,
                              std::mt19937_64& rng) {
  Document doc;
  doc.id = "d";
  for (const auto& tokens : sents) {
    Sentence s;
    s.tokens = tokens;
    s.dep = ts::random_dep_tree(static_cast<int>(tokens.size()), rng);
    s.cons = ts::random_const_tree(static_cast<int>(tokens.size()), rng);
    doc.sentences.push_back(std::move(s));
  }
  doc.gold = {0};
  return doc;
}

Vocab vocab_over(const std::vector<std::vector<std::string>>& sents) {
  Corpus corpus;
  corpus.labels.names = {"l"};
  std::mt19937_64 rng(5);
  Document d = doc_from_token_lists(sents, rng);
  corpus.docs.push_back(d);
  return build_vocab(corpus, 1);
}

}  // namespace

TEST_CASE("equal dot products split the row evenly") {
  std::mt19937_64 rng(1);
  Eigen::MatrixXd sents = Eigen::MatrixXd::Zero(3, 4);
  Eigen::MatrixXd labels = random_matrix(2, 4, rng);
  LabelAttention att = labelwise_scores(sents, labels);
  for (int i = 0; i < 3; ++i) {
    CHECK(att.scores(i, 0) == doctest::Approx(0.5));
    CHECK(att.scores(i, 1) == doctest::Approx(0.5));
  }
}

TEST_CASE("a single label absorbs the whole row") {
  std::mt19937_64 rng(2);
  LabelAttention att = labelwise_scores(random_matrix(4, 3, rng), random_matrix(1, 3, rng));
  for (int i = 0; i < 4; ++i) CHECK(att.scores(i, 0) == doctest::Approx(1.0));
}

TEST_CASE("label scores equal brute-force exp-normalization") {
  std::mt19937_64 rng(3);
  Eigen::MatrixXd sents = random_matrix(3, 4, rng);
  Eigen::MatrixXd labels = random_matrix(2, 4, rng);
  Eigen::MatrixXd raw = sents * labels.transpose();
  LabelAttention att = labelwise_scores(sents, labels);
  for (int i = 0; i < 3; ++i) {
    const double z = raw.row(i).array().exp().sum();
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(att.scores(i, j) - std::exp(raw(i, j)) / z) < 1e-12);
    }
  }
  // alternative normalization: each label column sums to one
  LabelAttention cols = labelwise_scores(sents, labels, LabelSoftmaxAxis::kSentences);
  for (int j = 0; j < 2; ++j) {
    CHECK(cols.scores.col(j).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("selection keeps rows clearing the threshold") {
  Eigen::MatrixXd sents = Eigen::MatrixXd::Zero(3, 4);
  std::mt19937_64 rng(4);
  LabelAttention att = labelwise_scores(sents, random_matrix(2, 4, rng));
  std::vector<int> s = select_sentences(att, 0.4);
  CHECK(s == std::vector<int>{0, 1, 2});  // all rows are [0.5, 0.5]
}

TEST_CASE("fallback keeps exactly the best sentence") {
  std::mt19937_64 rng(5);
  LabelAttention att = labelwise_scores(random_matrix(4, 6, rng), random_matrix(2, 6, rng));
  std::vector<int> s = select_sentences(att, 0.999999);
  REQUIRE(s.size() == 1);
  int best = 0;
  for (int i = 1; i < 4; ++i) {
    if (att.row_max[i] > att.row_max[best]) best = i;
  }
  CHECK(s[0] == best);
}

TEST_CASE("fallback ties break to the lowest index") {
  LabelAttention att;
  att.scores = Eigen::MatrixXd::Constant(3, 2, 0.5);
  att.row_max = Eigen::VectorXd::Constant(3, 0.5);
  std::vector<int> s = select_sentences(att, 0.9);
  CHECK(s == std::vector<int>{0});
}

TEST_CASE("tau outside the open unit interval is a config error") {
  LabelAttention att;
  att.scores = Eigen::MatrixXd::Constant(1, 2, 0.5);
  att.row_max = Eigen::VectorXd::Constant(1, 0.5);
  CHECK_THROWS_AS(select_sentences(att, 0.0), ConfigError);
  CHECK_THROWS_AS(select_sentences(att, 1.0), ConfigError);
  CHECK_THROWS_AS(select_sentences(att, -0.3), ConfigError);
}

TEST_CASE("selection is monotone in tau and never empty") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> tau_dist(0.05, 0.95);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    const int l = 1 + static_cast<int>(rng() % 4);
    LabelAttention att = labelwise_scores(random_matrix(n, 5, rng), random_matrix(l, 5, rng));
    double t1 = tau_dist(rng), t2 = tau_dist(rng);
    if (t1 > t2) std::swap(t1, t2);
    LabelAttention att2 = att;
    std::vector<int> wide = select_sentences(att, t1);
    std::vector<int> narrow = select_sentences(att2, t2);
    CHECK(!wide.empty());
    CHECK(!narrow.empty());
    const bool fallback = [&] {
      for (int i = 0; i < n; ++i) {
        if (att.row_max[i] >= t2) return false;
      }
      return true;
    }();
    if (!fallback) {
      for (int i : narrow) {
        CHECK(std::find(wide.begin(), wide.end(), i) != wide.end());
      }
    }
  }
}

TEST_CASE("document graph over one sentence with three distinct tokens") {
  std::mt19937_64 rng(7);
  Document doc = doc_from_token_lists({{"a", "b", "c"}}, rng);
  Vocab vocab = vocab_over({{"a", "b", "c"}});
  DocGraph g = build_doc_graph(doc, {0}, vocab);
  CHECK(g.num_sentences() == 1);
  CHECK(g.num_words() == 3);
  CHECK(g.num_nodes() == 5);
  CHECK(g.sent_to_doc.size() == 1);
  CHECK(g.doc_to_sent.size() == 1);
  CHECK(g.sent_to_word.size() == 3);
  CHECK(g.self_loops.size() == 5);
}

TEST_CASE("shared word types collapse into a single node") {
  std::mt19937_64 rng(8);
  auto sents = std::vector<std::vector<std::string>>{{"the", "cat"}, {"the", "dog"}};
  Document doc = doc_from_token_lists(sents, rng);
  Vocab vocab = vocab_over(sents);
  DocGraph g = build_doc_graph(doc, {0, 1}, vocab);
  CHECK(g.num_words() == 3);  // the, cat, dog
  const int the_id = vocab.lookup("the");
  int the_node = -1;
  for (int w = 0; w < g.num_words(); ++w) {
    if (g.word_tokens[static_cast<std::size_t>(w)] == the_id) the_node = g.word_node(w);
  }
  REQUIRE(the_node >= 0);
  int upward = 0;
  for (const auto& e : g.word_to_sent) {
    if (e.src == the_node) ++upward;
  }
  CHECK(upward == 2);
}

TEST_CASE("deselecting a sentence prunes its private word types") {
  std::mt19937_64 rng(9);
  auto sents = std::vector<std::vector<std::string>>{{"the", "cat"}, {"the", "dog"}};
  Document doc = doc_from_token_lists(sents, rng);
  Vocab vocab = vocab_over(sents);
  DocGraph g = build_doc_graph(doc, {0}, vocab);
  CHECK(g.num_words() == 2);  // "dog" is gone
  std::set<int> types(g.word_tokens.begin(), g.word_tokens.end());
  CHECK(types.count(vocab.lookup("dog")) == 0);
  CHECK(types.count(vocab.lookup("the")) == 1);
  CHECK(types.count(vocab.lookup("cat")) == 1);
}

TEST_CASE("empty selection cannot build a graph") {
  std::mt19937_64 rng(10);
  Document doc = doc_from_token_lists({{"a"}}, rng);
  Vocab vocab = vocab_over({{"a"}});
  CHECK_THROWS_AS(build_doc_graph(doc, {}, vocab), DataError);
}

TEST_CASE("isolated node attends only to itself") {
  std::mt19937_64 rng(11);
  const Index d = 6;
  GATParams p = init_gat(d, 2, GatCombine::kMean, rng);
  Tensor f = random_tensor({d}, rng);
  GatTrace trace;
  std::vector<Tensor> out = gat_layer({f}, {{0, {}}}, p, &trace);
  REQUIRE(out.size() == 1);
  for (const auto& item : trace.items) {
    CHECK(item.weights.numel() == 1);
    CHECK(item.weights(0) == doctest::Approx(1.0));
  }
  // h' = mean_k tanh(W_k h)
  Vec expect = Vec::Zero(d);
  for (int k = 0; k < 2; ++k) {
    expect += (ts::tensor_as_matrix(p.head_w[static_cast<std::size_t>(k)]).transpose() *
               f.values())
                  .array()
                  .tanh()
                  .matrix();
  }
  expect /= 2.0;
  for (Index j = 0; j < d; ++j) CHECK(out[0](j) == doctest::Approx(expect[j]).epsilon(1e-10));
}

TEST_CASE("identical features spread attention uniformly") {
  std::mt19937_64 rng(12);
  const Index d = 4;
  GATParams p = init_gat(d, 1, GatCombine::kMean, rng);
  Tensor f = random_tensor({d}, rng);
  std::vector<Tensor> feats = {f, f, f};
  GatTrace trace;
  gat_layer(feats, {{0, {1, 2}}}, p, &trace);
  REQUIRE(trace.items.size() == 1);
  const Tensor& w = trace.items[0].weights;
  REQUIRE(w.numel() == 3);  // self + two neighbors, all equal
  for (Index j = 0; j < 3; ++j) CHECK(w(j) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("gat layer equals the dense-adjacency oracle") {
  std::mt19937_64 rng(13);
  const Index d = 8;
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    GATParams p = init_gat(d, 2, trial % 2 == 0 ? GatCombine::kMean : GatCombine::kConcat,
                           rng);
    std::vector<Tensor> feats;
    Eigen::MatrixXd fm(n, d);
    for (int i = 0; i < n; ++i) {
      feats.push_back(random_tensor({d}, rng));
      fm.row(i) = feats.back().values().transpose();
    }
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> adj(n, n);
    adj.setConstant(false);
    std::vector<std::pair<int, std::vector<int>>> neigh;
    for (int i = 0; i < n; ++i) {
      adj(i, i) = true;
      std::vector<int> sources;
      for (int j = 0; j < n; ++j) {
        if (j != i && rng() % 2 == 0) {
          adj(i, j) = true;
          sources.push_back(j);
        }
      }
      neigh.emplace_back(i, std::move(sources));
    }
    std::vector<Tensor> out = gat_layer(feats, neigh, p);
    Eigen::MatrixXd expect = ts::gat_dense_oracle(fm, adj, p);
    for (int i = 0; i < n; ++i) {
      for (Index j = 0; j < expect.cols(); ++j) {
        CHECK(std::abs(out[static_cast<std::size_t>(i)](j) - expect(i, j)) < 1e-10);
      }
    }
  }
}

TEST_CASE("gat gradients flow to features and parameters") {
  std::mt19937_64 rng(14);
  const Index d = 6;
  GATParams p = init_gat(d, 2, GatCombine::kMean, rng);
  std::vector<Tensor> feats;
  for (int i = 0; i < 4; ++i) feats.push_back(random_tensor({d}, rng, true));
  std::vector<std::pair<int, std::vector<int>>> neigh = {{0, {1, 2}}, {3, {0}}};
  std::vector<Tensor> leaves = feats;
  std::vector<std::pair<std::string, Tensor>> named;
  collect_parameters(p, "gat", named);
  for (auto& [name, t] : named) leaves.push_back(t);
  double err = grad_check_leaves(
      [&]() {
        std::vector<Tensor> out = gat_layer(feats, neigh, p);
        return sum_all(add(out[0], out[1]));
      },
      leaves, 1e-5, 10, 7);
  CHECK(err < 1e-4);
}

TEST_CASE("no-head or bad concat configs are rejected") {
  std::mt19937_64 rng(15);
  CHECK_THROWS_AS(init_gat(6, 0, GatCombine::kMean, rng), ConfigError);
  CHECK_THROWS_AS(init_gat(7, 2, GatCombine::kConcat, rng), ConfigError);
  GATParams p;  // zero heads
  Tensor f = random_tensor({4}, rng);
  CHECK_THROWS_AS(gat_layer({f}, {{0, {}}}, p), ConfigError);
  GATParams ok = init_gat(4, 1, GatCombine::kMean, rng);
  ok.include_self = false;
  CHECK_THROWS_AS(gat_layer({f}, {{0, {}}}, ok), DataError);
}

TEST_CASE("document encoding of a single sentence is that sentence") {
  std::mt19937_64 rng(16);
  const Index d = 6;
  GATParams gat = init_gat(d, 6, GatCombine::kMean, rng);
  FFNParams ffn = init_ffn(d, 4 * d, d, rng);
  Tensor s = random_tensor({d}, rng);
  DocEncoding enc = encode_document({s}, gat, ffn);
  for (Index j = 0; j < d; ++j) CHECK(enc.h_init(j) == s(j));
}

TEST_CASE("document encoding ignores sentence order") {
  std::mt19937_64 rng(17);
  const Index d = 6;
  GATParams gat = init_gat(d, 3, GatCombine::kMean, rng);
  FFNParams ffn = init_ffn(d, 4 * d, d, rng);
  std::vector<Tensor> sents;
  for (int i = 0; i < 5; ++i) sents.push_back(random_tensor({d}, rng));
  DocEncoding a = encode_document(sents, gat, ffn);
  std::vector<Tensor> shuffled = {sents[3], sents[0], sents[4], sents[2], sents[1]};
  DocEncoding b = encode_document(shuffled, gat, ffn);
  for (Index j = 0; j < d; ++j) {
    CHECK(std::abs(a.h_init(j) - b.h_init(j)) < 1e-12);
    CHECK(std::abs(a.h_gat(j) - b.h_gat(j)) < 1e-12);
    CHECK(std::abs(a.h_ffn(j) - b.h_ffn(j)) < 1e-12);
  }
}

TEST_CASE("identity feed-forward reduces to relu") {
  std::mt19937_64 rng(18);
  const Index d = 5;
  GATParams gat = init_gat(d, 2, GatCombine::kMean, rng);
  FFNParams ffn;
  Vec eye = Vec::Zero(d * d);
  for (Index i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  ffn.w1 = Tensor::from_flat(eye, {d, d});
  ffn.b1 = Tensor::zeros({d});
  ffn.w2 = Tensor::from_flat(eye, {d, d});
  ffn.b2 = Tensor::zeros({d});
  std::vector<Tensor> sents = {random_tensor({d}, rng), random_tensor({d}, rng)};
  DocEncoding enc = encode_document(sents, gat, ffn);
  for (Index j = 0; j < d; ++j) {
    CHECK(enc.h_ffn(j) == doctest::Approx(std::max(0.0, enc.h_gat(j))));
  }
}

TEST_CASE("max-pool replacement for the attention stage") {
  std::mt19937_64 rng(19);
  const Index d = 4;
  GATParams gat = init_gat(d, 2, GatCombine::kMean, rng);
  FFNParams ffn = init_ffn(d, 4 * d, d, rng);
  Tensor only = random_tensor({d}, rng);
  DocEncoding enc = encode_document({only}, gat, ffn, /*use_gat=*/false);
  for (Index j = 0; j < d; ++j) CHECK(enc.h_gat(j) == only(j));
  Tensor direct = ffn_apply(ffn, only);
  for (Index j = 0; j < d; ++j) CHECK(enc.h_ffn(j) == doctest::Approx(direct(j)));
}
