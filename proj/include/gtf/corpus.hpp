#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gtf/tensor.hpp"
#include "gtf/trees.hpp"

namespace gtf {

struct Sentence {
  std::vector<std::string> tokens;
  DepTree dep;
  ConstTree cons;
};

struct Document {
  std::string id;
  std::vector<Sentence> sentences;
  std::vector<int> gold;  // label indices, sorted; one entry for single-label tasks
};

/// Ordered task labels; names may be several words.
struct LabelSet {
  std::vector<std::string> names;
  int size() const { return static_cast<int>(names.size()); }
  int index_of(const std::string& name) const;
};

struct Corpus {
  std::vector<Document> docs;
  LabelSet labels;
};

/// Token ids: 0 is UNK, 1..H are hash buckets reserved for out-of-vocabulary
/// label-name words, regular tokens follow.
struct Vocab {
  static constexpr int kUnkId = 0;
  static constexpr int kHashBuckets = 64;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int lookup(const std::string& token) const;
  /// Known words keep their id; unseen label words land in a stable hash
  /// bucket so distinct unseen label names stay distinguishable.
  int label_word_id(const std::string& word) const;
};

struct EmbeddingTable {
  Tensor weights;  // vocab size x d
  bool trainable = true;
  Index dim() const { return weights.cols(); }
};

std::uint64_t fnv1a64(std::string_view s);

/// One JSON object per line: {"id", "labels", "sentences":
/// [{"tokens", "conllu", "bracketed"}, ...]}. Trees are cross-checked
/// against the token list.
Corpus load_corpus_jsonl(const std::string& path);
void write_corpus_jsonl(const Corpus& corpus, const std::string& path);

/// Frequency >= min_count wins an id; ordering is frequency desc, then
/// lexicographic, so identical corpora produce identical vocabularies.
Vocab build_vocab(const Corpus& corpus, int min_count = 1);

EmbeddingTable init_embedding_table(const Vocab& vocab, Index d, std::mt19937_64& rng,
                                    Scalar stddev = 0.02, bool trainable = true);
/// "V d" header, then one token and d reals per line. Tokens absent from the
/// file keep their random init; the table is frozen.
EmbeddingTable load_embedding_file(const std::string& path, const Vocab& vocab,
                                   std::mt19937_64& rng);

/// Rows are the embeddings of the sentence tokens, in order.
Tensor embed_tokens(const Sentence& sentence, const EmbeddingTable& table,
                    const Vocab& vocab);

/// Mean of the label-name word embeddings. Detached from the gradient tape:
/// it only feeds the (discrete) sentence selection.
Tensor label_embedding(const std::string& name, const EmbeddingTable& table,
                       const Vocab& vocab);

}  // namespace gtf
