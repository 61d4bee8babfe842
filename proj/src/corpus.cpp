#include "gtf/corpus.hpp"

#include <json.hpp>

#include "gtf/ops.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gtf {

using nlohmann::json;

int LabelSet::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (names[static_cast<std::size_t>(i)] == name) return i;
  }
  return -1;
}

int Vocab::lookup(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnkId : it->second;
}

int Vocab::label_word_id(const std::string& word) const {
  const int id = lookup(word);
  if (id != kUnkId) return id;
  return 1 + static_cast<int>(fnv1a64(word) % kHashBuckets);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

Sentence sentence_from_json(const json& j, const std::string& where) {
  if (!j.contains("tokens") || !j.contains("conllu") || !j.contains("bracketed")) {
    throw DataError(where + ": sentence needs tokens, conllu and bracketed fields");
  }
  Sentence s;
  for (const auto& t : j.at("tokens")) s.tokens.push_back(t.get<std::string>());
  if (s.tokens.empty()) throw DataError(where + ": sentence with no tokens");

  ConlluSentence dep = parse_conllu(j.at("conllu").get<std::string>());
  if (dep.forms != s.tokens) {
    throw DataError(where + ": conllu forms do not match the token list");
  }
  s.dep = std::move(dep.tree);

  ParsedConstituency cons = parse_constituency(j.at("bracketed").get<std::string>());
  if (cons.leaf_texts != s.tokens) {
    throw DataError(where + ": bracketed leaves do not match the token list");
  }
  s.cons = std::move(cons.tree);
  return s;
}

}  // namespace

Corpus load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);

  std::vector<std::pair<std::string, std::vector<std::string>>> raw_gold;
  Corpus corpus;
  std::set<std::string> label_names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!j.contains("id") || !j.contains("labels") || !j.contains("sentences")) {
      throw DataError(where + ": document needs id, labels and sentences fields");
    }
    Document doc;
    doc.id = j.at("id").get<std::string>();
    std::vector<std::string> gold;
    for (const auto& l : j.at("labels")) {
      gold.push_back(l.get<std::string>());
      label_names.insert(gold.back());
    }
    for (const auto& s : j.at("sentences")) {
      doc.sentences.push_back(sentence_from_json(s, where));
    }
    if (doc.sentences.empty()) throw DataError(where + ": document with no sentences");
    corpus.docs.push_back(std::move(doc));
    raw_gold.emplace_back(where, std::move(gold));
  }
  if (corpus.docs.empty()) throw DataError("corpus file " + path + " has no documents");

  corpus.labels.names.assign(label_names.begin(), label_names.end());
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    for (const std::string& name : raw_gold[i].second) {
      corpus.docs[i].gold.push_back(corpus.labels.index_of(name));
    }
    std::sort(corpus.docs[i].gold.begin(), corpus.docs[i].gold.end());
    corpus.docs[i].gold.erase(
        std::unique(corpus.docs[i].gold.begin(), corpus.docs[i].gold.end()),
        corpus.docs[i].gold.end());
  }
  return corpus;
}

void write_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file " + path);
  for (const Document& doc : corpus.docs) {
    json j;
    j["id"] = doc.id;
    json labels = json::array();
    for (int g : doc.gold) labels.push_back(corpus.labels.names[static_cast<std::size_t>(g)]);
    j["labels"] = labels;
    json sentences = json::array();
    for (const Sentence& s : doc.sentences) {
      json sj;
      sj["tokens"] = s.tokens;
      sj["conllu"] = serialize_conllu(s.dep, s.tokens);
      sj["bracketed"] = serialize_constituency(s.cons, s.tokens);
      sentences.push_back(std::move(sj));
    }
    j["sentences"] = std::move(sentences);
    out << j.dump() << '\n';
  }
}

Vocab build_vocab(const Corpus& corpus, int min_count) {
  if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
  if (corpus.docs.empty()) throw DataError("build_vocab: empty corpus");

  std::map<std::string, long> counts;
  for (const Document& doc : corpus.docs) {
    for (const Sentence& s : doc.sentences) {
      for (const std::string& t : s.tokens) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, long>> order(counts.begin(), counts.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab vocab;
  vocab.id_to_token.push_back("<unk>");
  for (int b = 0; b < Vocab::kHashBuckets; ++b) {
    vocab.id_to_token.push_back("<bucket" + std::to_string(b) + ">");
  }
  for (const auto& [token, count] : order) {
    if (count < min_count) continue;
    vocab.token_to_id.emplace(token, vocab.size());
    vocab.id_to_token.push_back(token);
  }
  return vocab;
}

EmbeddingTable init_embedding_table(const Vocab& vocab, Index d, std::mt19937_64& rng,
                                    Scalar stddev, bool trainable) {
  EmbeddingTable table;
  table.weights = Tensor::randn({vocab.size(), d}, rng, stddev, trainable);
  table.trainable = trainable;
  return table;
}

EmbeddingTable load_embedding_file(const std::string& path, const Vocab& vocab,
                                   std::mt19937_64& rng) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("embedding file " + path + " is empty");
  std::istringstream hs(header);
  long file_rows = 0, d = 0;
  if (!(hs >> file_rows >> d) || file_rows < 0 || d <= 0) {
    throw DataError("embedding file " + path + ": bad header '" + header + "'");
  }

  EmbeddingTable table = init_embedding_table(vocab, d, rng, 0.02, /*trainable=*/false);
  std::string line;
  long seen = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    Vec v(d);
    for (long k = 0; k < d; ++k) {
      if (!(ls >> v[k])) {
        throw DataError("embedding file " + path + ":" + std::to_string(line_no) +
                        ": expected " + std::to_string(d) + " values for '" + token + "'");
      }
    }
    ++seen;
    const int id = vocab.lookup(token);
    if (id != Vocab::kUnkId) {
      table.weights.values_mut().segment(id * d, d) = v;
    }
  }
  if (seen != file_rows) {
    throw DataError("embedding file " + path + ": header promises " +
                    std::to_string(file_rows) + " rows, found " + std::to_string(seen));
  }
  return table;
}

Tensor embed_tokens(const Sentence& sentence, const EmbeddingTable& table,
                    const Vocab& vocab) {
  std::vector<Index> ids;
  ids.reserve(sentence.tokens.size());
  for (const std::string& t : sentence.tokens) ids.push_back(vocab.lookup(t));
  return gather_rows(table.weights, ids);
}

Tensor label_embedding(const std::string& name, const EmbeddingTable& table,
                       const Vocab& vocab) {
  std::istringstream in(name);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  if (words.empty()) throw DataError("label_embedding: empty label name");

  const Index d = table.dim();
  Vec acc = Vec::Zero(d);
  for (const std::string& word : words) {
    const Index id = vocab.label_word_id(word);
    acc += table.weights.values().segment(id * d, d);
  }
  acc /= static_cast<Scalar>(words.size());
  return Tensor::from_flat(std::move(acc), {d}, false);
}

}  // namespace gtf
