#pragma once

#include <string>
#include <vector>

#include "gtf/errors.hpp"

namespace gtf {

/// Phrase-structure tree. Internal nodes carry a phrase label and at least
/// one child; leaves carry a token index, numbered left to right from 0.
struct ConstTree {
  struct Node {
    std::string label;          // internal nodes
    std::vector<int> children;  // node ids; empty for leaves
    int token = -1;             // leaf token index, -1 for internal nodes
    bool is_leaf() const { return token >= 0; }
  };
  std::vector<Node> nodes;
  int root = -1;
  int leaf_count = 0;
};

/// Head-modifier tree with a word at every node. head[i] is the parent's
/// token index; the single root has head -1.
struct DepTree {
  std::vector<int> head;
  std::vector<std::string> deprel;
  int root = -1;

  int size() const { return static_cast<int>(head.size()); }
  /// Child lists per node, each sorted by token index.
  std::vector<std::vector<int>> children() const;
};

struct ParsedConstituency {
  ConstTree tree;
  std::vector<std::string> leaf_texts;
};

/// Parses a Penn-style parenthesized tree, e.g.
/// "(S (NP (DT the) (NN cat)) (VP (VBZ sits)))". Malformed input raises
/// ParseError carrying the byte offset.
ParsedConstituency parse_constituency(const std::string& text);
std::string serialize_constituency(const ConstTree& tree,
                                   const std::vector<std::string>& tokens);

struct ConlluSentence {
  std::vector<std::string> forms;
  DepTree tree;
};

/// Parses one sentence block of ID/FORM/HEAD/DEPREL rows (4 columns, or the
/// full 10-column layout with the extra fields ignored), whitespace
/// separated. A blank line terminates the sentence. Structural problems
/// (cycle, several roots, head out of range) raise ParseError naming the
/// 1-based line.
ConlluSentence parse_conllu(const std::string& text);
std::string serialize_conllu(const DepTree& tree,
                             const std::vector<std::string>& forms);

}  // namespace gtf
