#include "gtf/trees.hpp"

#include <cctype>
#include <functional>
#include <sstream>

namespace gtf {

namespace {

bool is_token_char(char c) {
  return c != '(' && c != ')' && !std::isspace(static_cast<unsigned char>(c));
}

std::string at_byte(std::size_t pos) { return " at byte " + std::to_string(pos); }
std::string at_line(std::size_t line) { return " at line " + std::to_string(line); }

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string field;
  while (in >> field) out.push_back(field);
  return out;
}

int parse_int_field(const std::string& s, const char* what, std::size_t line) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    throw ParseError(std::string("conllu: bad ") + what + " '" + s + "'" + at_line(line),
                     line);
  }
  if (used != s.size()) {
    throw ParseError(std::string("conllu: bad ") + what + " '" + s + "'" + at_line(line),
                     line);
  }
  return v;
}

}  // namespace

std::vector<std::vector<int>> DepTree::children() const {
  std::vector<std::vector<int>> out(head.size());
  for (int i = 0; i < size(); ++i) {
    if (head[static_cast<std::size_t>(i)] >= 0) {
      out[static_cast<std::size_t>(head[static_cast<std::size_t>(i)])].push_back(i);
    }
  }
  return out;
}

ParsedConstituency parse_constituency(const std::string& text) {
  ConstTree tree;
  std::vector<std::string> leaves;
  std::size_t pos = 0;

  auto skip_ws = [&]() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };

  std::function<int()> parse_node = [&]() -> int {
    const std::size_t open = pos;
    ++pos;  // consume '('
    skip_ws();
    const std::size_t label_start = pos;
    while (pos < text.size() && is_token_char(text[pos])) ++pos;
    if (pos == label_start) {
      throw ParseError("constituency: missing node label" + at_byte(label_start),
                       label_start);
    }
    std::string label = text.substr(label_start, pos - label_start);
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({std::move(label), {}, -1});
    std::vector<int> children;
    while (true) {
      skip_ws();
      if (pos >= text.size()) {
        throw ParseError("constituency: unexpected end of input" + at_byte(pos), pos);
      }
      if (text[pos] == ')') {
        ++pos;
        break;
      }
      if (text[pos] == '(') {
        children.push_back(parse_node());
      } else {
        const std::size_t t0 = pos;
        while (pos < text.size() && is_token_char(text[pos])) ++pos;
        tree.nodes.push_back({"", {}, static_cast<int>(leaves.size())});
        leaves.push_back(text.substr(t0, pos - t0));
        children.push_back(static_cast<int>(tree.nodes.size()) - 1);
      }
    }
    if (children.empty()) {
      throw ParseError("constituency: node '" + tree.nodes[static_cast<std::size_t>(node_id)].label +
                           "' has no children" + at_byte(open),
                       open);
    }
    tree.nodes[static_cast<std::size_t>(node_id)].children = std::move(children);
    return node_id;
  };

  skip_ws();
  if (pos >= text.size() || text[pos] != '(') {
    throw ParseError("constituency: expected '('" + at_byte(pos), pos);
  }
  tree.root = parse_node();
  skip_ws();
  if (pos != text.size()) {
    throw ParseError("constituency: trailing content" + at_byte(pos), pos);
  }
  tree.leaf_count = static_cast<int>(leaves.size());
  return {std::move(tree), std::move(leaves)};
}

std::string serialize_constituency(const ConstTree& tree,
                                   const std::vector<std::string>& tokens) {
  std::string out;
  std::function<void(int)> emit = [&](int id) {
    const ConstTree::Node& n = tree.nodes[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      out += tokens[static_cast<std::size_t>(n.token)];
      return;
    }
    out += '(';
    out += n.label;
    for (int c : n.children) {
      out += ' ';
      emit(c);
    }
    out += ')';
  };
  emit(tree.root);
  return out;
}

ConlluSentence parse_conllu(const std::string& text) {
  std::vector<std::string> forms, rels;
  std::vector<int> heads_raw;
  std::vector<std::size_t> line_of;
  std::size_t line_no = 0;
  bool terminated = false;

  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (blank) {
      if (!forms.empty()) terminated = true;
      continue;
    }
    if (terminated) {
      throw ParseError("conllu: content after sentence terminator" + at_line(line_no),
                       line_no);
    }
    if (line[0] == '#') continue;
    std::vector<std::string> cols = split_ws(line);
    // multi-word ranges and empty nodes carry '-'/'.' ids and are skipped
    if (cols[0].find('-') != std::string::npos || cols[0].find('.') != std::string::npos) {
      continue;
    }
    std::size_t head_col, rel_col;
    if (cols.size() == 4) {
      head_col = 2;
      rel_col = 3;
    } else if (cols.size() == 10) {
      head_col = 6;
      rel_col = 7;
    } else {
      throw ParseError("conllu: expected 4 or 10 columns, got " +
                           std::to_string(cols.size()) + at_line(line_no),
                       line_no);
    }
    const int id = parse_int_field(cols[0], "token id", line_no);
    if (id != static_cast<int>(forms.size()) + 1) {
      throw ParseError("conllu: token id " + std::to_string(id) +
                           " breaks the 1..n sequence" + at_line(line_no),
                       line_no);
    }
    heads_raw.push_back(parse_int_field(cols[head_col], "head", line_no));
    forms.push_back(cols[1]);
    rels.push_back(cols[rel_col]);
    line_of.push_back(line_no);
  }
  if (forms.empty()) throw ParseError("conllu: no token rows", line_no);

  const int n = static_cast<int>(forms.size());
  DepTree tree;
  tree.head.assign(static_cast<std::size_t>(n), -1);
  tree.deprel = rels;
  int root = -1;
  for (int i = 0; i < n; ++i) {
    const int h = heads_raw[static_cast<std::size_t>(i)];
    if (h < 0 || h > n) {
      throw ParseError("conllu: head " + std::to_string(h) + " out of range 0.." +
                           std::to_string(n) + at_line(line_of[static_cast<std::size_t>(i)]),
                       line_of[static_cast<std::size_t>(i)]);
    }
    if (h == 0) {
      if (root >= 0) {
        throw ParseError("conllu: multiple roots" +
                             at_line(line_of[static_cast<std::size_t>(i)]),
                         line_of[static_cast<std::size_t>(i)]);
      }
      root = i;
    } else {
      tree.head[static_cast<std::size_t>(i)] = h - 1;
    }
  }
  for (int i = 0; i < n; ++i) {
    int cursor = i, steps = 0;
    while (cursor >= 0) {
      cursor = tree.head[static_cast<std::size_t>(cursor)];
      if (++steps > n) {
        throw ParseError("conllu: cycle through token " + std::to_string(i + 1) +
                             at_line(line_of[static_cast<std::size_t>(i)]),
                         line_of[static_cast<std::size_t>(i)]);
      }
    }
  }
  if (root < 0) throw ParseError("conllu: no root", line_no);
  tree.root = root;
  return {std::move(forms), std::move(tree)};
}

std::string serialize_conllu(const DepTree& tree, const std::vector<std::string>& forms) {
  std::string out;
  for (int i = 0; i < tree.size(); ++i) {
    const int h = tree.head[static_cast<std::size_t>(i)];
    out += std::to_string(i + 1);
    out += '\t';
    out += forms[static_cast<std::size_t>(i)];
    out += '\t';
    out += std::to_string(h < 0 ? 0 : h + 1);
    out += '\t';
    out += tree.deprel[static_cast<std::size_t>(i)];
    out += '\n';
  }
  return out;
}

}  // namespace gtf
