// SST bracketed-tree ingestion, SST2 binarisation, discourse tagging and corpus
// statistics.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulesent/error.hpp"
#include "rulesent/types.hpp"

namespace rulesent {

/// Five-class sentiment tree. Internal nodes have exactly two children; leaves
/// carry a token.
struct LabeledTree {
  int label = 2;
  std::string token;
  std::vector<LabeledTree> children;

  bool is_leaf() const noexcept { return children.empty(); }

  void collect_leaves(std::vector<std::string>& out) const {
    if (is_leaf()) {
      out.push_back(token);
      return;
    }
    for (const auto& c : children) c.collect_leaves(out);
  }
  std::vector<std::string> leaves() const {
    std::vector<std::string> out;
    collect_leaves(out);
    return out;
  }

  friend bool operator==(const LabeledTree&, const LabeledTree&) = default;
};

namespace detail {

class TreeParser {
 public:
  TreeParser(std::string_view text, std::size_t line) : text_(text), line_(line) {}

  LabeledTree parse() {
    skip_ws();
    LabeledTree t = node();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters after tree");
    return t;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(line_, what + " (column " + std::to_string(pos_ + 1) + ")");
  }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  void expect(char c) {
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string_view atom() {
    std::size_t start = pos_;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == '(' || c == ')' || std::isspace(static_cast<unsigned char>(c))) break;
      ++pos_;
    }
    if (start == pos_) fail("expected a label or token");
    return text_.substr(start, pos_ - start);
  }

  LabeledTree node() {
    expect('(');
    skip_ws();
    std::string_view lab = atom();
    LabeledTree t;
    if (lab.size() != 1 || !std::isdigit(static_cast<unsigned char>(lab[0])))
      fail("label '" + std::string(lab) + "' is not an integer in 0..4");
    t.label = lab[0] - '0';
    if (t.label > 4) throw ValidationError("line " + std::to_string(line_) + ": label " +
                                           std::to_string(t.label) + " outside 0..4");
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '(') {
      while (pos_ < text_.size() && text_[pos_] == '(') {
        t.children.push_back(node());
        skip_ws();
      }
      if (t.children.size() != 2)
        fail("internal node has " + std::to_string(t.children.size()) + " children, expected 2");
    } else {
      t.token = std::string(atom());
      skip_ws();
    }
    expect(')');
    return t;
  }

  std::string_view text_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

inline void write_tree(const LabeledTree& t, std::string& out) {
  out += '(';
  out += static_cast<char>('0' + t.label);
  out += ' ';
  if (t.is_leaf()) {
    out += t.token;
  } else {
    write_tree(t.children[0], out);
    out += ' ';
    write_tree(t.children[1], out);
  }
  out += ')';
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

inline LabeledTree parse_tree(std::string_view line_text, std::size_t line_number = 1) {
  return detail::TreeParser(line_text, line_number).parse();
}

/// One tree per non-blank line.
inline std::vector<LabeledTree> parse_ptb_trees(std::istream& in) {
  std::vector<LabeledTree> trees;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (std::all_of(line.begin(), line.end(),
                    [](unsigned char c) { return std::isspace(c); }))
      continue;
    trees.push_back(parse_tree(line, n));
  }
  return trees;
}

inline std::string to_string(const LabeledTree& t) {
  std::string s;
  detail::write_tree(t, s);
  return s;
}

/// {0,1} -> negative, {3,4} -> positive, 2 -> dropped.
inline std::optional<Label> binarize_label(int five_class) {
  if (five_class < 0 || five_class > 4)
    throw ValidationError("five-class label " + std::to_string(five_class) + " outside 0..4");
  if (five_class <= 1) return Label::negative;
  if (five_class >= 3) return Label::positive;
  return std::nullopt;
}

struct LabeledInstance {
  std::string id;
  std::vector<std::string> tokens;
  Label label = Label::positive;
  DiscourseTag discourse;
  std::optional<Span> b_span;

  friend bool operator==(const LabeledInstance&, const LabeledInstance&) = default;
};

inline const std::set<std::string, std::less<>>& default_negation_lexicon() {
  static const std::set<std::string, std::less<>> lex{
      "not", "n't", "no", "never", "nothing", "nobody", "none", "neither", "nor", "nowhere"};
  return lex;
}

/// Reads one lowercase negation cue per line; blank lines and '#' comments skipped.
inline std::set<std::string, std::less<>> read_negation_lexicon(std::istream& in) {
  std::set<std::string, std::less<>> lex;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string w;
    if (ss >> w && w[0] != '#') lex.insert(detail::lowercase(w));
  }
  if (lex.empty()) throw ValidationError("negation lexicon is empty");
  return lex;
}

struct DiscourseResult {
  DiscourseTag tag;
  std::optional<Span> b_span;
};

/// A-but-B: first "but" at index i with 1 <= i <= len-2; B is (i+1, len).
inline DiscourseResult tag_discourse(
    const std::vector<std::string>& tokens,
    const std::set<std::string, std::less<>>& negation_lexicon = default_negation_lexicon()) {
  DiscourseResult r;
  const std::size_t n = tokens.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (tokens[i] == "but") {
      r.tag.a_but_b = true;
      r.b_span = Span{i + 1, n};
      break;
    }
  }
  r.tag.negation = std::any_of(tokens.begin(), tokens.end(), [&](const std::string& t) {
    return negation_lexicon.contains(t);
  });
  return r;
}

enum class ExtractMode { sentence, phrase };

/// Sentence mode: one instance per root with a non-neutral label, id
/// "<prefix>-<tree index>". Phrase mode: every non-neutral subtree, deduplicated
/// by (tokens, label) in first-seen order, id "<prefix>-p<running index>".
inline std::vector<LabeledInstance> extract_instances(
    const std::vector<LabeledTree>& trees, ExtractMode mode, std::string_view id_prefix = "s",
    const std::set<std::string, std::less<>>& negation_lexicon = default_negation_lexicon()) {
  std::vector<LabeledInstance> out;
  auto make = [&](std::string id, const LabeledTree& node, Label y) {
    LabeledInstance inst;
    inst.id = std::move(id);
    for (auto& w : node.leaves()) inst.tokens.push_back(detail::lowercase(w));
    inst.label = y;
    auto d = tag_discourse(inst.tokens, negation_lexicon);
    inst.discourse = d.tag;
    inst.b_span = d.b_span;
    return inst;
  };

  if (mode == ExtractMode::sentence) {
    for (std::size_t i = 0; i < trees.size(); ++i) {
      if (auto y = binarize_label(trees[i].label))
        out.push_back(make(std::string(id_prefix) + "-" + std::to_string(i), trees[i], *y));
    }
    return out;
  }

  std::set<std::pair<std::vector<std::string>, int>> seen;
  std::vector<const LabeledTree*> stack;
  for (const auto& root : trees) {
    stack.assign(1, &root);
    while (!stack.empty()) {
      const LabeledTree* node = stack.back();
      stack.pop_back();
      if (auto y = binarize_label(node->label)) {
        auto inst = make({}, *node, *y);
        if (seen.emplace(inst.tokens, static_cast<int>(*y)).second) {
          inst.id = std::string(id_prefix) + "-p" + std::to_string(out.size());
          out.push_back(std::move(inst));
        }
      }
      // pre-order, left child first
      for (auto it = node->children.rbegin(); it != node->children.rend(); ++it)
        stack.push_back(&*it);
    }
  }
  return out;
}

struct SplitStats {
  std::string split;
  std::size_t instances = 0;
  std::size_t a_but_b = 0;
  std::size_t negation = 0;
  std::size_t discourse = 0;

  double pct(std::size_t count) const { return 100.0 * static_cast<double>(count) / static_cast<double>(instances); }
  double a_but_b_pct() const { return pct(a_but_b); }
  double negation_pct() const { return pct(negation); }
  double discourse_pct() const { return pct(discourse); }
};

struct CorpusStats {
  std::vector<SplitStats> splits;

  const SplitStats& at(std::string_view name) const {
    for (const auto& s : splits)
      if (s.split == name) return s;
    throw ValidationError("no split named '" + std::string(name) + "'");
  }
};

inline SplitStats split_stats(std::string name, const std::vector<LabeledInstance>& instances) {
  if (instances.empty()) throw ValidationError("split '" + name + "' is empty");
  SplitStats s;
  s.split = std::move(name);
  s.instances = instances.size();
  for (const auto& i : instances) {
    s.a_but_b += i.discourse.a_but_b;
    s.negation += i.discourse.negation;
    s.discourse += i.discourse.discourse();
  }
  return s;
}

inline CorpusStats corpus_stats(
    const std::vector<std::pair<std::string, std::vector<LabeledInstance>>>& splits) {
  CorpusStats cs;
  for (const auto& [name, insts] : splits) cs.splits.push_back(split_stats(name, insts));
  return cs;
}

/// Table layout: one column per split, rows Instances / A-but-B / Negations / Discourse.
inline void write_stats_csv(std::ostream& os, const CorpusStats& cs) {
  os << "Number of";
  for (const auto& s : cs.splits) os << ',' << s.split;
  os << "\nInstances";
  for (const auto& s : cs.splits) os << ',' << s.instances;
  auto row = [&](const char* name, double (SplitStats::*f)() const) {
    os << '\n' << name;
    char buf[32];
    for (const auto& s : cs.splits) {
      std::snprintf(buf, sizeof buf, "%.1f%%", (s.*f)());
      os << ',' << buf;
    }
  };
  row("A-but-B", &SplitStats::a_but_b_pct);
  row("Negations", &SplitStats::negation_pct);
  row("Discourse", &SplitStats::discourse_pct);
  os << '\n';
}

// JSON-lines instance files --------------------------------------------------

inline nlohmann::json to_json(const LabeledInstance& inst) {
  nlohmann::json j;
  j["id"] = inst.id;
  j["tokens"] = inst.tokens;
  j["label"] = std::string(to_symbol(inst.label));
  j["a_but_b"] = inst.discourse.a_but_b;
  j["negation"] = inst.discourse.negation;
  if (inst.b_span)
    j["b_span"] = {inst.b_span->begin, inst.b_span->end};
  else
    j["b_span"] = nullptr;
  return j;
}

inline LabeledInstance instance_from_json(const nlohmann::json& j, std::size_t line) {
  try {
    LabeledInstance inst;
    inst.id = j.value("id", "line-" + std::to_string(line));
    inst.tokens = j.at("tokens").get<std::vector<std::string>>();
    inst.label = parse_label(j.at("label").get<std::string>());
    inst.discourse.a_but_b = j.at("a_but_b").get<bool>();
    inst.discourse.negation = j.at("negation").get<bool>();
    const auto& span = j.at("b_span");
    if (!span.is_null()) {
      auto v = span.get<std::vector<std::size_t>>();
      if (v.size() != 2) throw ValidationError("b_span must have two entries");
      inst.b_span = Span{v[0], v[1]};
    }
    if (inst.tokens.empty()) throw ValidationError("empty token list");
    if (inst.b_span.has_value() != inst.discourse.a_but_b)
      throw ValidationError("b_span must be present exactly when a_but_b is true");
    if (inst.b_span && (inst.b_span->begin < 2 || inst.b_span->begin >= inst.b_span->end ||
                        inst.b_span->end > inst.tokens.size()))
      throw ValidationError("b_span out of range");
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, e.what());
  } catch (const ValidationError& e) {
    throw ParseError(line, e.what());
  }
}

inline void write_instances(std::ostream& os, const std::vector<LabeledInstance>& insts) {
  for (const auto& i : insts) os << to_json(i).dump() << '\n';
}

inline std::vector<LabeledInstance> read_instances(std::istream& in) {
  std::vector<LabeledInstance> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, e.what());
    }
    out.push_back(instance_from_json(j, n));
  }
  return out;
}

}  // namespace rulesent
