#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

using namespace rulesent;
using testing_support::sample_dir;
using testing_support::slurp;

namespace {

// Leaf words of a bracketed line by plain bracket counting: a word is any atom
// that does not directly follow an opening parenthesis.
std::vector<std::string> bracket_counter_leaves(const std::string& line) {
  std::vector<std::string> words;
  int depth = 0;
  bool after_open = false;
  std::string atom;
  auto flush = [&] {
    if (atom.empty()) return;
    if (!after_open) words.push_back(atom);
    after_open = false;
    atom.clear();
  };
  for (char c : line) {
    if (c == '(') {
      flush();
      ++depth;
      after_open = true;
    } else if (c == ')') {
      flush();
      --depth;
    } else if (c == ' ') {
      flush();
    } else {
      atom += c;
    }
  }
  flush();
  EXPECT_EQ(depth, 0);
  return words;
}

LabeledTree random_tree(std::mt19937_64& rng, int depth) {
  std::uniform_int_distribution<int> label(0, 4);
  LabeledTree t;
  t.label = label(rng);
  if (depth == 0 || std::bernoulli_distribution(0.3)(rng)) {
    static const std::vector<std::string> words{"a", "film", "but", "not", "good", "-lrb-", "it's", "n't", ","};
    t.token = words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
    return t;
  }
  t.children.push_back(random_tree(rng, depth - 1));
  t.children.push_back(random_tree(rng, depth - 1));
  return t;
}

bool same_tree(const LabeledTree& a, const LabeledTree& b) {
  if (a.label != b.label || a.token != b.token || a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!same_tree(a.children[i], b.children[i])) return false;
  return true;
}

LabeledInstance inst(std::vector<std::string> tokens, Label y = Label::positive) {
  LabeledInstance i;
  i.id = "x";
  i.tokens = std::move(tokens);
  i.label = y;
  auto d = tag_discourse(i.tokens);
  i.discourse = d.tag;
  i.b_span = d.b_span;
  return i;
}

}  // namespace

// Labels and distributions -----------------------------------------------------

TEST(Types, ParseLabelSpellings) {
  for (const char* s : {"+", "1", "pos", "Positive"}) EXPECT_EQ(parse_label(s), Label::positive) << s;
  for (const char* s : {"-", "0", "NEG", "negative"}) EXPECT_EQ(parse_label(s), Label::negative) << s;
  EXPECT_THROW(parse_label("2"), ValidationError);
}

TEST(Types, ClampLeavesInteriorDistributionsUntouched) {
  ProbDist p{0.3, 0.7};
  EXPECT_EQ(clamp(p), p);
  ProbDist q = clamp(ProbDist{1.0, 0.0});
  EXPECT_GT(q.neg, 0.0);
  EXPECT_TRUE(q.valid());
}

TEST(Types, ArgmaxTiesGoPositive) { EXPECT_EQ((ProbDist{0.5, 0.5}).argmax(), Label::positive); }

// Tree parsing -----------------------------------------------------------------

TEST(TreeParse, TwoLeafTree) {
  auto t = parse_tree("(3 (2 it) (4 works))");
  EXPECT_EQ(t.label, 3);
  EXPECT_EQ(t.leaves(), (std::vector<std::string>{"it", "works"}));
  EXPECT_EQ(t.children[1].label, 4);
}

TEST(TreeParse, SingleLeaf) {
  auto t = parse_tree("(2 fine)");
  EXPECT_EQ(t.label, 2);
  EXPECT_TRUE(t.is_leaf());
  EXPECT_EQ(t.token, "fine");
}

TEST(TreeParse, MalformedReportsLine) {
  std::istringstream in("(3 (2 it) (4 works))\n\n(2 (2 a) (2 b)\n");
  try {
    parse_ptb_trees(in);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(TreeParse, TrailingGarbageRejected) {
  EXPECT_THROW(parse_tree("(2 a) x"), ParseError);
  EXPECT_THROW(parse_tree("2 a"), ParseError);
  EXPECT_THROW(parse_tree("(2)"), ParseError);
}

TEST(TreeParse, LabelOutOfRange) {
  EXPECT_THROW(parse_tree("(5 (2 a) (2 b))"), ValidationError);
  EXPECT_THROW(parse_tree("(x (2 a) (2 b))"), Error);
}

TEST(TreeParse, SampleLeavesMatchBracketCounter) {
  std::istringstream all(slurp(sample_dir() / "sst" / "train.txt"));
  std::string line, ten;
  std::vector<std::string> lines;
  while (lines.size() < 10 && std::getline(all, line)) {
    lines.push_back(line);
    ten += line + "\n";
  }
  std::istringstream in(ten);
  auto trees = parse_ptb_trees(in);
  ASSERT_EQ(trees.size(), 10u);
  for (std::size_t i = 0; i < trees.size(); ++i) EXPECT_EQ(trees[i].leaves(), bracket_counter_leaves(lines[i]));
}

TEST(TreeParse, RoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    auto t = random_tree(rng, 6);
    auto again = parse_tree(to_string(t));
    ASSERT_TRUE(same_tree(t, again)) << to_string(t);
    EXPECT_EQ(to_string(again), to_string(t));
  }
}

// Binarisation and extraction ---------------------------------------------------

TEST(Binarize, Mapping) {
  EXPECT_EQ(binarize_label(0), Label::negative);
  EXPECT_EQ(binarize_label(1), Label::negative);
  EXPECT_EQ(binarize_label(2), std::nullopt);
  EXPECT_EQ(binarize_label(3), Label::positive);
  EXPECT_EQ(binarize_label(4), Label::positive);
  EXPECT_THROW(binarize_label(-1), ValidationError);
  EXPECT_THROW(binarize_label(5), ValidationError);
}

TEST(Extract, NeutralSingleLeafGivesNothing) {
  std::vector<LabeledTree> trees{parse_tree("(2 fine)")};
  EXPECT_TRUE(extract_instances(trees, ExtractMode::sentence).empty());
  EXPECT_TRUE(extract_instances(trees, ExtractMode::phrase).empty());
}

TEST(Extract, SentenceModeLowercasesAndTags) {
  std::vector<LabeledTree> trees{parse_tree("(1 (2 Flat) (2 (2 ,) (3 (2 but) (3 (2 with) (4 Performance)))))"),
                                 parse_tree("(2 (2 a) (2 b))")};
  auto out = extract_instances(trees, ExtractMode::sentence, "train");
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, "train-0");
  EXPECT_EQ(out[0].tokens, (std::vector<std::string>{"flat", ",", "but", "with", "performance"}));
  EXPECT_EQ(out[0].label, Label::negative);
  EXPECT_TRUE(out[0].discourse.a_but_b);
  EXPECT_EQ(out[0].b_span, (Span{3, 5}));
}

TEST(Extract, PhraseModeDeduplicatesByTokensAndLabel) {
  std::vector<LabeledTree> trees{parse_tree("(3 (3 good) (3 good))"), parse_tree("(4 (3 good) (1 good))")};
  auto out = extract_instances(trees, ExtractMode::phrase);
  std::set<std::pair<std::vector<std::string>, Label>> keys;
  for (const auto& i : out) EXPECT_TRUE(keys.insert({i.tokens, i.label}).second);
  // {good good +}, {good +}, {good -}
  EXPECT_EQ(out.size(), 3u);
}

TEST(Extract, PhrasesAreContiguousSubsequencesOfTheirSentence) {
  std::istringstream in(slurp(sample_dir() / "sst" / "train.txt"));
  auto trees = parse_ptb_trees(in);
  for (std::size_t t = 0; t < 40; ++t) {
    std::vector<LabeledTree> one{trees[t]};
    const auto sentence = one[0].leaves();
    for (const auto& p : extract_instances(one, ExtractMode::phrase)) {
      auto it = std::search(sentence.begin(), sentence.end(), p.tokens.begin(), p.tokens.end());
      EXPECT_NE(it, sentence.end());
    }
  }
}

// Discourse tagging --------------------------------------------------------------

TEST(Discourse, LeadingButIsNotABut) {
  auto d = tag_discourse({"but", "good"});
  EXPECT_FALSE(d.tag.a_but_b);
  EXPECT_FALSE(d.b_span);
}

TEST(Discourse, TrailingButIsNotABut) { EXPECT_FALSE(tag_discourse({"good", "but"}).tag.a_but_b); }

TEST(Discourse, FlatButRevelatory) {
  auto d = tag_discourse({"flat", ",", "but", "with", "a", "revelatory", "performance"});
  EXPECT_TRUE(d.tag.a_but_b);
  EXPECT_EQ(d.b_span, (Span{3, 7}));
}

TEST(Discourse, NegationLexicon) {
  auto d = tag_discourse({"not", "bad"});
  EXPECT_TRUE(d.tag.negation);
  EXPECT_FALSE(d.tag.a_but_b);
  EXPECT_TRUE(tag_discourse({"is", "n't", "it"}).tag.negation);
  std::istringstream lex("# custom\nhardly\n");
  EXPECT_TRUE(tag_discourse({"hardly", "fun"}, read_negation_lexicon(lex)).tag.negation);
  EXPECT_FALSE(tag_discourse({"not", "fun"}, {"hardly"}).tag.negation);
}

TEST(Discourse, FirstButPropertyOnRandomTokens) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> vocab{"a", "but", "b", "not", "c"};
  std::uniform_int_distribution<std::size_t> w(0, vocab.size() - 1), len(1, 9);
  for (int k = 0; k < 2000; ++k) {
    std::vector<std::string> toks(len(rng));
    for (auto& t : toks) t = vocab[w(rng)];
    auto d = tag_discourse(toks);
    EXPECT_EQ(d.tag.a_but_b, d.b_span.has_value());
    // first qualifying but, by a direct scan
    std::optional<std::size_t> first;
    for (std::size_t i = 1; i + 1 < toks.size() && !first; ++i)
      if (toks[i] == "but") first = i;
    ASSERT_EQ(d.tag.a_but_b, first.has_value());
    if (first) {
      EXPECT_EQ(d.b_span->begin, *first + 1);
      EXPECT_EQ(d.b_span->end, toks.size());
      for (std::size_t i = 1; i < *first; ++i) EXPECT_NE(toks[i], "but");
    }
  }
}

// Corpus statistics ----------------------------------------------------------------

TEST(CorpusStats, FourHandBuiltInstances) {
  std::vector<LabeledInstance> split{inst({"good", "but", "dull"}), inst({"not", "good"}),
                                     inst({"not", "good", "but", "fun"}), inst({"fine"})};
  auto s = split_stats("Train", split);
  EXPECT_EQ(s.instances, 4u);
  EXPECT_DOUBLE_EQ(s.a_but_b_pct(), 50.0);
  EXPECT_DOUBLE_EQ(s.negation_pct(), 50.0);
  EXPECT_DOUBLE_EQ(s.discourse_pct(), 75.0);
  EXPECT_LE(s.discourse, s.a_but_b + s.negation);
}

TEST(CorpusStats, EmptySplitIsAnError) { EXPECT_THROW(split_stats("Dev", {}), ValidationError); }

TEST(CorpusStats, CsvLayout) {
  std::vector<LabeledInstance> split{inst({"good", "but", "dull"}), inst({"not", "good"}),
                                     inst({"not", "good", "but", "fun"})};
  std::ostringstream os;
  write_stats_csv(os, corpus_stats({{"Train", split}, {"Test", {inst({"fine"})}}}));
  EXPECT_EQ(os.str(),
            "Number of,Train,Test\n"
            "Instances,3,1\n"
            "A-but-B,66.7%,0.0%\n"
            "Negations,66.7%,0.0%\n"
            "Discourse,100.0%,0.0%\n");
}

// Instance files -------------------------------------------------------------------

TEST(InstanceFiles, RoundTrip) {
  std::vector<LabeledInstance> in{inst({"good", "but", "dull"}, Label::negative), inst({"not", "\"odd\""})};
  in[1].id = "s-2";
  std::ostringstream os;
  write_instances(os, in);
  std::istringstream is(os.str());
  EXPECT_EQ(read_instances(is), in);
}

TEST(InstanceFiles, ValidationNamesTheLine) {
  const char* bad[] = {
      R"({"id":"a","tokens":[],"label":"+","a_but_b":false,"negation":false,"b_span":null})",
      R"({"id":"a","tokens":["x","but","y"],"label":"+","a_but_b":true,"negation":false,"b_span":null})",
      R"({"id":"a","tokens":["x","but","y"],"label":"+","a_but_b":true,"negation":false,"b_span":[2,9]})",
      R"({"id":"a","tokens":["x"],"label":"?","a_but_b":false,"negation":false,"b_span":null})",
      R"({"id":"a","tokens":["x"],"label":"+"})",
      R"(not json)",
  };
  for (const char* b : bad) {
    std::istringstream is(std::string("\n") + b + "\n");
    try {
      read_instances(is);
      ADD_FAILURE() << b;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 2u) << b;
    }
  }
}

// Static vectors ----------------------------------------------------------------------

TEST(StaticVectors, FilterKeepsVocabularyWords) {
  std::istringstream in("good 1 2\nbad 3 4\nugly 5 6\n");
  std::unordered_set<std::string> vocab{"good", "bad", "missing"};
  auto t = load_static_vectors(in, &vocab);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.dim(), 2u);
  EXPECT_FALSE(t.contains("ugly"));
}

TEST(StaticVectors, HeaderLineParsesIdentically) {
  std::istringstream a("good 1 2\nbad 3 4\n"), b("2 2\ngood 1 2\nbad 3 4\n");
  auto ta = load_static_vectors(a), tb = load_static_vectors(b);
  ASSERT_EQ(ta.size(), tb.size());
  for (const auto& [w, v] : ta.pretrained()) EXPECT_EQ(v, tb.pretrained().at(w));
}

TEST(StaticVectors, InconsistentDimensionNamesLine) {
  std::istringstream in("good 1 2\nbad 3 4 5\n");
  try {
    load_static_vectors(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream hdr("2 3\ngood 1 2\n");
  EXPECT_THROW(load_static_vectors(hdr), ParseError);
}

TEST(StaticVectors, EmptyIntersectionIsAnError) {
  std::istringstream in("good 1 2\n");
  std::unordered_set<std::string> vocab{"other"};
  EXPECT_THROW(load_static_vectors(in, &vocab), ValidationError);
}

TEST(StaticVectors, NormsMatchRawText) {
  // 50 words, five-decimal components
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> digits(-99999, 99999);
  std::string text;
  std::vector<std::string> lines;
  for (int w = 0; w < 50; ++w) {
    std::string line = "w" + std::to_string(w);
    for (int k = 0; k < 6; ++k) {
      const int v = digits(rng);
      line += std::string(" ") + (v < 0 ? "-" : "") + "0." + std::to_string(100000 + std::abs(v)).substr(1);
    }
    lines.push_back(line);
    text += line + "\n";
  }
  std::istringstream in(text);
  auto table = load_static_vectors(in);
  ASSERT_EQ(table.size(), 50u);
  for (int pick : {0, 17, 49}) {
    // independent: split on spaces, strtod each field
    std::istringstream ls(lines[static_cast<std::size_t>(pick)]);
    std::string word, f;
    ls >> word;
    double sq = 0.0;
    while (ls >> f) sq += std::strtod(f.c_str(), nullptr) * std::strtod(f.c_str(), nullptr);
    EXPECT_NEAR(table.pretrained().at(word).norm(), std::sqrt(sq), 1e-12) << word;
  }
}

TEST(StaticVectors, SampleFileLoads) {
  std::ifstream in(sample_dir() / "vectors.txt");
  auto t = load_static_vectors(in);
  EXPECT_EQ(t.dim(), 8u);
  EXPECT_TRUE(t.contains("but"));
  EXPECT_FALSE(t.contains("moving"));
}

TEST(Lookup, KnownWordIsExact) {
  std::istringstream in("good 0.5 -0.25\n");
  auto t = load_static_vectors(in);
  std::mt19937_64 rng(1);
  EXPECT_EQ(t.lookup("good", rng), (Vector(2) << 0.5, -0.25).finished());
}

TEST(Lookup, OovIsCachedAndBounded) {
  auto t = EmbeddingTable::random_only(10);
  std::mt19937_64 rng(5);
  const Vector first = t.lookup("zzz", rng);
  EXPECT_EQ(t.lookup("zzz", rng), first);
  for (int i = 0; i < 1000; ++i) {
    const Vector& v = t.lookup("oov" + std::to_string(i), rng);
    EXPECT_LE(v.cwiseAbs().maxCoeff(), kDefaultOovBound);
  }
}

TEST(Lookup, DeterministicGivenSeed) {
  auto a = EmbeddingTable::random_only(4), b = EmbeddingTable::random_only(4);
  std::mt19937_64 ra(9), rb(9);
  for (const char* w : {"x", "y", "x", "z"}) EXPECT_EQ(a.lookup(w, ra), b.lookup(w, rb));
}

TEST(Lookup, CopiesOwnTheirOovCache) {
  auto a = EmbeddingTable::random_only(3);
  std::mt19937_64 r1(1), r2(2);
  const Vector va = a.lookup("w", r1);
  EmbeddingTable b = a;
  EXPECT_EQ(b.lookup("w", r2), va);  // inherited
  EmbeddingTable c = EmbeddingTable::random_only(3);
  EXPECT_NE(c.lookup("w", r2), va);
}

// Contextual vectors ---------------------------------------------------------------------

TEST(Contextual, OneSentence) {
  std::istringstream in(R"({"dim": 4}
{"id": "s1", "tokens": ["a", "b", "c"], "vectors": [[1,2,3,4],[5,6,7,8],[9,10,11,12]]}
)");
  std::size_t dim = 0;
  auto c = load_contextual(in, &dim);
  EXPECT_EQ(dim, 4u);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.at("s1").vectors.rows(), 3);
  EXPECT_EQ(c.at("s1").vectors(2, 3), 12.0);
}

TEST(Contextual, MismatchNamesSentence) {
  std::istringstream in(R"({"dim": 2}
{"id": "bad-one", "tokens": ["a", "b", "c"], "vectors": [[1,2],[3,4]]}
)");
  try {
    load_contextual(in);
    FAIL();
  } catch (const AlignmentError& e) {
    EXPECT_EQ(e.sentence_id(), "bad-one");
  }
}

TEST(Contextual, WrongDimensionAndDuplicates) {
  std::istringstream dim(R"({"dim": 2}
{"id": "s", "tokens": ["a"], "vectors": [[1,2,3]]}
)");
  EXPECT_THROW(load_contextual(dim), Error);
  std::istringstream dup(R"({"dim": 1}
{"id": "s", "tokens": ["a"], "vectors": [[1]]}
{"id": "s", "tokens": ["b"], "vectors": [[2]]}
)");
  EXPECT_THROW(load_contextual(dup), Error);
  std::istringstream nohdr(R"({"id": "s", "tokens": ["a"], "vectors": [[1]]})");
  EXPECT_THROW(load_contextual(nohdr), ParseError);
}

TEST(Contextual, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  ContextualCorpus corpus;
  std::size_t tokens_in = 0;
  for (int s = 0; s < 5; ++s) {
    ContextualSentenceVectors v;
    const int len = 2 + s;
    for (int t = 0; t < len; ++t) v.tokens.push_back("t" + std::to_string(t));
    v.vectors = testing_support::random_matrix(rng, len, 6);
    v.vectors(0, 0) = 1.0 / 3.0;
    tokens_in += v.tokens.size();
    corpus["s" + std::to_string(s)] = std::move(v);
  }
  std::ostringstream os;
  write_contextual(os, 6, corpus);
  std::istringstream is(os.str());
  auto back = load_contextual(is);
  ASSERT_EQ(back.size(), corpus.size());
  std::size_t vectors_out = 0;
  for (const auto& [id, v] : corpus) {
    EXPECT_EQ(back.at(id).tokens, v.tokens);
    EXPECT_EQ(back.at(id).vectors, v.vectors);  // exact
    vectors_out += static_cast<std::size_t>(back.at(id).vectors.rows());
  }
  EXPECT_EQ(tokens_in, vectors_out);
}
