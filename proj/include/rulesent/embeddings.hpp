// Static (word2vec text format) and precomputed contextual word vectors.
#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulesent/error.hpp"
#include "rulesent/tensor.hpp"

namespace rulesent {

inline constexpr double kDefaultOovBound = 0.25;

/// Pretrained vectors plus a per-instance cache of random vectors for
/// out-of-vocabulary words. The pretrained store is shared and immutable, so
/// copies are cheap; each copy owns its own OOV cache and is single-writer.
class EmbeddingTable {
 public:
  using Store = std::unordered_map<std::string, Vector>;

  EmbeddingTable(std::size_t dim, Store vectors, double oov_bound = kDefaultOovBound,
                 bool trainable = true)
      : dim_(dim),
        store_(std::make_shared<const Store>(std::move(vectors))),
        oov_bound_(oov_bound),
        trainable_(trainable) {
    if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
    for (const auto& [w, v] : *store_)
      if (static_cast<std::size_t>(v.size()) != dim_)
        throw ValidationError("vector for '" + w + "' has wrong dimension");
  }

  /// A table with no pretrained entries: every token is drawn at random.
  static EmbeddingTable random_only(std::size_t dim, double oov_bound = kDefaultOovBound) {
    return EmbeddingTable(dim, {}, oov_bound);
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return store_->size(); }
  double oov_bound() const noexcept { return oov_bound_; }
  bool trainable() const noexcept { return trainable_; }
  void set_trainable(bool t) noexcept { trainable_ = t; }
  bool contains(const std::string& w) const { return store_->contains(w); }
  const Store& pretrained() const noexcept { return *store_; }

  template <class Rng>
  const Vector& lookup(const std::string& token, Rng& rng) {
    if (auto it = store_->find(token); it != store_->end()) return it->second;
    if (auto it = oov_.find(token); it != oov_.end()) return it->second;
    std::uniform_real_distribution<double> u(-oov_bound_, oov_bound_);
    Vector v(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = u(rng);
    return oov_.emplace(token, std::move(v)).first->second;
  }

 private:
  std::size_t dim_;
  std::shared_ptr<const Store> store_;
  std::unordered_map<std::string, Vector> oov_;
  double oov_bound_;
  bool trainable_;
};

/// word2vec text format, with or without a leading "count dim" header. Only
/// words in `vocab_filter` are kept when a filter is given.
inline EmbeddingTable load_static_vectors(
    std::istream& in, const std::unordered_set<std::string>* vocab_filter = nullptr) {
  EmbeddingTable::Store store;
  std::size_t dim = 0;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(n, "non-numeric vector component '" + tok + "'");
      }
    }
    if (n == 1 && vals.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos) {
      dim = static_cast<std::size_t>(vals[0]);
      if (dim == 0) throw ParseError(n, "header declares zero dimension");
      continue;
    }
    if (vals.empty()) throw ParseError(n, "word '" + word + "' has no vector");
    if (dim == 0) dim = vals.size();
    if (vals.size() != dim)
      throw ParseError(n, "expected " + std::to_string(dim) + " components, found " +
                              std::to_string(vals.size()));
    if (vocab_filter && !vocab_filter->contains(word)) continue;
    store.insert_or_assign(word, Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(dim)));
  }
  if (store.empty())
    throw ValidationError(vocab_filter ? "no vectors intersect the vocabulary"
                                       : "vector file contains no vectors");
  return EmbeddingTable(dim, std::move(store));
}

struct ContextualSentenceVectors {
  std::vector<std::string> tokens;
  Matrix vectors;  // one row per token
};

using ContextualCorpus = std::map<std::string, ContextualSentenceVectors>;

/// JSON-lines: header {"dim": d}, then {"id", "tokens", "vectors"} per sentence.
inline ContextualCorpus load_contextual(std::istream& in, std::size_t* dim_out = nullptr) {
  ContextualCorpus out;
  std::string line;
  std::size_t n = 0;
  std::optional<std::size_t> dim;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, e.what());
    }
    if (!dim) {
      if (!j.contains("dim")) throw ParseError(n, "missing {\"dim\": d} header line");
      dim = j.at("dim").get<std::size_t>();
      if (*dim == 0) throw ParseError(n, "dimension must be positive");
      continue;
    }
    std::string id;
    ContextualSentenceVectors s;
    std::vector<std::vector<double>> rows;
    try {
      id = j.at("id").get<std::string>();
      s.tokens = j.at("tokens").get<std::vector<std::string>>();
      rows = j.at("vectors").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, e.what());
    }
    if (rows.size() != s.tokens.size())
      throw AlignmentError(id, std::to_string(s.tokens.size()) + " tokens but " +
                                   std::to_string(rows.size()) + " vectors");
    s.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(*dim));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != *dim)
        throw AlignmentError(id, "vector " + std::to_string(r) + " has dimension " +
                                     std::to_string(rows[r].size()) + ", expected " +
                                     std::to_string(*dim));
      for (std::size_t c = 0; c < *dim; ++c)
        s.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    if (!out.emplace(id, std::move(s)).second)
      throw ParseError(n, "duplicate sentence id '" + id + "'");
  }
  if (!dim) throw ValidationError("contextual vector file is empty");
  if (dim_out) *dim_out = *dim;
  return out;
}

inline void write_contextual(std::ostream& os, std::size_t dim, const ContextualCorpus& corpus) {
  os << nlohmann::json{{"dim", dim}}.dump() << '\n';
  for (const auto& [id, s] : corpus) {
    if (static_cast<std::size_t>(s.vectors.cols()) != dim ||
        static_cast<std::size_t>(s.vectors.rows()) != s.tokens.size())
      throw AlignmentError(id, "shape does not match tokens/dim");
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < s.vectors.rows(); ++r) {
      std::vector<double> row(s.vectors.row(r).begin(), s.vectors.row(r).end());
      rows.push_back(std::move(row));
    }
    os << nlohmann::json{{"id", id}, {"tokens", s.tokens}, {"vectors", rows}}.dump() << '\n';
  }
}

}  // namespace rulesent
