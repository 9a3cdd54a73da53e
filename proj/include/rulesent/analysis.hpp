// Embedding diagnostics: intra-sentence cosine similarity and per-model mean
// KL between projected and raw predictions.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulesent/cnn_model.hpp"
#include "rulesent/embeddings.hpp"
#include "rulesent/error.hpp"
#include "rulesent/rules.hpp"
#include "rulesent/tensor.hpp"

namespace rulesent {

struct SimilarityMatrix {
  std::vector<std::string> tokens;
  Matrix values;  // symmetric; diagonal set to the smallest off-diagonal entry
};

/// Pairwise cosine similarity of raw token vectors (one per row).
inline SimilarityMatrix intra_sentence_similarity(const Matrix& vectors, std::vector<std::string> tokens = {}) {
  const Eigen::Index n = vectors.rows();
  if (n < 2) throw ValidationError("similarity needs at least two tokens");
  if (tokens.empty())
    for (Eigen::Index i = 0; i < n; ++i) tokens.push_back(std::to_string(i));
  if (static_cast<Eigen::Index>(tokens.size()) != n) throw ValidationError("token count does not match vector count");

  Vector norms(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    norms[i] = vectors.row(i).norm();
    if (norms[i] == 0.0) throw ValidationError("zero vector for token '" + tokens[static_cast<std::size_t>(i)] + "'");
  }
  SimilarityMatrix s;
  s.tokens = std::move(tokens);
  s.values.resize(n, n);
  double lo = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double c = vectors.row(i).dot(vectors.row(j)) / (norms[i] * norms[j]);
      c = std::clamp(c, -1.0, 1.0);
      s.values(i, j) = s.values(j, i) = c;
      lo = std::min(lo, c);
    }
  for (Eigen::Index i = 0; i < n; ++i) s.values(i, i) = lo;
  return s;
}

/// Token vectors for an example as the model sees them: its own (possibly
/// fine-tuned) embedding rows, or the frozen contextual vectors.
inline Matrix token_vectors(const ModelParams& model, const Example& e) {
  if (e.input.frozen()) return e.input.vectors();
  const auto ids = e.input.ids();
  Matrix m(static_cast<Eigen::Index>(ids.size()), model.embedding.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= model.embedding.rows()) throw ValidationError("token id out of range");
    m.row(static_cast<Eigen::Index>(t)) = model.embedding.row(ids[t]);
  }
  return m;
}

struct SimilarityEntry {
  std::string sentence_id;
  std::string source;
  SimilarityMatrix matrix;
};

/// One matrix per A-but-B instance. `vectors_for(instance)` returns the
/// token vectors for that instance (and throws when they are unavailable).
template <class VectorsFor>
std::vector<SimilarityEntry> similarity_report(std::span<const LabeledInstance> instances, const std::string& source,
                                               const VectorsFor& vectors_for) {
  std::vector<SimilarityEntry> out;
  for (const auto& inst : instances) {
    if (!inst.discourse.a_but_b) continue;
    Matrix v = vectors_for(inst);
    out.push_back({inst.id, source, intra_sentence_similarity(v, inst.tokens)});
  }
  return out;
}

/// Vectors from a contextual corpus, keyed by sentence id.
inline auto contextual_vectors(const ContextualCorpus& corpus) {
  return [&corpus](const LabeledInstance& inst) -> Matrix {
    auto it = corpus.find(inst.id);
    if (it == corpus.end()) throw ValidationError("contextual file has no sentence '" + inst.id + "'");
    if (it->second.tokens.size() != inst.tokens.size())
      throw AlignmentError(inst.id, "token count differs from the instance");
    return it->second.vectors;
  };
}

/// Vectors from a trained model's embedding table.
inline auto model_vectors(const ModelParams& model) {
  return [&model](const LabeledInstance& inst) -> Matrix {
    Matrix m(static_cast<Eigen::Index>(inst.tokens.size()), model.embedding.cols());
    for (std::size_t t = 0; t < inst.tokens.size(); ++t) {
      auto id = model.vocab.find(inst.tokens[t]);
      if (!id) throw ValidationError("token '" + inst.tokens[t] + "' is not in the model vocabulary");
      m.row(static_cast<Eigen::Index>(t)) = model.embedding.row(*id);
    }
    return m;
  };
}

/// Vectors straight from a pretrained table; unknown words take the table's
/// cached random draw.
template <class Rng>
auto table_vectors(EmbeddingTable& table, Rng& rng) {
  return [&table, &rng](const LabeledInstance& inst) -> Matrix {
    Matrix m(static_cast<Eigen::Index>(inst.tokens.size()), static_cast<Eigen::Index>(table.dim()));
    for (std::size_t t = 0; t < inst.tokens.size(); ++t)
      m.row(static_cast<Eigen::Index>(t)) = table.lookup(inst.tokens[t], rng).transpose();
    return m;
  };
}

/// Token header row and column, comma separated; tokens are quoted.
inline void write_similarity_csv(std::ostream& os, const SimilarityMatrix& s) {
  auto quote = [](const std::string& t) {
    std::string q = "\"";
    for (char c : t) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  };
  const auto prec = os.precision(17);
  os << "\"\"";
  for (const auto& t : s.tokens) os << ',' << quote(t);
  os << '\n';
  for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
    os << quote(s.tokens[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < s.values.cols(); ++j) os << ',' << s.values(i, j);
    os << '\n';
  }
  os.precision(prec);
}

// KL report -------------------------------------------------------------------

struct KlVariantResult {
  std::string variant;
  double mean_kl = 0.0;
  std::size_t n_models = 0;
  std::size_t n_instances = 0;
};

/// Mean over models (seeds) and instances of KL(project(p, r, C) || p).
/// `models` are raw predictors without a final projection.
template <SentenceScorer S>
KlVariantResult kl_report(const std::string& variant, std::span<const S> models, std::span<const Example> instances,
                          ProjectionConfig cfg = {}) {
  if (instances.empty()) throw ValidationError("KL report needs at least one instance");
  if (models.empty()) throw ValidationError("KL report for '" + variant + "' has no models");
  double sum = 0.0;
  for (const auto& m : models)
    for (const auto& e : instances) {
      const ProbDist p = clamp(m(e.input));
      sum += kl_divergence(project(p, rule_score(m, e), cfg), p);
    }
  KlVariantResult r;
  r.variant = variant;
  r.n_models = models.size();
  r.n_instances = instances.size();
  r.mean_kl = sum / static_cast<double>(models.size() * instances.size());
  return r;
}

/// Adapter so checkpoints satisfy SentenceScorer.
struct ModelScorer {
  const ModelParams* params;
  ProbDist operator()(const SentenceInput& x) const { return predict(*params, x); }
};

inline nlohmann::json to_json(const std::vector<KlVariantResult>& rs, double C) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rs)
    arr.push_back({{"variant", r.variant}, {"mean_kl", r.mean_kl}, {"n_models", r.n_models},
                   {"n_instances", r.n_instances}});
  return {{"C", C}, {"variants", std::move(arr)}};
}

}  // namespace rulesent
