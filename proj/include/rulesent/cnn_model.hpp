// Convolutional sentence classifier: embeddings -> parallel 1-D convolutions
// of several widths -> ReLU -> max-over-time -> dropout -> affine -> softmax.
//
// Everything is double precision so analytic gradients can be checked
// against central differences at tight tolerances.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rulesent/embeddings.hpp"
#include "rulesent/error.hpp"
#include "rulesent/sst_data.hpp"
#include "rulesent/tensor.hpp"
#include "rulesent/types.hpp"

namespace rulesent {

inline constexpr std::int32_t kPadId = -1;

/// A sentence as the network sees it: either rows of the model's own
/// embedding table (ids, kPadId for padding) or a frozen matrix of
/// precomputed vectors, one row per token.
class SentenceInput {
 public:
  SentenceInput() = default;

  static SentenceInput from_ids(std::vector<std::int32_t> ids) {
    SentenceInput s;
    s.ids_ = std::move(ids);
    return s;
  }
  static SentenceInput from_vectors(Matrix vectors) {
    SentenceInput s;
    s.vectors_ = std::move(vectors);
    s.frozen_ = true;
    return s;
  }

  bool frozen() const noexcept { return frozen_; }
  std::size_t length() const noexcept {
    return frozen_ ? static_cast<std::size_t>(vectors_.rows()) : ids_.size();
  }
  std::span<const std::int32_t> ids() const noexcept { return ids_; }
  const Matrix& vectors() const noexcept { return vectors_; }

  SentenceInput slice(Span s) const {
    if (s.begin >= s.end || s.end > length()) throw ValidationError("slice out of range");
    if (frozen_)
      return from_vectors(vectors_.middleRows(static_cast<Eigen::Index>(s.begin),
                                              static_cast<Eigen::Index>(s.size())));
    return from_ids({ids_.begin() + static_cast<std::ptrdiff_t>(s.begin),
                     ids_.begin() + static_cast<std::ptrdiff_t>(s.end)});
  }

  /// Append `n` pure-padding positions (ids route only).
  SentenceInput padded(std::size_t n) const {
    if (frozen_) throw ValidationError("explicit padding applies to id inputs only");
    auto ids = ids_;
    ids.insert(ids.end(), n, kPadId);
    return from_ids(std::move(ids));
  }

 private:
  std::vector<std::int32_t> ids_;
  Matrix vectors_;
  bool frozen_ = false;
};

/// The unit of training and evaluation.
struct Example {
  std::string id;
  SentenceInput input;
  Label label = Label::positive;
  DiscourseTag discourse;
  std::optional<Span> b_span;
};

class Vocabulary {
 public:
  std::int32_t add(const std::string& w) {
    auto [it, inserted] = index_.emplace(w, static_cast<std::int32_t>(words_.size()));
    if (inserted) words_.push_back(w);
    return it->second;
  }
  std::optional<std::int32_t> find(const std::string& w) const {
    if (auto it = index_.find(w); it != index_.end()) return it->second;
    return std::nullopt;
  }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::string& word(std::int32_t id) const { return words_.at(static_cast<std::size_t>(id)); }

  /// First-appearance order over every token of every instance.
  template <class Range>
  static Vocabulary from_instances(const Range& instance_lists) {
    Vocabulary v;
    for (const auto& list : instance_lists)
      for (const auto& inst : list)
        for (const auto& t : inst.tokens) v.add(t);
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct TrainConfig {
  std::vector<std::size_t> widths{3, 4, 5};
  std::size_t maps = 100;
  double dropout = 0.5;
  std::size_t batch_size = 50;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  std::uint64_t seed = 1;

  void validate() const {
    if (widths.empty()) throw ValidationError("at least one filter width is required");
    for (auto w : widths)
      if (w == 0) throw ValidationError("filter widths must be positive");
    if (maps < 1) throw ValidationError("maps must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (patience < 1) throw ValidationError("patience must be >= 1");
    if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
    if (!(adadelta_rho > 0.0 && adadelta_rho < 1.0)) throw ValidationError("rho must lie in (0, 1)");
    if (!(adadelta_eps > 0.0)) throw ValidationError("adadelta epsilon must be positive");
  }
};

struct ModelShape {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;
  std::size_t maps = 0;

  std::size_t total_maps() const noexcept { return widths.size() * maps; }
  std::size_t max_width() const noexcept {
    return widths.empty() ? 0 : *std::max_element(widths.begin(), widths.end());
  }
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

struct ConvLayer {
  std::size_t width = 0;
  Matrix weight;  // (width * input_dim) x maps; row block k multiplies token t+k
  Vector bias;    // maps
};

struct ModelParams {
  ModelShape shape;
  Vocabulary vocab;
  Matrix embedding;  // vocab.size() x input_dim; empty for frozen-input models
  bool embeddings_trainable = false;
  std::vector<ConvLayer> conv;
  Matrix dense_w;  // 2 x total_maps
  Vector dense_b;  // 2
  std::uint64_t generation = 0;  // bumped on every in-place update

  bool all_finite() const {
    auto fin = [](const auto& m) { return m.size() == 0 || m.allFinite(); };
    if (!fin(embedding) || !fin(dense_w) || !fin(dense_b)) return false;
    return std::all_of(conv.begin(), conv.end(),
                       [&](const ConvLayer& c) { return fin(c.weight) && fin(c.bias); });
  }
};

/// Glorot-uniform convolution filters, zero biases and a zero dense layer.
template <class Rng>
ModelParams init_params(const ModelShape& shape, Rng& rng) {
  if (shape.input_dim == 0) throw ValidationError("input dimension must be positive");
  ModelParams p;
  p.shape = shape;
  for (auto w : shape.widths) {
    ConvLayer c;
    c.width = w;
    const auto rows = static_cast<Eigen::Index>(w * shape.input_dim);
    const auto cols = static_cast<Eigen::Index>(shape.maps);
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    c.weight.resize(rows, cols);
    for (Eigen::Index i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = u(rng);
    c.bias = Vector::Zero(cols);
    p.conv.push_back(std::move(c));
  }
  p.dense_w = Matrix::Zero(static_cast<Eigen::Index>(kNumLabels),
                           static_cast<Eigen::Index>(shape.total_maps()));
  p.dense_b = Vector::Zero(static_cast<Eigen::Index>(kNumLabels));
  return p;
}

/// Model over the static-vector route: one embedding row per vocabulary word,
/// pretrained where available, otherwise the table's cached random draw.
template <class Rng>
ModelParams build_static_model(const TrainConfig& cfg, const Vocabulary& vocab,
                               EmbeddingTable& table, Rng& rng) {
  cfg.validate();
  ModelShape shape{table.dim(), cfg.widths, cfg.maps};
  ModelParams p = init_params(shape, rng);
  p.vocab = vocab;
  p.embedding.resize(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(table.dim()));
  for (std::size_t i = 0; i < vocab.size(); ++i)
    p.embedding.row(static_cast<Eigen::Index>(i)) = table.lookup(vocab.words()[i], rng).transpose();
  p.embeddings_trainable = table.trainable();
  return p;
}

template <class Rng>
ModelParams build_frozen_model(const TrainConfig& cfg, std::size_t input_dim, Rng& rng) {
  cfg.validate();
  return init_params(ModelShape{input_dim, cfg.widths, cfg.maps}, rng);
}

// Encoding -------------------------------------------------------------------

inline Example encode_static(const LabeledInstance& inst, const Vocabulary& vocab) {
  std::vector<std::int32_t> ids;
  ids.reserve(inst.tokens.size());
  for (const auto& t : inst.tokens) {
    auto id = vocab.find(t);
    if (!id) throw ValidationError("token '" + t + "' of " + inst.id + " is not in the vocabulary");
    ids.push_back(*id);
  }
  return {inst.id, SentenceInput::from_ids(std::move(ids)), inst.label, inst.discourse, inst.b_span};
}

inline std::vector<Example> encode_static(const std::vector<LabeledInstance>& insts,
                                          const Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(insts.size());
  for (const auto& i : insts) out.push_back(encode_static(i, vocab));
  return out;
}

inline std::vector<Example> encode_contextual(const std::vector<LabeledInstance>& insts,
                                              const ContextualCorpus& corpus) {
  std::vector<Example> out;
  out.reserve(insts.size());
  for (const auto& i : insts) {
    auto it = corpus.find(i.id);
    if (it == corpus.end()) throw ValidationError("no contextual vectors for sentence '" + i.id + "'");
    if (it->second.tokens.size() != i.tokens.size())
      throw AlignmentError(i.id, "contextual file has " + std::to_string(it->second.tokens.size()) +
                                     " tokens, instance has " + std::to_string(i.tokens.size()));
    out.push_back({i.id, SentenceInput::from_vectors(it->second.vectors), i.label, i.discourse, i.b_span});
  }
  return out;
}

// Forward / backward ---------------------------------------------------------

struct ForwardCache {
  const ModelParams* params = nullptr;
  std::uint64_t generation = 0;
  Matrix input;                       // padded n x d
  std::vector<std::int32_t> ids;      // padded ids (kPadId for padding); empty if frozen
  std::vector<Eigen::Index> argmax;   // best position per map, all layers concatenated
  Vector pre_pool;                    // max pre-activation per map
  Vector pooled;                      // ReLU(pre_pool)
  Vector mask;                        // scaled dropout mask; empty when no dropout
  Vector logits;
  ProbDist probs;
};

namespace detail {

inline ProbDist softmax2(const Vector& logits) {
  const double m = std::max(logits[0], logits[1]);
  const double a = std::exp(logits[0] - m), b = std::exp(logits[1] - m);
  return {a / (a + b), b / (a + b)};
}

using UnfoldMap = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;

/// Rows t..t+w-1 of a row-major matrix are contiguous, so the unfolded
/// (positions x w*d) window matrix is a strided view of the input.
inline UnfoldMap unfold(const Matrix& x, std::size_t w) {
  const Eigen::Index d = x.cols();
  const Eigen::Index positions = x.rows() - static_cast<Eigen::Index>(w) + 1;
  return UnfoldMap(x.data(), positions, static_cast<Eigen::Index>(w) * d, Eigen::OuterStride<>(d));
}

inline void assemble_input(const ModelParams& p, const SentenceInput& in, ForwardCache& c) {
  const auto d = static_cast<Eigen::Index>(p.shape.input_dim);
  const std::size_t min_len = p.shape.max_width();
  if (in.frozen()) {
    if (in.vectors().cols() != d)
      throw ValidationError("input vectors have dimension " + std::to_string(in.vectors().cols()) +
                            ", model expects " + std::to_string(d));
    const auto n = static_cast<std::size_t>(in.vectors().rows());
    if (n == 0) throw ValidationError("empty sentence");
    c.input = Matrix::Zero(static_cast<Eigen::Index>(std::max(n, min_len)), d);
    c.input.topRows(in.vectors().rows()) = in.vectors();
    c.ids.clear();
    return;
  }
  if (p.embedding.rows() == 0) throw ValidationError("model has no embedding table for id input");
  auto ids = in.ids();
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == kPadId) --n;
  if (n == 0) throw ValidationError("empty sentence");
  c.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  c.ids.resize(std::max(n, min_len), kPadId);
  c.input = Matrix::Zero(static_cast<Eigen::Index>(c.ids.size()), d);
  for (std::size_t t = 0; t < c.ids.size(); ++t) {
    const auto id = c.ids[t];
    if (id == kPadId) continue;
    if (id < 0 || id >= p.embedding.rows()) throw ValidationError("token id out of range");
    c.input.row(static_cast<Eigen::Index>(t)) = p.embedding.row(id);
  }
}

}  // namespace detail

/// `dropout_mask`, when given, must have one entry per map (already scaled,
/// i.e. 0 or 1/(1-rate) for inverted dropout).
inline ForwardCache forward(const ModelParams& p, const SentenceInput& in,
                            const Vector* dropout_mask = nullptr) {
  ForwardCache c;
  c.params = &p;
  c.generation = p.generation;
  detail::assemble_input(p, in, c);

  const auto total = static_cast<Eigen::Index>(p.shape.total_maps());
  c.pre_pool.resize(total);
  c.argmax.resize(static_cast<std::size_t>(total));
  Eigen::Index offset = 0;
  for (const auto& layer : p.conv) {
    Matrix z = detail::unfold(c.input, layer.width) * layer.weight;
    z.rowwise() += layer.bias.transpose();
    for (Eigen::Index m = 0; m < z.cols(); ++m) {
      Eigen::Index best = 0;
      double v = z.col(m).maxCoeff(&best);
      c.pre_pool[offset + m] = v;
      c.argmax[static_cast<std::size_t>(offset + m)] = best;
    }
    offset += z.cols();
  }
  c.pooled = c.pre_pool.cwiseMax(0.0);
  Vector h = c.pooled;
  if (dropout_mask) {
    if (dropout_mask->size() != total) throw ValidationError("dropout mask has wrong length");
    c.mask = *dropout_mask;
    h = h.cwiseProduct(c.mask);
  }
  c.logits = p.dense_w * h + p.dense_b;
  c.probs = detail::softmax2(c.logits);
  return c;
}

inline ProbDist predict(const ModelParams& p, const SentenceInput& in) { return forward(p, in).probs; }

struct ConvGrad {
  Matrix weight;
  Vector bias;
};

struct ParamGrads {
  std::vector<ConvGrad> conv;
  Matrix dense_w;
  Vector dense_b;
  std::map<std::int32_t, Vector> embedding;  // sparse rows; empty when frozen

  static ParamGrads zeros_like(const ModelParams& p) {
    ParamGrads g;
    for (const auto& c : p.conv) g.conv.push_back({Matrix::Zero(c.weight.rows(), c.weight.cols()),
                                                   Vector::Zero(c.bias.size())});
    g.dense_w = Matrix::Zero(p.dense_w.rows(), p.dense_w.cols());
    g.dense_b = Vector::Zero(p.dense_b.size());
    return g;
  }

  bool all_zero() const {
    auto z = [](const auto& m) { return m.size() == 0 || (m.array() == 0.0).all(); };
    for (const auto& c : conv)
      if (!z(c.weight) || !z(c.bias)) return false;
    for (const auto& [id, v] : embedding)
      if (!z(v)) return false;
    return z(dense_w) && z(dense_b);
  }
};

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
inline void backward(const ModelParams& p, const ForwardCache& c, const Vector& d_logits,
                     ParamGrads& grads) {
  if (c.params != &p || c.generation != p.generation)
    throw ValidationError("forward cache is stale or belongs to a different model");
  if (d_logits.size() != static_cast<Eigen::Index>(kNumLabels))
    throw ValidationError("upstream gradient must have one entry per label");
  if (grads.conv.size() != p.conv.size()) throw ValidationError("gradient buffer shape mismatch");

  Vector h = c.mask.size() ? Vector(c.pooled.cwiseProduct(c.mask)) : c.pooled;
  grads.dense_w.noalias() += d_logits * h.transpose();
  grads.dense_b += d_logits;
  Vector dh = p.dense_w.transpose() * d_logits;
  if (c.mask.size()) dh = dh.cwiseProduct(c.mask);

  const auto d = static_cast<Eigen::Index>(p.shape.input_dim);
  const bool want_input = !c.ids.empty() && p.embeddings_trainable;
  Matrix d_input;
  if (want_input) d_input = Matrix::Zero(c.input.rows(), c.input.cols());

  Eigen::Index offset = 0;
  for (std::size_t li = 0; li < p.conv.size(); ++li) {
    const auto& layer = p.conv[li];
    auto& g = grads.conv[li];
    const auto w = static_cast<Eigen::Index>(layer.width);
    for (Eigen::Index m = 0; m < layer.weight.cols(); ++m) {
      const Eigen::Index k = offset + m;
      if (c.pre_pool[k] <= 0.0) continue;  // ReLU closed
      const double dz = dh[k];
      if (dz == 0.0) continue;
      const Eigen::Index t = c.argmax[static_cast<std::size_t>(k)];
      const Eigen::Map<const Vector> window(c.input.data() + t * d, w * d);
      g.weight.col(m) += dz * window;
      g.bias[m] += dz;
      if (want_input) {
        Eigen::Map<Vector> dwin(d_input.data() + t * d, w * d);
        dwin += dz * layer.weight.col(m);
      }
    }
    offset += layer.weight.cols();
  }

  if (want_input) {
    for (std::size_t t = 0; t < c.ids.size(); ++t) {
      const auto id = c.ids[t];
      if (id == kPadId) continue;
      auto row = d_input.row(static_cast<Eigen::Index>(t)).transpose();
      auto [it, inserted] = grads.embedding.try_emplace(id, row);
      if (!inserted) it->second += row;
    }
  }
}

// Optimiser ------------------------------------------------------------------

/// Adadelta (Zeiler 2012) over every trainable tensor.
class Adadelta {
 public:
  Adadelta(const ModelParams& p, double rho, double eps) : rho_(rho), eps_(eps) {
    for (const auto& c : p.conv) {
      conv_.push_back({Matrix::Zero(c.weight.rows(), c.weight.cols()), Matrix::Zero(c.weight.rows(), c.weight.cols()),
                       Vector::Zero(c.bias.size()), Vector::Zero(c.bias.size())});
    }
    dense_w_ = {Matrix::Zero(p.dense_w.rows(), p.dense_w.cols()), Matrix::Zero(p.dense_w.rows(), p.dense_w.cols())};
    dense_b_ = {Vector::Zero(p.dense_b.size()), Vector::Zero(p.dense_b.size())};
    if (p.embeddings_trainable)
      emb_ = {Matrix::Zero(p.embedding.rows(), p.embedding.cols()), Matrix::Zero(p.embedding.rows(), p.embedding.cols())};
  }

  void step(ModelParams& p, const ParamGrads& g) {
    for (std::size_t i = 0; i < p.conv.size(); ++i) {
      update(p.conv[i].weight, g.conv[i].weight, conv_[i].w_g2, conv_[i].w_dx2);
      update(p.conv[i].bias, g.conv[i].bias, conv_[i].b_g2, conv_[i].b_dx2);
    }
    update(p.dense_w, g.dense_w, dense_w_.first, dense_w_.second);
    update(p.dense_b, g.dense_b, dense_b_.first, dense_b_.second);
    if (p.embeddings_trainable) {
      // Rows without a gradient still decay their accumulators.
      emb_.first *= rho_;
      std::vector<std::pair<std::int32_t, Eigen::RowVectorXd>> steps;
      steps.reserve(g.embedding.size());
      for (const auto& [id, grow] : g.embedding) {
        auto g2 = emb_.first.row(id);
        g2 += (1.0 - rho_) * grow.transpose().array().square().matrix();
        Eigen::RowVectorXd dx = -(((emb_.second.row(id).array() + eps_).sqrt() /
                                   (g2.array() + eps_).sqrt()) *
                                  grow.transpose().array()).matrix();
        p.embedding.row(id) += dx;
        steps.emplace_back(id, std::move(dx));
      }
      emb_.second *= rho_;
      for (const auto& [id, dx] : steps) emb_.second.row(id) += (1.0 - rho_) * dx.array().square().matrix();
    }
    ++p.generation;
  }

 private:
  template <class T>
  void update(T& x, const T& g, T& g2, T& dx2) const {
    g2 = rho_ * g2 + (1.0 - rho_) * g.array().square().matrix();
    T dx = -(((dx2.array() + eps_).sqrt() / (g2.array() + eps_).sqrt()) * g.array()).matrix();
    dx2 = rho_ * dx2 + (1.0 - rho_) * dx.array().square().matrix();
    x += dx;
  }

  struct ConvState {
    Matrix w_g2, w_dx2;
    Vector b_g2, b_dx2;
  };
  double rho_, eps_;
  std::vector<ConvState> conv_;
  std::pair<Matrix, Matrix> dense_w_;
  std::pair<Vector, Vector> dense_b_;
  std::pair<Matrix, Matrix> emb_;
};

// Evaluation -----------------------------------------------------------------

enum class SubsetFilter { all, but, neg, but_or_neg };

inline bool matches(SubsetFilter f, const DiscourseTag& t) noexcept {
  switch (f) {
    case SubsetFilter::all: return true;
    case SubsetFilter::but: return t.a_but_b;
    case SubsetFilter::neg: return t.negation;
    case SubsetFilter::but_or_neg: return t.discourse();
  }
  return false;
}

/// `predictor(example) -> ProbDist`.
template <class Predictor>
double accuracy_with(const Predictor& predictor, std::span<const Example> examples,
                     SubsetFilter filter = SubsetFilter::all) {
  std::size_t n = 0, correct = 0;
  for (const auto& e : examples) {
    if (!matches(filter, e.discourse)) continue;
    ++n;
    correct += (predictor(e).argmax() == e.label);
  }
  if (n == 0) throw ValidationError("no instances match the accuracy filter");
  return static_cast<double>(correct) / static_cast<double>(n);
}

inline double accuracy(const ModelParams& p, std::span<const Example> examples,
                       SubsetFilter filter = SubsetFilter::all) {
  return accuracy_with([&](const Example& e) { return predict(p, e.input); }, examples, filter);
}

inline bool has_subset(std::span<const Example> examples, SubsetFilter f) {
  return std::any_of(examples.begin(), examples.end(),
                     [f](const Example& e) { return matches(f, e.discourse); });
}

// Training -------------------------------------------------------------------

/// Keeps the earliest epoch with the strictly best score; stops after
/// `patience` consecutive epochs without improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw ValidationError("patience must be >= 1");
  }

  /// Returns true when `score` is a new best.
  bool update(std::size_t epoch, double score) {
    if (!best_epoch_ || score > best_) {
      best_ = score;
      best_epoch_ = epoch;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }
  bool should_stop() const noexcept { return since_best_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_.value_or(0); }
  double best_score() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  std::optional<std::size_t> best_epoch_;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_acc = 0.0;
  std::optional<double> dev_acc_but;
  double pi = 1.0;                         // mean ground-truth weight over the epoch
  std::optional<double> mean_teacher_kl;   // distillation only
};

struct TrainResult {
  ModelParams params;  // snapshot at best_epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Soft targets for one minibatch. A provider fills `targets` (one per
/// example) and may report teacher statistics.
struct TargetBatch {
  std::vector<ProbDist> targets;
  double pi = 1.0;
  double teacher_kl_sum = 0.0;
  std::size_t teacher_count = 0;
};

/// (params before the update, batch, 0-based epoch, out)
using TargetProvider =
    std::function<void(const ModelParams&, std::span<const Example* const>, std::size_t, TargetBatch&)>;

/// Called after every epoch with the current (not snapshot) parameters.
using EpochObserver = std::function<void(const ModelParams&, const EpochRecord&)>;

namespace detail {

inline void onehot_targets(std::span<const Example* const> batch, TargetBatch& out) {
  out.targets.clear();
  for (const Example* e : batch) out.targets.push_back(ProbDist::onehot(e->label));
  out.pi = 1.0;
}

}  // namespace detail

/// Minibatch cross-entropy training with Adadelta, inverted dropout on the
/// pooled features and early stopping on dev accuracy. `rng` drives
/// shuffling and dropout; initialisation happens before the call.
template <class Rng>
TrainResult fit(ModelParams params, std::span<const Example> train, std::span<const Example> dev,
                const TrainConfig& cfg, Rng& rng, const TargetProvider& provider = {},
                const EpochObserver& observer = {}) {
  cfg.validate();
  if (train.empty()) throw ValidationError("training set is empty");
  if (dev.empty()) throw ValidationError("development set is empty");
  const bool dev_has_but = has_subset(dev, SubsetFilter::but);

  Adadelta opt(params, cfg.adadelta_rho, cfg.adadelta_eps);
  EarlyStopping stopper(cfg.patience);
  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::bernoulli_distribution keep(1.0 - cfg.dropout);
  const double scale = 1.0 / (1.0 - cfg.dropout);
  const auto total = static_cast<Eigen::Index>(params.shape.total_maps());

  std::vector<const Example*> batch;
  TargetBatch targets;
  Vector mask(total);
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, pi_sum = 0.0, kl_sum = 0.0;
    std::size_t kl_count = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);

      if (provider)
        provider(params, batch, epoch, targets);
      else
        detail::onehot_targets(batch, targets);
      if (targets.targets.size() != batch.size())
        throw ValidationError("target provider returned the wrong number of targets");

      ParamGrads grads = ParamGrads::zeros_like(params);
      const double inv_n = 1.0 / static_cast<double>(batch.size());
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const Vector* mask_ptr = nullptr;
        if (cfg.dropout > 0.0) {
          for (Eigen::Index k = 0; k < total; ++k) mask[k] = keep(rng) ? scale : 0.0;
          mask_ptr = &mask;
        }
        ForwardCache c = forward(params, batch[i]->input, mask_ptr);
        const ProbDist p = clamp(c.probs);
        const ProbDist& t = targets.targets[i];
        batch_loss += -(t.pos * std::log(p.pos) + t.neg * std::log(p.neg));
        Vector d(2);
        d << (c.probs.pos - t.pos) * inv_n, (c.probs.neg - t.neg) * inv_n;
        backward(params, c, d, grads);
      }
      batch_loss *= inv_n;
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged("loss is not finite at epoch " + std::to_string(epoch + 1) +
                               ", batch " + std::to_string(batches + 1));
      opt.step(params, grads);
      if (!params.all_finite())
        throw TrainingDiverged("non-finite parameters after epoch " + std::to_string(epoch + 1) +
                               ", batch " + std::to_string(batches + 1));
      loss_sum += batch_loss;
      pi_sum += targets.pi;
      kl_sum += targets.teacher_kl_sum;
      kl_count += targets.teacher_count;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.pi = pi_sum / static_cast<double>(batches);
    if (kl_count) rec.mean_teacher_kl = kl_sum / static_cast<double>(kl_count);
    rec.dev_acc = accuracy(params, dev);
    if (dev_has_but) rec.dev_acc_but = accuracy(params, dev, SubsetFilter::but);
    result.history.push_back(rec);
    if (observer) observer(params, rec);
    if (stopper.update(rec.epoch, rec.dev_acc)) result.params = params;
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  return result;
}

}  // namespace rulesent
