// Iterative rule-knowledge distillation: the student is trained against a
// pi-weighted mixture of the ground truth and a teacher obtained by projecting
// the student's own current predictions with the A-but-B rule.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "rulesent/cnn_model.hpp"
#include "rulesent/embeddings.hpp"
#include "rulesent/error.hpp"
#include "rulesent/rules.hpp"
#include "rulesent/types.hpp"

namespace rulesent {

enum class DistillMode { no_distill, distill };

inline std::string_view to_string(DistillMode m) noexcept {
  return m == DistillMode::distill ? "distill" : "no-distill";
}

struct DistillConfig {
  DistillMode mode = DistillMode::no_distill;
  bool final_project = false;
  ProjectionConfig projection;
  TrainConfig train;
  double pi_base = 0.95;

  std::string variant_name() const {
    return std::string(to_string(mode)) + (final_project ? ",project" : ",no-project");
  }
};

/// Ground-truth weight for 0-based epoch t: 1 without distillation, base^t with.
inline double pi_schedule(std::size_t t, DistillMode mode, double base = 0.95) {
  if (mode == DistillMode::no_distill) return 1.0;
  return std::pow(base, static_cast<double>(t));
}

/// pi * H(p, onehot(y)) + (1 - pi) * H(p, q) with H(a, b) = -sum_y b(y) ln a(y).
inline double distill_loss(ProbDist p_pred, Label y_true, const ProbDist& q_teacher, double pi) {
  if (!(pi >= 0.0 && pi <= 1.0)) throw ValidationError("pi must lie in [0, 1]");
  p_pred = clamp(p_pred);
  const double ce_true = -std::log(p_pred[y_true]);
  const double ce_teacher = -(q_teacher.pos * std::log(p_pred.pos) + q_teacher.neg * std::log(p_pred.neg));
  return pi * ce_true + (1.0 - pi) * ce_teacher;
}

/// One teacher computation, exposed for diagnostics and tests.
struct TeacherStep {
  std::size_t epoch = 0;  // 0-based
  const Example* example = nullptr;
  ProbDist p;  // student prediction without dropout
  RuleScore r;
  ProbDist q;  // projected teacher
  double pi = 1.0;
};

using TeacherObserver = std::function<void(const TeacherStep&)>;

/// Builds the provider that recomputes the teacher from the current
/// parameters for every minibatch.
inline TargetProvider make_distill_provider(const DistillConfig& cfg, TeacherObserver observer = {}) {
  return [cfg, observer = std::move(observer)](const ModelParams& params,
                                               std::span<const Example* const> batch, std::size_t epoch,
                                               TargetBatch& out) {
    out.targets.clear();
    out.teacher_kl_sum = 0.0;
    out.teacher_count = 0;
    const double pi = pi_schedule(epoch, cfg.mode, cfg.pi_base);
    out.pi = pi;
    if (cfg.mode == DistillMode::no_distill) {
      for (const Example* e : batch) out.targets.push_back(ProbDist::onehot(e->label));
      return;
    }
    for (const Example* e : batch) {
      TeacherStep step;
      step.epoch = epoch;
      step.example = e;
      step.pi = pi;
      step.p = clamp(predict(params, e->input));
      step.r = rule_score(params, *e);
      step.q = project(step.p, step.r, cfg.projection);
      if (e->discourse.a_but_b) {
        out.teacher_kl_sum += kl_divergence(step.q, step.p);
        ++out.teacher_count;
      }
      if (observer) observer(step);
      const ProbDist t = ProbDist::onehot(e->label);
      out.targets.push_back({pi * t.pos + (1.0 - pi) * step.q.pos, pi * t.neg + (1.0 - pi) * step.q.neg});
    }
  };
}

/// Trains from the given initial parameters. With mode = no_distill this is
/// exactly the plain trainer (same targets, same random stream).
template <class Rng>
TrainResult train_distilled(ModelParams init, std::span<const Example> train, std::span<const Example> dev,
                            const DistillConfig& cfg, Rng& rng, TeacherObserver teacher_observer = {},
                            const EpochObserver& epoch_observer = {}) {
  cfg.projection.validate();
  return fit(std::move(init), train, dev, cfg.train, rng, make_distill_provider(cfg, std::move(teacher_observer)),
             epoch_observer);
}

/// Where a model's input vectors come from.
struct StaticSource {
  Vocabulary vocab;
  EmbeddingTable table;
};
struct ContextualSource {
  std::size_t dim = 0;
};
using InputSource = std::variant<StaticSource, ContextualSource>;

/// Seeds the generator from cfg.train.seed, builds a fresh model (OOV draws
/// and filter initialisation come from the same stream) and trains it.
inline TrainResult train_variant(const InputSource& source, std::span<const Example> train,
                                 std::span<const Example> dev, const DistillConfig& cfg,
                                 const EpochObserver& epoch_observer = {}, TeacherObserver teacher_observer = {}) {
  std::mt19937_64 rng(cfg.train.seed);
  ModelParams init = std::visit(
      [&](const auto& s) -> ModelParams {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, StaticSource>) {
          EmbeddingTable table = s.table;  // private OOV cache per run
          return build_static_model(cfg.train, s.vocab, table, rng);
        } else {
          return build_frozen_model(cfg.train, s.dim, rng);
        }
      },
      source);
  return train_distilled(std::move(init), train, dev, cfg, rng, std::move(teacher_observer), epoch_observer);
}

/// A trained model together with the decision whether to apply the final
/// projection at prediction time.
class InferenceModel {
 public:
  InferenceModel(std::shared_ptr<const ModelParams> params, bool final_project, ProjectionConfig projection = {})
      : params_(std::move(params)), final_project_(final_project), projection_(projection) {
    projection_.validate();
  }

  ProbDist predict(const Example& e) const {
    ProbDist p = rulesent::predict(*params_, e.input);
    if (!final_project_) return p;
    return project(p, rule_score(*params_, e), projection_);
  }
  ProbDist operator()(const Example& e) const { return predict(e); }

  const ModelParams& params() const noexcept { return *params_; }
  bool final_project() const noexcept { return final_project_; }

 private:
  std::shared_ptr<const ModelParams> params_;
  bool final_project_;
  ProjectionConfig projection_;
};

inline InferenceModel finalize(ModelParams model, const DistillConfig& cfg) {
  return InferenceModel(std::make_shared<const ModelParams>(std::move(model)), cfg.final_project, cfg.projection);
}

}  // namespace rulesent
