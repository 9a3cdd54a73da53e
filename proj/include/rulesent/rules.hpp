// The A-but-B logic rule: rule scores, projection of a predictive
// distribution into the rule-regularised set, and KL diagnostics.
//
// For one sentence the projection solves
//   min_q  KL(q || p) + C * max(0, 1 - E_{y~q}[r(y)])
// Because r(y) lies in [0,1] the hinge is never inactive, so the objective is
// KL(q || p) + C * sum_y q(y) (1 - r(y)) and its minimiser is the Gibbs form
//   q(y) ∝ p(y) * exp(-C (1 - r(y))).
#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulesent/cnn_model.hpp"
#include "rulesent/error.hpp"
#include "rulesent/types.hpp"

namespace rulesent {

/// How well labelling a sentence with each label satisfies the rule.
struct RuleScore {
  double pos = 1.0;
  double neg = 1.0;

  double operator[](Label y) const noexcept { return y == Label::positive ? pos : neg; }
  bool vacuous() const noexcept { return pos == 1.0 && neg == 1.0; }
  bool valid() const noexcept { return pos >= 0.0 && pos <= 1.0 && neg >= 0.0 && neg <= 1.0; }
  friend bool operator==(const RuleScore&, const RuleScore&) = default;
};

struct ProjectionConfig {
  double C = 6.0;

  void validate() const {
    if (!(C >= 0.0) || !std::isfinite(C)) throw ValidationError("projection C must be a finite value >= 0");
  }
};

/// Anything that maps a sentence to a label distribution.
template <class S>
concept SentenceScorer = requires(const S& s, const SentenceInput& x) {
  { s(x) } -> std::convertible_to<ProbDist>;
};

/// r(x, y) = p(y | B) for A-but-B sentences, 1 otherwise.
template <SentenceScorer S>
RuleScore rule_score(const S& scorer, const Example& e) {
  if (!e.discourse.a_but_b || !e.b_span) return {};
  const ProbDist pb = scorer(e.input.slice(*e.b_span));
  return {pb.pos, pb.neg};
}

inline RuleScore rule_score(const ModelParams& model, const Example& e) {
  return rule_score([&](const SentenceInput& x) { return predict(model, x); }, e);
}

inline ProbDist project(ProbDist p, RuleScore r, ProjectionConfig cfg = {}) {
  cfg.validate();
  if (!p.valid()) throw ValidationError("projection input is not a probability distribution");
  if (!r.valid()) throw ValidationError("rule score outside [0, 1]");
  p = clamp(p);
  // Equal penalties on both labels leave the distribution unchanged.
  if (cfg.C == 0.0 || r.pos == r.neg) return p;
  const double wp = p.pos * std::exp(-cfg.C * (1.0 - r.pos));
  const double wn = p.neg * std::exp(-cfg.C * (1.0 - r.neg));
  const double z = wp + wn;
  if (!(z > 0.0) || !std::isfinite(z)) throw ValidationError("projection masses underflowed");
  return {wp / z, wn / z};
}

/// KL(q || p) in nats with 0 ln 0 = 0. Returns +inf when p(y) = 0 < q(y).
inline double kl_divergence(const ProbDist& q, const ProbDist& p) {
  double kl = 0.0;
  for (Label y : {Label::positive, Label::negative}) {
    if (q[y] == 0.0) continue;
    if (p[y] == 0.0) return std::numeric_limits<double>::infinity();
    kl += q[y] * std::log(q[y] / p[y]);
  }
  return kl < 0.0 ? 0.0 : kl;
}

struct ProjectionRow {
  std::string sentence_id;
  bool a_but_b = false;
  ProbDist p;
  RuleScore r;
  ProbDist q;
  double kl = 0.0;
};

struct ProjectionReport {
  std::vector<ProjectionRow> rows;
  double mean_kl = 0.0;  // over A-but-B rows only
  std::size_t n_a_but_b = 0;
  double C = 0.0;
};

template <SentenceScorer S>
ProjectionReport project_dataset(const S& scorer, std::span<const Example> examples,
                                 ProjectionConfig cfg = {}) {
  cfg.validate();
  ProjectionReport rep;
  rep.C = cfg.C;
  double sum = 0.0;
  for (const auto& e : examples) {
    ProjectionRow row;
    row.sentence_id = e.id;
    row.a_but_b = e.discourse.a_but_b;
    row.p = clamp(scorer(e.input));
    row.r = rule_score(scorer, e);
    row.q = project(row.p, row.r, cfg);
    row.kl = kl_divergence(row.q, row.p);
    if (row.a_but_b) {
      sum += row.kl;
      ++rep.n_a_but_b;
    }
    rep.rows.push_back(std::move(row));
  }
  if (rep.n_a_but_b == 0) throw ValidationError("no A-but-B instances to project");
  rep.mean_kl = sum / static_cast<double>(rep.n_a_but_b);
  return rep;
}

inline ProjectionReport project_dataset(const ModelParams& model, std::span<const Example> examples,
                                        ProjectionConfig cfg = {}) {
  return project_dataset([&](const SentenceInput& x) { return predict(model, x); }, examples, cfg);
}

inline void write_projection_csv(std::ostream& os, const ProjectionReport& rep) {
  os << "sentence_id,p_pos,q_pos,r_pos,kl\n";
  os.precision(17);
  for (const auto& r : rep.rows)
    os << r.sentence_id << ',' << r.p.pos << ',' << r.q.pos << ',' << r.r.pos << ',' << r.kl << '\n';
}

inline nlohmann::json projection_summary(const ProjectionReport& rep) {
  return {{"mean_kl", rep.mean_kl}, {"n_a_but_b", rep.n_a_but_b}, {"n", rep.rows.size()}, {"C", rep.C}};
}

}  // namespace rulesent
