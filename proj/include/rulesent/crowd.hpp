// Crowd judgment aggregation: averaged scores, ambiguity thresholds, Fleiss'
// kappa and accuracy restricted to non-neutral sentences.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rulesent/error.hpp"
#include "rulesent/types.hpp"

namespace rulesent {

inline constexpr std::size_t kExpectedRaters = 9;

struct JudgmentRecord {
  std::string sentence_id;
  Label sst2_label = Label::positive;
  std::vector<double> scores;  // each in {0, 0.5, 1}
};

enum class CrowdLabel { negative, neutral, positive };

inline std::string_view to_string(CrowdLabel l) noexcept {
  switch (l) {
    case CrowdLabel::negative: return "negative";
    case CrowdLabel::neutral: return "neutral";
    case CrowdLabel::positive: return "positive";
  }
  return "?";
}

namespace detail {

/// 0 -> 0, 0.5 -> 1, 1 -> 2; anything else is rejected.
inline std::size_t score_category(double s) {
  if (s == 0.0) return 0;
  if (s == 0.5) return 1;
  if (s == 1.0) return 2;
  throw ValidationError("crowd score " + std::to_string(s) + " is not one of {0, 0.5, 1}");
}

}  // namespace detail

inline void validate(const JudgmentRecord& r) {
  if (r.scores.empty()) throw ValidationError("sentence '" + r.sentence_id + "' has no scores");
  for (double s : r.scores) (void)detail::score_category(s);
}

inline double aggregate(const JudgmentRecord& r) {
  validate(r);
  double sum = 0.0;
  for (double s : r.scores) sum += s;
  return sum / static_cast<double>(r.scores.size());
}

/// (x, 1] positive, [0, 1-x) negative, [1-x, x] neutral; x in [0.5, 1).
inline CrowdLabel classify_with_threshold(double mean, double x) {
  if (!(x >= 0.5 && x < 1.0)) throw ValidationError("threshold must lie in [0.5, 1)");
  if (!(mean >= 0.0 && mean <= 1.0)) throw ValidationError("mean score must lie in [0, 1]");
  if (mean > x) return CrowdLabel::positive;
  if (mean < 1.0 - x) return CrowdLabel::negative;
  return CrowdLabel::neutral;
}

struct ThresholdedLabel {
  std::string sentence_id;
  double mean = 0.0;
  CrowdLabel label = CrowdLabel::neutral;
  bool flipped = false;
};

struct ThresholdReport {
  double threshold = 0.0;
  std::size_t n_neutral = 0;
  std::size_t n_flipped = 0;
  std::vector<ThresholdedLabel> labels;
};

inline ThresholdReport threshold_report(std::span<const JudgmentRecord> records, double x) {
  ThresholdReport rep;
  rep.threshold = x;
  for (const auto& r : records) {
    ThresholdedLabel t;
    t.sentence_id = r.sentence_id;
    t.mean = aggregate(r);
    t.label = classify_with_threshold(t.mean, x);
    if (t.label == CrowdLabel::neutral) {
      ++rep.n_neutral;
    } else {
      const Label crowd = t.label == CrowdLabel::positive ? Label::positive : Label::negative;
      t.flipped = crowd != r.sst2_label;
      rep.n_flipped += t.flipped;
    }
    rep.labels.push_back(std::move(t));
  }
  return rep;
}

/// Fleiss' kappa over the three score categories. Every record must carry the
/// same number of ratings n >= 2. Returns nullopt when chance agreement is 1
/// (every rating in one category), where kappa is undefined.
inline std::optional<double> fleiss_kappa(std::span<const JudgmentRecord> records) {
  if (records.empty()) throw ValidationError("Fleiss' kappa needs at least one item");
  const std::size_t n = records.front().scores.size();
  if (n < 2) throw ValidationError("Fleiss' kappa needs at least two ratings per item");
  std::array<double, 3> totals{};
  double p_bar = 0.0;
  for (const auto& r : records) {
    if (r.scores.size() != n)
      throw ValidationError("sentence '" + r.sentence_id + "' has " + std::to_string(r.scores.size()) +
                            " ratings, expected " + std::to_string(n));
    std::array<double, 3> counts{};
    for (double s : r.scores) counts[detail::score_category(s)] += 1.0;
    double sq = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      sq += counts[j] * counts[j];
      totals[j] += counts[j];
    }
    const double nd = static_cast<double>(n);
    p_bar += (sq - nd) / (nd * (nd - 1.0));
  }
  const double items = static_cast<double>(records.size());
  p_bar /= items;
  double p_e = 0.0;
  for (double t : totals) {
    const double pj = t / (items * static_cast<double>(n));
    p_e += pj * pj;
  }
  if (p_e >= 1.0) return std::nullopt;
  return (p_bar - p_e) / (1.0 - p_e);
}

/// Records whose thresholded label is not neutral.
inline std::vector<JudgmentRecord> non_neutral(std::span<const JudgmentRecord> records, double x) {
  std::vector<JudgmentRecord> out;
  for (const auto& r : records)
    if (classify_with_threshold(aggregate(r), x) != CrowdLabel::neutral) out.push_back(r);
  return out;
}

/// Accuracy on non-neutral sentences, scored against the thresholded crowd
/// label (so flipped sentences count as correct when the model agrees with
/// the crowd).
inline double filtered_accuracy(const std::map<std::string, Label>& predictions,
                                std::span<const JudgmentRecord> records, double x) {
  std::size_t n = 0, correct = 0;
  for (const auto& r : records) {
    const CrowdLabel l = classify_with_threshold(aggregate(r), x);
    if (l == CrowdLabel::neutral) continue;
    auto it = predictions.find(r.sentence_id);
    if (it == predictions.end()) throw ValidationError("no prediction for sentence '" + r.sentence_id + "'");
    ++n;
    correct += (it->second == (l == CrowdLabel::positive ? Label::positive : Label::negative));
  }
  if (n == 0) throw ValidationError("every sentence is neutral at threshold " + std::to_string(x));
  return static_cast<double>(correct) / static_cast<double>(n);
}

/// CSV: sentence_id, sst2_label, score_1..score_k (header optional).
inline std::vector<JudgmentRecord> read_judgments(std::istream& in, std::size_t expected_raters = kExpectedRaters) {
  std::vector<JudgmentRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (n == 1 && !cells.empty() && cells[0] == "sentence_id") continue;
    if (cells.size() < 3) throw ParseError(n, "expected sentence_id, sst2_label and scores");
    JudgmentRecord r;
    r.sentence_id = cells[0];
    try {
      r.sst2_label = parse_label(cells[1]);
      for (std::size_t i = 2; i < cells.size(); ++i) {
        std::size_t used = 0;
        double v = std::stod(cells[i], &used);
        if (used != cells[i].size()) throw ValidationError("bad score '" + cells[i] + "'");
        r.scores.push_back(v);
      }
      validate(r);
    } catch (const ValidationError& e) {
      throw ParseError(n, e.what());
    } catch (const std::exception&) {
      throw ParseError(n, "non-numeric score");
    }
    if (expected_raters && r.scores.size() != expected_raters)
      throw ParseError(n, "sentence '" + r.sentence_id + "' has " + std::to_string(r.scores.size()) +
                              " scores, expected " + std::to_string(expected_raters));
    out.push_back(std::move(r));
  }
  return out;
}

struct CrowdTableColumn {
  double threshold = 0.0;
  std::size_t n_neutral = 0;
  std::size_t n_flipped = 0;
  std::optional<double> kappa;
  std::map<std::string, double> accuracy;  // model name -> accuracy on non-neutral sentences
};

/// kappa is computed on the non-neutral subset at each threshold.
inline std::vector<CrowdTableColumn> crowd_table(
    std::span<const JudgmentRecord> records, const std::vector<double>& thresholds,
    const std::map<std::string, std::vector<std::map<std::string, Label>>>& model_predictions = {}) {
  std::vector<CrowdTableColumn> cols;
  for (double x : thresholds) {
    CrowdTableColumn c;
    c.threshold = x;
    auto rep = threshold_report(records, x);
    c.n_neutral = rep.n_neutral;
    c.n_flipped = rep.n_flipped;
    auto kept = non_neutral(records, x);
    if (!kept.empty()) c.kappa = fleiss_kappa(kept);
    for (const auto& [name, per_seed] : model_predictions) {
      if (per_seed.empty()) throw ValidationError("model '" + name + "' has no predictions");
      double sum = 0.0;
      for (const auto& preds : per_seed) sum += filtered_accuracy(preds, records, x);
      c.accuracy[name] = sum / static_cast<double>(per_seed.size());
    }
    cols.push_back(std::move(c));
  }
  return cols;
}

/// Rows: Neutral Sentiment, Flipped Sentiment, Fleiss' Kappa, then one per model.
inline void write_crowd_table_csv(std::ostream& os, const std::vector<CrowdTableColumn>& cols) {
  char buf[64];
  os << "Threshold";
  for (const auto& c : cols) {
    std::snprintf(buf, sizeof buf, "%.2f", c.threshold);
    os << ',' << buf;
  }
  os << "\nNeutral Sentiment";
  for (const auto& c : cols) os << ',' << c.n_neutral;
  os << "\nFlipped Sentiment";
  for (const auto& c : cols) os << ',' << c.n_flipped;
  os << "\nFleiss' Kappa";
  for (const auto& c : cols) {
    if (c.kappa) {
      std::snprintf(buf, sizeof buf, "%.4f", *c.kappa);
      os << ',' << buf;
    } else {
      os << ",undefined";
    }
  }
  std::vector<std::string> models;
  if (!cols.empty())
    for (const auto& [name, acc] : cols.front().accuracy) models.push_back(name);
  for (const auto& name : models) {
    os << '\n' << '"' << name << '"';
    for (const auto& c : cols) {
      std::snprintf(buf, sizeof buf, "%.2f", 100.0 * c.accuracy.at(name));
      os << ',' << buf;
    }
  }
  os << '\n';
}

/// Long format for plotting: model, threshold, accuracy.
inline void write_threshold_accuracy_csv(std::ostream& os, const std::vector<CrowdTableColumn>& cols) {
  os << "model,threshold,accuracy\n";
  const auto prec = os.precision(17);
  for (const auto& c : cols)
    for (const auto& [name, acc] : c.accuracy) os << '"' << name << "\"," << c.threshold << ',' << acc << '\n';
  os.precision(prec);
}

}  // namespace rulesent
