// Seed-averaged evaluation: summaries with confidence intervals, the
// two-sample Kolmogorov-Smirnov test, significance grids and the multi-seed
// experiment runner.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulesent/cnn_model.hpp"
#include "rulesent/distill.hpp"
#include "rulesent/error.hpp"

namespace rulesent {

// Summaries -------------------------------------------------------------------

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> ci95;  // half-width; needs n >= 2
  double min = 0.0;
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
  double max = 0.0;
};

/// Linear interpolation between closest ranks on sorted data.
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Mean, normal-approximation CI (z * s / sqrt(n), s the sample standard
/// deviation) and quartiles.
inline Summary summarize(std::span<const double> values, double z = 1.96) {
  if (values.empty()) throw ValidationError("cannot summarise an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  Summary s;
  s.n = v.size();
  // Summing the sorted copy keeps the result independent of input order.
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.ci95 = z * sd / std::sqrt(static_cast<double>(s.n));
  }
  s.min = v.front();
  s.max = v.back();
  s.p25 = percentile_sorted(v, 0.25);
  s.p50 = percentile_sorted(v, 0.50);
  s.p75 = percentile_sorted(v, 0.75);
  return s;
}

inline nlohmann::json to_json(const Summary& s) {
  nlohmann::json j{{"n", s.n}, {"mean", s.mean}, {"min", s.min}, {"p25", s.p25},
                   {"p50", s.p50}, {"p75", s.p75}, {"max", s.max}};
  j["ci95"] = s.ci95 ? nlohmann::json(*s.ci95) : nlohmann::json(nullptr);
  return j;
}

// Kolmogorov-Smirnov ----------------------------------------------------------

/// D as an exact rational: D = numerator / (n_a * n_b).
struct KsStatistic {
  std::uint64_t numerator = 0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  double value() const noexcept {
    return static_cast<double>(numerator) / (static_cast<double>(n_a) * static_cast<double>(n_b));
  }
};

/// sup_x |F_a(x) - F_b(x)| over the empirical CDFs, evaluated after each
/// distinct pooled value.
inline KsStatistic ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("KS test needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const auto na = static_cast<std::int64_t>(x.size()), nb = static_cast<std::int64_t>(y.size());
  std::size_t i = 0, j = 0;
  std::int64_t best = 0;
  while (i < x.size() || j < y.size()) {
    double v;
    if (j == y.size() || (i < x.size() && x[i] <= y[j]))
      v = x[i];
    else
      v = y[j];
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    const std::int64_t diff = static_cast<std::int64_t>(i) * nb - static_cast<std::int64_t>(j) * na;
    best = std::max(best, diff < 0 ? -diff : diff);
  }
  return {static_cast<std::uint64_t>(best), x.size(), y.size()};
}

/// Asymptotic two-sided p-value with the small-sample correction
/// lambda = (sqrt(n_e) + 0.12 + 0.11 / sqrt(n_e)) * D, n_e = n_a n_b / (n_a + n_b):
///   p = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
/// For lambda < 1 the same quantity is evaluated through its Jacobi-theta dual
/// 1 - sqrt(2 pi)/lambda sum_{k>=1} exp(-(2k-1)^2 pi^2 / (8 lambda^2)), where
/// the alternating series converges too slowly.
inline double ks_asymptotic_p(double d, std::size_t n_a, std::size_t n_b) {
  if (n_a == 0 || n_b == 0) throw ValidationError("KS test needs two non-empty samples");
  const double ne = static_cast<double>(n_a) * static_cast<double>(n_b) / static_cast<double>(n_a + n_b);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p;
  if (lambda <= 0.0) {
    p = 1.0;
  } else if (lambda < 1.0) {
    constexpr double pi = 3.14159265358979323846;
    double cdf = 0.0;
    for (int k = 1; k < 1000; ++k) {
      const double m = 2.0 * k - 1.0;
      const double t = std::exp(-m * m * pi * pi / (8.0 * lambda * lambda));
      cdf += t;
      if (t < 1e-16) break;
    }
    p = 1.0 - std::sqrt(2.0 * pi) / lambda * cdf;
  } else {
    p = 0.0;
    for (int k = 1; k < 1000; ++k) {
      const double t = std::exp(-2.0 * k * k * lambda * lambda);
      p += (k % 2 == 1 ? 2.0 : -2.0) * t;
      if (t < 1e-12) break;
    }
  }
  return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

/// Exact permutation-null p = P(D* >= D_obs) when the pooled sample is split
/// uniformly at random into groups of n_a and n_b. Ties are respected by only
/// checking the CDF gap at the end of each block of equal pooled values.
inline double ks_exact_p(std::span<const double> a, std::span<const double> b) {
  const KsStatistic obs = ks_statistic(a, b);
  const std::size_t na = obs.n_a, nb = obs.n_b, n = na + nb;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());

  // ways[i]: number of ways to place i members of sample a among the values
  // processed so far without reaching the observed gap at any block end.
  std::vector<double> ways(na + 1, 0.0), next(na + 1);
  ways[0] = 1.0;
  auto choose = [](std::size_t m, std::size_t k) {
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(m - k + i) / static_cast<double>(i);
    return std::round(c);
  };
  std::size_t j = 0;
  while (j < n) {
    std::size_t m = 1;
    while (j + m < n && pooled[j + m] == pooled[j]) ++m;
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i <= na; ++i) {
      if (ways[i] == 0.0) continue;
      for (std::size_t k = 0; k <= m && i + k <= na; ++k) {
        const std::size_t in_b = j + m - (i + k);
        if (in_b > nb) continue;
        next[i + k] += ways[i] * choose(m, k);
      }
    }
    j += m;
    for (std::size_t i = 0; i <= na; ++i) {
      if (j - i > nb) {
        next[i] = 0.0;
        continue;
      }
      const std::int64_t diff = static_cast<std::int64_t>(i * nb) - static_cast<std::int64_t>((j - i) * na);
      if (static_cast<std::uint64_t>(diff < 0 ? -diff : diff) >= obs.numerator) next[i] = 0.0;
    }
    ways.swap(next);
  }
  const double total = choose(n, na);
  const double below = ways[na];
  return std::clamp((total - below) / total, 0.0, 1.0);
}

enum class KsMethod { automatic, asymptotic, exact };

/// Above this many equally likely splits the exact null is not used by
/// KsMethod::automatic.
inline constexpr double kKsExactMaxSplits = 1e6;

struct KsResult {
  double d = 0.0;
  double p_value = 1.0;
  bool significant = false;
  KsMethod method = KsMethod::asymptotic;  // the method actually used
};

inline double binomial(std::size_t n, std::size_t k) {
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return c;
}

/// Two-sided two-sample KS test; significant iff p < alpha.
inline KsResult ks_test(std::span<const double> a, std::span<const double> b, double alpha = 0.001,
                        KsMethod method = KsMethod::automatic) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  const KsStatistic s = ks_statistic(a, b);
  if (method == KsMethod::automatic)
    method = binomial(s.n_a + s.n_b, std::min(s.n_a, s.n_b)) <= kKsExactMaxSplits ? KsMethod::exact
                                                                                  : KsMethod::asymptotic;
  KsResult r;
  r.d = s.value();
  r.method = method;
  r.p_value = method == KsMethod::exact ? ks_exact_p(a, b) : ks_asymptotic_p(r.d, s.n_a, s.n_b);
  r.significant = r.p_value < alpha;
  return r;
}

inline std::string_view to_string(KsMethod m) noexcept {
  switch (m) {
    case KsMethod::automatic: return "automatic";
    case KsMethod::asymptotic: return "asymptotic";
    case KsMethod::exact: return "exact";
  }
  return "?";
}

// Significance grids ----------------------------------------------------------

using VariantPair = std::pair<std::string, std::string>;

/// The nine comparisons between the standard variants (static vectors with and
/// without distillation, contextual vectors; each with and without projection).
inline std::vector<VariantPair> standard_comparisons() {
  return {{"distill,no-project", "distill,project"},
          {"no-distill,no-project", "no-distill,project"},
          {"contextual,no-project", "contextual,project"},
          {"no-distill,no-project", "distill,no-project"},
          {"no-distill,project", "distill,project"},
          {"no-distill,no-project", "contextual,no-project"},
          {"distill,no-project", "contextual,no-project"},
          {"no-distill,project", "contextual,project"},
          {"distill,project", "contextual,project"}};
}

struct SignificanceRow {
  std::string first;
  std::string second;
  double mean_first = 0.0;
  double mean_second = 0.0;
  KsResult ks;
};

inline std::vector<SignificanceRow> significance_grid(const std::map<std::string, std::vector<double>>& samples,
                                                      const std::vector<VariantPair>& pairs, double alpha = 0.001) {
  std::vector<SignificanceRow> out;
  auto get = [&](const std::string& name) -> const std::vector<double>& {
    auto it = samples.find(name);
    if (it == samples.end()) throw ValidationError("missing variant '" + name + "'");
    if (it->second.size() < 2) throw ValidationError("variant '" + name + "' needs at least 2 seeds");
    return it->second;
  };
  for (const auto& [x, y] : pairs) {
    const auto& a = get(x);
    const auto& b = get(y);
    SignificanceRow row{x, y, summarize(a).mean, summarize(b).mean, ks_test(a, b, alpha)};
    out.push_back(std::move(row));
  }
  return out;
}

inline nlohmann::json to_json(const std::vector<SignificanceRow>& rows, double alpha) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"model_1", r.first}, {"model_2", r.second}, {"mean_1", r.mean_first}, {"mean_2", r.mean_second},
                   {"D", r.ks.d}, {"p_value", r.ks.p_value}, {"significant", r.ks.significant},
                   {"method", std::string(to_string(r.ks.method))}});
  return {{"alpha", alpha}, {"comparisons", std::move(arr)}};
}

inline void write_significance_table(std::ostream& os, const std::vector<SignificanceRow>& rows) {
  std::size_t w1 = 7, w2 = 7;
  for (const auto& r : rows) {
    w1 = std::max(w1, r.first.size());
    w2 = std::max(w2, r.second.size());
  }
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  os << pad("Model 1", w1) << "  vs  " << pad("Model 2", w2) << "  " << std::setw(8) << "D"
     << "  " << std::setw(12) << "p" << "  Significant\n";
  for (const auto& r : rows) {
    std::ostringstream p;
    p << std::setprecision(4) << r.ks.p_value;
    os << pad(r.first, w1) << "  vs  " << pad(r.second, w2) << "  " << std::setw(8) << std::fixed
       << std::setprecision(4) << r.ks.d << "  " << std::setw(12) << p.str() << "  "
       << (r.ks.significant ? "Yes" : "No") << '\n';
    os.unsetf(std::ios::fixed);
  }
}

// Seed result matrices --------------------------------------------------------

struct SubsetAccuracy {
  double all = 0.0;
  std::optional<double> but;
  std::optional<double> neg;
  std::optional<double> but_or_neg;

  std::optional<double> get(SubsetFilter f) const {
    switch (f) {
      case SubsetFilter::all: return all;
      case SubsetFilter::but: return but;
      case SubsetFilter::neg: return neg;
      case SubsetFilter::but_or_neg: return but_or_neg;
    }
    return std::nullopt;
  }
};

template <class Predictor>
SubsetAccuracy evaluate_subsets(const Predictor& predictor, std::span<const Example> examples) {
  SubsetAccuracy s;
  s.all = accuracy_with(predictor, examples);
  if (has_subset(examples, SubsetFilter::but)) s.but = accuracy_with(predictor, examples, SubsetFilter::but);
  if (has_subset(examples, SubsetFilter::neg)) s.neg = accuracy_with(predictor, examples, SubsetFilter::neg);
  if (has_subset(examples, SubsetFilter::but_or_neg))
    s.but_or_neg = accuracy_with(predictor, examples, SubsetFilter::but_or_neg);
  return s;
}

struct EpochAccuracy {
  std::size_t epoch = 0;
  double dev_acc = 0.0;
  SubsetAccuracy test;
};

struct SeedRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<EpochAccuracy> epochs;
  std::size_t early_stop_epoch = 0;
  SubsetAccuracy test;  // at the early-stopped snapshot
  std::vector<std::pair<std::string, double>> test_p_pos;  // early-stopped predictions

  friend bool operator==(const SeedRun& a, const SeedRun& b) {
    auto eq_sub = [](const SubsetAccuracy& x, const SubsetAccuracy& y) {
      return x.all == y.all && x.but == y.but && x.neg == y.neg && x.but_or_neg == y.but_or_neg;
    };
    if (a.seed != b.seed || a.ok != b.ok || a.error != b.error || a.early_stop_epoch != b.early_stop_epoch ||
        !eq_sub(a.test, b.test) || a.test_p_pos != b.test_p_pos || a.epochs.size() != b.epochs.size())
      return false;
    for (std::size_t i = 0; i < a.epochs.size(); ++i)
      if (a.epochs[i].epoch != b.epochs[i].epoch || a.epochs[i].dev_acc != b.epochs[i].dev_acc ||
          !eq_sub(a.epochs[i].test, b.epochs[i].test))
        return false;
    return true;
  }
};

struct SeedResultMatrix {
  std::string variant;
  std::vector<SeedRun> runs;  // ordered by seed index

  bool partial() const {
    return std::any_of(runs.begin(), runs.end(), [](const SeedRun& r) { return !r.ok; });
  }
  std::size_t completed() const {
    return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const SeedRun& r) { return r.ok; }));
  }
  /// Early-stopped test accuracy of successful seeds for one subset.
  std::vector<double> early_stopped(SubsetFilter f = SubsetFilter::all) const {
    std::vector<double> v;
    for (const auto& r : runs)
      if (r.ok)
        if (auto x = r.test.get(f)) v.push_back(*x);
    return v;
  }
};

inline nlohmann::json to_json(const SubsetAccuracy& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"all", s.all}, {"but", opt(s.but)}, {"neg", opt(s.neg)}, {"but_or_neg", opt(s.but_or_neg)}};
}

inline SubsetAccuracy subset_accuracy_from_json(const nlohmann::json& j) {
  auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::optional<double>{} : v.get<double>(); };
  return {j.at("all").get<double>(), opt(j.at("but")), opt(j.at("neg")), opt(j.at("but_or_neg"))};
}

inline nlohmann::json to_json(const SeedRun& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"dev_acc", e.dev_acc}, {"test", to_json(e.test)}});
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& [id, p] : r.test_p_pos) preds.push_back({id, p});
  return {{"seed", r.seed}, {"ok", r.ok}, {"error", r.error}, {"epochs", std::move(epochs)},
          {"early_stop_epoch", r.early_stop_epoch}, {"test", to_json(r.test)}, {"test_p_pos", std::move(preds)}};
}

inline SeedRun seed_run_from_json(const nlohmann::json& j) {
  SeedRun r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  for (const auto& e : j.at("epochs"))
    r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("dev_acc").get<double>(),
                       subset_accuracy_from_json(e.at("test"))});
  r.early_stop_epoch = j.at("early_stop_epoch").get<std::size_t>();
  r.test = subset_accuracy_from_json(j.at("test"));
  for (const auto& p : j.at("test_p_pos")) r.test_p_pos.emplace_back(p.at(0).get<std::string>(), p.at(1).get<double>());
  return r;
}

/// Columns: seed, epoch, dev_acc, test_acc, but_acc, neg_acc, early_stop_flag,
/// but_or_neg_acc. Empty cells mark subsets absent from the test split.
inline void write_matrix_csv(std::ostream& os, const SeedResultMatrix& m) {
  os << "seed,epoch,dev_acc,test_acc,but_acc,neg_acc,early_stop_flag,but_or_neg_acc\n";
  const auto prec = os.precision(17);
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  for (const auto& r : m.runs) {
    if (!r.ok) continue;
    for (const auto& e : r.epochs) {
      os << r.seed << ',' << e.epoch << ',' << e.dev_acc << ',' << e.test.all << ',';
      opt(e.test.but);
      os << ',';
      opt(e.test.neg);
      os << ',' << (e.epoch == r.early_stop_epoch ? 1 : 0) << ',';
      opt(e.test.but_or_neg);
      os << '\n';
    }
  }
  os.precision(prec);
}

/// Reads the early-stopped rows back: one SeedRun per seed with `test` filled.
inline SeedResultMatrix read_matrix_csv(std::istream& in, std::string variant = {}) {
  SeedResultMatrix m;
  m.variant = std::move(variant);
  std::string line;
  std::size_t n = 0;
  std::map<std::uint64_t, SeedRun> by_seed;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (header.empty()) {
      header = cells;
      if (header.size() < 7 || header[0] != "seed" || header[3] != "test_acc" || header[6] != "early_stop_flag")
        throw ParseError(n, "not a seed result matrix header");
      continue;
    }
    if (cells.size() < 7) throw ParseError(n, "expected at least 7 columns");
    auto num = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      try {
        return std::stod(s);
      } catch (const std::exception&) {
        throw ParseError(n, "bad number '" + s + "'");
      }
    };
    std::uint64_t seed;
    try {
      seed = std::stoull(cells[0]);
    } catch (const std::exception&) {
      throw ParseError(n, "bad seed '" + cells[0] + "'");
    }
    auto& run = by_seed[seed];
    run.seed = seed;
    EpochAccuracy e;
    e.epoch = static_cast<std::size_t>(num(cells[1]).value_or(0));
    e.dev_acc = num(cells[2]).value_or(0);
    auto test = num(cells[3]);
    if (!test) throw ParseError(n, "missing test_acc");
    e.test.all = *test;
    e.test.but = num(cells[4]);
    e.test.neg = num(cells[5]);
    if (cells.size() > 7) e.test.but_or_neg = num(cells[7]);
    run.epochs.push_back(e);
    if (cells[6] == "1") {
      run.ok = true;
      run.early_stop_epoch = e.epoch;
      run.test = e.test;
    }
  }
  for (auto& [seed, run] : by_seed) {
    if (!run.ok) run.error = "no early-stopped row";
    m.runs.push_back(std::move(run));
  }
  return m;
}

/// Mean over seeds of per-epoch test accuracy, for the accuracy-vs-epoch plot.
inline void write_trace_csv(std::ostream& os, const SeedResultMatrix& m) {
  os << "epoch,n,mean_test_acc,ci95,mean_dev_acc\n";
  const auto prec = os.precision(17);
  std::size_t max_epoch = 0;
  for (const auto& r : m.runs)
    if (r.ok)
      for (const auto& e : r.epochs) max_epoch = std::max(max_epoch, e.epoch);
  for (std::size_t ep = 1; ep <= max_epoch; ++ep) {
    std::vector<double> test, dev;
    for (const auto& r : m.runs) {
      if (!r.ok) continue;
      for (const auto& e : r.epochs)
        if (e.epoch == ep) {
          test.push_back(e.test.all);
          dev.push_back(e.dev_acc);
        }
    }
    if (test.empty()) continue;
    Summary st = summarize(test), sd = summarize(dev);
    os << ep << ',' << st.n << ',' << st.mean << ',';
    if (st.ci95) os << *st.ci95;
    os << ',' << sd.mean << '\n';
  }
  os.precision(prec);
}

inline nlohmann::json summary_json(const SeedResultMatrix& m) {
  nlohmann::json j{{"variant", m.variant}, {"n_seeds", m.runs.size()}, {"n_ok", m.completed()},
                   {"partial", m.partial()}};
  const std::pair<const char*, SubsetFilter> subsets[] = {
      {"test", SubsetFilter::all}, {"but", SubsetFilter::but}, {"neg", SubsetFilter::neg},
      {"but_or_neg", SubsetFilter::but_or_neg}};
  for (const auto& [name, f] : subsets) {
    auto v = m.early_stopped(f);
    j[name] = v.empty() ? nlohmann::json(nullptr) : to_json(summarize(v));
  }
  std::vector<double> stops;
  for (const auto& r : m.runs)
    if (r.ok) stops.push_back(static_cast<double>(r.early_stop_epoch));
  j["early_stop_epoch"] = stops.empty() ? nlohmann::json(nullptr) : to_json(summarize(stops));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : m.runs)
    if (!r.ok) failures.push_back({{"seed", r.seed}, {"error", r.error}});
  j["failures"] = std::move(failures);
  return j;
}

// Multi-seed runner -----------------------------------------------------------

struct ExperimentData {
  InputSource source = ContextualSource{};
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
};

/// seed_i = master + i.
inline std::vector<std::uint64_t> derive_seeds(std::uint64_t master, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = master + i;
  return s;
}

/// Trains once at `seed` and evaluates the early-stopped model (and every
/// epoch) under each requested finalisation (false = raw, true = projected).
/// Returns one SeedRun per flag. Failures are captured, not thrown.
inline std::vector<SeedRun> run_one_seed(const ExperimentData& data, DistillConfig cfg, std::uint64_t seed,
                                         const std::vector<bool>& final_project_flags,
                                         const std::function<void(const ModelParams&)>& on_model = {}) {
  cfg.train.seed = seed;
  std::vector<SeedRun> runs(final_project_flags.size());
  for (auto& r : runs) r.seed = seed;
  try {
    auto observer = [&](const ModelParams& params, const EpochRecord& rec) {
      auto shared = std::shared_ptr<const ModelParams>(&params, [](const ModelParams*) {});
      for (std::size_t i = 0; i < final_project_flags.size(); ++i) {
        InferenceModel m(shared, final_project_flags[i], cfg.projection);
        runs[i].epochs.push_back({rec.epoch, rec.dev_acc, evaluate_subsets(m, data.test)});
      }
    };
    TrainResult res = train_variant(data.source, data.train, data.dev, cfg, observer);
    auto params = std::make_shared<const ModelParams>(std::move(res.params));
    for (std::size_t i = 0; i < final_project_flags.size(); ++i) {
      InferenceModel m(params, final_project_flags[i], cfg.projection);
      runs[i].early_stop_epoch = res.best_epoch;
      runs[i].test = evaluate_subsets(m, data.test);
      runs[i].test_p_pos.reserve(data.test.size());
      for (const auto& e : data.test) runs[i].test_p_pos.emplace_back(e.id, m.predict(e).pos);
      runs[i].ok = true;
    }
    if (on_model) on_model(*params);
  } catch (const std::exception& e) {
    for (auto& r : runs) {
      r.ok = false;
      r.error = e.what();
      r.epochs.clear();
    }
  }
  return runs;
}

/// Runs every seed in `seeds` across `workers` threads. Result order follows
/// `seeds` regardless of scheduling. `on_done(index, runs)` is called under a
/// lock as each seed finishes.
inline std::vector<std::vector<SeedRun>> run_seeds(
    const ExperimentData& data, const DistillConfig& cfg, const std::vector<std::uint64_t>& seeds,
    const std::vector<bool>& final_project_flags, std::size_t workers = 1,
    const std::function<void(std::size_t, const std::vector<SeedRun>&)>& on_done = {},
    const std::function<void(std::uint64_t, const ModelParams&)>& on_model = {}) {
  std::vector<std::vector<SeedRun>> out(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      std::function<void(const ModelParams&)> model_hook;
      if (on_model)
        model_hook = [&, seed = seeds[i]](const ModelParams& p) {
          std::lock_guard lock(mu);
          on_model(seed, p);
        };
      auto runs = run_one_seed(data, cfg, seeds[i], final_project_flags, model_hook);
      std::lock_guard lock(mu);
      out[i] = std::move(runs);
      if (on_done) on_done(i, out[i]);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, seeds.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return out;
}

/// One matrix for the variant described by `cfg` over seeds master..master+n-1.
inline SeedResultMatrix run_seeded(const ExperimentData& data, const DistillConfig& cfg, std::size_t n_seeds,
                                   std::uint64_t master_seed, std::size_t workers = 1) {
  if (n_seeds < 1) throw ValidationError("n_seeds must be >= 1");
  auto runs = run_seeds(data, cfg, derive_seeds(master_seed, n_seeds), {cfg.final_project}, workers);
  SeedResultMatrix m;
  m.variant = cfg.variant_name();
  for (auto& r : runs) m.runs.push_back(std::move(r.front()));
  return m;
}

}  // namespace rulesent
