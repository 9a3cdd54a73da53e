// Value types shared across modules: labels, binary distributions, spans.
#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "rulesent/error.hpp"

namespace rulesent {

enum class Label : int { positive = 0, negative = 1 };

inline constexpr std::size_t kNumLabels = 2;

constexpr std::size_t label_index(Label y) noexcept { return static_cast<std::size_t>(y); }
constexpr Label label_from_index(std::size_t i) noexcept {
  return i == 0 ? Label::positive : Label::negative;
}
constexpr Label flip(Label y) noexcept {
  return y == Label::positive ? Label::negative : Label::positive;
}

inline std::string_view to_symbol(Label y) noexcept { return y == Label::positive ? "+" : "-"; }

/// Accepts "+", "-", "1", "0", "pos", "neg", "positive", "negative" (any case).
inline Label parse_label(std::string_view s) {
  std::string t;
  for (char c : s) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "+" || t == "1" || t == "pos" || t == "positive") return Label::positive;
  if (t == "-" || t == "0" || t == "neg" || t == "negative") return Label::negative;
  throw ValidationError("unrecognised label '" + std::string(s) + "'");
}

/// A binary distribution over {+, -}.
struct ProbDist {
  double pos = 0.5;
  double neg = 0.5;

  double operator[](Label y) const noexcept { return y == Label::positive ? pos : neg; }
  Label argmax() const noexcept { return pos >= neg ? Label::positive : Label::negative; }
  bool valid(double tol = 1e-9) const noexcept {
    return std::isfinite(pos) && std::isfinite(neg) && pos >= 0.0 && neg >= 0.0 &&
           std::abs(pos + neg - 1.0) <= tol;
  }
  static ProbDist onehot(Label y) noexcept {
    return y == Label::positive ? ProbDist{1.0, 0.0} : ProbDist{0.0, 1.0};
  }
  friend bool operator==(const ProbDist&, const ProbDist&) = default;
};

/// Clamp into [eps, 1-eps] per component and renormalise. Distributions
/// already inside the band are returned bit-for-bit unchanged.
inline ProbDist clamp(ProbDist p, double eps = 1e-12) noexcept {
  auto c = [eps](double v) { return v < eps ? eps : (v > 1.0 - eps ? 1.0 - eps : v); };
  double a = c(p.pos), b = c(p.neg);
  if (a == p.pos && b == p.neg) return p;
  return {a / (a + b), b / (a + b)};
}

/// Half-open token range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct DiscourseTag {
  bool a_but_b = false;
  bool negation = false;
  bool discourse() const noexcept { return a_but_b || negation; }
  friend bool operator==(const DiscourseTag&, const DiscourseTag&) = default;
};

}  // namespace rulesent
