// Shared helpers for the test suites.
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "rulesent/rulesent.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path sample_dir() { return fs::path(RULESENT_SAMPLE_DIR); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("rulesent-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline rulesent::ProbDist random_dist(std::mt19937_64& rng, double lo = 0.0) {
  std::uniform_real_distribution<double> u(lo, 1.0 - lo);
  const double a = u(rng);
  return {a, 1.0 - a};
}

/// Tiny model over frozen vector inputs.
inline rulesent::ModelParams tiny_model(std::mt19937_64& rng, std::size_t d, std::vector<std::size_t> widths,
                                        std::size_t maps, bool random_dense = true) {
  rulesent::TrainConfig cfg;
  cfg.widths = std::move(widths);
  cfg.maps = maps;
  auto p = rulesent::build_frozen_model(cfg, d, rng);
  if (random_dense) {
    std::normal_distribution<double> n(0.0, 0.5);
    for (Eigen::Index i = 0; i < p.dense_w.size(); ++i) p.dense_w.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < p.dense_b.size(); ++i) p.dense_b[i] = n(rng);
    for (auto& c : p.conv)
      for (Eigen::Index i = 0; i < c.bias.size(); ++i) c.bias[i] = n(rng) * 0.1;
  }
  return p;
}

inline rulesent::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  rulesent::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Frozen-vector corpus. Dimension 0 carries word sentiment, dimension 1
/// marks "but". A-but-B sentences take the label of their B clause.
inline std::vector<rulesent::Example> toy_corpus(std::mt19937_64& rng, std::size_t n, double but_fraction,
                                                const std::string& prefix) {
  using namespace rulesent;
  std::normal_distribution<double> noise(0.0, 0.3);
  std::bernoulli_distribution coin(0.5), is_but(but_fraction);
  auto clause = [&](double s, std::size_t len) {
    Matrix m(static_cast<Eigen::Index>(len), 4);
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      for (Eigen::Index k = 0; k < 4; ++k) m(t, k) = noise(rng);
      if (t == m.rows() - 1) m(t, 0) += s;
    }
    return m;
  };
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = coin(rng) ? 1.0 : -1.0;
    Example e;
    e.id = prefix + std::to_string(i);
    e.label = s > 0 ? Label::positive : Label::negative;
    if (is_but(rng)) {
      Matrix a = clause(-s, 3), b = clause(s, 3);
      Matrix v(7, 4);
      v.topRows(3) = a;
      v.row(3) << 0.0, 1.0, 0.0, 0.0;
      v.bottomRows(3) = b;
      e.input = SentenceInput::from_vectors(std::move(v));
      e.discourse.a_but_b = true;
      e.b_span = Span{4, 7};
    } else {
      e.input = SentenceInput::from_vectors(clause(s, 3));
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline rulesent::DistillConfig toy_config(rulesent::DistillMode mode, std::uint64_t seed) {
  rulesent::DistillConfig cfg;
  cfg.mode = mode;
  cfg.train.widths = {2, 3};
  cfg.train.maps = 6;
  cfg.train.batch_size = 10;
  cfg.train.max_epochs = 8;
  cfg.train.patience = 8;
  cfg.train.seed = seed;
  return cfg;
}


}  // namespace testing_support
