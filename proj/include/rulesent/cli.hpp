// Command-line front end. `run_cli` is callable in-process so the commands can
// be tested without spawning a binary.
#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rulesent/analysis.hpp"
#include "rulesent/checkpoint.hpp"
#include "rulesent/cnn_model.hpp"
#include "rulesent/crowd.hpp"
#include "rulesent/distill.hpp"
#include "rulesent/embeddings.hpp"
#include "rulesent/error.hpp"
#include "rulesent/eval_stats.hpp"
#include "rulesent/rules.hpp"
#include "rulesent/sst_data.hpp"

namespace rulesent::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kPartial = 2, kInternal = 3 };

namespace detail {

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot open '" + p.string() + "'");
  return in;
}

inline std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ValidationError("cannot write '" + p.string() + "'");
  return out;
}

inline std::vector<LabeledInstance> read_instance_file(const fs::path& p) {
  auto in = open_in(p);
  try {
    return read_instances(in);
  } catch (const ParseError& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

/// "name=path" -> (name, path).
inline std::pair<std::string, std::string> split_named(const std::string& s) {
  auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw ValidationError("expected name=path, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

struct VariantSpec {
  DistillMode mode = DistillMode::no_distill;
  bool final_project = false;
};

/// "<no-distill|distill|contextual>,<no-project|project>".
inline VariantSpec parse_variant(const std::string& s) {
  auto comma = s.find(',');
  if (comma == std::string::npos) throw ValidationError("variant must look like 'distill,project', got '" + s + "'");
  const std::string a = s.substr(0, comma), b = s.substr(comma + 1);
  VariantSpec v;
  if (a == "distill" || a == "contextual-distill")
    v.mode = DistillMode::distill;
  else if (a != "no-distill" && a != "contextual")
    throw ValidationError("unknown distillation setting '" + a + "'");
  if (b == "project")
    v.final_project = true;
  else if (b != "no-project")
    throw ValidationError("unknown projection setting '" + b + "'");
  return v;
}

inline std::string variant_name(const VariantSpec& v, bool contextual) {
  std::string first = contextual ? (v.mode == DistillMode::distill ? "contextual-distill" : "contextual")
                                 : std::string(to_string(v.mode));
  return first + (v.final_project ? ",project" : ",no-project");
}

/// Model and data options shared by `train` and `experiment`.
struct ModelOptions {
  std::string train_path, dev_path, test_path;
  std::string vectors_path, contextual_path;
  std::size_t random_dim = 300;
  bool freeze_embeddings = false;
  std::string variant = "no-distill,no-project";
  double C = 6.0;
  double pi_base = 0.95;
  TrainConfig train;

  void add(CLI::App* cmd) {
    cmd->add_option("--train", train_path, "Training instances (JSON lines)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--dev", dev_path, "Development instances (JSON lines)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--test", test_path, "Test instances (JSON lines)")->check(CLI::ExistingFile);
    auto* vec = cmd->add_option("--vectors", vectors_path, "Pretrained static vectors (word2vec text format)")
                    ->check(CLI::ExistingFile);
    auto* ctx = cmd->add_option("--contextual", contextual_path, "Precomputed contextual vectors (JSON lines)")
                    ->check(CLI::ExistingFile);
    vec->excludes(ctx);
    cmd->add_option("--dim", random_dim, "Embedding size when no vector file is given")->check(CLI::PositiveNumber);
    cmd->add_flag("--freeze-embeddings", freeze_embeddings, "Do not fine-tune static embeddings");
    cmd->add_option("--variant", variant, "<no-distill|distill>,<no-project|project>");
    cmd->add_option("--C", C, "Projection strength")->check(CLI::NonNegativeNumber);
    cmd->add_option("--pi-base", pi_base, "Distillation schedule base (pi = base^epoch)");
    cmd->add_option("--widths", train.widths, "Filter widths")->delimiter(',');
    cmd->add_option("--maps", train.maps, "Feature maps per width");
    cmd->add_option("--dropout", train.dropout, "Dropout rate on pooled features");
    cmd->add_option("--batch-size", train.batch_size, "Minibatch size");
    cmd->add_option("--epochs", train.max_epochs, "Maximum epochs");
    cmd->add_option("--patience", train.patience, "Early-stopping patience (epochs)");
    cmd->add_option("--rho", train.adadelta_rho, "Adadelta decay");
    cmd->add_option("--adadelta-eps", train.adadelta_eps, "Adadelta epsilon");
  }

  DistillConfig distill_config() const {
    auto v = parse_variant(variant);
    DistillConfig cfg;
    cfg.mode = v.mode;
    cfg.final_project = v.final_project;
    cfg.projection.C = C;
    cfg.pi_base = pi_base;
    cfg.train = train;
    cfg.train.validate();
    return cfg;
  }

  std::string name() const { return variant_name(parse_variant(variant), !contextual_path.empty()); }

  ExperimentData load() const {
    ExperimentData data;
    auto train_i = read_instance_file(train_path);
    auto dev_i = read_instance_file(dev_path);
    std::vector<LabeledInstance> test_i;
    if (!test_path.empty()) test_i = read_instance_file(test_path);
    if (!contextual_path.empty()) {
      auto in = open_in(contextual_path);
      std::size_t dim = 0;
      auto corpus = load_contextual(in, &dim);
      data.source = ContextualSource{dim};
      data.train = encode_contextual(train_i, corpus);
      data.dev = encode_contextual(dev_i, corpus);
      data.test = encode_contextual(test_i, corpus);
      return data;
    }
    const std::vector<std::vector<LabeledInstance>*> lists{&train_i, &dev_i, &test_i};
    Vocabulary vocab;
    for (auto* l : lists)
      for (const auto& inst : *l)
        for (const auto& t : inst.tokens) vocab.add(t);
    std::optional<EmbeddingTable> table;
    if (!vectors_path.empty()) {
      std::unordered_set<std::string> filter(vocab.words().begin(), vocab.words().end());
      auto in = open_in(vectors_path);
      try {
        table.emplace(load_static_vectors(in, &filter));
      } catch (const ParseError& e) {
        throw ValidationError(vectors_path + ": " + e.what());
      }
    } else {
      table.emplace(EmbeddingTable::random_only(random_dim));
    }
    table->set_trainable(!freeze_embeddings);
    data.train = encode_static(train_i, vocab);
    data.dev = encode_static(dev_i, vocab);
    data.test = encode_static(test_i, vocab);
    data.source = StaticSource{std::move(vocab), std::move(*table)};
    return data;
  }
};

/// Effective configuration of the running command, loadable again with --config.
inline void echo_config(const CLI::App& cmd, const fs::path& out_dir) {
  auto quote = [](const std::string& v) {
    std::string q = "\"";
    for (char c : v) q += (c == '"' ? '\'' : c);
    return q + '"';
  };
  auto out = open_out(out_dir / "config.ini");
  out << "[" << cmd.get_name() << "]\n";
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config") continue;
    std::vector<std::string> values = opt->results();
    if (values.empty()) {
      const std::string d = opt->get_default_str();
      if (d.empty() || d == "{}" || d == "[]") continue;
      if (d.front() == '[' && d.back() == ']') {
        std::stringstream ss(d.substr(1, d.size() - 2));
        for (std::string v; std::getline(ss, v, ',');) values.push_back(v);
      } else {
        values.push_back(d);
      }
    }
    out << name << '=';
    if (values.size() == 1 && opt->get_expected_max() <= 1) {
      out << quote(values.front()) << '\n';
      continue;
    }
    out << '[';
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << quote(values[i]);
    out << "]\n";
  }
}

inline void write_predictions(std::ostream& os, std::uint64_t seed,
                              const std::vector<std::pair<std::string, double>>& preds) {
  const auto prec = os.precision(17);
  for (const auto& [id, p] : preds) os << seed << ',' << id << ',' << p << '\n';
  os.precision(prec);
}

/// predictions.csv (seed, sentence_id, p_pos) -> one label map per seed.
inline std::vector<std::map<std::string, Label>> read_predictions(const fs::path& p) {
  auto in = open_in(p);
  std::map<std::uint64_t, std::map<std::string, Label>> by_seed;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (n == 1 && line.rfind("seed,", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string seed, id, prob;
    if (!std::getline(ss, seed, ',') || !std::getline(ss, id, ',') || !std::getline(ss, prob, ','))
      throw ValidationError(p.string() + ": line " + std::to_string(n) + ": expected seed,sentence_id,p_pos");
    try {
      by_seed[std::stoull(seed)][id] = std::stod(prob) >= 0.5 ? Label::positive : Label::negative;
    } catch (const std::logic_error&) {
      throw ValidationError(p.string() + ": line " + std::to_string(n) + ": bad number");
    }
  }
  std::vector<std::map<std::string, Label>> out;
  for (auto& [s, m] : by_seed) out.push_back(std::move(m));
  if (out.empty()) throw ValidationError(p.string() + ": no predictions");
  return out;
}

inline std::vector<double> parse_thresholds(const std::vector<double>& xs) {
  for (double x : xs)
    if (!(x >= 0.5 && x < 1.0)) throw ValidationError("threshold " + std::to_string(x) + " outside [0.5, 1)");
  return xs;
}

}  // namespace detail

// Commands ---------------------------------------------------------------------

struct Common {
  std::string out_dir;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

inline int cmd_ingest(const CLI::App& app, const Common& common, const std::string& sst_dir, const std::string& mode,
                      const std::string& lexicon_path, std::ostream& log) {
  const fs::path dir(sst_dir), out(common.out_dir);
  const std::vector<std::string> splits{"train", "dev", "test"};
  for (const auto& s : splits)
    if (!fs::exists(dir / (s + ".txt"))) throw ValidationError("missing split file '" + (dir / (s + ".txt")).string() + "'");
  auto lexicon = default_negation_lexicon();
  if (!lexicon_path.empty()) {
    auto in = detail::open_in(lexicon_path);
    lexicon = read_negation_lexicon(in);
  }

  std::vector<std::pair<std::string, std::vector<LabeledInstance>>> stats_input;
  std::vector<LabeledTree> train_trees;
  for (const auto& s : splits) {
    const fs::path path = dir / (s + ".txt");
    auto in = detail::open_in(path);
    std::vector<LabeledTree> trees;
    try {
      trees = parse_ptb_trees(in);
    } catch (const ParseError& e) {
      throw ValidationError(path.string() + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
    auto insts = extract_instances(trees, ExtractMode::sentence, s, lexicon);
    auto os = detail::open_out(out / "instances" / (s + ".jsonl"));
    write_instances(os, insts);
    log << s << ": " << trees.size() << " trees, " << insts.size() << " sentence instances\n";
    std::string column = s;
    column[0] = static_cast<char>(std::toupper(column[0]));
    stats_input.emplace_back(column, std::move(insts));
    if (s == "train") train_trees = std::move(trees);
  }
  if (mode == "phrase") {
    auto phrases = extract_instances(train_trees, ExtractMode::phrase, "train", lexicon);
    auto os = detail::open_out(out / "instances" / "train.phrases.jsonl");
    write_instances(os, phrases);
    log << "train phrases: " << phrases.size() << " instances\n";
    stats_input.insert(stats_input.begin(), {"Phrases", std::move(phrases)});
  }
  auto os = detail::open_out(out / "stats.csv");
  write_stats_csv(os, corpus_stats(stats_input));
  detail::echo_config(app, out);
  return kOk;
}

inline nlohmann::json epoch_json(const EpochRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"epoch", r.epoch}, {"pi", r.pi}, {"dev_acc", r.dev_acc}, {"dev_acc_but", opt(r.dev_acc_but)},
          {"mean_teacher_kl", opt(r.mean_teacher_kl)}, {"train_loss", r.train_loss}};
}

inline int cmd_train(const CLI::App& app, const Common& common, const detail::ModelOptions& opts, std::ostream& log) {
  const fs::path out(common.out_dir);
  DistillConfig cfg = opts.distill_config();
  cfg.train.seed = common.seed;
  ExperimentData data = opts.load();
  detail::echo_config(app, out);

  auto train_log = detail::open_out(out / "train_log.jsonl");
  auto observer = [&](const ModelParams&, const EpochRecord& r) {
    train_log << epoch_json(r).dump() << '\n';
    log << "epoch " << r.epoch << " dev_acc " << r.dev_acc << '\n';
  };
  TrainResult res = train_variant(data.source, data.train, data.dev, cfg, observer);
  {
    auto os = detail::open_out(out / "model.json");
    save_checkpoint(os, res.params, cfg);
  }
  nlohmann::json metrics{{"variant", opts.name()}, {"seed", common.seed}, {"best_epoch", res.best_epoch},
                         {"epochs_run", res.history.size()}};
  if (!data.test.empty()) {
    InferenceModel model = finalize(res.params, cfg);
    metrics["test"] = to_json(evaluate_subsets(model, data.test));
    auto os = detail::open_out(out / "predictions.csv");
    os << "seed,sentence_id,p_pos\n";
    std::vector<std::pair<std::string, double>> preds;
    for (const auto& e : data.test) preds.emplace_back(e.id, model.predict(e).pos);
    detail::write_predictions(os, common.seed, preds);
  }
  auto os = detail::open_out(out / "metrics.json");
  os << metrics.dump(2) << '\n';
  return kOk;
}

/// Resumable: each finished seed is stored under seeds/ and skipped on rerun.
inline int cmd_experiment(const CLI::App& app, const Common& common, const detail::ModelOptions& opts,
                          std::size_t n_seeds, bool save_models, std::ostream& log) {
  if (n_seeds < 1) throw ValidationError("--seeds must be >= 1");
  if (opts.test_path.empty()) throw ValidationError("experiment requires --test");
  const fs::path out(common.out_dir);
  DistillConfig cfg = opts.distill_config();
  ExperimentData data = opts.load();
  detail::echo_config(app, out);
  fs::create_directories(out / "seeds");

  const auto seeds = derive_seeds(common.seed, n_seeds);
  auto seed_file = [&](std::uint64_t s) { return out / "seeds" / ("seed_" + std::to_string(s) + ".json"); };
  std::vector<std::optional<SeedRun>> done(seeds.size());
  std::vector<std::uint64_t> todo;
  std::vector<std::size_t> todo_index;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (fs::exists(seed_file(seeds[i]))) {
      auto in = detail::open_in(seed_file(seeds[i]));
      try {
        auto r = seed_run_from_json(nlohmann::json::parse(in));
        if (r.ok) {
          done[i] = std::move(r);
          continue;
        }
      } catch (const nlohmann::json::exception&) {
        // unreadable partial write: rerun the seed
      }
    }
    todo.push_back(seeds[i]);
    todo_index.push_back(i);
  }
  log << "experiment " << opts.name() << ": " << (seeds.size() - todo.size()) << " seeds already complete, "
      << todo.size() << " to run\n";

  auto on_done = [&](std::size_t k, const std::vector<SeedRun>& runs) {
    const SeedRun& r = runs.front();
    done[todo_index[k]] = r;
    if (r.ok) {
      auto tmp = seed_file(r.seed);
      tmp += ".tmp";
      {
        auto os = detail::open_out(tmp);
        os << to_json(r).dump() << '\n';
      }
      fs::rename(tmp, seed_file(r.seed));
    }
    log << "seed " << r.seed << (r.ok ? " ok, test_acc " + std::to_string(r.test.all) : " FAILED: " + r.error) << '\n';
  };
  std::function<void(std::uint64_t, const ModelParams&)> on_model;
  if (save_models)
    on_model = [&](std::uint64_t s, const ModelParams& p) {
      auto os = detail::open_out(out / "models" / ("seed_" + std::to_string(s) + ".json"));
      DistillConfig c = cfg;
      c.train.seed = s;
      save_checkpoint(os, p, c);
    };
  run_seeds(data, cfg, todo, {cfg.final_project}, common.workers, on_done, on_model);

  SeedResultMatrix m;
  m.variant = opts.name();
  for (auto& r : done) m.runs.push_back(std::move(*r));
  {
    auto os = detail::open_out(out / "matrix.csv");
    write_matrix_csv(os, m);
  }
  {
    auto os = detail::open_out(out / "trace.csv");
    write_trace_csv(os, m);
  }
  {
    auto os = detail::open_out(out / "summary.json");
    os << summary_json(m).dump(2) << '\n';
  }
  {
    auto os = detail::open_out(out / "predictions.csv");
    os << "seed,sentence_id,p_pos\n";
    for (const auto& r : m.runs)
      if (r.ok) detail::write_predictions(os, r.seed, r.test_p_pos);
  }
  return m.partial() ? kPartial : kOk;
}

inline int cmd_significance(const CLI::App& app, const Common& common, const std::vector<std::string>& matrices,
                            const std::vector<std::string>& pair_args, double alpha, std::ostream& log) {
  const fs::path out(common.out_dir);
  std::map<std::string, std::vector<double>> samples;
  for (const auto& m : matrices) {
    auto [name, path] = detail::split_named(m);
    auto in = detail::open_in(path);
    SeedResultMatrix mat;
    try {
      mat = read_matrix_csv(in, name);
    } catch (const ParseError& e) {
      throw ValidationError(path + ": " + e.what());
    }
    samples[name] = mat.early_stopped();
  }
  std::vector<VariantPair> pairs;
  for (const auto& p : pair_args) {
    auto colon = p.find(':');
    if (colon == std::string::npos) throw ValidationError("--pair expects first:second, got '" + p + "'");
    pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
  }
  if (pairs.empty()) pairs = standard_comparisons();
  auto rows = significance_grid(samples, pairs, alpha);
  {
    auto os = detail::open_out(out / "significance.json");
    os << to_json(rows, alpha).dump(2) << '\n';
  }
  auto os = detail::open_out(out / "significance.txt");
  write_significance_table(os, rows);
  write_significance_table(log, rows);
  detail::echo_config(app, out);
  return kOk;
}

inline int cmd_crowd(const CLI::App& app, const Common& common, const std::string& judgments_path,
                     const std::vector<double>& thresholds, const std::vector<std::string>& prediction_args,
                     std::size_t raters, std::ostream& log) {
  const fs::path out(common.out_dir);
  auto in = detail::open_in(judgments_path);
  std::vector<JudgmentRecord> records;
  try {
    records = read_judgments(in, raters);
  } catch (const ParseError& e) {
    throw ValidationError(judgments_path + ": " + e.what());
  }
  std::map<std::string, std::vector<std::map<std::string, Label>>> preds;
  for (const auto& p : prediction_args) {
    auto [name, path] = detail::split_named(p);
    preds[name] = detail::read_predictions(path);
  }
  auto cols = crowd_table(records, detail::parse_thresholds(thresholds), preds);
  {
    auto os = detail::open_out(out / "crowd_table.csv");
    write_crowd_table_csv(os, cols);
  }
  {
    auto os = detail::open_out(out / "threshold_accuracy.csv");
    write_threshold_accuracy_csv(os, cols);
  }
  {
    auto os = detail::open_out(out / "labels.csv");
    os << "threshold,sentence_id,mean,label,flipped\n";
    for (double x : thresholds)
      for (const auto& l : threshold_report(records, x).labels)
        os << x << ',' << l.sentence_id << ',' << l.mean << ',' << to_string(l.label) << ',' << (l.flipped ? 1 : 0)
           << '\n';
  }
  write_crowd_table_csv(log, cols);
  detail::echo_config(app, out);
  return kOk;
}

inline int cmd_similarity(const CLI::App& app, const Common& common, const std::string& instances_path,
                          const std::string& vectors_path, const std::string& model_path,
                          const std::string& contextual_path, std::size_t limit, std::ostream& log) {
  if (vectors_path.empty() && model_path.empty() && contextual_path.empty())
    throw ValidationError("similarity needs at least one of --vectors, --model, --contextual");
  const fs::path out(common.out_dir);
  auto instances = detail::read_instance_file(instances_path);
  if (limit) {
    std::vector<LabeledInstance> kept;
    for (const auto& i : instances)
      if (i.discourse.a_but_b && kept.size() < limit) kept.push_back(i);
    instances = std::move(kept);
  }
  std::vector<SimilarityEntry> entries;
  auto append = [&](std::vector<SimilarityEntry> e) { entries.insert(entries.end(), e.begin(), e.end()); };
  if (!vectors_path.empty()) {
    auto in = detail::open_in(vectors_path);
    EmbeddingTable table = load_static_vectors(in);
    std::mt19937_64 rng(common.seed);
    append(similarity_report(instances, "static", table_vectors(table, rng)));
  }
  if (!model_path.empty()) {
    auto in = detail::open_in(model_path);
    Checkpoint ck = load_checkpoint(in);
    if (ck.params.embedding.size() == 0) throw ValidationError("checkpoint has no embedding table");
    append(similarity_report(instances, "model", model_vectors(ck.params)));
  }
  if (!contextual_path.empty()) {
    auto in = detail::open_in(contextual_path);
    ContextualCorpus corpus = load_contextual(in);
    append(similarity_report(instances, "contextual", contextual_vectors(corpus)));
  }
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& e : entries) {
    const fs::path rel = fs::path("similarity") / (e.sentence_id + "." + e.source + ".csv");
    auto os = detail::open_out(out / rel);
    write_similarity_csv(os, e.matrix);
    manifest.push_back({{"sentence_id", e.sentence_id}, {"source", e.source}, {"path", rel.string()}});
  }
  auto os = detail::open_out(out / "manifest.json");
  os << manifest.dump(2) << '\n';
  log << entries.size() << " similarity matrices written\n";
  detail::echo_config(app, out);
  return kOk;
}

inline int cmd_klreport(const CLI::App& app, const Common& common, const std::string& instances_path,
                        const std::vector<std::string>& model_args, const std::string& contextual_path, double C,
                        std::ostream& log) {
  const fs::path out(common.out_dir);
  auto instances = detail::read_instance_file(instances_path);
  std::vector<LabeledInstance> but;
  for (auto& i : instances)
    if (i.discourse.a_but_b) but.push_back(std::move(i));
  if (but.empty()) throw ValidationError("no A-but-B instances in '" + instances_path + "'");
  std::optional<ContextualCorpus> corpus;
  if (!contextual_path.empty()) {
    auto in = detail::open_in(contextual_path);
    corpus = load_contextual(in);
  }

  std::map<std::string, std::vector<std::string>> paths;
  std::vector<std::string> order;
  for (const auto& m : model_args) {
    auto [name, path] = detail::split_named(m);
    if (!paths.contains(name)) order.push_back(name);
    paths[name].push_back(path);
  }
  std::vector<KlVariantResult> results;
  for (const auto& name : order) {
    std::vector<ModelParams> models;
    for (const auto& p : paths[name]) {
      auto in = detail::open_in(p);
      models.push_back(load_checkpoint(in).params);
    }
    const bool frozen = models.front().embedding.size() == 0;
    std::vector<Example> examples;
    if (frozen) {
      if (!corpus) throw ValidationError("model '" + name + "' takes contextual input; pass --contextual");
      examples = encode_contextual(but, *corpus);
    } else {
      examples = encode_static(but, models.front().vocab);
    }
    std::vector<ModelScorer> scorers;
    for (const auto& m : models) {
      if (!frozen && !(m.vocab == models.front().vocab))
        throw ValidationError("models of variant '" + name + "' use different vocabularies");
      scorers.push_back({&m});
    }
    results.push_back(kl_report<ModelScorer>(name, scorers, examples, ProjectionConfig{C}));
    log << name << ": mean KL(q||p) = " << results.back().mean_kl << " over " << but.size() << " sentences, "
        << models.size() << " model(s)\n";
  }
  {
    auto os = detail::open_out(out / "kl_report.json");
    os << to_json(results, C).dump(2) << '\n';
  }
  auto os = detail::open_out(out / "kl_report.csv");
  os << "variant,mean_kl,n_models,n_instances\n";
  os.precision(17);
  for (const auto& r : results) os << r.variant << ',' << r.mean_kl << ',' << r.n_models << ',' << r.n_instances << '\n';
  detail::echo_config(app, out);
  return kOk;
}

// Entry point ------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Rule-constrained sentiment classification and seed-averaged evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI configuration file ([command] sections); flags override it");
  app.option_defaults()->always_capture_default();

  Common common;
  auto add_common = [&](CLI::App* cmd, bool with_workers = false) {
    cmd->add_option("--out", common.out_dir, "Output directory")->required();
    cmd->add_option("--seed", common.seed, "Master seed");
    if (with_workers) cmd->add_option("--workers", common.workers, "Concurrent seed runs")->check(CLI::PositiveNumber);
  };

  std::string sst_dir, mode = "sentence", lexicon;
  auto* ingest = app.add_subcommand("ingest", "Parse SST trees into SST2 instance files and corpus statistics");
  add_common(ingest);
  ingest->add_option("--sst-dir", sst_dir, "Directory with train.txt, dev.txt, test.txt")->required();
  ingest->add_option("--mode", mode, "sentence, or phrase to also write phrase-level training data")
      ->check(CLI::IsMember({"sentence", "phrase"}));
  ingest->add_option("--negation-lexicon", lexicon, "One negation cue per line")->check(CLI::ExistingFile);

  detail::ModelOptions train_opts;
  auto* train = app.add_subcommand("train", "Train one model variant at one seed");
  add_common(train);
  train_opts.add(train);

  detail::ModelOptions exp_opts;
  std::size_t n_seeds = 100;
  bool save_models = false;
  auto* experiment = app.add_subcommand("experiment", "Train a variant over many seeds (resumable)");
  add_common(experiment, true);
  exp_opts.add(experiment);
  experiment->add_option("--seeds", n_seeds, "Number of seeds (master, master+1, ...)")->check(CLI::PositiveNumber);
  experiment->add_flag("--save-models", save_models, "Write each seed's checkpoint under models/");

  std::vector<std::string> matrices, pairs;
  double alpha = 0.001;
  auto* significance = app.add_subcommand("significance", "Pairwise two-sample KS tests over seed matrices");
  add_common(significance);
  significance->add_option("--matrix", matrices, "variant=matrix.csv (repeatable)")->required();
  significance->add_option("--pair", pairs, "first:second (repeatable; default: the nine standard comparisons)");
  significance->add_option("--alpha", alpha, "Significance level")->check(CLI::Range(0.0, 1.0));

  std::string judgments;
  std::vector<double> thresholds{0.50, 0.66, 0.75, 0.90};
  std::vector<std::string> predictions;
  std::size_t raters = kExpectedRaters;
  auto* crowd = app.add_subcommand("crowd", "Crowd ambiguity thresholds, Fleiss' kappa and filtered accuracy");
  add_common(crowd);
  crowd->add_option("--judgments", judgments, "CSV: sentence_id,sst2_label,score_1..score_9")
      ->required()
      ->check(CLI::ExistingFile);
  crowd->add_option("--thresholds", thresholds, "Ambiguity thresholds in [0.5, 1)")->delimiter(',');
  crowd->add_option("--predictions", predictions, "model=predictions.csv (repeatable)");
  crowd->add_option("--raters", raters, "Ratings expected per sentence")->check(CLI::PositiveNumber);

  std::string sim_instances, sim_vectors, sim_model, sim_contextual;
  std::size_t sim_limit = 0;
  auto* similarity = app.add_subcommand("similarity", "Intra-sentence cosine similarity for A-but-B sentences");
  add_common(similarity);
  similarity->add_option("--instances", sim_instances, "Instances (JSON lines)")->required()->check(CLI::ExistingFile);
  similarity->add_option("--vectors", sim_vectors, "Static vectors file")->check(CLI::ExistingFile);
  similarity->add_option("--model", sim_model, "Checkpoint whose (fine-tuned) embeddings to use")
      ->check(CLI::ExistingFile);
  similarity->add_option("--contextual", sim_contextual, "Contextual vectors file")->check(CLI::ExistingFile);
  similarity->add_option("--limit", sim_limit, "Only the first N A-but-B sentences");

  std::string kl_instances, kl_contextual;
  std::vector<std::string> kl_models;
  double kl_C = 6.0;
  auto* klreport = app.add_subcommand("klreport", "Mean KL(q||p) between projected and raw predictions");
  add_common(klreport);
  klreport->add_option("--instances", kl_instances, "Instances (JSON lines)")->required()->check(CLI::ExistingFile);
  klreport->add_option("--model", kl_models, "variant=checkpoint.json (repeatable, one per seed)")->required();
  klreport->add_option("--contextual", kl_contextual, "Contextual vectors for contextual-input models")
      ->check(CLI::ExistingFile);
  klreport->add_option("--C", kl_C, "Projection strength")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*ingest) return cmd_ingest(*ingest, common, sst_dir, mode, lexicon, log);
    if (*train) return cmd_train(*train, common, train_opts, log);
    if (*experiment) return cmd_experiment(*experiment, common, exp_opts, n_seeds, save_models, log);
    if (*significance) return cmd_significance(*significance, common, matrices, pairs, alpha, log);
    if (*crowd) return cmd_crowd(*crowd, common, judgments, thresholds, predictions, raters, log);
    if (*similarity)
      return cmd_similarity(*similarity, common, sim_instances, sim_vectors, sim_model, sim_contextual, sim_limit,
                            log);
    if (*klreport) return cmd_klreport(*klreport, common, kl_instances, kl_models, kl_contextual, kl_C, log);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}

}  // namespace rulesent::cli
