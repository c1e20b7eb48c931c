// ctrleval: command-line driver for building IWF tables, scoring evaluation
// sets and meta-evaluating scores against human ratings.
//
// Exit codes: 0 success, 1 scoring failures present, 2 usage or I/O error,
// 3 data validation error, 4 scorer transport error.

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctrleval/ctrleval.hpp"

namespace {

using namespace ctrleval;
using ojson = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitScoringFailures = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitTransport = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::io: return kExitUsage;
    case ErrorCode::transport: return kExitTransport;
    default: return kExitData;
  }
}

ojson make_header(std::string_view command, ojson config, ojson seeds = ojson::object()) {
  return {{"header",
           {{"tool", "ctrleval"}, {"version", kVersion}, {"command", command}, {"config", std::move(config)},
            {"seeds", std::move(seeds)}}}};
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  return out;
}

void write_json_file(const std::string& path, const ojson& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::io, "write failed: " + path);
}

std::string resolve_scorer(const std::string& flag) {
  if (const char* env = std::getenv("CTRLEVAL_SCORER"); env != nullptr && *env != '\0') return env;
  if (flag.empty()) throw UsageError("--scorer is required (or set CTRLEVAL_SCORER)");
  return flag;
}

void require_distinct(const std::string& input, const std::string& output) {
  if (input == output) throw UsageError("input and output paths must differ");
}

// ---------------------------------------------------------------------------

struct BuildIwfOptions {
  std::string corpus;
  std::string out;
  std::string json_out;
  bool per_line_sentences = false;
  std::size_t shards = 1;
};

int cmd_build_iwf(const BuildIwfOptions& opt) {
  const auto mode = opt.per_line_sentences ? CorpusMode::sentence_per_line : CorpusMode::document_per_line;
  std::ifstream in(opt.corpus);
  if (!in) throw Error(ErrorCode::io, "cannot open corpus: " + opt.corpus);
  IwfTable table;
  if (opt.shards > 1) {
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    table = build_iwf_table_sharded(lines, opt.shards, mode);
  } else {
    table = build_iwf_table(in, mode);
  }
  save_table(table, opt.out);
  if (!opt.json_out.empty()) write_json_file(opt.json_out, ojson(table_to_json(table)));
  std::cout << "sentences: " << table.sentence_count() << "\nvocabulary: " << table.vocabulary_size() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ScoreOptions {
  std::vector<std::string> aspects;
  std::string input;
  std::string scorer;
  std::string iwf;
  std::string catalog;
  std::string out;
  std::size_t concurrency = 1;
  std::size_t window = 32;
  int timeout_ms = 120000;
  bool strict = false;
  bool trim_incomplete = false;
};

int cmd_score(const ScoreOptions& opt) {
  std::vector<Aspect> aspects;
  for (const auto& name : opt.aspects) {
    if (name == "all") {
      aspects = {Aspect::coherence, Aspect::consistency, Aspect::attribute_relevance};
      break;
    }
    const auto a = parse_aspect(name);
    if (!a) throw UsageError("unknown aspect: " + name);
    aspects.push_back(*a);
  }
  const bool needs_iwf = std::any_of(aspects.begin(), aspects.end(), [](Aspect a) {
    return a != Aspect::attribute_relevance;
  });
  const bool needs_catalog = std::find(aspects.begin(), aspects.end(), Aspect::attribute_relevance) != aspects.end();
  if (needs_iwf && opt.iwf.empty()) throw UsageError("coherence and consistency need --iwf");
  if (needs_catalog && opt.catalog.empty()) throw UsageError("attr_rel needs --catalog");
  require_distinct(opt.input, opt.out);

  const auto scorer_spec = resolve_scorer(opt.scorer);
  std::optional<IwfTable> table;
  if (needs_iwf) table = load_table(opt.iwf);
  std::optional<AspectCatalog> catalog;
  if (needs_catalog) catalog = load_catalog(opt.catalog);
  const auto records = read_eval_set(opt.input);
  auto backend = make_backend(scorer_spec, RemoteOptions{opt.window, opt.timeout_ms});

  const ScoringContext ctx{table ? &*table : nullptr, catalog ? &*catalog : nullptr, backend.get()};

  struct Outcome {
    std::vector<ScoreRecord> scores;
    std::vector<std::string> failures;
    bool transport_failure = false;
    std::optional<Error> fatal;
  };
  std::vector<Outcome> outcomes(records.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  auto work = [&] {
    for (std::size_t i = next++; i < records.size() && !stop; i = next++) {
      const auto& record = records[i];
      auto& outcome = outcomes[i];
      try {
        auto text = opt.trim_incomplete ? trim_incomplete_last_sentence(record.text) : record.text;
        const auto instance = make_instance(record.prefix, record.label, std::move(text));
        for (const auto aspect : aspects) {
          try {
            outcome.scores.push_back({record.id, score_aspect(aspect, instance, ctx)});
          } catch (const Error& e) {
            outcome.failures.push_back(std::string(to_string(aspect)) + ": " + e.what());
            outcome.transport_failure |= e.code() == ErrorCode::transport;
            if (opt.strict) {
              outcome.fatal = e;
              stop = true;
              return;
            }
          }
        }
      } catch (const Error& e) {
        outcome.failures.push_back(e.what());
        if (opt.strict) {
          outcome.fatal = e;
          stop = true;
          return;
        }
      }
    }
  };
  {
    std::vector<std::jthread> workers;
    const std::size_t n = std::max<std::size_t>(1, opt.concurrency);
    for (std::size_t w = 0; w < n; ++w) workers.emplace_back(work);
  }

  for (std::size_t i = 0; i < records.size(); ++i) {
    if (outcomes[i].fatal) {
      std::cerr << "record " << records[i].id << ": " << outcomes[i].fatal->what() << '\n';
      return exit_code_for(*outcomes[i].fatal);
    }
  }

  ojson config{{"aspects", opt.aspects},
               {"input", opt.input},
               {"scorer", scorer_spec},
               {"model", backend->model_name()},
               {"iwf", opt.iwf},
               {"catalog", opt.catalog},
               {"trim_incomplete_last_sentence", opt.trim_incomplete},
               {"strict", opt.strict},
               {"log_prob_reduction", "sum"},
               {"multi_token_label_words", "product"}};
  ojson seeds = ojson::object();
  if (scorer_spec.starts_with("mock:")) seeds["scorer"] = scorer_spec.substr(5, scorer_spec.find(':', 5) - 5);

  auto out = open_output(opt.out);
  out << make_header("score", std::move(config), std::move(seeds)).dump() << '\n';
  std::size_t scored = 0, failed = 0;
  bool transport = false;
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const auto& s : outcomes[i].scores) {
      out << to_json(s).dump() << '\n';
      ++scored;
    }
    for (const auto& f : outcomes[i].failures) {
      std::cerr << "record " << records[i].id << ": " << f << '\n';
      ++failed;
    }
    transport |= outcomes[i].transport_failure;
  }
  if (!out) throw Error(ErrorCode::io, "write failed: " + opt.out);
  std::cerr << "scored " << scored << ", failed " << failed << '\n';
  if (failed == 0) return kExitOk;
  return transport ? kExitTransport : kExitScoringFailures;
}

// ---------------------------------------------------------------------------

struct CorrelateOptions {
  std::string scores;
  std::string ratings;
  std::string aspect;
  std::string out;
  bool allow_missing = false;
};

Aspect require_aspect(const std::string& name) {
  const auto a = parse_aspect(name);
  if (!a) throw UsageError("unknown aspect: " + name);
  return *a;
}

std::vector<AlignedSample> load_aligned(const std::string& scores_path, const std::string& ratings_path,
                                        Aspect aspect, bool allow_missing) {
  const auto records = read_eval_set(ratings_path);
  const auto scores = read_scores(scores_path, aspect);
  return align_scores(records, scores, aspect, allow_missing);
}

int cmd_correlate(const CorrelateOptions& opt) {
  const auto aspect = require_aspect(opt.aspect);
  const auto samples = load_aligned(opt.scores, opt.ratings, aspect, opt.allow_missing);
  std::vector<double> metric, human;
  for (const auto& s : samples) {
    metric.push_back(s.metric);
    human.push_back(s.human);
  }
  const auto report = correlate(std::string(to_string(aspect)), metric, human);
  ojson j = make_header("correlate", {{"scores", opt.scores}, {"ratings", opt.ratings}, {"aspect", to_string(aspect)},
                                      {"allow_missing", opt.allow_missing}, {"kendall_variant", "tau-b"},
                                      {"spearman_ties", "average ranks"}});
  j["report"] = to_json(report);
  write_json_file(opt.out, j);
  std::cout << "r=" << report.pearson_r << " rho=" << report.spearman_rho << " tau=" << report.kendall_tau
            << " n=" << report.n << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct DriftOptions {
  std::string mode;
  std::string scores;
  std::string ratings;
  std::string aspect;
  std::string out;
  std::string sort_by = "metric";
  std::uint64_t seed = 0;
  bool allow_missing = false;
};

int cmd_drift(const DriftOptions& opt) {
  const auto aspect = require_aspect(opt.aspect);
  const auto samples = load_aligned(opt.scores, opt.ratings, aspect, opt.allow_missing);
  const std::string aspect_name(to_string(aspect));
  ojson config{{"mode", opt.mode}, {"scores", opt.scores}, {"ratings", opt.ratings}, {"aspect", aspect_name}};

  if (opt.mode == "model") {
    const auto report = model_drift_report(samples, aspect_name);
    ojson j = make_header("drift", std::move(config));
    ojson models = ojson::array();
    for (const auto& [model, r] : report.per_model) {
      auto entry = to_json(r);
      entry["model"] = model;
      models.push_back(std::move(entry));
    }
    for (const auto& model : report.skipped) std::cerr << "warning: skipped model " << model << " (too few samples)\n";
    j["models"] = std::move(models);
    j["skipped_models"] = report.skipped;
    j["mean_pearson"] = report.mean_pearson;
    j["variance_pearson"] = report.variance_pearson;
    write_json_file(opt.out, j);
    return kExitOk;
  }
  if (opt.mode != "quality") throw UsageError("--mode must be model or quality");
  if (opt.sort_by != "metric" && opt.sort_by != "human") throw UsageError("--sort-by must be metric or human");

  std::vector<std::string> ids;
  std::vector<double> keys;
  for (const auto& s : samples) {
    ids.push_back(s.id);
    keys.push_back(opt.sort_by == "metric" ? s.metric : s.human);
  }
  const auto split = quality_drift_subsets(ids, keys, opt.seed);
  config["sort_by"] = opt.sort_by;
  ojson j = make_header("drift", std::move(config), {{"sampling", opt.seed}});
  ojson subsets = ojson::array();
  for (std::size_t sub = 0; sub < 4; ++sub) {
    std::vector<double> metric, human;
    std::vector<std::string> members;
    std::array<int, 4> per_quartile{};
    for (const auto item : split.subsets[sub]) {
      metric.push_back(samples[item].metric);
      human.push_back(samples[item].human);
      members.push_back(samples[item].id);
      ++per_quartile[static_cast<std::size_t>(split.quartile[item])];
    }
    ojson entry{{"subset", sub}, {"size", members.size()}, {"per_source_quartile", per_quartile}, {"ids", members}};
    try {
      entry["report"] = to_json(correlate(aspect_name, metric, human));
    } catch (const Error& e) {
      entry["report"] = nullptr;
      entry["warning"] = e.what();
    }
    subsets.push_back(std::move(entry));
  }
  j["subsets"] = std::move(subsets);
  write_json_file(opt.out, j);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PerturbOptions {
  std::string input;
  std::string strategy;
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_perturb(const PerturbOptions& opt) {
  const auto strategy = parse_strategy(opt.strategy);
  if (!strategy) throw UsageError("--strategy must be shuffle or drop");
  require_distinct(opt.input, opt.out);
  const auto records = read_eval_set(opt.input);
  auto out = open_output(opt.out);
  out << make_header("perturb", {{"input", opt.input}, {"strategy", opt.strategy}}, {{"perturb", opt.seed}}).dump()
      << '\n';
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    try {
      const auto perturbed = perturb_negative(r.instance(), *strategy, hash_combine(opt.seed, i));
      EvalSetRecord negative{r.id + "#" + opt.strategy, r.prefix, r.label, perturbed.generated_text, r.model, {}};
      out << to_json(negative).dump() << '\n';
    } catch (const Error& e) {
      std::cerr << "record " << r.id << ": " << e.what() << '\n';
      ++skipped;
    }
  }
  std::cerr << "perturbed " << records.size() - skipped << ", skipped " << skipped << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SubsampleOptions {
  std::string input;
  std::string catalog;
  std::string scorer;
  std::string out;
  std::vector<std::size_t> k_values;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
};

int cmd_subsample(const SubsampleOptions& opt) {
  const auto scorer_spec = resolve_scorer(opt.scorer);
  const auto catalog = load_catalog(opt.catalog);
  const auto records = read_eval_set(opt.input);
  auto backend = make_backend(scorer_spec);
  std::vector<std::size_t> ks = opt.k_values;
  if (ks.empty()) {
    for (std::size_t k = 1; k <= catalog.evaluator_count(); ++k) ks.push_back(k);
  }
  const auto report = evaluator_subsample_report(catalog, records, *backend, ks, opt.trials, opt.seed);
  ojson j = make_header("subsample",
                        {{"input", opt.input}, {"catalog", opt.catalog}, {"scorer", scorer_spec},
                         {"model", backend->model_name()}, {"trials", opt.trials}},
                        {{"sampling", opt.seed}});
  ojson rows = ojson::array();
  for (const auto& s : report) {
    rows.push_back({{"k", s.k}, {"mean_pearson", s.mean_pearson}, {"stddev_pearson", s.stddev_pearson},
                    {"trial_pearsons", s.trial_pearsons}});
  }
  j["evaluator_counts"] = std::move(rows);
  write_json_file(opt.out, j);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AlphaOptions {
  std::string ratings;
  std::string aspect;
  std::string level = "interval";
};

int cmd_alpha(const AlphaOptions& opt) {
  const auto aspect = require_aspect(opt.aspect);
  if (opt.level != "interval" && opt.level != "ordinal") throw UsageError("--level must be interval or ordinal");
  std::vector<std::vector<std::optional<double>>> matrix;
  for (const auto& r : read_eval_set(opt.ratings)) {
    auto it = r.ratings.find(std::string(to_string(aspect)));
    if (it == r.ratings.end()) continue;
    std::vector<std::optional<double>> row;
    for (int v : it->second) row.emplace_back(v);
    matrix.push_back(std::move(row));
  }
  const double alpha = krippendorff_alpha(matrix, opt.level == "ordinal" ? AlphaLevel::ordinal : AlphaLevel::interval);
  std::cout << ojson{{"aspect", to_string(aspect)}, {"level", opt.level}, {"units", matrix.size()}, {"alpha", alpha}}.dump()
            << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ServeMockOptions {
  std::uint64_t seed = 0;
  std::string vocab;
  bool uniform = false;
  bool reverse_batches = false;
};

int cmd_serve_mock(const ServeMockOptions& opt) {
  MockBackend backend(opt.seed, opt.vocab.empty() ? default_mock_vocabulary() : load_vocabulary(opt.vocab), opt.uniform);
  FdChannel channel(STDIN_FILENO, STDOUT_FILENO, false);
  serve_protocol(backend, channel, ServeOptions{opt.reverse_batches});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctrleval: reference-free evaluation of controlled text generation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  BuildIwfOptions build;
  auto* build_cmd = app.add_subcommand("build-iwf", "Count sentence frequencies of a corpus into an IWF table");
  build_cmd->add_option("--corpus", build.corpus, "UTF-8 corpus, one sentence or document per line")->required();
  build_cmd->add_option("--out", build.out, "Binary table output")->required();
  build_cmd->add_option("--json", build.json_out, "Also write a JSON export");
  build_cmd->add_flag("--per-line-sentences", build.per_line_sentences,
                      "Treat every line as one sentence instead of segmenting it");
  build_cmd->add_option("--shards", build.shards, "Count shards on this many threads")->check(CLI::PositiveNumber);

  ScoreOptions score;
  auto* score_cmd = app.add_subcommand("score", "Score an evaluation set");
  score_cmd->add_option("--aspect", score.aspects, "coherence | consistency | attr_rel | all (repeatable)")->required();
  score_cmd->add_option("--input", score.input, "Evaluation set JSONL")->required();
  score_cmd->add_option("--scorer", score.scorer, "mock:<seed>[:vocab] | remote:exec:<cmd> | remote:tcp:<host>:<port>");
  score_cmd->add_option("--iwf", score.iwf, "IWF table from build-iwf");
  score_cmd->add_option("--catalog", score.catalog, "Prompt/verbalizer catalog JSON");
  score_cmd->add_option("--out", score.out, "Scores JSONL output")->required();
  score_cmd->add_option("--concurrency", score.concurrency, "Records scored in parallel")->check(CLI::PositiveNumber);
  score_cmd->add_option("--window", score.window, "Max in-flight requests to a remote scorer")->check(CLI::PositiveNumber);
  score_cmd->add_option("--timeout-ms", score.timeout_ms, "Remote scorer response timeout");
  score_cmd->add_flag("--strict", score.strict, "Stop at the first failing record");
  score_cmd->add_flag("--trim-incomplete-last-sentence", score.trim_incomplete,
                      "Drop a final sentence without terminal punctuation before scoring");

  CorrelateOptions corr;
  auto* corr_cmd = app.add_subcommand("correlate", "Correlate scores with mean human ratings");
  corr_cmd->add_option("--scores", corr.scores)->required();
  corr_cmd->add_option("--ratings", corr.ratings, "Rated evaluation set JSONL")->required();
  corr_cmd->add_option("--aspect", corr.aspect)->required();
  corr_cmd->add_option("--out", corr.out)->required();
  corr_cmd->add_flag("--allow-missing", corr.allow_missing, "Ignore rated records that have no score");

  DriftOptions drift;
  auto* drift_cmd = app.add_subcommand("drift", "Model-drift or quality-drift analysis");
  drift_cmd->add_option("--mode", drift.mode, "model | quality")->required();
  drift_cmd->add_option("--scores", drift.scores)->required();
  drift_cmd->add_option("--ratings", drift.ratings)->required();
  drift_cmd->add_option("--aspect", drift.aspect)->required();
  drift_cmd->add_option("--out", drift.out)->required();
  drift_cmd->add_option("--seed", drift.seed, "Sampling seed for quality drift");
  drift_cmd->add_option("--sort-by", drift.sort_by, "Quartile key for quality drift: metric | human");
  drift_cmd->add_flag("--allow-missing", drift.allow_missing);

  PerturbOptions perturb;
  auto* perturb_cmd = app.add_subcommand("perturb", "Build negative samples by shuffling or dropping sentences");
  perturb_cmd->add_option("--input", perturb.input)->required();
  perturb_cmd->add_option("--strategy", perturb.strategy, "shuffle | drop")->required();
  perturb_cmd->add_option("--seed", perturb.seed)->required();
  perturb_cmd->add_option("--out", perturb.out)->required();

  SubsampleOptions sub;
  auto* sub_cmd = app.add_subcommand("subsample", "Attribute-relevance Pearson versus number of evaluators");
  sub_cmd->add_option("--input", sub.input, "Rated evaluation set JSONL")->required();
  sub_cmd->add_option("--catalog", sub.catalog)->required();
  sub_cmd->add_option("--scorer", sub.scorer);
  sub_cmd->add_option("--out", sub.out)->required();
  sub_cmd->add_option("--k", sub.k_values, "Evaluator counts (default: every count)");
  sub_cmd->add_option("--trials", sub.trials)->check(CLI::PositiveNumber);
  sub_cmd->add_option("--seed", sub.seed);

  AlphaOptions alpha;
  auto* alpha_cmd = app.add_subcommand("alpha", "Krippendorff's alpha of the human ratings");
  alpha_cmd->add_option("--ratings", alpha.ratings)->required();
  alpha_cmd->add_option("--aspect", alpha.aspect)->required();
  alpha_cmd->add_option("--level", alpha.level, "interval | ordinal");

  ServeMockOptions serve;
  auto* serve_cmd = app.add_subcommand("serve-mock", "Serve the mock scorer over the stdio protocol");
  serve_cmd->add_option("--seed", serve.seed);
  serve_cmd->add_option("--vocab", serve.vocab, "Vocabulary file");
  serve_cmd->add_flag("--uniform", serve.uniform);
  serve_cmd->add_flag("--reverse-batches", serve.reverse_batches, "Answer buffered requests in reverse order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*build_cmd) return cmd_build_iwf(build);
    if (*score_cmd) return cmd_score(score);
    if (*corr_cmd) return cmd_correlate(corr);
    if (*drift_cmd) return cmd_drift(drift);
    if (*perturb_cmd) return cmd_perturb(perturb);
    if (*sub_cmd) return cmd_subsample(sub);
    if (*alpha_cmd) return cmd_alpha(alpha);
    if (*serve_cmd) return cmd_serve_mock(serve);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
