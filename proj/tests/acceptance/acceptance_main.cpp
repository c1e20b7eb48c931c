#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctrleval/ctrleval.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ctrleval;

namespace {

/// Collects the first few mismatches of one criterion.
class Findings {
 public:
  void fail(const std::string& what) {
    if (messages_.size() < 5) messages_.push_back(what);
    ++count_;
  }
  void expect(bool ok, const std::string& what) {
    if (!ok) fail(what);
  }
  void expect_near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
      std::ostringstream s;
      s.precision(17);
      s << what << ": got " << got << " want " << want;
      fail(s.str());
    }
  }
  [[nodiscard]] bool ok() const { return count_ == 0; }
  [[nodiscard]] std::string summary() const {
    std::string out = std::to_string(count_) + " mismatches";
    for (const auto& m : messages_) out += "; " + m;
    return out;
  }

 private:
  std::vector<std::string> messages_;
  std::size_t count_ = 0;
};

struct Criterion {
  std::string name;
  double budget_seconds;  // 0 when the criterion has no runtime bound
  std::function<void(Findings&)> body;
};

void check_distribution(const AspectScore& s, Findings& f, const std::string& what) {
  double total = 0.0;
  for (const auto& p : s.parts) {
    f.expect(p.weight >= 0.0, what + ": negative weight");
    total += p.weight;
  }
  f.expect_near(total, 1.0, 1e-9, what + ": weight sum");
}

void weight_invariants(Findings& f) {
  MockBackend mock(20, default_mock_vocabulary());
  const auto table = testing_support::toy_table();
  const auto catalog = load_catalog(testing_support::data_path("catalogs/sentiment.json"));
  std::mt19937_64 rng(101);
  for (int i = 0; i < 1000; ++i) {
    const auto inst = testing_support::random_instance(rng, i % 2 ? "Negative" : "Positive", 6);
    check_distribution(score_coherence(inst, table, mock), f, "coherence " + std::to_string(i));
    check_distribution(score_consistency(inst, table, mock), f, "consistency " + std::to_string(i));
    check_distribution(score_attribute_relevance(catalog, inst, mock), f, "attr_rel " + std::to_string(i));
  }
}

AspectCatalog random_catalog(std::mt19937_64& rng, std::size_t labels) {
  static const std::vector<std::string> stems{"It was", "Overall it felt", "The topic is", "In short",
                                              "This is about", "My verdict"};
  const auto& vocab = default_mock_vocabulary();
  std::vector<PromptTemplate> prompts;
  const std::size_t n_prompts = 1 + rng() % 4;
  for (std::size_t p = 0; p < n_prompts; ++p) {
    const auto& stem = stems[rng() % stems.size()];
    if (rng() % 2) {
      prompts.push_back({"p" + std::to_string(p), "TEXT " + stem + " MASK.", Placement::text_first});
    } else {
      prompts.push_back({"p" + std::to_string(p), stem + " MASK. TEXT", Placement::prompt_first});
    }
  }
  std::vector<Verbalizer> verbalizers;
  const std::size_t n_verbalizers = 1 + rng() % 3;
  for (std::size_t v = 0; v < n_verbalizers; ++v) {
    Verbalizer verbalizer{"v" + std::to_string(v), {}};
    std::vector<std::string> words(vocab.begin(), vocab.end());
    std::shuffle(words.begin(), words.end(), rng);
    for (std::size_t a = 0; a < labels; ++a) verbalizer.mapping.emplace_back("L" + std::to_string(a), words[a]);
    verbalizers.push_back(std::move(verbalizer));
  }
  return AspectCatalog("random", std::move(prompts), std::move(verbalizers));
}

void attribute_identity(Findings& f) {
  MockBackend mock(21, default_mock_vocabulary());
  std::mt19937_64 rng(102);
  for (int i = 0; i < 500; ++i) {
    const std::size_t labels = 2 + rng() % 3;
    const auto catalog = random_catalog(rng, labels);
    const auto base = testing_support::random_instance(rng, "L0");
    double total = 0.0;
    for (const auto& label : catalog.labels().labels()) {
      total += score_attribute_relevance(catalog, make_instance(base.prefix, label, base.generated_text), mock).value;
    }
    f.expect_near(total, 1.0, 1e-6, "case " + std::to_string(i));
  }
}

void worked_example(Findings& f) {
  testing_support::ScriptedBackend b;
  b.probs = {{"p1/v", {0.3, 0.1}}, {"p2/v", {0.05, 0.05}}};
  const AspectCatalog catalog(
      "toy", {{"p1", "TEXT It was MASK.", Placement::text_first}, {"p2", "TEXT So MASK!", Placement::text_first}},
      {{"v", {{"Positive", "good"}, {"Negative", "bad"}}}});
  const auto s = score_attribute_relevance(catalog, make_instance("A", "Positive", "A b."), b);
  f.expect(s.parts.size() == 2, "two evaluators");
  if (s.parts.size() != 2) return;
  f.expect_near(s.parts[0].weight, 0.8, 1e-12, "beta_1");
  f.expect_near(s.parts[1].weight, 0.2, 1e-12, "beta_2");
  f.expect_near(s.parts[0].raw_score, 0.75, 1e-12, "s_1");
  f.expect_near(s.parts[1].raw_score, 0.5, 1e-12, "s_2");
  f.expect_near(s.value, 0.70, 1e-12, "S_AR");
}

void iwf_oracles(Findings& f) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 5; ++trial) {
    const auto lines = testing_support::toy_corpus(rng, 1000);
    std::string joined;
    for (const auto& l : lines) joined += l + "\n";
    std::istringstream stream(joined);
    const auto table = build_iwf_table(stream);
    const auto [corpus, counts] = oracle::sentence_frequencies(lines);
    f.expect(table.sentence_count() == corpus, "sentence count");
    f.expect(table.vocabulary_size() == counts.size(), "vocabulary size");
    for (const auto& [w, c] : counts) f.expect(table.frequency(w) == c, "frequency of " + w);
    for (std::size_t shards : {2u, 3u, 8u}) {
      f.expect(build_iwf_table_sharded(lines, shards) == table, "sharded build, shards=" + std::to_string(shards));
    }
    for (const auto& [w, c] : counts) f.expect_near(iwf(table, w), oracle::iwf(corpus, counts, w), 1e-12, "iwf " + w);
    f.expect_near(iwf(table, "zzunseen"), std::log1p(static_cast<double>(corpus)), 1e-12, "iwf unseen");
    std::vector<std::string> units(lines.begin(), lines.begin() + 12);
    std::vector<double> isfs;
    for (const auto& u : units) {
      double m = 0.0;
      for (const auto& w : tokenize_words(u)) m = std::max(m, oracle::iwf(corpus, counts, w));
      isfs.push_back(m);
      f.expect_near(isf(table, u), m, 1e-12, "isf");
    }
    double total = 0.0;
    for (double x : isfs) total += x;
    const auto weights = nisf_weights(table, units);
    for (std::size_t j = 0; j < units.size(); ++j) f.expect_near(weights[j], isfs[j] / total, 1e-12, "nisf");
  }
}

void correlation_oracles(Findings& f) {
  std::mt19937_64 rng(104);
  int checked = 0;
  while (checked < 200) {
    const std::size_t n = 2 + rng() % 49;
    const auto x = oracle::tied_vector(rng, n, 1 + static_cast<int>(rng() % 6));
    const auto y = oracle::tied_vector(rng, n, 1 + static_cast<int>(rng() % 6));
    if (oracle::constant(x) || oracle::constant(y)) continue;
    f.expect_near(pearson(x, y), oracle::pearson(x, y), 1e-12, "pearson");
    f.expect_near(spearman(x, y), oracle::spearman(x, y), 1e-12, "spearman");
    f.expect_near(kendall(x, y), oracle::kendall_b(x, y), 1e-12, "kendall");
    ++checked;
  }
  checked = 0;
  while (checked < 50) {
    const std::size_t items = 2 + rng() % 6, raters = 2 + rng() % 4;
    std::vector<std::vector<std::optional<double>>> m(items, std::vector<std::optional<double>>(raters));
    for (auto& row : m) {
      for (auto& v : row) {
        if (rng() % 6 != 0) v = static_cast<double>(1 + rng() % 5);
      }
    }
    double interval = 0.0, ordinal = 0.0;
    try {
      interval = krippendorff_alpha(m, AlphaLevel::interval);
      ordinal = krippendorff_alpha(m, AlphaLevel::ordinal);
    } catch (const Error&) {
      continue;
    }
    f.expect_near(interval, oracle::alpha(m, false), 1e-12, "alpha interval");
    f.expect_near(ordinal, oracle::alpha(m, true), 1e-12, "alpha ordinal");
    ++checked;
  }
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

void golden_renderings(Findings& f) {
  std::ifstream in(testing_support::golden_path("span_patterns.json"));
  for (const auto& c : nlohmann::json::parse(in)) {
    const auto inst = make_instance(c["prefix"], "Positive", c["text"]);
    const auto coh = coherence_patterns(inst);
    f.expect(coh.size() == c["coherence"].size(), "coherence count");
    for (std::size_t j = 0; j < std::min(coh.size(), c["coherence"].size()); ++j) {
      f.expect(coh[j].input_pattern == c["coherence"][j][0].get<std::string>(), "coherence input");
      f.expect(coh[j].target_span() == c["coherence"][j][1].get<std::string>(), "coherence target");
    }
    const auto cons = consistency_patterns(inst);
    f.expect(cons.size() == 2, "consistency count");
    for (std::size_t j = 0; j < std::min<std::size_t>(cons.size(), 2); ++j) {
      f.expect(cons[j].input_pattern == c["consistency"][j][0].get<std::string>(), "consistency input");
      f.expect(cons[j].target_span() == c["consistency"][j][1].get<std::string>(), "consistency target");
    }
  }
  const std::array<std::pair<std::string, std::size_t>, 2> tasks{{{"sentiment", 72}, {"topic", 32}}};
  for (const auto& [task, count] : tasks) {
    const auto catalog = load_catalog(testing_support::data_path("catalogs/" + task + ".json"));
    f.expect(catalog.evaluator_count() == count, task + " evaluator count");
    const auto golden = read_jsonl(testing_support::golden_path("attribute_" + task + ".jsonl"));
    const auto inst = make_instance("The food", catalog.labels().labels().front(),
                                    "The food was fresh. The staff were kind!");
    const auto evaluators = attribute_patterns(catalog, inst);
    f.expect(evaluators.size() == golden.size(), task + " golden count");
    for (std::size_t j = 0; j < std::min(evaluators.size(), golden.size()); ++j) {
      f.expect(evaluators[j].pattern.input_pattern == golden[j]["input"].get<std::string>(),
               task + " input " + std::to_string(j));
      f.expect(evaluators[j].pattern.target_words().words == golden[j]["candidates"].get<std::vector<std::string>>(),
               task + " candidates " + std::to_string(j));
    }
  }
  const auto sentiment = load_catalog(testing_support::data_path("catalogs/sentiment.json"));
  const auto topic = load_catalog(testing_support::data_path("catalogs/topic.json"));
  f.expect(sentiment.prompts().size() == 24 && sentiment.verbalizers().size() == 3, "sentiment 24x3");
  f.expect(topic.prompts().size() == 32 && topic.verbalizers().size() == 1, "topic 32x1");
}

void quality_drift_sampler(Findings& f) {
  std::vector<std::string> ids;
  std::vector<double> keys;
  for (int i = 0; i < 8; ++i) {
    ids.push_back("id" + std::to_string(i));
    keys.push_back(i);
  }
  std::array<std::array<double, 4>, 4> hits{};
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) {
    const auto split = quality_drift_subsets(ids, keys, static_cast<std::uint64_t>(t));
    for (int j = 0; j < 4; ++j) {
      for (auto item : split.subsets[j]) hits[split.quartile[item]][j] += 0.5;
    }
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      f.expect_near(hits[i][j] / trials, 1.0 / (std::abs(j - i) + 1.0), 0.02,
                    "pair (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("'") + CTRLEVAL_CLI + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void end_to_end_determinism(Findings& f) {
  testing_support::TempDir dir;
  testing_support::write_file(dir.file("corpus.txt"), "the cat sat\nthe dog ran\na cat ran\n");
  testing_support::write_file(dir.file("set.jsonl"), testing_support::synthetic_eval_set(100, 105));
  const auto catalog_path = testing_support::data_path("catalogs/sentiment.json");
  f.expect(run_cli("build-iwf --corpus " + dir.file("corpus.txt") + " --out " + dir.file("toy.iwf")) == 0,
           "build-iwf exit");
  const std::string score = "score --aspect all --scorer mock:7 --input " + dir.file("set.jsonl") + " --iwf " +
                            dir.file("toy.iwf") + " --catalog " + catalog_path + " --out ";
  f.expect(run_cli(score + dir.file("a.jsonl")) == 0, "first score exit");
  f.expect(run_cli(score + dir.file("b.jsonl")) == 0, "second score exit");
  const auto a = testing_support::read_file(dir.file("a.jsonl"));
  f.expect(!a.empty() && a == testing_support::read_file(dir.file("b.jsonl")), "score outputs differ");
  f.expect(read_jsonl(dir.file("a.jsonl")).size() == 301, "score output line count");

  const auto catalog = load_catalog(catalog_path);
  const auto records = read_eval_set(dir.file("set.jsonl"));
  MockBackend mock(7, default_mock_vocabulary());
  const std::vector<std::size_t> ks{catalog.evaluator_count()};
  const auto report = evaluator_subsample_report(catalog, records, mock, ks, 10, 3);
  f.expect(report.size() == 1 && report[0].stddev_pearson == 0.0, "stddev at k=N_AR is not zero");
}

void direction_sanity(Findings& f) {
  const auto catalog = load_catalog(testing_support::data_path("catalogs/sentiment.json"));
  std::map<std::string, std::size_t> word_label;
  for (const auto& v : catalog.verbalizers()) {
    for (std::size_t a = 0; a < v.mapping.size(); ++a) word_label[v.mapping[a].second] = a;
  }
  std::mt19937_64 rng(106);
  std::vector<std::pair<std::string, std::size_t>> texts;
  for (int i = 0; i < 100; ++i) {
    const auto inst = testing_support::random_instance(rng, "Positive");
    texts.emplace_back(inst.generated_text + " Item " + std::to_string(i) + ".", static_cast<std::size_t>(i % 2));
  }
  // Favors the true label's word by a noisy margin; the truth is looked up
  // from the text embedded in the rendered prompt.
  testing_support::FunctionBackend biased([&](const std::string& input, const std::vector<std::string>& words) {
    std::size_t truth = 0;
    for (const auto& [text, label] : texts) {
      if (input.find(text) != std::string::npos) truth = label;
    }
    CounterRng noise(std::hash<std::string>{}(input));
    std::vector<double> probs;
    for (const auto& w : words) {
      const double base = 0.01 + 0.2 * noise.next_double();
      probs.push_back(word_label.at(w) == truth ? base + 0.05 : base);
    }
    return probs;
  });
  const auto& labels = catalog.labels().labels();
  double correct = 0.0, wrong = 0.0;
  for (const auto& [text, truth] : texts) {
    const auto prefix = text.substr(0, text.find(' ', 4));
    correct += score_attribute_relevance(catalog, make_instance(prefix, labels[truth], text), biased).value;
    wrong += score_attribute_relevance(catalog, make_instance(prefix, labels[1 - truth], text), biased).value;
  }
  correct /= static_cast<double>(texts.size());
  wrong /= static_cast<double>(texts.size());
  f.expect(correct > wrong, "correct mean " + std::to_string(correct) + " <= mislabeled mean " + std::to_string(wrong));
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"weight distributions sum to one and are nonnegative (1000 instances per aspect)", 10.0, weight_invariants},
      {"attribute relevance sums to one over labels (500 random cases, 2-4 labels)", 10.0, attribute_identity},
      {"worked attribute relevance example gives 0.70", 0.0, worked_example},
      {"IWF/ISF/NISF match brute-force oracles; sharded build equals single pass", 0.0, iwf_oracles},
      {"pearson/spearman/kendall and alpha match oracles", 30.0, correlation_oracles},
      {"pattern renderings match golden files; catalogs have 72 and 32 evaluators", 0.0, golden_renderings},
      {"quality-drift inclusion frequencies within 0.02 (100k trials)", 20.0, quality_drift_sampler},
      {"score output is byte-identical across runs; subsample at k=N_AR has zero spread", 0.0,
       end_to_end_determinism},
      {"correctly labeled mean attribute relevance exceeds mislabeled", 0.0, direction_sanity},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Findings findings;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.body(findings);
    } catch (const std::exception& e) {
      findings.fail(std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0.0 && seconds > c.budget_seconds) {
      findings.fail("took " + std::to_string(seconds) + " s, budget " + std::to_string(c.budget_seconds) + " s");
    }
    const bool ok = findings.ok();
    if (!ok) ++failures;
    std::ostringstream line;
    line.precision(3);
    line << (ok ? "PASS" : "FAIL") << "  " << c.name << "  [" << std::fixed << seconds << " s]";
    if (!ok) line << "  " << findings.summary();
    std::cout << line.str() << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
