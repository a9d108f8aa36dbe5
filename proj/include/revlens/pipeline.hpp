#pragma once

// Stage orchestration: ingest, discrepancy, aspects, index, topics, qa and
// eval run independently, linked only by their data dependencies. Outputs
// land in a run directory named from the config hash.

#include <array>
#include <cerrno>
#include <csignal>
#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "revlens/aspects.hpp"
#include "revlens/config.hpp"
#include "revlens/corpus.hpp"
#include "revlens/csv.hpp"
#include "revlens/error.hpp"
#include "revlens/lexicon_sentiment.hpp"
#include "revlens/llm_gateway.hpp"
#include "revlens/ragqa.hpp"
#include "revlens/topics.hpp"
#include "revlens/vector_retrieval.hpp"

namespace revlens::pipeline {

enum class Stage { ingest, discrepancy, aspects, index, topics, qa, eval };

inline constexpr std::array<Stage, 7> kStages{Stage::ingest, Stage::discrepancy, Stage::aspects, Stage::index,
                                              Stage::topics, Stage::qa,          Stage::eval};

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::discrepancy: return "discrepancy";
    case Stage::aspects: return "aspects";
    case Stage::index: return "index";
    case Stage::topics: return "topics";
    case Stage::qa: return "qa";
    case Stage::eval: return "eval";
  }
  return "?";
}

inline Stage stage_from_string(std::string_view s) {
  for (auto st : kStages)
    if (s == to_string(st)) return st;
  throw Error("invalid_stage", "unknown stage '" + std::string(s) + "'");
}

inline std::set<Stage> all_stages() { return {kStages.begin(), kStages.end()}; }

class PrerequisiteError : public Error {
 public:
  explicit PrerequisiteError(const std::string& message) : Error("missing_prerequisite", message) {}
};

// File names inside a run directory.
namespace files {
inline const std::string corpus = "corpus.jsonl";
inline const std::string ingest_report = "ingest_report.json";
inline const std::string discrepancy = "discrepancy.jsonl";
inline const std::string histogram = "discrepancy_histogram.csv";
inline const std::string predictions = "aspects_predictions.jsonl";
inline const std::string index = "index.bin";
inline const std::string topics_json = "topics.json";
inline const std::string answers = "qa_answers.jsonl";
inline const std::string annotation = "annotation_sheet.csv";
inline const std::string bundle = "bundle.json";
inline const std::string lock = ".lock";

inline const std::string aspect_extraction_table = "aspect_extraction.csv";
inline const std::string sentiment_table = "sentiment_metrics.csv";
inline const std::string distribution_table = "sentiment_distribution.csv";
inline const std::string topic_table = "topics.csv";
inline const std::string silhouette_table = "silhouette.csv";
inline const std::string qa_table = "qa_metrics.csv";
}  // namespace files

inline std::filesystem::path run_dir(const std::filesystem::path& out_root, const Config& cfg) {
  return out_root / ("run-" + cfg.hash());
}

// ---------------------------------------------------------------- bundle

struct SentimentDistributions {
  aspects::Distribution llm;
  aspects::Distribution lexicon;
};

struct ReportBundle {
  nlohmann::json config;  // Config::snapshot()
  std::vector<std::string> stages;
  std::optional<DiscrepancySummary> discrepancy;
  std::optional<aspects::ExtractionReport> extraction;
  std::optional<aspects::SentimentReport> sentiment;
  std::optional<SentimentDistributions> distribution;
  std::optional<std::vector<topics::TopicCluster>> topics;
  std::optional<double> silhouette;
  std::optional<std::vector<ragqa::QAMetricsRow>> qa_metrics;
  std::string model_name = "LLM";  // row label in the extraction table
  nlohmann::json audit = nlohmann::json::object();  // {log, trace, entries}
  std::vector<std::string> artifacts;  // relative to the run directory, sorted
};

namespace detail {

inline nlohmann::json cite(const nlohmann::json& snap, std::initializer_list<const char*> keys) {
  nlohmann::json j{{"config_hash", snap.value("config_hash", "")}};
  for (const char* k : keys)
    if (snap.contains(k)) j[k] = snap[k];
  return j;
}

inline nlohmann::json template_ids(const nlohmann::json& snap, std::initializer_list<const char*> keys) {
  nlohmann::json j = nlohmann::json::object();
  for (const char* k : keys) j[k] = snap.at("templates").value(k, "");
  return j;
}

inline nlohmann::json distribution_json(const aspects::Distribution& d) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : d) j[k] = v;
  return j;
}

}  // namespace detail

// Every section carries the slice of the config that produced it.
inline nlohmann::json to_json(const ReportBundle& b) {
  const auto& s = b.config;
  nlohmann::json j{{"config", s}, {"stages", b.stages}, {"audit", b.audit}, {"artifacts", b.artifacts}};
  if (b.discrepancy)
    j["discrepancy"] = {{"summary", to_json(*b.discrepancy)}, {"config", detail::cite(s, {"star_mapping"})}};
  if (b.extraction || b.sentiment) {
    nlohmann::json a{{"model", b.model_name}};
    if (b.extraction) a["extraction"] = aspects::to_json(*b.extraction);
    if (b.sentiment) a["sentiment"] = aspects::to_json(*b.sentiment);
    a["config"] = detail::cite(s, {"match_policy", "sentiment_mode", "consistency_threshold", "backend_kind"});
    a["config"]["templates"] = detail::template_ids(s, {"aspect_extract", "aspect_sentiment"});
    j["aspect_eval"] = a;
  }
  if (b.distribution) {
    j["sentiment_distribution"] = {{"llm", detail::distribution_json(b.distribution->llm)},
                                   {"lexicon", detail::distribution_json(b.distribution->lexicon)},
                                   {"config", detail::cite(s, {"consistency_threshold", "backend_kind"})}};
    j["sentiment_distribution"]["config"]["templates"] =
        detail::template_ids(s, {"aspect_extract", "aspect_sentiment", "recommend"});
  }
  if (b.topics) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : *b.topics) rows.push_back(topics::to_json(t));
    j["topics"] = {{"table", rows},
                   {"silhouette", b.silhouette ? nlohmann::json(*b.silhouette) : nlohmann::json(nullptr)},
                   {"config", detail::cite(s, {"embedder", "chunk_size", "chunk_overlap", "target_dim",
                                               "min_cluster_size", "silhouette_space", "silhouette_noise"})}};
    j["topics"]["config"]["templates"] = detail::template_ids(s, {"topic_label", "topic_summary"});
  }
  if (b.qa_metrics) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : *b.qa_metrics)
      rows.push_back({{"query", r.query}, {"avg_cosine", r.avg_cosine}, {"diversity", r.diversity}, {"k", r.k}});
    j["qa_metrics"] = {{"table", rows}, {"config", detail::cite(s, {"embedder", "k", "evidence_floor"})}};
    j["qa_metrics"]["config"]["templates"] = detail::template_ids(s, {"qa"});
  }
  return j;
}

inline std::string serialize(const ReportBundle& b) { return to_json(b).dump(2) + "\n"; }

// One CSV per table. Sections the bundle lacks produce header-only files,
// or are skipped when `present_only` is set. Returns the written paths in a
// fixed order.
inline std::vector<std::filesystem::path> export_tables(const ReportBundle& b, const std::filesystem::path& dir,
                                                        bool present_only = false) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  auto skip = [&](bool present) { return present_only && !present; };
  auto open = [&](const std::string& name) {
    out.push_back(dir / name);
    std::ofstream f(out.back(), std::ios::binary);
    if (!f) throw IoError("cannot write " + out.back().string());
    return f;
  };
  if (!skip(b.discrepancy.has_value())) {
    auto f = open(files::histogram);
    if (b.discrepancy) {
      write_histogram_csv(b.discrepancy->histogram, f);
    } else {
      csv::write_row(f, {"bin_lo", "bin_hi", "count"});
    }
  }
  if (!skip(b.extraction.has_value())) {
    auto f = open(files::aspect_extraction_table);
    csv::write_row(f, {"model", "precision", "recall", "f1"});
    if (b.extraction)
      csv::write_row(f, {b.model_name, csv::fixed(b.extraction->precision, 3), csv::fixed(b.extraction->recall, 3),
                         csv::fixed(b.extraction->f1, 3)});
  }
  if (!skip(b.sentiment.has_value())) {
    auto f = open(files::sentiment_table);
    if (b.sentiment) {
      aspects::write_sentiment_table_csv(*b.sentiment, f);
    } else {
      csv::write_row(f, {"sentiment", "precision", "recall", "f1", "support"});
    }
  }
  if (!skip(b.distribution.has_value())) {
    auto f = open(files::distribution_table);
    csv::write_row(f, {"model", "positive", "negative", "neutral"});
    if (b.distribution) {
      for (const auto& [name, d] : {std::pair{b.model_name, b.distribution->llm}, std::pair{std::string("VADER"), b.distribution->lexicon}})
        csv::write_row(f, {name, csv::fixed(d.at("positive"), 3), csv::fixed(d.at("negative"), 3),
                           csv::fixed(d.at("neutral"), 3)});
    }
  }
  if (!skip(b.topics.has_value())) {
    auto f = open(files::topic_table);
    topics::write_topic_table_csv(b.topics ? *b.topics : std::vector<topics::TopicCluster>{}, f);
  }
  if (!skip(b.topics.has_value())) {
    auto f = open(files::silhouette_table);
    csv::write_row(f, {"metric", "score"});
    if (b.silhouette) csv::write_row(f, {"Silhouette Score", csv::fixed(*b.silhouette, 4)});
  }
  if (!skip(b.qa_metrics.has_value())) {
    auto f = open(files::qa_table);
    ragqa::write_metrics_csv(b.qa_metrics ? *b.qa_metrics : std::vector<ragqa::QAMetricsRow>{}, f);
  }
  return out;
}

// ---------------------------------------------------------------- run lock

// One pipeline run per run directory. A lock left by a dead process is
// taken over.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir) : path_(dir / files::lock) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        auto pid = std::to_string(::getpid());
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        return;
      }
      if (errno != EEXIST) throw IoError("cannot create lock " + path_.string());
      std::ifstream in(path_);
      long holder = 0;
      in >> holder;
      if (holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno != ESRCH))
        throw Error("run_locked", "another run holds " + path_.string() + " (pid " + std::to_string(holder) + ")");
      std::filesystem::remove(path_);
    }
    throw Error("run_locked", "cannot acquire " + path_.string());
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------- stages

struct RunOptions {
  std::filesystem::path out_root = "out";
  std::shared_ptr<llm::Backend> backend;  // replaces the configured backend when set
  std::optional<std::filesystem::path> corpus;  // replaces corpus.path when set
  std::function<void(Stage, double)> progress;  // fraction of requested stages finished
};

struct RunResult {
  ReportBundle bundle;
  std::filesystem::path dir;
};

inline std::string stage_label(const std::set<Stage>& stages) {
  std::string out;
  for (auto s : kStages)
    if (stages.count(s)) out += (out.empty() ? "" : "+") + std::string(to_string(s));
  return out;
}

inline ReviewCorpus load_corpus(const Config& cfg, const std::filesystem::path& path, LoadReport* report = nullptr) {
  auto loaded = load_reviews(path, cfg.corpus.schema);
  if (report) *report = loaded.report;
  auto corpus = std::move(loaded.corpus);
  if (cfg.corpus.deduplicate) corpus = deduplicate(corpus).corpus;
  if (cfg.corpus.english_only) corpus = filter_english(corpus).corpus;
  return corpus;
}

inline std::vector<aspects::SentenceInput> aspect_sentences(const Config& cfg) {
  std::vector<aspects::SentenceInput> out;
  if (cfg.aspects.sentences) {
    std::ifstream in(*cfg.aspects.sentences, std::ios::binary);
    if (!in) throw IoError("cannot open sentences " + cfg.aspects.sentences->string());
    auto rows = csv::read(in);
    if (rows.empty()) throw ParseError(cfg.aspects.sentences->string() + ": empty file");
    auto col = [&](const std::string& name) {
      auto it = std::find(rows[0].begin(), rows[0].end(), name);
      if (it == rows[0].end()) throw Error("schema_error", cfg.aspects.sentences->string() + ": missing column '" + name + "'");
      return static_cast<std::size_t>(it - rows[0].begin());
    };
    auto id = col("sentence_id"), s = col("sentence");
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].size() > std::max(id, s)) out.push_back({rows[i][id], rows[i][s]});
    return out;
  }
  if (cfg.aspects.gold) {
    for (const auto& g : aspects::load_gold_csv(*cfg.aspects.gold)) out.push_back({g.sentence_id, g.sentence});
    return out;
  }
  throw PrerequisiteError("aspects stage needs aspects.sentences or aspects.gold in the config");
}

namespace detail {

template <class Fn>
void write_file(const std::filesystem::path& p, Fn fn) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  fn(out);
  if (!out) throw IoError("write failed for " + p.string());
}

inline void trace_line(std::ostream& out, const std::string& artifact, const std::string& key,
                       const std::vector<std::uint64_t>& ids) {
  out << nlohmann::json{{"artifact", artifact}, {"key", key}, {"exchange_ids", ids}}.dump() << '\n';
}

}  // namespace detail

// Runs the requested stages in dependency order. Topics and qa use the index
// built in this run or left in the run directory by an earlier one; eval
// uses this run's predictions or earlier ones.
inline RunResult run_pipeline(const Config& cfg, const std::set<Stage>& stages, const RunOptions& opt = {}) {
  if (stages.empty()) throw PreconditionError("no stages requested");
  RunResult res;
  res.dir = run_dir(opt.out_root, cfg);
  const auto& dir = res.dir;
  auto has = [&](Stage s) { return stages.count(s) > 0; };
  auto at = [&](const std::string& name) { return dir / name; };

  // Prerequisites are checked before any work.
  if ((has(Stage::topics) || has(Stage::qa)) && !has(Stage::index) && !std::filesystem::exists(at(files::index)))
    throw PrerequisiteError(std::string(has(Stage::topics) ? "topics" : "qa") +
                            " needs a vector index: run the index stage first");
  if (has(Stage::eval)) {
    if (!cfg.aspects.gold) throw PrerequisiteError("eval needs aspects.gold in the config");
    if (!std::filesystem::exists(*cfg.aspects.gold))
      throw PrerequisiteError("gold file " + cfg.aspects.gold->string() + " does not exist");
    if (!has(Stage::aspects) && !std::filesystem::exists(at(files::predictions)))
      throw PrerequisiteError("eval needs aspect predictions: run the aspects stage first");
  }
  if (has(Stage::qa) && cfg.qa.queries.empty()) throw PrerequisiteError("qa needs at least one entry in qa.queries");

  std::filesystem::create_directories(dir);
  RunLock lock(dir);

  auto& b = res.bundle;
  b.config = cfg.snapshot();
  for (auto s : kStages)
    if (has(s)) b.stages.push_back(to_string(s));
  b.model_name = "LLM (" + cfg.backend.value("kind", std::string("stub")) + ")";

  auto backend = opt.backend ? opt.backend : llm::make_backend(cfg.backend, cfg.base_dir);
  llm::Gateway gw(backend, nullptr, cfg.retry);
  const auto label = stage_label(stages);
  const auto audit_name = "audit-" + label + ".jsonl";
  const auto trace_name = "trace-" + label + ".jsonl";
  std::ostringstream trace;
  std::set<std::string> artifacts;

  std::size_t finished = 0;
  auto done = [&](Stage s) {
    ++finished;
    if (opt.progress) opt.progress(s, static_cast<double>(finished) / static_cast<double>(stages.size()));
  };

  std::optional<ReviewCorpus> corpus;
  auto need_corpus = [&]() -> const ReviewCorpus& {
    if (!corpus) corpus = load_corpus(cfg, opt.corpus.value_or(cfg.corpus.path));
    return *corpus;
  };
  std::optional<Lexicon> lexicon;
  auto need_lexicon = [&]() -> const Lexicon& {
    if (!lexicon) {
      lexicon = load_lexicon(cfg.lexicon);
      if (cfg.emoji) load_emoji_descriptions(*lexicon, *cfg.emoji);
    }
    return *lexicon;
  };
  auto embedder = make_embedder(cfg.embedder);
  std::optional<VectorIndex> index;
  auto need_index = [&]() -> const VectorIndex& {
    if (!index) index = VectorIndex::load(at(files::index));
    return *index;
  };

  if (has(Stage::ingest)) {
    LoadReport report;
    corpus = load_corpus(cfg, opt.corpus.value_or(cfg.corpus.path), &report);
    detail::write_file(at(files::corpus), [&](std::ostream& o) { write_reviews_jsonl(*corpus, o); });
    nlohmann::json rej = nlohmann::json::array();
    for (const auto& r : report.rejections) rej.push_back({{"row", r.row}, {"reason", r.reason}});
    detail::write_file(at(files::ingest_report), [&](std::ostream& o) {
      o << nlohmann::json{{"loaded", report.loaded}, {"kept", corpus->size()}, {"rejections", rej}}.dump(2) << '\n';
    });
    artifacts.insert({files::corpus, files::ingest_report});
    done(Stage::ingest);
  }

  if (has(Stage::discrepancy)) {
    auto d = corpus_discrepancy_summary(need_corpus(), need_lexicon(), cfg.star_mapping);
    detail::write_file(at(files::discrepancy), [&](std::ostream& o) { write_discrepancy_jsonl(d, o); });
    b.discrepancy = d.summary;
    artifacts.insert({files::discrepancy, files::histogram});
    done(Stage::discrepancy);
  }

  std::optional<std::vector<aspects::AspectMention>> predictions;
  if (has(Stage::aspects)) {
    auto results = aspects::analyze_sentences(aspect_sentences(cfg), gw, cfg.aspects.templates, need_lexicon(),
                                              cfg.aspects.options);
    detail::write_file(at(files::predictions), [&](std::ostream& o) { aspects::write_predictions_jsonl(results, o); });
    for (const auto& r : results) detail::trace_line(trace, files::predictions, r.sentence_id, r.exchange_ids);
    predictions = aspects::all_mentions(results);
    if (!predictions->empty())
      b.distribution = SentimentDistributions{aspects::sentiment_distribution(*predictions),
                                              aspects::lexicon_distribution(results)};
    artifacts.insert({files::predictions, files::distribution_table});
    done(Stage::aspects);
  }

  if (has(Stage::index)) {
    index = build_index(chunk_corpus(need_corpus(), cfg.chunking), *embedder);
    index->save(at(files::index));
    artifacts.insert({files::index, files::index + ".chunks.jsonl"});
    done(Stage::index);
  }

  if (has(Stage::topics)) {
    const auto& idx = need_index();
    topics::PcaReducer reducer;
    auto model = topics::discover_topics(idx, reducer, cfg.topics.options);
    topics::describe_topics(model, idx, gw, cfg.topics.templates, cfg.topics.options);
    nlohmann::json list = nlohmann::json::array();
    for (const auto& t : model.topics) {
      auto j = topics::to_json(t, true);
      j["exchange_ids"] = t.exchange_ids;
      list.push_back(j);
      detail::trace_line(trace, files::topic_table, std::to_string(t.topic_id), t.exchange_ids);
    }
    detail::write_file(at(files::topics_json), [&](std::ostream& o) {
      o << nlohmann::json{{"topics", list},
                          {"noise", model.noise},
                          {"silhouette", model.silhouette ? nlohmann::json(*model.silhouette) : nlohmann::json(nullptr)}}
               .dump()
        << '\n';
    });
    b.topics = model.topics;
    b.silhouette = model.silhouette;
    artifacts.insert({files::topics_json, files::topic_table, files::silhouette_table});
    done(Stage::topics);
  }

  if (has(Stage::qa)) {
    const auto& idx = need_index();
    std::vector<ragqa::Answer> answers;
    for (const auto& q : cfg.qa.queries) {
      answers.push_back(ragqa::answer(q, idx, *embedder, gw, cfg.qa.tmpl, cfg.qa.options));
      detail::trace_line(trace, files::answers, q, answers.back().exchange_ids);
    }
    detail::write_file(at(files::answers), [&](std::ostream& o) { ragqa::write_answers_jsonl(answers, o); });
    std::vector<ragqa::Answer> sample(answers.begin(),
                                      answers.begin() + static_cast<std::ptrdiff_t>(std::min(answers.size(), cfg.qa.annotation_sample)));
    if (!sample.empty()) {
      detail::write_file(at(files::annotation), [&](std::ostream& o) { ragqa::export_annotation_sheet(sample, idx, o); });
      artifacts.insert(files::annotation);
    }
    b.qa_metrics = ragqa::qa_proxy_metrics(cfg.qa.queries, idx, *embedder, cfg.qa.options.k);
    artifacts.insert({files::answers, files::qa_table});
    done(Stage::qa);
  }

  if (has(Stage::eval)) {
    if (!predictions) {
      std::ifstream in(at(files::predictions));
      predictions = aspects::read_predictions_jsonl(in);
    }
    auto gold = aspects::load_gold_csv(*cfg.aspects.gold);
    b.extraction = aspects::evaluate_extraction(*predictions, gold, cfg.aspects.policy);
    b.sentiment = aspects::evaluate_sentiment(*predictions, gold, cfg.aspects.policy, cfg.aspects.mode);
    artifacts.insert({files::aspect_extraction_table, files::sentiment_table});
    done(Stage::eval);
  }

  detail::write_file(at(audit_name), [&](std::ostream& o) { gw.audit().write_jsonl(o); });
  detail::write_file(at(trace_name), [&](std::ostream& o) { o << trace.str(); });
  b.audit = {{"log", audit_name}, {"trace", trace_name}, {"entries", gw.audit().size()}};
  artifacts.insert({audit_name, trace_name, files::bundle});
  b.artifacts.assign(artifacts.begin(), artifacts.end());

  export_tables(b, dir, true);
  detail::write_file(at(files::bundle), [&](std::ostream& o) { o << serialize(b); });
  return res;
}

inline std::optional<nlohmann::json> read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

}  // namespace revlens::pipeline
