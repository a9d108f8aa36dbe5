#pragma once

// Run configuration: one JSON document with nested sections. Relative paths
// resolve against the directory holding the config file.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "revlens/aspects.hpp"
#include "revlens/corpus.hpp"
#include "revlens/error.hpp"
#include "revlens/lexicon_sentiment.hpp"
#include "revlens/llm_gateway.hpp"
#include "revlens/ragqa.hpp"
#include "revlens/topics.hpp"
#include "revlens/vector_retrieval.hpp"

namespace revlens {

struct Config {
  nlohmann::json raw;
  std::filesystem::path base_dir;

  struct Corpus {
    std::filesystem::path path;
    SchemaMapping schema = SchemaMapping::canonical();
    bool deduplicate = true;
    bool english_only = true;
  } corpus;

  std::filesystem::path lexicon;
  std::optional<std::filesystem::path> emoji;
  StarMapping star_mapping = StarMapping::continuous;

  nlohmann::json backend = nlohmann::json{{"kind", "stub"}};
  llm::RetryPolicy retry;

  struct Aspects {
    std::optional<std::filesystem::path> sentences;  // CSV with sentence_id, sentence
    std::optional<std::filesystem::path> gold;
    aspects::PipelineOptions options;
    aspects::MatchPolicy policy = aspects::MatchPolicy::exact;
    aspects::SentimentMode mode = aspects::SentimentMode::matched;
    aspects::Templates templates = aspects::default_templates();
  } aspects;

  ChunkingOptions chunking;
  nlohmann::json embedder = nlohmann::json{{"kind", "hashed"}};

  struct Topics {
    topics::TopicOptions options;
    topics::Templates templates = topics::default_templates();
  } topics;

  struct QA {
    ragqa::QAOptions options;
    std::vector<std::string> queries;
    llm::PromptTemplate tmpl = ragqa::default_template();
    std::size_t annotation_sample = 20;
  } qa;

  struct Service {
    std::string host = "127.0.0.1";
    int port = 8080;
  } service;

  // First 16 hex digits of the SHA-256 of the canonical config document.
  std::string hash() const { return llm::sha256_hex(raw.dump()).substr(0, 16); }

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_relative() ? base_dir / p : p;
  }

  // Template ids, thresholds and sizes that shape the reported numbers.
  nlohmann::json snapshot() const {
    return {{"config_hash", hash()},
            {"templates",
             {{"aspect_extract", aspects.templates.extract.template_id},
              {"aspect_sentiment", aspects.templates.classify.template_id},
              {"recommend", aspects.templates.recommend.template_id},
              {"topic_label", topics.templates.label.template_id},
              {"topic_summary", topics.templates.summary.template_id},
              {"qa", qa.tmpl.template_id}}},
            {"consistency_threshold", aspects.options.consistency_threshold},
            {"match_policy", aspects::to_string(aspects.policy)},
            {"sentiment_mode", aspects.mode == aspects::SentimentMode::matched ? "matched" : "all_gold"},
            {"star_mapping", star_mapping == StarMapping::continuous ? "continuous" : "rounded"},
            {"chunk_size", chunking.chunk_size},
            {"chunk_overlap", chunking.overlap},
            {"embedder", embedder},
            {"target_dim", topics.options.target_dim},
            {"min_cluster_size", topics.options.hdbscan.min_cluster_size},
            {"silhouette_space", topics.options.silhouette_on_reduced ? "reduced" : "full"},
            {"silhouette_noise", topics.options.silhouette_noise == topics::NoisePolicy::exclude ? "exclude" : "as_cluster"},
            {"k", qa.options.k},
            {"evidence_floor", qa.options.floor},
            {"backend_kind", backend.value("kind", "stub")}};
  }
};

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& doc) : doc_(doc) {}

  const nlohmann::json* find(const std::string& dotted) const {
    const nlohmann::json* cur = &doc_;
    std::size_t start = 0;
    while (start <= dotted.size()) {
      auto dot = dotted.find('.', start);
      auto key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!cur->is_object() || !cur->contains(key)) return nullptr;
      cur = &(*cur)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    return cur;
  }

  template <class T>
  std::optional<T> opt(const std::string& field) const {
    const auto* v = find(field);
    if (!v || v->is_null()) return std::nullopt;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError(field, "must be true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw ConfigError(field, "must be an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v->get<long long>() < 0) throw ConfigError(field, "must not be negative");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw ConfigError(field, "must be a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw ConfigError(field, "must be a string");
      }
      return v->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field, e.what());
    }
  }

  template <class T>
  T get(const std::string& field, T fallback) const {
    return opt<T>(field).value_or(std::move(fallback));
  }

  template <class T>
  T require(const std::string& field) const {
    auto v = opt<T>(field);
    if (!v) throw ConfigError(field, "required");
    return *v;
  }

 private:
  const nlohmann::json& doc_;
};

inline llm::PromptTemplate template_at(const ConfigReader& r, const Config& c, const std::string& field,
                                       llm::PromptTemplate fallback) {
  auto p = r.opt<std::string>(field);
  if (!p) return fallback;
  try {
    return llm::load_template(c.resolve(*p));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace detail

inline Config parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  if (!doc.is_object()) throw ConfigError("(root)", "config must be a JSON object");
  static const std::set<std::string> sections{"corpus", "lexicon", "discrepancy", "backend", "retry", "aspects",
                                              "chunking", "embedder", "topics", "qa", "service"};
  for (const auto& [key, value] : doc.items())
    if (!sections.count(key)) throw ConfigError(key, "unknown section");

  Config c;
  c.raw = doc;
  c.base_dir = base_dir;
  detail::ConfigReader r(doc);

  c.corpus.path = c.resolve(r.require<std::string>("corpus.path"));
  if (const auto* s = r.find("corpus.schema")) c.corpus.schema = SchemaMapping::from_json(*s);
  c.corpus.deduplicate = r.get("corpus.deduplicate", true);
  c.corpus.english_only = r.get("corpus.english_only", true);

  c.lexicon = c.resolve(r.require<std::string>("lexicon.path"));
  if (auto e = r.opt<std::string>("lexicon.emoji_path")) c.emoji = c.resolve(*e);
  auto mapping = r.get<std::string>("discrepancy.star_mapping", "continuous");
  if (mapping == "continuous") {
    c.star_mapping = StarMapping::continuous;
  } else if (mapping == "rounded") {
    c.star_mapping = StarMapping::rounded;
  } else {
    throw ConfigError("discrepancy.star_mapping", "expected continuous or rounded, got '" + mapping + "'");
  }

  if (const auto* b = r.find("backend")) {
    if (!b->is_object()) throw ConfigError("backend", "must be an object");
    c.backend = *b;
    if (c.backend.contains("fixtures") && c.backend["fixtures"].is_string())
      c.backend["fixtures"] = c.resolve(c.backend["fixtures"].get<std::string>()).string();
  }
  try {
    llm::make_backend(c.backend, c.base_dir);  // validates kind, endpoint and fixtures
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("backend", e.what());
  }
  c.retry.retry_budget = r.get("retry.budget", c.retry.retry_budget);
  if (c.retry.retry_budget < 0) throw ConfigError("retry.budget", "must be >= 0");
  c.retry.base_delay = std::chrono::milliseconds(r.get<long long>("retry.base_delay_ms", c.retry.base_delay.count()));
  c.retry.multiplier = r.get("retry.multiplier", c.retry.multiplier);
  c.retry.max_delay = std::chrono::milliseconds(r.get<long long>("retry.max_delay_ms", c.retry.max_delay.count()));

  if (auto p = r.opt<std::string>("aspects.sentences")) c.aspects.sentences = c.resolve(*p);
  if (auto p = r.opt<std::string>("aspects.gold")) c.aspects.gold = c.resolve(*p);
  c.aspects.options.consistency = r.get("aspects.consistency", true);
  c.aspects.options.consistency_threshold = r.get("aspects.consistency_threshold", 0.5);
  c.aspects.options.workers = r.get<std::size_t>("aspects.workers", 1);
  auto policy = r.get<std::string>("aspects.match_policy", "exact");
  try {
    c.aspects.policy = aspects::match_policy_from_string(policy);
  } catch (const Error& e) {
    throw ConfigError("aspects.match_policy", e.what());
  }
  auto mode = r.get<std::string>("aspects.sentiment_mode", "matched");
  if (mode == "matched") {
    c.aspects.mode = aspects::SentimentMode::matched;
  } else if (mode == "all_gold") {
    c.aspects.mode = aspects::SentimentMode::all_gold;
  } else {
    throw ConfigError("aspects.sentiment_mode", "expected matched or all_gold, got '" + mode + "'");
  }
  auto& at = c.aspects.templates;
  at.extract = detail::template_at(r, c, "aspects.templates.extract", at.extract);
  at.classify = detail::template_at(r, c, "aspects.templates.classify", at.classify);
  at.recommend = detail::template_at(r, c, "aspects.templates.recommend", at.recommend);

  c.chunking.chunk_size = r.get("chunking.chunk_size", c.chunking.chunk_size);
  c.chunking.overlap = r.get("chunking.overlap", c.chunking.overlap);
  try {
    validate(c.chunking);
  } catch (const Error& e) {
    throw ConfigError("chunking", e.what());
  }
  if (const auto* e = r.find("embedder")) {
    if (!e->is_object()) throw ConfigError("embedder", "must be an object");
    c.embedder = *e;
  }
  make_embedder(c.embedder);  // validates

  auto& to = c.topics.options;
  to.target_dim = r.get("topics.target_dim", to.target_dim);
  to.hdbscan.min_cluster_size = r.get("topics.min_cluster_size", to.hdbscan.min_cluster_size);
  if (to.hdbscan.min_cluster_size < 2) throw ConfigError("topics.min_cluster_size", "must be >= 2");
  if (auto ms = r.opt<std::size_t>("topics.min_samples")) to.hdbscan.min_samples = *ms;
  auto single = r.get<std::string>("topics.single_cluster", "if_unsplit");
  if (single == "never") {
    to.hdbscan.single_cluster = topics::SingleCluster::never;
  } else if (single == "if_unsplit") {
    to.hdbscan.single_cluster = topics::SingleCluster::if_unsplit;
  } else if (single == "always") {
    to.hdbscan.single_cluster = topics::SingleCluster::always;
  } else {
    throw ConfigError("topics.single_cluster", "expected never, if_unsplit or always");
  }
  to.n_keywords = r.get("topics.n_keywords", to.n_keywords);
  to.remove_stopwords = r.get("topics.remove_stopwords", to.remove_stopwords);
  to.summary_cap = r.get("topics.summary_cap", to.summary_cap);
  if (to.summary_cap < 1) throw ConfigError("topics.summary_cap", "must be >= 1");
  to.workers = r.get("topics.workers", to.workers);
  auto space = r.get<std::string>("topics.silhouette_space", "reduced");
  if (space != "reduced" && space != "full") throw ConfigError("topics.silhouette_space", "expected reduced or full");
  to.silhouette_on_reduced = space == "reduced";
  auto noise = r.get<std::string>("topics.silhouette_noise", "exclude");
  if (noise != "exclude" && noise != "as_cluster") throw ConfigError("topics.silhouette_noise", "expected exclude or as_cluster");
  to.silhouette_noise = noise == "exclude" ? topics::NoisePolicy::exclude : topics::NoisePolicy::as_cluster;
  auto& tt = c.topics.templates;
  tt.label = detail::template_at(r, c, "topics.templates.label", tt.label);
  tt.summary = detail::template_at(r, c, "topics.templates.summary", tt.summary);

  c.qa.options.k = r.get("qa.k", c.qa.options.k);
  if (c.qa.options.k < 1) throw ConfigError("qa.k", "must be >= 1");
  c.qa.options.floor = r.get("qa.floor", c.qa.options.floor);
  if (const auto* q = r.find("qa.queries")) {
    if (!q->is_array()) throw ConfigError("qa.queries", "must be a list of strings");
    for (const auto& s : *q) {
      if (!s.is_string()) throw ConfigError("qa.queries", "must be a list of strings");
      c.qa.queries.push_back(s);
    }
  }
  c.qa.tmpl = detail::template_at(r, c, "qa.template", c.qa.tmpl);
  c.qa.annotation_sample = r.get("qa.annotation_sample", c.qa.annotation_sample);

  c.service.host = r.get<std::string>("service.host", c.service.host);
  c.service.port = r.get("service.port", c.service.port);
  if (c.service.port < 0 || c.service.port > 65535) throw ConfigError("service.port", "must be in [0, 65535]");
  return c;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("(file)", std::string("not valid JSON: ") + e.what());
  }
  return parse_config(doc, std::filesystem::absolute(path).parent_path());
}

}  // namespace revlens
