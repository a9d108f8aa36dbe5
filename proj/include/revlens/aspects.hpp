#pragma once

// Aspect extraction, aspect sentiment, recommendation mining, lexicon
// consistency checks and the extraction/sentiment evaluation harness.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "revlens/csv.hpp"
#include "revlens/error.hpp"
#include "revlens/lexicon_sentiment.hpp"
#include "revlens/llm_gateway.hpp"
#include "revlens/text.hpp"

namespace revlens::aspects {

enum class Sentiment { positive = 0, negative = 1, neutral = 2 };
inline constexpr std::array<Sentiment, 3> kSentiments{Sentiment::positive, Sentiment::negative, Sentiment::neutral};

inline const char* to_string(Sentiment s) {
  switch (s) {
    case Sentiment::positive: return "positive";
    case Sentiment::negative: return "negative";
    case Sentiment::neutral: return "neutral";
  }
  return "neutral";
}

inline Sentiment sentiment_from_string(std::string_view s) {
  auto v = text::to_lower(text::strip(s));
  if (v == "positive") return Sentiment::positive;
  if (v == "negative") return Sentiment::negative;
  if (v == "neutral") return Sentiment::neutral;
  throw DomainError("unknown sentiment '" + std::string(s) + "'");
}

// Conventional lexicon cutoffs: ≥ 0.05 positive, ≤ −0.05 negative.
inline Sentiment lexicon_label(double compound) {
  if (compound >= 0.05) return Sentiment::positive;
  if (compound <= -0.05) return Sentiment::negative;
  return Sentiment::neutral;
}

enum class Source { llm, gold };

struct AspectMention {
  std::string sentence_id;
  std::string term;
  Sentiment sentiment = Sentiment::neutral;
  bool flagged = false;
  Source source = Source::llm;
  bool verbatim = true;
};

struct Recommendation {
  std::string sentence_id;
  std::string phrase;
};

struct GoldAspect {
  std::string term;
  std::string category;
  Sentiment sentiment = Sentiment::neutral;
};

struct GoldAnnotation {
  std::string sentence_id;
  std::string sentence;
  std::vector<GoldAspect> aspects;
};

inline std::string normalize_term(std::string_view term) { return text::normalize(term); }

// ---------------------------------------------------------------- templates

struct Templates {
  llm::PromptTemplate extract;
  llm::PromptTemplate classify;
  llm::PromptTemplate recommend;
};

inline Templates default_templates() {
  using llm::FieldType;
  const std::string preamble =
      "You are an analyst of mobile app reviews. You identify the product features users talk about and how they "
      "feel about them.";
  Templates t;

  t.extract.template_id = "aspect-extract-v1";
  t.extract.role_preamble = preamble;
  t.extract.instructions =
      "Extract the aspect terms (app features or qualities the user comments on) from the review sentence below. "
      "Use short lowercase noun phrases, taken from the sentence where possible. Return an empty list when the "
      "sentence names no aspect.\nSentence: {sentence}\nReply with a JSON object {{\"aspects\": [...]}}.";
  t.extract.output_schema.fields = {{"aspects", FieldType::string_list, {}, true}};
  t.extract.few_shot_examples = {
      {"Sentence: the playlist sync keeps failing since the last update.", {{"aspects", {"playlist sync"}}}},
      {"Sentence: thanks for everything!", {{"aspects", nlohmann::json::array()}}}};

  t.classify.template_id = "aspect-sentiment-v1";
  t.classify.role_preamble = preamble;
  t.classify.instructions =
      "Classify the sentiment the review sentence expresses toward the aspect \"{aspect}\".\nSentence: {sentence}\n"
      "Reply with a JSON object {{\"sentiment\": \"positive\" | \"negative\" | \"neutral\"}}.";
  t.classify.output_schema.fields = {{"sentiment", FieldType::enumeration, {"positive", "negative", "neutral"}, true}};
  t.classify.few_shot_examples = {
      {"Aspect: playlist sync\nSentence: the playlist sync keeps failing since the last update.",
       {{"sentiment", "negative"}}}};

  t.recommend.template_id = "recommend-v1";
  t.recommend.role_preamble = preamble;
  t.recommend.instructions =
      "List short imperative phrases naming what the developers should do in response to this review sentence "
      "(for example \"fix login crash\"). Return an empty list when no action is implied.\nSentence: {sentence}\n"
      "Reply with a JSON object {{\"recommendations\": [...]}}.";
  t.recommend.output_schema.fields = {{"recommendations", FieldType::string_list, {}, true}};
  t.recommend.few_shot_examples = {
      {"Sentence: the playlist sync keeps failing since the last update.", {{"recommendations", {"fix playlist sync"}}}}};
  return t;
}

// ---------------------------------------------------------------- LLM steps

struct ExtractedTerm {
  std::string term;
  bool verbatim = true;
};

// Terms are lowercased, trimmed and deduplicated; terms absent from the
// sentence are kept with verbatim=false.
using Trace = std::vector<std::uint64_t>;

inline void note(Trace* trace, const std::vector<std::uint64_t>& ids) {
  if (trace) trace->insert(trace->end(), ids.begin(), ids.end());
}

inline std::vector<ExtractedTerm> extract_aspects(const std::string& sentence, llm::Gateway& gw,
                                                  const llm::PromptTemplate& tmpl, Trace* trace = nullptr) {
  auto res = gw.run(tmpl, {{"sentence", sentence}});
  note(trace, res.exchange_ids);
  auto haystack = normalize_term(sentence);
  std::vector<ExtractedTerm> out;
  std::set<std::string> seen;
  for (const auto& raw : res.record.at("aspects")) {
    auto term = normalize_term(raw.get<std::string>());
    if (term.empty() || !seen.insert(term).second) continue;
    out.push_back({term, haystack.find(term) != std::string::npos});
  }
  return out;
}

inline Sentiment classify_aspect_sentiment(const std::string& sentence, const std::string& term, llm::Gateway& gw,
                                           const llm::PromptTemplate& tmpl, Trace* trace = nullptr) {
  auto res = gw.run(tmpl, {{"sentence", sentence}, {"aspect", term}});
  note(trace, res.exchange_ids);
  return sentiment_from_string(res.record.at("sentiment").get<std::string>());
}

inline std::vector<Recommendation> mine_recommendations(const std::string& sentence_id, const std::string& sentence,
                                                        llm::Gateway& gw, const llm::PromptTemplate& tmpl,
                                                        Trace* trace = nullptr) {
  auto res = gw.run(tmpl, {{"sentence", sentence}});
  note(trace, res.exchange_ids);
  std::vector<Recommendation> out;
  for (const auto& raw : res.record.at("recommendations")) {
    auto phrase = text::strip(raw.get<std::string>());
    if (!phrase.empty()) out.push_back({sentence_id, phrase});
  }
  return out;
}

// ---------------------------------------------------------------- consistency

enum class Consistency { pass, flag };

// Flags a positive/negative mention whose sentence carries a strong lexicon
// score of the opposite sign. Neutral mentions never contradict.
inline Consistency consistency_check(const AspectMention& m, const SentimentScores& scores, double threshold = 0.5) {
  if (m.sentiment == Sentiment::neutral || std::abs(scores.compound) < threshold) return Consistency::pass;
  if (scores.compound > 0 && m.sentiment == Sentiment::negative) return Consistency::flag;
  if (scores.compound < 0 && m.sentiment == Sentiment::positive) return Consistency::flag;
  return Consistency::pass;
}

inline std::string consistency_hint(const std::string& term, double compound) {
  return "A sentiment lexicon scores the whole sentence as clearly " + std::string(compound > 0 ? "positive" : "negative") +
         " (compound " + csv::fixed(compound, 3) + "). Re-check the sentiment toward \"" + term +
         "\" and reply with a JSON object {\"sentiment\": \"positive\" | \"negative\" | \"neutral\"}.";
}

// One re-prompt of the classification step with the lexicon hint appended.
// The re-prompted answer is kept; the mention stays flagged if it still
// contradicts the lexicon or the reply is unusable.
inline void reconcile(AspectMention& m, const std::string& sentence, const SentimentScores& scores, double threshold,
                      llm::Gateway& gw, const llm::PromptTemplate& classify, Trace* trace = nullptr) {
  if (consistency_check(m, scores, threshold) == Consistency::pass) return;
  auto msgs = llm::render_prompt(classify, {{"sentence", sentence}, {"aspect", m.term}});
  msgs.push_back({llm::Role::assistant, nlohmann::json{{"sentiment", to_string(m.sentiment)}}.dump()});
  msgs.push_back({llm::Role::user, consistency_hint(m.term, scores.compound)});
  auto reply = gw.complete(msgs, classify.decoding, classify.template_id);
  note(trace, reply.exchange_ids);
  try {
    auto rec = llm::parse_structured(reply.text, classify.output_schema);
    m.sentiment = sentiment_from_string(rec.at("sentiment").get<std::string>());
  } catch (const llm::StructuredOutputError&) {
    m.flagged = true;
    return;
  }
  m.flagged = consistency_check(m, scores, threshold) == Consistency::flag;
}

// ---------------------------------------------------------------- pipeline

struct PipelineOptions {
  bool consistency = true;
  double consistency_threshold = 0.5;
  std::size_t workers = 1;
};

struct SentenceInput {
  std::string sentence_id;
  std::string sentence;
};

struct SentenceResult {
  std::string sentence_id;
  std::string sentence;
  std::vector<AspectMention> mentions;
  std::vector<Recommendation> recommendations;
  SentimentScores lexicon;
  Trace exchange_ids;  // audit entries behind this result
};

inline SentenceResult analyze_sentence(const SentenceInput& in, llm::Gateway& gw, const Templates& t, const Lexicon& lex,
                                       const PipelineOptions& opts = {}) {
  SentenceResult r;
  r.sentence_id = in.sentence_id;
  r.sentence = in.sentence;
  r.lexicon = polarity_scores(in.sentence, lex);
  for (const auto& term : extract_aspects(in.sentence, gw, t.extract, &r.exchange_ids)) {
    AspectMention m;
    m.sentence_id = in.sentence_id;
    m.term = term.term;
    m.verbatim = term.verbatim;
    m.sentiment = classify_aspect_sentiment(in.sentence, term.term, gw, t.classify, &r.exchange_ids);
    if (opts.consistency)
      reconcile(m, in.sentence, r.lexicon, opts.consistency_threshold, gw, t.classify, &r.exchange_ids);
    r.mentions.push_back(std::move(m));
  }
  r.recommendations = mine_recommendations(in.sentence_id, in.sentence, gw, t.recommend, &r.exchange_ids);
  return r;
}

// Sentences are independent; results come back in input order regardless of
// the worker count.
inline std::vector<SentenceResult> analyze_sentences(const std::vector<SentenceInput>& inputs, llm::Gateway& gw,
                                                     const Templates& t, const Lexicon& lex,
                                                     const PipelineOptions& opts = {}) {
  std::vector<std::optional<SentenceResult>> slots(inputs.size());
  std::vector<std::exception_ptr> errors(inputs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      try {
        slots[i] = analyze_sentence(inputs[i], gw, t, lex, opts);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::size_t n = std::clamp<std::size_t>(opts.workers, 1, std::max<std::size_t>(1, inputs.size()));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<SentenceResult> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::vector<AspectMention> all_mentions(const std::vector<SentenceResult>& results) {
  std::vector<AspectMention> out;
  for (const auto& r : results) out.insert(out.end(), r.mentions.begin(), r.mentions.end());
  return out;
}

// ---------------------------------------------------------------- evaluation

enum class MatchPolicy { exact, overlap };

inline const char* to_string(MatchPolicy p) { return p == MatchPolicy::exact ? "exact" : "token_overlap_0.5"; }

inline MatchPolicy match_policy_from_string(std::string_view s) {
  if (s == "exact") return MatchPolicy::exact;
  if (s == "overlap" || s == "token_overlap_0.5") return MatchPolicy::overlap;
  throw ConfigError("matching_policy", "unknown policy '" + std::string(s) + "'");
}

// Jaccard overlap of whitespace token sets.
inline double token_overlap(std::string_view a, std::string_view b) {
  auto ta = text::split_whitespace(normalize_term(a));
  auto tb = text::split_whitespace(normalize_term(b));
  std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

struct MatchedPair {
  std::string sentence_id;
  std::string predicted_term;
  std::string gold_term;
  Sentiment predicted = Sentiment::neutral;
  Sentiment gold = Sentiment::neutral;
};

struct ExtractionReport {
  MatchPolicy policy = MatchPolicy::exact;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::vector<MatchedPair> matches;
  std::vector<std::pair<std::string, GoldAspect>> unmatched_gold;
};

inline double f1_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline double ratio(std::size_t num, std::size_t den) {
  return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

namespace detail {

// One-to-one greedy assignment: highest score first, ties to the longer gold
// term, then input order.
inline std::vector<std::pair<std::size_t, std::size_t>> assign(const std::vector<std::string>& pred,
                                                               const std::vector<std::string>& gold,
                                                               MatchPolicy policy) {
  struct Cand {
    double score;
    std::size_t p, g, glen;
  };
  std::vector<Cand> cands;
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t g = 0; g < gold.size(); ++g) {
      double s = policy == MatchPolicy::exact ? (pred[p] == gold[g] ? 1.0 : 0.0) : token_overlap(pred[p], gold[g]);
      if ((policy == MatchPolicy::exact && s == 1.0) || (policy == MatchPolicy::overlap && s >= 0.5))
        cands.push_back({s, p, g, text::codepoint_count(gold[g])});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.glen != b.glen) return a.glen > b.glen;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });
  std::vector<bool> pu(pred.size()), gu(gold.size());
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& c : cands) {
    if (pu[c.p] || gu[c.g]) continue;
    pu[c.p] = gu[c.g] = true;
    out.emplace_back(c.p, c.g);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// Micro-averaged P/R/F1 over aspect terms. Predictions for sentence ids
// missing from the gold set are an error.
inline ExtractionReport evaluate_extraction(const std::vector<AspectMention>& predicted,
                                            const std::vector<GoldAnnotation>& gold,
                                            MatchPolicy policy = MatchPolicy::exact) {
  std::map<std::string, std::vector<const AspectMention*>> by_sentence;
  std::set<std::string> gold_ids;
  for (const auto& g : gold) gold_ids.insert(g.sentence_id);
  for (const auto& m : predicted) {
    if (!gold_ids.count(m.sentence_id)) throw DomainError("prediction for unknown sentence_id '" + m.sentence_id + "'");
    by_sentence[m.sentence_id].push_back(&m);
  }

  ExtractionReport rep;
  rep.policy = policy;
  std::size_t n_pred = 0, n_gold = 0;
  for (const auto& g : gold) {
    std::vector<const AspectMention*> preds;
    std::set<std::string> seen;
    for (const auto* m : by_sentence[g.sentence_id])
      if (seen.insert(normalize_term(m->term)).second) preds.push_back(m);
    std::vector<std::string> pt, gt;
    for (const auto* m : preds) pt.push_back(normalize_term(m->term));
    for (const auto& a : g.aspects) gt.push_back(normalize_term(a.term));
    n_pred += pt.size();
    n_gold += gt.size();
    std::vector<bool> gold_hit(gt.size());
    for (auto [p, q] : detail::assign(pt, gt, policy)) {
      rep.matches.push_back({g.sentence_id, pt[p], gt[q], preds[p]->sentiment, g.aspects[q].sentiment});
      gold_hit[q] = true;
    }
    for (std::size_t q = 0; q < gt.size(); ++q)
      if (!gold_hit[q]) rep.unmatched_gold.emplace_back(g.sentence_id, g.aspects[q]);
  }
  rep.true_positives = rep.matches.size();
  rep.false_positives = n_pred - rep.true_positives;
  rep.false_negatives = n_gold - rep.true_positives;
  rep.precision = ratio(rep.true_positives, n_pred);
  rep.recall = ratio(rep.true_positives, n_gold);
  rep.f1 = f1_of(rep.precision, rep.recall);
  return rep;
}

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;
};

// Rows are gold classes, columns predicted classes, indexed by Sentiment.
using Confusion = std::array<std::array<std::size_t, 3>, 3>;

enum class SentimentMode { matched, all_gold };

struct SentimentReport {
  SentimentMode mode = SentimentMode::matched;
  MatchPolicy policy = MatchPolicy::exact;
  Confusion confusion{};
  std::array<std::size_t, 3> missed{};  // gold aspects with no matched prediction (all_gold mode)
  std::array<ClassMetrics, 3> per_class{};
  ClassMetrics weighted;

  const ClassMetrics& of(Sentiment s) const { return per_class[static_cast<std::size_t>(s)]; }
};

// Per-class and support-weighted metrics from a confusion matrix. Missed gold
// aspects count toward support and lower recall only.
inline SentimentReport report_from_confusion(const Confusion& cm, const std::array<std::size_t, 3>& missed = {}) {
  SentimentReport rep;
  rep.confusion = cm;
  rep.missed = missed;
  std::size_t total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t tp = cm[c][c], predicted = 0, support = missed[c];
    for (std::size_t k = 0; k < 3; ++k) {
      predicted += cm[k][c];
      support += cm[c][k];
    }
    auto& m = rep.per_class[c];
    m.precision = ratio(tp, predicted);
    m.recall = ratio(tp, support);
    m.f1 = f1_of(m.precision, m.recall);
    m.support = support;
    total += support;
  }
  rep.weighted.support = total;
  if (total) {
    for (const auto& m : rep.per_class) {
      double w = static_cast<double>(m.support) / static_cast<double>(total);
      rep.weighted.precision += w * m.precision;
      rep.weighted.recall += w * m.recall;
      rep.weighted.f1 += w * m.f1;
    }
  }
  return rep;
}

inline SentimentReport evaluate_sentiment(const std::vector<AspectMention>& predicted,
                                          const std::vector<GoldAnnotation>& gold,
                                          MatchPolicy policy = MatchPolicy::exact,
                                          SentimentMode mode = SentimentMode::matched) {
  auto ext = evaluate_extraction(predicted, gold, policy);
  Confusion cm{};
  for (const auto& p : ext.matches) ++cm[static_cast<std::size_t>(p.gold)][static_cast<std::size_t>(p.predicted)];
  std::array<std::size_t, 3> missed{};
  if (mode == SentimentMode::all_gold)
    for (const auto& [id, a] : ext.unmatched_gold) ++missed[static_cast<std::size_t>(a.sentiment)];
  auto rep = report_from_confusion(cm, missed);
  rep.mode = mode;
  rep.policy = policy;
  return rep;
}

using Distribution = std::map<std::string, double>;

inline Distribution distribution_of(const std::vector<Sentiment>& labels) {
  if (labels.empty()) throw PreconditionError("sentiment distribution needs at least one mention");
  std::array<std::size_t, 3> counts{};
  for (auto s : labels) ++counts[static_cast<std::size_t>(s)];
  Distribution d;
  for (auto s : kSentiments)
    d[to_string(s)] = static_cast<double>(counts[static_cast<std::size_t>(s)]) / static_cast<double>(labels.size());
  return d;
}

inline Distribution sentiment_distribution(const std::vector<AspectMention>& mentions) {
  std::vector<Sentiment> labels;
  for (const auto& m : mentions) labels.push_back(m.sentiment);
  return distribution_of(labels);
}

// Lexicon-side distribution: each mention takes its sentence's label.
inline Distribution lexicon_distribution(const std::vector<SentenceResult>& results) {
  std::vector<Sentiment> labels;
  for (const auto& r : results)
    for (std::size_t i = 0; i < r.mentions.size(); ++i) labels.push_back(lexicon_label(r.lexicon.compound));
  return distribution_of(labels);
}

// ---------------------------------------------------------------- I/O

// Columns: sentence_id, sentence, aspect_term, aspect_category, sentiment.
// Rows sharing a sentence_id are grouped; an empty aspect_term marks a
// sentence without aspects.
inline std::vector<GoldAnnotation> load_gold_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open gold annotations " + path.string());
  auto rows = csv::read(in);
  if (rows.empty()) throw ParseError(path.string() + ": empty gold file");
  const std::array<std::string, 5> want{"sentence_id", "sentence", "aspect_term", "aspect_category", "sentiment"};
  std::array<std::size_t, 5> col{};
  for (std::size_t k = 0; k < want.size(); ++k) {
    auto it = std::find(rows[0].begin(), rows[0].end(), want[k]);
    if (it == rows[0].end()) throw Error("schema_error", path.string() + ": missing column '" + want[k] + "'");
    col[k] = static_cast<std::size_t>(it - rows[0].begin());
  }
  std::vector<GoldAnnotation> out;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    auto cell = [&](std::size_t k) -> std::string { return col[k] < row.size() ? row[col[k]] : std::string(); };
    auto id = cell(0);
    if (id.empty()) throw ParseError(path.string() + ": row " + std::to_string(i) + " has no sentence_id");
    auto [it, fresh] = index.try_emplace(id, out.size());
    if (fresh) out.push_back({id, cell(1), {}});
    auto term = normalize_term(cell(2));
    if (term.empty()) continue;
    try {
      out[it->second].aspects.push_back({term, cell(3), sentiment_from_string(cell(4))});
    } catch (const DomainError& e) {
      throw ParseError(path.string() + ": row " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::json to_json(const ExtractionReport& r) {
  return {{"policy", to_string(r.policy)},       {"true_positives", r.true_positives},
          {"false_positives", r.false_positives}, {"false_negatives", r.false_negatives},
          {"precision", r.precision},             {"recall", r.recall},
          {"f1", r.f1}};
}

inline nlohmann::json to_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

inline nlohmann::json to_json(const SentimentReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (auto s : kSentiments) per[to_string(s)] = to_json(r.of(s));
  return {{"mode", r.mode == SentimentMode::matched ? "matched" : "all_gold"},
          {"policy", to_string(r.policy)},
          {"per_class", per},
          {"weighted", to_json(r.weighted)},
          {"confusion", r.confusion},
          {"missed", r.missed}};
}

// One line per mention; sentences without aspects produce one line with a
// null term so every analyzed sentence appears.
inline void write_predictions_jsonl(const std::vector<SentenceResult>& results, std::ostream& out) {
  for (const auto& r : results) {
    nlohmann::json recos = nlohmann::json::array();
    for (const auto& rec : r.recommendations) recos.push_back(rec.phrase);
    if (r.mentions.empty()) {
      out << nlohmann::json{{"sentence_id", r.sentence_id},
                            {"term", nullptr},
                            {"sentiment", nullptr},
                            {"flagged", false},
                            {"recommendations", recos}}
                 .dump()
          << '\n';
    }
    for (const auto& m : r.mentions) {
      nlohmann::json j{{"sentence_id", m.sentence_id},
                       {"term", m.term},
                       {"sentiment", to_string(m.sentiment)},
                       {"flagged", m.flagged},
                       {"recommendations", recos}};
      if (!m.verbatim) j["verbatim"] = false;
      out << j.dump() << '\n';
    }
  }
}

inline std::vector<AspectMention> read_predictions_jsonl(std::istream& in) {
  std::vector<AspectMention> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::strip(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (j.at("term").is_null()) continue;
      AspectMention m;
      m.sentence_id = j.at("sentence_id").get<std::string>();
      m.term = j.at("term").get<std::string>();
      m.sentiment = sentiment_from_string(j.at("sentiment").get<std::string>());
      m.flagged = j.value("flagged", false);
      m.verbatim = j.value("verbatim", true);
      out.push_back(std::move(m));
    } catch (const std::exception& e) {
      throw ParseError("predictions line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void write_sentiment_table_csv(const SentimentReport& r, std::ostream& out) {
  csv::write_row(out, {"sentiment", "precision", "recall", "f1", "support"});
  const char* names[] = {"Positive", "Negative", "Neutral"};
  for (auto s : kSentiments) {
    const auto& m = r.of(s);
    csv::write_row(out, {names[static_cast<std::size_t>(s)], csv::fixed(m.precision, 3), csv::fixed(m.recall, 3),
                         csv::fixed(m.f1, 3), std::to_string(m.support)});
  }
  csv::write_row(out, {"Weighted Avg", csv::fixed(r.weighted.precision, 3), csv::fixed(r.weighted.recall, 3),
                       csv::fixed(r.weighted.f1, 3), std::to_string(r.weighted.support)});
}

}  // namespace revlens::aspects
