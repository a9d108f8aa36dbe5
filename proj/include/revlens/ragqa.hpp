#pragma once

// Retrieval-augmented question answering with cited, grounded answers and
// the retrieval proxy metrics.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "revlens/csv.hpp"
#include "revlens/error.hpp"
#include "revlens/llm_gateway.hpp"
#include "revlens/text.hpp"
#include "revlens/vector_retrieval.hpp"

namespace revlens::ragqa {

inline const std::string kNotStated = "not stated";

struct Answer {
  std::string query;
  std::string answer_text = kNotStated;
  std::vector<std::string> citations;
  SearchResult retrieved;
  bool grounded = false;
  double floor = 0.0;
  std::string note;  // why the answer is "not stated", empty otherwise
  std::vector<std::size_t> exchange_ids;
};

struct QAOptions {
  std::size_t k = 10;
  double floor = 0.2;
};

inline llm::PromptTemplate default_template() {
  llm::PromptTemplate t;
  t.template_id = "qa-grounded-v1";
  t.role_preamble =
      "You answer questions about app reviews. You may only use the numbered review snippets you are given.";
  t.instructions =
      "Question: {query}\n\nReview snippets:\n{snippets}\n"
      "Answer concisely using only these snippets and cite the snippet numbers you relied on. "
      "If the snippets do not answer the question, set answer to \"not stated\" and leave citations empty.\n"
      "Reply with a JSON object {{\"answer\": \"...\", \"citations\": [1, 2]}}.";
  t.output_schema.fields = {{"answer", llm::FieldType::string, {}, true},
                            {"citations", llm::FieldType::string_list, {}, true}};
  t.decoding.max_tokens = 400;
  return t;
}

inline bool is_not_stated(std::string_view s) {
  auto t = text::to_lower(text::strip(s));
  while (!t.empty() && (t.back() == '.' || t.back() == '!')) t.pop_back();
  return t == kNotStated;
}

inline std::string numbered_snippets(const SearchResult& r, const VectorIndex& idx) {
  std::string out;
  for (std::size_t i = 0; i < r.hits.size(); ++i) {
    const auto* c = idx.find(r.hits[i].chunk_id);
    if (!c) throw DomainError("hit '" + r.hits[i].chunk_id + "' is not in the index");
    out += "[" + std::to_string(i + 1) + "] " + c->text + "\n";
  }
  return out;
}

// Violations: citations outside the retrieved set, and substantive text
// without citations. Empty means the answer passes.
inline std::vector<std::string> ground_check(const Answer& a) {
  std::vector<std::string> v;
  std::set<std::string> retrieved;
  for (const auto& h : a.retrieved.hits) retrieved.insert(h.chunk_id);
  for (const auto& c : a.citations)
    if (!retrieved.count(c)) v.push_back("uncited source: " + c);
  if (a.citations.empty() && !is_not_stated(a.answer_text)) v.push_back("substantive answer without citations");
  if (a.grounded && a.citations.empty()) v.push_back("grounded answer without citations");
  return v;
}

namespace detail {

inline Answer not_stated(Answer a, std::string note) {
  a.answer_text = kNotStated;
  a.citations.clear();
  a.grounded = false;
  a.note = std::move(note);
  return a;
}

inline std::optional<std::size_t> snippet_number(std::string_view raw) {
  auto stripped = text::strip(raw);
  std::string_view s = stripped;
  if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::size_t n = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return n;
}

}  // namespace detail

inline Answer answer(const std::string& query, const VectorIndex& idx, Embedder& embedder, llm::Gateway& gw,
                     const llm::PromptTemplate& tmpl, const QAOptions& opt = {}) {
  if (opt.k < 1) throw PreconditionError("k must be at least 1");
  Answer a;
  a.query = query;
  a.floor = opt.floor;
  a.retrieved.query = query;
  if (idx.empty()) return detail::not_stated(std::move(a), "index is empty");
  a.retrieved = search_text(idx, embedder, query, opt.k);
  if (a.retrieved.hits.empty() || a.retrieved.hits.front().score < opt.floor)
    return detail::not_stated(std::move(a), "no evidence above the floor");

  auto res = gw.run(tmpl, {{"query", query}, {"snippets", numbered_snippets(a.retrieved, idx)}});
  a.exchange_ids = res.exchange_ids;
  std::string text = text::strip(res.record["answer"].get<std::string>());
  std::vector<std::string> cited;
  for (const auto& c : res.record["citations"]) {
    auto n = detail::snippet_number(c.get<std::string>());
    if (!n || *n < 1 || *n > a.retrieved.hits.size())
      return detail::not_stated(std::move(a), "citation '" + c.get<std::string>() + "' is not a retrieved snippet");
    const auto& id = a.retrieved.hits[*n - 1].chunk_id;
    if (std::find(cited.begin(), cited.end(), id) == cited.end()) cited.push_back(id);
  }
  if (is_not_stated(text)) return detail::not_stated(std::move(a), "model found no answer in the snippets");
  if (cited.empty()) return detail::not_stated(std::move(a), "answer cites no snippets");
  a.answer_text = std::move(text);
  a.citations = std::move(cited);
  a.grounded = true;
  if (auto v = ground_check(a); !v.empty()) throw Error("grounding_violation", v.front());
  return a;
}

struct QAMetricsRow {
  std::string query;
  double avg_cosine = 0;
  double diversity = 0;
  std::size_t k = 0;
};

inline std::vector<QAMetricsRow> qa_proxy_metrics(const std::vector<std::string>& queries, const VectorIndex& idx,
                                                  Embedder& embedder, std::size_t k = 10) {
  if (queries.empty()) throw PreconditionError("qa_proxy_metrics needs at least one query");
  if (idx.empty()) throw PreconditionError("qa_proxy_metrics on an empty index");
  std::vector<QAMetricsRow> rows;
  for (const auto& q : queries) {
    auto r = search_text(idx, embedder, q, k);
    rows.push_back({q, avg_cosine(r), retrieval_diversity(r, idx), k});
  }
  return rows;
}

inline std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Columns: query, avg_cosine, diversity.
inline void write_metrics_csv(const std::vector<QAMetricsRow>& rows, std::ostream& out) {
  csv::write_row(out, {"query", "avg_cosine", "diversity"});
  for (const auto& r : rows) csv::write_row(out, {r.query, fixed3(r.avg_cosine), fixed3(r.diversity)});
}

// One row per answer with the cited snippet texts and three blank judgment
// columns for a human annotator.
inline void export_annotation_sheet(const std::vector<Answer>& answers, const VectorIndex& idx, std::ostream& out) {
  if (answers.empty()) throw PreconditionError("annotation sheet needs at least one answer");
  csv::write_row(out, {"query", "answer_text", "cited_snippets", "reflects_citations", "covers_main_points", "readable"});
  for (const auto& a : answers) {
    std::string snippets;
    for (const auto& id : a.citations) {
      const auto* c = idx.find(id);
      if (!c) throw DomainError("cited chunk '" + id + "' is not in the index");
      snippets += (snippets.empty() ? "" : "\n") + ("[" + id + "] " + c->text);
    }
    csv::write_row(out, {a.query, a.answer_text, snippets, "", "", ""});
  }
}

inline nlohmann::json to_json(const Answer& a) {
  nlohmann::json scores = nlohmann::json::array();
  nlohmann::json retrieved = nlohmann::json::array();
  for (const auto& h : a.retrieved.hits) {
    scores.push_back(h.score);
    retrieved.push_back(h.chunk_id);
  }
  return {{"query", a.query}, {"answer_text", a.answer_text}, {"citations", a.citations}, {"scores", scores},
          {"grounded", a.grounded}, {"retrieved", retrieved}, {"floor", a.floor}, {"note", a.note}};
}

// One record per answer: query, answer_text, citations, scores, grounded.
inline void write_answers_jsonl(const std::vector<Answer>& answers, std::ostream& out) {
  for (const auto& a : answers) {
    auto j = to_json(a);
    out << nlohmann::json{{"query", j["query"]},
                          {"answer_text", j["answer_text"]},
                          {"citations", j["citations"]},
                          {"scores", j["scores"]},
                          {"grounded", j["grounded"]}}
               .dump()
        << "\n";
  }
}

}  // namespace revlens::ragqa
