#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "revlens/csv.hpp"
#include "revlens/error.hpp"
#include "revlens/text.hpp"

namespace revlens {

struct Review {
  std::string review_id;
  std::string text;
  int rating = 0;
  std::optional<std::string> app_id;
  std::optional<std::string> timestamp;
  std::string normalized_text;
};

// Builds a review and its normalized shadow text; throws DomainError when the
// rating or text violate the review invariants.
inline Review make_review(std::string review_id, std::string text, int rating,
                          std::optional<std::string> app_id = std::nullopt,
                          std::optional<std::string> timestamp = std::nullopt) {
  if (rating < 1 || rating > 5) throw DomainError("rating " + std::to_string(rating) + " outside [1,5]");
  if (text::strip(text).empty()) throw DomainError("review text is empty");
  Review r;
  r.review_id = std::move(review_id);
  r.normalized_text = text::normalize(text);
  r.text = std::move(text);
  r.rating = rating;
  r.app_id = std::move(app_id);
  r.timestamp = std::move(timestamp);
  return r;
}

// Column names in the source file for each review field.
struct SchemaMapping {
  std::string text;
  std::string rating;
  std::optional<std::string> review_id;
  std::optional<std::string> app_id;
  std::optional<std::string> timestamp;

  static SchemaMapping canonical() { return {"text", "rating", "review_id", "app_id", "timestamp"}; }

  static SchemaMapping from_json(const nlohmann::json& j) {
    auto get = [&](const char* key) -> std::optional<std::string> {
      if (!j.contains(key) || j[key].is_null()) return std::nullopt;
      if (!j[key].is_string()) throw ConfigError(std::string("schema.") + key, "must be a string");
      return j[key].get<std::string>();
    };
    auto t = get("text");
    auto r = get("rating");
    if (!t) throw ConfigError("schema.text", "required column mapping missing");
    if (!r) throw ConfigError("schema.rating", "required column mapping missing");
    return {*t, *r, get("review_id"), get("app_id"), get("timestamp")};
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"text", text}, {"rating", rating}};
    if (review_id) j["review_id"] = *review_id;
    if (app_id) j["app_id"] = *app_id;
    if (timestamp) j["timestamp"] = *timestamp;
    return j;
  }
};

struct Provenance {
  std::string source;
  SchemaMapping schema = SchemaMapping::canonical();
  std::vector<std::string> steps;
};

// Immutable ordered collection of reviews with unique ids.
class ReviewCorpus {
 public:
  ReviewCorpus() = default;

  ReviewCorpus(std::vector<Review> reviews, Provenance provenance)
      : reviews_(std::move(reviews)), provenance_(std::move(provenance)) {
    std::unordered_set<std::string> seen;
    for (const auto& r : reviews_)
      if (!seen.insert(r.review_id).second) throw DomainError("duplicate review_id '" + r.review_id + "'");
  }

  const std::vector<Review>& reviews() const noexcept { return reviews_; }
  const Provenance& provenance() const noexcept { return provenance_; }
  std::size_t size() const noexcept { return reviews_.size(); }
  bool empty() const noexcept { return reviews_.empty(); }
  auto begin() const noexcept { return reviews_.begin(); }
  auto end() const noexcept { return reviews_.end(); }
  const Review& operator[](std::size_t i) const { return reviews_[i]; }

 private:
  std::vector<Review> reviews_;
  Provenance provenance_;
};

struct RowRejection {
  std::size_t row = 0;  // 1-based data row (header excluded) or line number
  std::string reason;
};

struct LoadReport {
  std::size_t loaded = 0;
  std::vector<RowRejection> rejections;
  std::size_t rejected() const noexcept { return rejections.size(); }
};

struct LoadResult {
  ReviewCorpus corpus;
  LoadReport report;
};

struct FilterResult {
  ReviewCorpus corpus;
  std::size_t removed = 0;
};

enum class SourceFormat { automatic, csv, jsonl };

namespace detail {

inline std::optional<int> parse_rating(std::string_view s) {
  std::string t = text::strip(s);
  if (t.empty()) return std::nullopt;
  double v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) return std::nullopt;
  if (v != std::floor(v) || v < 1 || v > 5) return std::nullopt;
  return static_cast<int>(v);
}

inline bool looks_iso8601(std::string_view s) {
  if (s.size() < 10) return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (s[i] < '0' || s[i] > '9') return false;
  return s[4] == '-' && s[7] == '-' && (s.size() == 10 || s[10] == 'T' || s[10] == ' ');
}

struct RawRow {
  std::optional<std::string> text, rating, review_id, app_id, timestamp;
};

inline std::string json_field_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return csv::number(v.get<double>());
  return v.dump();
}

inline SourceFormat sniff(const std::filesystem::path& path, std::string_view head) {
  auto ext = text::to_lower(path.extension().string());
  if (ext == ".csv") return SourceFormat::csv;
  if (ext == ".jsonl" || ext == ".ndjson" || ext == ".json") return SourceFormat::jsonl;
  auto first = head.find_first_not_of(" \t\r\n");
  return (first != std::string_view::npos && head[first] == '{') ? SourceFormat::jsonl : SourceFormat::csv;
}

}  // namespace detail

// Loads a CSV or line-delimited JSON review file. Rows that fail to parse are
// reported in the LoadReport rather than aborting the load.
inline LoadResult load_reviews(const std::filesystem::path& path, const SchemaMapping& schema,
                               SourceFormat format = SourceFormat::automatic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read review file " + path.string());
  std::string data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (format == SourceFormat::automatic) format = detail::sniff(path, data);

  std::vector<detail::RawRow> raw;
  std::vector<std::size_t> row_numbers;
  LoadReport report;

  if (format == SourceFormat::csv) {
    auto rows = csv::parse(data);
    if (!rows.empty()) {
      const auto& header = rows.front();
      auto column = [&](const std::optional<std::string>& name, const char* field) -> std::optional<std::size_t> {
        if (!name) return std::nullopt;
        auto it = std::find(header.begin(), header.end(), *name);
        if (it == header.end())
          throw Error("schema_error", std::string("schema maps ") + field + " to column '" + *name +
                                          "' which is absent from " + path.string());
        return static_cast<std::size_t>(it - header.begin());
      };
      auto text_col = column(schema.text, "text");
      auto rating_col = column(schema.rating, "rating");
      auto id_col = column(schema.review_id, "review_id");
      auto app_col = column(schema.app_id, "app_id");
      auto ts_col = column(schema.timestamp, "timestamp");
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        auto cell = [&](std::optional<std::size_t> c) -> std::optional<std::string> {
          if (!c || *c >= row.size()) return std::nullopt;
          return row[*c];
        };
        raw.push_back({cell(text_col), cell(rating_col), cell(id_col), cell(app_col), cell(ts_col)});
        row_numbers.push_back(r);
      }
    }
  } else {
    std::istringstream lines(data);
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      ++n;
      if (text::strip(line).empty()) continue;
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        report.rejections.push_back({n, "malformed record"});
        continue;
      }
      if (!obj.is_object()) {
        report.rejections.push_back({n, "record is not an object"});
        continue;
      }
      auto field = [&](const std::optional<std::string>& name) -> std::optional<std::string> {
        if (!name || !obj.contains(*name) || obj[*name].is_null()) return std::nullopt;
        return detail::json_field_text(obj[*name]);
      };
      raw.push_back({field(schema.text), field(schema.rating), field(schema.review_id), field(schema.app_id),
                     field(schema.timestamp)});
      row_numbers.push_back(n);
    }
  }

  std::vector<Review> reviews;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& row = raw[i];
    auto reject = [&](std::string why) { report.rejections.push_back({row_numbers[i], std::move(why)}); };
    if (!row.text || text::strip(*row.text).empty()) {
      reject("missing text");
      continue;
    }
    auto rating = row.rating ? detail::parse_rating(*row.rating) : std::nullopt;
    if (!rating) {
      reject("rating '" + row.rating.value_or("") + "' is not an integer in [1,5]");
      continue;
    }
    std::string id = row.review_id && !row.review_id->empty() ? *row.review_id
                                                              : "row-" + std::to_string(row_numbers[i]);
    if (!ids.insert(id).second) {
      reject("duplicate review_id '" + id + "'");
      continue;
    }
    std::optional<std::string> ts;
    if (row.timestamp && !row.timestamp->empty()) {
      if (!detail::looks_iso8601(*row.timestamp)) {
        reject("timestamp '" + *row.timestamp + "' is not ISO-8601");
        continue;
      }
      ts = row.timestamp;
    }
    std::optional<std::string> app = row.app_id && !row.app_id->empty() ? row.app_id : std::nullopt;
    reviews.push_back(make_review(std::move(id), *row.text, *rating, std::move(app), std::move(ts)));
  }
  std::sort(report.rejections.begin(), report.rejections.end(),
            [](const RowRejection& a, const RowRejection& b) { return a.row < b.row; });
  if (reviews.empty()) throw ParseError("zero parseable rows in " + path.string());
  report.loaded = reviews.size();
  Provenance prov{path.string(), schema, {"load"}};
  return {ReviewCorpus(std::move(reviews), std::move(prov)), std::move(report)};
}

// Collapses reviews with identical normalized text onto the first occurrence.
inline FilterResult deduplicate(const ReviewCorpus& corpus) {
  std::unordered_set<std::string> seen;
  std::vector<Review> kept;
  for (const auto& r : corpus)
    if (seen.insert(r.normalized_text).second) kept.push_back(r);
  auto prov = corpus.provenance();
  prov.steps.push_back("deduplicate");
  std::size_t removed = corpus.size() - kept.size();
  return {ReviewCorpus(std::move(kept), std::move(prov)), removed};
}

namespace detail {

inline bool is_alphabetic(char32_t cp) {
  if (cp < 0x80) return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
  if (cp < 0xC0 || cp == 0xD7 || cp == 0xF7) return cp == 0xAA || cp == 0xB5 || cp == 0xBA;
  if (cp < 0x2000) return true;  // Latin extended through Ethiopic, Georgian, etc.
  if (cp >= 0x3040 && cp <= 0x30FF) return true;  // kana
  if (cp >= 0x3400 && cp <= 0x9FFF) return true;  // CJK
  if (cp >= 0xAC00 && cp <= 0xD7AF) return true;  // Hangul
  if (cp >= 0xF900 && cp <= 0xFAFF) return true;
  return false;
}

}  // namespace detail

inline constexpr double kMinAsciiLetterShare = 0.70;

// Script check on every review; the stopword check only once a review has at
// least three tokens.
inline bool looks_english(std::string_view review_text) {
  std::size_t letters = 0;
  std::size_t ascii_letters = 0;
  for (char32_t cp : text::decode(review_text)) {
    if (!detail::is_alphabetic(cp)) continue;
    ++letters;
    if (cp < 0x80) ++ascii_letters;
  }
  if (letters == 0) return false;
  if (static_cast<double>(ascii_letters) < kMinAsciiLetterShare * static_cast<double>(letters)) return false;

  auto tokens = text::split_whitespace(review_text);
  if (tokens.size() < 3) return true;
  const auto& stop = text::english_stopwords();
  return std::any_of(tokens.begin(), tokens.end(), [&](const std::string& t) {
    return stop.count(text::to_lower(text::strip_ascii_punct(t))) > 0;
  });
}

inline FilterResult filter_english(const ReviewCorpus& corpus) {
  std::vector<Review> kept;
  for (const auto& r : corpus)
    if (looks_english(r.text)) kept.push_back(r);
  auto prov = corpus.provenance();
  prov.steps.push_back("filter_english");
  std::size_t removed = corpus.size() - kept.size();
  return {ReviewCorpus(std::move(kept), std::move(prov)), removed};
}

inline nlohmann::json to_json(const Review& r) {
  nlohmann::json j = {{"review_id", r.review_id}, {"text", r.text}, {"rating", r.rating}};
  j["app_id"] = r.app_id ? nlohmann::json(*r.app_id) : nlohmann::json(nullptr);
  j["timestamp"] = r.timestamp ? nlohmann::json(*r.timestamp) : nlohmann::json(nullptr);
  return j;
}

// Canonical export: one record per line with review_id, text, rating,
// app_id and timestamp.
inline void write_reviews_jsonl(const ReviewCorpus& corpus, std::ostream& out) {
  for (const auto& r : corpus) out << to_json(r).dump() << '\n';
}

}  // namespace revlens
