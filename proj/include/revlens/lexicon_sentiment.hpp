#pragma once

// Lexicon sentiment scoring compatible with VADER 3.3.2, the star-scale
// mapping of the compound score, and rating/text discrepancy summaries.
//
// polarity_scores() reproduces the reference SentimentIntensityAnalyzer rule
// by rule (including its order-dependent "but" re-weighting) so that compound
// scores agree with it to floating-point precision. Scores are returned
// unrounded; the reference rounds compound to 4 decimals for display.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "revlens/corpus.hpp"
#include "revlens/csv.hpp"
#include "revlens/error.hpp"
#include "revlens/text.hpp"

namespace revlens {

struct LexiconEntry {
  std::string token;
  double mean_valence = 0.0;
  double stddev = 0.0;
  std::vector<int> raw_ratings;
};

class Lexicon {
 public:
  static constexpr double kMaxValence = 4.0;

  // Inserts or replaces an entry. Returns false when the token was already
  // present (the new entry wins).
  bool add(LexiconEntry entry) {
    if (entry.token.empty()) throw DomainError("lexicon token is empty");
    if (!(std::abs(entry.mean_valence) <= kMaxValence))
      throw DomainError("valence of '" + entry.token + "' outside [-4,4]");
    auto token = entry.token;
    return entries_.insert_or_assign(std::move(token), std::move(entry)).second;
  }

  bool add(std::string token, double valence) { return add(LexiconEntry{std::move(token), valence, 0.0, {}}); }

  const LexiconEntry* find(const std::string& token) const {
    auto it = entries_.find(token);
    return it == entries_.end() ? nullptr : &it->second;
  }
  bool contains(const std::string& token) const { return entries_.count(token) > 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  // Single-code-point emoji → textual description, substituted before
  // tokenization when present.
  void set_emoji_descriptions(std::unordered_map<char32_t, std::string> table) { emoji_ = std::move(table); }
  const std::unordered_map<char32_t, std::string>& emoji_descriptions() const noexcept { return emoji_; }

 private:
  std::unordered_map<std::string, LexiconEntry> entries_;
  std::unordered_map<char32_t, std::string> emoji_;
};

namespace detail {

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      out.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<std::vector<int>> parse_int_list(std::string_view s) {
  std::string t = text::strip(s);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']') return std::nullopt;
  std::vector<int> out;
  std::string_view body(t.data() + 1, t.size() - 2);
  if (text::strip(body).empty()) return out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i == body.size() || body[i] == ',') {
      std::string item = text::strip(body.substr(start, i - start));
      int v = 0;
      auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || p != item.data() + item.size() || item.empty()) return std::nullopt;
      out.push_back(v);
      start = i + 1;
    }
  }
  return out;
}

inline std::string chomp(std::string line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  return line;
}

}  // namespace detail

// Reads the published lexicon TSV: token, mean valence, standard deviation,
// raw-ratings array. Malformed lines throw ParseError naming the line.
inline Lexicon load_lexicon(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read lexicon " + path.string());
  auto warn = [&](std::string w) {
    if (warnings) warnings->push_back(std::move(w));
  };
  Lexicon lex;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = detail::chomp(std::move(line));
    if (line.empty()) continue;
    auto fields = detail::split_tabs(line);
    auto fail = [&](const std::string& why) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + why);
    };
    if (fields.size() != 4) fail("expected 4 tab-separated fields, found " + std::to_string(fields.size()));
    auto valence = detail::parse_double(fields[1]);
    if (!valence) fail("non-numeric valence '" + fields[1] + "'");
    if (std::abs(*valence) > Lexicon::kMaxValence) fail("valence outside [-4,4]");
    auto sd = detail::parse_double(fields[2]);
    if (!sd || *sd < 0) fail("invalid standard deviation '" + fields[2] + "'");
    auto ratings = detail::parse_int_list(fields[3]);
    if (!ratings) fail("invalid raw ratings '" + fields[3] + "'");
    if (fields[0].empty()) fail("empty token");
    if (!lex.add(LexiconEntry{fields[0], *valence, *sd, std::move(*ratings)}))
      warn(path.string() + ":" + std::to_string(n) + ": duplicate token '" + fields[0] + "', last entry wins");
  }
  if (lex.empty()) warn("lexicon " + path.string() + " is empty");
  return lex;
}

// Reads the emoji description table (emoji TAB description) into the lexicon.
// Only single-code-point keys participate in substitution.
inline void load_emoji_descriptions(Lexicon& lexicon, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read emoji table " + path.string());
  std::unordered_map<char32_t, std::string> table;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = detail::chomp(std::move(line));
    if (line.empty()) continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() < 2) throw ParseError(path.string() + ":" + std::to_string(n) + ": expected emoji<TAB>description");
    auto cps = text::decode(fields[0]);
    if (cps.size() == 1) table[cps[0]] = fields[1];
  }
  lexicon.set_emoji_descriptions(std::move(table));
}

struct SentimentScores {
  double pos = 0.0;
  double neu = 0.0;
  double neg = 0.0;
  double compound = 0.0;
};

namespace vader {

inline constexpr double kBoosterIncrement = 0.293;
inline constexpr double kCapsIncrement = 0.733;
inline constexpr double kNegationScalar = -0.74;
inline constexpr double kNormalizationAlpha = 15.0;
inline constexpr double kExclamationIncrement = 0.292;
inline constexpr int kMaxExclamations = 4;
inline constexpr double kQuestionIncrement = 0.18;
inline constexpr double kQuestionCap = 0.96;
inline constexpr double kButBefore = 0.5;
inline constexpr double kButAfter = 1.5;

inline const std::unordered_set<std::string>& negations() {
  static const std::unordered_set<std::string> words = {
      "aint",     "arent",   "cannot",  "cant",    "couldnt",  "darent",   "didnt",    "doesnt",
      "ain't",    "aren't",  "can't",   "couldn't", "daren't", "didn't",   "doesn't",  "dont",
      "hadnt",    "hasnt",   "havent",  "isnt",    "mightnt",  "mustnt",   "neither",  "don't",
      "hadn't",   "hasn't",  "haven't", "isn't",   "mightn't", "mustn't",  "neednt",   "needn't",
      "never",    "none",    "nope",    "nor",     "not",      "nothing",  "nowhere",  "oughtnt",
      "shant",    "shouldnt", "uhuh",   "wasnt",   "werent",   "oughtn't", "shan't",   "shouldn't",
      "uh-uh",    "wasn't",  "weren't", "without", "wont",     "wouldnt",  "won't",    "wouldn't",
      "rarely",   "seldom",  "despite"};
  return words;
}

inline const std::unordered_map<std::string, double>& boosters() {
  constexpr double up = kBoosterIncrement;
  constexpr double down = -kBoosterIncrement;
  static const std::unordered_map<std::string, double> table = {
      {"absolutely", up}, {"amazingly", up}, {"awfully", up}, {"completely", up}, {"considerable", up},
      {"considerably", up}, {"decidedly", up}, {"deeply", up}, {"effing", up}, {"enormous", up},
      {"enormously", up}, {"entirely", up}, {"especially", up}, {"exceptional", up}, {"exceptionally", up},
      {"extreme", up}, {"extremely", up}, {"fabulously", up}, {"flipping", up}, {"flippin", up},
      {"frackin", up}, {"fracking", up}, {"fricking", up}, {"frickin", up}, {"frigging", up},
      {"friggin", up}, {"fully", up}, {"fuckin", up}, {"fucking", up}, {"fuggin", up},
      {"fugging", up}, {"greatly", up}, {"hella", up}, {"highly", up}, {"hugely", up},
      {"incredible", up}, {"incredibly", up}, {"intensely", up}, {"major", up}, {"majorly", up},
      {"more", up}, {"most", up}, {"particularly", up}, {"purely", up}, {"quite", up},
      {"really", up}, {"remarkably", up}, {"so", up}, {"substantially", up}, {"thoroughly", up},
      {"total", up}, {"totally", up}, {"tremendous", up}, {"tremendously", up}, {"uber", up},
      {"unbelievably", up}, {"unusually", up}, {"utter", up}, {"utterly", up}, {"very", up},
      {"almost", down}, {"barely", down}, {"hardly", down}, {"just enough", down}, {"kind of", down},
      {"kinda", down}, {"kindof", down}, {"kind-of", down}, {"less", down}, {"little", down},
      {"marginal", down}, {"marginally", down}, {"occasional", down}, {"occasionally", down},
      {"partly", down}, {"scarce", down}, {"scarcely", down}, {"slight", down}, {"slightly", down},
      {"somewhat", down}, {"sort of", down}, {"sorta", down}, {"sortof", down}, {"sort-of", down}};
  return table;
}

inline const std::unordered_map<std::string, double>& special_cases() {
  static const std::unordered_map<std::string, double> table = {
      {"the shit", 3}, {"the bomb", 3}, {"bad ass", 1.5}, {"badass", 1.5}, {"bus stop", 0.0},
      {"yeah right", -2}, {"kiss of death", -1.5}, {"to die for", 3}, {"beating heart", 3.5}};
  return table;
}

inline double normalize(double score, double alpha = kNormalizationAlpha) {
  double n = score / std::sqrt(score * score + alpha);
  return std::clamp(n, -1.0, 1.0);
}

inline bool is_negation(const std::string& lower_word) {
  return negations().count(lower_word) > 0 || lower_word.find("n't") != std::string::npos;
}

inline double booster_scalar(const std::string& word, const std::string& lower, double valence, bool cap_diff) {
  auto it = boosters().find(lower);
  if (it == boosters().end()) return 0.0;
  double scalar = it->second;
  if (valence < 0) scalar *= -1;
  if (text::is_upper(word) && cap_diff) scalar += valence > 0 ? kCapsIncrement : -kCapsIncrement;
  return scalar;
}

// Whitespace tokens with surrounding ASCII punctuation removed, unless the
// stripped form would be two code points or fewer (emoticons survive).
inline std::vector<std::string> tokenize(std::string_view text) {
  auto words = text::split_whitespace(text);
  for (auto& w : words) {
    auto stripped = text::strip_ascii_punct(w);
    if (text::codepoint_count(stripped) > 2) w = std::move(stripped);
  }
  return words;
}

inline std::string replace_emoji(std::string_view input, const std::unordered_map<char32_t, std::string>& table) {
  if (table.empty()) return std::string(input);
  std::string out;
  bool prev_space = true;
  for (char32_t cp : text::decode(input)) {
    auto it = table.find(cp);
    if (it != table.end()) {
      if (!prev_space) out.push_back(' ');
      out += it->second;
      prev_space = false;
    } else {
      text::append_utf8(out, cp);
      prev_space = cp == U' ';
    }
  }
  return out;
}

class Scorer {
 public:
  Scorer(const Lexicon& lexicon, std::vector<std::string> words)
      : lex_(lexicon), words_(std::move(words)) {
    lower_.reserve(words_.size());
    std::size_t caps = 0;
    for (const auto& w : words_) {
      lower_.push_back(text::to_lower(w));
      if (text::is_upper(w)) ++caps;
    }
    std::size_t diff = words_.size() - caps;
    cap_diff_ = diff > 0 && diff < words_.size();
  }

  std::vector<double> valences() const {
    std::vector<double> sentiments;
    sentiments.reserve(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (boosters().count(lower_[i]) ||
          (i + 1 < words_.size() && lower_[i] == "kind" && lower_[i + 1] == "of")) {
        sentiments.push_back(0.0);
        continue;
      }
      sentiments.push_back(word_valence(i));
    }
    but_reweight(sentiments);
    return sentiments;
  }

 private:
  bool in_lex(std::size_t i) const { return lex_.contains(lower_[i]); }

  double word_valence(std::size_t i) const {
    const LexiconEntry* entry = lex_.find(lower_[i]);
    if (!entry) return 0.0;
    double valence = entry->mean_valence;
    const std::size_t n = words_.size();

    if (lower_[i] == "no" && i != n - 1 && in_lex(i + 1)) valence = 0.0;
    if ((i > 0 && lower_[i - 1] == "no") || (i > 1 && lower_[i - 2] == "no") ||
        (i > 2 && lower_[i - 3] == "no" && (lower_[i - 1] == "or" || lower_[i - 1] == "nor")))
      valence = entry->mean_valence * kNegationScalar;

    if (text::is_upper(words_[i]) && cap_diff_) valence += valence > 0 ? kCapsIncrement : -kCapsIncrement;

    for (std::size_t start = 0; start < 3; ++start) {
      if (i > start && !in_lex(i - (start + 1))) {
        double s = booster_scalar(words_[i - (start + 1)], lower_[i - (start + 1)], valence, cap_diff_);
        if (start == 1 && s != 0) s *= 0.95;
        if (start == 2 && s != 0) s *= 0.9;
        valence += s;
        valence = negation_check(valence, start, i);
        if (start == 2) valence = special_idioms(valence, i);
      }
    }
    return least_check(valence, i);
  }

  double negation_check(double valence, std::size_t start, std::size_t i) const {
    auto w = [&](std::size_t back) -> const std::string& { return lower_[i - back]; };
    auto so_or_this = [](const std::string& s) { return s == "so" || s == "this"; };
    if (start == 0) {
      if (is_negation(w(1))) valence *= kNegationScalar;
    } else if (start == 1) {
      if (w(2) == "never" && so_or_this(w(1))) {
        valence *= 1.25;
      } else if (w(2) == "without" && w(1) == "doubt") {
      } else if (is_negation(w(2))) {
        valence *= kNegationScalar;
      }
    } else {
      if ((w(3) == "never" && so_or_this(w(2))) || so_or_this(w(1))) {
        valence *= 1.25;
      } else if (w(3) == "without" && (w(2) == "doubt" || w(1) == "doubt")) {
      } else if (is_negation(w(3))) {
        valence *= kNegationScalar;
      }
    }
    return valence;
  }

  double special_idioms(double valence, std::size_t i) const {
    const auto& special = special_cases();
    auto w = [&](std::size_t back) -> const std::string& { return lower_[i - back]; };
    const std::string one_zero = w(1) + " " + w(0);
    const std::string two_one_zero = w(2) + " " + w(1) + " " + w(0);
    const std::string two_one = w(2) + " " + w(1);
    const std::string three_two_one = w(3) + " " + w(2) + " " + w(1);
    const std::string three_two = w(3) + " " + w(2);
    for (const std::string* seq : {&one_zero, &two_one_zero, &two_one, &three_two_one, &three_two}) {
      auto it = special.find(*seq);
      if (it != special.end()) {
        valence = it->second;
        break;
      }
    }
    const std::size_t n = lower_.size();
    if (n - 1 > i) {
      auto it = special.find(lower_[i] + " " + lower_[i + 1]);
      if (it != special.end()) valence = it->second;
    }
    if (n - 1 > i + 1) {
      auto it = special.find(lower_[i] + " " + lower_[i + 1] + " " + lower_[i + 2]);
      if (it != special.end()) valence = it->second;
    }
    for (const std::string* gram : {&three_two_one, &three_two, &two_one}) {
      auto it = boosters().find(*gram);
      if (it != boosters().end()) valence += it->second;
    }
    return valence;
  }

  double least_check(double valence, std::size_t i) const {
    if (i > 1 && !in_lex(i - 1) && lower_[i - 1] == "least") {
      if (lower_[i - 2] != "at" && lower_[i - 2] != "very") valence *= kNegationScalar;
    } else if (i > 0 && !in_lex(i - 1) && lower_[i - 1] == "least") {
      valence *= kNegationScalar;
    }
    return valence;
  }

  // The reference locates each value with list.index(), i.e. the first slot
  // holding an equal value, and rewrites that slot. Reproduced as is.
  void but_reweight(std::vector<double>& sentiments) const {
    auto it = std::find(lower_.begin(), lower_.end(), "but");
    if (it == lower_.end()) return;
    const std::size_t but_index = static_cast<std::size_t>(it - lower_.begin());
    for (std::size_t k = 0; k < sentiments.size(); ++k) {
      const double value = sentiments[k];
      const std::size_t slot =
          static_cast<std::size_t>(std::find(sentiments.begin(), sentiments.end(), value) - sentiments.begin());
      if (slot < but_index) {
        sentiments[slot] = value * kButBefore;
      } else if (slot > but_index) {
        sentiments[slot] = value * kButAfter;
      }
    }
  }

  const Lexicon& lex_;
  std::vector<std::string> words_;
  std::vector<std::string> lower_;
  bool cap_diff_ = false;
};

inline double punctuation_amplifier(std::string_view text) {
  auto ep = std::min<std::ptrdiff_t>(std::count(text.begin(), text.end(), '!'), kMaxExclamations);
  auto qm = std::count(text.begin(), text.end(), '?');
  double q = 0.0;
  if (qm > 1) q = qm <= 3 ? static_cast<double>(qm) * kQuestionIncrement : kQuestionCap;
  return static_cast<double>(ep) * kExclamationIncrement + q;
}

inline SentimentScores aggregate(const std::vector<double>& sentiments, std::string_view text) {
  SentimentScores out;
  if (sentiments.empty()) return out;
  double sum = 0.0;
  for (double s : sentiments) sum += s;
  const double amp = punctuation_amplifier(text);
  if (sum > 0) {
    sum += amp;
  } else if (sum < 0) {
    sum -= amp;
  }
  out.compound = normalize(sum);

  double pos_sum = 0.0;
  double neg_sum = 0.0;
  double neu_count = 0.0;
  for (double s : sentiments) {
    if (s > 0) pos_sum += s + 1;
    if (s < 0) neg_sum += s - 1;
    if (s == 0) neu_count += 1;
  }
  if (pos_sum > std::abs(neg_sum)) {
    pos_sum += amp;
  } else if (pos_sum < std::abs(neg_sum)) {
    neg_sum -= amp;
  }
  const double total = pos_sum + std::abs(neg_sum) + neu_count;
  out.pos = std::abs(pos_sum / total);
  out.neg = std::abs(neg_sum / total);
  out.neu = std::abs(neu_count / total);
  return out;
}

}  // namespace vader

// Empty or token-free text yields all-zero scores.
inline SentimentScores polarity_scores(std::string_view review_text, const Lexicon& lexicon) {
  const std::string prepared = text::strip(vader::replace_emoji(review_text, lexicon.emoji_descriptions()));
  vader::Scorer scorer(lexicon, vader::tokenize(prepared));
  return vader::aggregate(scorer.valences(), prepared);
}

enum class StarMapping { continuous, rounded };

// Linear map of compound ∈ [-1,1] onto the 1–5 star range: 2c + 3.
inline double to_star_scale(double compound, StarMapping mapping = StarMapping::continuous) {
  if (!(compound >= -1.0 && compound <= 1.0))
    throw DomainError("compound " + std::to_string(compound) + " outside [-1,1]");
  double stars = 2.0 * compound + 3.0;
  return mapping == StarMapping::rounded ? std::round(stars) : stars;
}

struct DiscrepancyRecord {
  std::string review_id;
  int star_rating = 0;
  double sentiment_rating = 0.0;
  double discrepancy = 0.0;
};

inline DiscrepancyRecord discrepancy_from_compound(const Review& review, double compound,
                                                   StarMapping mapping = StarMapping::continuous) {
  if (review.rating < 1 || review.rating > 5) throw DomainError("review rating outside [1,5]");
  double s = to_star_scale(compound, mapping);
  return {review.review_id, review.rating, s, std::abs(static_cast<double>(review.rating) - s)};
}

inline DiscrepancyRecord discrepancy(const Review& review, const Lexicon& lexicon,
                                     StarMapping mapping = StarMapping::continuous) {
  return discrepancy_from_compound(review, polarity_scores(review.text, lexicon).compound, mapping);
}

// Fixed-width histogram over [0,4]; bins merge by addition.
struct DiscrepancyHistogram {
  static constexpr double kBinWidth = 0.5;
  static constexpr std::size_t kBins = 8;
  std::array<std::size_t, kBins> counts{};

  static std::size_t bin_of(double d) {
    auto b = static_cast<std::size_t>(std::floor(std::clamp(d, 0.0, 4.0) / kBinWidth));
    return std::min(b, kBins - 1);
  }
  void add(double d) { ++counts[bin_of(d)]; }
  DiscrepancyHistogram& merge(const DiscrepancyHistogram& other) {
    for (std::size_t i = 0; i < kBins; ++i) counts[i] += other.counts[i];
    return *this;
  }
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
};

struct DiscrepancySummary {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  DiscrepancyHistogram histogram;
  std::size_t over_rated = 0;   // star rating above sentiment rating
  std::size_t under_rated = 0;  // star rating below sentiment rating
  std::size_t aligned = 0;
};

inline DiscrepancySummary summarize(const std::vector<DiscrepancyRecord>& records) {
  if (records.empty()) throw PreconditionError("discrepancy summary of an empty corpus");
  DiscrepancySummary s;
  s.count = records.size();
  std::vector<double> values;
  values.reserve(records.size());
  double sum = 0.0;
  for (const auto& r : records) {
    values.push_back(r.discrepancy);
    sum += r.discrepancy;
    s.max = std::max(s.max, r.discrepancy);
    s.histogram.add(r.discrepancy);
    if (r.star_rating > r.sentiment_rating) {
      ++s.over_rated;
    } else if (r.star_rating < r.sentiment_rating) {
      ++s.under_rated;
    } else {
      ++s.aligned;
    }
  }
  s.mean = sum / static_cast<double>(s.count);
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 ? values[mid] : (values[mid - 1] + values[mid]) / 2.0;
  return s;
}

struct CorpusDiscrepancy {
  std::vector<DiscrepancyRecord> records;
  DiscrepancySummary summary;
};

inline CorpusDiscrepancy corpus_discrepancy_summary(const ReviewCorpus& corpus, const Lexicon& lexicon,
                                                    StarMapping mapping = StarMapping::continuous) {
  if (corpus.empty()) throw PreconditionError("discrepancy summary of an empty corpus");
  CorpusDiscrepancy out;
  out.records.reserve(corpus.size());
  for (const auto& r : corpus) out.records.push_back(discrepancy(r, lexicon, mapping));
  out.summary = summarize(out.records);
  return out;
}

inline nlohmann::json to_json(const DiscrepancyRecord& r) {
  return {{"review_id", r.review_id},
          {"star_rating", r.star_rating},
          {"sentiment_rating", r.sentiment_rating},
          {"discrepancy", r.discrepancy}};
}

inline nlohmann::json to_json(const DiscrepancySummary& s) {
  nlohmann::json bins = nlohmann::json::array();
  for (std::size_t i = 0; i < DiscrepancyHistogram::kBins; ++i)
    bins.push_back({{"bin_lo", i * DiscrepancyHistogram::kBinWidth},
                    {"bin_hi", (i + 1) * DiscrepancyHistogram::kBinWidth},
                    {"count", s.histogram.counts[i]}});
  return {{"count", s.count},         {"mean", s.mean},           {"median", s.median},
          {"max", s.max},             {"histogram", bins},        {"over_rated", s.over_rated},
          {"under_rated", s.under_rated}, {"aligned", s.aligned}};
}

// One record per review followed by a single {"summary": ...} record.
inline void write_discrepancy_jsonl(const CorpusDiscrepancy& d, std::ostream& out) {
  for (const auto& r : d.records) out << to_json(r).dump() << '\n';
  out << nlohmann::json{{"summary", to_json(d.summary)}}.dump() << '\n';
}

inline void write_histogram_csv(const DiscrepancyHistogram& h, std::ostream& out) {
  csv::write_row(out, {"bin_lo", "bin_hi", "count"});
  for (std::size_t i = 0; i < DiscrepancyHistogram::kBins; ++i)
    csv::write_row(out, {csv::fixed(i * DiscrepancyHistogram::kBinWidth, 1),
                         csv::fixed((i + 1) * DiscrepancyHistogram::kBinWidth, 1), std::to_string(h.counts[i])});
}

}  // namespace revlens
