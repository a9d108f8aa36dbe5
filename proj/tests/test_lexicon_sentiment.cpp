#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "revlens/lexicon_sentiment.hpp"
#include "support/paths.hpp"

using namespace revlens;
using Catch::Approx;
using revlens::testing::TempDir;

namespace {

const Lexicon& vader_lexicon() {
  static const Lexicon lex = [] {
    auto l = load_lexicon(revlens::testing::vader_lexicon_path());
    load_emoji_descriptions(l, revlens::testing::emoji_table_path());
    return l;
  }();
  return lex;
}

Review review(int rating, std::string text = "placeholder") { return make_review("r", std::move(text), rating); }

}  // namespace

TEST_CASE("load_lexicon parses the published format", "[lexicon]") {
  TempDir dir;
  auto p = dir.write("lex.txt", "good\t1.9\t0.9\t[2,2,2]\r\nbad\t-2.5\t0.5\t[-3, -2]\n");
  auto lex = load_lexicon(p);
  REQUIRE(lex.size() == 2);
  CHECK(lex.find("good")->mean_valence == 1.9);
  CHECK(lex.find("good")->raw_ratings == std::vector<int>{2, 2, 2});
  CHECK(lex.find("bad")->stddev == 0.5);

  const auto& full = vader_lexicon();
  CHECK(full.size() == 7506);  // 7520 lines, 14 repeated tokens
  CHECK(full.find("good")->mean_valence == 1.9);
}

TEST_CASE("load_lexicon diagnostics", "[lexicon]") {
  TempDir dir;
  std::vector<std::string> warnings;
  auto empty = load_lexicon(dir.write("empty.txt", ""), &warnings);
  CHECK(empty.empty());
  CHECK(warnings.size() == 1);

  CHECK_THROWS_WITH(load_lexicon(dir.write("bad.txt", "ok\t1\t0\t[1]\nbad\tx\t0.1\t[1]\n")),
                    Catch::Matchers::ContainsSubstring(":2:"));
  CHECK_THROWS_AS(load_lexicon(dir.write("fields.txt", "bad\t1.0\n")), ParseError);

  warnings.clear();
  auto dup = load_lexicon(dir.write("dup.txt", "x\t1\t0\t[1]\nx\t2\t0\t[2]\n"), &warnings);
  CHECK(dup.find("x")->mean_valence == 2.0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("polarity scores match the reference scorer on the frozen fixture", "[vader]") {
  std::ifstream in(revlens::testing::fixture_dir() / "vader_reference.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    auto rec = nlohmann::json::parse(line);
    auto text = rec["text"].get<std::string>();
    auto s = polarity_scores(text, vader_lexicon());
    INFO(text);
    CHECK(std::abs(s.compound - rec["compound"].get<double>()) <= 1e-4);
    CHECK(s.compound == Approx(rec["compound_raw"].get<double>()).margin(1e-12));
    CHECK(s.pos == Approx(rec["pos"].get<double>()).margin(1e-12));
    CHECK(s.neu == Approx(rec["neu"].get<double>()).margin(1e-12));
    CHECK(s.neg == Approx(rec["neg"].get<double>()).margin(1e-12));
    ++n;
  }
  CHECK(n >= 200);
}

TEST_CASE("polarity score examples", "[vader]") {
  auto empty = polarity_scores("", vader_lexicon());
  CHECK(empty.compound == 0.0);
  CHECK(empty.pos == 0.0);
  CHECK(empty.neu == 0.0);
  CHECK(empty.neg == 0.0);

  CHECK(polarity_scores("VADER is smart, handsome, and funny.", vader_lexicon()).compound ==
        Approx(0.8316).margin(1e-4));

  Lexicon mirrored;
  mirrored.add("good", 2.0);
  mirrored.add("bad", -2.0);
  CHECK(polarity_scores("good", mirrored).compound == -polarity_scores("bad", mirrored).compound);
}

TEST_CASE("compound is strictly increasing in single-token valence", "[vader][property]") {
  double previous = -2.0;
  for (int step = -40; step <= 40; ++step) {
    Lexicon lex;
    lex.add("word", step / 10.0);
    double c = polarity_scores("word", lex).compound;
    CHECK(c > previous);
    previous = c;
  }
}

TEST_CASE("normalization stays inside (-1, 1)", "[vader][property]") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mag(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    double x = mag(rng);
    double n = vader::normalize(x);
    CHECK(std::abs(n) <= 1.0);
    if (std::abs(x) < 1e3) CHECK(std::abs(n) < 1.0);
  }
  CHECK(vader::normalize(0.0) == 0.0);
}

TEST_CASE("score components sum to one", "[vader][property]") {
  std::ifstream in(revlens::testing::fixture_dir() / "vader_reference.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    auto text = nlohmann::json::parse(line)["text"].get<std::string>();
    auto s = polarity_scores(text, vader_lexicon());
    if (s.pos + s.neu + s.neg == 0.0) continue;  // token-free input
    CHECK(s.pos + s.neu + s.neg == Approx(1.0).margin(1e-6));
    CHECK(std::abs(s.compound) <= 1.0);
  }
}

TEST_CASE("appending inert tokens leaves compound unchanged", "[vader][property]") {
  const std::vector<std::string> bases = {"The app is great", "Terrible update, really bad",
                                          "not good at all", "I love it but it crashes"};
  const std::vector<std::string> inert = {"zxqv", "blorp", "qwertyuiop", "xylograph"};
  for (const auto& base : bases) {
    double c0 = polarity_scores(base, vader_lexicon()).compound;
    std::string text = base;
    for (const auto& t : inert) {
      REQUIRE_FALSE(vader_lexicon().contains(t));
      text += " " + t;
      CHECK(std::abs(polarity_scores(text, vader_lexicon()).compound - c0) <= 1e-9);
    }
  }
}

TEST_CASE("star scale mapping", "[discrepancy]") {
  CHECK(to_star_scale(0.0) == 3.0);
  CHECK(to_star_scale(1.0) == 5.0);
  CHECK(to_star_scale(-1.0) == 1.0);
  CHECK(to_star_scale(-0.4) == Approx(2.2).margin(1e-12));
  CHECK(to_star_scale(0.3, StarMapping::rounded) == 4.0);
  CHECK_THROWS_AS(to_star_scale(1.5), DomainError);
  CHECK_THROWS_AS(to_star_scale(std::nan("")), DomainError);

  for (double c = -1.0; c <= 1.0; c += 0.01) CHECK(to_star_scale(-c) + to_star_scale(c) == Approx(6.0).margin(1e-12));
}

TEST_CASE("discrepancy arithmetic", "[discrepancy]") {
  CHECK(discrepancy_from_compound(review(5), -1.0).discrepancy == 4.0);
  CHECK(discrepancy_from_compound(review(3), 0.0).discrepancy == 0.0);
  auto r = discrepancy_from_compound(review(4), 0.25);
  CHECK(r.sentiment_rating == 3.5);
  CHECK(r.discrepancy == 0.5);
}

TEST_CASE("discrepancy summaries", "[discrepancy]") {
  std::vector<DiscrepancyRecord> zeros(5, DiscrepancyRecord{"r", 3, 3.0, 0.0});
  auto z = summarize(zeros);
  CHECK(z.mean == 0.0);
  CHECK(z.histogram.counts[0] == 5);
  CHECK(z.histogram.total() == 5);

  auto two = summarize({{"a", 5, 1.0, 4.0}, {"b", 3, 3.0, 0.0}});
  CHECK(two.mean == 2.0);
  CHECK(two.max == 4.0);
  CHECK(two.median == 2.0);
  CHECK(two.histogram.counts[7] == 1);
  CHECK(two.over_rated == 1);
  CHECK(two.aligned == 1);

  CHECK_THROWS_AS(summarize({}), PreconditionError);
  CHECK_THROWS_AS(corpus_discrepancy_summary(ReviewCorpus{}, vader_lexicon()), PreconditionError);
}

TEST_CASE("adversarial corpus shows large discrepancy", "[discrepancy]") {
  const std::vector<std::string> glowing = {"I absolutely love this app, it is amazing!",
                                            "Best music app ever, fantastic and wonderful!",
                                            "Great playlists, excellent sound, love it!!",
                                            "Awesome update, super helpful and beautiful design."};
  std::vector<Review> reviews;
  for (std::size_t i = 0; i < glowing.size(); ++i) reviews.push_back(make_review(std::to_string(i), glowing[i], 1));
  auto d = corpus_discrepancy_summary(ReviewCorpus(reviews, {}), vader_lexicon());
  CHECK(d.summary.mean > 2.0);
  CHECK(d.summary.under_rated == glowing.size());
}

TEST_CASE("histogram merge is associative", "[discrepancy][property]") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  DiscrepancyHistogram a, b, c, all;
  for (int i = 0; i < 300; ++i) {
    double d = u(rng);
    all.add(d);
    (i % 3 == 0 ? a : i % 3 == 1 ? b : c).add(d);
  }
  auto left = a;
  left.merge(b).merge(c);
  auto bc = b;
  bc.merge(c);
  auto right = a;
  right.merge(bc);
  CHECK(left.counts == right.counts);
  CHECK(left.counts == all.counts);
}

TEST_CASE("discrepancy exports", "[discrepancy]") {
  CorpusDiscrepancy d;
  d.records = {{"a", 5, 1.0, 4.0}, {"b", 3, 3.0, 0.0}};
  d.summary = summarize(d.records);
  std::ostringstream jl;
  write_discrepancy_jsonl(d, jl);
  std::istringstream lines(jl.str());
  std::string line;
  std::vector<nlohmann::json> recs;
  while (std::getline(lines, line)) recs.push_back(nlohmann::json::parse(line));
  REQUIRE(recs.size() == 3);
  CHECK(recs[0]["review_id"] == "a");
  CHECK(recs[2]["summary"]["count"] == 2);

  std::ostringstream hist;
  write_histogram_csv(d.summary.histogram, hist);
  auto rows = csv::parse(hist.str());
  REQUIRE(rows.size() == 9);
  CHECK(rows[1] == csv::Row{"0.0", "0.5", "1"});
  CHECK(rows[8] == csv::Row{"3.5", "4.0", "1"});
}
