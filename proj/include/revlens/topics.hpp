#pragma once

// Topic discovery: reduction, density clustering, class-based keywords,
// LLM labels and summaries, silhouette.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "revlens/csv.hpp"
#include "revlens/error.hpp"
#include "revlens/llm_gateway.hpp"
#include "revlens/text.hpp"
#include "revlens/vector_retrieval.hpp"

namespace revlens::topics {

using Point = std::vector<double>;
using Points = std::vector<Point>;

inline double euclidean(const Point& a, const Point& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline Points points_of(const VectorIndex& idx) {
  Points out;
  out.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto v = idx.vector(i);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

// ---------------------------------------------------------------- reduction

class Reducer {
 public:
  virtual ~Reducer() = default;
  virtual Points fit_transform(const Points& vectors, std::size_t target_dim) = 0;
  virtual std::string id() const = 0;
};

// Projection onto the top principal components. Each component's sign is
// fixed so its largest-magnitude loading is positive.
class PcaReducer : public Reducer {
 public:
  Points fit_transform(const Points& vectors, std::size_t target_dim) override {
    if (vectors.empty()) throw PreconditionError("nothing to reduce");
    const std::size_t n = vectors.size(), d = vectors.front().size();
    if (target_dim == 0 || target_dim >= d)
      throw DomainError("target_dim " + std::to_string(target_dim) + " must be in [1, " + std::to_string(d) + ")");
    if (n < target_dim + 1)
      throw PreconditionError("need at least " + std::to_string(target_dim + 1) + " vectors, got " + std::to_string(n));
    Eigen::MatrixXd X(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      if (vectors[i].size() != d) throw DomainError("vectors have mixed dimensions");
      for (std::size_t j = 0; j < d; ++j) X(i, j) = vectors[i][j];
    }
    Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n);
    if (cov.trace() <= 1e-24) throw DomainError("degenerate input: all vectors are identical");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw DomainError("eigendecomposition failed");
    Eigen::MatrixXd W(d, target_dim);
    for (std::size_t k = 0; k < target_dim; ++k) {
      Eigen::VectorXd c = es.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - k));
      Eigen::Index arg;
      c.cwiseAbs().maxCoeff(&arg);
      if (c(arg) < 0) c = -c;
      W.col(static_cast<Eigen::Index>(k)) = c;
    }
    components_ = W;
    Eigen::MatrixXd Y = X * W;
    Points out(n, Point(target_dim));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < target_dim; ++k) out[i][k] = Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    return out;
  }
  std::string id() const override { return "pca"; }
  // d × target_dim, one column per component, from the last fit.
  const Eigen::MatrixXd& components() const { return components_; }

 private:
  Eigen::MatrixXd components_;
};

// ---------------------------------------------------------------- clustering

struct ClusterAssignment {
  std::string chunk_id;
  int cluster_id = -1;  // -1 = noise
};

// When the whole data set may form one cluster: never, only when the root
// has no child clusters, or always (root competes in the selection).
enum class SingleCluster { never, if_unsplit, always };

struct HdbscanOptions {
  std::size_t min_cluster_size = 15;
  std::optional<std::size_t> min_samples;  // defaults to min_cluster_size
  SingleCluster single_cluster = SingleCluster::if_unsplit;
};

namespace detail {

struct Edge {
  std::size_t a, b;
  double w;
};

struct CondensedRow {
  std::size_t parent, child;
  double lambda;
  std::size_t size;
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void link(std::size_t a, std::size_t b, std::size_t into) {
    parent_[a] = into;
    parent_[b] = into;
    size_[into] = size_[a] + size_[b];
  }
  std::size_t size(std::size_t x) const { return size_[x]; }

 private:
  std::vector<std::size_t> parent_, size_;
};

}  // namespace detail

// HDBSCAN with Euclidean distance and excess-of-mass cluster selection.
// Returns one label per point, -1 for noise, cluster ids ordered by
// descending size (ties by lowest member index).
inline std::vector<int> hdbscan(const Points& pts, const HdbscanOptions& opt) {
  const std::size_t n = pts.size();
  const std::size_t mcs = opt.min_cluster_size;
  if (mcs < 2) throw DomainError("min_cluster_size must be >= 2");
  std::vector<int> labels(n, -1);
  if (n < mcs || n < 2) return labels;
  const std::size_t ms = std::min(n, opt.min_samples.value_or(mcs));
  if (ms < 1) throw DomainError("min_samples must be >= 1");

  // Core distance: distance to the ms-th nearest neighbour, self included.
  std::vector<double> core(n);
  {
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) row[j] = i == j ? 0.0 : euclidean(pts[i], pts[j]);
      std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(ms - 1), row.end());
      core[i] = row[ms - 1];
    }
  }

  // Prim's MST over mutual reachability distances.
  std::vector<detail::Edge> mst;
  mst.reserve(n - 1);
  {
    std::vector<bool> in(n, false);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(n, 0);
    std::size_t cur = 0;
    in[0] = true;
    for (std::size_t step = 1; step < n; ++step) {
      std::size_t next = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (in[j]) continue;
        double mr = std::max({core[cur], core[j], euclidean(pts[cur], pts[j])});
        if (mr < best[j]) {
          best[j] = mr;
          from[j] = cur;
        }
        if (next == n || best[j] < best[next]) next = j;
      }
      in[next] = true;
      mst.push_back({from[next], next, best[next]});
      cur = next;
    }
  }
  std::stable_sort(mst.begin(), mst.end(), [](const detail::Edge& a, const detail::Edge& b) { return a.w < b.w; });

  double max_w = 0;
  for (const auto& e : mst) max_w = std::max(max_w, e.w);
  const double floor_w = max_w > 0 ? max_w * 1e-12 : 1e-12;
  auto lambda_of = [&](double w) { return 1.0 / std::max(w, floor_w); };

  // Single-linkage dendrogram: node n+i is created by merge i.
  struct Merge {
    std::size_t left, right;
    double w;
    std::size_t size;
  };
  std::vector<Merge> merges;
  merges.reserve(n - 1);
  {
    detail::UnionFind uf(2 * n - 1);
    for (std::size_t i = 0; i < mst.size(); ++i) {
      auto ra = uf.find(mst[i].a), rb = uf.find(mst[i].b);
      std::size_t node = n + i;
      uf.link(ra, rb, node);
      merges.push_back({ra, rb, mst[i].w, uf.size(node)});
    }
  }
  auto node_size = [&](std::size_t node) { return node < n ? std::size_t{1} : merges[node - n].size; };
  auto leaves = [&](std::size_t node) {
    std::vector<std::size_t> out, stack{node};
    while (!stack.empty()) {
      auto x = stack.back();
      stack.pop_back();
      if (x < n) {
        out.push_back(x);
      } else {
        stack.push_back(merges[x - n].right);
        stack.push_back(merges[x - n].left);
      }
    }
    return out;
  };

  // Condensed tree. Cluster labels start at n (the root).
  const std::size_t root_node = 2 * n - 2;
  std::vector<detail::CondensedRow> tree;
  std::map<std::size_t, std::size_t> relabel{{root_node, n}};
  std::size_t next_label = n + 1;
  std::vector<std::size_t> queue{root_node};
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    std::size_t node = queue[qi];
    if (node < n) continue;
    const auto& m = merges[node - n];
    double lam = lambda_of(m.w);
    std::size_t parent = relabel.at(node);
    std::size_t lc = node_size(m.left), rc = node_size(m.right);
    auto fall_out = [&](std::size_t sub) {
      for (auto p : leaves(sub)) tree.push_back({parent, p, lam, 1});
    };
    if (lc >= mcs && rc >= mcs) {
      relabel[m.left] = next_label++;
      tree.push_back({parent, relabel[m.left], lam, lc});
      relabel[m.right] = next_label++;
      tree.push_back({parent, relabel[m.right], lam, rc});
      queue.push_back(m.left);
      queue.push_back(m.right);
    } else if (lc < mcs && rc < mcs) {
      fall_out(m.left);
      fall_out(m.right);
    } else if (lc < mcs) {
      relabel[m.right] = parent;
      fall_out(m.left);
      queue.push_back(m.right);
    } else {
      relabel[m.left] = parent;
      fall_out(m.right);
      queue.push_back(m.left);
    }
  }

  // Stability of each cluster.
  const std::size_t n_clusters = next_label - n;
  std::vector<double> birth(n_clusters, 0.0), stability(n_clusters, 0.0);
  std::vector<std::vector<std::size_t>> children(n_clusters);
  for (const auto& r : tree)
    if (r.child >= n) {
      birth[r.child - n] = r.lambda;
      children[r.parent - n].push_back(r.child - n);
    }
  for (const auto& r : tree) stability[r.parent - n] += (r.lambda - birth[r.parent - n]) * static_cast<double>(r.size);

  // Excess of mass: children are labelled after parents, so walk backwards.
  std::vector<bool> selected(n_clusters, true);
  auto deselect_below = [&](std::size_t c) {
    std::vector<std::size_t> stack(children[c].begin(), children[c].end());
    while (!stack.empty()) {
      auto x = stack.back();
      stack.pop_back();
      selected[x] = false;
      stack.insert(stack.end(), children[x].begin(), children[x].end());
    }
  };
  for (std::size_t c = n_clusters; c-- > 0;) {
    bool root_allowed = opt.single_cluster == SingleCluster::always ||
                        (opt.single_cluster == SingleCluster::if_unsplit && children[0].empty());
    if (c == 0 && !root_allowed) {
      selected[0] = false;
      break;
    }
    double sub = 0;
    for (auto ch : children[c]) sub += stability[ch];
    if (!children[c].empty() && sub > stability[c]) {
      selected[c] = false;
      stability[c] = sub;
    } else {
      deselect_below(c);
    }
  }

  // Label points by the selected cluster above them.
  std::vector<std::size_t> parent_of(n_clusters, 0);
  std::vector<std::size_t> point_parent(n, n);
  std::vector<double> point_lambda(n, 0.0);
  for (const auto& r : tree) {
    if (r.child >= n) {
      parent_of[r.child - n] = r.parent - n;
    } else {
      point_parent[r.child] = r.parent - n;
      point_lambda[r.child] = r.lambda;
    }
  }
  std::vector<int> raw(n, -1);
  double root_max_lambda = 0;
  for (const auto& r : tree)
    if (r.parent == n) root_max_lambda = std::max(root_max_lambda, r.lambda);
  std::size_t n_selected = static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true));
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t c = point_parent[p];
    if (c == n) continue;
    while (!selected[c] && c != 0) c = parent_of[c];
    if (!selected[c]) continue;
    if (c == 0) {
      // Root as the only cluster: members are the points that persist to
      // the root's last split.
      if (n_selected == 1 && point_lambda[p] >= root_max_lambda) raw[p] = 0;
      continue;
    }
    raw[p] = static_cast<int>(c);
  }

  // Renumber by descending size, ties by first member.
  std::map<int, std::pair<std::size_t, std::size_t>> stats;  // label → (size, first index)
  for (std::size_t p = 0; p < n; ++p) {
    if (raw[p] < 0) continue;
    auto [it, fresh] = stats.try_emplace(raw[p], 0, p);
    ++it->second.first;
  }
  std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> order(stats.begin(), stats.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  std::map<int, int> final_id;
  for (std::size_t i = 0; i < order.size(); ++i) final_id[order[i].first] = static_cast<int>(i);
  for (std::size_t p = 0; p < n; ++p) labels[p] = raw[p] < 0 ? -1 : final_id[raw[p]];
  return labels;
}

inline std::vector<ClusterAssignment> cluster(const Points& reduced, const std::vector<std::string>& chunk_ids,
                                              const HdbscanOptions& opt) {
  if (reduced.size() != chunk_ids.size()) throw DomainError("points and chunk ids differ in length");
  auto labels = hdbscan(reduced, opt);
  std::vector<ClusterAssignment> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({chunk_ids[i], labels[i]});
  return out;
}

// ---------------------------------------------------------------- keywords

using Keywords = std::vector<std::pair<std::string, double>>;

// weight(t, c) = tf(t, c) · ln(1 + A / f(t)) with A the mean cluster word
// count. docs[c] holds the texts of cluster c.
inline std::vector<Keywords> ctfidf_keywords(const std::vector<std::vector<std::string>>& docs, std::size_t n,
                                             bool remove_stopwords = true) {
  if (docs.empty()) throw PreconditionError("keyword scoring needs at least one cluster");
  const auto& stop = text::english_stopwords();
  std::vector<std::map<std::string, std::size_t>> tf(docs.size());
  std::map<std::string, std::size_t> f;
  std::size_t words = 0;
  for (std::size_t c = 0; c < docs.size(); ++c)
    for (const auto& d : docs[c])
      for (auto& t : text::word_tokens(d)) {
        if (remove_stopwords && stop.count(t)) continue;
        ++tf[c][t];
        ++f[t];
        ++words;
      }
  double A = static_cast<double>(words) / static_cast<double>(docs.size());
  std::vector<Keywords> out(docs.size());
  for (std::size_t c = 0; c < docs.size(); ++c) {
    Keywords k;
    for (const auto& [t, count] : tf[c])
      k.emplace_back(t, static_cast<double>(count) * std::log(1.0 + A / static_cast<double>(f[t])));
    std::sort(k.begin(), k.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (k.size() > n) k.resize(n);
    out[c] = std::move(k);
  }
  return out;
}

// Keywords per non-noise cluster; chunks are matched to assignments by id.
inline std::vector<Keywords> top_keywords(const std::vector<ClusterAssignment>& assignments,
                                          const std::vector<Chunk>& chunks, std::size_t n, bool remove_stopwords = true) {
  std::map<std::string, const Chunk*> by_id;
  for (const auto& c : chunks) by_id[c.chunk_id] = &c;
  int max_id = -1;
  for (const auto& a : assignments) max_id = std::max(max_id, a.cluster_id);
  if (max_id < 0) throw PreconditionError("keyword scoring needs at least one non-noise cluster");
  std::vector<std::vector<std::string>> docs(static_cast<std::size_t>(max_id + 1));
  for (const auto& a : assignments) {
    if (a.cluster_id < 0) continue;
    auto it = by_id.find(a.chunk_id);
    if (it == by_id.end()) throw DomainError("no chunk with id " + a.chunk_id);
    docs[static_cast<std::size_t>(a.cluster_id)].push_back(it->second->text);
  }
  return ctfidf_keywords(docs, n, remove_stopwords);
}

// ---------------------------------------------------------------- LLM steps

struct Templates {
  llm::PromptTemplate label;
  llm::PromptTemplate summary;
};

inline Templates default_templates() {
  using llm::FieldType;
  Templates t;
  t.label.template_id = "topic-label-v1";
  t.label.role_preamble = "You are an analyst naming themes found in app store reviews.";
  t.label.instructions =
      "These are the top keywords of one cluster of user reviews: {keywords}.\n"
      "Return a short, specific label for the topic in title case, at most 8 words.\n"
      "Reply with a JSON object {{\"label\": \"...\"}}.";
  t.label.output_schema.fields = {{"label", FieldType::string, {}, true}};
  t.label.decoding.max_tokens = 64;

  t.summary.template_id = "topic-summary-v1";
  t.summary.role_preamble = "You are an analyst summarizing themes found in app store reviews.";
  t.summary.instructions =
      "Below are representative user reviews from one topic cluster.\n{documents}\n"
      "Summarize the main points these reviews make in one to three sentences. Use only what the reviews say.\n"
      "Reply with a JSON object {{\"summary\": \"...\"}}.";
  t.summary.output_schema.fields = {{"summary", FieldType::string, {}, true}};
  t.summary.decoding.max_tokens = 256;
  return t;
}

inline bool is_minor_word(std::string_view w) {
  static const std::set<std::string, std::less<>> minor{"a",  "an", "and", "as", "at", "but", "by", "for", "in",
                                                        "nor", "of", "on", "or",  "the", "to", "vs", "with"};
  return minor.count(text::to_lower(w)) > 0;
}

// Capitalizes each word's first letter; minor words stay lowercase except at
// either end.
inline std::string title_case(std::string_view label) {
  auto words = text::split_whitespace(label);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto w = words[i];
    bool edge = i == 0 || i + 1 == words.size();
    if (!edge && is_minor_word(w)) {
      w = text::to_lower(w);
    } else if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') {
      w[0] = static_cast<char>(w[0] - 'a' + 'A');
    }
    out += (i ? " " : "") + w;
  }
  return out;
}

inline std::optional<std::string> label_problem(const std::string& label) {
  if (label.find('\n') != std::string::npos || label.find('\r') != std::string::npos) return "label spans several lines";
  auto words = text::split_whitespace(label);
  if (words.empty()) return "label is empty";
  if (words.size() > 8) return "label has " + std::to_string(words.size()) + " words, at most 8 allowed";
  return std::nullopt;
}

using Trace = std::vector<std::uint64_t>;

inline std::string label_topic(const Keywords& keywords, llm::Gateway& gw, const llm::PromptTemplate& tmpl,
                               Trace* trace = nullptr) {
  if (keywords.empty()) throw PreconditionError("label_topic needs at least one keyword");
  std::string joined;
  for (const auto& [t, w] : keywords) joined += (joined.empty() ? "" : ", ") + t;
  auto res = gw.run(tmpl, {{"keywords", joined}}, [](const llm::Record& r) { return label_problem(r["label"].get<std::string>()); });
  if (trace) trace->insert(trace->end(), res.exchange_ids.begin(), res.exchange_ids.end());
  return title_case(text::strip(res.record["label"].get<std::string>()));
}

inline std::size_t count_sentences(std::string_view s) {
  std::size_t count = 0;
  bool in_sentence = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '.' || c == '!' || c == '?') {
      bool boundary = i + 1 == s.size() || std::isspace(static_cast<unsigned char>(s[i + 1]));
      if (in_sentence && boundary) {
        ++count;
        in_sentence = false;
      }
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      in_sentence = true;
    }
  }
  return count + (in_sentence ? 1 : 0);
}

inline std::string summarize_topic(const std::vector<std::string>& samples, llm::Gateway& gw,
                                   const llm::PromptTemplate& tmpl, std::size_t cap = 10, Trace* trace = nullptr) {
  if (samples.empty()) throw PreconditionError("summarize_topic needs at least one sample");
  if (samples.size() > cap)
    throw PreconditionError("summarize_topic got " + std::to_string(samples.size()) + " samples, cap is " + std::to_string(cap));
  std::string docs;
  for (std::size_t i = 0; i < samples.size(); ++i) docs += "[" + std::to_string(i + 1) + "] " + samples[i] + "\n";
  auto res = gw.run(tmpl, {{"documents", docs}}, [](const llm::Record& r) -> std::optional<std::string> {
    auto n = count_sentences(r["summary"].get<std::string>());
    if (n < 1 || n > 3) return "summary has " + std::to_string(n) + " sentences, expected 1 to 3";
    return std::nullopt;
  });
  if (trace) trace->insert(trace->end(), res.exchange_ids.begin(), res.exchange_ids.end());
  return text::strip(res.record["summary"].get<std::string>());
}

// Up to `cap` members closest to the cluster medoid, medoid first.
inline std::vector<std::size_t> representatives(const Points& pts, const std::vector<std::size_t>& members, std::size_t cap) {
  if (members.empty()) return {};
  std::size_t medoid = members.front();
  double best = std::numeric_limits<double>::infinity();
  for (auto i : members) {
    double s = 0;
    for (auto j : members) s += euclidean(pts[i], pts[j]);
    if (s < best) {
      best = s;
      medoid = i;
    }
  }
  std::vector<std::pair<double, std::size_t>> d;
  for (auto i : members) d.emplace_back(euclidean(pts[medoid], pts[i]), i);
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < std::min(cap, d.size()); ++k) out.push_back(d[k].second);
  return out;
}

// ---------------------------------------------------------------- silhouette

enum class NoisePolicy { exclude, as_cluster };

// Mean of (b - a) / max(a, b). Singleton-cluster points and a = b = 0 score 0.
inline double silhouette(const Points& pts, const std::vector<int>& labels, NoisePolicy noise = NoisePolicy::exclude) {
  if (pts.size() != labels.size()) throw DomainError("points and labels differ in length");
  std::vector<std::size_t> idx;
  std::vector<int> lab;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (labels[i] < 0 && noise == NoisePolicy::exclude) continue;
    idx.push_back(i);
    lab.push_back(labels[i] < 0 ? -1 : labels[i]);
  }
  std::map<int, std::size_t> sizes;
  for (int l : lab) ++sizes[l];
  if (sizes.size() < 2) throw PreconditionError("silhouette needs at least two clusters");

  double total = 0;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    std::map<int, double> sum;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      if (a == b) continue;
      sum[lab[b]] += euclidean(pts[idx[a]], pts[idx[b]]);
    }
    if (sizes[lab[a]] == 1) continue;
    double ai = sum[lab[a]] / static_cast<double>(sizes[lab[a]] - 1);
    double bi = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : sum)
      if (l != lab[a]) bi = std::min(bi, s / static_cast<double>(sizes[l]));
    double m = std::max(ai, bi);
    if (m > 0) total += (bi - ai) / m;
  }
  return total / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------- topic model

struct TopicCluster {
  int topic_id = 0;
  std::vector<std::string> member_chunk_ids;
  std::size_t count = 0;
  Keywords keywords;
  std::string label;
  std::string summary;
  std::vector<std::uint64_t> exchange_ids;
};

struct TopicOptions {
  std::size_t target_dim = 5;
  HdbscanOptions hdbscan;
  std::size_t n_keywords = 10;
  bool remove_stopwords = true;
  std::size_t summary_cap = 10;
  bool silhouette_on_reduced = true;
  std::size_t workers = 4;
  NoisePolicy silhouette_noise = NoisePolicy::exclude;
};

struct TopicModel {
  std::vector<ClusterAssignment> assignments;
  std::vector<TopicCluster> topics;
  Points reduced;
  std::optional<double> silhouette;
  std::size_t noise = 0;
};

// Reduce, cluster and score keywords. Labels and summaries are filled by
// describe_topics.
inline TopicModel discover_topics(const VectorIndex& idx, Reducer& reducer, const TopicOptions& opt = {}) {
  if (idx.empty()) throw PreconditionError("topic discovery on an empty index");
  TopicModel m;
  auto full = points_of(idx);
  m.reduced = reducer.fit_transform(full, opt.target_dim);
  std::vector<std::string> ids;
  for (const auto& c : idx.chunks()) ids.push_back(c.chunk_id);
  m.assignments = cluster(m.reduced, ids, opt.hdbscan);

  int max_id = -1;
  for (const auto& a : m.assignments) max_id = std::max(max_id, a.cluster_id);
  m.topics.resize(static_cast<std::size_t>(max_id + 1));
  std::vector<int> labels;
  for (std::size_t i = 0; i < m.assignments.size(); ++i) {
    int c = m.assignments[i].cluster_id;
    labels.push_back(c);
    if (c < 0) {
      ++m.noise;
      continue;
    }
    auto& t = m.topics[static_cast<std::size_t>(c)];
    t.topic_id = c;
    t.member_chunk_ids.push_back(ids[i]);
    ++t.count;
  }
  if (!m.topics.empty()) {
    auto kw = top_keywords(m.assignments, idx.chunks(), opt.n_keywords, opt.remove_stopwords);
    for (std::size_t c = 0; c < m.topics.size(); ++c) m.topics[c].keywords = std::move(kw[c]);
  }
  try {
    m.silhouette = silhouette(opt.silhouette_on_reduced ? m.reduced : full, labels, opt.silhouette_noise);
  } catch (const PreconditionError&) {
    m.silhouette.reset();
  }
  return m;
}

// Labels and summarizes every topic, fanning out over `workers` threads.
inline void describe_topics(TopicModel& m, const VectorIndex& idx, llm::Gateway& gw, const Templates& t,
                            const TopicOptions& opt = {}) {
  auto describe = [&](TopicCluster& topic) {
    if (topic.keywords.empty()) return;
    topic.exchange_ids.clear();
    topic.label = label_topic(topic.keywords, gw, t.label, &topic.exchange_ids);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < m.assignments.size(); ++i)
      if (m.assignments[i].cluster_id == topic.topic_id) members.push_back(i);
    std::vector<std::string> samples;
    for (auto i : representatives(m.reduced, members, opt.summary_cap)) samples.push_back(idx.chunk(i).text);
    topic.summary = summarize_topic(samples, gw, t.summary, opt.summary_cap, &topic.exchange_ids);
  };
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(m.topics.size());
  auto worker = [&] {
    for (std::size_t i; (i = next++) < m.topics.size();) {
      try {
        describe(m.topics[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::max<std::size_t>(1, opt.workers); ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string joined_keywords(const Keywords& k) {
  std::string out;
  for (const auto& [t, w] : k) out += (out.empty() ? "" : ";") + t;
  return out;
}

// Columns: topic_id, count, top_keywords, label, summary.
inline void write_topic_table_csv(const std::vector<TopicCluster>& topics, std::ostream& out) {
  csv::write_row(out, {"topic_id", "count", "top_keywords", "label", "summary"});
  for (const auto& t : topics)
    csv::write_row(out, {std::to_string(t.topic_id), std::to_string(t.count), joined_keywords(t.keywords), t.label, t.summary});
}

inline nlohmann::json to_json(const TopicCluster& t, bool with_members = false) {
  nlohmann::json kw = nlohmann::json::array();
  for (const auto& [term, w] : t.keywords) kw.push_back({{"term", term}, {"weight", w}});
  nlohmann::json j{{"topic_id", t.topic_id}, {"count", t.count}, {"keywords", kw}, {"label", t.label}, {"summary", t.summary}};
  if (with_members) j["member_chunk_ids"] = t.member_chunk_ids;
  return j;
}

}  // namespace revlens::topics
