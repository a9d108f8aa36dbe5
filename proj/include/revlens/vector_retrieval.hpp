#pragma once

// Chunking, embedding providers and a flat exact cosine index.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "revlens/corpus.hpp"
#include "revlens/error.hpp"
#include "revlens/http.hpp"
#include "revlens/text.hpp"

namespace revlens {

// ---------------------------------------------------------------- chunking

struct Chunk {
  std::string chunk_id;  // "<review_id>#<n>"
  std::string review_id;
  std::string text;
  std::size_t char_offset = 0;  // in codepoints
};

struct ChunkingOptions {
  std::size_t chunk_size = 512;  // codepoints
  std::size_t overlap = 128;
};

inline void validate(const ChunkingOptions& o) {
  if (o.chunk_size == 0) throw DomainError("chunk_size must be > 0");
  if (o.overlap >= o.chunk_size) throw DomainError("overlap must be smaller than chunk_size");
}

// Windows of chunk_size codepoints advancing by chunk_size - overlap until
// one reaches the end. Every window is kept, however short the last one.
inline std::vector<Chunk> chunk_text(const std::string& review_id, std::string_view textv,
                                     const ChunkingOptions& o = {}) {
  validate(o);
  auto cps = text::decode(textv);
  std::vector<Chunk> out;
  const std::size_t stride = o.chunk_size - o.overlap;
  for (std::size_t start = 0;; start += stride) {
    std::size_t end = std::min(cps.size(), start + o.chunk_size);
    bool last = end == cps.size();
    out.push_back({review_id + "#" + std::to_string(out.size()), review_id,
                   text::encode(std::u32string_view(cps).substr(start, end - start)), start});
    if (last) break;
  }
  return out;
}

inline std::vector<Chunk> chunk_corpus(const ReviewCorpus& corpus, const ChunkingOptions& o = {}) {
  validate(o);
  std::vector<Chunk> out;
  for (const auto& r : corpus) {
    auto cs = chunk_text(r.review_id, r.text, o);
    out.insert(out.end(), std::make_move_iterator(cs.begin()), std::make_move_iterator(cs.end()));
  }
  return out;
}

// Rebuilds one review's text from its ordered chunks, skipping overlaps.
inline std::string reconstruct(const std::vector<Chunk>& chunks) {
  std::u32string out;
  for (const auto& c : chunks) {
    auto cps = text::decode(c.text);
    if (c.char_offset > out.size()) throw DomainError("chunks leave a gap at offset " + std::to_string(out.size()));
    std::size_t skip = out.size() - c.char_offset;
    if (skip < cps.size()) out.append(cps, skip, std::u32string::npos);
  }
  return text::encode(out);
}

// ---------------------------------------------------------------- vectors

using Vector = std::vector<float>;

inline double norm(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline void normalize_in_place(Vector& v) {
  double n = norm(v);
  if (!(n > 0) || !std::isfinite(n)) throw DomainError("cannot normalize a zero or non-finite vector");
  for (auto& x : v) x = static_cast<float>(x / n);
}

inline double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw DomainError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) throw DomainError("cosine of a zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------- embedders

class Embedder {
 public:
  virtual ~Embedder() = default;
  // One unit-norm vector per text.
  virtual std::vector<Vector> embed(const std::vector<std::string>& texts) = 0;
  virtual std::size_t dim() const = 0;
  virtual std::string id() const = 0;

  Vector embed_one(const std::string& t) { return std::move(embed({t}).front()); }
};

// Signed feature hashing of character n-grams over the lowercased,
// whitespace-collapsed text padded with one space on each side.
class HashedNgramEmbedder : public Embedder {
 public:
  explicit HashedNgramEmbedder(std::size_t dim = 256, std::size_t n_min = 3, std::size_t n_max = 5)
      : dim_(dim), n_min_(n_min), n_max_(n_max) {
    if (dim == 0 || n_min == 0 || n_min > n_max) throw ConfigError("embedder", "invalid hashed n-gram parameters");
  }

  std::vector<Vector> embed(const std::vector<std::string>& texts) override {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_text(t));
    return out;
  }
  std::size_t dim() const override { return dim_; }
  std::string id() const override {
    return "hashed-ngram-" + std::to_string(n_min_) + "-" + std::to_string(n_max_) + "-d" + std::to_string(dim_);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  Vector embed_text(std::string_view t) const {
    auto norm_text = text::normalize(t);
    if (norm_text.empty()) throw DomainError("cannot embed empty text");
    auto cps = text::decode(" " + norm_text + " ");
    std::vector<double> acc(dim_, 0.0);
    for (std::size_t n = n_min_; n <= n_max_; ++n) {
      if (cps.size() < n) break;
      for (std::size_t i = 0; i + n <= cps.size(); ++i) {
        auto h = fnv1a(text::encode(std::u32string_view(cps).substr(i, n)));
        acc[h % dim_] += (h >> 63) ? -1.0 : 1.0;
      }
    }
    double s = 0;
    for (double x : acc) s += x * x;
    Vector v(dim_);
    if (s == 0) {
      // Every n-gram cancelled out; fall back to a fixed axis so the text
      // still has a deterministic unit vector.
      v[fnv1a(norm_text) % dim_] = 1.0f;
      return v;
    }
    double inv = 1.0 / std::sqrt(s);
    for (std::size_t i = 0; i < dim_; ++i) v[i] = static_cast<float>(acc[i] * inv);
    normalize_in_place(v);
    return v;
  }

  std::size_t dim_, n_min_, n_max_;
};

struct RemoteEmbedderConfig {
  std::string endpoint;
  std::optional<std::string> credential_env;
  std::string input_field = "input";
  std::string response_field = "/data/*/embedding";
  nlohmann::json extra_body = nlohmann::json::object();
  std::size_t dim = 768;
  std::size_t batch_size = 32;
  int retry_budget = 3;
  std::chrono::milliseconds base_delay{200};
  std::chrono::milliseconds timeout{60000};
  std::string model_id = "remote";
};

class RemoteEmbedder : public Embedder {
 public:
  explicit RemoteEmbedder(RemoteEmbedderConfig cfg) : cfg_(std::move(cfg)) {
    http::parse_url(cfg_.endpoint);
    if (cfg_.batch_size == 0) throw ConfigError("embedder.batch_size", "must be > 0");
    if (cfg_.dim == 0) throw ConfigError("embedder.dim", "must be > 0");
  }

  std::vector<Vector> embed(const std::vector<std::string>& texts) override {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); i += cfg_.batch_size) {
      std::vector<std::string> batch(texts.begin() + static_cast<std::ptrdiff_t>(i),
                                     texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), i + cfg_.batch_size)));
      auto vecs = send_with_retry(batch);
      for (auto& v : vecs) out.push_back(std::move(v));
    }
    return out;
  }
  std::size_t dim() const override { return cfg_.dim; }
  std::string id() const override { return cfg_.model_id + "-d" + std::to_string(cfg_.dim); }

 private:
  std::vector<Vector> send_with_retry(const std::vector<std::string>& batch) {
    auto delay = cfg_.base_delay;
    for (int attempt = 0;; ++attempt) {
      try {
        return send(batch);
      } catch (const http::TransportError& e) {
        if (!e.retryable() || attempt >= cfg_.retry_budget) throw;
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
  }

  std::vector<Vector> send(const std::vector<std::string>& batch) {
    nlohmann::json body = cfg_.extra_body.is_object() ? cfg_.extra_body : nlohmann::json::object();
    body[cfg_.input_field] = batch;
    auto resp = http::post_json(cfg_.endpoint, body, {cfg_.timeout, cfg_.credential_env});
    auto arr = http::at_path(resp, cfg_.response_field);
    if (!arr.is_array() || arr.size() != batch.size())
      throw http::TransportError(http::FailureKind::fatal, "embedding response has the wrong number of vectors");
    std::vector<Vector> out;
    for (const auto& row : arr) {
      if (!row.is_array() || row.size() != cfg_.dim)
        throw DomainError("embedding dimension mismatch: expected " + std::to_string(cfg_.dim));
      Vector v;
      v.reserve(row.size());
      for (const auto& x : row) v.push_back(x.get<float>());
      normalize_in_place(v);
      out.push_back(std::move(v));
    }
    return out;
  }

  RemoteEmbedderConfig cfg_;
};

inline std::shared_ptr<Embedder> make_embedder(const nlohmann::json& cfg) {
  auto kind = cfg.value("kind", std::string("hashed"));
  if (kind == "hashed") return std::make_shared<HashedNgramEmbedder>(cfg.value("dim", std::size_t{256}));
  if (kind == "remote") {
    RemoteEmbedderConfig rc;
    if (!cfg.contains("endpoint")) throw ConfigError("embedder.endpoint", "required for remote");
    rc.endpoint = cfg["endpoint"].get<std::string>();
    if (cfg.contains("credential_env")) rc.credential_env = cfg["credential_env"].get<std::string>();
    rc.input_field = cfg.value("input_field", rc.input_field);
    rc.response_field = cfg.value("response_field", rc.response_field);
    rc.extra_body = cfg.value("extra_body", nlohmann::json::object());
    rc.dim = cfg.value("dim", rc.dim);
    rc.batch_size = cfg.value("batch_size", rc.batch_size);
    rc.retry_budget = cfg.value("retry_budget", rc.retry_budget);
    rc.model_id = cfg.value("model_id", rc.model_id);
    try {
      return std::make_shared<RemoteEmbedder>(std::move(rc));
    } catch (const DomainError& e) {
      throw ConfigError("embedder.endpoint", e.what());
    }
  }
  throw ConfigError("embedder.kind", "unknown embedder kind '" + kind + "'");
}

// ---------------------------------------------------------------- index

struct SearchHit {
  std::string chunk_id;
  double score = 0;
};

struct SearchResult {
  std::string query;
  std::vector<SearchHit> hits;
};

// Flat store of unit vectors. Many concurrent readers, one writer.
class VectorIndex {
 public:
  VectorIndex(std::size_t dim, std::string embedder_id) : dim_(dim), embedder_id_(std::move(embedder_id)) {
    if (dim == 0) throw DomainError("index dimension must be > 0");
  }

  VectorIndex(VectorIndex&& o) noexcept
      : dim_(o.dim_),
        embedder_id_(std::move(o.embedder_id_)),
        chunks_(std::move(o.chunks_)),
        data_(std::move(o.data_)),
        by_id_(std::move(o.by_id_)) {}
  VectorIndex& operator=(VectorIndex&& o) noexcept {
    dim_ = o.dim_;
    embedder_id_ = std::move(o.embedder_id_);
    chunks_ = std::move(o.chunks_);
    data_ = std::move(o.data_);
    by_id_ = std::move(o.by_id_);
    return *this;
  }

  std::size_t dim() const { return dim_; }
  const std::string& embedder_id() const { return embedder_id_; }
  std::size_t size() const {
    auto lock = read_lock();
    return chunks_.size();
  }
  bool empty() const { return size() == 0; }

  void add(Chunk chunk, Vector v) {
    if (v.size() != dim_)
      throw DomainError("dimension mismatch: index " + std::to_string(dim_) + ", vector " + std::to_string(v.size()));
    normalize_in_place(v);
    std::lock_guard gate(*gate_);
    std::unique_lock lock(*mu_);
    if (by_id_.count(chunk.chunk_id)) throw DomainError("duplicate chunk_id '" + chunk.chunk_id + "'");
    by_id_.emplace(chunk.chunk_id, chunks_.size());
    chunks_.push_back(std::move(chunk));
    data_.insert(data_.end(), v.begin(), v.end());
  }

  const Chunk& chunk(std::size_t i) const { return chunks_.at(i); }
  const Chunk* find(const std::string& chunk_id) const {
    auto lock = read_lock();
    auto it = by_id_.find(chunk_id);
    return it == by_id_.end() ? nullptr : &chunks_[it->second];
  }
  std::span<const float> vector(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  const std::vector<Chunk>& chunks() const { return chunks_; }

  // Exact top-k by cosine over a full scan; ties by chunk_id ascending.
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k) const {
    if (k == 0) throw DomainError("k must be >= 1");
    if (query.size() != dim_)
      throw DomainError("dimension mismatch: index " + std::to_string(dim_) + ", query " + std::to_string(query.size()));
    double qn = norm(query);
    if (!(qn > 0)) throw DomainError("query vector has zero norm");
    auto lock = read_lock();
    if (chunks_.empty()) throw PreconditionError("search on an empty index");
    std::vector<double> scores(chunks_.size());
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
      const float* row = data_.data() + i * dim_;
      double dot = 0;
      for (std::size_t d = 0; d < dim_; ++d) dot += static_cast<double>(row[d]) * query[d];
      scores[i] = std::clamp(dot / qn, -1.0, 1.0);
    }
    std::vector<std::size_t> order(chunks_.size());
    std::iota(order.begin(), order.end(), 0);
    auto better = [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return chunks_[a].chunk_id < chunks_[b].chunk_id;
    };
    std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
    std::vector<SearchHit> hits;
    hits.reserve(take);
    for (std::size_t i = 0; i < take; ++i) hits.push_back({chunks_[order[i]].chunk_id, scores[order[i]]});
    return hits;
  }

  // Header line {format, dim, count, embedder}, then little-endian float32
  // rows. Chunk metadata goes to "<path>.chunks.jsonl".
  void save(const std::filesystem::path& path) const {
    auto lock = read_lock();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write index " + path.string());
    nlohmann::json header{{"format", "revlens-flat-v1"}, {"dim", dim_}, {"count", chunks_.size()}, {"embedder", embedder_id_}};
    out << header.dump() << '\n';
    for (float x : data_) write_le(out, x);
    std::ofstream meta(sidecar(path), std::ios::binary);
    if (!meta) throw IoError("cannot write chunk metadata for " + path.string());
    for (const auto& c : chunks_)
      meta << nlohmann::json{{"chunk_id", c.chunk_id}, {"review_id", c.review_id}, {"text", c.text}, {"char_offset", c.char_offset}}
                  .dump()
           << '\n';
  }

  static VectorIndex load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open index " + path.string());
    std::string line;
    std::getline(in, line);
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ParseError(path.string() + ": bad index header");
    }
    if (header.value("format", "") != "revlens-flat-v1") throw ParseError(path.string() + ": unknown index format");
    VectorIndex idx(header.at("dim").get<std::size_t>(), header.at("embedder").get<std::string>());
    auto count = header.at("count").get<std::size_t>();
    std::vector<float> data(count * idx.dim_);
    for (auto& x : data)
      if (!read_le(in, x)) throw ParseError(path.string() + ": truncated vector data");

    std::ifstream meta(sidecar(path), std::ios::binary);
    if (!meta) throw IoError("cannot open chunk metadata for " + path.string());
    std::size_t i = 0;
    while (std::getline(meta, line)) {
      if (text::strip(line).empty()) continue;
      if (i >= count) throw ParseError(path.string() + ": more chunk records than vectors");
      auto j = nlohmann::json::parse(line);
      Chunk c{j.at("chunk_id"), j.at("review_id"), j.at("text"), j.at("char_offset").get<std::size_t>()};
      if (idx.by_id_.count(c.chunk_id)) throw ParseError(path.string() + ": duplicate chunk_id " + c.chunk_id);
      idx.by_id_.emplace(c.chunk_id, idx.chunks_.size());
      idx.chunks_.push_back(std::move(c));
      ++i;
    }
    if (i != count) throw ParseError(path.string() + ": chunk metadata count mismatch");
    idx.data_ = std::move(data);
    return idx;
  }

  static std::filesystem::path sidecar(const std::filesystem::path& p) { return p.string() + ".chunks.jsonl"; }

 private:
  // Readers pass through the gate a writer holds while waiting, so a steady
  // stream of searches cannot starve inserts.
  std::shared_lock<std::shared_mutex> read_lock() const {
    { std::lock_guard gate(*gate_); }
    return std::shared_lock(*mu_);
  }

  static void write_le(std::ostream& out, float x) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(x);
    char b[4] = {static_cast<char>(u & 0xFF), static_cast<char>((u >> 8) & 0xFF), static_cast<char>((u >> 16) & 0xFF),
                 static_cast<char>((u >> 24) & 0xFF)};
    out.write(b, 4);
  }
  static bool read_le(std::istream& in, float& x) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    std::uint32_t u = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    x = std::bit_cast<float>(u);
    return true;
  }

  std::size_t dim_;
  std::string embedder_id_;
  std::vector<Chunk> chunks_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unique_ptr<std::shared_mutex> mu_ = std::make_unique<std::shared_mutex>();
  std::unique_ptr<std::mutex> gate_ = std::make_unique<std::mutex>();
};

inline VectorIndex build_index(const std::vector<Chunk>& chunks, Embedder& embedder, std::size_t batch_size = 64) {
  VectorIndex idx(embedder.dim(), embedder.id());
  for (std::size_t i = 0; i < chunks.size(); i += batch_size) {
    std::vector<std::string> texts;
    std::size_t end = std::min(chunks.size(), i + batch_size);
    for (std::size_t j = i; j < end; ++j) texts.push_back(chunks[j].text);
    auto vecs = embedder.embed(texts);
    if (vecs.size() != texts.size()) throw DomainError("embedder returned the wrong number of vectors");
    for (std::size_t j = i; j < end; ++j) idx.add(chunks[j], std::move(vecs[j - i]));
  }
  return idx;
}

inline SearchResult search_text(const VectorIndex& idx, Embedder& embedder, const std::string& query, std::size_t k = 10) {
  if (embedder.id() != idx.embedder_id())
    throw DomainError("index was built with '" + idx.embedder_id() + "', query embedder is '" + embedder.id() + "'");
  return {query, idx.search(embedder.embed_one(query), k)};
}

// Fraction of distinct review ids among the hits.
inline double retrieval_diversity(const SearchResult& r, const VectorIndex& idx) {
  if (r.hits.empty()) throw PreconditionError("diversity of an empty result");
  std::set<std::string> reviews;
  for (const auto& h : r.hits) {
    const auto* c = idx.find(h.chunk_id);
    if (!c) throw DomainError("hit '" + h.chunk_id + "' is not in the index");
    reviews.insert(c->review_id);
  }
  return static_cast<double>(reviews.size()) / static_cast<double>(r.hits.size());
}

inline double avg_cosine(const SearchResult& r) {
  if (r.hits.empty()) throw PreconditionError("average cosine of an empty result");
  double s = 0;
  for (const auto& h : r.hits) s += h.score;
  return s / static_cast<double>(r.hits.size());
}

inline nlohmann::json to_json(const Chunk& c) {
  return {{"chunk_id", c.chunk_id}, {"review_id", c.review_id}, {"text", c.text}, {"char_offset", c.char_offset}};
}

}  // namespace revlens
