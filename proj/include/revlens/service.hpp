#pragma once

// HTTP service over a run directory: read endpoints for exported artifacts,
// grounded QA against the loaded index, and a job queue for pipeline stages.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "revlens/http.hpp"  // httplib first; see the note there

#include <nlohmann/json.hpp>

#include "revlens/config.hpp"
#include "revlens/csv.hpp"
#include "revlens/error.hpp"
#include "revlens/pipeline.hpp"

namespace revlens::service {

// ---------------------------------------------------------------- jobs

enum class JobStatus { queued, running, done, failed };

inline const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

struct JobRecord {
  std::string job_id;
  std::string kind;
  JobStatus status = JobStatus::queued;
  double progress = 0.0;
  std::vector<std::string> artifacts;
  std::optional<nlohmann::json> error;  // {code, message} once failed

  // Moves forward only: queued → running → done | failed.
  void advance(JobStatus next) {
    bool ok = (status == JobStatus::queued && next == JobStatus::running) ||
              (status == JobStatus::running && (next == JobStatus::done || next == JobStatus::failed));
    if (!ok)
      throw Error("invalid_transition", std::string("job ") + job_id + ": " + to_string(status) + " -> " + to_string(next));
    status = next;
  }
};

inline nlohmann::json to_json(const JobRecord& j) {
  nlohmann::json out{{"job_id", j.job_id},     {"kind", j.kind},           {"status", to_string(j.status)},
                     {"progress", j.progress}, {"artifacts", j.artifacts}};
  if (j.error) out["error"] = *j.error;
  return out;
}

// Jobs run one at a time on a worker thread in submission order.
class JobQueue {
 public:
  struct Context {
    std::function<void(double)> progress;
  };
  using Task = std::function<std::vector<std::string>(const Context&)>;

  JobQueue() : worker_([this] { loop(); }) {}
  ~JobQueue() { shutdown(); }
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::string submit(std::string kind, Task task) {
    std::lock_guard lock(mu_);
    if (stopping_) throw Error("shutting_down", "job queue is shutting down");
    auto id = "job-" + std::to_string(++counter_);
    JobRecord rec;
    rec.job_id = id;
    rec.kind = std::move(kind);
    jobs_[id] = rec;
    pending_.push_back({id, std::move(task)});
    cv_.notify_all();
    return id;
  }

  std::optional<JobRecord> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  // Blocks until the job leaves queued/running.
  JobRecord wait(const std::string& id) const {
    std::unique_lock lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw Error("not_found", "no job " + id);
    changed_.wait(lock, [&] {
      auto s = jobs_.at(id).status;
      return s == JobStatus::done || s == JobStatus::failed;
    });
    return jobs_.at(id);
  }

  // Lets queued and running jobs finish, then stops the worker.
  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (stopping_ && !worker_.joinable()) return;
      stopping_ = true;
      cv_.notify_all();
    }
    if (worker_.joinable()) worker_.join();
  }

 private:
  struct Pending {
    std::string id;
    Task task;
  };

  void update(const std::string& id, const std::function<void(JobRecord&)>& fn) {
    std::lock_guard lock(mu_);
    fn(jobs_.at(id));
    changed_.notify_all();
  }

  void loop() {
    for (;;) {
      Pending p;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
        if (pending_.empty()) return;
        p = std::move(pending_.front());
        pending_.pop_front();
      }
      update(p.id, [](JobRecord& r) { r.advance(JobStatus::running); });
      Context ctx{[&](double f) { update(p.id, [f](JobRecord& r) { r.progress = std::clamp(f, r.progress, 1.0); }); }};
      try {
        auto artifacts = p.task(ctx);
        update(p.id, [&](JobRecord& r) {
          r.artifacts = std::move(artifacts);
          r.progress = 1.0;
          r.advance(JobStatus::done);
        });
      } catch (const Error& e) {
        update(p.id, [&](JobRecord& r) {
          r.error = nlohmann::json{{"code", e.code()}, {"message", e.what()}};
          r.advance(JobStatus::failed);
        });
      } catch (const std::exception& e) {
        update(p.id, [&](JobRecord& r) {
          r.error = nlohmann::json{{"code", "internal_error"}, {"message", e.what()}};
          r.advance(JobStatus::failed);
        });
      }
    }
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  mutable std::condition_variable changed_;
  std::map<std::string, JobRecord> jobs_;
  std::deque<Pending> pending_;
  std::size_t counter_ = 0;
  bool stopping_ = false;
  std::thread worker_;
};

// ---------------------------------------------------------------- service

struct ServiceOptions {
  std::filesystem::path out_root = "out";
  std::shared_ptr<llm::Backend> backend;  // replaces the configured backend when set
};

inline int http_status(const std::string& code) {
  if (code == "not_found") return 404;
  if (code == "not_ready" || code == "missing_prerequisite" || code == "run_locked") return 409;
  if (code == "invalid_request" || code == "invalid_config" || code == "parse_error" || code == "schema_error" ||
      code == "invalid_stage" || code == "precondition_failed" || code == "domain_error")
    return 400;
  if (code == "missing_fixture" || code == "rate_limited" || code == "timeout" || code == "transport_error" ||
      code == "backend_error" || code == "no_record" || code == "enum_violation" || code == "missing_field" ||
      code == "type_mismatch" || code == "validation_failed")
    return 502;
  return 500;
}

class Service {
 public:
  Service(Config cfg, ServiceOptions opt = {})
      : cfg_(std::move(cfg)),
        opt_(std::move(opt)),
        dir_(pipeline::run_dir(opt_.out_root, cfg_)),
        embedder_(make_embedder(cfg_.embedder)),
        gw_(opt_.backend ? opt_.backend : llm::make_backend(cfg_.backend, cfg_.base_dir), nullptr, cfg_.retry) {
    // SO_REUSEPORT would let a second service share the port silently.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    routes();
  }
  ~Service() { stop(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const std::filesystem::path& run_dir() const { return dir_; }
  const Config& config() const { return cfg_; }
  JobQueue& jobs() { return jobs_; }
  llm::Gateway& gateway() { return gw_; }

  // Binds and serves on a background thread. Port 0 picks a free port.
  // Returns the bound port.
  int start(const std::string& host, int port) {
    int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("bind_failed", "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  // Serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port)) throw Error("bind_failed", "cannot bind " + host + ":" + std::to_string(port));
    server_.listen_after_bind();
  }

  // Stops accepting requests and drains queued jobs.
  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
    jobs_.shutdown();
  }

  // Queues a pipeline run over `stages`; the corpus override feeds ingest.
  std::string submit(const std::set<pipeline::Stage>& stages, std::optional<std::filesystem::path> corpus = std::nullopt) {
    auto kind = pipeline::stage_label(stages);
    return jobs_.submit(kind, [this, stages, corpus](const JobQueue::Context& ctx) {
      pipeline::RunOptions ro;
      ro.out_root = opt_.out_root;
      ro.backend = opt_.backend;
      ro.corpus = corpus;
      ro.progress = [&](pipeline::Stage, double f) { ctx.progress(f); };
      auto res = pipeline::run_pipeline(cfg_, stages, ro);
      invalidate();
      return res.bundle.artifacts;
    });
  }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  static void reply(Res& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static void fail(Res& res, const std::string& code, const std::string& message) {
    reply(res, {{"code", code}, {"message", message}}, http_status(code));
  }

  template <class Fn>
  static httplib::Server::Handler guarded(Fn fn) {
    return [fn](const Req& req, Res& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        fail(res, e.code(), e.what());
      } catch (const nlohmann::json::exception& e) {
        fail(res, "invalid_request", e.what());
      } catch (const std::exception& e) {
        fail(res, "internal_error", e.what());
      }
    };
  }

  void invalidate() {
    std::unique_lock lock(state_mu_);
    index_.reset();
  }

  std::shared_ptr<const VectorIndex> index() {
    {
      std::shared_lock lock(state_mu_);
      if (index_) return index_;
    }
    std::unique_lock lock(state_mu_);
    if (!index_) {
      auto p = dir_ / pipeline::files::index;
      if (!std::filesystem::exists(p)) throw Error("not_ready", "no index yet: run the index stage");
      index_ = std::make_shared<const VectorIndex>(VectorIndex::load(p));
    }
    return index_;
  }

  nlohmann::json require_json(const std::string& name, const std::string& stage) const {
    auto j = pipeline::read_json_file(dir_ / name);
    if (!j) throw Error("not_ready", name + " not found: run the " + stage + " stage");
    return *j;
  }

  static nlohmann::json chunk_json(const Chunk& c) {
    return {{"chunk_id", c.chunk_id}, {"review_id", c.review_id}, {"char_offset", c.char_offset}, {"text", c.text}};
  }

  void routes() {
    server_.Post("/ingest", guarded([this](const Req& req, Res& res) {
      if (!req.has_file("file")) throw Error("invalid_request", "multipart field 'file' is required");
      auto file = req.get_file_value("file");
      auto name = std::filesystem::path(file.filename.empty() ? "upload.csv" : file.filename).filename();
      auto uploads = dir_ / "uploads";
      std::filesystem::create_directories(uploads);
      auto dest = uploads / name;
      std::ofstream(dest, std::ios::binary) << file.content;
      Config cfg = cfg_;
      if (req.has_file("schema")) cfg.corpus.schema = SchemaMapping::from_json(nlohmann::json::parse(req.get_file_value("schema").content));
      auto id = jobs_.submit("ingest", [this, cfg, dest](const JobQueue::Context&) {
        pipeline::RunOptions ro;
        ro.out_root = opt_.out_root;
        ro.backend = opt_.backend;
        ro.corpus = dest;
        auto res = pipeline::run_pipeline(cfg, {pipeline::Stage::ingest}, ro);
        return res.bundle.artifacts;
      });
      reply(res, to_json(*jobs_.get(id)), 202);
    }));

    server_.Post("/jobs", guarded([this](const Req& req, Res& res) {
      auto body = nlohmann::json::parse(req.body);
      std::set<pipeline::Stage> stages;
      if (body.contains("stages")) {
        for (const auto& s : body.at("stages")) stages.insert(pipeline::stage_from_string(s.get<std::string>()));
      } else {
        stages.insert(pipeline::stage_from_string(body.at("kind").get<std::string>()));
      }
      if (stages.empty()) throw Error("invalid_request", "no stages given");
      reply(res, to_json(*jobs_.get(submit(stages))), 202);
    }));

    server_.Get(R"(/jobs/([^/]+))", guarded([this](const Req& req, Res& res) {
      auto job = jobs_.get(req.matches[1]);
      if (!job) throw Error("not_found", "no job " + std::string(req.matches[1]));
      reply(res, to_json(*job));
    }));

    server_.Get("/discrepancy/summary", guarded([this](const Req&, Res& res) {
      std::ifstream in(dir_ / pipeline::files::discrepancy);
      if (!in) throw Error("not_ready", "no discrepancy results: run the discrepancy stage");
      std::string line, last;
      while (std::getline(in, line))
        if (!text::strip(line).empty()) last = line;
      auto j = nlohmann::json::parse(last);
      if (!j.contains("summary")) throw ParseError("discrepancy output has no summary record");
      reply(res, j["summary"]);
    }));

    server_.Get("/topics", guarded([this](const Req&, Res& res) {
      std::ifstream in(dir_ / pipeline::files::topic_table, std::ios::binary);
      if (!in) throw Error("not_ready", "no topic table: run the topics stage");
      auto rows = csv::read(in);
      nlohmann::json out = nlohmann::json::array();
      for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() < 5) throw ParseError("topics.csv row " + std::to_string(i) + " is short");
        nlohmann::json kw = nlohmann::json::array();
        std::istringstream terms(r[2]);
        for (std::string k; std::getline(terms, k, ';');)
          if (!k.empty()) kw.push_back(k);
        out.push_back({{"topic_id", std::stoi(r[0])}, {"count", std::stoul(r[1])}, {"top_keywords", kw},
                       {"label", r[3]}, {"summary", r[4]}});
      }
      reply(res, out);
    }));

    server_.Get(R"(/topics/(-?\d+)/chunks)", guarded([this](const Req& req, Res& res) {
      auto doc = require_json(pipeline::files::topics_json, "topics");
      int id = std::stoi(req.matches[1]);
      auto idx = index();
      for (const auto& t : doc.at("topics")) {
        if (t.at("topic_id").get<int>() != id) continue;
        nlohmann::json chunks = nlohmann::json::array();
        for (const auto& cid : t.at("member_chunk_ids")) {
          const auto* c = idx->find(cid.get<std::string>());
          if (!c) throw Error("not_found", "chunk " + cid.get<std::string>() + " is not in the index");
          chunks.push_back(chunk_json(*c));
        }
        reply(res, {{"topic_id", id}, {"label", t.at("label")}, {"chunks", chunks}});
        return;
      }
      throw Error("not_found", "no topic " + std::to_string(id));
    }));

    server_.Get(R"(/chunks/(.+))", guarded([this](const Req& req, Res& res) {
      auto idx = index();
      const auto* c = idx->find(req.matches[1]);
      if (!c) throw Error("not_found", "no chunk " + std::string(req.matches[1]));
      reply(res, chunk_json(*c));
    }));

    server_.Post("/qa", guarded([this](const Req& req, Res& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error&) {
        throw Error("invalid_request", "body must be JSON");
      }
      if (!body.is_object() || !body.contains("query") || !body["query"].is_string() ||
          text::strip(body["query"].get<std::string>()).empty())
        throw Error("invalid_request", "field 'query' must be a non-empty string");
      auto qo = cfg_.qa.options;
      if (body.contains("k")) {
        if (!body["k"].is_number_integer() || body["k"].get<long long>() < 1)
          throw Error("invalid_request", "field 'k' must be a positive integer");
        qo.k = body["k"].get<std::size_t>();
      }
      auto idx = index();
      auto a = ragqa::answer(body["query"].get<std::string>(), *idx, *embedder_, gw_, cfg_.qa.tmpl, qo);
      auto j = ragqa::to_json(a);
      nlohmann::json evidence = nlohmann::json::array();
      for (const auto& h : a.retrieved.hits) {
        const auto* c = idx->find(h.chunk_id);
        auto e = chunk_json(*c);
        e["score"] = h.score;
        e["cited"] = std::find(a.citations.begin(), a.citations.end(), h.chunk_id) != a.citations.end();
        evidence.push_back(e);
      }
      j["evidence"] = evidence;
      j["exchange_ids"] = a.exchange_ids;
      reply(res, j);
    }));

    server_.Get("/aspects", guarded([this](const Req& req, Res& res) {
      std::ifstream in(dir_ / pipeline::files::predictions);
      if (!in) throw Error("not_ready", "no aspect predictions: run the aspects stage");
      auto want = req.get_param_value("sentence_id");
      std::map<std::string, nlohmann::json> by_id;
      std::vector<std::string> order;
      std::string line;
      while (std::getline(in, line)) {
        if (text::strip(line).empty()) continue;
        auto j = nlohmann::json::parse(line);
        std::string id = j.at("sentence_id");
        if (!want.empty() && id != want) continue;
        auto [it, fresh] = by_id.try_emplace(id, nlohmann::json{{"sentence_id", id},
                                                                 {"aspects", nlohmann::json::array()},
                                                                 {"recommendations", j.value("recommendations", nlohmann::json::array())}});
        if (fresh) order.push_back(id);
        if (!j.at("term").is_null())
          it->second["aspects"].push_back({{"term", j["term"]}, {"sentiment", j["sentiment"]}, {"flagged", j.value("flagged", false)}});
      }
      if (!want.empty()) {
        if (!by_id.count(want)) throw Error("not_found", "no sentence " + want);
        reply(res, by_id[want]);
        return;
      }
      nlohmann::json out = nlohmann::json::array();
      for (const auto& id : order) out.push_back(by_id[id]);
      reply(res, out);
    }));

    server_.Get("/reports/latest", guarded([this](const Req&, Res& res) {
      reply(res, require_json(pipeline::files::bundle, "pipeline"));
    }));

    server_.set_error_handler([](const Req&, Res& res) {
      if (res.body.empty()) {
        std::string code = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
        res.set_content(nlohmann::json{{"code", code}, {"message", "no route"}}.dump(), "application/json");
      }
    });
  }

  Config cfg_;
  ServiceOptions opt_;
  std::filesystem::path dir_;
  std::shared_ptr<Embedder> embedder_;
  llm::Gateway gw_;
  httplib::Server server_;
  std::thread thread_;
  JobQueue jobs_;
  std::shared_mutex state_mu_;
  std::shared_ptr<const VectorIndex> index_;
};

}  // namespace revlens::service
