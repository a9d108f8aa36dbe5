#pragma once

// Provider-agnostic chat completion: templates, backends, audit trail and
// structured output.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "revlens/error.hpp"
#include "revlens/http.hpp"
#include "revlens/text.hpp"

namespace revlens::llm {

using nlohmann::json;

enum class Role { system, user, assistant };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

inline Role role_from_string(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw ParseError("unknown message role '" + std::string(s) + "'");
}

struct Message {
  Role role;
  std::string content;
  bool operator==(const Message&) const = default;
};

using Messages = std::vector<Message>;
using Variables = std::map<std::string, std::string>;

inline json to_json(const Messages& msgs) {
  json arr = json::array();
  for (const auto& m : msgs) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return arr;
}

inline Messages messages_from_json(const json& arr) {
  Messages out;
  for (const auto& m : arr) out.push_back({role_from_string(m.at("role").get<std::string>()), m.at("content")});
  return out;
}

inline std::string sha256_hex(std::string_view canonical) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(canonical.data(), canonical.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("digest_error", "SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

// Lowercase hex SHA-256 of the compact JSON message array.
inline std::string digest(const Messages& msgs) { return sha256_hex(to_json(msgs).dump()); }

// ---------------------------------------------------------------- schema

enum class FieldType { string, enumeration, string_list };

struct FieldSpec {
  std::string name;
  FieldType type = FieldType::string;
  std::vector<std::string> allowed;  // enumeration only
  bool required = true;
};

struct OutputSchema {
  std::vector<FieldSpec> fields;

  const FieldSpec* find(std::string_view name) const {
    for (const auto& f : fields)
      if (f.name == name) return &f;
    return nullptr;
  }

  // Plain-language restatement used in repair prompts.
  std::string describe() const {
    std::string out;
    for (const auto& f : fields) {
      if (!out.empty()) out += "; ";
      out += "\"" + f.name + "\": ";
      switch (f.type) {
        case FieldType::string: out += "a string"; break;
        case FieldType::string_list: out += "a list of strings"; break;
        case FieldType::enumeration: {
          out += "one of ";
          for (std::size_t i = 0; i < f.allowed.size(); ++i) out += (i ? "|" : "") + f.allowed[i];
          break;
        }
      }
      if (!f.required) out += " (optional)";
    }
    return out;
  }
};

inline json to_json(const OutputSchema& s) {
  json arr = json::array();
  for (const auto& f : s.fields) {
    json j{{"name", f.name}};
    switch (f.type) {
      case FieldType::string: j["type"] = "string"; break;
      case FieldType::string_list: j["type"] = "list-of-string"; break;
      case FieldType::enumeration:
        j["type"] = "enum";
        j["values"] = f.allowed;
        break;
    }
    if (!f.required) j["required"] = false;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline OutputSchema schema_from_json(const json& arr) {
  if (!arr.is_array() || arr.empty()) throw ConfigError("output_schema", "must be a non-empty array");
  OutputSchema s;
  for (const auto& f : arr) {
    FieldSpec spec;
    spec.name = f.at("name").get<std::string>();
    auto type = f.value("type", std::string("string"));
    if (type == "string") {
      spec.type = FieldType::string;
    } else if (type == "list-of-string") {
      spec.type = FieldType::string_list;
    } else if (type == "enum") {
      spec.type = FieldType::enumeration;
      spec.allowed = f.at("values").get<std::vector<std::string>>();
      if (spec.allowed.empty()) throw ConfigError("output_schema." + spec.name, "enum without values");
    } else {
      throw ConfigError("output_schema." + spec.name, "unknown type '" + type + "'");
    }
    spec.required = f.value("required", true);
    s.fields.push_back(std::move(spec));
  }
  return s;
}

enum class ParseFailure { no_record, enum_violation, missing_field, type_mismatch, validation };

inline const char* to_string(ParseFailure f) {
  switch (f) {
    case ParseFailure::no_record: return "no_record";
    case ParseFailure::enum_violation: return "enum_violation";
    case ParseFailure::missing_field: return "missing_field";
    case ParseFailure::type_mismatch: return "type_mismatch";
    case ParseFailure::validation: return "validation_failed";
  }
  return "no_record";
}

class StructuredOutputError : public Error {
 public:
  StructuredOutputError(ParseFailure kind, const std::string& message) : Error(to_string(kind), message), kind_(kind) {}
  ParseFailure kind() const noexcept { return kind_; }

 private:
  ParseFailure kind_;
};

using Record = json;

namespace detail {

inline std::string lower_trim(std::string_view s) { return text::to_lower(text::strip(s)); }

// Validates one candidate object; returns the canonical record holding only
// schema fields.
inline Record conform(const json& obj, const OutputSchema& schema) {
  Record out = json::object();
  for (const auto& f : schema.fields) {
    if (!obj.contains(f.name) || obj[f.name].is_null()) {
      if (f.required) throw StructuredOutputError(ParseFailure::missing_field, "missing required field '" + f.name + "'");
      continue;
    }
    const auto& v = obj[f.name];
    switch (f.type) {
      case FieldType::string:
        if (!v.is_string()) throw StructuredOutputError(ParseFailure::type_mismatch, "field '" + f.name + "' is not a string");
        out[f.name] = v;
        break;
      case FieldType::enumeration: {
        if (!v.is_string()) throw StructuredOutputError(ParseFailure::type_mismatch, "field '" + f.name + "' is not a string");
        auto want = lower_trim(v.get<std::string>());
        auto it = std::find_if(f.allowed.begin(), f.allowed.end(),
                               [&](const std::string& a) { return text::to_lower(a) == want; });
        if (it == f.allowed.end())
          throw StructuredOutputError(ParseFailure::enum_violation,
                                      "field '" + f.name + "' value '" + v.get<std::string>() + "' not allowed");
        out[f.name] = *it;
        break;
      }
      case FieldType::string_list: {
        if (!v.is_array()) throw StructuredOutputError(ParseFailure::type_mismatch, "field '" + f.name + "' is not a list");
        json list = json::array();
        for (const auto& el : v) {
          if (el.is_string())
            list.push_back(el);
          else if (el.is_number_integer())
            list.push_back(std::to_string(el.get<long long>()));
          else
            throw StructuredOutputError(ParseFailure::type_mismatch, "field '" + f.name + "' holds a non-string element");
        }
        out[f.name] = std::move(list);
        break;
      }
    }
  }
  return out;
}

// End of the balanced {...} starting at `start`, honoring JSON strings.
inline std::size_t match_brace(std::string_view s, std::size_t start) {
  int depth = 0;
  bool in_str = false, esc = false;
  for (std::size_t i = start; i < s.size(); ++i) {
    char c = s[i];
    if (in_str) {
      if (esc) esc = false;
      else if (c == '\\') esc = true;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') in_str = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

}  // namespace detail

// Returns the first JSON object embedded in `response` that matches the
// schema. Surrounding prose and code fences are ignored. When objects are
// found but none match, the first object's failure is reported.
inline Record parse_structured(std::string_view response, const OutputSchema& schema) {
  if (schema.fields.empty()) throw PreconditionError("output schema is empty");
  std::optional<StructuredOutputError> first_failure;
  for (std::size_t pos = response.find('{'); pos != std::string_view::npos; pos = response.find('{', pos + 1)) {
    auto end = detail::match_brace(response, pos);
    if (end == std::string_view::npos) continue;
    json candidate;
    try {
      candidate = json::parse(response.substr(pos, end - pos + 1));
    } catch (const json::parse_error&) {
      continue;
    }
    if (!candidate.is_object()) continue;
    try {
      return detail::conform(candidate, schema);
    } catch (const StructuredOutputError& e) {
      if (!first_failure) first_failure = e;
    }
  }
  if (first_failure) throw *first_failure;
  throw StructuredOutputError(ParseFailure::no_record, "no parsable JSON record in response");
}

// ---------------------------------------------------------------- templates

struct DecodingParams {
  double temperature = 0.0;
  int max_tokens = 512;
};

struct FewShotExample {
  std::string input;
  Record output;
};

namespace detail {

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Walks a template calling on_text for literal runs and on_slot for {name}
// placeholders. "{{" and "}}" are literal braces; other braces are literal.
template <class Text, class Slot>
void scan_template(std::string_view t, Text on_text, Slot on_slot) {
  std::size_t i = 0;
  while (i < t.size()) {
    char c = t[i];
    if ((c == '{' || c == '}') && i + 1 < t.size() && t[i + 1] == c) {
      on_text(std::string_view(&t[i], 1));
      i += 2;
      continue;
    }
    if (c == '{' && i + 1 < t.size() && ident_start(t[i + 1])) {
      std::size_t j = i + 1;
      while (j < t.size() && ident_char(t[j])) ++j;
      if (j < t.size() && t[j] == '}') {
        on_slot(t.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
    }
    on_text(t.substr(i, 1));
    ++i;
  }
}

}  // namespace detail

// Placeholder names in order of first appearance.
inline std::vector<std::string> placeholders(std::string_view instructions) {
  std::vector<std::string> out;
  detail::scan_template(
      instructions, [](std::string_view) {},
      [&](std::string_view name) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.emplace_back(name);
      });
  return out;
}

inline std::string instantiate(std::string_view instructions, const Variables& vars) {
  std::string out;
  detail::scan_template(
      instructions, [&](std::string_view s) { out.append(s); },
      [&](std::string_view name) {
        auto it = vars.find(std::string(name));
        if (it == vars.end()) throw PreconditionError("unbound placeholder " + std::string(name));
        out += it->second;
      });
  return out;
}

struct PromptTemplate {
  std::string template_id;
  std::string role_preamble;
  std::string instructions;
  std::vector<FewShotExample> few_shot_examples;
  OutputSchema output_schema;
  DecodingParams decoding;

  // Throws when a few-shot output does not satisfy the schema or the
  // decoding parameters are out of range.
  void validate() const {
    if (template_id.empty()) throw ConfigError("template_id", "must be non-empty");
    if (output_schema.fields.empty()) throw ConfigError("output_schema", "must be non-empty");
    if (decoding.temperature < 0) throw ConfigError("decoding.temperature", "must be >= 0");
    if (decoding.max_tokens <= 0) throw ConfigError("decoding.max_tokens", "must be > 0");
    for (std::size_t i = 0; i < few_shot_examples.size(); ++i) {
      try {
        parse_structured(few_shot_examples[i].output.dump(), output_schema);
      } catch (const StructuredOutputError& e) {
        throw ConfigError("few_shot_examples[" + std::to_string(i) + "]", e.what());
      }
    }
  }
};

inline json to_json(const PromptTemplate& t) {
  json ex = json::array();
  for (const auto& e : t.few_shot_examples) ex.push_back({{"input", e.input}, {"output", e.output}});
  return {{"template_id", t.template_id},
          {"role_preamble", t.role_preamble},
          {"instructions", t.instructions},
          {"few_shot_examples", ex},
          {"output_schema", to_json(t.output_schema)},
          {"decoding", {{"temperature", t.decoding.temperature}, {"max_tokens", t.decoding.max_tokens}}}};
}

inline PromptTemplate template_from_json(const json& j) {
  PromptTemplate t;
  try {
    t.template_id = j.at("template_id").get<std::string>();
    t.role_preamble = j.value("role_preamble", std::string());
    t.instructions = j.at("instructions").get<std::string>();
    for (const auto& e : j.value("few_shot_examples", json::array())) t.few_shot_examples.push_back({e.at("input"), e.at("output")});
    t.output_schema = schema_from_json(j.at("output_schema"));
    if (j.contains("decoding")) {
      t.decoding.temperature = j["decoding"].value("temperature", 0.0);
      t.decoding.max_tokens = j["decoding"].value("max_tokens", 512);
    }
  } catch (const json::exception& e) {
    throw ConfigError("template", e.what());
  }
  t.validate();
  return t;
}

inline PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open template " + path.string());
  try {
    return template_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// preamble, then a user/assistant pair per example, then the instruction.
inline Messages render_prompt(const PromptTemplate& t, const Variables& vars) {
  Messages out;
  out.push_back({Role::system, t.role_preamble});
  for (const auto& ex : t.few_shot_examples) {
    out.push_back({Role::user, ex.input});
    out.push_back({Role::assistant, ex.output.dump()});
  }
  out.push_back({Role::user, instantiate(t.instructions, vars)});
  return out;
}

// ---------------------------------------------------------------- backends

struct Reply {
  std::string text;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
};

struct BackendLimits {
  std::size_t max_concurrency = 4;
  int retry_budget = 3;
};

class MissingFixture : public Error {
 public:
  explicit MissingFixture(std::string d)
      : Error("missing_fixture", "no stub fixture for prompt digest " + d), digest_(std::move(d)) {}
  const std::string& prompt_digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual Reply send(const Messages& messages, const DecodingParams& decoding) = 0;
  virtual std::string kind() const = 0;
  virtual BackendLimits limits() const { return {}; }
};

// Offline backend answering from a digest → response table.
class StubBackend : public Backend {
 public:
  StubBackend() = default;
  explicit StubBackend(std::map<std::string, std::string> table) : table_(std::move(table)) {}

  static StubBackend from_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open fixtures " + path.string());
    StubBackend s;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (text::strip(line).empty()) continue;
      try {
        auto j = json::parse(line);
        s.add(j.at("digest").get<std::string>(), j.at("response").get<std::string>());
      } catch (const json::exception& e) {
        throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
    return s;
  }

  void add(std::string prompt_digest, std::string response) { table_[std::move(prompt_digest)] = std::move(response); }
  void add(const Messages& msgs, std::string response) { add(digest(msgs), std::move(response)); }
  std::size_t size() const { return table_.size(); }

  Reply send(const Messages& messages, const DecodingParams&) override {
    auto d = digest(messages);
    auto it = table_.find(d);
    if (it == table_.end()) throw MissingFixture(d);
    return {it->second, std::nullopt, std::nullopt};
  }
  std::string kind() const override { return "stub"; }

 private:
  std::map<std::string, std::string> table_;
};

// Backend answering through a caller-supplied function. Used to script
// fixture generation and failure injection.
class CallbackBackend : public Backend {
 public:
  using Fn = std::function<std::string(const Messages&)>;
  explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}
  Reply send(const Messages& messages, const DecodingParams&) override { return {fn_(messages), std::nullopt, std::nullopt}; }
  std::string kind() const override { return "stub"; }

 private:
  Fn fn_;
};

struct RemoteConfig {
  std::string endpoint;
  std::optional<std::string> credential_env;
  std::string response_field = "/choices/0/message/content";
  json extra_body = json::object();  // model name and other provider fields
  std::chrono::milliseconds timeout{60000};
  BackendLimits limits;
};

class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {
    http::parse_url(cfg_.endpoint);
    if (cfg_.limits.max_concurrency == 0) throw ConfigError("max_concurrency", "must be > 0");
  }

  Reply send(const Messages& messages, const DecodingParams& decoding) override {
    json body = cfg_.extra_body.is_object() ? cfg_.extra_body : json::object();
    body["messages"] = to_json(messages);
    body["temperature"] = decoding.temperature;
    body["max_tokens"] = decoding.max_tokens;
    auto resp = http::post_json(cfg_.endpoint, body, {cfg_.timeout, cfg_.credential_env});
    auto field = http::at_path(resp, cfg_.response_field);
    if (!field.is_string()) throw http::TransportError(http::FailureKind::fatal, "response field is not text");
    Reply r{field.get<std::string>(), std::nullopt, std::nullopt};
    if (resp.contains("usage") && resp["usage"].is_object()) {
      const auto& u = resp["usage"];
      if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_integer()) r.prompt_tokens = u["prompt_tokens"].get<int>();
      if (u.contains("completion_tokens") && u["completion_tokens"].is_number_integer())
        r.completion_tokens = u["completion_tokens"].get<int>();
    }
    return r;
  }
  std::string kind() const override { return "remote"; }
  BackendLimits limits() const override { return cfg_.limits; }
  const RemoteConfig& config() const { return cfg_; }

 private:
  RemoteConfig cfg_;
};

// Forwards to another backend and remembers every digest → response pair so
// the session can be replayed offline.
class RecordingBackend : public Backend {
 public:
  explicit RecordingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}

  Reply send(const Messages& messages, const DecodingParams& decoding) override {
    auto r = inner_->send(messages, decoding);
    std::lock_guard lock(mu_);
    recorded_[digest(messages)] = r.text;
    return r;
  }
  std::string kind() const override { return inner_->kind(); }
  BackendLimits limits() const override { return inner_->limits(); }

  std::map<std::string, std::string> recorded() const {
    std::lock_guard lock(mu_);
    return recorded_;
  }

  // Sorted by digest so reruns produce identical files.
  void write_jsonl(std::ostream& out) const {
    for (const auto& [d, resp] : recorded()) out << json{{"digest", d}, {"response", resp}}.dump() << '\n';
  }

 private:
  std::shared_ptr<Backend> inner_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> recorded_;
};

// Builds a backend from configuration. Relative fixture paths resolve
// against base_dir.
inline std::shared_ptr<Backend> make_backend(const json& cfg, const std::filesystem::path& base_dir = {}) {
  auto kind = cfg.value("kind", std::string("stub"));
  if (kind == "stub") {
    if (!cfg.contains("fixtures")) return std::make_shared<StubBackend>();
    std::filesystem::path p = cfg["fixtures"].get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return std::make_shared<StubBackend>(StubBackend::from_jsonl(p));
  }
  if (kind == "remote") {
    RemoteConfig rc;
    if (!cfg.contains("endpoint") || !cfg["endpoint"].is_string()) throw ConfigError("backend.endpoint", "required for remote");
    rc.endpoint = cfg["endpoint"];
    if (cfg.contains("credential_env")) rc.credential_env = cfg["credential_env"].get<std::string>();
    rc.response_field = cfg.value("response_field", rc.response_field);
    rc.extra_body = cfg.value("extra_body", json::object());
    rc.timeout = std::chrono::milliseconds(cfg.value("timeout_ms", 60000));
    rc.limits.max_concurrency = cfg.value("max_concurrency", std::size_t{4});
    rc.limits.retry_budget = cfg.value("retry_budget", 3);
    if (rc.limits.retry_budget < 0) throw ConfigError("backend.retry_budget", "must be >= 0");
    try {
      return std::make_shared<RemoteBackend>(std::move(rc));
    } catch (const DomainError& e) {
      throw ConfigError("backend.endpoint", e.what());
    }
  }
  throw ConfigError("backend.kind", "unknown backend kind '" + kind + "'");
}

// ---------------------------------------------------------------- audit

struct ChatExchange {
  std::uint64_t exchange_id = 0;
  std::string template_id;
  Messages messages;
  std::string response_text;
  std::int64_t latency_ms = 0;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
  std::string status = "ok";  // ok | error
  std::string error;
  int attempt = 0;
};

inline json to_json(const ChatExchange& x) {
  json j{{"exchange_id", x.exchange_id},
         {"template_id", x.template_id},
         {"messages", to_json(x.messages)},
         {"response_text", x.response_text},
         {"latency_ms", x.latency_ms},
         {"status", x.status},
         {"attempt", x.attempt}};
  json tokens = json::object();
  if (x.prompt_tokens) tokens["prompt"] = *x.prompt_tokens;
  if (x.completion_tokens) tokens["completion"] = *x.completion_tokens;
  j["token_counts"] = tokens.empty() ? json(nullptr) : tokens;
  if (!x.error.empty()) j["error"] = x.error;
  return j;
}

// Append-only exchange log with an optional line-delimited file sink.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(const std::filesystem::path& sink) : sink_(sink, std::ios::app) {
    if (!sink_) throw IoError("cannot open audit log " + sink.string());
  }

  std::uint64_t append(ChatExchange x) {
    std::lock_guard lock(mu_);
    x.exchange_id = ++next_id_;
    if (sink_.is_open()) {
      sink_ << to_json(x).dump() << '\n';
      sink_.flush();
    }
    entries_.push_back(std::move(x));
    return next_id_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  std::vector<ChatExchange> snapshot() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  void write_jsonl(std::ostream& out) const {
    for (const auto& x : snapshot()) out << to_json(x).dump() << '\n';
  }

 private:
  mutable std::mutex mu_;
  std::vector<ChatExchange> entries_;
  std::uint64_t next_id_ = 0;
  std::ofstream sink_;
};

// ---------------------------------------------------------------- gateway

struct RetryPolicy {
  int retry_budget = 3;
  std::chrono::milliseconds base_delay{200};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{10000};
};

struct Completion {
  std::string text;
  std::vector<std::uint64_t> exchange_ids;
  int retries = 0;
};

struct StructuredResult {
  Record record;
  std::string raw_response;
  std::vector<std::uint64_t> exchange_ids;
  bool repaired = false;
};

// Returns an error message when a parsed record is semantically unusable.
using Validator = std::function<std::optional<std::string>(const Record&)>;

class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<AuditLog> audit = nullptr,
                   std::optional<RetryPolicy> retry = std::nullopt)
      : backend_(std::move(backend)),
        audit_(audit ? std::move(audit) : std::make_shared<AuditLog>()),
        slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(backend_->limits().max_concurrency, 1, 1024))) {
    if (retry) {
      retry_ = *retry;
    } else {
      retry_.retry_budget = backend_->limits().retry_budget;
    }
  }

  Backend& backend() { return *backend_; }
  AuditLog& audit() { return *audit_; }
  std::shared_ptr<AuditLog> audit_ptr() { return audit_; }
  const RetryPolicy& retry_policy() const { return retry_; }

  // One logical completion. Transient failures are retried with exponential
  // backoff; every attempt is logged.
  Completion complete(const Messages& messages, const DecodingParams& decoding, std::string_view template_id = {}) {
    Completion out;
    auto delay = retry_.base_delay;
    for (int attempt = 0;; ++attempt) {
      ChatExchange x;
      x.template_id = std::string(template_id);
      x.messages = messages;
      x.attempt = attempt;
      auto t0 = std::chrono::steady_clock::now();
      auto elapsed = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
      };
      try {
        Reply r;
        {
          slots_.acquire();
          struct Release {
            std::counting_semaphore<1024>& s;
            ~Release() { s.release(); }
          } release{slots_};
          r = backend_->send(messages, decoding);
        }
        x.latency_ms = elapsed();
        x.response_text = r.text;
        x.prompt_tokens = r.prompt_tokens;
        x.completion_tokens = r.completion_tokens;
        out.exchange_ids.push_back(audit_->append(std::move(x)));
        out.text = std::move(r.text);
        out.retries = attempt;
        return out;
      } catch (const http::TransportError& e) {
        x.latency_ms = elapsed();
        x.status = "error";
        x.error = e.code() + ": " + e.what();
        out.exchange_ids.push_back(audit_->append(std::move(x)));
        if (!e.retryable()) throw;
        if (attempt >= retry_.retry_budget) {
          if (e.kind() == http::FailureKind::rate_limited)
            throw Error("rate_limit_exhausted", "rate limit persisted after " + std::to_string(attempt) + " retries");
          throw;
        }
        std::this_thread::sleep_for(delay);
        delay = std::min(retry_.max_delay, std::chrono::duration_cast<std::chrono::milliseconds>(delay * retry_.multiplier));
      } catch (const Error& e) {
        x.latency_ms = elapsed();
        x.status = "error";
        x.error = e.code() + ": " + e.what();
        audit_->append(std::move(x));
        throw;
      }
    }
  }

  // render + complete + parse, with exactly one repair re-prompt when the
  // reply does not parse or fails the validator.
  StructuredResult run(const PromptTemplate& t, const Variables& vars, const Validator& validator = {}) {
    auto messages = render_prompt(t, vars);
    StructuredResult res;
    auto c = complete(messages, t.decoding, t.template_id);
    res.exchange_ids = c.exchange_ids;
    res.raw_response = c.text;
    std::string problem;
    try {
      res.record = checked(c.text, t.output_schema, validator);
      return res;
    } catch (const StructuredOutputError& e) {
      problem = e.what();
    }
    auto repair = messages;
    repair.push_back({Role::assistant, c.text});
    repair.push_back({Role::user, repair_instruction(t.output_schema, problem)});
    auto c2 = complete(repair, t.decoding, t.template_id);
    res.exchange_ids.insert(res.exchange_ids.end(), c2.exchange_ids.begin(), c2.exchange_ids.end());
    res.raw_response = c2.text;
    res.repaired = true;
    res.record = checked(c2.text, t.output_schema, validator);
    return res;
  }

  static std::string repair_instruction(const OutputSchema& schema, const std::string& problem) {
    return "Your previous reply could not be used (" + problem +
           "). Reply again with only a JSON object with these fields: " + schema.describe() + ".";
  }

 private:
  static Record checked(const std::string& response, const OutputSchema& schema, const Validator& validator) {
    auto rec = parse_structured(response, schema);
    if (validator) {
      if (auto msg = validator(rec)) throw StructuredOutputError(ParseFailure::validation, *msg);
    }
    return rec;
  }

  std::shared_ptr<Backend> backend_;
  std::shared_ptr<AuditLog> audit_;
  RetryPolicy retry_;
  std::counting_semaphore<1024> slots_;
};

// ---------------------------------------------------------------- chaining

using Adapter = std::function<Variables(const Record& output, const Variables& input)>;

struct ChainStep {
  PromptTemplate tmpl;
  Adapter next;  // maps this step's record to the following step's variables
  Validator validator;
};

struct ChainResult {
  Record record;
  std::vector<StructuredResult> steps;
};

class ChainError : public Error {
 public:
  ChainError(std::size_t step, const Error& cause)
      : Error(cause.code(), "chain step " + std::to_string(step) + ": " + cause.what()), step_(step) {}
  std::size_t step_index() const noexcept { return step_; }  // 1-based

 private:
  std::size_t step_;
};

inline ChainResult chain(Gateway& gw, const std::vector<ChainStep>& steps, Variables input) {
  if (steps.empty()) throw PreconditionError("chain needs at least one step");
  ChainResult out;
  Variables vars = std::move(input);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    try {
      out.steps.push_back(gw.run(steps[i].tmpl, vars, steps[i].validator));
      if (i + 1 < steps.size()) {
        if (!steps[i].next) throw PreconditionError("chain step has no adapter");
        vars = steps[i].next(out.steps.back().record, vars);
      }
    } catch (const ChainError&) {
      throw;
    } catch (const Error& e) {
      throw ChainError(i + 1, e);
    }
  }
  out.record = out.steps.back().record;
  return out;
}

// ---------------------------------------------------------------- selection

struct DevExample {
  Variables variables;
  Record gold;
};

// Scores a variant: predictions[i] is empty when example i failed to parse.
using Metric = std::function<double(const std::vector<std::optional<Record>>& predictions, const std::vector<DevExample>& dev)>;

struct SelectionResult {
  PromptTemplate best;
  std::vector<std::pair<std::string, double>> scores;  // ordered by template_id
};

inline SelectionResult select_template(Gateway& gw, const std::vector<PromptTemplate>& variants,
                                       const std::vector<DevExample>& dev, const Metric& metric) {
  if (variants.empty()) throw PreconditionError("no template variants");
  if (dev.empty()) throw PreconditionError("empty dev set");
  std::vector<std::size_t> order(variants.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return variants[a].template_id < variants[b].template_id; });

  SelectionResult res;
  std::optional<std::size_t> best;
  double best_score = 0;
  bool any_parsed = false;
  for (auto idx : order) {
    const auto& v = variants[idx];
    std::vector<std::optional<Record>> preds;
    for (const auto& ex : dev) {
      try {
        preds.push_back(gw.run(v, ex.variables).record);
        any_parsed = true;
      } catch (const StructuredOutputError&) {
        preds.push_back(std::nullopt);
      }
    }
    double s = metric(preds, dev);
    res.scores.emplace_back(v.template_id, s);
    if (!best || s > best_score) {
      best = idx;
      best_score = s;
    }
  }
  if (!any_parsed) throw Error("selection_failed", "every template variant failed to parse on every dev example");
  res.best = variants[*best];
  return res;
}

// ---------------------------------------------------------------- refinement

struct FailureCase {
  std::string input;
  std::string wrong_output;
  std::string gold;
};

inline PromptTemplate refinement_meta_template() {
  PromptTemplate m;
  m.template_id = "meta-refine";
  m.role_preamble = "You are a prompt engineer improving instructions for a review-analysis model.";
  m.instructions =
      "The instruction below produced wrong outputs on the listed cases.\n"
      "Instruction:\n{instruction}\n\nFailures:\n{failures}\n\n"
      "Rewrite the instruction so the model produces the gold outputs. Keep every placeholder in curly braces "
      "exactly as written ({placeholders}). Reply with a JSON object {{\"instruction\": \"...\"}}.";
  m.output_schema.fields = {{"instruction", FieldType::string, {}, true}};
  return m;
}

// Asks the backend to rewrite the instruction given failure cases. Returns a
// new variant "<id>-r<round>" with the same schema.
inline PromptTemplate refine_template(Gateway& gw, const PromptTemplate& t, const std::vector<FailureCase>& failures,
                                      int rounds = 1) {
  if (failures.empty()) throw PreconditionError("refinement needs at least one failure case");
  if (rounds < 1) throw PreconditionError("refinement rounds must be >= 1");
  auto meta = refinement_meta_template();
  auto required = placeholders(t.instructions);
  std::string slots;
  for (const auto& p : required) slots += (slots.empty() ? "{" : ", {") + p + "}";

  PromptTemplate current = t;
  for (int round = 1; round <= rounds; ++round) {
    std::string listing;
    for (std::size_t i = 0; i < failures.size(); ++i) {
      listing += std::to_string(i + 1) + ". input: " + failures[i].input + "\n   wrong output: " + failures[i].wrong_output +
                 "\n   gold: " + failures[i].gold + "\n";
    }
    auto res = gw.run(meta, {{"instruction", current.instructions}, {"failures", listing}, {"placeholders", slots}});
    auto rewritten = res.record["instruction"].get<std::string>();
    auto got = placeholders(rewritten);
    for (const auto& p : required) {
      if (std::find(got.begin(), got.end(), p) == got.end())
        throw Error("refinement_rejected", "refined instruction drops placeholder {" + p + "}");
    }
    PromptTemplate next = current;
    next.instructions = std::move(rewritten);
    next.template_id = t.template_id + "-r" + std::to_string(round);
    current = std::move(next);
  }
  return current;
}

}  // namespace revlens::llm
