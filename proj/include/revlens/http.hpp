#pragma once

// JSON-over-HTTP plumbing for remote model providers.

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
// resolv.h defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>

#include "revlens/error.hpp"

namespace revlens::http {

enum class FailureKind { transient, rate_limited, timeout, fatal };

inline const char* to_string(FailureKind k) {
  switch (k) {
    case FailureKind::transient: return "transient";
    case FailureKind::rate_limited: return "rate_limited";
    case FailureKind::timeout: return "timeout";
    case FailureKind::fatal: return "fatal";
  }
  return "fatal";
}

class TransportError : public Error {
 public:
  TransportError(FailureKind kind, const std::string& message, int status = 0)
      : Error(code_for(kind), message), kind_(kind), status_(status) {}

  FailureKind kind() const noexcept { return kind_; }
  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return kind_ != FailureKind::fatal; }

 private:
  static std::string code_for(FailureKind k) {
    switch (k) {
      case FailureKind::rate_limited: return "rate_limited";
      case FailureKind::timeout: return "timeout";
      case FailureKind::transient: return "transport_error";
      case FailureKind::fatal: return "backend_error";
    }
    return "backend_error";
  }
  FailureKind kind_;
  int status_;
};

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // begins with '/'
};

inline Url parse_url(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw DomainError("URL without scheme: " + std::string(url));
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw DomainError("unsupported URL scheme: " + std::string(scheme));
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

struct PostOptions {
  std::chrono::milliseconds timeout{60000};
  std::optional<std::string> bearer_env;  // environment variable holding the token
};

// Sends one POST and classifies failures: 429 → rate_limited, 5xx and
// connection failures → transient, read timeouts → timeout, other non-2xx →
// fatal. Returns the parsed JSON body of a 2xx response.
inline nlohmann::json post_json(const std::string& url, const nlohmann::json& body, const PostOptions& opts) {
  auto target = parse_url(url);
  httplib::Client client(target.origin);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opts.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (opts.bearer_env) {
    const char* token = std::getenv(opts.bearer_env->c_str());
    if (!token) throw TransportError(FailureKind::fatal, "credential variable " + *opts.bearer_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  auto res = client.Post(target.path, headers, body.dump(), "application/json");
  if (!res) {
    auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
      throw TransportError(FailureKind::timeout, "request to " + target.origin + " timed out");
    throw TransportError(FailureKind::transient, "request to " + target.origin + " failed: " + httplib::to_string(err));
  }
  if (res->status == 429) throw TransportError(FailureKind::rate_limited, "rate limited (429)", 429);
  if (res->status >= 500) throw TransportError(FailureKind::transient, "server error " + std::to_string(res->status), res->status);
  if (res->status < 200 || res->status >= 300)
    throw TransportError(FailureKind::fatal, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200),
                         res->status);
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw TransportError(FailureKind::fatal, "response body is not JSON");
  }
}

// Resolves a '/'-separated field path. A "*" segment maps the remainder of
// the path over every element of an array and collects the results.
inline nlohmann::json at_path(const nlohmann::json& doc, std::string_view path) {
  if (!path.empty() && path.front() == '/') path.remove_prefix(1);
  if (path.empty()) return doc;
  auto slash = path.find('/');
  std::string head(path.substr(0, slash));
  std::string_view rest = slash == std::string_view::npos ? std::string_view{} : path.substr(slash + 1);
  if (head == "*") {
    if (!doc.is_array()) throw TransportError(FailureKind::fatal, "response path: '*' applied to a non-array");
    nlohmann::json out = nlohmann::json::array();
    for (const auto& el : doc) out.push_back(at_path(el, rest));
    return out;
  }
  if (doc.is_array()) {
    std::size_t idx = 0;
    try {
      idx = std::stoul(head);
    } catch (const std::exception&) {
      throw TransportError(FailureKind::fatal, "response path: '" + head + "' is not an index");
    }
    if (idx >= doc.size()) throw TransportError(FailureKind::fatal, "response path: index " + head + " out of range");
    return at_path(doc[idx], rest);
  }
  if (!doc.is_object() || !doc.contains(head))
    throw TransportError(FailureKind::fatal, "response path: field '" + head + "' missing");
  return at_path(doc[head], rest);
}

}  // namespace revlens::http
