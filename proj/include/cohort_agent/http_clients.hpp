#pragma once

#include <memory>
#include <semaphore>
#include <string>

#include <httplib.h>

#include "cohort_agent/models.hpp"
#include "cohort_agent/policy.hpp"

namespace cohort_agent {

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string path;
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::InvalidArgument, "endpoint URL needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

namespace detail {

/// POST with timeout and retries; throws `unavailable` on exhaustion.
inline std::string post_json(const std::string& url, const std::string& body, int timeout_ms, int retries,
                             ErrorCode unavailable) {
  const auto ep = parse_endpoint(url);
  httplib::Client client(ep.origin);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  std::string last = "no attempt made";
  for (int attempt = 0; attempt <= std::max(0, retries); ++attempt) {
    auto res = client.Post(ep.path, body, "application/json");
    if (!res) {
      last = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) return res->body;
    last = "HTTP " + std::to_string(res->status);
  }
  throw Error(unavailable, url + ": " + last);
}

}  // namespace detail

class HttpAdapterTransport final : public AdapterTransport {
 public:
  std::string post(const AdapterParams& endpoint, const std::string& body) override {
    return detail::post_json(endpoint.url, body, endpoint.timeout_ms, endpoint.retries, ErrorCode::AdapterUnavailable);
  }
};

struct CompletionEndpoint {
  std::string url;
  std::string model = "default";
  int timeout_ms = 30000;
  int retries = 2;
  int max_in_flight = 4;
};

/// Generic text-completion endpoint. Sends {"model", "prompt",
/// "temperature": 0} and reads "text", "completion", or an OpenAI-style
/// choices[0].text / choices[0].message.content.
class HttpCompletionBackend final : public CompletionBackend {
 public:
  explicit HttpCompletionBackend(CompletionEndpoint endpoint)
      : endpoint_(std::move(endpoint)),
        slots_(std::make_unique<std::counting_semaphore<1024>>(std::clamp(endpoint_.max_in_flight, 1, 1024))) {}

  std::string complete(const std::string& prompt) override {
    slots_->acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{*slots_};

    const Json request{{"model", endpoint_.model}, {"prompt", prompt}, {"temperature", 0}};
    const auto body = detail::post_json(endpoint_.url, request.dump(), endpoint_.timeout_ms, endpoint_.retries,
                                        ErrorCode::BackendUnavailable);
    Json j;
    try {
      j = Json::parse(body);
    } catch (const Json::exception&) {
      return body;  // plain-text reply
    }
    if (j.is_string()) return j.get<std::string>();
    if (j.is_object()) {
      for (const char* key : {"text", "completion", "response"})
        if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
      if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
        const auto& c = j["choices"][0];
        if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
        if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string())
          return c["message"]["content"].get<std::string>();
      }
    }
    return body;
  }

 private:
  CompletionEndpoint endpoint_;
  std::unique_ptr<std::counting_semaphore<1024>> slots_;
};

}  // namespace cohort_agent
