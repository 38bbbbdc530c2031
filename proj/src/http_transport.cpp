#include <httplib.h>

#include "coached/error.hpp"
#include "coached/llm.hpp"

namespace coached::llm {

namespace {

class HttplibTransport final : public Transport {
 public:
  HttplibTransport(const std::string& base_url, std::chrono::milliseconds timeout) {
    // scheme://host[:port][/prefix]
    const auto scheme_end = base_url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = base_url.find('/', host_start);
    origin_ = base_url.substr(0, path_start);
    if (path_start != std::string::npos) prefix_ = base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    // Strip a trailing /v1; request paths carry it.
    if (prefix_.size() >= 3 && prefix_.compare(prefix_.size() - 3, 3, "/v1") == 0) {
      prefix_.resize(prefix_.size() - 3);
    }
    if (!httplib::Client(origin_).is_valid()) {
      throw Error(ErrorKind::kConfigError, "unsupported base_url '" + base_url + "'");
    }
    secs_ = static_cast<time_t>(timeout.count() / 1000);
    usecs_ = static_cast<time_t>((timeout.count() % 1000) * 1000);
  }

  HttpResponse post_json(const std::string& path, const std::string& body,
                         const std::map<std::string, std::string>& headers) override {
    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        h.emplace(k, v);
      }
    }
    // Fresh client per request.
    httplib::Client client(origin_);
    client.set_connection_timeout(secs_, usecs_);
    client.set_read_timeout(secs_, usecs_);
    client.set_write_timeout(secs_, usecs_);
    auto res = client.Post(prefix_ + path, h, body, content_type);
    HttpResponse out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

 private:
  std::string origin_;
  std::string prefix_;
  time_t secs_ = 60;
  time_t usecs_ = 0;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& base_url,
                                               std::chrono::milliseconds timeout) {
  return std::make_unique<HttplibTransport>(base_url, timeout);
}

}  // namespace coached::llm
