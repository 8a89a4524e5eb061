#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include <httplib.h>

namespace ecpt::detail {

/// Splits "https://host:port/v1" into origin and path prefix.
struct Endpoint {
  std::string origin;
  std::string prefix;
};

inline Endpoint parse_base_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("base URL needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  e.prefix = path_start == std::string::npos ? std::string{} : url.substr(path_start);
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  return e;
}

inline std::unique_ptr<httplib::Client> make_client(const Endpoint& e, std::chrono::seconds timeout) {
  auto client = std::make_unique<httplib::Client>(e.origin);
  client->set_connection_timeout(timeout);
  client->set_read_timeout(timeout);
  client->set_write_timeout(timeout);
  return client;
}

}  // namespace ecpt::detail
