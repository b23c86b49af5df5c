#include "unitscope/http_support.hpp"

#include "httplib.h"
#include "unitscope/common.hpp"

namespace unitscope {

std::string http_post_json(const std::string& base_url, const std::string& path,
                           const std::string& body, const std::string& bearer,
                           int timeout_seconds) {
  if (base_url.find("://") == std::string::npos)
    throw Error("service URL must include scheme: " + base_url);
  httplib::Client client(base_url);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  httplib::Headers headers;
  if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);
  auto res = client.Post(path, headers, body, "application/json");
  if (!res)
    throw Error("request to " + base_url + path + " failed: connection error (" +
                httplib::to_string(res.error()) + ")");
  if (res->status < 200 || res->status >= 300)
    throw Error("request to " + base_url + path + " failed: HTTP " +
                std::to_string(res->status));
  return res->body;
}

}  // namespace unitscope
