#pragma once

#include <string>

namespace unitscope {

// POST a JSON body to base_url+path, return the response body.
// bearer may be empty (no Authorization header). Throws Error on
// connection failure or non-2xx status.
std::string http_post_json(const std::string& base_url, const std::string& path,
                           const std::string& body, const std::string& bearer,
                           int timeout_seconds);

}  // namespace unitscope
