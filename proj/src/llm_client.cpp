#include "unitscope/llm_client.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"

using nlohmann::json;

namespace unitscope {

LLMClient::LLMClient(Options options) : options_(std::move(options)) {
  if (options_.mode != LLMMode::Live && options_.fixture_dir.empty())
    throw Error("fixture/record mode requires a fixture directory");
  if (options_.mode != LLMMode::Fixture && options_.endpoint.empty())
    throw Error("live/record mode requires an endpoint URL");
}

LLMClient::Options LLMClient::live_options_from_env() {
  Options opt;
  opt.mode = LLMMode::Live;
  if (const char* e = std::getenv("UNITSCOPE_LLM_ENDPOINT")) opt.endpoint = e;
  if (const char* k = std::getenv("UNITSCOPE_LLM_API_KEY")) opt.api_key = k;
  if (const char* m = std::getenv("UNITSCOPE_LLM_MODEL")) opt.model_id = m;
  return opt;
}

std::string extract_chat_reply(const std::string& http_body) {
  try {
    const json j = json::parse(http_body);
    if (j.contains("choices") && !j.at("choices").empty()) {
      const auto& first = j.at("choices").at(0);
      if (first.contains("message")) return first.at("message").at("content").get<std::string>();
      if (first.contains("text")) return first.at("text").get<std::string>();
    }
  } catch (const std::exception&) {
  }
  return http_body;
}

namespace {

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error("endpoint URL must include scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string post_with_retries(const LLMClient::Options& opt, const std::string& body) {
  const auto [base, path] = split_url(opt.endpoint);
  std::string last_error;
  for (int attempt = 0; attempt <= opt.retry_budget; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
    httplib::Client client(base);
    client.set_connection_timeout(opt.timeout_seconds, 0);
    client.set_read_timeout(opt.timeout_seconds, 0);
    httplib::Headers headers;
    if (!opt.api_key.empty())
      headers.emplace("Authorization", "Bearer " + opt.api_key);
    auto res = client.Post(path, headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) return res->body;
    last_error = res ? "HTTP " + std::to_string(res->status)
                     : "connection error (" + httplib::to_string(res.error()) + ")";
  }
  throw Error("LLM request failed after " + std::to_string(opt.retry_budget + 1) +
              " attempts: " + last_error);
}

}  // namespace

std::string LLMClient::raw_reply(const std::string& class_name) const {
  const std::string prompt = build_prompt(class_name);
  const std::filesystem::path fixture =
      options_.fixture_dir / (slugify(class_name) + ".txt");

  if (options_.mode == LLMMode::Fixture) {
    if (!std::filesystem::exists(fixture))
      throw UsageError("missing fixture for class '" + class_name +
                       "': " + fixture.string());
    return read_file(fixture);
  }

  json payload;
  payload["model"] = options_.model_id;
  payload["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
  const std::string reply = extract_chat_reply(post_with_retries(options_, payload.dump()));
  if (options_.mode == LLMMode::Record) write_file_atomic(fixture, reply);
  return reply;
}

std::vector<Concept> LLMClient::query_descriptors(const std::string& class_name) const {
  const std::string reply = raw_reply(class_name);
  const std::vector<std::string> items =
      parse_descriptor_list(reply, options_.max_descriptors_per_class);
  if (items.empty())
    throw Error("unparseable LLM reply for class '" + class_name +
                "' (no list items); raw text: " + reply);
  std::vector<Concept> out;
  out.reserve(items.size());
  for (const std::string& text : items) out.push_back({text, {class_name}});
  return out;
}

}  // namespace unitscope
