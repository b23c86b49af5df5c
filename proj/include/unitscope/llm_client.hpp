#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unitscope/vocabulary.hpp"

namespace unitscope {

enum class LLMMode { Live, Fixture, Record };

// Descriptor source. Fixture mode replays recorded raw replies from
// <fixture_dir>/<class-slug>.txt and never touches the network; record mode
// queries live and persists the reply as a fixture.
class LLMClient {
 public:
  struct Options {
    LLMMode mode = LLMMode::Fixture;
    std::filesystem::path fixture_dir;
    std::string endpoint;  // full chat-completions URL (live/record)
    std::string api_key;
    std::string model_id = "gpt-3.5-turbo";
    int timeout_seconds = 30;
    int retry_budget = 2;
    int max_descriptors_per_class = 20;
  };

  explicit LLMClient(Options options);

  // Reads UNITSCOPE_LLM_ENDPOINT / UNITSCOPE_LLM_API_KEY / UNITSCOPE_LLM_MODEL.
  static Options live_options_from_env();

  const Options& options() const { return options_; }

  // Raw reply text for one class prompt (fixture replay, live call, or
  // live-then-record depending on mode).
  std::string raw_reply(const std::string& class_name) const;

  std::vector<Concept> query_descriptors(const std::string& class_name) const;

 private:
  Options options_;
};

// Extracts assistant text from a chat-completions response body; falls back
// to the raw body when it is not JSON in that shape.
std::string extract_chat_reply(const std::string& http_body);

}  // namespace unitscope
