#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace unitscope {

struct CacheEntry {
  std::string key;
  std::filesystem::path payload_path;
  std::string created_at;
};

// Content-addressed artifact cache. Layout:
//   <root>/<model-hash>/<op>/<key>.bin  (+ .sha256 sidecar)
// Keys hash the caller-supplied parameter string; payloads are verified
// against the sidecar on read and corrupt entries degrade to a miss.
class ArtifactCache {
 public:
  ArtifactCache() = default;  // disabled cache; get misses, put is a no-op
  explicit ArtifactCache(std::filesystem::path root);

  bool enabled() const { return !root_.empty(); }

  static std::string make_key(const std::string& params_json);

  std::optional<std::string> get(const std::string& model_hash, const std::string& op,
                                 const std::string& key) const;
  CacheEntry put(const std::string& model_hash, const std::string& op,
                 const std::string& key, const std::string& payload) const;

 private:
  std::filesystem::path entry_path(const std::string& model_hash, const std::string& op,
                                   const std::string& key) const;
  std::filesystem::path root_;
};

}  // namespace unitscope
