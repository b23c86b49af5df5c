#include "unitscope/cache.hpp"

#include <iostream>

#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/hashing.hpp"

namespace fs = std::filesystem;

namespace unitscope {

ArtifactCache::ArtifactCache(fs::path root) : root_(std::move(root)) {
  ensure_dir(root_);
}

std::string ArtifactCache::make_key(const std::string& params_json) {
  return sha256_hex(params_json).substr(0, 32);
}

fs::path ArtifactCache::entry_path(const std::string& model_hash, const std::string& op,
                                   const std::string& key) const {
  return root_ / model_hash / op / (key + ".bin");
}

std::optional<std::string> ArtifactCache::get(const std::string& model_hash,
                                              const std::string& op,
                                              const std::string& key) const {
  if (!enabled()) return std::nullopt;
  const fs::path path = entry_path(model_hash, op, key);
  const fs::path sidecar = fs::path(path.string() + ".sha256");
  if (!fs::exists(path) || !fs::exists(sidecar)) return std::nullopt;
  std::string payload, want;
  try {
    payload = read_file(path);
    want = read_file(sidecar);
  } catch (const Error&) {
    return std::nullopt;
  }
  while (!want.empty() && (want.back() == '\n' || want.back() == '\r')) want.pop_back();
  if (sha256_hex(payload) != want) {
    std::cerr << "warning: cache checksum mismatch for " << path.string()
              << ", treating as miss\n";
    return std::nullopt;
  }
  return payload;
}

CacheEntry ArtifactCache::put(const std::string& model_hash, const std::string& op,
                              const std::string& key, const std::string& payload) const {
  if (!enabled()) return {key, {}, ""};
  const fs::path path = entry_path(model_hash, op, key);
  write_file_atomic(path, payload);
  write_file_atomic(fs::path(path.string() + ".sha256"), sha256_hex(payload) + "\n");
  return {key, path, iso_utc_now()};
}

}  // namespace unitscope
