#include "unitscope/embedder.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/http_support.hpp"

namespace unitscope {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("embedding dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize_in_place(std::vector<double>& v) {
  double n = std::sqrt(dot(v, v));
  if (n <= 0.0) return;  // zero vector stays zero; similarity against it is 0
  for (double& x : v) x /= n;
}

double Embedder::similarity(const Image& patch, const std::string& text) const {
  return dot(embed_image(patch), embed_text(text));
}

std::vector<double> TextEmbeddingCache::get_or_compute(const Embedder& embedder,
                                                       const std::string& text) {
  const auto key = std::make_pair(embedder.id(), text);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
  }
  auto emb = embedder.embed_text(text);
  std::lock_guard<std::mutex> lock(mutex_);
  return entries_.emplace(key, std::move(emb)).first->second;
}

HttpEmbedder::HttpEmbedder(std::string base_url, std::string model_id, int dim,
                           int timeout_seconds)
    : base_url_(std::move(base_url)),
      model_id_(std::move(model_id)),
      dim_(dim),
      timeout_seconds_(timeout_seconds) {
  if (base_url_.empty()) throw UsageError("embedding service URL is empty");
  if (dim_ <= 0) throw UsageError("embedding dimension must be positive");
}

namespace {

std::vector<double> first_embedding(const std::string& body, int want_dim) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad embedding reply: ") + e.what());
  }
  if (!j.contains("embeddings") || !j["embeddings"].is_array() || j["embeddings"].empty())
    throw Error("embedding reply lacks embeddings array");
  auto emb = j["embeddings"][0].get<std::vector<double>>();
  if ((int)emb.size() != want_dim) {
    std::ostringstream os;
    os << "embedding dim " << emb.size() << " != expected " << want_dim;
    throw Error(os.str());
  }
  normalize_in_place(emb);
  return emb;
}

}  // namespace

std::vector<double> HttpEmbedder::embed_text(const std::string& text) const {
  nlohmann::json req;
  req["model"] = model_id_;
  req["texts"] = nlohmann::json::array({text});
  auto body = http_post_json(base_url_, "/embed_text", req.dump(), "", timeout_seconds_);
  return first_embedding(body, dim_);
}

std::vector<double> HttpEmbedder::embed_image(const Image& patch) const {
  nlohmann::json req;
  req["model"] = model_id_;
  nlohmann::json im;
  im["height"] = patch.height;
  im["width"] = patch.width;
  im["channels"] = patch.channels;
  im["pixels"] = patch.pixels;
  req["image"] = std::move(im);
  auto body = http_post_json(base_url_, "/embed_image", req.dump(), "", timeout_seconds_);
  return first_embedding(body, dim_);
}

}  // namespace unitscope
