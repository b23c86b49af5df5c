#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "unitscope/image.hpp"

namespace unitscope {

// Joint image/text embedding space; embeddings are unit-norm so cosine
// similarity is a plain dot product in [-1,1].
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual int dim() const = 0;
  virtual std::vector<double> embed_text(const std::string& text) const = 0;
  virtual std::vector<double> embed_image(const Image& patch) const = 0;

  virtual double similarity(const Image& patch, const std::string& text) const;
};

double dot(const std::vector<double>& a, const std::vector<double>& b);
void normalize_in_place(std::vector<double>& v);

// Read-mostly memo of text embeddings, shared across neurons in one run.
class TextEmbeddingCache {
 public:
  std::vector<double> get_or_compute(const Embedder& embedder, const std::string& text);

 private:
  std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, std::vector<double>> entries_;
};

// Remote embedding service: POST {"texts":[...]} to <base>/embed_text and
// {"image":{"height","width","pixels"}} to <base>/embed_image, each returning
// {"embeddings":[[...]]}. Bridges to real vision-language checkpoints that
// live behind a small HTTP shim.
class HttpEmbedder : public Embedder {
 public:
  HttpEmbedder(std::string base_url, std::string model_id, int dim,
               int timeout_seconds = 60);

  std::string id() const override { return model_id_; }
  int dim() const override { return dim_; }
  std::vector<double> embed_text(const std::string& text) const override;
  std::vector<double> embed_image(const Image& patch) const override;

 private:
  std::string base_url_;
  std::string model_id_;
  int dim_;
  int timeout_seconds_;
};

}  // namespace unitscope
