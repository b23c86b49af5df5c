#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unitscope/image.hpp"

namespace unitscope {

// Image corpus described by a JSON-lines manifest. An optional first line
// {"class_names": [...]} declares the label set; every other line is one
// image record {"id", "path", "label"?}. Paths resolve relative to the
// manifest location. Iteration order is manifest order.
class Corpus {
 public:
  struct Record {
    std::string id;
    std::filesystem::path path;
    std::optional<int> label;
  };

  static Corpus load(const std::filesystem::path& manifest_path);

  size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  const Record& record(size_t index) const { return records_.at(index); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::filesystem::path& manifest_path() const { return manifest_path_; }
  std::string content_hash() const { return content_hash_; }

  Image load_image_at(size_t index) const;
  std::vector<Image> load_all() const;

  // Per-channel mean pixel over the corpus, used as the default occluder fill.
  std::array<double, 3> mean_pixel() const;

  // Deterministic per-class subsample: up to n_per_class images per label,
  // chosen by a seeded shuffle of each label bucket. Unlabeled images are
  // skipped. Returns indices in ascending order.
  std::vector<size_t> stratified_sample(int n_per_class, uint64_t seed) const;

  // View of selected records (same class names and base paths).
  Corpus subset(const std::vector<size_t>& indices) const;

 private:
  std::filesystem::path manifest_path_;
  std::vector<Record> records_;
  std::vector<std::string> class_names_;
  std::string content_hash_;
};

}  // namespace unitscope
