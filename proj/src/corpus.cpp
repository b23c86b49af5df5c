#include "unitscope/corpus.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/hashing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace unitscope {

Corpus Corpus::load(const fs::path& manifest_path) {
  Corpus corpus;
  corpus.manifest_path_ = manifest_path;
  const std::string text = read_file(manifest_path);
  corpus.content_hash_ = short_hash(text);
  const fs::path base = manifest_path.parent_path();

  std::istringstream lines(text);
  std::string line;
  std::set<std::string> seen_ids;
  bool first = true;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw Error("bad manifest line: " + std::string(e.what()));
    }
    if (first && j.contains("class_names")) {
      corpus.class_names_ = j.at("class_names").get<std::vector<std::string>>();
      std::set<std::string> uniq(corpus.class_names_.begin(), corpus.class_names_.end());
      if (uniq.size() != corpus.class_names_.size())
        throw Error("manifest class names are not unique");
      first = false;
      continue;
    }
    first = false;
    Record rec;
    rec.id = j.at("id").get<std::string>();
    if (!seen_ids.insert(rec.id).second) throw Error("duplicate image id: " + rec.id);
    fs::path p = j.at("path").get<std::string>();
    rec.path = p.is_absolute() ? p : base / p;
    if (!fs::exists(rec.path))
      throw Error("manifest references missing file: " + rec.path.string());
    if (j.contains("label") && !j.at("label").is_null()) {
      const int label = j.at("label").get<int>();
      if (corpus.class_names_.empty())
        throw Error("labeled manifest must start with a class_names header line");
      if (label < 0 || label >= static_cast<int>(corpus.class_names_.size()))
        throw Error("label out of range for image " + rec.id);
      rec.label = label;
    }
    corpus.records_.push_back(std::move(rec));
  }
  if (corpus.records_.empty()) throw Error("manifest lists no images");
  return corpus;
}

Image Corpus::load_image_at(size_t index) const {
  const Record& rec = records_.at(index);
  Image img = load_image(rec.path, rec.id);
  img.label = rec.label;
  return img;
}

std::vector<Image> Corpus::load_all() const {
  std::vector<Image> out;
  out.reserve(records_.size());
  for (size_t i = 0; i < records_.size(); ++i) out.push_back(load_image_at(i));
  return out;
}

std::array<double, 3> Corpus::mean_pixel() const {
  std::array<double, 3> acc{0.0, 0.0, 0.0};
  for (size_t i = 0; i < records_.size(); ++i) {
    const auto m = unitscope::mean_pixel(load_image_at(i));
    for (int c = 0; c < 3; ++c) acc[static_cast<size_t>(c)] += m[static_cast<size_t>(c)];
  }
  for (auto& v : acc) v /= static_cast<double>(records_.size());
  return acc;
}

std::vector<size_t> Corpus::stratified_sample(int n_per_class, uint64_t seed) const {
  std::map<int, std::vector<size_t>> buckets;
  for (size_t i = 0; i < records_.size(); ++i)
    if (records_[i].label) buckets[*records_[i].label].push_back(i);
  std::vector<size_t> out;
  for (auto& [label, indices] : buckets) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(label + 1)));
    std::shuffle(indices.begin(), indices.end(), rng);
    const size_t keep = std::min<size_t>(indices.size(), static_cast<size_t>(n_per_class));
    out.insert(out.end(), indices.begin(), indices.begin() + static_cast<long>(keep));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Corpus Corpus::subset(const std::vector<size_t>& indices) const {
  Corpus sub;
  sub.manifest_path_ = manifest_path_;
  sub.class_names_ = class_names_;
  sub.records_.reserve(indices.size());
  std::string key = content_hash_;
  for (size_t i : indices) {
    sub.records_.push_back(records_.at(i));
    key += ":" + std::to_string(i);
  }
  if (sub.records_.empty()) throw Error("subset selects no images");
  sub.content_hash_ = short_hash(key);
  return sub;
}

}  // namespace unitscope
