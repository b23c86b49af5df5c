#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "unitscope/corpus.hpp"
#include "unitscope/embedder.hpp"
#include "unitscope/model.hpp"
#include "unitscope/patches.hpp"

namespace unitscope {

struct Rect {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;

  bool operator==(const Rect&) const = default;
  bool empty() const { return height <= 0 || width <= 0; }
};

// One planted detector: a saturated color square the matching conv unit
// fires on. Colors use {0,1} channels so responses stay closed-form.
struct PlantedTrigger {
  std::array<float, 3> color{1.0f, 0.0f, 0.0f};
  Rect region;  // canonical placement; corpus generation may randomize
  int class_index = 0;
  std::string concept_text;

  bool operator==(const PlantedTrigger&) const = default;
};

struct PlantedSpec {
  int image_height = 16;
  int image_width = 16;
  int trigger_size = 4;  // trigger square == conv kernel size
  std::vector<PlantedTrigger> triggers;
  int n_units = 8;  // first triggers.size() units planted, rest noise
  double noise_level = 0.0;
  uint64_t seed = 0;
  bool randomize_location = true;
  bool background_class = true;  // extra label for trigger-free images
};

// n_classes planted color detectors from the standard color cycle
// (red, green, blue, yellow, magenta, cyan), plus 4 noise units.
PlantedSpec default_planted_spec(int n_classes = 3, uint64_t seed = 0);

struct GroundTruthUnit {
  int unit = 0;
  int class_index = 0;
  std::string concept_text;
  std::array<float, 3> color{0, 0, 0};

  bool operator==(const GroundTruthUnit&) const = default;
};

struct GroundTruthImage {
  std::string id;
  int label = 0;
  Rect region;  // zero-sized for trigger-free images

  bool operator==(const GroundTruthImage&) const = default;
};

struct GroundTruth {
  int image_height = 0;
  int image_width = 0;
  std::vector<GroundTruthUnit> units;
  std::vector<GroundTruthImage> images;

  bool operator==(const GroundTruth&) const = default;
};

std::string ground_truth_to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const std::string& text);
void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

// Writes spec.json + weights.json in standard format under dir and returns
// the spec path; the regular loader takes it from there. Unit ground truth
// is appended to *gt when given.
std::filesystem::path write_planted_model(const PlantedSpec& spec,
                                          const std::filesystem::path& dir,
                                          GroundTruth* gt = nullptr);

ModelHandle make_planted_model(const PlantedSpec& spec, const std::filesystem::path& dir,
                               GroundTruth* gt = nullptr);

// Noise-background images with one trigger square per labeled class (plus
// trigger-free background-class images), written as PNGs with a manifest and
// ground-truth JSON. Returns the manifest path.
std::filesystem::path write_synthetic_corpus(const PlantedSpec& spec, int n_per_class,
                                             const std::filesystem::path& dir,
                                             GroundTruth* gt = nullptr);

Corpus make_synthetic_corpus(const PlantedSpec& spec, int n_per_class,
                             const std::filesystem::path& dir, GroundTruth* gt = nullptr);

// Table-driven stand-in for a vision-language embedder. Text vectors are
// fixed basis directions per known concept; image vectors are normalized
// centered-color detector responses, so cosine similarity is derivable by
// hand. Unknown text maps to a reserved orthogonal slot (similarity 0).
class MockEmbedder : public Embedder {
 public:
  struct Entry {
    std::string concept_text;
    std::array<float, 3> color{0, 0, 0};
  };

  explicit MockEmbedder(std::vector<Entry> table);
  static MockEmbedder for_ground_truth(const GroundTruth& gt);

  std::string id() const override { return "mock-color-embedder"; }
  int dim() const override { return static_cast<int>(table_.size()) + 2; }
  std::vector<double> embed_text(const std::string& text) const override;
  std::vector<double> embed_image(const Image& patch) const override;

 private:
  std::vector<Entry> table_;  // slot i; then constant slot, then unknown slot
};

// Literal position-by-position occlusion loop; the independent oracle for
// discrepancy_scores. Test-only by design: no batching, no cache.
DiscrepancyMap brute_force_discrepancy(const ModelHandle& model, const NeuronRef& neuron,
                                       const Image& image, const OcclusionGrid& grid);

// Intersection-over-union between the set bits of a mask and a rectangle.
double mask_region_iou(const ActivationMask& mask, const Rect& region);

// Small deterministic transformer (pixel tokens, one attention block, MLP
// with a relu catalog layer) for exercising the mlp-hidden code paths.
std::filesystem::path write_tiny_transformer(const std::filesystem::path& dir,
                                             uint64_t seed);
ModelHandle make_tiny_transformer(const std::filesystem::path& dir, uint64_t seed);

}  // namespace unitscope
