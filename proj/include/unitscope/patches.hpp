#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unitscope/cache.hpp"
#include "unitscope/corpus.hpp"
#include "unitscope/image.hpp"
#include "unitscope/model.hpp"

namespace unitscope {

enum class OccluderFill { Gray, MeanPixel, Zero };

std::string to_string(OccluderFill fill);
OccluderFill parse_occluder_fill(const std::string& s);

// Square sliding occluder over an image. Anchors step by `stride`; the final
// anchor in each dimension is clamped to the image edge so coverage is total
// (which also requires stride <= occluder size).
struct OcclusionGrid {
  int image_height = 0;
  int image_width = 0;
  int occluder_size = 0;
  int stride = 0;
  OccluderFill fill = OccluderFill::Gray;
  std::array<float, 3> fill_value{0.5f, 0.5f, 0.5f};
  std::vector<std::pair<int, int>> positions;  // top-left anchors, row-major

  int count() const { return static_cast<int>(positions.size()); }
};

OcclusionGrid make_occlusion_grid(int image_height, int image_width, int occluder_size,
                                  int stride, OccluderFill fill = OccluderFill::Gray,
                                  std::array<float, 3> fill_value = {0.5f, 0.5f, 0.5f});

// 11 px on a 224 px side, scaled proportionally, never below 3.
int default_occluder_size(int image_height, int image_width);

struct DiscrepancyMap {
  NeuronRef neuron;
  std::string image_id;
  double base_activation = 0.0;
  std::vector<double> scores;  // one per grid position, >= 0
  OcclusionGrid grid;
};

struct ReceptiveField {
  NeuronRef neuron;
  std::string image_id;
  int height = 0;
  int width = 0;
  std::vector<double> field;  // H*W, non-negative

  double at(int r, int c) const { return field[static_cast<size_t>(r) * width + c]; }
};

struct ActivationMask {
  int height = 0;
  int width = 0;
  double threshold_percentile = 0.0;
  bool degenerate = false;  // constant field; whole image kept
  std::vector<uint8_t> mask;

  uint8_t at(int r, int c) const { return mask[static_cast<size_t>(r) * width + c]; }
  size_t set_count() const;
};

struct PatchParams {
  int k = 10;
  int occluder_size = 0;  // 0 = derive from image size
  int stride = 3;
  double percentile = 95.0;
  OccluderFill fill = OccluderFill::MeanPixel;
  bool soft_mask = false;
  bool crop = false;
};

struct Patch {
  std::string image_id;
  double activation = 0.0;
  Image pixels;  // masked image, background-filled
  ActivationMask mask;
};

struct PatchSet {
  NeuronRef neuron;
  std::string model_hash;
  PatchParams params;
  std::vector<Patch> patches;  // sorted by activation descending
};

// Top-K images by activation of one unit; ties broken by ascending image id.
// K beyond the corpus clamps with a warning on stderr.
std::vector<std::string> select_top_images(const ActivationMatrix& activations, int unit,
                                           int k);

std::vector<Image> generate_occlusions(const Image& image, const OcclusionGrid& grid);

// |activation(occluded_m) - activation(original)| per grid position.
DiscrepancyMap discrepancy_scores(const ModelHandle& model, const NeuronRef& neuron,
                                  const Image& image, const OcclusionGrid& grid,
                                  const ArtifactCache* cache = nullptr);

// field[p] = sum_m scores[m] * occluded_m[p] / M
ReceptiveField synthesize_receptive_field(const DiscrepancyMap& dmap);

ActivationMask binarize_mask(const ReceptiveField& field, double threshold_percentile);

Image apply_mask(const Image& image, const ActivationMask& mask,
                 std::array<float, 3> background = {0.5f, 0.5f, 0.5f});

// Field-weighted blend instead of a hard cutoff.
Image apply_soft_mask(const Image& image, const ReceptiveField& field,
                      std::array<float, 3> background = {0.5f, 0.5f, 0.5f});

Image crop_to_mask(const Image& patch, const ActivationMask& mask);

PatchSet extract_patches(const ModelHandle& model, const NeuronRef& neuron,
                         const Corpus& corpus, const PatchParams& params,
                         const ArtifactCache* cache = nullptr);

void save_patchset(const PatchSet& set, const std::filesystem::path& dir);
PatchSet load_patchset(const std::filesystem::path& dir);

// Directory patches/<model>/<layer>/<unit> under an output root.
std::filesystem::path patchset_dir(const std::filesystem::path& root,
                                   const std::string& model_hash, const NeuronRef& neuron);

}  // namespace unitscope
