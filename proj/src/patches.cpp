#include "unitscope/patches.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/hashing.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace unitscope {

std::string to_string(OccluderFill fill) {
  switch (fill) {
    case OccluderFill::Gray: return "gray";
    case OccluderFill::MeanPixel: return "mean-pixel";
    case OccluderFill::Zero: return "zero";
  }
  return "?";
}

OccluderFill parse_occluder_fill(const std::string& s) {
  if (s == "gray") return OccluderFill::Gray;
  if (s == "mean-pixel") return OccluderFill::MeanPixel;
  if (s == "zero") return OccluderFill::Zero;
  throw Error("unknown occluder fill: " + s);
}

namespace {

std::vector<int> axis_anchors(int extent, int size, int stride) {
  std::vector<int> anchors;
  for (int a = 0; a + size <= extent; a += stride) anchors.push_back(a);
  if (anchors.empty() || anchors.back() != extent - size)
    anchors.push_back(extent - size);
  return anchors;
}

}  // namespace

OcclusionGrid make_occlusion_grid(int image_height, int image_width, int occluder_size,
                                  int stride, OccluderFill fill,
                                  std::array<float, 3> fill_value) {
  if (occluder_size < 1 || occluder_size > std::min(image_height, image_width))
    throw Error("occluder size must be in [1, min(H,W)]");
  if (stride < 1) throw Error("stride must be >= 1");
  if (stride > occluder_size)
    throw Error("stride must not exceed occluder size (coverage would have gaps)");
  OcclusionGrid grid;
  grid.image_height = image_height;
  grid.image_width = image_width;
  grid.occluder_size = occluder_size;
  grid.stride = stride;
  grid.fill = fill;
  grid.fill_value = fill == OccluderFill::Zero ? std::array<float, 3>{0.f, 0.f, 0.f}
                    : fill == OccluderFill::Gray ? std::array<float, 3>{0.5f, 0.5f, 0.5f}
                                                 : fill_value;
  const auto rows = axis_anchors(image_height, occluder_size, stride);
  const auto cols = axis_anchors(image_width, occluder_size, stride);
  grid.positions.reserve(rows.size() * cols.size());
  for (int r : rows)
    for (int c : cols) grid.positions.emplace_back(r, c);
  return grid;
}

int default_occluder_size(int image_height, int image_width) {
  const double side = std::min(image_height, image_width);
  return std::max(3, static_cast<int>(std::lround(11.0 * side / 224.0)));
}

size_t ActivationMask::set_count() const {
  size_t n = 0;
  for (uint8_t v : mask) n += v ? 1 : 0;
  return n;
}

std::vector<std::string> select_top_images(const ActivationMatrix& activations, int unit,
                                           int k) {
  if (k < 1) throw Error("K must be >= 1");
  if (unit < 0 || unit >= activations.unit_count) throw Error("unit out of range");
  const int n = static_cast<int>(activations.image_ids.size());
  if (k > n) {
    std::cerr << "warning: K=" << k << " exceeds corpus size " << n
              << "; returning the full corpus\n";
    k = n;
  }
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double va = activations.at(a, unit), vb = activations.at(b, unit);
    if (va != vb) return va > vb;
    return activations.image_ids[static_cast<size_t>(a)] <
           activations.image_ids[static_cast<size_t>(b)];
  });
  std::vector<std::string> ids;
  ids.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i)
    ids.push_back(activations.image_ids[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  return ids;
}

std::vector<Image> generate_occlusions(const Image& image, const OcclusionGrid& grid) {
  if (grid.occluder_size > std::min(image.height, image.width))
    throw Error("occluder larger than image");
  std::vector<Image> out;
  out.reserve(grid.positions.size());
  for (size_t m = 0; m < grid.positions.size(); ++m) {
    const auto [r0, c0] = grid.positions[m];
    Image occluded = image;
    occluded.id = image.id + ":occ" + std::to_string(m);
    for (int r = r0; r < r0 + grid.occluder_size; ++r)
      for (int c = c0; c < c0 + grid.occluder_size; ++c)
        for (int ch = 0; ch < image.channels; ++ch)
          occluded.at(r, c, ch) = grid.fill_value[static_cast<size_t>(ch)];
    out.push_back(std::move(occluded));
  }
  return out;
}

namespace {

std::string grid_params_json(const NeuronRef& neuron, const Image& image,
                             const OcclusionGrid& grid) {
  ordered_json j;
  j["neuron"] = {{"layer", neuron.layer}, {"unit", neuron.unit}};
  j["image_id"] = image.id;
  j["pixels_hash"] = short_hash(std::string_view(
      reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size() * sizeof(float)));
  j["occluder_size"] = grid.occluder_size;
  j["stride"] = grid.stride;
  j["fill"] = to_string(grid.fill);
  j["fill_value"] = {grid.fill_value[0], grid.fill_value[1], grid.fill_value[2]};
  return j.dump();
}

}  // namespace

DiscrepancyMap discrepancy_scores(const ModelHandle& model, const NeuronRef& neuron,
                                  const Image& image, const OcclusionGrid& grid,
                                  const ArtifactCache* cache) {
  const std::string key = ArtifactCache::make_key(grid_params_json(neuron, image, grid));
  if (cache && cache->enabled()) {
    if (auto hit = cache->get(model.content_hash(), "discrepancy", key)) {
      try {
        const auto j = nlohmann::json::parse(*hit);
        DiscrepancyMap dmap;
        dmap.neuron = neuron;
        dmap.image_id = image.id;
        dmap.base_activation = j.at("base").get<double>();
        dmap.scores = j.at("scores").get<std::vector<double>>();
        dmap.grid = grid;
        if (static_cast<int>(dmap.scores.size()) == grid.count()) return dmap;
      } catch (const std::exception&) {
        // fall through to recompute
      }
    }
  }

  DiscrepancyMap dmap;
  dmap.neuron = neuron;
  dmap.image_id = image.id;
  dmap.grid = grid;
  dmap.base_activation = model.neuron_activation(image, neuron).scalar;

  std::vector<Image> occluded = generate_occlusions(image, grid);
  const ActivationMatrix m = model.batch_activations(occluded, neuron.layer);
  dmap.scores.resize(occluded.size());
  for (size_t i = 0; i < occluded.size(); ++i)
    dmap.scores[i] = std::abs(m.at(static_cast<int>(i), neuron.unit) - dmap.base_activation);

  if (cache && cache->enabled()) {
    ordered_json j;
    j["base"] = dmap.base_activation;
    j["scores"] = dmap.scores;
    cache->put(model.content_hash(), "discrepancy", key, j.dump());
  }
  return dmap;
}

ReceptiveField synthesize_receptive_field(const DiscrepancyMap& dmap) {
  ReceptiveField rf;
  rf.neuron = dmap.neuron;
  rf.image_id = dmap.image_id;
  rf.height = dmap.grid.image_height;
  rf.width = dmap.grid.image_width;
  rf.field.assign(static_cast<size_t>(rf.height) * rf.width, 0.0);
  const int size = dmap.grid.occluder_size;
  for (size_t m = 0; m < dmap.grid.positions.size(); ++m) {
    const double s = dmap.scores[m];
    if (s == 0.0) continue;
    const auto [r0, c0] = dmap.grid.positions[m];
    for (int r = r0; r < r0 + size; ++r)
      for (int c = c0; c < c0 + size; ++c)
        rf.field[static_cast<size_t>(r) * rf.width + c] += s;
  }
  const double inv_m = 1.0 / static_cast<double>(dmap.grid.positions.size());
  for (double& v : rf.field) v *= inv_m;
  return rf;
}

ActivationMask binarize_mask(const ReceptiveField& field, double threshold_percentile) {
  if (threshold_percentile <= 0.0 || threshold_percentile >= 100.0)
    throw Error("threshold percentile must be in (0,100)");
  ActivationMask mask;
  mask.height = field.height;
  mask.width = field.width;
  mask.threshold_percentile = threshold_percentile;
  mask.mask.assign(field.field.size(), 0);

  const auto [mn, mx] = std::minmax_element(field.field.begin(), field.field.end());
  if (*mn == *mx) {
    mask.degenerate = true;
    std::fill(mask.mask.begin(), mask.mask.end(), 1);
    return mask;
  }
  std::vector<double> sorted = field.field;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  size_t idx = static_cast<size_t>(
      std::ceil(threshold_percentile / 100.0 * static_cast<double>(n)));
  if (idx >= n) idx = n - 1;
  const double threshold = sorted[idx];
  for (size_t p = 0; p < field.field.size(); ++p)
    mask.mask[p] = field.field[p] >= threshold ? 1 : 0;
  return mask;
}

Image apply_mask(const Image& image, const ActivationMask& mask,
                 std::array<float, 3> background) {
  if (image.height != mask.height || image.width != mask.width)
    throw Error("mask shape does not match image");
  Image out = image;
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      if (mask.at(r, c)) continue;
      for (int ch = 0; ch < image.channels; ++ch)
        out.at(r, c, ch) = background[static_cast<size_t>(ch)];
    }
  return out;
}

Image apply_soft_mask(const Image& image, const ReceptiveField& field,
                      std::array<float, 3> background) {
  if (image.height != field.height || image.width != field.width)
    throw Error("field shape does not match image");
  const double mx = *std::max_element(field.field.begin(), field.field.end());
  Image out = image;
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      const double w = mx > 0.0 ? field.at(r, c) / mx : 1.0;
      for (int ch = 0; ch < image.channels; ++ch)
        out.at(r, c, ch) = static_cast<float>(w * image.at(r, c, ch) +
                                              (1.0 - w) * background[static_cast<size_t>(ch)]);
    }
  return out;
}

Image crop_to_mask(const Image& patch, const ActivationMask& mask) {
  int r0 = mask.height, r1 = -1, c0 = mask.width, c1 = -1;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) throw Error("mask has no set pixels");
  Image out(patch.id + ":crop", r1 - r0 + 1, c1 - c0 + 1, patch.channels);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      for (int ch = 0; ch < patch.channels; ++ch)
        out.at(r - r0, c - c0, ch) = patch.at(r, c, ch);
  return out;
}

PatchSet extract_patches(const ModelHandle& model, const NeuronRef& neuron,
                         const Corpus& corpus, const PatchParams& params,
                         const ArtifactCache* cache) {
  if (params.k < 1) throw Error("K must be >= 1");
  if (params.stride < 1) throw Error("stride must be >= 1");
  if (params.percentile <= 0.0 || params.percentile >= 100.0)
    throw Error("percentile must be in (0,100)");

  const std::vector<Image> images = corpus.load_all();
  const ActivationMatrix matrix = model.batch_activations(images, neuron.layer);
  const std::vector<std::string> top = select_top_images(matrix, neuron.unit, params.k);

  std::array<float, 3> fill_value{0.5f, 0.5f, 0.5f};
  if (params.fill == OccluderFill::MeanPixel) {
    const auto mp = corpus.mean_pixel();
    fill_value = {static_cast<float>(mp[0]), static_cast<float>(mp[1]),
                  static_cast<float>(mp[2])};
  }

  PatchSet set;
  set.neuron = neuron;
  set.model_hash = model.content_hash();
  set.params = params;

  for (const std::string& id : top) {
    size_t index = images.size();
    for (size_t i = 0; i < images.size(); ++i)
      if (images[i].id == id) index = i;
    const Image& image = images[index];
    try {
      const int occ = params.occluder_size > 0
                          ? params.occluder_size
                          : default_occluder_size(image.height, image.width);
      const OcclusionGrid grid = make_occlusion_grid(image.height, image.width, occ,
                                                     params.stride, params.fill, fill_value);
      const DiscrepancyMap dmap = discrepancy_scores(model, neuron, image, grid, cache);
      const ReceptiveField field = synthesize_receptive_field(dmap);
      const ActivationMask mask = binarize_mask(field, params.percentile);
      Patch patch;
      patch.image_id = id;
      patch.activation = matrix.at(static_cast<int>(index), neuron.unit);
      patch.pixels = params.soft_mask ? apply_soft_mask(image, field) : apply_mask(image, mask);
      if (params.crop) patch.pixels = crop_to_mask(patch.pixels, mask);
      patch.mask = mask;
      set.patches.push_back(std::move(patch));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping image " << id << " for " << neuron.layer << "/"
                << neuron.unit << ": " << e.what() << "\n";
    }
  }
  if (set.patches.empty())
    throw Error("patch extraction produced no patches for " + neuron.layer + "/" +
                std::to_string(neuron.unit));
  std::stable_sort(set.patches.begin(), set.patches.end(),
                   [](const Patch& a, const Patch& b) {
                     if (a.activation != b.activation) return a.activation > b.activation;
                     return a.image_id < b.image_id;
                   });
  return set;
}

namespace {

ordered_json params_to_json(const PatchParams& p) {
  ordered_json j;
  j["k"] = p.k;
  j["occluder_size"] = p.occluder_size;
  j["stride"] = p.stride;
  j["percentile"] = p.percentile;
  j["fill"] = to_string(p.fill);
  j["soft_mask"] = p.soft_mask;
  j["crop"] = p.crop;
  return j;
}

PatchParams params_from_json(const nlohmann::json& j) {
  PatchParams p;
  p.k = j.at("k").get<int>();
  p.occluder_size = j.at("occluder_size").get<int>();
  p.stride = j.at("stride").get<int>();
  p.percentile = j.at("percentile").get<double>();
  p.fill = parse_occluder_fill(j.at("fill").get<std::string>());
  p.soft_mask = j.at("soft_mask").get<bool>();
  p.crop = j.at("crop").get<bool>();
  return p;
}

Image mask_to_image(const ActivationMask& mask, const std::string& id) {
  Image img(id, mask.height, mask.width, 1);
  for (size_t p = 0; p < mask.mask.size(); ++p) img.pixels[p] = mask.mask[p] ? 1.0f : 0.0f;
  return img;
}

}  // namespace

void save_patchset(const PatchSet& set, const fs::path& dir) {
  ensure_dir(dir);
  ordered_json meta;
  meta["schema_version"] = 1;
  meta["neuron"] = {{"layer", set.neuron.layer}, {"unit", set.neuron.unit}};
  meta["model_hash"] = set.model_hash;
  meta["params"] = params_to_json(set.params);
  meta["patches"] = ordered_json::array();
  for (const Patch& p : set.patches) {
    const std::string stem = slugify(p.image_id);
    ordered_json pj;
    pj["image_id"] = p.image_id;
    pj["activation"] = p.activation;
    pj["patch_png"] = stem + "_patch.png";
    pj["mask_png"] = stem + "_mask.png";
    pj["mask_stats"] = {{"set_fraction", static_cast<double>(p.mask.set_count()) /
                                             static_cast<double>(p.mask.mask.size())},
                        {"threshold_percentile", p.mask.threshold_percentile},
                        {"degenerate", p.mask.degenerate}};
    meta["patches"].push_back(pj);
    save_image_png(p.pixels, dir / (stem + "_patch.png"));
    save_image_png(mask_to_image(p.mask, p.image_id + ":mask"), dir / (stem + "_mask.png"));
  }
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

PatchSet load_patchset(const fs::path& dir) {
  const auto meta = nlohmann::json::parse(read_file(dir / "meta.json"));
  if (meta.value("schema_version", 0) != 1)
    throw Error("unsupported patchset schema_version");
  PatchSet set;
  set.neuron.layer = meta.at("neuron").at("layer").get<std::string>();
  set.neuron.unit = meta.at("neuron").at("unit").get<int>();
  set.model_hash = meta.at("model_hash").get<std::string>();
  set.params = params_from_json(meta.at("params"));
  for (const auto& pj : meta.at("patches")) {
    Patch p;
    p.image_id = pj.at("image_id").get<std::string>();
    p.activation = pj.at("activation").get<double>();
    p.pixels = load_image(dir / pj.at("patch_png").get<std::string>(), p.image_id);
    const Image mask_img =
        load_image(dir / pj.at("mask_png").get<std::string>(), p.image_id + ":mask");
    p.mask.height = mask_img.height;
    p.mask.width = mask_img.width;
    p.mask.threshold_percentile =
        pj.at("mask_stats").at("threshold_percentile").get<double>();
    p.mask.degenerate = pj.at("mask_stats").at("degenerate").get<bool>();
    p.mask.mask.resize(static_cast<size_t>(mask_img.height) * mask_img.width);
    for (int r = 0; r < mask_img.height; ++r)
      for (int c = 0; c < mask_img.width; ++c)
        p.mask.mask[static_cast<size_t>(r) * mask_img.width + c] =
            mask_img.at(r, c, 0) > 0.5f ? 1 : 0;
    set.patches.push_back(std::move(p));
  }
  return set;
}

fs::path patchset_dir(const fs::path& root, const std::string& model_hash,
                      const NeuronRef& neuron) {
  return root / "patches" / model_hash / slugify(neuron.layer) /
         std::to_string(neuron.unit);
}

}  // namespace unitscope
