#include "unitscope/testbed.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/vocabulary.hpp"

using ordered_json = nlohmann::ordered_json;

namespace unitscope {

namespace {

struct NamedColor {
  const char* name;
  std::array<float, 3> rgb;
};

constexpr NamedColor kColorCycle[] = {
    {"red", {1, 0, 0}},    {"green", {0, 1, 0}},   {"blue", {0, 0, 1}},
    {"yellow", {1, 1, 0}}, {"magenta", {1, 0, 1}}, {"cyan", {0, 1, 1}},
};

std::string color_name(const std::array<float, 3>& rgb) {
  for (const auto& c : kColorCycle)
    if (c.rgb == rgb) return c.name;
  std::ostringstream os;
  os << "color-" << rgb[0] << "-" << rgb[1] << "-" << rgb[2];
  return os.str();
}

void validate_spec(const PlantedSpec& spec) {
  if (spec.image_height < 4 || spec.image_width < 4)
    throw Error("planted image size too small");
  if (spec.trigger_size < 1 || spec.trigger_size > spec.image_height ||
      spec.trigger_size > spec.image_width)
    throw Error("trigger size does not fit the image");
  if (spec.triggers.empty()) throw Error("planted spec has no triggers");
  if ((int)spec.triggers.size() > spec.n_units)
    throw Error("more triggers than units");
  if (spec.noise_level < 0) throw Error("noise level must be >= 0");
  for (size_t i = 0; i < spec.triggers.size(); ++i) {
    const auto& t = spec.triggers[i];
    if (t.class_index != (int)i)
      throw Error("trigger classes must be 0..n-1 in order");
    if (!spec.randomize_location) {
      const Rect& r = t.region;
      if (r.row < 0 || r.col < 0 || r.row + r.height > spec.image_height ||
          r.col + r.width > spec.image_width || r.height != spec.trigger_size ||
          r.width != spec.trigger_size)
        throw Error("trigger region outside image or not trigger-sized");
    }
  }
}

int planted_class_count(const PlantedSpec& spec) {
  return (int)spec.triggers.size() + (spec.background_class ? 1 : 0);
}

ordered_json tensor_json(std::vector<int> shape, const std::vector<float>& data) {
  ordered_json t;
  t["shape"] = shape;
  t["data"] = data;
  return t;
}

void fill_unit_truth(const PlantedSpec& spec, GroundTruth& gt) {
  if (!gt.units.empty()) return;
  for (size_t u = 0; u < spec.triggers.size(); ++u) {
    const auto& t = spec.triggers[u];
    const std::string concept_text =
        t.concept_text.empty() ? color_name(t.color) + " square" : t.concept_text;
    gt.units.push_back({(int)u, t.class_index, concept_text, t.color});
  }
}

}  // namespace

PlantedSpec default_planted_spec(int n_classes, uint64_t seed) {
  if (n_classes < 1 || n_classes > 6)
    throw Error("default planted spec supports 1..6 classes");
  PlantedSpec spec;
  spec.seed = seed;
  spec.n_units = n_classes + 4;
  for (int c = 0; c < n_classes; ++c) {
    PlantedTrigger t;
    t.color = kColorCycle[c].rgb;
    t.class_index = c;
    t.concept_text = std::string(kColorCycle[c].name) + " square";
    t.region = {2, 2, spec.trigger_size, spec.trigger_size};
    spec.triggers.push_back(std::move(t));
  }
  return spec;
}

std::filesystem::path write_planted_model(const PlantedSpec& spec,
                                          const std::filesystem::path& dir,
                                          GroundTruth* gt) {
  validate_spec(spec);
  ensure_dir(dir);
  const int k = spec.trigger_size;
  const int n_units = spec.n_units;
  const int n_planted = (int)spec.triggers.size();
  const int classes = planted_class_count(spec);
  const float inv_area = 1.0f / (float)(k * k);

  std::vector<float> conv_w((size_t)n_units * 3 * k * k, 0.0f);
  std::vector<float> conv_b((size_t)n_units, 0.0f);

  // Planted unit u: matched filter for its color. Response is exactly
  // on_count on the trigger window, so bias -on_count/2 leaves margin
  // on_count/2 there and pushes everything duller below zero.
  for (int u = 0; u < n_planted; ++u) {
    const auto& color = spec.triggers[u].color;
    int on_count = 0;
    for (int c = 0; c < 3; ++c) on_count += color[c] > 0.5f ? 1 : 0;
    if (on_count == 0 || on_count == 3)
      throw Error("trigger colors need at least one on and one off channel");
    for (int c = 0; c < 3; ++c) {
      const float w = (color[c] > 0.5f ? 1.0f : -1.0f) * inv_area;
      for (int p = 0; p < k * k; ++p)
        conv_w[((size_t)u * 3 + c) * k * k + p] = w;
    }
    conv_b[u] = -(float)on_count / 2.0f;
  }

  // Noise units: zero-sum filters per channel, so constant windows (gray
  // background, solid trigger interiors) give exactly zero response.
  std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ull + 0xabcdef12u);
  std::uniform_real_distribution<float> unit_dist(-1.0f, 1.0f);
  for (int u = n_planted; u < n_units; ++u) {
    for (int c = 0; c < 3; ++c) {
      float* w = &conv_w[((size_t)u * 3 + c) * k * k];
      float mean = 0.0f;
      for (int p = 0; p < k * k; ++p) {
        w[p] = unit_dist(rng) * inv_area;
        mean += w[p];
      }
      mean /= (float)(k * k);
      for (int p = 0; p < k * k; ++p) w[p] -= mean;
    }
    conv_b[u] = 0.0f;
  }

  // Head: class c leans on its planted unit (0.9) with a small spillover
  // onto the next unit (0.1); the background class is pure bias, so killing
  // a planted unit hands its images to the background.
  std::vector<float> head_w((size_t)classes * n_units, 0.0f);
  std::vector<float> head_b((size_t)classes, 0.0f);
  for (int c = 0; c < n_planted; ++c) {
    head_w[(size_t)c * n_units + c] = 0.9f;
    if (c + 1 < n_units) head_w[(size_t)c * n_units + c + 1] = 0.1f;
  }
  if (spec.background_class) head_b[classes - 1] = 0.05f;

  ordered_json weights;
  weights["schema_version"] = 1;
  weights["name"] = "planted-detectors";
  weights["input"] = {{"shape", {3, spec.image_height, spec.image_width}}};
  weights["tensors"] = {
      {"conv1_w", tensor_json({n_units, 3, k, k}, conv_w)},
      {"conv1_b", tensor_json({n_units}, conv_b)},
      {"head_w", tensor_json({classes, n_units}, head_w)},
      {"head_b", tensor_json({classes}, head_b)},
  };
  weights["ops"] = ordered_json::array({
      {{"name", "conv1"},
       {"op", "conv2d"},
       {"in", "input"},
       {"weight", "conv1_w"},
       {"bias", "conv1_b"},
       {"stride", 1},
       {"padding", 0}},
      {{"name", "relu1"}, {"op", "relu"}, {"in", "conv1"}},
      {{"name", "pool"}, {"op", "global_max_pool"}, {"in", "relu1"}},
      {{"name", "head"},
       {"op", "linear"},
       {"in", "pool"},
       {"weight", "head_w"},
       {"bias", "head_b"}},
  });
  weights["output"] = "head";
  weights["catalog"] = ordered_json::array({{{"layer", "conv1"},
                                             {"kind", "conv-feature-map"},
                                             {"producer", "conv1"},
                                             {"post", "relu1"}}});
  weights["head"] = {{"op", "head"}, {"feature_layer", "conv1"}};
  weights["layer_aliases"] = {{"last-conv", "conv1"}};
  write_file_atomic(dir / "weights.json", weights.dump(2) + "\n");

  ordered_json model_spec;
  model_spec["architecture_tag"] = "synthetic";
  model_spec["weight_source"] = "weights.json";
  model_spec["input_shape"] = {spec.image_height, spec.image_width, 3};
  model_spec["preprocessing"] = ordered_json::object();
  model_spec["aggregation"] = "max";
  model_spec["activation_site"] = "post";
  const auto spec_path = dir / "model_spec.json";
  write_file_atomic(spec_path, model_spec.dump(2) + "\n");

  if (gt) {
    gt->image_height = spec.image_height;
    gt->image_width = spec.image_width;
    fill_unit_truth(spec, *gt);
  }
  return spec_path;
}

ModelHandle make_planted_model(const PlantedSpec& spec, const std::filesystem::path& dir,
                               GroundTruth* gt) {
  return load_model(write_planted_model(spec, dir, gt));
}

std::filesystem::path write_synthetic_corpus(const PlantedSpec& spec, int n_per_class,
                                             const std::filesystem::path& dir,
                                             GroundTruth* gt) {
  validate_spec(spec);
  if (n_per_class < 1) throw Error("n_per_class must be >= 1");
  ensure_dir(dir / "images");

  const int h = spec.image_height, w = spec.image_width, ts = spec.trigger_size;
  std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ull + 0x5151515151ull);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);

  GroundTruth local;
  GroundTruth& truth = gt ? *gt : local;
  truth.image_height = h;
  truth.image_width = w;
  fill_unit_truth(spec, truth);

  std::ostringstream manifest;
  ordered_json header;
  auto names = ordered_json::array();
  for (const auto& t : spec.triggers) names.push_back(color_name(t.color));
  if (spec.background_class) names.push_back("background");
  header["class_names"] = std::move(names);
  manifest << header.dump() << "\n";

  auto make_noise = [&](const std::string& id) {
    Image img(id, h, w, 3);
    for (auto& p : img.pixels)
      p = std::clamp(0.5f + (float)spec.noise_level * (uni(rng) - 0.5f), 0.0f, 1.0f);
    return img;
  };
  auto emit = [&](const Image& img, int label, const Rect& region) {
    const std::string rel = "images/" + img.id + ".png";
    save_image_png(img, dir / rel);
    ordered_json line;
    line["id"] = img.id;
    line["path"] = rel;
    line["label"] = label;
    manifest << line.dump() << "\n";
    truth.images.push_back({img.id, label, region});
  };

  for (size_t t = 0; t < spec.triggers.size(); ++t) {
    const auto& trig = spec.triggers[t];
    for (int i = 0; i < n_per_class; ++i) {
      std::ostringstream id;
      id << "c" << t << "_i" << i;
      Image img = make_noise(id.str());
      Rect region = trig.region;
      region.height = ts;
      region.width = ts;
      if (spec.randomize_location) {
        std::uniform_int_distribution<int> row_dist(0, h - ts);
        std::uniform_int_distribution<int> col_dist(0, w - ts);
        region.row = row_dist(rng);
        region.col = col_dist(rng);
      }
      for (int r = region.row; r < region.row + ts; ++r)
        for (int c = region.col; c < region.col + ts; ++c)
          for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = trig.color[ch];
      emit(img, trig.class_index, region);
    }
  }
  if (spec.background_class) {
    for (int i = 0; i < n_per_class; ++i) {
      std::ostringstream id;
      id << "bg_i" << i;
      emit(make_noise(id.str()), (int)spec.triggers.size(), Rect{});
    }
  }

  const auto manifest_path = dir / "manifest.jsonl";
  write_file_atomic(manifest_path, manifest.str());
  save_ground_truth(truth, dir / "ground_truth.json");
  return manifest_path;
}

Corpus make_synthetic_corpus(const PlantedSpec& spec, int n_per_class,
                             const std::filesystem::path& dir, GroundTruth* gt) {
  return Corpus::load(write_synthetic_corpus(spec, n_per_class, dir, gt));
}

namespace {

ordered_json rect_json(const Rect& r) {
  return {{"row", r.row}, {"col", r.col}, {"height", r.height}, {"width", r.width}};
}

Rect rect_from_json(const ordered_json& j) {
  return {j.at("row").get<int>(), j.at("col").get<int>(), j.at("height").get<int>(),
          j.at("width").get<int>()};
}

}  // namespace

std::string ground_truth_to_json(const GroundTruth& gt) {
  ordered_json j;
  j["schema_version"] = 1;
  j["image_height"] = gt.image_height;
  j["image_width"] = gt.image_width;
  auto units = ordered_json::array();
  for (const auto& u : gt.units)
    units.push_back({{"unit", u.unit},
                     {"class", u.class_index},
                     {"concept", u.concept_text},
                     {"color", u.color}});
  j["units"] = std::move(units);
  auto images = ordered_json::array();
  for (const auto& im : gt.images)
    images.push_back(
        {{"id", im.id}, {"label", im.label}, {"region", rect_json(im.region)}});
  j["images"] = std::move(images);
  return j.dump(2) + "\n";
}

GroundTruth ground_truth_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad ground truth JSON: ") + e.what());
  }
  if (j.value("schema_version", 0) != 1)
    throw Error("unsupported ground truth schema version");
  GroundTruth gt;
  gt.image_height = j.at("image_height").get<int>();
  gt.image_width = j.at("image_width").get<int>();
  for (const auto& u : j.at("units")) {
    GroundTruthUnit gu;
    gu.unit = u.at("unit").get<int>();
    gu.class_index = u.at("class").get<int>();
    gu.concept_text = u.at("concept").get<std::string>();
    const auto col = u.at("color").get<std::vector<float>>();
    if (col.size() != 3) throw Error("ground truth color must have 3 channels");
    std::copy(col.begin(), col.end(), gu.color.begin());
    gt.units.push_back(std::move(gu));
  }
  for (const auto& im : j.at("images"))
    gt.images.push_back({im.at("id").get<std::string>(), im.at("label").get<int>(),
                         rect_from_json(im.at("region"))});
  return gt;
}

void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  write_file_atomic(path, ground_truth_to_json(gt));
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  return ground_truth_from_json(read_file(path));
}

MockEmbedder::MockEmbedder(std::vector<Entry> table) : table_(std::move(table)) {
  if (table_.empty()) throw Error("mock embedder table is empty");
}

MockEmbedder MockEmbedder::for_ground_truth(const GroundTruth& gt) {
  std::vector<Entry> table;
  for (const auto& u : gt.units) table.push_back({u.concept_text, u.color});
  return MockEmbedder(std::move(table));
}

std::vector<double> MockEmbedder::embed_text(const std::string& text) const {
  if (concept_key(text).empty()) throw Error("empty text cannot be embedded");
  std::vector<double> v((size_t)dim(), 0.0);
  const std::string key = concept_key(text);
  for (size_t i = 0; i < table_.size(); ++i) {
    if (concept_key(table_[i].concept_text) == key) {
      v[i] = 1.0;
      return v;
    }
  }
  v[v.size() - 1] = 1.0;  // unknown slot: orthogonal to every image embedding
  return v;
}

std::vector<double> MockEmbedder::embed_image(const Image& patch) const {
  if (!patch.finite()) throw Error("patch has non-finite pixels");
  const auto mean = mean_pixel(patch);
  std::vector<double> v((size_t)dim(), 0.0);
  for (size_t i = 0; i < table_.size(); ++i) {
    double r = 0.0;
    for (int c = 0; c < 3; ++c)
      r += (mean[c] - 0.5) * ((double)table_[i].color[c] - 0.5);
    v[i] = r;
  }
  v[table_.size()] = 0.05;  // constant slot keeps gray patches normalizable
  normalize_in_place(v);
  return v;
}

DiscrepancyMap brute_force_discrepancy(const ModelHandle& model, const NeuronRef& neuron,
                                       const Image& image, const OcclusionGrid& grid) {
  DiscrepancyMap dmap;
  dmap.neuron = neuron;
  dmap.image_id = image.id;
  dmap.grid = grid;
  dmap.base_activation = model.neuron_activation(image, neuron).scalar;
  for (const auto& [r0, c0] : grid.positions) {
    Image occluded = image;
    for (int r = r0; r < r0 + grid.occluder_size; ++r)
      for (int c = c0; c < c0 + grid.occluder_size; ++c)
        for (int ch = 0; ch < 3; ++ch) occluded.at(r, c, ch) = grid.fill_value[ch];
    const double act = model.neuron_activation(occluded, neuron).scalar;
    dmap.scores.push_back(std::abs(act - dmap.base_activation));
  }
  return dmap;
}

double mask_region_iou(const ActivationMask& mask, const Rect& region) {
  size_t inter = 0, uni = 0;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      const bool in_mask = mask.at(r, c) != 0;
      const bool in_region = r >= region.row && r < region.row + region.height &&
                             c >= region.col && c < region.col + region.width;
      if (in_mask && in_region) ++inter;
      if (in_mask || in_region) ++uni;
    }
  return uni == 0 ? 0.0 : (double)inter / (double)uni;
}

std::filesystem::path write_tiny_transformer(const std::filesystem::path& dir,
                                             uint64_t seed) {
  ensure_dir(dir);
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 0x7777u);
  std::uniform_real_distribution<float> dist(-0.4f, 0.4f);
  auto rand_tensor = [&](std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<float> data((size_t)n);
    for (auto& v : data) v = dist(rng);
    return tensor_json(std::move(shape), data);
  };

  const int tokens = 16, d = 8, hidden = 12, classes = 3;
  ordered_json weights;
  weights["schema_version"] = 1;
  weights["name"] = "tiny-transformer";
  weights["input"] = {{"shape", {3, 4, 4}}};
  weights["tensors"] = {
      {"embed_w", rand_tensor({d, 3})},    {"embed_b", rand_tensor({d})},
      {"pos", rand_tensor({tokens, d})},   {"ln1_g", rand_tensor({d})},
      {"ln1_b", rand_tensor({d})},         {"wq", rand_tensor({d, d})},
      {"bq", rand_tensor({d})},            {"wk", rand_tensor({d, d})},
      {"bk", rand_tensor({d})},            {"wv", rand_tensor({d, d})},
      {"bv", rand_tensor({d})},            {"wo", rand_tensor({d, d})},
      {"bo", rand_tensor({d})},            {"mlp1_w", rand_tensor({hidden, d})},
      {"mlp1_b", rand_tensor({hidden})},   {"mlp2_w", rand_tensor({d, hidden})},
      {"mlp2_b", rand_tensor({d})},        {"head_w", rand_tensor({classes, d})},
      {"head_b", rand_tensor({classes})},
  };
  weights["ops"] = ordered_json::array({
      {{"name", "tok"}, {"op", "to_tokens"}, {"in", "input"}},
      {{"name", "embed"},
       {"op", "linear"},
       {"in", "tok"},
       {"weight", "embed_w"},
       {"bias", "embed_b"}},
      {{"name", "posadd"}, {"op", "add_param"}, {"in", "embed"}, {"param", "pos"}},
      {{"name", "ln1"},
       {"op", "layernorm"},
       {"in", "posadd"},
       {"gamma", "ln1_g"},
       {"beta", "ln1_b"}},
      {{"name", "attn"},
       {"op", "attention"},
       {"in", "ln1"},
       {"heads", 2},
       {"wq", "wq"},
       {"bq", "bq"},
       {"wk", "wk"},
       {"bk", "bk"},
       {"wv", "wv"},
       {"bv", "bv"},
       {"wo", "wo"},
       {"bo", "bo"}},
      {{"name", "res1"}, {"op", "add"}, {"in", {"attn", "posadd"}}},
      {{"name", "mlp1"},
       {"op", "linear"},
       {"in", "res1"},
       {"weight", "mlp1_w"},
       {"bias", "mlp1_b"}},
      {{"name", "mlp1_relu"}, {"op", "relu"}, {"in", "mlp1"}},
      {{"name", "mlp2"},
       {"op", "linear"},
       {"in", "mlp1_relu"},
       {"weight", "mlp2_w"},
       {"bias", "mlp2_b"}},
      {{"name", "cls"}, {"op", "select_token"}, {"in", "mlp2"}, {"token", 0}},
      {{"name", "head"},
       {"op", "linear"},
       {"in", "cls"},
       {"weight", "head_w"},
       {"bias", "head_b"}},
  });
  weights["output"] = "head";
  weights["catalog"] = ordered_json::array({{{"layer", "mlp1"},
                                             {"kind", "mlp-hidden"},
                                             {"producer", "mlp1"},
                                             {"post", "mlp1_relu"}}});
  write_file_atomic(dir / "weights.json", weights.dump(2) + "\n");

  ordered_json model_spec;
  model_spec["architecture_tag"] = "transformer";
  model_spec["weight_source"] = "weights.json";
  model_spec["input_shape"] = {4, 4, 3};
  model_spec["preprocessing"] = ordered_json::object();
  model_spec["aggregation"] = "max";
  model_spec["activation_site"] = "post";
  const auto spec_path = dir / "model_spec.json";
  write_file_atomic(spec_path, model_spec.dump(2) + "\n");
  return spec_path;
}

ModelHandle make_tiny_transformer(const std::filesystem::path& dir, uint64_t seed) {
  return load_model(write_tiny_transformer(dir, seed));
}

}  // namespace unitscope
