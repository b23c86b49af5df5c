#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "unitscope/image.hpp"
#include "unitscope/tensor.hpp"

namespace unitscope {

enum class ArchitectureTag { Conv, Transformer, Synthetic };
enum class LayerKind { ConvFeatureMap, MlpHidden };
enum class Aggregation { Max, Mean };
enum class ActivationSite { Post, Pre };

std::string to_string(ArchitectureTag tag);
std::string to_string(LayerKind kind);

struct LayerId {
  std::string name;
  LayerKind kind = LayerKind::ConvFeatureMap;
  int unit_count = 0;
};

struct NeuronRef {
  std::string layer;
  int unit = 0;

  bool operator==(const NeuronRef&) const = default;
  auto operator<=>(const NeuronRef&) const = default;
};

struct ActivationRecord {
  NeuronRef neuron;
  std::string image_id;
  double scalar = 0.0;
  // Row/col of one maximizing position (first in row-major order on ties).
  // Token layers report (token index, 0).
  int argmax_row = 0;
  int argmax_col = 0;
};

struct Preprocessing {
  std::optional<std::pair<int, int>> resize;  // (H, W)
  std::vector<float> mean;                    // per channel, subtracted
  std::vector<float> stddev;                  // per channel, divisor
};

struct ModelSpecRecord {
  ArchitectureTag architecture_tag = ArchitectureTag::Synthetic;
  std::string weight_source;
  std::array<int, 3> input_shape{0, 0, 0};  // H, W, C
  Preprocessing preprocessing;
  std::string head_layer_name;
  Aggregation aggregation = Aggregation::Max;
  ActivationSite activation_site = ActivationSite::Post;
};

ModelSpecRecord parse_model_spec(const std::string& json_text);

// Activations of one layer over an image list; rows follow input order.
struct ActivationMatrix {
  std::vector<std::string> image_ids;
  int unit_count = 0;
  std::vector<double> values;  // n_images x unit_count, row-major

  double at(int image, int unit) const {
    return values[static_cast<size_t>(image) * unit_count + unit];
  }
};

class ModelHandle;

// Reversible ablation handle; pass back to ModelHandle::restore exactly once.
struct AblationToken {
  NeuronRef neuron;
  size_t op_index = 0;
  std::vector<float> saved_weights;
  float saved_bias = 0.0f;
  bool live = false;
};

namespace detail {
struct Graph;
}

class ModelHandle {
 public:
  ModelHandle(ModelHandle&&) noexcept;
  ModelHandle& operator=(ModelHandle&&) noexcept;
  ~ModelHandle();

  ModelHandle clone() const;

  ArchitectureTag architecture() const { return spec_.architecture_tag; }
  const std::vector<LayerId>& layer_catalog() const { return catalog_; }
  const LayerId& layer(const std::string& name) const;
  bool has_layer(const std::string& name) const;
  // Accepts catalog names and model-spec aliases ("last" resolves to the
  // final catalog layer).
  std::string resolve_layer(const std::string& name_or_alias) const;
  int class_count() const { return class_count_; }
  const std::array<int, 3>& input_shape() const { return spec_.input_shape; }
  const ModelSpecRecord& spec() const { return spec_; }
  // Content hash of the weight source; ablations are appended so cached
  // artifacts never alias across modified weights.
  std::string content_hash() const;
  std::string base_hash() const { return base_hash_; }

  std::vector<double> predict(const Image& image) const;
  ActivationRecord neuron_activation(const Image& image, const NeuronRef& neuron) const;
  ActivationMatrix batch_activations(const std::vector<Image>& images,
                                     const std::string& layer_name) const;
  std::vector<double> classifier_head_weights(int class_index) const;
  // Catalog layer feeding the linear head; empty when the model has none.
  std::string head_feature_layer() const;

  AblationToken ablate_unit(const NeuronRef& neuron);
  void restore(AblationToken& token);
  bool is_ablated(const NeuronRef& neuron) const;

  // Raw post/pre-activation feature map of one catalog layer; conv layers
  // return (C,H,W), token layers (T,U).
  Tensor feature_map(const Image& image, const std::string& layer_name) const;

  // Validated preprocessed network input, exposed for oracle checks.
  Tensor preprocess(const Image& image) const;

  friend ModelHandle load_model(const std::filesystem::path& spec_path);
  friend ModelHandle load_model(const ModelSpecRecord& spec,
                                const std::filesystem::path& base_dir);

 private:
  ModelHandle();

  ModelSpecRecord spec_;
  std::unique_ptr<detail::Graph> graph_;
  std::vector<LayerId> catalog_;
  std::map<std::string, std::string> aliases_;
  int class_count_ = 0;
  std::string base_hash_;
  std::set<std::pair<std::string, int>> ablated_;
};

ModelHandle load_model(const std::filesystem::path& spec_path);
ModelHandle load_model(const ModelSpecRecord& spec, const std::filesystem::path& base_dir);

// Scalar + argmax aggregation over a feature map laid out unit-major
// (unit, position). Ties resolve to the lowest position index.
std::pair<double, int> aggregate_unit(const Tensor& map, int unit, Aggregation agg);

}  // namespace unitscope
