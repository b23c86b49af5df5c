#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unitscope/corpus.hpp"
#include "unitscope/model.hpp"

namespace unitscope {

struct CategoryAccuracy {
  std::vector<double> per_class;  // top-1 accuracy, 0 where not evaluated
  std::vector<int> n_per_class;   // evaluation counts; 0 = class absent
  std::string model_hash;

  int class_count() const { return static_cast<int>(per_class.size()); }
  bool evaluated(int c) const { return n_per_class[c] > 0; }
};

struct AblationReport {
  NeuronRef neuron;
  std::string model_hash;  // pre-ablation hash
  CategoryAccuracy baseline;
  CategoryAccuracy ablated;
  std::vector<double> drops;  // baseline - ablated, evaluated classes only
  int max_drop_class = -1;
  double max_drop = 0.0;
};

struct DropEntry {
  int unit = 0;
  double max_drop = 0.0;
  int argmax_class = -1;
};

struct LayerDropRanking {
  LayerId layer;
  std::string model_hash;
  std::vector<DropEntry> entries;  // max_drop descending, unit index tiebreak
};

CategoryAccuracy category_accuracy(const ModelHandle& model, const Corpus& corpus);

// Measures baseline (or reuses one computed on the same corpus), zeroes the
// unit, re-measures, and restores the weights before returning — also on
// failure part-way through.
AblationReport ablation_report(ModelHandle& model, const NeuronRef& neuron,
                               const Corpus& corpus,
                               const std::optional<CategoryAccuracy>& baseline = {});

LayerDropRanking layer_drop_ranking(ModelHandle& model, const std::string& layer_name,
                                    const Corpus& corpus,
                                    const std::vector<int>& unit_subset = {});

struct UnitWeight {
  int unit = 0;
  double weight = 0.0;
};

// Top-n units of the classifier head for one class, by descending softmax
// weight with unit-index tiebreak.
std::vector<UnitWeight> category_units(const ModelHandle& model, int class_index,
                                       int top_n);

struct JoinedEntry {
  DropEntry entry;
  bool has_explanation = false;
  std::vector<std::string> top_concepts;  // empty when has_explanation == false
};

// Annotates each ranking entry with the stored explanation's top-m concept
// texts; missing files produce "no explanation" entries plus a warning.
std::vector<JoinedEntry> importance_explanation_join(
    const LayerDropRanking& ranking, const std::filesystem::path& explanations_root);

std::string ablation_report_to_json(const AblationReport& report);
AblationReport ablation_report_from_json(const std::string& text);
void save_ablation_report(const AblationReport& report, const std::filesystem::path& path);
AblationReport load_ablation_report(const std::filesystem::path& path);

std::string ranking_to_csv(const LayerDropRanking& ranking);
std::string ranking_to_json(const LayerDropRanking& ranking);
LayerDropRanking ranking_from_json(const std::string& text);

}  // namespace unitscope
