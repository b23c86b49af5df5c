#include "unitscope/ablation.hpp"

#include <algorithm>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/matcher.hpp"

using ordered_json = nlohmann::ordered_json;

namespace unitscope {

CategoryAccuracy category_accuracy(const ModelHandle& model, const Corpus& corpus) {
  const int classes = model.class_count();
  CategoryAccuracy acc;
  acc.per_class.assign(classes, 0.0);
  acc.n_per_class.assign(classes, 0);
  acc.model_hash = model.content_hash();

  std::vector<int> correct(classes, 0);
  bool any_label = false;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& rec = corpus.record(i);
    if (!rec.label) continue;
    any_label = true;
    const int label = *rec.label;
    if (label < 0 || label >= classes)
      throw Error("label " + std::to_string(label) + " out of range for model with " +
                  std::to_string(classes) + " classes (image " + rec.id + ")");
    const auto probs = model.predict(corpus.load_image_at(i));
    const int pred = static_cast<int>(
        std::max_element(probs.begin(), probs.end()) - probs.begin());
    acc.n_per_class[label] += 1;
    if (pred == label) correct[label] += 1;
  }
  if (!any_label) throw Error("corpus has no labeled images; cannot measure accuracy");
  for (int c = 0; c < classes; ++c)
    if (acc.n_per_class[c] > 0) acc.per_class[c] = (double)correct[c] / acc.n_per_class[c];
  return acc;
}

namespace {

// Restores on scope exit unless the token was already handed back.
struct RestoreGuard {
  ModelHandle& model;
  AblationToken& token;
  ~RestoreGuard() {
    if (token.live) {
      try {
        model.restore(token);
      } catch (const std::exception& e) {
        std::cerr << "warning: failed to restore ablated unit: " << e.what() << "\n";
      }
    }
  }
};

}  // namespace

AblationReport ablation_report(ModelHandle& model, const NeuronRef& neuron,
                               const Corpus& corpus,
                               const std::optional<CategoryAccuracy>& baseline) {
  AblationReport report;
  report.neuron = neuron;
  report.model_hash = model.content_hash();
  report.baseline = baseline ? *baseline : category_accuracy(model, corpus);

  AblationToken token = model.ablate_unit(neuron);
  {
    RestoreGuard guard{model, token};
    report.ablated = category_accuracy(model, corpus);
  }

  const int classes = report.baseline.class_count();
  report.drops.assign(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    if (!report.baseline.evaluated(c)) continue;
    report.drops[c] = report.baseline.per_class[c] - report.ablated.per_class[c];
    if (report.max_drop_class < 0 || report.drops[c] > report.max_drop) {
      report.max_drop = report.drops[c];
      report.max_drop_class = c;
    }
  }
  return report;
}

LayerDropRanking layer_drop_ranking(ModelHandle& model, const std::string& layer_name,
                                    const Corpus& corpus,
                                    const std::vector<int>& unit_subset) {
  const std::string resolved = model.resolve_layer(layer_name);
  const LayerId& layer = model.layer(resolved);

  std::vector<int> units = unit_subset;
  if (units.empty()) {
    units.resize(layer.unit_count);
    for (int u = 0; u < layer.unit_count; ++u) units[u] = u;
  } else {
    for (int u : units)
      if (u < 0 || u >= layer.unit_count)
        throw Error("unit " + std::to_string(u) + " out of range for layer " + resolved);
  }

  LayerDropRanking ranking;
  ranking.layer = layer;
  ranking.model_hash = model.content_hash();
  const CategoryAccuracy base = category_accuracy(model, corpus);
  for (int u : units) {
    const AblationReport rep = ablation_report(model, {resolved, u}, corpus, base);
    ranking.entries.push_back({u, rep.max_drop, rep.max_drop_class});
  }
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                   [](const DropEntry& a, const DropEntry& b) {
                     if (a.max_drop != b.max_drop) return a.max_drop > b.max_drop;
                     return a.unit < b.unit;
                   });
  return ranking;
}

std::vector<UnitWeight> category_units(const ModelHandle& model, int class_index,
                                       int top_n) {
  if (top_n < 1) throw Error("top_n must be >= 1");
  const std::vector<double> weights = model.classifier_head_weights(class_index);
  std::vector<UnitWeight> all(weights.size());
  for (size_t u = 0; u < weights.size(); ++u)
    all[u] = {static_cast<int>(u), weights[u]};
  std::stable_sort(all.begin(), all.end(), [](const UnitWeight& a, const UnitWeight& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.unit < b.unit;
  });
  if ((size_t)top_n < all.size()) all.resize(top_n);
  return all;
}

std::vector<JoinedEntry> importance_explanation_join(
    const LayerDropRanking& ranking, const std::filesystem::path& explanations_root) {
  std::vector<JoinedEntry> joined;
  joined.reserve(ranking.entries.size());
  for (const DropEntry& entry : ranking.entries) {
    JoinedEntry je;
    je.entry = entry;
    const auto path = explanation_path(explanations_root, ranking.model_hash,
                                       {ranking.layer.name, entry.unit});
    if (std::filesystem::exists(path)) {
      const Explanation exp = load_explanation(path);
      je.has_explanation = true;
      for (const ConceptScore& cs : exp.top()) je.top_concepts.push_back(cs.item.text);
    } else {
      std::cerr << "warning: no explanation for unit " << entry.unit << " at "
                << path.string() << "\n";
    }
    joined.push_back(std::move(je));
  }
  return joined;
}

namespace {

ordered_json accuracy_to_json(const CategoryAccuracy& acc) {
  ordered_json j;
  j["per_class"] = acc.per_class;
  j["n_per_class"] = acc.n_per_class;
  j["model_hash"] = acc.model_hash;
  return j;
}

CategoryAccuracy accuracy_from_json(const ordered_json& j) {
  CategoryAccuracy acc;
  acc.per_class = j.at("per_class").get<std::vector<double>>();
  acc.n_per_class = j.at("n_per_class").get<std::vector<int>>();
  acc.model_hash = j.value("model_hash", "");
  return acc;
}

}  // namespace

std::string ablation_report_to_json(const AblationReport& report) {
  ordered_json j;
  j["schema_version"] = 1;
  j["neuron"] = {{"layer", report.neuron.layer}, {"unit", report.neuron.unit}};
  j["model_hash"] = report.model_hash;
  j["baseline"] = accuracy_to_json(report.baseline);
  j["ablated"] = accuracy_to_json(report.ablated);
  j["drops"] = report.drops;
  j["max_drop"] = {{"class", report.max_drop_class}, {"value", report.max_drop}};
  return j.dump(2) + "\n";
}

AblationReport ablation_report_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad ablation report JSON: ") + e.what());
  }
  if (j.value("schema_version", 0) != 1)
    throw Error("unsupported ablation report schema version");
  AblationReport report;
  report.neuron.layer = j.at("neuron").at("layer").get<std::string>();
  report.neuron.unit = j.at("neuron").at("unit").get<int>();
  report.model_hash = j.value("model_hash", "");
  report.baseline = accuracy_from_json(j.at("baseline"));
  report.ablated = accuracy_from_json(j.at("ablated"));
  report.drops = j.at("drops").get<std::vector<double>>();
  report.max_drop_class = j.at("max_drop").at("class").get<int>();
  report.max_drop = j.at("max_drop").at("value").get<double>();
  return report;
}

void save_ablation_report(const AblationReport& report,
                          const std::filesystem::path& path) {
  write_file_atomic(path, ablation_report_to_json(report));
}

AblationReport load_ablation_report(const std::filesystem::path& path) {
  try {
    return ablation_report_from_json(read_file(path));
  } catch (const Error& e) {
    throw Error("failed to load ablation report " + path.string() + ": " + e.what());
  }
}

std::string ranking_to_csv(const LayerDropRanking& ranking) {
  std::ostringstream os;
  os << "unit,max_drop,argmax_class\n";
  os.precision(17);
  for (const DropEntry& e : ranking.entries)
    os << e.unit << "," << e.max_drop << "," << e.argmax_class << "\n";
  return os.str();
}

std::string ranking_to_json(const LayerDropRanking& ranking) {
  ordered_json j;
  j["schema_version"] = 1;
  j["layer"] = {{"name", ranking.layer.name},
                {"kind", to_string(ranking.layer.kind)},
                {"unit_count", ranking.layer.unit_count}};
  j["model_hash"] = ranking.model_hash;
  auto entries = ordered_json::array();
  for (const DropEntry& e : ranking.entries)
    entries.push_back({{"unit", e.unit},
                       {"max_drop", e.max_drop},
                       {"argmax_class", e.argmax_class}});
  j["entries"] = std::move(entries);
  return j.dump(2) + "\n";
}

LayerDropRanking ranking_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad ranking JSON: ") + e.what());
  }
  if (j.value("schema_version", 0) != 1)
    throw Error("unsupported ranking schema version");
  LayerDropRanking ranking;
  ranking.layer.name = j.at("layer").at("name").get<std::string>();
  const std::string kind = j.at("layer").at("kind").get<std::string>();
  ranking.layer.kind =
      kind == "mlp-hidden" ? LayerKind::MlpHidden : LayerKind::ConvFeatureMap;
  ranking.layer.unit_count = j.at("layer").at("unit_count").get<int>();
  ranking.model_hash = j.value("model_hash", "");
  for (const auto& e : j.at("entries"))
    ranking.entries.push_back({e.at("unit").get<int>(), e.at("max_drop").get<double>(),
                               e.at("argmax_class").get<int>()});
  return ranking;
}

}  // namespace unitscope
