#include "unitscope/matcher.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"

using ordered_json = nlohmann::ordered_json;

namespace unitscope {

std::string wrap_text(const std::string& wrapper, const std::string& text) {
  if (wrapper.empty()) return text;
  const auto pos = wrapper.find("{}");
  if (pos == std::string::npos) return wrapper + " " + text;
  return wrapper.substr(0, pos) + text + wrapper.substr(pos + 2);
}

std::vector<ConceptScore> Explanation::top() const {
  const size_t m = std::min<size_t>(ranked.size(), top_m < 0 ? 0 : (size_t)top_m);
  return {ranked.begin(), ranked.begin() + m};
}

namespace {

std::vector<double> text_embedding(const Embedder& embedder, const MatchParams& params,
                                   const std::string& text, TextEmbeddingCache* cache) {
  const std::string wrapped = wrap_text(params.text_wrapper, text);
  if (cache) return cache->get_or_compute(embedder, wrapped);
  return embedder.embed_text(wrapped);
}

ConceptScore score_against(const std::vector<std::vector<double>>& patch_embs,
                           const std::vector<double>& text_emb, Concept concept_item) {
  ConceptScore cs;
  cs.item = std::move(concept_item);
  cs.per_patch_scores.reserve(patch_embs.size());
  double sum = 0.0;
  for (const auto& pe : patch_embs) {
    const double phi = dot(pe, text_emb);
    cs.per_patch_scores.push_back(phi);
    sum += phi;
  }
  cs.score = sum / (double)patch_embs.size();
  return cs;
}

std::vector<std::vector<double>> embed_patches(const Embedder& embedder,
                                               const PatchSet& patches) {
  if (patches.patches.empty()) throw Error("patch set is empty; nothing to score");
  std::vector<std::vector<double>> out;
  out.reserve(patches.patches.size());
  for (const Patch& p : patches.patches) out.push_back(embedder.embed_image(p.pixels));
  return out;
}

}  // namespace

ConceptScore score_concept(const Embedder& embedder, const PatchSet& patches,
                           const Concept& concept_item, const MatchParams& params,
                           TextEmbeddingCache* text_cache) {
  const auto patch_embs = embed_patches(embedder, patches);
  const auto text_emb = text_embedding(embedder, params, concept_item.text, text_cache);
  return score_against(patch_embs, text_emb, concept_item);
}

void rank_concepts(std::vector<ConceptScore>& scores) {
  std::stable_sort(scores.begin(), scores.end(),
                   [](const ConceptScore& a, const ConceptScore& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return concept_key(a.item.text) < concept_key(b.item.text);
                   });
}

Explanation explain_neuron(const Embedder& embedder, const PatchSet& patches,
                           const Vocabulary& vocabulary, const MatchParams& params,
                           TextEmbeddingCache* text_cache) {
  if (vocabulary.concepts.empty()) throw Error("vocabulary is empty; nothing to score");
  if (params.top_m < 1) throw Error("top_m must be >= 1");

  const auto patch_embs = embed_patches(embedder, patches);

  Explanation exp;
  exp.neuron = patches.neuron;
  exp.model_hash = patches.model_hash;
  exp.vocabulary_hash = vocabulary_hash(vocabulary);
  exp.embedder_id = embedder.id();
  exp.params = params;
  exp.top_m = params.top_m;
  exp.ranked.reserve(vocabulary.concepts.size());
  for (const Concept& c : vocabulary.concepts) {
    const auto text_emb = text_embedding(embedder, params, c.text, text_cache);
    exp.ranked.push_back(score_against(patch_embs, text_emb, c));
  }
  rank_concepts(exp.ranked);
  return exp;
}

std::string explanation_to_json(const Explanation& exp) {
  ordered_json j;
  j["schema_version"] = 1;
  j["neuron"] = {{"layer", exp.neuron.layer}, {"unit", exp.neuron.unit}};
  j["model_hash"] = exp.model_hash;
  j["vocabulary_hash"] = exp.vocabulary_hash;
  j["params"] = {{"embedder_id", exp.embedder_id},
                 {"top_m", exp.params.top_m},
                 {"text_wrapper", exp.params.text_wrapper}};
  j["top_m"] = exp.top_m;
  auto ranked = ordered_json::array();
  for (const ConceptScore& cs : exp.ranked) {
    ordered_json e;
    e["text"] = cs.item.text;
    e["source_classes"] = cs.item.source_classes;
    e["score"] = cs.score;
    e["per_patch_scores"] = cs.per_patch_scores;
    ranked.push_back(std::move(e));
  }
  j["ranked"] = std::move(ranked);
  return j.dump(2) + "\n";
}

Explanation explanation_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad explanation JSON: ") + e.what());
  }
  if (j.value("schema_version", 0) != 1)
    throw Error("unsupported explanation schema version");
  Explanation exp;
  exp.neuron.layer = j.at("neuron").at("layer").get<std::string>();
  exp.neuron.unit = j.at("neuron").at("unit").get<int>();
  exp.model_hash = j.value("model_hash", "");
  exp.vocabulary_hash = j.value("vocabulary_hash", "");
  if (j.contains("params")) {
    const auto& p = j["params"];
    exp.embedder_id = p.value("embedder_id", "");
    exp.params.top_m = p.value("top_m", 5);
    exp.params.text_wrapper = p.value("text_wrapper", "");
  }
  exp.top_m = j.value("top_m", exp.params.top_m);
  for (const auto& e : j.at("ranked")) {
    ConceptScore cs;
    cs.item.text = e.at("text").get<std::string>();
    if (e.contains("source_classes"))
      cs.item.source_classes = e["source_classes"].get<std::set<std::string>>();
    cs.score = e.at("score").get<double>();
    if (e.contains("per_patch_scores"))
      cs.per_patch_scores = e["per_patch_scores"].get<std::vector<double>>();
    exp.ranked.push_back(std::move(cs));
  }
  return exp;
}

void save_explanation(const Explanation& exp, const std::filesystem::path& path) {
  write_file_atomic(path, explanation_to_json(exp));
}

Explanation load_explanation(const std::filesystem::path& path) {
  try {
    return explanation_from_json(read_file(path));
  } catch (const Error& e) {
    throw Error("failed to load explanation " + path.string() + ": " + e.what());
  }
}

std::filesystem::path explanation_path(const std::filesystem::path& root,
                                       const std::string& model_hash,
                                       const NeuronRef& neuron) {
  return root / "explanations" / model_hash / slugify(neuron.layer) /
         (std::to_string(neuron.unit) + ".json");
}

}  // namespace unitscope
