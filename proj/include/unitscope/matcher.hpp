#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unitscope/embedder.hpp"
#include "unitscope/model.hpp"
#include "unitscope/patches.hpp"
#include "unitscope/vocabulary.hpp"

namespace unitscope {

struct MatchParams {
  int top_m = 5;
  // Optional template around the concept text before embedding ("{}" is the
  // placeholder). Empty = embed the concept verbatim.
  std::string text_wrapper;
};

std::string wrap_text(const std::string& wrapper, const std::string& text);

struct ConceptScore {
  Concept item;
  double score = 0.0;                    // mean of per_patch_scores
  std::vector<double> per_patch_scores;  // phi per patch, PatchSet order
};

// Full scored vocabulary for one neuron; ranked covers every concept,
// sorted by score descending with ties broken by ascending normalized key.
// The explanation proper is the first top_m entries.
struct Explanation {
  NeuronRef neuron;
  std::string model_hash;
  std::string vocabulary_hash;
  std::string embedder_id;
  MatchParams params;
  int top_m = 0;
  std::vector<ConceptScore> ranked;

  std::vector<ConceptScore> top() const;
};

ConceptScore score_concept(const Embedder& embedder, const PatchSet& patches,
                           const Concept& concept_item,
                           const MatchParams& params = {},
                           TextEmbeddingCache* text_cache = nullptr);

// Sorts in place by (score desc, normalized key asc).
void rank_concepts(std::vector<ConceptScore>& scores);

Explanation explain_neuron(const Embedder& embedder, const PatchSet& patches,
                           const Vocabulary& vocabulary, const MatchParams& params = {},
                           TextEmbeddingCache* text_cache = nullptr);

std::string explanation_to_json(const Explanation& exp);
Explanation explanation_from_json(const std::string& text);

void save_explanation(const Explanation& exp, const std::filesystem::path& path);
Explanation load_explanation(const std::filesystem::path& path);

// explanations/<model>/<layer>/<unit>.json under an output root.
std::filesystem::path explanation_path(const std::filesystem::path& root,
                                       const std::string& model_hash,
                                       const NeuronRef& neuron);

}  // namespace unitscope
