#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace unitscope {

struct Concept {
  std::string text;                      // display form, as produced by the LLM
  std::set<std::string> source_classes;  // class names that yielded it
};

// Dedup key: lowercase, whitespace collapsed, trailing punctuation stripped.
std::string concept_key(const std::string& text);

struct VocabularyProvenance {
  std::string llm_model_id;
  std::string prompt_template;
  std::string created_at;

  bool operator==(const VocabularyProvenance&) const = default;
};

struct Vocabulary {
  std::vector<Concept> concepts;  // unique by concept_key, first-seen order
  VocabularyProvenance provenance;
  std::string dataset_tag;

  bool operator==(const Vocabulary&) const = default;
};

bool operator==(const Concept& a, const Concept& b);

std::string build_prompt(const std::string& class_name);

// Parses a bulleted ("-", "*"), numbered ("1.", "2)") or bare newline list.
// Items are truncated to 120 chars; at most max_items survive.
std::vector<std::string> parse_descriptor_list(const std::string& reply, int max_items);

// Per-class lists -> deduplicated vocabulary; source classes union on key
// collisions, first-seen text and order win.
Vocabulary merge_vocabulary(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& per_class);

std::string vocabulary_to_json(const Vocabulary& vocab);
Vocabulary vocabulary_from_json(const std::string& text);

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

// Content hash over dataset tag + concept list (provenance timestamps
// excluded so re-recorded runs keep their identity).
std::string vocabulary_hash(const Vocabulary& vocab);

}  // namespace unitscope
