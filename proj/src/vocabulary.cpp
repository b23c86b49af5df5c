#include "unitscope/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "json.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/hashing.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace unitscope {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string concept_key(const std::string& text) {
  std::string key;
  bool pending_space = false;
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      pending_space = !key.empty();
      continue;
    }
    if (pending_space) key.push_back(' ');
    pending_space = false;
    key.push_back(static_cast<char>(std::tolower(ch)));
  }
  while (!key.empty()) {
    const char back = key.back();
    if (back == '.' || back == ',' || back == ';' || back == ':' || back == '!' ||
        back == '?')
      key.pop_back();
    else
      break;
  }
  return key;
}

bool operator==(const Concept& a, const Concept& b) {
  return a.text == b.text && a.source_classes == b.source_classes;
}

std::string build_prompt(const std::string& class_name) {
  const std::string name = trim(class_name);
  if (name.empty()) throw Error("empty class name");
  return "What are useful features for distinguishing a " + name +
         " in an image? Please give me a list of short phrases.";
}

std::vector<std::string> parse_descriptor_list(const std::string& reply, int max_items) {
  std::vector<std::string> items;
  std::istringstream lines(reply);
  std::string line;
  while (std::getline(lines, line)) {
    std::string item = trim(line);
    if (item.empty()) continue;
    // strip "-", "*", "1.", "23)" markers
    if (item[0] == '-' || item[0] == '*') {
      item = trim(item.substr(1));
    } else {
      size_t d = 0;
      while (d < item.size() && std::isdigit(static_cast<unsigned char>(item[d]))) ++d;
      if (d > 0 && d < item.size() && (item[d] == '.' || item[d] == ')'))
        item = trim(item.substr(d + 1));
    }
    if (item.empty()) continue;
    if (item.size() > 120) item = item.substr(0, 120);
    items.push_back(item);
    if (static_cast<int>(items.size()) >= max_items) break;
  }
  return items;
}

Vocabulary merge_vocabulary(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& per_class) {
  bool any = false;
  for (const auto& [cls, list] : per_class) any = any || !list.empty();
  if (!any) throw Error("all descriptor lists are empty");

  Vocabulary vocab;
  std::map<std::string, size_t> index_of;
  for (const auto& [cls, list] : per_class) {
    for (const std::string& text : list) {
      const std::string key = concept_key(text);
      if (key.empty()) continue;
      auto it = index_of.find(key);
      if (it == index_of.end()) {
        index_of[key] = vocab.concepts.size();
        vocab.concepts.push_back({text, {cls}});
      } else {
        vocab.concepts[it->second].source_classes.insert(cls);
      }
    }
  }
  return vocab;
}

std::string vocabulary_to_json(const Vocabulary& vocab) {
  ordered_json j;
  j["schema_version"] = 1;
  j["dataset_tag"] = vocab.dataset_tag;
  j["provenance"] = {{"llm_model_id", vocab.provenance.llm_model_id},
                     {"prompt_template", vocab.provenance.prompt_template},
                     {"created_at", vocab.provenance.created_at}};
  j["concepts"] = ordered_json::array();
  for (const Concept& c : vocab.concepts) {
    ordered_json cj;
    cj["text"] = c.text;
    cj["source_classes"] = std::vector<std::string>(c.source_classes.begin(),
                                                    c.source_classes.end());
    j["concepts"].push_back(cj);
  }
  return j.dump(2) + "\n";
}

Vocabulary vocabulary_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error(std::string("invalid vocabulary json: ") + e.what());
  }
  if (j.value("schema_version", 0) != 1)
    throw Error("unsupported vocabulary schema_version: " +
                std::to_string(j.value("schema_version", 0)));
  Vocabulary vocab;
  vocab.dataset_tag = j.value("dataset_tag", "");
  if (j.contains("provenance")) {
    const auto& p = j.at("provenance");
    vocab.provenance.llm_model_id = p.value("llm_model_id", "");
    vocab.provenance.prompt_template = p.value("prompt_template", "");
    vocab.provenance.created_at = p.value("created_at", "");
  }
  std::set<std::string> keys;
  for (const auto& cj : j.at("concepts")) {
    Concept c;
    c.text = cj.at("text").get<std::string>();
    if (c.text.empty()) throw Error("vocabulary concept with empty text");
    if (cj.contains("source_classes"))
      for (const auto& s : cj.at("source_classes")) c.source_classes.insert(s.get<std::string>());
    if (c.source_classes.empty()) c.source_classes.insert("unknown");
    if (!keys.insert(concept_key(c.text)).second)
      throw Error("vocabulary has duplicate concept key: " + concept_key(c.text));
    vocab.concepts.push_back(std::move(c));
  }
  return vocab;
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  write_file_atomic(path, vocabulary_to_json(vocab));
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  return vocabulary_from_json(read_file(path));
}

std::string vocabulary_hash(const Vocabulary& vocab) {
  ordered_json j;
  j["dataset_tag"] = vocab.dataset_tag;
  j["concepts"] = ordered_json::array();
  for (const Concept& c : vocab.concepts) {
    j["concepts"].push_back({{"text", c.text},
                             {"source_classes", std::vector<std::string>(
                                                    c.source_classes.begin(),
                                                    c.source_classes.end())}});
  }
  return short_hash(j.dump());
}

}  // namespace unitscope
