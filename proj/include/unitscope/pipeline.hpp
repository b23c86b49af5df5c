#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unitscope/embedder.hpp"
#include "unitscope/matcher.hpp"
#include "unitscope/patches.hpp"

namespace unitscope {

inline constexpr const char* kToolVersion = "0.1.0";

// One config drives every subcommand; unused fields are ignored.
// Precedence is handled by the CLI: flags > config file > these defaults.
struct RunConfig {
  std::filesystem::path model_spec;
  std::filesystem::path corpus;
  std::filesystem::path vocab;
  std::filesystem::path out = "out";
  std::filesystem::path cache;     // empty = caching off
  std::filesystem::path fixtures;  // LLM reply fixtures

  std::string layer = "last";  // exact name, alias, or glob with '*'
  std::vector<int> units;      // empty = every unit of the layer

  PatchParams patch;
  MatchParams match;
  std::string embedder = "mock";  // "mock" | "env" | http(s) URL
  int embedder_dim = 512;

  int eval_per_class = 50;  // ablation evaluation subsample
  bool full_eval = false;

  int class_index = -1;  // category-units target class
  int top_n = 2;
  bool chain_explain = false;

  uint64_t seed = 0;
  int jobs = 0;            // worker pool size, 0 = hardware default
  bool canonical = false;  // omit timestamps/timings from artifacts

  std::string llm_mode = "fixture";  // fixture | live | record
  std::string llm_model;             // override for live/record
};

RunConfig config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string config_to_json(const RunConfig& config);

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct RunRecord {
  std::string command;
  std::string status;  // "ok" | "failed"
  std::vector<std::string> failures;
  std::map<std::string, std::string> artifact_hashes;
  std::vector<StageTiming> timings;
  uint64_t seed = 0;
  std::string created_at;  // empty in canonical mode
  RunConfig config;
};

void write_run_record(const RunRecord& record, const std::filesystem::path& out_dir);

// Resolves "mock" (table from ground_truth.json beside the corpus manifest),
// "env" (UNITSCOPE_EMBEDDER_URL), or an explicit service URL.
std::unique_ptr<Embedder> make_embedder(const RunConfig& config);

// Bounded worker pool; fn must not throw (collect failures inside).
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn);

// Subcommand entry points; return the process exit code (0 = clean).
int cmd_build_vocab(const RunConfig& config);
int cmd_explain(const RunConfig& config);
int cmd_ablate(const RunConfig& config);
int cmd_category_units(const RunConfig& config);
int cmd_report(const RunConfig& config);

}  // namespace unitscope
