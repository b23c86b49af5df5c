#include "unitscope/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "unitscope/ablation.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/llm_client.hpp"
#include "unitscope/report.hpp"
#include "unitscope/testbed.hpp"
#include "unitscope/vocabulary.hpp"

using ordered_json = nlohmann::ordered_json;

namespace unitscope {

RunConfig config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid config JSON: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "model_spec") cfg.model_spec = value.get<std::string>();
    else if (key == "corpus") cfg.corpus = value.get<std::string>();
    else if (key == "vocab") cfg.vocab = value.get<std::string>();
    else if (key == "out") cfg.out = value.get<std::string>();
    else if (key == "cache") cfg.cache = value.get<std::string>();
    else if (key == "fixtures") cfg.fixtures = value.get<std::string>();
    else if (key == "layer") cfg.layer = value.get<std::string>();
    else if (key == "units") cfg.units = value.get<std::vector<int>>();
    else if (key == "k") cfg.patch.k = value.get<int>();
    else if (key == "occluder_size") cfg.patch.occluder_size = value.get<int>();
    else if (key == "stride") cfg.patch.stride = value.get<int>();
    else if (key == "percentile") cfg.patch.percentile = value.get<double>();
    else if (key == "fill") cfg.patch.fill = parse_occluder_fill(value.get<std::string>());
    else if (key == "soft_mask") cfg.patch.soft_mask = value.get<bool>();
    else if (key == "crop") cfg.patch.crop = value.get<bool>();
    else if (key == "top_m") cfg.match.top_m = value.get<int>();
    else if (key == "text_wrapper") cfg.match.text_wrapper = value.get<std::string>();
    else if (key == "embedder") cfg.embedder = value.get<std::string>();
    else if (key == "embedder_dim") cfg.embedder_dim = value.get<int>();
    else if (key == "eval_per_class") cfg.eval_per_class = value.get<int>();
    else if (key == "full_eval") cfg.full_eval = value.get<bool>();
    else if (key == "class_index") cfg.class_index = value.get<int>();
    else if (key == "top_n") cfg.top_n = value.get<int>();
    else if (key == "explain") cfg.chain_explain = value.get<bool>();
    else if (key == "seed") cfg.seed = value.get<uint64_t>();
    else if (key == "jobs") cfg.jobs = value.get<int>();
    else if (key == "canonical") cfg.canonical = value.get<bool>();
    else if (key == "llm_mode") cfg.llm_mode = value.get<std::string>();
    else if (key == "llm_model") cfg.llm_model = value.get<std::string>();
    else throw UsageError("unknown config key: " + key);
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return config_from_json(read_file(path));
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError("cannot read config " + path.string() + ": " + e.what());
  }
}

std::string config_to_json(const RunConfig& c) {
  ordered_json j;
  j["model_spec"] = c.model_spec.string();
  j["corpus"] = c.corpus.string();
  j["vocab"] = c.vocab.string();
  j["out"] = c.out.string();
  j["cache"] = c.cache.string();
  j["fixtures"] = c.fixtures.string();
  j["layer"] = c.layer;
  j["units"] = c.units;
  j["k"] = c.patch.k;
  j["occluder_size"] = c.patch.occluder_size;
  j["stride"] = c.patch.stride;
  j["percentile"] = c.patch.percentile;
  j["fill"] = to_string(c.patch.fill);
  j["soft_mask"] = c.patch.soft_mask;
  j["crop"] = c.patch.crop;
  j["top_m"] = c.match.top_m;
  j["text_wrapper"] = c.match.text_wrapper;
  j["embedder"] = c.embedder;
  j["embedder_dim"] = c.embedder_dim;
  j["eval_per_class"] = c.eval_per_class;
  j["full_eval"] = c.full_eval;
  j["class_index"] = c.class_index;
  j["top_n"] = c.top_n;
  j["explain"] = c.chain_explain;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["canonical"] = c.canonical;
  j["llm_mode"] = c.llm_mode;
  j["llm_model"] = c.llm_model;
  return j.dump(2) + "\n";
}

void write_run_record(const RunRecord& record, const std::filesystem::path& out_dir) {
  ordered_json j;
  j["schema_version"] = 1;
  j["tool_version"] = kToolVersion;
  j["command"] = record.command;
  j["status"] = record.status;
  j["failures"] = record.failures;
  j["seed"] = record.seed;
  j["artifact_hashes"] = record.artifact_hashes;
  if (!record.config.canonical) {
    auto timings = ordered_json::array();
    for (const auto& t : record.timings)
      timings.push_back({{"stage", t.stage}, {"ms", t.ms}});
    j["timings"] = std::move(timings);
    j["created_at"] = record.created_at;
  }
  j["config"] = ordered_json::parse(config_to_json(record.config));
  write_file_atomic(out_dir / "run_record.json", j.dump(2) + "\n");
}

std::unique_ptr<Embedder> make_embedder(const RunConfig& config) {
  std::string target = config.embedder;
  if (target == "env") {
    const char* url = std::getenv("UNITSCOPE_EMBEDDER_URL");
    if (!url || !*url)
      throw UsageError("--embedder env requires UNITSCOPE_EMBEDDER_URL to be set");
    target = url;
  }
  if (target == "mock") {
    if (config.corpus.empty())
      throw UsageError("mock embedder needs --corpus to locate ground_truth.json");
    const auto gt_path = config.corpus.parent_path() / "ground_truth.json";
    if (!std::filesystem::exists(gt_path))
      throw UsageError("mock embedder requires " + gt_path.string());
    const GroundTruth gt = load_ground_truth(gt_path);
    return std::make_unique<MockEmbedder>(MockEmbedder::for_ground_truth(gt));
  }
  if (target.rfind("http://", 0) == 0 || target.rfind("https://", 0) == 0) {
    std::string model_id = "vlm-service";
    if (const char* m = std::getenv("UNITSCOPE_EMBEDDER_MODEL")) model_id = m;
    return std::make_unique<HttpEmbedder>(target, model_id, config.embedder_dim);
  }
  throw UsageError("unknown embedder '" + config.embedder +
                   "' (expected mock, env, or a service URL)");
}

void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  size_t workers = jobs > 0 ? (size_t)jobs
                            : std::max<size_t>(1, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

namespace {

bool glob_match(const std::string& pattern, const std::string& text) {
  // '*' wildcards only; enough for layer name families like "conv*".
  size_t p = 0, t = 0, star = std::string::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == text[t])) {
      ++p, ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::vector<NeuronRef> select_neurons(const ModelHandle& model, const RunConfig& cfg) {
  std::vector<std::string> layers;
  if (cfg.layer.find('*') != std::string::npos) {
    for (const LayerId& lid : model.layer_catalog())
      if (glob_match(cfg.layer, lid.name)) layers.push_back(lid.name);
  } else {
    layers.push_back(model.resolve_layer(cfg.layer));
  }
  std::vector<NeuronRef> neurons;
  for (const std::string& name : layers) {
    const LayerId& lid = model.layer(name);
    if (cfg.units.empty()) {
      for (int u = 0; u < lid.unit_count; ++u) neurons.push_back({name, u});
    } else {
      for (int u : cfg.units) {
        if (u < 0 || u >= lid.unit_count)
          throw UsageError("unit " + std::to_string(u) + " out of range for layer " +
                           name);
        neurons.push_back({name, u});
      }
    }
  }
  if (neurons.empty()) throw UsageError("no neurons selected");
  return neurons;
}

class StageClock {
 public:
  void start() { t0_ = std::chrono::steady_clock::now(); }
  double stop() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     t0_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::vector<std::filesystem::path> patch_renders(const std::filesystem::path& dir,
                                                 int limit) {
  std::vector<std::filesystem::path> out;
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) return out;
  try {
    const auto j = ordered_json::parse(read_file(meta_path));
    for (const auto& p : j.at("patches")) {
      if ((int)out.size() >= limit) break;
      out.push_back(dir / p.at("patch_png").get<std::string>());
    }
  } catch (const std::exception& e) {
    std::cerr << "warning: unreadable patch metadata " << meta_path << ": " << e.what()
              << "\n";
  }
  return out;
}

RunRecord base_record(const char* command, const RunConfig& cfg) {
  RunRecord rec;
  rec.command = command;
  rec.seed = cfg.seed;
  rec.config = cfg;
  rec.created_at = cfg.canonical ? "" : iso_utc_now();
  rec.status = "ok";
  return rec;
}

void finish_record(RunRecord& rec, const RunConfig& cfg) {
  if (!rec.failures.empty()) rec.status = "failed";
  ensure_dir(cfg.out);
  write_run_record(rec, cfg.out);
}

Corpus eval_corpus(const Corpus& full, const RunConfig& cfg) {
  if (cfg.full_eval) return full.subset([&] {
    std::vector<size_t> all(full.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }());
  const auto idx = full.stratified_sample(cfg.eval_per_class, cfg.seed);
  if (idx.empty())
    throw Error("corpus has no labeled images; cannot build evaluation subset");
  return full.subset(idx);
}

}  // namespace

int cmd_build_vocab(const RunConfig& cfg) {
  if (cfg.corpus.empty()) throw UsageError("build-vocab requires --corpus");
  RunRecord rec = base_record("build-vocab", cfg);
  StageClock clock;
  clock.start();

  const Corpus corpus = Corpus::load(cfg.corpus);
  if (corpus.class_names().empty())
    throw UsageError("corpus manifest declares no class names; nothing to prompt");

  LLMClient::Options opt;
  if (cfg.llm_mode == "fixture") {
    opt.mode = LLMMode::Fixture;
  } else if (cfg.llm_mode == "live" || cfg.llm_mode == "record") {
    opt = LLMClient::live_options_from_env();
    opt.mode = cfg.llm_mode == "live" ? LLMMode::Live : LLMMode::Record;
  } else {
    throw UsageError("unknown llm mode: " + cfg.llm_mode);
  }
  opt.fixture_dir = cfg.fixtures;
  if (!cfg.llm_model.empty()) opt.model_id = cfg.llm_model;
  const LLMClient client(opt);

  std::vector<std::pair<std::string, std::vector<std::string>>> per_class;
  for (const std::string& name : corpus.class_names()) {
    std::vector<std::string> texts;
    for (const Concept& c : client.query_descriptors(name)) texts.push_back(c.text);
    per_class.emplace_back(name, std::move(texts));
  }
  Vocabulary vocab = merge_vocabulary(per_class);
  vocab.dataset_tag = cfg.corpus.stem().string() + "-" + corpus.content_hash().substr(0, 8);
  vocab.provenance.prompt_template = build_prompt("<class name>");
  if (opt.mode == LLMMode::Fixture) {
    vocab.provenance.llm_model_id = "fixture";
    vocab.provenance.created_at = "";
  } else {
    vocab.provenance.llm_model_id = opt.model_id;
    vocab.provenance.created_at = cfg.canonical ? "" : iso_utc_now();
  }

  const std::filesystem::path out_path =
      cfg.vocab.empty() ? cfg.out / "vocabulary.json" : cfg.vocab;
  save_vocabulary(vocab, out_path);
  rec.artifact_hashes["corpus"] = corpus.content_hash();
  rec.artifact_hashes["vocabulary"] = vocabulary_hash(vocab);
  rec.timings.push_back({"build-vocab", clock.stop()});
  finish_record(rec, cfg);
  std::cout << "wrote vocabulary with " << vocab.concepts.size() << " concepts to "
            << out_path.string() << "\n";
  return 0;
}

int cmd_explain(const RunConfig& cfg) {
  if (cfg.model_spec.empty()) throw UsageError("explain requires --model-spec");
  if (cfg.corpus.empty()) throw UsageError("explain requires --corpus");
  if (cfg.vocab.empty()) throw UsageError("explain requires --vocab");
  RunRecord rec = base_record("explain", cfg);

  const ModelHandle model = load_model(cfg.model_spec);
  const Corpus corpus = Corpus::load(cfg.corpus);
  const Vocabulary vocab = load_vocabulary(cfg.vocab);
  const auto embedder = make_embedder(cfg);
  const std::vector<NeuronRef> neurons = select_neurons(model, cfg);
  ArtifactCache cache =
      cfg.cache.empty() ? ArtifactCache() : ArtifactCache(cfg.cache);
  const std::string model_hash = model.content_hash();

  rec.artifact_hashes["model"] = model_hash;
  rec.artifact_hashes["corpus"] = corpus.content_hash();
  rec.artifact_hashes["vocabulary"] = vocabulary_hash(vocab);

  TextEmbeddingCache text_cache;
  std::mutex mu;
  std::vector<std::string> failures;
  std::vector<Explanation> done(neurons.size());
  std::vector<char> ok(neurons.size(), 0);
  double patch_ms = 0.0, match_ms = 0.0;  // guarded by mu

  parallel_for(neurons.size(), cfg.jobs, [&](size_t i) {
    const NeuronRef& n = neurons[i];
    try {
      StageClock pc;
      pc.start();
      const PatchSet patches =
          extract_patches(model, n, corpus, cfg.patch, cache.enabled() ? &cache : nullptr);
      save_patchset(patches, patchset_dir(cfg.out, model_hash, n));
      const double pms = pc.stop();

      StageClock mc;
      mc.start();
      Explanation exp =
          explain_neuron(*embedder, patches, vocab, cfg.match, &text_cache);
      save_explanation(exp, explanation_path(cfg.out, model_hash, n));
      const double mms = mc.stop();

      std::lock_guard<std::mutex> lock(mu);
      done[i] = std::move(exp);
      ok[i] = 1;
      patch_ms += pms;
      match_ms += mms;
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      failures.push_back(n.layer + "/" + std::to_string(n.unit) + ": " + e.what());
      std::cerr << "error: neuron " << n.layer << "/" << n.unit << ": " << e.what()
                << "\n";
    }
  });

  std::vector<NeuronPanel> panels;
  for (size_t i = 0; i < neurons.size(); ++i) {
    if (!ok[i]) continue;
    NeuronPanel panel;
    panel.neuron = neurons[i];
    panel.patch_images = patch_renders(patchset_dir(cfg.out, model_hash, neurons[i]), 4);
    for (const ConceptScore& cs : done[i].top())
      panel.concepts.emplace_back(cs.item.text, cs.score);
    panels.push_back(std::move(panel));
  }
  ensure_dir(cfg.out);
  write_file_atomic(cfg.out / "report_explain.html",
                    render_report_html("neuron explanations", panels));

  rec.failures = failures;
  rec.timings.push_back({"patches", patch_ms});
  rec.timings.push_back({"matching", match_ms});
  finish_record(rec, cfg);
  if (!failures.empty()) {
    std::cerr << failures.size() << " of " << neurons.size() << " neurons failed\n";
    return 1;
  }
  std::cout << "explained " << panels.size() << " neurons into " << cfg.out.string()
            << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  if (cfg.model_spec.empty()) throw UsageError("ablate requires --model-spec");
  if (cfg.corpus.empty()) throw UsageError("ablate requires --corpus");
  RunRecord rec = base_record("ablate", cfg);
  StageClock clock;
  clock.start();

  ModelHandle model = load_model(cfg.model_spec);
  const Corpus full = Corpus::load(cfg.corpus);
  const Corpus eval = eval_corpus(full, cfg);
  const std::string layer_name = model.resolve_layer(cfg.layer);
  const LayerId& layer = model.layer(layer_name);
  const std::string model_hash = model.content_hash();

  std::vector<int> units = cfg.units;
  if (units.empty()) {
    units.resize(layer.unit_count);
    for (int u = 0; u < layer.unit_count; ++u) units[u] = u;
  } else {
    for (int u : units)
      if (u < 0 || u >= layer.unit_count)
        throw UsageError("unit " + std::to_string(u) + " out of range for layer " +
                         layer_name);
  }

  rec.artifact_hashes["model"] = model_hash;
  rec.artifact_hashes["corpus"] = full.content_hash();

  const CategoryAccuracy baseline = category_accuracy(model, eval);
  const auto report_dir = cfg.out / "ablation" / model_hash / slugify(layer_name);
  ensure_dir(report_dir);

  std::mutex mu;
  std::vector<std::string> failures;
  std::vector<AblationReport> reports(units.size());
  std::vector<char> ok(units.size(), 0);

  parallel_for(units.size(), cfg.jobs, [&](size_t i) {
    try {
      ModelHandle worker = model.clone();
      AblationReport rep =
          ablation_report(worker, {layer_name, units[i]}, eval, baseline);
      save_ablation_report(rep, report_dir / (std::to_string(units[i]) + ".json"));
      std::lock_guard<std::mutex> lock(mu);
      reports[i] = std::move(rep);
      ok[i] = 1;
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      failures.push_back(layer_name + "/" + std::to_string(units[i]) + ": " + e.what());
      std::cerr << "error: unit " << units[i] << ": " << e.what() << "\n";
    }
  });

  LayerDropRanking ranking;
  ranking.layer = layer;
  ranking.model_hash = model_hash;
  for (size_t i = 0; i < units.size(); ++i)
    if (ok[i])
      ranking.entries.push_back(
          {units[i], reports[i].max_drop, reports[i].max_drop_class});
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                   [](const DropEntry& a, const DropEntry& b) {
                     if (a.max_drop != b.max_drop) return a.max_drop > b.max_drop;
                     return a.unit < b.unit;
                   });
  write_file_atomic(report_dir / "ranking.csv", ranking_to_csv(ranking));
  write_file_atomic(report_dir / "ranking.json", ranking_to_json(ranking));
  write_file_atomic(report_dir / "ranking.svg", svg_sorted_drop_curve(ranking));

  // Fig.-4-style joined panels when explanations are on disk.
  const auto joined = importance_explanation_join(ranking, cfg.out);
  std::vector<NeuronPanel> panels;
  std::vector<std::string> svgs{svg_sorted_drop_curve(ranking)};
  for (size_t i = 0; i < joined.size(); ++i) {
    const JoinedEntry& je = joined[i];
    NeuronPanel panel;
    panel.neuron = {layer_name, je.entry.unit};
    panel.max_drop = je.entry.max_drop;
    if (je.entry.argmax_class >= 0 &&
        je.entry.argmax_class < (int)full.class_names().size())
      panel.max_drop_class = full.class_names()[je.entry.argmax_class];
    panel.patch_images =
        patch_renders(patchset_dir(cfg.out, model_hash, panel.neuron), 4);
    if (je.has_explanation)
      for (const std::string& text : je.top_concepts) panel.concepts.emplace_back(text, 0.0);
    else
      panel.concepts.emplace_back("no explanation", 0.0);
    panels.push_back(std::move(panel));
  }
  for (size_t i = 0; i < units.size() && i < 8; ++i)
    if (ok[i]) svgs.push_back(svg_drop_bars(reports[i], full.class_names()));
  write_file_atomic(cfg.out / "report_ablate.html",
                    render_report_html("unit ablation", panels, svgs));

  rec.failures = failures;
  rec.timings.push_back({"ablate", clock.stop()});
  finish_record(rec, cfg);
  if (!failures.empty()) {
    std::cerr << failures.size() << " of " << units.size() << " units failed\n";
    return 1;
  }
  std::cout << "ablated " << units.size() << " units; ranking at "
            << (report_dir / "ranking.csv").string() << "\n";
  return 0;
}

int cmd_category_units(const RunConfig& cfg) {
  if (cfg.model_spec.empty()) throw UsageError("category-units requires --model-spec");
  if (cfg.class_index < 0) throw UsageError("category-units requires --class");
  RunRecord rec = base_record("category-units", cfg);
  StageClock clock;
  clock.start();

  const ModelHandle model = load_model(cfg.model_spec);
  if (cfg.class_index >= model.class_count())
    throw UsageError("class " + std::to_string(cfg.class_index) +
                     " out of range (model has " + std::to_string(model.class_count()) +
                     " classes)");
  const std::string feature_layer = model.head_feature_layer();
  int top_n = cfg.top_n;
  if (!feature_layer.empty()) {
    const int width = model.layer(feature_layer).unit_count;
    if (top_n > width) {
      std::cerr << "warning: top-n " << top_n << " clamped to layer width " << width
                << "\n";
      top_n = width;
    }
  }
  const auto selected = category_units(model, cfg.class_index, top_n);

  std::string class_name;
  if (!cfg.corpus.empty()) {
    const Corpus corpus = Corpus::load(cfg.corpus);
    if (cfg.class_index < (int)corpus.class_names().size())
      class_name = corpus.class_names()[cfg.class_index];
  }

  ordered_json j;
  j["schema_version"] = 1;
  j["class"] = cfg.class_index;
  if (!class_name.empty()) j["class_name"] = class_name;
  j["layer"] = feature_layer;
  auto arr = ordered_json::array();
  for (const auto& uw : selected) {
    arr.push_back({{"unit", uw.unit}, {"weight", uw.weight}});
    std::cout << uw.unit << "\t" << uw.weight << "\n";
  }
  j["units"] = std::move(arr);
  ensure_dir(cfg.out);
  write_file_atomic(cfg.out / "category_units.json", j.dump(2) + "\n");

  rec.artifact_hashes["model"] = model.content_hash();
  rec.timings.push_back({"category-units", clock.stop()});
  finish_record(rec, cfg);

  if (cfg.chain_explain) {
    RunConfig chained = cfg;
    chained.chain_explain = false;
    chained.layer = feature_layer.empty() ? cfg.layer : feature_layer;
    chained.units.clear();
    for (const auto& uw : selected) chained.units.push_back(uw.unit);
    return cmd_explain(chained);
  }
  return 0;
}

int cmd_report(const RunConfig& cfg) {
  if (cfg.model_spec.empty()) throw UsageError("report requires --model-spec");
  RunRecord rec = base_record("report", cfg);
  StageClock clock;
  clock.start();

  const ModelHandle model = load_model(cfg.model_spec);
  const std::string model_hash = model.content_hash();
  std::vector<std::string> class_names;
  if (!cfg.corpus.empty()) class_names = Corpus::load(cfg.corpus).class_names();

  std::vector<std::string> svgs;
  std::vector<NeuronPanel> panels;
  bool found = false;

  for (const LayerId& lid : model.layer_catalog()) {
    const auto ranking_path =
        cfg.out / "ablation" / model_hash / slugify(lid.name) / "ranking.json";
    std::map<int, std::pair<double, int>> drops;
    if (std::filesystem::exists(ranking_path)) {
      const LayerDropRanking ranking = ranking_from_json(read_file(ranking_path));
      svgs.push_back(svg_sorted_drop_curve(ranking));
      for (const DropEntry& e : ranking.entries)
        drops[e.unit] = {e.max_drop, e.argmax_class};
      found = true;
    }
    const auto exp_dir = cfg.out / "explanations" / model_hash / slugify(lid.name);
    for (int u = 0; u < lid.unit_count; ++u) {
      const auto path = exp_dir / (std::to_string(u) + ".json");
      const bool has_exp = std::filesystem::exists(path);
      if (!has_exp && !drops.count(u)) continue;
      found = true;
      NeuronPanel panel;
      panel.neuron = {lid.name, u};
      panel.patch_images =
          patch_renders(patchset_dir(cfg.out, model_hash, panel.neuron), 4);
      if (has_exp) {
        const Explanation exp = load_explanation(path);
        for (const ConceptScore& cs : exp.top())
          panel.concepts.emplace_back(cs.item.text, cs.score);
      }
      if (auto it = drops.find(u); it != drops.end()) {
        panel.max_drop = it->second.first;
        const int c = it->second.second;
        if (c >= 0 && c < (int)class_names.size()) panel.max_drop_class = class_names[c];
      }
      panels.push_back(std::move(panel));
    }
  }
  if (!found)
    throw UsageError("no explanation or ablation artifacts under " + cfg.out.string());

  write_file_atomic(cfg.out / "index.html",
                    render_report_html("unitscope report", panels, svgs));
  rec.artifact_hashes["model"] = model_hash;
  rec.timings.push_back({"report", clock.stop()});
  finish_record(rec, cfg);
  std::cout << "wrote " << (cfg.out / "index.html").string() << " with "
            << panels.size() << " neuron panels\n";
  return 0;
}

}  // namespace unitscope
