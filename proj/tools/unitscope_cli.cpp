#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unitscope/common.hpp"
#include "unitscope/pipeline.hpp"

namespace {

using unitscope::RunConfig;

struct Flags {
  std::string config, model_spec, corpus, vocab, out, cache, fixtures;
  std::string layer, fill, embedder, text_wrapper, llm_mode, llm_model;
  std::vector<int> units;
  int k = 0, occluder_size = 0, stride = 0, top_m = 0, embedder_dim = 0;
  int eval_per_class = 0, class_index = 0, top_n = 0, jobs = 0;
  double percentile = 0.0;
  uint64_t seed = 0;
  bool full_eval = false, chain_explain = false, canonical = false;
  bool soft_mask = false, crop = false;
  std::map<std::string, CLI::Option*> opt;
};

void add_common(CLI::App* sub, Flags& f) {
  f.opt["--config"] = sub->add_option("--config", f.config, "run config JSON file");
  f.opt["--model-spec"] =
      sub->add_option("--model-spec", f.model_spec, "model spec JSON");
  f.opt["--corpus"] = sub->add_option("--corpus", f.corpus, "corpus manifest (JSONL)");
  f.opt["--vocab"] = sub->add_option("--vocab", f.vocab, "vocabulary JSON path");
  f.opt["--out"] = sub->add_option("--out", f.out, "output directory");
  f.opt["--cache"] = sub->add_option("--cache", f.cache, "artifact cache directory");
  f.opt["--fixtures"] =
      sub->add_option("--fixtures", f.fixtures, "LLM reply fixture directory");
  f.opt["--layer"] = sub->add_option("--layer", f.layer, "layer name, alias, or glob");
  f.opt["--units"] =
      sub->add_option("--units", f.units, "unit indices (repeat or space-separate)");
  f.opt["--k"] = sub->add_option("--k", f.k, "top-K activating images per neuron");
  f.opt["--occluder-size"] =
      sub->add_option("--occluder-size", f.occluder_size, "occluder side, 0 = auto");
  f.opt["--stride"] = sub->add_option("--stride", f.stride, "occluder stride");
  f.opt["--percentile"] =
      sub->add_option("--percentile", f.percentile, "mask threshold percentile");
  f.opt["--fill"] =
      sub->add_option("--fill", f.fill, "occluder fill: gray|mean-pixel|zero");
  f.opt["--soft-mask"] = sub->add_flag("--soft-mask", f.soft_mask, "soft field mask");
  f.opt["--crop"] = sub->add_flag("--crop", f.crop, "crop patches to mask bbox");
  f.opt["--top-m"] = sub->add_option("--top-m", f.top_m, "concepts kept per neuron");
  f.opt["--text-wrapper"] = sub->add_option("--text-wrapper", f.text_wrapper,
                                            "embedding template, {} = concept");
  f.opt["--embedder"] =
      sub->add_option("--embedder", f.embedder, "mock | env | service URL");
  f.opt["--embedder-dim"] =
      sub->add_option("--embedder-dim", f.embedder_dim, "service embedding dim");
  f.opt["--eval-per-class"] = sub->add_option("--eval-per-class", f.eval_per_class,
                                              "ablation eval images per class");
  f.opt["--full-eval"] =
      sub->add_flag("--full-eval", f.full_eval, "evaluate on the whole corpus");
  f.opt["--class"] = sub->add_option("--class", f.class_index, "target class index");
  f.opt["--top-n"] = sub->add_option("--top-n", f.top_n, "units per category");
  f.opt["--explain"] =
      sub->add_flag("--explain", f.chain_explain, "chain explain on selected units");
  f.opt["--seed"] = sub->add_option("--seed", f.seed, "run seed");
  f.opt["--jobs"] = sub->add_option("--jobs", f.jobs, "worker pool size, 0 = auto");
  f.opt["--canonical"] = sub->add_flag("--canonical", f.canonical,
                                       "omit timestamps for byte-stable artifacts");
  f.opt["--llm-mode"] =
      sub->add_option("--llm-mode", f.llm_mode, "fixture | live | record");
  f.opt["--llm-model"] = sub->add_option("--llm-model", f.llm_model, "LLM model id");
}

RunConfig build_config(const Flags& f) {
  RunConfig cfg;
  if (f.opt.at("--config")->count()) cfg = unitscope::load_run_config(f.config);
  auto given = [&](const char* name) { return f.opt.at(name)->count() > 0; };
  if (given("--model-spec")) cfg.model_spec = f.model_spec;
  if (given("--corpus")) cfg.corpus = f.corpus;
  if (given("--vocab")) cfg.vocab = f.vocab;
  if (given("--out")) cfg.out = f.out;
  if (given("--cache")) cfg.cache = f.cache;
  if (given("--fixtures")) cfg.fixtures = f.fixtures;
  if (given("--layer")) cfg.layer = f.layer;
  if (given("--units")) cfg.units = f.units;
  if (given("--k")) cfg.patch.k = f.k;
  if (given("--occluder-size")) cfg.patch.occluder_size = f.occluder_size;
  if (given("--stride")) cfg.patch.stride = f.stride;
  if (given("--percentile")) cfg.patch.percentile = f.percentile;
  if (given("--fill")) cfg.patch.fill = unitscope::parse_occluder_fill(f.fill);
  if (given("--soft-mask")) cfg.patch.soft_mask = f.soft_mask;
  if (given("--crop")) cfg.patch.crop = f.crop;
  if (given("--top-m")) cfg.match.top_m = f.top_m;
  if (given("--text-wrapper")) cfg.match.text_wrapper = f.text_wrapper;
  if (given("--embedder")) cfg.embedder = f.embedder;
  if (given("--embedder-dim")) cfg.embedder_dim = f.embedder_dim;
  if (given("--eval-per-class")) cfg.eval_per_class = f.eval_per_class;
  if (given("--full-eval")) cfg.full_eval = f.full_eval;
  if (given("--class")) cfg.class_index = f.class_index;
  if (given("--top-n")) cfg.top_n = f.top_n;
  if (given("--explain")) cfg.chain_explain = f.chain_explain;
  if (given("--seed")) cfg.seed = f.seed;
  if (given("--jobs")) cfg.jobs = f.jobs;
  if (given("--canonical")) cfg.canonical = f.canonical;
  if (given("--llm-mode")) cfg.llm_mode = f.llm_mode;
  if (given("--llm-model")) cfg.llm_model = f.llm_model;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occlusion-based neuron explanations for vision classifiers"};
  app.require_subcommand(1);

  Flags fv, fe, fa, fc, fr;
  CLI::App* vocab_cmd =
      app.add_subcommand("build-vocab", "build a concept vocabulary from class names");
  add_common(vocab_cmd, fv);
  CLI::App* explain_cmd =
      app.add_subcommand("explain", "extract patches and rank concepts per neuron");
  add_common(explain_cmd, fe);
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "measure per-unit category accuracy drops");
  add_common(ablate_cmd, fa);
  CLI::App* cat_cmd = app.add_subcommand("category-units",
                                         "top classifier-head units for a class");
  add_common(cat_cmd, fc);
  CLI::App* report_cmd =
      app.add_subcommand("report", "regenerate the HTML report from artifacts");
  add_common(report_cmd, fr);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(vocab_cmd)) return unitscope::cmd_build_vocab(build_config(fv));
    if (app.got_subcommand(explain_cmd)) return unitscope::cmd_explain(build_config(fe));
    if (app.got_subcommand(ablate_cmd)) return unitscope::cmd_ablate(build_config(fa));
    if (app.got_subcommand(cat_cmd)) return unitscope::cmd_category_units(build_config(fc));
    if (app.got_subcommand(report_cmd)) return unitscope::cmd_report(build_config(fr));
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const unitscope::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
