#include <algorithm>
#include <atomic>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "unitscope/ablation.hpp"
#include "unitscope/common.hpp"
#include "unitscope/fsio.hpp"
#include "unitscope/matcher.hpp"
#include "unitscope/pipeline.hpp"
#include "unitscope/testbed.hpp"
#include "unitscope/vocabulary.hpp"

using namespace unitscope;
using doctest::Contains;

namespace {

// Planted model + corpus + fixtures wired into one scratch tree, mirroring
// what a user would point the CLI at.
struct PipelineFixture {
  testutil::TempDir dir;
  PlantedSpec spec;
  GroundTruth gt;
  std::filesystem::path model_spec;
  std::filesystem::path manifest;

  explicit PipelineFixture(uint64_t seed = 5, double noise = 0.1, int per_class = 4)
      : dir("pipe"),
        spec([&] {
          PlantedSpec s = default_planted_spec(3, seed);
          s.noise_level = noise;
          return s;
        }()),
        model_spec(write_planted_model(spec, dir / "model", &gt)),
        manifest(write_synthetic_corpus(spec, per_class, dir / "corpus", &gt)) {}

  RunConfig base_config(const std::string& out_tag) const {
    RunConfig cfg;
    cfg.model_spec = model_spec;
    cfg.corpus = manifest;
    cfg.out = dir / out_tag;
    cfg.patch.k = 3;
    cfg.patch.occluder_size = 3;
    cfg.patch.stride = 1;
    cfg.patch.percentile = 94.0;
    cfg.jobs = 1;
    return cfg;
  }

  std::filesystem::path write_fixtures() const {
    const auto fix = dir / "fixtures";
    ensure_dir(fix);
    write_file_atomic(fix / "red.txt", "- red square\n- crimson patch\n");
    write_file_atomic(fix / "green.txt", "- green square\n- mossy tile\n");
    write_file_atomic(fix / "blue.txt", "- blue square\n");
    write_file_atomic(fix / "background.txt", "- gray noise\n- red square\n");
    return fix;
  }

  std::filesystem::path write_vocab() const {
    std::vector<std::pair<std::string, std::vector<std::string>>> per_class;
    per_class.emplace_back("red", std::vector<std::string>{"red square", "warm hue"});
    per_class.emplace_back("green", std::vector<std::string>{"green square"});
    per_class.emplace_back("blue", std::vector<std::string>{"blue square"});
    per_class.emplace_back("background",
                           std::vector<std::string>{"gray noise", "film grain"});
    const auto path = dir / "vocab.json";
    save_vocabulary(merge_vocabulary(per_class), path);
    return path;
  }
};

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config json round trip") {
    RunConfig cfg;
    cfg.model_spec = "m/spec.json";
    cfg.corpus = "c/manifest.jsonl";
    cfg.vocab = "v.json";
    cfg.out = "results";
    cfg.cache = "cachedir";
    cfg.fixtures = "fix";
    cfg.layer = "conv*";
    cfg.units = {3, 1, 4};
    cfg.patch.k = 7;
    cfg.patch.occluder_size = 5;
    cfg.patch.stride = 2;
    cfg.patch.percentile = 90.0;
    cfg.patch.fill = OccluderFill::Zero;
    cfg.patch.soft_mask = true;
    cfg.patch.crop = true;
    cfg.match.top_m = 9;
    cfg.match.text_wrapper = "a photo of {}";
    cfg.embedder = "http://localhost:1/v1";
    cfg.embedder_dim = 64;
    cfg.eval_per_class = 17;
    cfg.full_eval = true;
    cfg.class_index = 2;
    cfg.top_n = 6;
    cfg.chain_explain = true;
    cfg.seed = 99;
    cfg.jobs = 3;
    cfg.canonical = true;
    cfg.llm_mode = "record";
    cfg.llm_model = "test-model";

    const RunConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.model_spec == cfg.model_spec);
    CHECK(back.corpus == cfg.corpus);
    CHECK(back.vocab == cfg.vocab);
    CHECK(back.out == cfg.out);
    CHECK(back.cache == cfg.cache);
    CHECK(back.fixtures == cfg.fixtures);
    CHECK(back.layer == cfg.layer);
    CHECK(back.units == cfg.units);
    CHECK(back.patch.k == cfg.patch.k);
    CHECK(back.patch.occluder_size == cfg.patch.occluder_size);
    CHECK(back.patch.stride == cfg.patch.stride);
    CHECK(back.patch.percentile == cfg.patch.percentile);
    CHECK(back.patch.fill == cfg.patch.fill);
    CHECK(back.patch.soft_mask == cfg.patch.soft_mask);
    CHECK(back.patch.crop == cfg.patch.crop);
    CHECK(back.match.top_m == cfg.match.top_m);
    CHECK(back.match.text_wrapper == cfg.match.text_wrapper);
    CHECK(back.embedder == cfg.embedder);
    CHECK(back.embedder_dim == cfg.embedder_dim);
    CHECK(back.eval_per_class == cfg.eval_per_class);
    CHECK(back.full_eval == cfg.full_eval);
    CHECK(back.class_index == cfg.class_index);
    CHECK(back.top_n == cfg.top_n);
    CHECK(back.chain_explain == cfg.chain_explain);
    CHECK(back.seed == cfg.seed);
    CHECK(back.jobs == cfg.jobs);
    CHECK(back.canonical == cfg.canonical);
    CHECK(back.llm_mode == cfg.llm_mode);
    CHECK(back.llm_model == cfg.llm_model);
  }

  TEST_CASE("config rejects unknown keys and bad json") {
    CHECK_THROWS_WITH_AS(config_from_json(R"({"bogus": 1})"),
                         Contains("unknown config key: bogus"), UsageError);
    CHECK_THROWS_WITH_AS(config_from_json("not json"), Contains("invalid config JSON"),
                         UsageError);
    CHECK_THROWS_WITH_AS(load_run_config("/definitely/missing/cfg.json"),
                         Contains("cannot read config"), UsageError);
  }

  TEST_CASE("build-vocab merges fixture replies") {
    PipelineFixture fx(11, 0.0, 2);
    RunConfig cfg = fx.base_config("out_vocab");
    cfg.fixtures = fx.write_fixtures();
    cfg.llm_mode = "fixture";

    CHECK(cmd_build_vocab(cfg) == 0);
    const auto vocab_path = cfg.out / "vocabulary.json";
    REQUIRE(std::filesystem::exists(vocab_path));
    const Vocabulary vocab = load_vocabulary(vocab_path);

    // Independent oracle: fixture texts dedup by concept key.
    std::set<std::string> keys;
    for (const std::string& t :
         {"red square", "crimson patch", "green square", "mossy tile", "blue square",
          "gray noise", "red square"})
      keys.insert(concept_key(t));
    CHECK(vocab.concepts.size() == keys.size());

    bool found_shared = false;
    for (const Concept& c : vocab.concepts)
      if (c.text == "red square") {
        found_shared = true;
        const std::set<std::string> sources(c.source_classes.begin(),
                                            c.source_classes.end());
        CHECK(sources == std::set<std::string>{"background", "red"});
      }
    CHECK(found_shared);
    CHECK(vocab.provenance.llm_model_id == "fixture");
    CHECK(vocab.provenance.created_at.empty());
    CHECK(vocab.provenance.prompt_template == build_prompt("<class name>"));

    SUBCASE("rerun is byte identical") {
      const std::string first = read_file(vocab_path);
      CHECK(cmd_build_vocab(cfg) == 0);
      CHECK(read_file(vocab_path) == first);
    }

    SUBCASE("run record is written") {
      const auto rec = nlohmann::ordered_json::parse(read_file(cfg.out / "run_record.json"));
      CHECK(rec.at("command") == "build-vocab");
      CHECK(rec.at("status") == "ok");
      CHECK(rec.at("failures").empty());
      CHECK(rec.at("artifact_hashes").contains("vocabulary"));
      CHECK(rec.at("config").at("llm_mode") == "fixture");
    }

    SUBCASE("explicit vocab path wins over out dir") {
      cfg.vocab = fx.dir / "elsewhere.json";
      CHECK(cmd_build_vocab(cfg) == 0);
      CHECK(std::filesystem::exists(cfg.vocab));
    }

    SUBCASE("missing fixture names the class") {
      std::filesystem::remove(cfg.fixtures / "blue.txt");
      CHECK_THROWS_WITH_AS(cmd_build_vocab(cfg), Contains("blue"), UsageError);
    }
  }

  TEST_CASE("build-vocab argument validation") {
    PipelineFixture fx(12, 0.0, 2);
    RunConfig cfg = fx.base_config("out_vocab_bad");
    cfg.fixtures = fx.write_fixtures();
    SUBCASE("requires corpus") {
      cfg.corpus.clear();
      CHECK_THROWS_WITH_AS(cmd_build_vocab(cfg), Contains("--corpus"), UsageError);
    }
    SUBCASE("unknown llm mode") {
      cfg.llm_mode = "telepathy";
      CHECK_THROWS_WITH_AS(cmd_build_vocab(cfg), Contains("unknown llm mode"),
                           UsageError);
    }
  }

  TEST_CASE("explain writes per-neuron artifacts with planted top concepts") {
    PipelineFixture fx(5, 0.1, 4);
    RunConfig cfg = fx.base_config("out_explain");
    cfg.vocab = fx.write_vocab();
    cfg.embedder = "mock";
    cfg.units = {0, 1, 2};
    cfg.cache = fx.dir / "cache";

    REQUIRE(cmd_explain(cfg) == 0);
    const ModelHandle model = load_model(fx.model_spec);
    const std::string layer = model.resolve_layer("last");
    const std::string mh = model.content_hash();

    std::vector<std::string> first_bytes;
    for (int u : cfg.units) {
      const auto path = explanation_path(cfg.out, mh, {layer, u});
      REQUIRE(std::filesystem::exists(path));
      const Explanation exp = load_explanation(path);
      CHECK(exp.ranked.front().item.text == fx.gt.units[u].concept_text);
      CHECK(exp.neuron.unit == u);
      CHECK(exp.embedder_id == "mock-color-embedder");
      first_bytes.push_back(read_file(path));
      const auto pdir = patchset_dir(cfg.out, mh, {layer, u});
      CHECK(std::filesystem::exists(pdir / "meta.json"));
    }
    CHECK(std::filesystem::exists(cfg.out / "report_explain.html"));
    CHECK(std::filesystem::exists(cfg.out / "run_record.json"));

    SUBCASE("warm-cache rerun reproduces explanations byte for byte") {
      REQUIRE(cmd_explain(cfg) == 0);
      for (size_t i = 0; i < cfg.units.size(); ++i) {
        const auto path = explanation_path(cfg.out, mh, {layer, cfg.units[i]});
        CHECK(read_file(path) == first_bytes[i]);
      }
    }

    SUBCASE("glob with no matches is a usage error") {
      cfg.layer = "zzz*";
      CHECK_THROWS_WITH_AS(cmd_explain(cfg), Contains("no neurons selected"),
                           UsageError);
    }

    SUBCASE("glob selects catalog layers") {
      cfg.layer = "conv*";
      cfg.units = {0};
      CHECK(cmd_explain(cfg) == 0);
    }

    SUBCASE("unit out of range") {
      cfg.units = {99};
      CHECK_THROWS_WITH_AS(cmd_explain(cfg), Contains("out of range"), UsageError);
    }

    SUBCASE("missing inputs") {
      RunConfig bare = cfg;
      bare.vocab.clear();
      CHECK_THROWS_WITH_AS(cmd_explain(bare), Contains("--vocab"), UsageError);
      bare = cfg;
      bare.model_spec.clear();
      CHECK_THROWS_WITH_AS(cmd_explain(bare), Contains("--model-spec"), UsageError);
    }
  }

  TEST_CASE("ablate ranks planted units and matches the library report") {
    PipelineFixture fx(7, 0.0, 4);
    RunConfig cfg = fx.base_config("out_ablate");
    cfg.full_eval = true;

    REQUIRE(cmd_ablate(cfg) == 0);
    ModelHandle model = load_model(fx.model_spec);
    const std::string layer = model.resolve_layer("last");
    const std::string mh = model.content_hash();
    const auto report_dir = cfg.out / "ablation" / mh / slugify(layer);

    const LayerDropRanking ranking =
        ranking_from_json(read_file(report_dir / "ranking.json"));
    REQUIRE((int)ranking.entries.size() == model.layer(layer).unit_count);
    std::set<int> top3{ranking.entries[0].unit, ranking.entries[1].unit,
                       ranking.entries[2].unit};
    CHECK(top3 == std::set<int>{0, 1, 2});
    for (size_t i = 1; i < ranking.entries.size(); ++i)
      CHECK(ranking.entries[i - 1].max_drop >= ranking.entries[i].max_drop);

    const std::string csv = read_file(report_dir / "ranking.csv");
    const size_t rows = std::count(csv.begin(), csv.end(), '\n');
    CHECK(rows == ranking.entries.size() + 1);
    CHECK(std::filesystem::exists(report_dir / "ranking.svg"));
    CHECK(std::filesystem::exists(cfg.out / "report_ablate.html"));

    SUBCASE("per-unit report equals a direct library call") {
      const Corpus full = Corpus::load(fx.manifest);
      std::vector<size_t> all(full.size());
      for (size_t i = 0; i < all.size(); ++i) all[i] = i;
      const Corpus eval = full.subset(all);
      const CategoryAccuracy baseline = category_accuracy(model, eval);
      const AblationReport direct =
          ablation_report(model, {layer, 0}, eval, baseline);
      const AblationReport from_cli =
          load_ablation_report(report_dir / "0.json");
      CHECK(from_cli.max_drop == direct.max_drop);
      CHECK(from_cli.max_drop_class == direct.max_drop_class);
      REQUIRE(from_cli.drops.size() == direct.drops.size());
      for (size_t c = 0; c < direct.drops.size(); ++c)
        CHECK(from_cli.drops[c] == direct.drops[c]);
    }

    SUBCASE("restricting units restricts the ranking") {
      RunConfig narrow = fx.base_config("out_ablate_narrow");
      narrow.full_eval = true;
      narrow.units = {2};
      REQUIRE(cmd_ablate(narrow) == 0);
      const auto nr = ranking_from_json(
          read_file(narrow.out / "ablation" / mh / slugify(layer) / "ranking.json"));
      REQUIRE(nr.entries.size() == 1);
      CHECK(nr.entries[0].unit == 2);
      CHECK(nr.entries[0].max_drop ==
            ranking.entries[std::distance(
                                ranking.entries.begin(),
                                std::find_if(ranking.entries.begin(),
                                             ranking.entries.end(),
                                             [](const DropEntry& e) {
                                               return e.unit == 2;
                                             }))]
                .max_drop);
    }

    SUBCASE("unit out of range") {
      cfg.units = {42};
      CHECK_THROWS_WITH_AS(cmd_ablate(cfg), Contains("out of range"), UsageError);
    }
  }

  TEST_CASE("category-units writes the head ranking and chains explain") {
    PipelineFixture fx(9, 0.1, 4);
    RunConfig cfg = fx.base_config("out_cat");
    cfg.class_index = 0;
    cfg.top_n = 2;

    REQUIRE(cmd_category_units(cfg) == 0);
    const auto j =
        nlohmann::ordered_json::parse(read_file(cfg.out / "category_units.json"));
    CHECK(j.at("class") == 0);
    CHECK(j.at("class_name") == "red");
    REQUIRE(j.at("units").size() == 2);
    CHECK(j.at("units")[0].at("unit") == 0);
    CHECK(j.at("units")[0].at("weight").get<double>() == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(j.at("units")[1].at("unit") == 1);
    CHECK(j.at("units")[1].at("weight").get<double>() == doctest::Approx(0.1).epsilon(1e-6));

    SUBCASE("top-n clamps to layer width") {
      cfg.top_n = 99;
      REQUIRE(cmd_category_units(cfg) == 0);
      const auto wide =
          nlohmann::ordered_json::parse(read_file(cfg.out / "category_units.json"));
      const ModelHandle model = load_model(fx.model_spec);
      CHECK((int)wide.at("units").size() ==
            model.layer(model.head_feature_layer()).unit_count);
    }

    SUBCASE("class out of range") {
      cfg.class_index = 99;
      CHECK_THROWS_WITH_AS(cmd_category_units(cfg), Contains("out of range"),
                           UsageError);
    }

    SUBCASE("requires a class") {
      cfg.class_index = -1;
      CHECK_THROWS_WITH_AS(cmd_category_units(cfg), Contains("--class"), UsageError);
    }

    SUBCASE("chained explain covers the selected units") {
      cfg.chain_explain = true;
      cfg.vocab = fx.write_vocab();
      cfg.embedder = "mock";
      REQUIRE(cmd_category_units(cfg) == 0);
      const ModelHandle model = load_model(fx.model_spec);
      const std::string mh = model.content_hash();
      const std::string layer = model.head_feature_layer();
      for (int u : {0, 1}) {
        const Explanation exp =
            load_explanation(explanation_path(cfg.out, mh, {layer, u}));
        CHECK(exp.ranked.front().item.text == fx.gt.units[u].concept_text);
      }
    }
  }

  TEST_CASE("report aggregates artifacts and fails on an empty out dir") {
    PipelineFixture fx(13, 0.1, 4);
    RunConfig cfg = fx.base_config("out_report");
    cfg.vocab = fx.write_vocab();
    cfg.embedder = "mock";
    cfg.units = {0};
    REQUIRE(cmd_explain(cfg) == 0);
    RunConfig abl = cfg;
    abl.full_eval = true;
    abl.units = {0, 1};
    REQUIRE(cmd_ablate(abl) == 0);

    REQUIRE(cmd_report(cfg) == 0);
    const std::string html = read_file(cfg.out / "index.html");
    CHECK(html.find("red square") != std::string::npos);

    RunConfig empty = fx.base_config("out_report_empty");
    CHECK_THROWS_WITH_AS(cmd_report(empty), Contains("no explanation or ablation"),
                         UsageError);
  }

  TEST_CASE("canonical mode makes run records reproducible") {
    PipelineFixture fx(21, 0.0, 2);
    RunConfig cfg = fx.base_config("out_canon_a");
    cfg.fixtures = fx.write_fixtures();
    cfg.canonical = true;
    REQUIRE(cmd_build_vocab(cfg) == 0);
    const std::string rec_a = read_file(cfg.out / "run_record.json");
    const std::string vocab_a = read_file(cfg.out / "vocabulary.json");

    RunConfig cfg_b = cfg;
    cfg_b.out = fx.dir / "out_canon_b";
    REQUIRE(cmd_build_vocab(cfg_b) == 0);
    const std::string rec_b = read_file(cfg_b.out / "run_record.json");
    CHECK(vocab_a == read_file(cfg_b.out / "vocabulary.json"));
    // Only the out path differs between the two configs.
    auto ja = nlohmann::ordered_json::parse(rec_a);
    auto jb = nlohmann::ordered_json::parse(rec_b);
    ja["config"].erase("out");
    jb["config"].erase("out");
    CHECK(ja == jb);
    CHECK(!ja.contains("timings"));
    CHECK(!ja.contains("created_at"));
  }

  TEST_CASE("make_embedder resolves targets") {
    PipelineFixture fx(23, 0.0, 2);
    RunConfig cfg = fx.base_config("out_embed");
    SUBCASE("mock needs the ground truth beside the corpus") {
      auto e = make_embedder(cfg);
      CHECK(e->id() == "mock-color-embedder");
      cfg.corpus = fx.dir / "nowhere" / "manifest.jsonl";
      CHECK_THROWS_WITH_AS(make_embedder(cfg), Contains("ground_truth.json"),
                           UsageError);
    }
    SUBCASE("unknown target") {
      cfg.embedder = "quantum";
      CHECK_THROWS_WITH_AS(make_embedder(cfg), Contains("unknown embedder"),
                           UsageError);
    }
    SUBCASE("http target builds without contacting the service") {
      cfg.embedder = "http://127.0.0.1:9/v1";
      auto e = make_embedder(cfg);
      CHECK(e->dim() == cfg.embedder_dim);
    }
  }

  TEST_CASE("parallel_for covers every index exactly once") {
    std::vector<std::atomic<int>> hits(64);
    for (auto& h : hits) h = 0;
    parallel_for(hits.size(), 4, [&](size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    parallel_for(0, 4, [&](size_t) { REQUIRE(false); });
  }
}
