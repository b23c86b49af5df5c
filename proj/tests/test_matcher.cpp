#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "unitscope/common.hpp"
#include "unitscope/matcher.hpp"
#include "unitscope/testbed.hpp"

using namespace unitscope;
using testutil::TempDir;

namespace {

MockEmbedder palette_embedder() {
  return MockEmbedder({{"red square", {1.0f, 0.0f, 0.0f}},
                       {"green square", {0.0f, 1.0f, 0.0f}},
                       {"blue square", {0.0f, 0.0f, 1.0f}}});
}

Image solid(const std::string& id, std::array<float, 3> color, int side = 6) {
  Image img(id, side, side, 3);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[static_cast<size_t>(ch)];
  return img;
}

PatchSet patchset_of(std::vector<Image> images) {
  PatchSet set;
  set.neuron = {"conv1", 0};
  set.model_hash = "testhash";
  for (auto& img : images) {
    Patch p;
    p.image_id = img.id;
    p.activation = 1.0;
    p.pixels = std::move(img);
    set.patches.push_back(std::move(p));
  }
  return set;
}

// Affine wrapper: phi' = a*phi + b via augmented embedding coordinates.
// Image vectors gain (b, 0); text vectors gain (1, 0); image base scaled by a.
class AffineEmbedder : public Embedder {
 public:
  AffineEmbedder(const Embedder& base, double a, double b) : base_(base), a_(a), b_(b) {}
  std::string id() const override { return base_.id() + "-affine"; }
  int dim() const override { return base_.dim() + 1; }
  std::vector<double> embed_text(const std::string& text) const override {
    auto v = base_.embed_text(text);
    v.push_back(1.0);
    return v;
  }
  std::vector<double> embed_image(const Image& patch) const override {
    auto v = base_.embed_image(patch);
    for (double& x : v) x *= a_;
    v.push_back(b_);
    return v;
  }

 private:
  const Embedder& base_;
  double a_, b_;
};

}  // namespace

TEST_SUITE("concept_matcher") {

TEST_CASE("embeddings are unit-norm, deterministic, and guard bad input") {
  const MockEmbedder emb = palette_embedder();

  const auto t1 = emb.embed_text("red square");
  const auto t2 = emb.embed_text("red square");
  CHECK(t1 == t2);
  CHECK(std::abs(std::sqrt(dot(t1, t1)) - 1.0) < 1e-6);

  const Image red = solid("red", {1, 0, 0});
  const auto i1 = emb.embed_image(red);
  const auto i2 = emb.embed_image(red);
  CHECK(i1 == i2);
  CHECK(std::abs(std::sqrt(dot(i1, i1)) - 1.0) < 1e-6);

  CHECK_THROWS_AS((void)emb.embed_text(""), Error);
  Image nan_img = red;
  nan_img.pixels[0] = std::nanf("");
  CHECK_THROWS_AS((void)emb.embed_image(nan_img), Error);

  // unknown text gets the orthogonal slot, not an exception
  const auto unknown = emb.embed_text("volcanic plume");
  CHECK(dot(unknown, i1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("red patch prefers the red concept; gray patch is indifferent") {
  const MockEmbedder emb = palette_embedder();
  const Image red = solid("red", {1, 0, 0});
  const double s_red = emb.similarity(red, "red square");
  const double s_green = emb.similarity(red, "green square");
  const double s_blue = emb.similarity(red, "blue square");
  CHECK(s_red > s_green);
  CHECK(s_red > s_blue);

  const Image gray = solid("gray", {0.5f, 0.5f, 0.5f});
  for (const char* text : {"red square", "green square", "blue square"})
    CHECK(std::abs(emb.similarity(gray, text)) < 1e-9);
}

TEST_CASE("dot rejects dimension mismatches") {
  CHECK(dot({1.0, 2.0}, {3.0, 4.0}) == 11.0);
  CHECK_THROWS_AS((void)dot({1.0}, {1.0, 2.0}), Error);

  std::vector<double> zero{0.0, 0.0};
  normalize_in_place(zero);
  CHECK(zero == std::vector<double>{0.0, 0.0});
}

TEST_CASE("wrap_text substitutes or prefixes") {
  CHECK(wrap_text("", "red square") == "red square");
  CHECK(wrap_text("a photo of {}", "red square") == "a photo of red square");
  CHECK(wrap_text("a photo of", "red square") == "a photo of red square");
  CHECK(wrap_text("{} on canvas", "red square") == "red square on canvas");
}

TEST_CASE("score_concept is the mean of per-patch similarities") {
  const MockEmbedder emb = palette_embedder();

  const PatchSet one = patchset_of({solid("r", {1, 0, 0})});
  const ConceptScore single = score_concept(emb, one, {"red square", {"c"}});
  REQUIRE(single.per_patch_scores.size() == 1);
  CHECK(single.score == single.per_patch_scores[0]);
  CHECK(single.score == doctest::Approx(emb.similarity(one.patches[0].pixels, "red square"))
                            .epsilon(1e-12));

  // hand-made per-patch scores {0.2, 0.4, 0.6} -> mean 0.4, via a stub embedder
  struct Stub : Embedder {
    std::string id() const override { return "stub"; }
    int dim() const override { return 1; }
    std::vector<double> embed_text(const std::string&) const override { return {1.0}; }
    std::vector<double> embed_image(const Image& img) const override {
      return {img.pixels[0]};
    }
  } stub;
  Image a("a", 1, 1, 3), b("b", 1, 1, 3), c("c", 1, 1, 3);
  a.pixels = {0.2f, 0, 0};
  b.pixels = {0.4f, 0, 0};
  c.pixels = {0.6f, 0, 0};
  const PatchSet three = patchset_of({a, b, c});
  const ConceptScore mean = score_concept(stub, three, {"anything", {"c"}});
  CHECK(mean.score == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(mean.per_patch_scores.size() == 3);

  const PatchSet empty = patchset_of({});
  CHECK_THROWS_AS((void)score_concept(emb, empty, {"red square", {"c"}}), Error);
}

TEST_CASE("score equals a brute-force mean over random patches") {
  const MockEmbedder emb = palette_embedder();
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Image> imgs;
    const int n = 1 + static_cast<int>(rng() % 7);
    for (int i = 0; i < n; ++i)
      imgs.push_back(testutil::random_image(rng, "p" + std::to_string(i), 5, 5));
    const PatchSet set = patchset_of(imgs);
    const Concept concept_item{"green square", {"c"}};
    const ConceptScore got = score_concept(emb, set, concept_item);

    double acc = 0.0;
    for (const auto& p : set.patches) acc += emb.similarity(p.pixels, "green square");
    CHECK(got.score == doctest::Approx(acc / n).epsilon(1e-9));
    CHECK(*std::min_element(got.per_patch_scores.begin(), got.per_patch_scores.end()) <=
          got.score);
    CHECK(*std::max_element(got.per_patch_scores.begin(), got.per_patch_scores.end()) >=
          got.score);
  }
}

TEST_CASE("explain_neuron ranks everything with deterministic tie-breaks") {
  const MockEmbedder emb = palette_embedder();
  const PatchSet set = patchset_of({solid("r", {1, 0, 0})});
  const Vocabulary vocab = merge_vocabulary(
      {{"scene", {"red square", "green square", "blue square", "zebra stripes", "mist"}}});

  MatchParams params;
  params.top_m = 2;
  const Explanation exp = explain_neuron(emb, set, vocab, params);
  CHECK(exp.ranked.size() == vocab.concepts.size());  // exhaustive scoring
  CHECK(exp.top().size() == 2);
  CHECK(exp.ranked[0].item.text == "red square");
  CHECK(exp.embedder_id == emb.id());
  CHECK(exp.vocabulary_hash == vocabulary_hash(vocab));
  for (size_t i = 1; i < exp.ranked.size(); ++i)
    CHECK(exp.ranked[i - 1].score >= exp.ranked[i].score);

  // unknown concepts score 0 and tie; ties order by normalized key
  std::vector<std::string> zeros;
  for (const auto& cs : exp.ranked)
    if (cs.score == doctest::Approx(0.0).epsilon(1e-12)) zeros.push_back(concept_key(cs.item.text));
  CHECK(std::is_sorted(zeros.begin(), zeros.end()));

  CHECK_THROWS_AS((void)explain_neuron(emb, set, Vocabulary{}, params), Error);
  MatchParams zero_m;
  zero_m.top_m = 0;
  CHECK_THROWS_AS((void)explain_neuron(emb, set, vocab, zero_m), Error);
}

TEST_CASE("patch order never affects scores or ranking") {
  const MockEmbedder emb = palette_embedder();
  std::mt19937_64 rng(77);
  std::vector<Image> imgs;
  for (int i = 0; i < 6; ++i)
    imgs.push_back(testutil::random_image(rng, "p" + std::to_string(i), 4, 4));
  const Vocabulary vocab =
      merge_vocabulary({{"scene", {"red square", "green square", "blue square"}}});

  const PatchSet fwd = patchset_of(imgs);
  std::reverse(imgs.begin(), imgs.end());
  const PatchSet rev = patchset_of(imgs);

  const Explanation e1 = explain_neuron(emb, fwd, vocab);
  const Explanation e2 = explain_neuron(emb, rev, vocab);
  REQUIRE(e1.ranked.size() == e2.ranked.size());
  for (size_t i = 0; i < e1.ranked.size(); ++i) {
    CHECK(e1.ranked[i].item.text == e2.ranked[i].item.text);
    CHECK(e1.ranked[i].score == doctest::Approx(e2.ranked[i].score).epsilon(1e-12));
  }
}

TEST_CASE("uniform affine transforms of phi preserve the ranking") {
  const MockEmbedder base = palette_embedder();
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> ua(0.1, 3.0);
  std::uniform_real_distribution<double> ub(-0.5, 0.5);
  const Vocabulary vocab = merge_vocabulary(
      {{"scene", {"red square", "green square", "blue square", "fog bank"}}});

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Image> imgs;
    for (int i = 0; i < 4; ++i)
      imgs.push_back(testutil::random_image(rng, "p" + std::to_string(i), 4, 4));
    const PatchSet set = patchset_of(imgs);

    const double a = ua(rng), b = ub(rng);
    const AffineEmbedder affine(base, a, b);
    const Explanation plain = explain_neuron(base, set, vocab);
    const Explanation mapped = explain_neuron(affine, set, vocab);

    REQUIRE(plain.ranked.size() == mapped.ranked.size());
    for (size_t i = 0; i < plain.ranked.size(); ++i) {
      CHECK(plain.ranked[i].item.text == mapped.ranked[i].item.text);
      CHECK(mapped.ranked[i].score ==
            doctest::Approx(a * plain.ranked[i].score + b).epsilon(1e-9));
    }
  }
}

TEST_CASE("text embedding cache hands back identical vectors") {
  const MockEmbedder emb = palette_embedder();
  TextEmbeddingCache cache;
  const auto v1 = cache.get_or_compute(emb, "red square");
  const auto v2 = cache.get_or_compute(emb, "red square");
  CHECK(v1 == v2);
  CHECK(v1 == emb.embed_text("red square"));
}

TEST_CASE("explanations round-trip through JSON") {
  TempDir dir("matcher_io");
  const MockEmbedder emb = palette_embedder();
  const PatchSet set = patchset_of({solid("r", {1, 0, 0}), solid("g", {0, 1, 0})});
  const Vocabulary vocab =
      merge_vocabulary({{"scene", {"red square", "green square"}}});
  MatchParams params;
  params.top_m = 1;
  params.text_wrapper = "a photo of {}";
  Explanation exp = explain_neuron(emb, set, vocab, params);

  const std::string text = explanation_to_json(exp);
  const Explanation back = explanation_from_json(text);
  CHECK(back.neuron == exp.neuron);
  CHECK(back.model_hash == exp.model_hash);
  CHECK(back.vocabulary_hash == exp.vocabulary_hash);
  CHECK(back.embedder_id == exp.embedder_id);
  CHECK(back.top_m == exp.top_m);
  CHECK(back.params.text_wrapper == exp.params.text_wrapper);
  REQUIRE(back.ranked.size() == exp.ranked.size());
  for (size_t i = 0; i < exp.ranked.size(); ++i) {
    CHECK(back.ranked[i].item.text == exp.ranked[i].item.text);
    CHECK(back.ranked[i].item.source_classes == exp.ranked[i].item.source_classes);
    CHECK(back.ranked[i].score == exp.ranked[i].score);
    CHECK(back.ranked[i].per_patch_scores == exp.ranked[i].per_patch_scores);
  }

  const auto path = explanation_path(dir.path, exp.model_hash, exp.neuron);
  save_explanation(exp, path);
  const Explanation loaded = load_explanation(path);
  CHECK(loaded.ranked.size() == exp.ranked.size());
  CHECK(path.string().find("explanations") != std::string::npos);
}

}  // TEST_SUITE
