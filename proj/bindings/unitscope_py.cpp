#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "unitscope/ablation.hpp"
#include "unitscope/common.hpp"
#include "unitscope/corpus.hpp"
#include "unitscope/matcher.hpp"
#include "unitscope/model.hpp"
#include "unitscope/patches.hpp"
#include "unitscope/pipeline.hpp"
#include "unitscope/testbed.hpp"
#include "unitscope/vocabulary.hpp"

namespace py = pybind11;
using namespace unitscope;

namespace {

Image image_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> arr,
                       const std::string& id) {
  if (arr.ndim() != 3 || arr.shape(2) != 3)
    throw Error("expected an HxWx3 float array");
  Image img(id, (int)arr.shape(0), (int)arr.shape(1), 3);
  std::memcpy(img.pixels.data(), arr.data(), sizeof(float) * img.pixels.size());
  return img;
}

py::array_t<float> image_to_array(const Image& img) {
  py::array_t<float> arr({img.height, img.width, img.channels});
  std::memcpy(arr.mutable_data(), img.pixels.data(), sizeof(float) * img.pixels.size());
  return arr;
}

py::array_t<uint8_t> mask_to_array(const ActivationMask& mask) {
  py::array_t<uint8_t> arr({mask.height, mask.width});
  std::memcpy(arr.mutable_data(), mask.mask.data(), mask.mask.size());
  return arr;
}

py::array_t<float> tensor_to_array(const Tensor& t) {
  py::array_t<float> arr(t.shape);
  std::memcpy(arr.mutable_data(), t.data.data(), sizeof(float) * t.data.size());
  return arr;
}

}  // namespace

PYBIND11_MODULE(_unitscope, m) {
  m.doc() = "occlusion-based neuron explanations: C++ core bindings";
  m.attr("__version__") = kToolVersion;

  py::register_exception<UsageError>(m, "UsageError");
  py::register_exception<Error>(m, "PipelineError");

  py::class_<Image>(m, "Image")
      .def(py::init(&image_from_array), py::arg("pixels"), py::arg("id") = "image")
      .def_readonly("id", &Image::id)
      .def_readonly("height", &Image::height)
      .def_readonly("width", &Image::width)
      .def_property_readonly("pixels", &image_to_array)
      .def("__repr__", [](const Image& im) {
        return "<Image " + im.id + " " + std::to_string(im.height) + "x" +
               std::to_string(im.width) + ">";
      });
  m.def("load_image", &load_image, py::arg("path"), py::arg("id") = "image");
  m.def("save_image_png", &save_image_png, py::arg("image"), py::arg("path"));

  py::class_<NeuronRef>(m, "NeuronRef")
      .def(py::init([](std::string layer, int unit) {
             return NeuronRef{std::move(layer), unit};
           }),
           py::arg("layer"), py::arg("unit"))
      .def_readwrite("layer", &NeuronRef::layer)
      .def_readwrite("unit", &NeuronRef::unit)
      .def("__repr__", [](const NeuronRef& n) {
        return "<NeuronRef " + n.layer + "/" + std::to_string(n.unit) + ">";
      });

  py::class_<AblationToken>(m, "AblationToken")
      .def_readonly("live", &AblationToken::live);

  py::class_<ModelHandle>(m, "Model")
      .def_property_readonly("class_count", &ModelHandle::class_count)
      .def_property_readonly("content_hash", &ModelHandle::content_hash)
      .def_property_readonly("head_feature_layer", &ModelHandle::head_feature_layer)
      .def("layers",
           [](const ModelHandle& mh) {
             std::vector<std::tuple<std::string, std::string, int>> out;
             for (const LayerId& l : mh.layer_catalog())
               out.emplace_back(l.name, to_string(l.kind), l.unit_count);
             return out;
           })
      .def("resolve_layer", &ModelHandle::resolve_layer)
      .def("predict", &ModelHandle::predict)
      .def("neuron_activation",
           [](const ModelHandle& mh, const Image& img, const std::string& layer,
              int unit) {
             const auto rec = mh.neuron_activation(img, {layer, unit});
             return py::make_tuple(rec.scalar, rec.argmax_row, rec.argmax_col);
           })
      .def("feature_map",
           [](const ModelHandle& mh, const Image& img, const std::string& layer) {
             return tensor_to_array(mh.feature_map(img, layer));
           })
      .def("classifier_head_weights", &ModelHandle::classifier_head_weights)
      .def("ablate_unit",
           [](ModelHandle& mh, const std::string& layer, int unit) {
             return mh.ablate_unit({layer, unit});
           })
      .def("restore", &ModelHandle::restore)
      .def("clone", &ModelHandle::clone);
  m.def(
      "load_model",
      [](const std::filesystem::path& spec) {
        return std::make_unique<ModelHandle>(load_model(spec));
      },
      py::arg("model_spec"));

  py::class_<Corpus>(m, "Corpus")
      .def_static("load", &Corpus::load)
      .def("__len__", &Corpus::size)
      .def_property_readonly("class_names", &Corpus::class_names)
      .def_property_readonly("content_hash", &Corpus::content_hash)
      .def("image_at", &Corpus::load_image_at)
      .def("mean_pixel", &Corpus::mean_pixel)
      .def("stratified_sample", &Corpus::stratified_sample, py::arg("n_per_class"),
           py::arg("seed"))
      .def("subset", &Corpus::subset);

  py::class_<PatchParams>(m, "PatchParams")
      .def(py::init([](int k, int occluder_size, int stride, double percentile,
                       const std::string& fill, bool soft_mask, bool crop) {
             PatchParams p;
             p.k = k;
             p.occluder_size = occluder_size;
             p.stride = stride;
             p.percentile = percentile;
             p.fill = parse_occluder_fill(fill);
             p.soft_mask = soft_mask;
             p.crop = crop;
             return p;
           }),
           py::arg("k") = 10, py::arg("occluder_size") = 0, py::arg("stride") = 3,
           py::arg("percentile") = 95.0, py::arg("fill") = "mean-pixel",
           py::arg("soft_mask") = false, py::arg("crop") = false)
      .def_readwrite("k", &PatchParams::k)
      .def_readwrite("occluder_size", &PatchParams::occluder_size)
      .def_readwrite("stride", &PatchParams::stride)
      .def_readwrite("percentile", &PatchParams::percentile);

  py::class_<Patch>(m, "Patch")
      .def_readonly("image_id", &Patch::image_id)
      .def_readonly("activation", &Patch::activation)
      .def_property_readonly("pixels",
                             [](const Patch& p) { return image_to_array(p.pixels); })
      .def_property_readonly("mask", [](const Patch& p) { return mask_to_array(p.mask); });

  py::class_<PatchSet>(m, "PatchSet")
      .def_readonly("neuron", &PatchSet::neuron)
      .def_readonly("model_hash", &PatchSet::model_hash)
      .def_readonly("patches", &PatchSet::patches);

  m.def(
      "extract_patches",
      [](const ModelHandle& mh, const std::string& layer, int unit, const Corpus& corpus,
         const PatchParams& params) {
        return extract_patches(mh, {layer, unit}, corpus, params, nullptr);
      },
      py::arg("model"), py::arg("layer"), py::arg("unit"), py::arg("corpus"),
      py::arg("params") = PatchParams{});
  m.def("save_patchset", &save_patchset);
  m.def("load_patchset", &load_patchset);

  py::class_<Concept>(m, "Concept")
      .def_readonly("text", &Concept::text)
      .def_readonly("source_classes", &Concept::source_classes);
  py::class_<Vocabulary>(m, "Vocabulary")
      .def_readonly("concepts", &Vocabulary::concepts)
      .def_readonly("dataset_tag", &Vocabulary::dataset_tag);
  m.def("load_vocabulary", &load_vocabulary);
  m.def("save_vocabulary", &save_vocabulary);
  m.def("vocabulary_from_json", &vocabulary_from_json);
  m.def("vocabulary_to_json", &vocabulary_to_json);
  m.def("build_prompt", &build_prompt);
  m.def("parse_descriptor_list", &parse_descriptor_list, py::arg("reply"),
        py::arg("max_items") = 20);
  m.def("merge_vocabulary", &merge_vocabulary);

  py::class_<Embedder, std::shared_ptr<Embedder>>(m, "Embedder")
      .def("id", &Embedder::id)
      .def("dim", &Embedder::dim)
      .def("embed_text", &Embedder::embed_text)
      .def("embed_image", &Embedder::embed_image)
      .def("similarity", &Embedder::similarity);
  py::class_<MockEmbedder, Embedder, std::shared_ptr<MockEmbedder>>(m, "MockEmbedder")
      .def(py::init([](const std::vector<std::pair<std::string, std::array<float, 3>>>&
                           table) {
        std::vector<MockEmbedder::Entry> entries;
        for (const auto& [text, color] : table) entries.push_back({text, color});
        return MockEmbedder(std::move(entries));
      }))
      .def_static("for_ground_truth", [](const std::filesystem::path& path) {
        return MockEmbedder::for_ground_truth(load_ground_truth(path));
      });
  py::class_<HttpEmbedder, Embedder, std::shared_ptr<HttpEmbedder>>(m, "HttpEmbedder")
      .def(py::init<std::string, std::string, int, int>(), py::arg("base_url"),
           py::arg("model_id"), py::arg("dim"), py::arg("timeout_seconds") = 60);

  py::class_<Explanation>(m, "Explanation")
      .def_readonly("neuron", &Explanation::neuron)
      .def_readonly("top_m", &Explanation::top_m)
      .def_property_readonly("ranked",
                             [](const Explanation& e) {
                               std::vector<std::pair<std::string, double>> out;
                               for (const auto& cs : e.ranked)
                                 out.emplace_back(cs.item.text, cs.score);
                               return out;
                             })
      .def("top",
           [](const Explanation& e) {
             std::vector<std::pair<std::string, double>> out;
             for (const auto& cs : e.top()) out.emplace_back(cs.item.text, cs.score);
             return out;
           })
      .def("to_json", &explanation_to_json);
  m.def(
      "explain_neuron",
      [](const Embedder& embedder, const PatchSet& patches, const Vocabulary& vocab,
         int top_m, const std::string& wrapper) {
        MatchParams params;
        params.top_m = top_m;
        params.text_wrapper = wrapper;
        return explain_neuron(embedder, patches, vocab, params, nullptr);
      },
      py::arg("embedder"), py::arg("patches"), py::arg("vocabulary"),
      py::arg("top_m") = 5, py::arg("text_wrapper") = "");
  m.def("save_explanation", &save_explanation);
  m.def("load_explanation", &load_explanation);

  m.def(
      "category_accuracy",
      [](const ModelHandle& mh, const Corpus& corpus) {
        const auto acc = category_accuracy(mh, corpus);
        return py::make_tuple(acc.per_class, acc.n_per_class);
      },
      py::arg("model"), py::arg("corpus"));
  m.def(
      "ablation_report_json",
      [](ModelHandle& mh, const std::string& layer, int unit, const Corpus& corpus) {
        return ablation_report_to_json(ablation_report(mh, {layer, unit}, corpus));
      },
      py::arg("model"), py::arg("layer"), py::arg("unit"), py::arg("corpus"));
  m.def(
      "layer_drop_ranking_json",
      [](ModelHandle& mh, const std::string& layer, const Corpus& corpus,
         const std::vector<int>& units) {
        return ranking_to_json(layer_drop_ranking(mh, layer, corpus, units));
      },
      py::arg("model"), py::arg("layer"), py::arg("corpus"),
      py::arg("units") = std::vector<int>{});
  m.def(
      "category_units",
      [](const ModelHandle& mh, int class_index, int top_n) {
        std::vector<std::pair<int, double>> out;
        for (const auto& uw : category_units(mh, class_index, top_n))
          out.emplace_back(uw.unit, uw.weight);
        return out;
      },
      py::arg("model"), py::arg("class_index"), py::arg("top_n"));

  py::class_<PlantedSpec>(m, "PlantedSpec")
      .def_readwrite("image_height", &PlantedSpec::image_height)
      .def_readwrite("image_width", &PlantedSpec::image_width)
      .def_readwrite("trigger_size", &PlantedSpec::trigger_size)
      .def_readwrite("n_units", &PlantedSpec::n_units)
      .def_readwrite("noise_level", &PlantedSpec::noise_level)
      .def_readwrite("seed", &PlantedSpec::seed);
  m.def("default_planted_spec", &default_planted_spec, py::arg("n_classes") = 3,
        py::arg("seed") = 0);
  m.def(
      "write_planted_model",
      [](const PlantedSpec& spec, const std::filesystem::path& dir) {
        return write_planted_model(spec, dir, nullptr);
      },
      py::arg("spec"), py::arg("dir"));
  m.def(
      "write_synthetic_corpus",
      [](const PlantedSpec& spec, int n_per_class, const std::filesystem::path& dir) {
        return write_synthetic_corpus(spec, n_per_class, dir, nullptr);
      },
      py::arg("spec"), py::arg("n_per_class"), py::arg("dir"));
}
