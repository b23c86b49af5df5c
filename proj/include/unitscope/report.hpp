#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unitscope/ablation.hpp"
#include "unitscope/matcher.hpp"

namespace unitscope {

std::string base64_encode(std::string_view bytes);

// Sorted max-drop-per-unit curve over a layer.
std::string svg_sorted_drop_curve(const LayerDropRanking& ranking, int width = 640,
                                  int height = 360);

// Per-class accuracy-drop bars for one ablated unit.
std::string svg_drop_bars(const AblationReport& report,
                          const std::vector<std::string>& class_names, int width = 480,
                          int height = 280);

// One neuron's card in the HTML report: patch renders plus ranked concepts,
// optionally annotated with its ablation drop.
struct NeuronPanel {
  NeuronRef neuron;
  std::vector<std::filesystem::path> patch_images;
  std::vector<std::pair<std::string, double>> concepts;
  std::optional<double> max_drop;
  std::optional<std::string> max_drop_class;
};

std::string render_report_html(const std::string& title,
                               const std::vector<NeuronPanel>& panels,
                               const std::vector<std::string>& inline_svgs = {});

}  // namespace unitscope
