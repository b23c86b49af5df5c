#include "unitscope/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "unitscope/fsio.hpp"

namespace unitscope {

std::string base64_encode(std::string_view bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const uint32_t v = (uint8_t)bytes[i] << 16 | (uint8_t)bytes[i + 1] << 8 |
                       (uint8_t)bytes[i + 2];
    out.push_back(alphabet[v >> 18]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back(alphabet[v & 63]);
    i += 3;
  }
  if (i + 1 == bytes.size()) {
    const uint32_t v = (uint8_t)bytes[i] << 16;
    out.push_back(alphabet[v >> 18]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const uint32_t v = (uint8_t)bytes[i] << 16 | (uint8_t)bytes[i + 1] << 8;
    out.push_back(alphabet[v >> 18]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

namespace {

std::string escape_html(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

std::string svg_sorted_drop_curve(const LayerDropRanking& ranking, int width,
                                  int height) {
  const int ml = 50, mr = 15, mt = 30, mb = 40;
  const int pw = width - ml - mr, ph = height - mt - mb;
  double lo = 0.0, hi = 0.0;
  for (const auto& e : ranking.entries) {
    lo = std::min(lo, e.max_drop);
    hi = std::max(hi, e.max_drop);
  }
  if (hi == lo) hi = lo + 1.0;
  const size_t n = ranking.entries.size();

  auto xi = [&](size_t i) {
    return ml + (n <= 1 ? 0.0 : (double)i / (double)(n - 1) * pw);
  };
  auto yi = [&](double v) { return mt + (hi - v) / (hi - lo) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
      << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << ml << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">"
      << "max category accuracy drop by unit rank — layer "
      << escape_html(ranking.layer.name) << "</text>\n";
  // axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << yi(0.0) << "\" x2=\"" << ml + pw
      << "\" y2=\"" << yi(0.0) << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"8\" y=\"" << yi(hi) + 4
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(hi, 2) << "</text>\n";
  svg << "<text x=\"8\" y=\"" << yi(lo) + 4
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(lo, 2) << "</text>\n";
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">unit "
         "rank (drop-sorted)</text>\n";
  if (!ranking.entries.empty()) {
    svg << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < n; ++i)
      svg << xi(i) << "," << yi(ranking.entries[i].max_drop) << " ";
    svg << "\"/>\n";
    for (size_t i = 0; i < n; ++i)
      svg << "<circle cx=\"" << xi(i) << "\" cy=\"" << yi(ranking.entries[i].max_drop)
          << "\" r=\"2.5\" fill=\"#1f6fb2\"><title>unit " << ranking.entries[i].unit
          << ": " << fmt(ranking.entries[i].max_drop) << "</title></circle>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string svg_drop_bars(const AblationReport& report,
                          const std::vector<std::string>& class_names, int width,
                          int height) {
  const int ml = 45, mr = 10, mt = 30, mb = 55;
  const int pw = width - ml - mr, ph = height - mt - mb;
  const size_t n = report.drops.size();
  double lo = 0.0, hi = 0.0;
  for (double d : report.drops) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  if (hi == lo) hi = lo + 1.0;
  auto y_of = [&](double v) { return mt + (hi - v) / (hi - lo) * ph; };
  const double bw = n == 0 ? 0.0 : (double)pw / (double)n;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
      << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << ml << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">"
      << "per-class accuracy drop — " << escape_html(report.neuron.layer) << "/"
      << report.neuron.unit << "</text>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << y_of(0.0) << "\" x2=\"" << ml + pw
      << "\" y2=\"" << y_of(0.0) << "\" stroke=\"black\"/>\n";
  for (size_t c = 0; c < n; ++c) {
    const double d = report.drops[c];
    const double x = ml + (double)c * bw + bw * 0.15;
    const double y0 = y_of(std::max(0.0, d)), y1 = y_of(std::min(0.0, d));
    svg << "<rect x=\"" << x << "\" y=\"" << y0 << "\" width=\"" << bw * 0.7
        << "\" height=\"" << std::max(0.5, y1 - y0) << "\" fill=\""
        << (d >= 0 ? "#b2451f" : "#1f6fb2") << "\"><title>" << fmt(d)
        << "</title></rect>\n";
    const std::string label =
        c < class_names.size() ? class_names[c] : std::to_string(c);
    svg << "<text x=\"" << x + bw * 0.35 << "\" y=\"" << mt + ph + 14
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\" "
           "transform=\"rotate(-35 "
        << x + bw * 0.35 << " " << mt + ph + 14 << ")\">" << escape_html(label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string render_report_html(const std::string& title,
                               const std::vector<NeuronPanel>& panels,
                               const std::vector<std::string>& inline_svgs) {
  std::ostringstream html;
  html << "<!doctype html>\n<html><head><meta charset=\"utf-8\">\n<title>"
       << escape_html(title) << "</title>\n<style>\n"
       << "body{font-family:sans-serif;margin:24px;background:#fafafa;}\n"
       << "h1{font-size:20px;}\n"
       << ".panel{background:white;border:1px solid #ddd;border-radius:6px;"
          "padding:12px;margin:12px 0;}\n"
       << ".patches img{width:96px;height:96px;image-rendering:pixelated;"
          "margin-right:6px;border:1px solid #ccc;}\n"
       << ".concepts li{margin:2px 0;}\n"
       << ".score{color:#666;font-size:12px;}\n"
       << ".drop{color:#b2451f;font-size:13px;}\n"
       << "</style></head><body>\n<h1>" << escape_html(title) << "</h1>\n";
  for (const std::string& svg : inline_svgs) html << "<div class=\"panel\">" << svg
                                                  << "</div>\n";
  for (const NeuronPanel& p : panels) {
    html << "<div class=\"panel\"><h2>" << escape_html(p.neuron.layer) << " / unit "
         << p.neuron.unit << "</h2>\n";
    if (p.max_drop) {
      html << "<div class=\"drop\">max accuracy drop " << fmt(*p.max_drop);
      if (p.max_drop_class) html << " on class " << escape_html(*p.max_drop_class);
      html << "</div>\n";
    }
    html << "<div class=\"patches\">";
    for (const auto& img_path : p.patch_images) {
      std::string bytes;
      try {
        bytes = read_file(img_path);
      } catch (const std::exception&) {
        continue;  // dropped render is cosmetic, keep the report going
      }
      html << "<img src=\"data:image/png;base64," << base64_encode(bytes)
           << "\" alt=\"patch\">";
    }
    html << "</div>\n<ol class=\"concepts\">";
    for (const auto& [text, score] : p.concepts)
      html << "<li>" << escape_html(text) << " <span class=\"score\">(" << fmt(score)
           << ")</span></li>";
    html << "</ol></div>\n";
  }
  html << "</body></html>\n";
  return html.str();
}

}  // namespace unitscope
