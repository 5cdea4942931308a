#include <algorithm>
#include <cstdio>

#include "knobs/harness.hpp"
#include "knobs/retrieval.hpp"

namespace knobs::harness {

namespace {

constexpr int kAnsiRamp[] = {224, 217, 210, 203, 196};

std::string intensity_text(double x) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  return buf;
}

}  // namespace

void HeatmapRecord::validate() const {
  if (spans.size() != activations.size()) throw ShapeError("heatmap: one activation per token required");
  std::size_t at = 0;
  for (const auto& s : spans) {
    if (s.begin != at || s.end < s.begin || s.end > text.size()) throw DataError("heatmap: spans do not tile the text");
    at = s.end;
  }
  if (!spans.empty() && at != text.size()) throw DataError("heatmap: spans do not cover the text");
  for (double a : activations)
    if (!(a >= 0.0)) throw DataError("heatmap: negative or non-finite activation");
}

HeatmapRecord token_heatmap(std::string_view text, const lm::LmWeights& lm, const sae::SaeParams& sae,
                            std::size_t layer, std::size_t feature) {
  if (feature >= sae.features()) throw IndexError("heatmap: feature " + std::to_string(feature) + " out of range");
  if (layer >= lm.config.n_layers) throw ConfigError("heatmap: layer " + std::to_string(layer) + " out of range");
  HeatmapRecord r;
  r.text = std::string(text);
  r.spans = lm.tokenizer.tokenize_with_spans(text);
  r.feature = feature;
  r.layer = layer;
  const Matrix codes = retrieval::token_codes(text, lm, sae, layer);
  if (codes.rows() != r.spans.size()) throw ShapeError("heatmap: token count mismatch");
  for (std::size_t t = 0; t < codes.rows(); ++t) r.activations.push_back(codes(t, feature));
  return r;
}

HeatmapFormat heatmap_format_from_string(std::string_view s) {
  if (s == "html") return HeatmapFormat::html;
  if (s == "ansi") return HeatmapFormat::ansi;
  throw ConfigError("unknown heatmap format '" + std::string(s) + "' (expected html or ansi)");
}

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_heatmap(const HeatmapRecord& record, HeatmapFormat format) {
  record.validate();
  const double peak = record.activations.empty()
                          ? 0.0
                          : *std::max_element(record.activations.begin(), record.activations.end());
  auto intensity = [&](std::size_t i) { return peak > 0.0 ? record.activations[i] / peak : 0.0; };

  std::string out;
  if (format == HeatmapFormat::ansi) {
    for (std::size_t i = 0; i < record.spans.size(); ++i) {
      const auto& s = record.spans[i];
      const std::string piece = record.text.substr(s.begin, s.end - s.begin);
      const double x = intensity(i);
      if (x <= 0.0) {
        out += piece;
        continue;
      }
      const std::size_t lead = piece.find_first_not_of(" \t\n\r");
      const std::size_t cut = lead == std::string::npos ? 0 : lead;
      const int shade = kAnsiRamp[std::min<std::size_t>(4, static_cast<std::size_t>(x * 4.999))];
      out += piece.substr(0, cut) + "\x1b[48;5;" + std::to_string(shade) + "m" + piece.substr(cut) + "\x1b[0m";
    }
    return out;
  }

  out += "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>feature " + std::to_string(record.feature) +
         " @ layer " + std::to_string(record.layer) + "</title>\n";
  out += "<style>body{font-family:monospace;white-space:pre-wrap}</style></head>\n<body>";
  out += "<div class=\"heatmap\" data-feature=\"" + std::to_string(record.feature) + "\" data-layer=\"" +
         std::to_string(record.layer) + "\">";
  for (std::size_t i = 0; i < record.spans.size(); ++i) {
    const auto& s = record.spans[i];
    const std::string x = intensity_text(intensity(i));
    out += "<span class=\"tok\" data-act=\"" + intensity_text(record.activations[i]) +
           "\" style=\"background-color:rgba(220,60,20," + x + ")\">" +
           html_escape(std::string_view(record.text).substr(s.begin, s.end - s.begin)) + "</span>";
  }
  out += "</div></body></html>\n";
  return out;
}

}  // namespace knobs::harness
