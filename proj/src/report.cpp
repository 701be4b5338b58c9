#include "umat/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "umat/canonical_json.hpp"
#include "umat/error.hpp"

namespace umat {

namespace {

namespace fs = std::filesystem;

void write_text_file(const std::string& text, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << text;
  if (!f) throw DataError("write failed: " + path);
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

int ramp_index(double value) {
  const int idx = static_cast<int>(std::lround(value / 100.0 * 255.0));
  return std::clamp(idx, 0, 255);
}

std::string ramp_fill(double value) {
  const auto& rgb = heatmap_ramp()[static_cast<size_t>(ramp_index(value))];
  char buf[24];
  std::snprintf(buf, sizeof(buf), "rgb(%d,%d,%d)", rgb[0], rgb[1], rgb[2]);
  return buf;
}

// Readable text color against the cell fill.
std::string text_color(double value) {
  const auto& rgb = heatmap_ramp()[static_cast<size_t>(ramp_index(value))];
  const double lum = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
  return lum > 140.0 ? "#000000" : "#ffffff";
}

std::string sanitize_filename(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return out;
}

}  // namespace

void HeatmapSpec::validate() const {
  if (row_labels.empty() || col_labels.empty())
    throw ConfigError("heatmap: labels must be non-empty");
  if (values.size() != row_labels.size() * col_labels.size())
    throw ConfigError("heatmap: values size does not match label dimensions");
  for (double v : values)
    if (!std::isfinite(v)) throw ConfigError("heatmap: values must be finite");
  if (normalization != "row" && normalization != "column" && normalization != "none")
    throw ConfigError("heatmap: unknown normalization note");
}

const std::array<std::array<uint8_t, 3>, 256>& heatmap_ramp() {
  // Perceptual dark-violet to yellow ramp, piecewise linear between five
  // anchors, frozen at construction so figures are byte-stable.
  static const std::array<std::array<uint8_t, 3>, 256> ramp = [] {
    const int anchors[5][3] = {
        {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
    std::array<std::array<uint8_t, 3>, 256> out{};
    for (int i = 0; i < 256; ++i) {
      const double t = i / 255.0 * 4.0;
      const int seg = std::min(3, static_cast<int>(t));
      const double f = t - seg;
      for (int c = 0; c < 3; ++c) {
        const double v = anchors[seg][c] + f * (anchors[seg + 1][c] - anchors[seg][c]);
        out[static_cast<size_t>(i)][static_cast<size_t>(c)] =
            static_cast<uint8_t>(std::lround(v));
      }
    }
    return out;
  }();
  return ramp;
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string render_csv(const ExperimentResult& result) {
  std::string out = "cell,true_label,predicted_label,count,row_pct\n";
  for (const CellResult& cell : result.cells) {
    const ConfusionMatrix& cm = cell.confusion;
    const std::vector<double> rec = recall_matrix(cm);
    const int n = cm.n();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        out += csv_quote(cell.key) + ',' + csv_quote(cm.labels[static_cast<size_t>(r)]) + ',' +
               csv_quote(cm.labels[static_cast<size_t>(c)]) + ',' +
               std::to_string(cm.at(r, c)) + ',' +
               format_fixed(rec[static_cast<size_t>(r) * n + c], 4) + '\n';
      }
  }
  return out;
}

void emit_csv(const ExperimentResult& result, const std::string& path) {
  write_text_file(render_csv(result), path);
}

std::string render_heatmap_svg(const HeatmapSpec& spec) {
  spec.validate();
  const int rows = static_cast<int>(spec.row_labels.size());
  const int cols = static_cast<int>(spec.col_labels.size());
  const int cell = 56;
  const int left = 140, top = 56, bottom = 20, right = 20;
  const int width = left + cols * cell + right;
  const int height = top + rows * cell + bottom;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" font-family=\"monospace\" font-size=\"12\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width) + "\" height=\"" +
         std::to_string(height) + "\" fill=\"#ffffff\"/>\n";
  if (!spec.title.empty())
    svg += "<text x=\"" + std::to_string(left) + "\" y=\"18\" font-size=\"14\">" +
           xml_escape(spec.title) + "</text>\n";
  if (spec.normalization != "none")
    svg += "<text x=\"" + std::to_string(left) + "\" y=\"34\" fill=\"#555555\">" +
           xml_escape(spec.normalization + "-normalized") + "</text>\n";

  for (int c = 0; c < cols; ++c) {
    const int x = left + c * cell + cell / 2;
    svg += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(top - 6) +
           "\" text-anchor=\"middle\">" + xml_escape(spec.col_labels[static_cast<size_t>(c)]) +
           "</text>\n";
  }
  for (int r = 0; r < rows; ++r) {
    const int y = top + r * cell + cell / 2 + 4;
    svg += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + std::to_string(y) +
           "\" text-anchor=\"end\">" + xml_escape(spec.row_labels[static_cast<size_t>(r)]) +
           "</text>\n";
  }

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double v = spec.values[static_cast<size_t>(r) * cols + c];
      const int x = left + c * cell;
      const int y = top + r * cell;
      svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
             std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" +
             ramp_fill(v) + "\" stroke=\"#ffffff\"/>\n";
      svg += "<text x=\"" + std::to_string(x + cell / 2) + "\" y=\"" +
             std::to_string(y + cell / 2 + 4) + "\" text-anchor=\"middle\" fill=\"" +
             text_color(v) + "\">" + format_fixed(v, 1) + "</text>\n";
    }
  svg += "</svg>\n";
  return svg;
}

void emit_heatmap_svg(const HeatmapSpec& spec, const std::string& path) {
  write_text_file(render_heatmap_svg(spec), path);
}

std::string render_scaling_curve_svg(const std::vector<int>& sizes,
                                     const std::vector<double>& accuracies) {
  if (sizes.size() != accuracies.size())
    throw ConfigError("scaling curve: sizes and accuracies differ in length");
  if (sizes.empty()) throw ConfigError("scaling curve: no points");
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] <= 0) throw ConfigError("scaling curve: sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1])
      throw ConfigError("scaling curve: sizes must be strictly increasing");
    if (!std::isfinite(accuracies[i]) || accuracies[i] < 0.0 || accuracies[i] > 100.0)
      throw ConfigError("scaling curve: accuracies must lie in [0, 100]");
  }

  const int width = 480, height = 320;
  const int left = 56, right = 24, top = 24, bottom = 48;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  const double lo = std::log10(static_cast<double>(sizes.front()));
  const double hi = std::log10(static_cast<double>(sizes.back()));
  const double span = hi > lo ? hi - lo : 1.0;  // single point centers below
  const auto x_of = [&](int size) {
    const double t = sizes.size() == 1
                         ? 0.5
                         : (std::log10(static_cast<double>(size)) - lo) / span;
    return left + t * plot_w;
  };
  const auto y_of = [&](double acc) { return top + (100.0 - acc) / 100.0 * plot_h; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" font-family=\"monospace\" font-size=\"12\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width) + "\" height=\"" +
         std::to_string(height) + "\" fill=\"#ffffff\"/>\n";

  for (int acc = 0; acc <= 100; acc += 25) {
    const std::string y = format_fixed(y_of(acc), 1);
    svg += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + y + "\" x2=\"" +
           std::to_string(width - right) + "\" y2=\"" + y + "\" stroke=\"#dddddd\"/>\n";
    svg += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + y +
           "\" text-anchor=\"end\" dominant-baseline=\"middle\">" + std::to_string(acc) +
           "</text>\n";
  }
  for (int size : sizes) {
    const std::string x = format_fixed(x_of(size), 1);
    svg += "<line x1=\"" + x + "\" y1=\"" + std::to_string(top) + "\" x2=\"" + x + "\" y2=\"" +
           std::to_string(height - bottom) + "\" stroke=\"#eeeeee\"/>\n";
    svg += "<text x=\"" + x + "\" y=\"" + std::to_string(height - bottom + 16) +
           "\" text-anchor=\"middle\">" + std::to_string(size) + "</text>\n";
  }
  svg += "<text x=\"" + std::to_string(left + static_cast<int>(plot_w) / 2) + "\" y=\"" +
         std::to_string(height - 8) +
         "\" text-anchor=\"middle\">training images per class (log scale)</text>\n";

  std::string points;
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (!points.empty()) points += ' ';
    points += format_fixed(x_of(sizes[i]), 1) + ',' + format_fixed(y_of(accuracies[i]), 1);
  }
  svg += "<polyline points=\"" + points +
         "\" fill=\"none\" stroke=\"#2166ac\" stroke-width=\"2\"/>\n";
  for (size_t i = 0; i < sizes.size(); ++i)
    svg += "<circle cx=\"" + format_fixed(x_of(sizes[i]), 1) + "\" cy=\"" +
           format_fixed(y_of(accuracies[i]), 1) + "\" r=\"3\" fill=\"#2166ac\"/>\n";
  svg += "</svg>\n";
  return svg;
}

void emit_scaling_curve_svg(const std::vector<int>& sizes,
                            const std::vector<double>& accuracies, const std::string& path) {
  write_text_file(render_scaling_curve_svg(sizes, accuracies), path);
}

namespace {

HeatmapSpec recall_heatmap(const CellResult& cell, const std::string& title) {
  HeatmapSpec spec;
  spec.title = title;
  spec.row_labels = cell.confusion.labels;
  spec.col_labels = cell.confusion.labels;
  spec.values = recall_matrix(cell.confusion);
  spec.normalization = "row";
  return spec;
}

}  // namespace

void emit_experiment_report(const ExperimentResult& result, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "tables");
  fs::create_directories(fs::path(out_dir) / "figures");
  write_canonical_json(result.to_json(), (fs::path(out_dir) / "results.json").string());
  emit_csv(result, (fs::path(out_dir) / "tables" / "confusion.csv").string());
  const fs::path figures = fs::path(out_dir) / "figures";

  if (result.kind == "scaling") {
    const std::vector<int> sizes = result.config.at("sizes").get<std::vector<int>>();
    std::vector<double> accuracies;
    for (int size : sizes)
      accuracies.push_back(result.cell("size=" + std::to_string(size)).accuracy * 100.0);
    emit_scaling_curve_svg(sizes, accuracies, (figures / "scaling_curve.svg").string());
    const std::string largest = "size=" + std::to_string(sizes.back());
    emit_heatmap_svg(recall_heatmap(result.cell(largest), largest),
                     (figures / ("recall_" + sanitize_filename(largest) + ".svg")).string());
    return;
  }

  if (result.kind == "ood_matrix") {
    std::vector<std::string> train_labels, test_labels;
    for (const CellResult& cell : result.cells) {
      const size_t comma = cell.key.find(",test=");
      const std::string train = cell.key.substr(6, comma - 6);  // after "train="
      const std::string test = cell.key.substr(comma + 6);
      if (std::find(train_labels.begin(), train_labels.end(), train) == train_labels.end())
        train_labels.push_back(train);
      if (std::find(test_labels.begin(), test_labels.end(), test) == test_labels.end())
        test_labels.push_back(test);
    }
    // Keep the mixed baseline as the last row.
    std::sort(train_labels.begin(), train_labels.end(), [](const auto& a, const auto& b) {
      if ((a == "mixed") != (b == "mixed")) return b == "mixed";
      return a < b;
    });
    std::sort(test_labels.begin(), test_labels.end());
    HeatmapSpec spec;
    spec.title = "attribution accuracy by train and test domain";
    spec.row_labels = train_labels;
    spec.col_labels = test_labels;
    for (const std::string& train : train_labels)
      for (const std::string& test : test_labels)
        spec.values.push_back(result.cell("train=" + train + ",test=" + test).accuracy * 100.0);
    emit_heatmap_svg(spec, (figures / "accuracy_heatmap.svg").string());
    return;
  }

  if (result.kind == "language_attribution") {
    for (const CellResult& cell : result.cells)
      emit_heatmap_svg(recall_heatmap(cell, cell.key),
                       (figures / ("recall_" + sanitize_filename(cell.key) + ".svg")).string());
    return;
  }

  if (result.kind == "structural_ablation") {
    std::vector<std::string> transforms;
    for (const CellResult& cell : result.cells) {
      const std::string transform = cell.key.substr(0, cell.key.rfind('/'));
      if (std::find(transforms.begin(), transforms.end(), transform) == transforms.end())
        transforms.push_back(transform);
    }
    std::sort(transforms.begin(), transforms.end());
    HeatmapSpec spec;
    spec.title = "attribution accuracy by transform and classifier";
    spec.row_labels = transforms;
    spec.col_labels = {"convnet", "hist"};
    for (const std::string& t : transforms) {
      spec.values.push_back(result.cell(t + "/convnet").accuracy * 100.0);
      spec.values.push_back(result.cell(t + "/hist").accuracy * 100.0);
    }
    emit_heatmap_svg(spec, (figures / "accuracy_heatmap.svg").string());
    return;
  }

  // Any other kind: one accuracy column keyed by cell.
  HeatmapSpec spec;
  spec.title = "attribution accuracy by condition";
  for (const CellResult& cell : result.cells) {
    spec.row_labels.push_back(cell.key);
    spec.values.push_back(cell.accuracy * 100.0);
  }
  spec.col_labels = {"accuracy"};
  if (!spec.row_labels.empty())
    emit_heatmap_svg(spec, (figures / "accuracy_heatmap.svg").string());
}

}  // namespace umat
