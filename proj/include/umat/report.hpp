#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "umat/experiments.hpp"

namespace umat {

struct HeatmapSpec {
  std::string title;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<double> values;  // row-major percentages in [0, 100]
  std::string normalization = "none";  // "row", "column", or "none"; shown as a note

  void validate() const;
};

// Fixed 256-entry color ramp; index = round(value / 100 * 255).
const std::array<std::array<uint8_t, 3>, 256>& heatmap_ramp();

// Fixed-point decimal formatting shared by every emitter.
std::string format_fixed(double v, int decimals);

// One row per confusion-matrix entry, experiment cells in key order and
// entries row-major: cell,true_label,predicted_label,count,row_pct with
// row_pct at four decimals. An empty result yields only the header.
std::string render_csv(const ExperimentResult& result);
void emit_csv(const ExperimentResult& result, const std::string& path);

std::string render_heatmap_svg(const HeatmapSpec& spec);
void emit_heatmap_svg(const HeatmapSpec& spec, const std::string& path);

// Accuracy-versus-size curve: log-scaled x, [0, 100] linear y, a tick per
// size, polyline with point markers. accuracies are percentages.
std::string render_scaling_curve_svg(const std::vector<int>& sizes,
                                     const std::vector<double>& accuracies);
void emit_scaling_curve_svg(const std::vector<int>& sizes,
                            const std::vector<double>& accuracies, const std::string& path);

// Writes results.json, tables/confusion.csv, and the kind-appropriate
// figures/*.svg under out_dir.
void emit_experiment_report(const ExperimentResult& result, const std::string& out_dir);

}  // namespace umat
