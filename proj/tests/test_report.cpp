#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "umat/canonical_json.hpp"
#include "umat/error.hpp"
#include "umat/report.hpp"

using namespace umat;

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> lines;
  std::istringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

// Minimal well-formedness check: balanced tags, self-closing allowed, text
// restricted to the five standard entities.
bool xml_well_formed(const std::string& s) {
  std::vector<std::string> stack;
  size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '<') {
      const size_t close = s.find('>', i);
      if (close == std::string::npos) return false;
      std::string tag = s.substr(i + 1, close - i - 1);
      if (!tag.empty() && tag[0] == '/') {
        const std::string name = tag.substr(1);
        if (stack.empty() || stack.back() != name) return false;
        stack.pop_back();
      } else {
        const bool self_close = !tag.empty() && tag.back() == '/';
        if (self_close) tag.pop_back();
        const std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
        if (name.empty()) return false;
        if (!self_close) stack.push_back(name);
      }
      i = close + 1;
    } else {
      if (s[i] == '&') {
        bool ok = false;
        for (const char* e : {"&amp;", "&lt;", "&gt;", "&quot;", "&apos;"})
          if (s.compare(i, std::strlen(e), e) == 0) {
            ok = true;
            i += std::strlen(e) - 1;
          }
        if (!ok) return false;
      }
      ++i;
    }
  }
  return stack.empty();
}

// Cell value texts carry both a middle anchor and an explicit fill.
std::vector<std::string> heatmap_cell_texts(const std::string& svg) {
  std::vector<std::string> out;
  for (const std::string& line : split_lines(svg)) {
    if (line.find("text-anchor=\"middle\" fill=") == std::string::npos) continue;
    const size_t open = line.find('>');
    const size_t close = line.find("</text>");
    if (open == std::string::npos || close == std::string::npos) continue;
    out.push_back(line.substr(open + 1, close - open - 1));
  }
  return out;
}

std::string heatmap_fill_of_cell(const std::string& svg, size_t index) {
  std::vector<std::string> fills;
  for (const std::string& line : split_lines(svg)) {
    if (line.rfind("<rect", 0) != 0) continue;
    const size_t pos = line.find("fill=\"rgb(");
    if (pos == std::string::npos) continue;
    const size_t end = line.find('"', pos + 6);
    fills.push_back(line.substr(pos + 6, end - pos - 6));
  }
  REQUIRE(index < fills.size());
  return fills[index];
}

ConfusionMatrix make_matrix(std::vector<std::string> labels, std::vector<int64_t> counts) {
  ConfusionMatrix cm;
  cm.labels = std::move(labels);
  cm.counts = std::move(counts);
  return cm;
}

CellResult make_cell(const std::string& key, ConfusionMatrix cm) {
  CellResult cell;
  cell.key = key;
  cell.confusion = std::move(cm);
  cell.accuracy = cell.confusion.accuracy();
  cell.test_fingerprint = 42;
  return cell;
}

ExperimentResult make_result(const std::string& kind, std::vector<CellResult> cells,
                             nlohmann::json config = nlohmann::json::object()) {
  ExperimentResult r;
  r.kind = kind;
  r.seed = 5;
  r.toolkit_version = "0.1.0";
  r.corpus_fingerprint = 99;
  r.config = std::move(config);
  r.cells = std::move(cells);
  return r;
}

}  // namespace

TEST_CASE("csv has one row per matrix entry in row major order") {
  ExperimentResult empty = make_result("scaling", {});
  CHECK(render_csv(empty) == "cell,true_label,predicted_label,count,row_pct\n");

  ExperimentResult r =
      make_result("scaling", {make_cell("size=2", make_matrix({"a", "b"}, {1, 3, 2, 2}))});
  const std::string csv = render_csv(r);
  const auto lines = split_lines(csv);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "cell,true_label,predicted_label,count,row_pct");
  CHECK(lines[1] == "size=2,a,a,1,25.0000");
  CHECK(lines[2] == "size=2,a,b,3,75.0000");
  CHECK(lines[3] == "size=2,b,a,2,50.0000");
  CHECK(lines[4] == "size=2,b,b,2,50.0000");

  CHECK(render_csv(r) == csv);  // byte-identical re-emission

  ExperimentResult quoted = make_result(
      "ood_matrix", {make_cell("train=a,test=b", make_matrix({"x\"y", "z"}, {1, 0, 0, 1}))});
  const auto qlines = split_lines(render_csv(quoted));
  CHECK(qlines[1].rfind("\"train=a,test=b\",\"x\"\"y\",", 0) == 0);
}

TEST_CASE("heatmap ramp endpoints and monotone mapping") {
  const auto& ramp = heatmap_ramp();
  CHECK(ramp[0] == std::array<uint8_t, 3>{68, 1, 84});
  CHECK(ramp[255] == std::array<uint8_t, 3>{253, 231, 37});

  HeatmapSpec spec;
  spec.row_labels = {"r"};
  spec.col_labels = {"lo", "mid", "hi"};
  spec.values = {0.0, 50.0, 100.0};
  const std::string svg = render_heatmap_svg(spec);
  CHECK(xml_well_formed(svg));
  CHECK(heatmap_cell_texts(svg) == std::vector<std::string>{"0.0", "50.0", "100.0"});
}

TEST_CASE("single full cell sits at the ramp top") {
  HeatmapSpec spec;
  spec.row_labels = {"only"};
  spec.col_labels = {"only"};
  spec.values = {100.0};
  const std::string svg = render_heatmap_svg(spec);
  CHECK(xml_well_formed(svg));
  CHECK(svg.find("fill=\"rgb(253,231,37)\"") != std::string::npos);
  CHECK(heatmap_cell_texts(svg) == std::vector<std::string>{"100.0"});
}

TEST_CASE("heatmap fills are distinct and monotone along the ramp") {
  HeatmapSpec spec;
  spec.row_labels = {"r"};
  spec.col_labels = {"lo", "mid", "hi"};
  spec.values = {0.0, 50.0, 100.0};
  const std::string svg = render_heatmap_svg(spec);
  const auto& ramp = heatmap_ramp();
  const std::string f0 = heatmap_fill_of_cell(svg, 0);
  const std::string f1 = heatmap_fill_of_cell(svg, 1);
  const std::string f2 = heatmap_fill_of_cell(svg, 2);
  CHECK(f0 != f1);
  CHECK(f1 != f2);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "rgb(%d,%d,%d)", ramp[0][0], ramp[0][1], ramp[0][2]);
  CHECK(f0 == buf);
  std::snprintf(buf, sizeof(buf), "rgb(%d,%d,%d)", ramp[128][0], ramp[128][1], ramp[128][2]);
  CHECK(f1 == buf);
  std::snprintf(buf, sizeof(buf), "rgb(%d,%d,%d)", ramp[255][0], ramp[255][1], ramp[255][2]);
  CHECK(f2 == buf);
}

TEST_CASE("heatmap validates dimensions and escapes labels") {
  HeatmapSpec spec;
  spec.row_labels = {"a"};
  spec.col_labels = {"b"};
  spec.values = {1.0, 2.0};
  CHECK_THROWS_AS(render_heatmap_svg(spec), ConfigError);
  spec.values = {std::nan("")};
  CHECK_THROWS_AS(render_heatmap_svg(spec), ConfigError);
  spec.values = {40.0};
  spec.normalization = "diagonal";
  CHECK_THROWS_AS(render_heatmap_svg(spec), ConfigError);

  spec.normalization = "row";
  spec.row_labels = {"<a&b>"};
  const std::string svg = render_heatmap_svg(spec);
  CHECK(xml_well_formed(svg));
  CHECK(svg.find("&lt;a&amp;b&gt;") != std::string::npos);
  CHECK(svg.find("row-normalized") != std::string::npos);
}

TEST_CASE("scaling curve is log x bounded y and deterministic") {
  const std::vector<int> sizes{100, 3000, 25000};
  const std::vector<double> accs{36.0, 90.1, 99.9};
  const std::string svg = render_scaling_curve_svg(sizes, accs);
  CHECK(xml_well_formed(svg));
  CHECK(svg == render_scaling_curve_svg(sizes, accs));
  CHECK(svg.find("<polyline") != std::string::npos);
  for (int size : sizes)
    CHECK(svg.find(">" + std::to_string(size) + "</text>") != std::string::npos);

  // Circle markers descend in y as accuracy rises.
  std::vector<double> cys;
  for (const std::string& line : split_lines(svg)) {
    const size_t pos = line.find("cy=\"");
    if (line.rfind("<circle", 0) == 0 && pos != std::string::npos)
      cys.push_back(std::stod(line.substr(pos + 4)));
  }
  REQUIRE(cys.size() == 3);
  CHECK(cys[0] > cys[1]);
  CHECK(cys[1] > cys[2]);

  const std::string one = render_scaling_curve_svg({500}, {75.0});
  CHECK(xml_well_formed(one));
  CHECK(one.find("<circle") != std::string::npos);

  CHECK_THROWS_AS(render_scaling_curve_svg({100, 200}, {50.0}), ConfigError);
  CHECK_THROWS_AS(render_scaling_curve_svg({200, 100}, {50.0, 60.0}), ConfigError);
  CHECK_THROWS_AS(render_scaling_curve_svg({100}, {101.0}), ConfigError);
  CHECK_THROWS_AS(render_scaling_curve_svg({}, {}), ConfigError);
}

TEST_CASE("svg cell texts equal csv values rounded to one decimal") {
  ExperimentResult r =
      make_result("scaling", {make_cell("size=2", make_matrix({"a", "b"}, {5, 3, 1, 7}))},
                  nlohmann::json{{"sizes", std::vector<int>{2}}});
  const fs::path out = fs::temp_directory_path() / "report_consistency";
  fs::remove_all(out);
  emit_experiment_report(r, out.string());

  const auto csv_lines = split_lines(read_file(out / "tables" / "confusion.csv"));
  std::vector<std::string> csv_pcts;
  for (size_t i = 1; i < csv_lines.size(); ++i)
    csv_pcts.push_back(csv_lines[i].substr(csv_lines[i].rfind(',') + 1));

  const std::string svg = read_file(out / "figures" / "recall_size_2.svg");
  const std::vector<std::string> cell_texts = heatmap_cell_texts(svg);
  REQUIRE(cell_texts.size() == csv_pcts.size());
  for (size_t i = 0; i < cell_texts.size(); ++i)
    CHECK(cell_texts[i] == format_fixed(std::stod(csv_pcts[i]), 1));
  fs::remove_all(out);
}

TEST_CASE("experiment report writes the kind appropriate artifacts") {
  const fs::path out = fs::temp_directory_path() / "report_artifacts";

  SUBCASE("scaling") {
    ExperimentResult r = make_result(
        "scaling",
        {make_cell("size=2", make_matrix({"a", "b"}, {2, 0, 0, 2})),
         make_cell("size=4", make_matrix({"a", "b"}, {2, 0, 1, 1}))},
        nlohmann::json{{"sizes", std::vector<int>{2, 4}}});
    fs::remove_all(out);
    emit_experiment_report(r, out.string());
    CHECK(fs::exists(out / "results.json"));
    CHECK(fs::exists(out / "tables" / "confusion.csv"));
    CHECK(fs::exists(out / "figures" / "scaling_curve.svg"));
    CHECK(fs::exists(out / "figures" / "recall_size_4.svg"));

    const ExperimentResult back = ExperimentResult::from_json(
        nlohmann::json::parse(read_file(out / "results.json")));
    CHECK(canonical_dump(back.to_json()) == canonical_dump(r.to_json()));
  }

  SUBCASE("ood matrix keeps the mixed baseline as the last row") {
    ExperimentResult r = make_result(
        "ood_matrix", {make_cell("train=va,test=va", make_matrix({"a", "b"}, {2, 0, 0, 2})),
                       make_cell("train=va,test=zb", make_matrix({"a", "b"}, {1, 1, 1, 1})),
                       make_cell("train=zb,test=va", make_matrix({"a", "b"}, {1, 1, 1, 1})),
                       make_cell("train=zb,test=zb", make_matrix({"a", "b"}, {2, 0, 0, 2})),
                       make_cell("train=mixed,test=va", make_matrix({"a", "b"}, {2, 0, 1, 1})),
                       make_cell("train=mixed,test=zb", make_matrix({"a", "b"}, {2, 0, 1, 1}))});
    fs::remove_all(out);
    emit_experiment_report(r, out.string());
    const std::string svg = read_file(out / "figures" / "accuracy_heatmap.svg");
    CHECK(xml_well_formed(svg));
    const size_t va = svg.find(">va</text>");
    const size_t zb = svg.find(">zb</text>");
    const size_t mixed = svg.find(">mixed</text>");
    REQUIRE(va != std::string::npos);
    REQUIRE(mixed != std::string::npos);
    CHECK(va < mixed);
    CHECK(zb < mixed);
    CHECK(heatmap_cell_texts(svg).size() == 6);
  }

  SUBCASE("structural ablation crosses transform rows with classifier columns") {
    ExperimentResult r = make_result(
        "structural_ablation",
        {make_cell("none/convnet", make_matrix({"a", "b"}, {2, 0, 0, 2})),
         make_cell("none/hist", make_matrix({"a", "b"}, {1, 1, 1, 1})),
         make_cell("shuffle/convnet", make_matrix({"a", "b"}, {1, 1, 1, 1})),
         make_cell("shuffle/hist", make_matrix({"a", "b"}, {2, 0, 1, 1}))});
    fs::remove_all(out);
    emit_experiment_report(r, out.string());
    const std::string svg = read_file(out / "figures" / "accuracy_heatmap.svg");
    CHECK(svg.find(">convnet</text>") != std::string::npos);
    CHECK(svg.find(">hist</text>") != std::string::npos);
    CHECK(heatmap_cell_texts(svg).size() == 4);
  }

  SUBCASE("language attribution emits one recall heatmap per model") {
    ExperimentResult r = make_result(
        "language_attribution", {make_cell("model=x", make_matrix({"en", "ja"}, {2, 0, 0, 2})),
                                 make_cell("model=y", make_matrix({"en", "ja"}, {1, 1, 1, 1}))});
    fs::remove_all(out);
    emit_experiment_report(r, out.string());
    CHECK(fs::exists(out / "figures" / "recall_model_x.svg"));
    CHECK(fs::exists(out / "figures" / "recall_model_y.svg"));
  }

  SUBCASE("other kinds get an accuracy column") {
    ExperimentResult r = make_result(
        "corruption_ablation", {make_cell("jitter1", make_matrix({"a", "b"}, {2, 0, 0, 2})),
                                make_cell("none", make_matrix({"a", "b"}, {2, 0, 1, 1}))});
    fs::remove_all(out);
    emit_experiment_report(r, out.string());
    const std::string svg = read_file(out / "figures" / "accuracy_heatmap.svg");
    CHECK(svg.find(">jitter1</text>") != std::string::npos);
    CHECK(svg.find(">none</text>") != std::string::npos);
    CHECK(heatmap_cell_texts(svg) == std::vector<std::string>{"100.0", "75.0"});
  }

  fs::remove_all(out);
}
