#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "umat/dataset.hpp"
#include "umat/image.hpp"

namespace umat {

enum class MotifKind { none, corner_glyph, border_frame, vignette };
enum class LanguageMode { none, scene_override, overlay };

const char* motif_kind_name(MotifKind k);
MotifKind motif_kind_from_name(const std::string& name);

// Style parameters of one synthetic generator. Content (scene layout) is
// independent of these fields; together they are the per-model fingerprint
// the classifiers are supposed to recover.
//
// language_mode models generators that mishandle some prompt languages:
// scene_override replaces the scene with an off-prompt abstract-blob
// composition for the listed language ids; overlay stamps a fixed figure on
// top of the normal scene. Languages outside language_targets render
// normally.
struct GeneratorSignature {
  std::string name;
  std::vector<std::array<float, 3>> palette;  // K >= 2 anchors; slot 0 = background
  double palette_jitter = 0.0;                // std of per-image hue rotation, in turns
  double noise_grain = 8.0;                   // value-noise lattice size in pixels
  double noise_amp = 0.08;                    // luminance amplitude, in [0, 0.5]
  MotifKind motif_kind = MotifKind::none;
  double motif_strength = 0.0;                // opacity (multiplier depth for vignette), [0, 1]
  double background_emptiness = 0.0;          // probability of a flat background
  double sharpness = 0.0;                     // blur std in pixels applied at render end
  LanguageMode language_mode = LanguageMode::none;
  std::vector<int> language_targets;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorSignature from_json(const nlohmann::json& j);
};

// Two signatures count as distinct when at least one field clears its
// epsilon: some palette anchor pair differs by L2 > 0.05, or motif_kind
// differs, or the noise_grain ratio exceeds 1.5.
bool signatures_distinct(const GeneratorSignature& a, const GeneratorSignature& b);
void require_pairwise_distinct(const std::vector<GeneratorSignature>& sigs);

// domain_id indexes the canonical domain list; -1 renders background only.
// language_id indexes the canonical language list.
struct ContentSpec {
  int domain_id = 0;
  int64_t prompt_id = 0;
  int language_id = 0;

  void validate() const;
};

inline constexpr int kDomainCount = 10;
inline constexpr int kLanguageCount = 5;

const std::vector<std::string>& domain_names();    // sorted, size kDomainCount
const std::vector<std::string>& language_names();  // sorted, size kLanguageCount
int domain_id_from_name(const std::string& name);
int language_id_from_name(const std::string& name);

// Hard-coded signature tables, tuned once and frozen.
std::vector<GeneratorSignature> default_signatures(int n);        // 1..16, pairwise distinct
std::vector<GeneratorSignature> identical_signatures(int n);      // n renamed copies of entry 0
std::vector<GeneratorSignature> palette_only_signatures(int n);   // differ only in palette hue
std::vector<GeneratorSignature> texture_only_signatures(int n);   // differ only in noise_grain
std::vector<GeneratorSignature> style_overlap_signatures(int n);  // overlapping palettes, texture-led identity

// Deterministic render: layout depends only on (content, seed), style
// overlays only on (sig, sub-seeds derived from seed). Same arguments give
// bit-identical buffers. size >= 32, output is size x size.
ImageBuffer render(const GeneratorSignature& sig, const ContentSpec& content, uint64_t seed,
                   int size);

// Pixel bounding box (x0,y0 inclusive, x1,y1 exclusive) that a motif may
// touch at the given image size, already dilated by the gradient radius of
// edge_proxy. vignette covers the full image.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};
PixelRect motif_region(MotifKind kind, int size);

struct CorpusSpec {
  std::string out_dir;
  std::vector<GeneratorSignature> signatures;
  std::vector<std::string> domains = {"animals"};
  std::vector<std::string> languages = {"en"};
  int per_cell = 100;
  int image_size = 64;
  uint64_t seed = 0;
  bool require_distinct = true;
};

// Writes out_dir/<model>/<domain>/<language>/<prompt>.png for every grid
// cell plus manifest.jsonl at the root, and returns the manifest rows. The
// prompt grid is shared across signatures. Per-image seeds come from
// seed ^ hash(model, domain, language, prompt_id), so scheduling cannot
// change any pixel.
std::vector<ManifestRow> generate_corpus(const CorpusSpec& spec, int workers = 0);

}  // namespace umat
