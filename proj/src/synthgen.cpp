#include "umat/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "umat/error.hpp"
#include "umat/parallel.hpp"
#include "umat/png_io.hpp"
#include "umat/rng.hpp"
#include "umat/transforms.hpp"

namespace umat {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

// Colors are constructed in (luma, Cb, Cr) space so that hue moves never
// change Rec. 601 luminance: rotating (Cb, Cr) leaves Y exact, which is what
// keeps edge maps invariant under palette changes.
std::array<float, 3> ycbcr_to_rgb(double y, double cb, double cr) {
  return {static_cast<float>(y + 1.402 * cr),
          static_cast<float>(y - 0.344136286201022 * cb - 0.714136286201022 * cr),
          static_cast<float>(y + 1.772 * cb)};
}

void rgb_to_ycbcr(const std::array<float, 3>& rgb, double& y, double& cb, double& cr) {
  y = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
  cb = (rgb[2] - y) / 1.772;
  cr = (rgb[0] - y) / 1.402;
}

std::array<float, 3> make_anchor(double y, double radius, double hue_turns) {
  return ycbcr_to_rgb(y, radius * std::cos(kTau * hue_turns), radius * std::sin(kTau * hue_turns));
}

// Slot luminance ladder. Adjacent-region contrasts stay >= 0.18 so scene
// boundaries always clear the edge_proxy threshold with a wide margin, and
// chroma radii are capped per slot so no channel can clamp even with the
// maximum default noise amplitude on top.
constexpr double kSlotY[4] = {0.62, 0.44, 0.26, 0.80};
constexpr double kSlotRadiusCap[4] = {0.12, 0.12, 0.075, 0.045};

std::vector<std::array<float, 3>> make_palette(double base_hue) {
  constexpr double kSlotHueOffset[4] = {0.0, 0.13, 0.56, -0.21};
  constexpr double kSlotRadius[4] = {0.115, 0.11, 0.07, 0.042};
  std::vector<std::array<float, 3>> palette(4);
  for (int s = 0; s < 4; ++s)
    palette[s] = make_anchor(kSlotY[s], kSlotRadius[s], base_hue + kSlotHueOffset[s]);
  return palette;
}

GeneratorSignature make_signature(const std::string& name, double hue, double jitter,
                                  double grain, double amp, MotifKind motif, double strength,
                                  double emptiness, double sharpness) {
  GeneratorSignature sig;
  sig.name = name;
  sig.palette = make_palette(hue);
  sig.palette_jitter = jitter;
  sig.noise_grain = grain;
  sig.noise_amp = amp;
  sig.motif_kind = motif;
  sig.motif_strength = strength;
  sig.background_emptiness = emptiness;
  sig.sharpness = sharpness;
  return sig;
}

std::string pad2(int i) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d", i);
  return buf;
}

// ---------------------------------------------------------------------------
// Scene primitives. Coordinates are in the unit square, y growing downward;
// coverage is hard (no anti-aliasing) so region boundaries are exactly one
// luminance step wide.

struct Shape {
  enum class Kind { disc, rect, ring, capsule, ridge };
  Kind kind = Kind::disc;
  int slot = 1;
  float a = 0, b = 0, c = 0, d = 0, e = 0;
  std::vector<float> curve;  // ridge heights, linearly interpolated
};

Shape disc(float cx, float cy, float r, int slot) {
  return {Shape::Kind::disc, slot, cx, cy, r, 0, 0, {}};
}
Shape rect(float x0, float y0, float x1, float y1, int slot) {
  return {Shape::Kind::rect, slot, x0, y0, x1, y1, 0, {}};
}
Shape ring(float cx, float cy, float r, float half_th, int slot) {
  return {Shape::Kind::ring, slot, cx, cy, r, half_th, 0, {}};
}
Shape capsule(float x0, float y0, float x1, float y1, float half_w, int slot) {
  return {Shape::Kind::capsule, slot, x0, y0, x1, y1, half_w, {}};
}
Shape ridge(std::vector<float> heights, int slot) {
  Shape s;
  s.kind = Shape::Kind::ridge;
  s.slot = slot;
  s.curve = std::move(heights);
  return s;
}

float ridge_height(const Shape& s, float x) {
  const float t = std::clamp(x, 0.0f, 1.0f) * (s.curve.size() - 1);
  const int i = std::min(static_cast<int>(t), static_cast<int>(s.curve.size()) - 2);
  const float f = t - i;
  return s.curve[i] * (1.0f - f) + s.curve[i + 1] * f;
}

bool covers(const Shape& s, float x, float y) {
  switch (s.kind) {
    case Shape::Kind::disc: {
      const float dx = x - s.a, dy = y - s.b;
      return dx * dx + dy * dy <= s.c * s.c;
    }
    case Shape::Kind::rect:
      return x >= s.a && x <= s.c && y >= s.b && y <= s.d;
    case Shape::Kind::ring: {
      const float dist = std::hypot(x - s.a, y - s.b);
      return std::fabs(dist - s.c) <= s.d;
    }
    case Shape::Kind::capsule: {
      const float vx = s.c - s.a, vy = s.d - s.b;
      const float wx = x - s.a, wy = y - s.b;
      const float len2 = vx * vx + vy * vy;
      const float t = len2 > 0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0f, 1.0f) : 0.0f;
      return std::hypot(wx - t * vx, wy - t * vy) <= s.e;
    }
    case Shape::Kind::ridge:
      return y >= ridge_height(s, x);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Scene grammars, one per domain. Each grammar owns a primitive composition
// no other grammar produces, so the ten content families are disjoint:
//
//   animals          limbed blob clusters (body+head discs with leg capsules)
//   arts_and_works   concentric rings with radial spokes around a hub
//   buildings        ground band, tower rectangles with window sub-grids
//   clothing         full-height swaying band capsules crossed by a belt
//   food_and_drinks  large plate discs with rim rings and scattered bits
//   household_items  regular grid of small rect/disc objects with handles
//   interior_spaces  floor half-band with standing furniture and a door
//   landscapes       stacked ridge fills under a sky with a sun disc
//   people           head-torso-limb silhouette figures on a baseline
//   vehicles         body rectangles with cabin atop and tangent wheel discs

void scene_animals(Rng& rng, std::vector<Shape>& out) {
  const int n = 2 + static_cast<int>(rng.next_below(3));
  for (int i = 0; i < n; ++i) {
    const float cx = static_cast<float>(rng.next_range(0.18, 0.82));
    const float cy = static_cast<float>(rng.next_range(0.28, 0.72));
    const float r = static_cast<float>(rng.next_range(0.08, 0.16));
    const float ang = static_cast<float>(rng.next_range(0.0, kTau));
    out.push_back(capsule(cx - r * 0.5f, cy + r * 0.6f, cx - r * 0.55f, cy + r * 1.6f, r * 0.16f, 2));
    out.push_back(capsule(cx + r * 0.5f, cy + r * 0.6f, cx + r * 0.55f, cy + r * 1.6f, r * 0.16f, 2));
    out.push_back(disc(cx, cy, r, 1));
    out.push_back(disc(cx + 1.15f * r * std::cos(ang), cy + 1.15f * r * std::sin(ang), r * 0.55f, 1));
    if (rng.next_double() < 0.5)
      out.push_back(capsule(cx - r, cy, cx - r * 1.6f, cy - r * 0.5f, r * 0.12f, 3));
  }
}

void scene_arts(Rng& rng, std::vector<Shape>& out) {
  const float cx = static_cast<float>(0.5 + rng.next_range(-0.06, 0.06));
  const float cy = static_cast<float>(0.5 + rng.next_range(-0.06, 0.06));
  const int n_rings = 3 + static_cast<int>(rng.next_below(3));
  const int n_spokes = 5 + static_cast<int>(rng.next_below(5));
  const float a0 = static_cast<float>(rng.next_range(0.0, kTau));
  const float r_max = 0.12f + 0.075f * (n_rings - 1);
  for (int i = 0; i < n_spokes; ++i) {
    const float a = a0 + static_cast<float>(kTau * i / n_spokes);
    out.push_back(capsule(cx, cy, cx + r_max * std::cos(a), cy + r_max * std::sin(a),
                          0.008f + static_cast<float>(rng.next_range(0.0, 0.006)), 2));
  }
  for (int i = 0; i < n_rings; ++i) {
    const float r = 0.12f + 0.075f * i + static_cast<float>(rng.next_range(-0.01, 0.01));
    out.push_back(ring(cx, cy, r, 0.012f + static_cast<float>(rng.next_range(0.0, 0.01)),
                       i % 2 == 0 ? 1 : 3));
  }
  out.push_back(disc(cx, cy, 0.05f, 3));
}

void scene_buildings(Rng& rng, std::vector<Shape>& out) {
  const float ground = static_cast<float>(rng.next_range(0.82, 0.88));
  out.push_back(rect(0.0f, ground, 1.0f, 1.0f, 2));
  const int n = 1 + static_cast<int>(rng.next_below(3));
  float x = static_cast<float>(rng.next_range(0.04, 0.12));
  for (int i = 0; i < n; ++i) {
    const float w = static_cast<float>(rng.next_range(0.14, 0.24));
    const float top = static_cast<float>(rng.next_range(0.18, 0.5));
    if (x + w > 0.98f) break;
    out.push_back(rect(x, top, x + w, ground, 1));
    const int cols = 2 + static_cast<int>(rng.next_below(2));
    const int rows = 3 + static_cast<int>(rng.next_below(3));
    const float cw = w / cols, ch = (ground - top) / rows;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        out.push_back(rect(x + cw * (c + 0.28f), top + ch * (r + 0.3f), x + cw * (c + 0.72f),
                           top + ch * (r + 0.7f), 3));
    x += w + static_cast<float>(rng.next_range(0.03, 0.1));
  }
}

void scene_clothing(Rng& rng, std::vector<Shape>& out) {
  const int n = 4 + static_cast<int>(rng.next_below(4));
  for (int i = 0; i < n; ++i) {
    const float x0 = (i + 0.5f) / n + static_cast<float>(rng.next_range(-0.02, 0.02));
    const float sway = static_cast<float>(rng.next_range(-0.12, 0.12));
    const float hw = static_cast<float>(rng.next_range(0.03, 0.055));
    out.push_back(capsule(x0, -0.05f, x0 + sway, 1.05f, hw, i % 2 == 0 ? 1 : 3));
  }
  const float belt_y = static_cast<float>(rng.next_range(0.35, 0.6));
  out.push_back(rect(0.0f, belt_y, 1.0f, belt_y + static_cast<float>(rng.next_range(0.03, 0.07)), 2));
}

void scene_food(Rng& rng, std::vector<Shape>& out) {
  const int n = 1 + static_cast<int>(rng.next_below(3));
  for (int i = 0; i < n; ++i) {
    const float cx = static_cast<float>(rng.next_range(0.22, 0.78));
    const float cy = static_cast<float>(rng.next_range(0.25, 0.75));
    const float r = static_cast<float>(rng.next_range(0.14, 0.24));
    out.push_back(disc(cx, cy, r, 1));
    out.push_back(ring(cx, cy, r * 0.9f, 0.012f, 3));
    const int bits = 3 + static_cast<int>(rng.next_below(4));
    for (int b = 0; b < bits; ++b) {
      const float a = static_cast<float>(rng.next_range(0.0, kTau));
      const float d = static_cast<float>(rng.next_range(0.0, r * 0.6));
      out.push_back(disc(cx + d * std::cos(a), cy + d * std::sin(a),
                         static_cast<float>(rng.next_range(0.015, 0.04)), 2));
    }
  }
}

void scene_household(Rng& rng, std::vector<Shape>& out) {
  const int gw = 3 + static_cast<int>(rng.next_below(2));
  const int gh = 3 + static_cast<int>(rng.next_below(2));
  const float cw = 0.8f / gw, ch = 0.8f / gh;
  for (int j = 0; j < gh; ++j)
    for (int i = 0; i < gw; ++i) {
      const float cx = 0.1f + cw * (i + 0.5f) + static_cast<float>(rng.next_range(-0.12, 0.12)) * cw;
      const float cy = 0.1f + ch * (j + 0.5f) + static_cast<float>(rng.next_range(-0.12, 0.12)) * ch;
      const float s = static_cast<float>(rng.next_range(0.22, 0.4)) * std::min(cw, ch);
      const int slot = (i + j) % 2 == 0 ? 1 : 2;
      if (rng.next_double() < 0.5)
        out.push_back(disc(cx, cy, s, slot));
      else
        out.push_back(rect(cx - s, cy - s * 0.8f, cx + s, cy + s * 0.8f, slot));
      if (rng.next_below(3) == 0)
        out.push_back(capsule(cx, cy - s * 0.8f, cx, cy - s * 1.6f, s * 0.18f, 3));
    }
}

void scene_interior(Rng& rng, std::vector<Shape>& out) {
  const float floor_y = static_cast<float>(rng.next_range(0.55, 0.7));
  out.push_back(rect(0.0f, floor_y, 1.0f, 1.0f, 2));
  const float door_x = static_cast<float>(rng.next_range(0.08, 0.78));
  out.push_back(rect(door_x, floor_y - 0.45f, door_x + 0.14f, floor_y, 3));
  const int n = 2 + static_cast<int>(rng.next_below(3));
  for (int i = 0; i < n; ++i) {
    const float w = static_cast<float>(rng.next_range(0.1, 0.25));
    const float h = static_cast<float>(rng.next_range(0.1, 0.3));
    const float x = static_cast<float>(rng.next_range(0.02, 0.96 - w));
    out.push_back(rect(x, floor_y - h, x + w, floor_y + 0.08f, 1));
  }
}

void scene_landscape(Rng& rng, std::vector<Shape>& out) {
  const float horizon = static_cast<float>(rng.next_range(0.45, 0.65));
  out.push_back(disc(static_cast<float>(rng.next_range(0.15, 0.85)),
                     static_cast<float>(rng.next_range(0.08, 0.3)),
                     static_cast<float>(rng.next_range(0.04, 0.08)), 3));
  std::vector<float> far(17), near(17);
  for (float& h : far) h = horizon - 0.04f - 0.16f * static_cast<float>(rng.next_double());
  for (float& h : near) h = horizon + 0.06f + 0.14f * static_cast<float>(rng.next_double());
  out.push_back(ridge(std::move(far), 1));
  out.push_back(ridge(std::move(near), 2));
}

void scene_people(Rng& rng, std::vector<Shape>& out) {
  const int n = 1 + static_cast<int>(rng.next_below(3));
  const float base = 0.88f;
  for (int i = 0; i < n; ++i) {
    const float cx = static_cast<float>(rng.next_range(0.15, 0.85));
    const float h = static_cast<float>(rng.next_range(0.3, 0.5));
    const float head_r = h * 0.16f;
    const float top = base - h;
    out.push_back(disc(cx, top + head_r, head_r, 2));
    out.push_back(rect(cx - h * 0.11f, top + 2.1f * head_r, cx + h * 0.11f, base - h * 0.42f, 2));
    out.push_back(capsule(cx - h * 0.07f, base - h * 0.45f, cx - h * 0.1f, base, h * 0.035f, 2));
    out.push_back(capsule(cx + h * 0.07f, base - h * 0.45f, cx + h * 0.1f, base, h * 0.035f, 2));
    out.push_back(capsule(cx - h * 0.11f, top + 2.4f * head_r, cx - h * 0.2f, base - h * 0.5f,
                          h * 0.028f, 2));
    out.push_back(capsule(cx + h * 0.11f, top + 2.4f * head_r, cx + h * 0.2f, base - h * 0.5f,
                          h * 0.028f, 2));
  }
}

void scene_vehicles(Rng& rng, std::vector<Shape>& out) {
  const int n = 1 + static_cast<int>(rng.next_below(2));
  for (int i = 0; i < n; ++i) {
    const float y = static_cast<float>(rng.next_range(0.5, 0.82));
    const float len = static_cast<float>(rng.next_range(0.28, 0.42));
    const float h = static_cast<float>(rng.next_range(0.1, 0.16));
    const float cx = static_cast<float>(rng.next_range(0.25, 0.75));
    out.push_back(rect(cx - len / 2, y - h, cx + len / 2, y, 1));
    out.push_back(rect(cx - len * 0.2f, y - h - h * 0.8f, cx + len * 0.25f, y - h, 3));
    out.push_back(rect(cx - len * 0.12f, y - h - h * 0.62f, cx + len * 0.14f, y - h - h * 0.18f, 1));
    out.push_back(disc(cx - len * 0.32f, y, h * 0.45f, 2));
    out.push_back(disc(cx + len * 0.32f, y, h * 0.45f, 2));
  }
}

// Off-prompt composition used by language-override signatures: a loose pile
// of large plain discs, unlike any domain grammar (no limbs, rims, grids or
// baselines).
void scene_abstract_blobs(Rng& rng, std::vector<Shape>& out) {
  const int n = 3 + static_cast<int>(rng.next_below(3));
  for (int i = 0; i < n; ++i)
    out.push_back(disc(static_cast<float>(rng.next_range(0.1, 0.9)),
                       static_cast<float>(rng.next_range(0.1, 0.9)),
                       static_cast<float>(rng.next_range(0.14, 0.3)), 1 + i % 3));
}

void build_scene(int domain_id, Rng& rng, std::vector<Shape>& out) {
  switch (domain_id) {
    case 0: scene_animals(rng, out); break;
    case 1: scene_arts(rng, out); break;
    case 2: scene_buildings(rng, out); break;
    case 3: scene_clothing(rng, out); break;
    case 4: scene_food(rng, out); break;
    case 5: scene_household(rng, out); break;
    case 6: scene_interior(rng, out); break;
    case 7: scene_landscape(rng, out); break;
    case 8: scene_people(rng, out); break;
    case 9: scene_vehicles(rng, out); break;
    default: throw InternalError("build_scene: bad domain id");
  }
}

double lattice_value(uint64_t key, int64_t xi, int64_t yi) {
  const uint64_t h = hash_combine(hash_combine(key, static_cast<uint64_t>(xi)),
                                  static_cast<uint64_t>(yi));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Smoothstep-interpolated value noise in [0, 1].
double value_noise(uint64_t key, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto xi = static_cast<int64_t>(fx), yi = static_cast<int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3.0 - 2.0 * tx);
  ty = ty * ty * (3.0 - 2.0 * ty);
  const double v00 = lattice_value(key, xi, yi), v10 = lattice_value(key, xi + 1, yi);
  const double v01 = lattice_value(key, xi, yi + 1), v11 = lattice_value(key, xi + 1, yi + 1);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

}  // namespace

const char* motif_kind_name(MotifKind k) {
  switch (k) {
    case MotifKind::none: return "none";
    case MotifKind::corner_glyph: return "corner_glyph";
    case MotifKind::border_frame: return "border_frame";
    case MotifKind::vignette: return "vignette";
  }
  throw InternalError("unknown MotifKind");
}

MotifKind motif_kind_from_name(const std::string& name) {
  for (MotifKind k : {MotifKind::none, MotifKind::corner_glyph, MotifKind::border_frame,
                      MotifKind::vignette})
    if (name == motif_kind_name(k)) return k;
  throw ConfigError("unknown motif kind: " + name);
}

void GeneratorSignature::validate() const {
  if (name.empty()) throw ConfigError("signature name empty");
  if (palette.size() < 2) throw ConfigError("signature '" + name + "': palette needs >= 2 anchors");
  for (const auto& a : palette)
    for (float v : a)
      if (!(v >= 0.0f && v <= 1.0f))
        throw ConfigError("signature '" + name + "': palette values must be in [0,1]");
  if (palette_jitter < 0.0) throw ConfigError("signature '" + name + "': palette_jitter < 0");
  if (noise_grain < 1.0) throw ConfigError("signature '" + name + "': noise_grain must be >= 1");
  if (noise_amp < 0.0 || noise_amp > 0.5)
    throw ConfigError("signature '" + name + "': noise_amp outside [0, 0.5]");
  if (motif_strength < 0.0 || motif_strength > 1.0)
    throw ConfigError("signature '" + name + "': motif_strength outside [0, 1]");
  if (background_emptiness < 0.0 || background_emptiness > 1.0)
    throw ConfigError("signature '" + name + "': background_emptiness outside [0, 1]");
  if (sharpness < 0.0) throw ConfigError("signature '" + name + "': sharpness < 0");
  for (int lang : language_targets)
    if (lang < 0 || lang >= kLanguageCount)
      throw ConfigError("signature '" + name + "': language target out of range");
  if (language_mode != LanguageMode::none && language_targets.empty())
    throw ConfigError("signature '" + name + "': language mode set but no targets");
}

nlohmann::json GeneratorSignature::to_json() const {
  nlohmann::json pal = nlohmann::json::array();
  for (const auto& a : palette) pal.push_back({a[0], a[1], a[2]});
  nlohmann::json j{{"name", name},
                   {"palette", pal},
                   {"palette_jitter", palette_jitter},
                   {"noise_grain", noise_grain},
                   {"noise_amp", noise_amp},
                   {"motif_kind", motif_kind_name(motif_kind)},
                   {"motif_strength", motif_strength},
                   {"background_emptiness", background_emptiness},
                   {"sharpness", sharpness}};
  switch (language_mode) {
    case LanguageMode::none: break;
    case LanguageMode::scene_override: j["language_mode"] = "scene_override"; break;
    case LanguageMode::overlay: j["language_mode"] = "overlay"; break;
  }
  if (!language_targets.empty()) j["language_targets"] = language_targets;
  return j;
}

GeneratorSignature GeneratorSignature::from_json(const nlohmann::json& j) {
  GeneratorSignature sig;
  sig.name = j.at("name").get<std::string>();
  for (const auto& a : j.at("palette"))
    sig.palette.push_back({a.at(0).get<float>(), a.at(1).get<float>(), a.at(2).get<float>()});
  sig.palette_jitter = j.value("palette_jitter", 0.0);
  sig.noise_grain = j.value("noise_grain", 8.0);
  sig.noise_amp = j.value("noise_amp", 0.08);
  sig.motif_kind = motif_kind_from_name(j.value("motif_kind", std::string("none")));
  sig.motif_strength = j.value("motif_strength", 0.0);
  sig.background_emptiness = j.value("background_emptiness", 0.0);
  sig.sharpness = j.value("sharpness", 0.0);
  const std::string mode = j.value("language_mode", std::string("none"));
  if (mode == "none")
    sig.language_mode = LanguageMode::none;
  else if (mode == "scene_override")
    sig.language_mode = LanguageMode::scene_override;
  else if (mode == "overlay")
    sig.language_mode = LanguageMode::overlay;
  else
    throw ConfigError("unknown language mode: " + mode);
  if (j.contains("language_targets"))
    sig.language_targets = j.at("language_targets").get<std::vector<int>>();
  sig.validate();
  return sig;
}

bool signatures_distinct(const GeneratorSignature& a, const GeneratorSignature& b) {
  if (a.motif_kind != b.motif_kind) return true;
  const double ratio = a.noise_grain > b.noise_grain ? a.noise_grain / b.noise_grain
                                                     : b.noise_grain / a.noise_grain;
  if (ratio > 1.5) return true;
  const size_t n = std::min(a.palette.size(), b.palette.size());
  for (size_t i = 0; i < n; ++i) {
    double d2 = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = a.palette[i][c] - b.palette[i][c];
      d2 += d * d;
    }
    if (std::sqrt(d2) > 0.05) return true;
  }
  return a.palette.size() != b.palette.size();
}

void require_pairwise_distinct(const std::vector<GeneratorSignature>& sigs) {
  for (size_t i = 0; i < sigs.size(); ++i)
    for (size_t j = i + 1; j < sigs.size(); ++j)
      if (!signatures_distinct(sigs[i], sigs[j]))
        throw ConfigError("signatures '" + sigs[i].name + "' and '" + sigs[j].name +
                          "' are not distinct");
}

void ContentSpec::validate() const {
  if (domain_id < -1 || domain_id >= kDomainCount)
    throw ConfigError("domain_id out of range: " + std::to_string(domain_id));
  if (prompt_id < 0) throw ConfigError("prompt_id must be >= 0");
  if (language_id < 0 || language_id >= kLanguageCount)
    throw ConfigError("language_id out of range: " + std::to_string(language_id));
}

const std::vector<std::string>& domain_names() {
  static const std::vector<std::string> names = {
      "animals",         "arts_and_works", "buildings",  "clothing",   "food_and_drinks",
      "household_items", "interior_spaces", "landscapes", "people",     "vehicles"};
  return names;
}

const std::vector<std::string>& language_names() {
  static const std::vector<std::string> names = {"en", "es", "ja", "tr", "zh"};
  return names;
}

int domain_id_from_name(const std::string& name) {
  const auto& names = domain_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown domain: " + name);
  return static_cast<int>(it - names.begin());
}

int language_id_from_name(const std::string& name) {
  const auto& names = language_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown language: " + name);
  return static_cast<int>(it - names.begin());
}

std::vector<GeneratorSignature> default_signatures(int n) {
  if (n < 1 || n > 16) throw ConfigError("default_signatures: n must be in [1, 16]");
  static const double hue[16] = {0.00, 0.20, 0.40, 0.60, 0.80, 0.10, 0.30, 0.50,
                                 0.70, 0.90, 0.05, 0.25, 0.45, 0.65, 0.85, 0.15};
  static const double grain[16] = {9, 14, 6, 11, 8, 16, 7, 12, 10, 18, 6.5, 13, 9.5, 20, 7.5, 15};
  static const double amp[16] = {0.07, 0.10, 0.05, 0.09, 0.11, 0.06, 0.10, 0.08,
                                 0.07, 0.09, 0.11, 0.05, 0.08, 0.10, 0.06, 0.09};
  static const MotifKind motif[16] = {
      MotifKind::corner_glyph, MotifKind::none,         MotifKind::border_frame,
      MotifKind::none,         MotifKind::vignette,     MotifKind::border_frame,
      MotifKind::corner_glyph, MotifKind::none,         MotifKind::vignette,
      MotifKind::corner_glyph, MotifKind::border_frame, MotifKind::none,
      MotifKind::vignette,     MotifKind::corner_glyph, MotifKind::border_frame,
      MotifKind::none};
  static const double strength[16] = {0.9,  0, 0.8, 0,    0.6,  0.7, 0.85, 0,
                                      0.5,  0.75, 0.9, 0, 0.55, 0.8, 0.7,  0};
  static const double emptiness[16] = {0.15, 0.35, 0.00, 0.90, 0.25, 0.10, 0.40, 0.20,
                                       0.05, 0.30, 0.15, 0.50, 0.00, 0.25, 0.10, 0.35};
  static const double sharp[16] = {0, 0.7, 0, 0.5, 0, 0.9, 0.4, 0, 0.6, 0, 0.8, 0.3, 0, 0.5, 0, 0.7};
  static const double jitter[16] = {0.015, 0.02, 0.01,  0.02, 0.015, 0.01,  0.02, 0.015,
                                    0.01,  0.02, 0.015, 0.01, 0.02,  0.015, 0.01, 0.02};

  std::vector<GeneratorSignature> sigs;
  for (int i = 0; i < n; ++i) {
    GeneratorSignature sig = make_signature("m" + pad2(i), hue[i], jitter[i], grain[i], amp[i],
                                            motif[i], strength[i], emptiness[i], sharp[i]);
    if (i == 3) {
      sig.language_mode = LanguageMode::scene_override;
      sig.language_targets = {2, 3};
    } else if (i == 4) {
      sig.language_mode = LanguageMode::overlay;
      sig.language_targets = {2, 4};
    }
    sig.validate();
    sigs.push_back(std::move(sig));
  }
  return sigs;
}

std::vector<GeneratorSignature> identical_signatures(int n) {
  if (n < 1 || n > 16) throw ConfigError("identical_signatures: n must be in [1, 16]");
  const GeneratorSignature base = default_signatures(1)[0];
  std::vector<GeneratorSignature> sigs;
  for (int i = 0; i < n; ++i) {
    GeneratorSignature sig = base;
    sig.name = "i" + pad2(i);
    sigs.push_back(std::move(sig));
  }
  return sigs;
}

std::vector<GeneratorSignature> palette_only_signatures(int n) {
  if (n < 1 || n > 8) throw ConfigError("palette_only_signatures: n must be in [1, 8]");
  static const double hue[8] = {0.02, 0.22, 0.42, 0.62, 0.82, 0.12, 0.32, 0.52};
  std::vector<GeneratorSignature> sigs;
  for (int i = 0; i < n; ++i)
    sigs.push_back(make_signature("p" + pad2(i), hue[i], 0.012, 10.0, 0.06, MotifKind::none, 0.0,
                                  0.45, 0.0));
  return sigs;
}

std::vector<GeneratorSignature> texture_only_signatures(int n) {
  if (n < 1 || n > 5) throw ConfigError("texture_only_signatures: n must be in [1, 5]");
  // Non-integer grains keep pixel offsets within lattice cells equidistributed,
  // so the per-pixel color distribution stays grain-independent and the only
  // class signal is spatial. The amplitude sits well above the scene variance
  // so the spatial cue is learnable at small train sizes.
  static const double grain[5] = {5.3, 8.1, 12.7, 19.3, 29.4};
  std::vector<GeneratorSignature> sigs;
  for (int i = 0; i < n; ++i)
    sigs.push_back(make_signature("t" + pad2(i), 0.57, 0.0, grain[i], 0.18, MotifKind::none, 0.0,
                                  0.3, 0.0));
  return sigs;
}

std::vector<GeneratorSignature> style_overlap_signatures(int n) {
  if (n < 1 || n > 5) throw ConfigError("style_overlap_signatures: n must be in [1, 5]");
  static const double hue[5] = {0.50, 0.55, 0.60, 0.65, 0.70};
  static const double grain[5] = {5.5, 8.3, 12.9, 19.6, 29.5};
  static const double amp[5] = {0.10, 0.12, 0.08, 0.11, 0.09};
  static const MotifKind motif[5] = {MotifKind::corner_glyph, MotifKind::border_frame,
                                     MotifKind::vignette, MotifKind::corner_glyph,
                                     MotifKind::none};
  static const double strength[5] = {0.8, 0.8, 0.7, 0.4, 0.0};
  static const double emptiness[5] = {0.2, 0.5, 0.1, 0.75, 0.35};
  static const double sharp[5] = {0.0, 0.6, 0.0, 1.0, 0.3};
  std::vector<GeneratorSignature> sigs;
  for (int i = 0; i < n; ++i)
    sigs.push_back(make_signature("o" + pad2(i), hue[i], 0.07, grain[i], amp[i], motif[i],
                                  strength[i], emptiness[i], sharp[i]));
  return sigs;
}

PixelRect motif_region(MotifKind kind, int size) {
  switch (kind) {
    case MotifKind::none:
      return {0, 0, 0, 0};
    case MotifKind::corner_glyph: {
      const int extent = static_cast<int>(std::ceil(size * (0.125 + 0.15625 + 0.0209))) + 2;
      return {0, 0, std::min(extent, size), std::min(extent, size)};
    }
    case MotifKind::border_frame:
    case MotifKind::vignette:
      return {0, 0, size, size};
  }
  throw InternalError("unknown MotifKind");
}

ImageBuffer render(const GeneratorSignature& sig, const ContentSpec& content, uint64_t seed,
                   int size) {
  sig.validate();
  content.validate();
  if (size < 32) throw ConfigError("render: size must be >= 32");

  Rng layout_rng(hash_combine(seed, hash_str("layout")));
  Rng style_rng(hash_combine(seed, hash_str("style")));
  const uint64_t noise_key = hash_combine(seed, hash_str("noise"));

  // Style draws in fixed order, consumed regardless of parameter values so
  // signatures sharing a seed share the same underlying stream.
  const double hue_rot = style_rng.next_gaussian() * sig.palette_jitter * kTau;
  const bool flat_bg = style_rng.next_double() < sig.background_emptiness;

  const int K = static_cast<int>(sig.palette.size());
  std::vector<std::array<float, 3>> anchors(K);
  const double cos_r = std::cos(hue_rot), sin_r = std::sin(hue_rot);
  for (int i = 0; i < K; ++i) {
    double y, cb, cr;
    rgb_to_ycbcr(sig.palette[i], y, cb, cr);
    anchors[i] = ycbcr_to_rgb(y, cb * cos_r - cr * sin_r, cb * sin_r + cr * cos_r);
  }

  const bool lang_hit = std::find(sig.language_targets.begin(), sig.language_targets.end(),
                                  content.language_id) != sig.language_targets.end();

  std::vector<Shape> shapes;
  if (sig.language_mode == LanguageMode::scene_override && lang_hit) {
    scene_abstract_blobs(layout_rng, shapes);
  } else if (content.domain_id >= 0) {
    build_scene(content.domain_id, layout_rng, shapes);
  }
  if (sig.language_mode == LanguageMode::overlay && lang_hit) {
    shapes.push_back(disc(0.80f, 0.70f, 0.05f, 2));
    shapes.push_back(rect(0.755f, 0.76f, 0.845f, 0.93f, 2));
  }

  FloatImage img(size, size);
  double bg_y, bg_cb, bg_cr;
  rgb_to_ycbcr(anchors[0], bg_y, bg_cb, bg_cr);
  for (int py = 0; py < size; ++py) {
    const double v = (py + 0.5) / size;
    const auto c = flat_bg ? anchors[0] : ycbcr_to_rgb(bg_y + 0.06 * (v - 0.5), bg_cb, bg_cr);
    for (int px = 0; px < size; ++px)
      for (int ch = 0; ch < 3; ++ch) img.at(px, py, ch) = c[ch];
  }

  for (const Shape& s : shapes) {
    const auto& c = anchors[s.slot % K];
    for (int py = 0; py < size; ++py) {
      const float y = (py + 0.5f) / size;
      for (int px = 0; px < size; ++px) {
        if (!covers(s, (px + 0.5f) / size, y)) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(px, py, ch) = c[ch];
      }
    }
  }

  const float alpha = static_cast<float>(sig.motif_strength);
  if (sig.motif_kind == MotifKind::corner_glyph && alpha > 0.0f) {
    const auto& c = anchors[2 % K];
    const Shape glyph = disc(0.125f, 0.125f, 1.0f / 12.0f, 2);
    const Shape halo = ring(0.125f, 0.125f, 0.15625f, 1.0f / 48.0f, 2);
    const int extent = motif_region(MotifKind::corner_glyph, size).x1;
    for (int py = 0; py < extent; ++py)
      for (int px = 0; px < extent; ++px) {
        const float x = (px + 0.5f) / size, y = (py + 0.5f) / size;
        if (!covers(glyph, x, y) && !covers(halo, x, y)) continue;
        for (int ch = 0; ch < 3; ++ch)
          img.at(px, py, ch) = (1.0f - alpha) * img.at(px, py, ch) + alpha * c[ch];
      }
  } else if (sig.motif_kind == MotifKind::border_frame && alpha > 0.0f) {
    const auto& c = anchors[2 % K];
    const int w = std::max(1, static_cast<int>(size / 22.0));
    for (int py = 0; py < size; ++py)
      for (int px = 0; px < size; ++px) {
        if (px >= w && px < size - w && py >= w && py < size - w) continue;
        for (int ch = 0; ch < 3; ++ch)
          img.at(px, py, ch) = (1.0f - alpha) * img.at(px, py, ch) + alpha * c[ch];
      }
  } else if (sig.motif_kind == MotifKind::vignette && alpha > 0.0f) {
    const float half = size / 2.0f;
    for (int py = 0; py < size; ++py)
      for (int px = 0; px < size; ++px) {
        const float dx = (px + 0.5f - half) / half, dy = (py + 0.5f - half) / half;
        const float f = 1.0f - alpha * 0.55f * 0.5f * (dx * dx + dy * dy);
        for (int ch = 0; ch < 3; ++ch) img.at(px, py, ch) *= f;
      }
  }

  if (sig.noise_amp > 0.0) {
    const float amp = static_cast<float>(sig.noise_amp);
    for (int py = 0; py < size; ++py)
      for (int px = 0; px < size; ++px) {
        const double n =
            value_noise(noise_key, (px + 0.5) / sig.noise_grain, (py + 0.5) / sig.noise_grain);
        const float dl = amp * static_cast<float>(2.0 * n - 1.0);
        for (int ch = 0; ch < 3; ++ch) img.at(px, py, ch) += dl;
      }
  }

  if (sig.sharpness > 0.0) img = gaussian_blur_stddev(img, sig.sharpness);

  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return to_bytes(img);
}

std::vector<ManifestRow> generate_corpus(const CorpusSpec& spec, int workers) {
  if (spec.per_cell < 1) throw ConfigError("generate_corpus: per_cell must be >= 1");
  if (spec.image_size < 32) throw ConfigError("generate_corpus: image_size must be >= 32");
  if (spec.signatures.empty()) throw ConfigError("generate_corpus: no signatures");
  if (spec.out_dir.empty()) throw ConfigError("generate_corpus: out_dir empty");
  {
    std::set<std::string> names;
    for (const auto& sig : spec.signatures) {
      sig.validate();
      if (!names.insert(sig.name).second)
        throw ConfigError("generate_corpus: duplicate signature name '" + sig.name + "'");
    }
  }
  if (spec.require_distinct) require_pairwise_distinct(spec.signatures);
  if (spec.domains.empty() || spec.languages.empty())
    throw ConfigError("generate_corpus: domains and languages must be non-empty");

  std::vector<int> domain_ids, language_ids;
  for (const auto& d : spec.domains) domain_ids.push_back(domain_id_from_name(d));
  for (const auto& l : spec.languages) language_ids.push_back(language_id_from_name(l));

  namespace fs = std::filesystem;
  const fs::path root(spec.out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DataError("generate_corpus: cannot create " + spec.out_dir + ": " + ec.message());

  struct Cell {
    size_t sig;
    size_t dom;
    size_t lang;
  };
  std::vector<Cell> cells;
  for (size_t s = 0; s < spec.signatures.size(); ++s)
    for (size_t d = 0; d < spec.domains.size(); ++d)
      for (size_t l = 0; l < spec.languages.size(); ++l) {
        cells.push_back({s, d, l});
        fs::create_directories(
            root / spec.signatures[s].name / spec.domains[d] / spec.languages[l], ec);
        if (ec) throw DataError("generate_corpus: mkdir failed: " + ec.message());
      }

  std::vector<ManifestRow> rows(cells.size() * spec.per_cell);
  parallel_chunks(static_cast<int64_t>(cells.size()), workers, [&](int64_t ci) {
    const Cell& cell = cells[static_cast<size_t>(ci)];
    const GeneratorSignature& sig = spec.signatures[cell.sig];
    const std::string& domain = spec.domains[cell.dom];
    const std::string& language = spec.languages[cell.lang];
    for (int p = 0; p < spec.per_cell; ++p) {
      char prompt_str[16];
      std::snprintf(prompt_str, sizeof(prompt_str), "%06d", p);
      ManifestRow row;
      row.id = sig.name + "/" + domain + "/" + language + "/" + prompt_str;
      row.path = row.id + ".png";
      row.model = sig.name;
      row.domain = domain;
      row.language = language;
      row.prompt_id = p;

      uint64_t h = hash_str(row.model);
      h = hash_combine(h, hash_str(row.domain));
      h = hash_combine(h, hash_str(row.language));
      h = hash_combine(h, static_cast<uint64_t>(row.prompt_id));
      const uint64_t image_seed = spec.seed ^ h;

      ContentSpec content{domain_ids[cell.dom], row.prompt_id, language_ids[cell.lang]};
      const ImageBuffer img = render(sig, content, image_seed, spec.image_size);
      write_png_file(img, (root / row.path).string());
      rows[static_cast<size_t>(ci) * spec.per_cell + p] = std::move(row);
    }
  });

  std::sort(rows.begin(), rows.end(),
            [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; });
  save_manifest(rows, (root / "manifest.jsonl").string());
  return rows;
}

}  // namespace umat
