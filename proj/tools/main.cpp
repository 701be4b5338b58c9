// umat: command-line front end for the attribution toolkit.
//
// Subcommands: gen, train, eval, experiment, mllm, report, selftest.
// Shared flags: --config <json>, --seed, --out <dir>, --workers, --precision.
// Configs are versioned JSON documents; flags override scalar fields. Every
// run directory receives the resolved config (config.json) and a run_info.json
// with timing, and result payloads embed a hash of the resolved config.
// Exit codes: 0 success, 1 user error, 2 internal error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "umat/canonical_json.hpp"
#include "umat/classifiers.hpp"
#include "umat/dataset.hpp"
#include "umat/error.hpp"
#include "umat/experiments.hpp"
#include "umat/mllm.hpp"
#include "umat/report.hpp"
#include "umat/rng.hpp"
#include "umat/synthgen.hpp"
#include "umat/transforms.hpp"
#include "umat/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace umat;

struct Flags {
  std::string config;
  std::string out;
  std::string precision;
  uint64_t seed = 0;
  bool has_seed = false;
  bool has_precision = false;
  int workers = 1;
};

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_hash_hex(const json& resolved) { return hex64(hash_str(canonical_dump(resolved))); }

std::string pct(double fraction, int decimals = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, 100.0 * fraction);
  return buf;
}

// ---- config field access; every error names the offending field ----

const json& require_field(const json& cfg, const std::string& field) {
  if (!cfg.contains(field)) throw ConfigError("config field '" + field + "' is required");
  return cfg.at(field);
}

std::string require_string(const json& cfg, const std::string& field) {
  const json& v = require_field(cfg, field);
  if (!v.is_string()) throw ConfigError("config field '" + field + "' must be a string");
  return v.get<std::string>();
}

int64_t int_field(const json& v, const std::string& field) {
  if (!v.is_number_integer()) throw ConfigError("config field '" + field + "' must be an integer");
  return v.get<int64_t>();
}

int require_int(const json& cfg, const std::string& field) {
  return static_cast<int>(int_field(require_field(cfg, field), field));
}

int get_int(const json& cfg, const std::string& field, int def) {
  if (!cfg.contains(field)) return def;
  return static_cast<int>(int_field(cfg.at(field), field));
}

uint64_t get_u64(const json& cfg, const std::string& field, uint64_t def) {
  if (!cfg.contains(field)) return def;
  const json& v = cfg.at(field);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<int64_t>() < 0))
    throw ConfigError("config field '" + field + "' must be a non-negative integer");
  return v.get<uint64_t>();
}

bool get_bool(const json& cfg, const std::string& field, bool def) {
  if (!cfg.contains(field)) return def;
  const json& v = cfg.at(field);
  if (!v.is_boolean()) throw ConfigError("config field '" + field + "' must be a boolean");
  return v.get<bool>();
}

double get_double(const json& cfg, const std::string& field, double def) {
  if (!cfg.contains(field)) return def;
  const json& v = cfg.at(field);
  if (!v.is_number()) throw ConfigError("config field '" + field + "' must be a number");
  return v.get<double>();
}

std::string get_string(const json& cfg, const std::string& field, const std::string& def) {
  if (!cfg.contains(field)) return def;
  const json& v = cfg.at(field);
  if (!v.is_string()) throw ConfigError("config field '" + field + "' must be a string");
  return v.get<std::string>();
}

std::vector<int> require_int_array(const json& cfg, const std::string& field) {
  const json& v = require_field(cfg, field);
  if (!v.is_array()) throw ConfigError("config field '" + field + "' must be an array of integers");
  std::vector<int> out;
  for (const json& e : v) out.push_back(static_cast<int>(int_field(e, field)));
  return out;
}

std::vector<int> get_int_array(const json& cfg, const std::string& field, std::vector<int> def) {
  if (!cfg.contains(field)) return def;
  return require_int_array(cfg, field);
}

json load_config_file(const std::string& path) {
  if (path.empty()) throw ConfigError("this subcommand requires --config <file>");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config " + path + ": top level must be an object");
  const json& ver = require_field(cfg, "schema_version");
  if (!ver.is_number_integer() || ver.get<int>() != 1)
    throw ConfigError("config field 'schema_version' must be the integer 1");
  return cfg;
}

uint64_t resolve_seed(const Flags& flags, const json& cfg) {
  return flags.has_seed ? flags.seed : get_u64(cfg, "seed", 0);
}

Precision resolve_precision(const Flags& flags, const json& cfg) {
  const std::string name =
      flags.has_precision ? flags.precision : get_string(cfg, "precision", "single");
  try {
    return precision_from_name(name);
  } catch (const std::exception&) {
    throw ConfigError("config field 'precision' must be 'single' or 'double'");
  }
}

const std::string& require_out(const Flags& flags) {
  if (flags.out.empty()) throw ConfigError("this subcommand requires --out <dir>");
  return flags.out;
}

void validate_workers(const Flags& flags) {
  if (flags.workers < 1) throw ConfigError("--workers must be >= 1");
}

// ---- synthesis block ----

std::vector<GeneratorSignature> parse_signatures(const json& block, json& echo, bool& identical) {
  const json spec = block.contains("signatures") ? block.at("signatures") : json("default");
  identical = false;
  if (spec.is_string()) {
    const std::string name = spec.get<std::string>();
    const int n = get_int(block, "n_models", 5);
    if (n < 1 || n > 16) throw ConfigError("config field 'n_models' must be in [1, 16]");
    std::vector<GeneratorSignature> sigs;
    if (name == "default")
      sigs = default_signatures(n);
    else if (name == "identical")
      sigs = identical_signatures(n);
    else if (name == "palette_only")
      sigs = palette_only_signatures(n);
    else if (name == "texture_only")
      sigs = texture_only_signatures(n);
    else if (name == "style_overlap")
      sigs = style_overlap_signatures(n);
    else
      throw ConfigError("config field 'signatures' names unknown table '" + name + "'");
    identical = name == "identical";
    echo = json{{"signatures", name}, {"n_models", n}};
    return sigs;
  }
  if (spec.is_array()) {
    if (spec.empty()) throw ConfigError("config field 'signatures' must not be empty");
    std::vector<GeneratorSignature> sigs;
    json echo_sigs = json::array();
    for (size_t i = 0; i < spec.size(); ++i) {
      try {
        sigs.push_back(GeneratorSignature::from_json(spec[i]));
      } catch (const std::exception& e) {
        throw ConfigError("config field 'signatures[" + std::to_string(i) + "]': " + e.what());
      }
      echo_sigs.push_back(sigs.back().to_json());
    }
    echo = json{{"signatures", std::move(echo_sigs)}};
    return sigs;
  }
  throw ConfigError("config field 'signatures' must be a table name or an array of signatures");
}

std::vector<std::string> parse_axis(const json& block, const std::string& field,
                                    const std::vector<std::string>& all,
                                    const std::string& fallback) {
  if (!block.contains(field)) return {fallback};
  const json& v = block.at(field);
  if (v.is_number_integer()) {
    const int k = static_cast<int>(v.get<int64_t>());
    if (k < 1 || k > static_cast<int>(all.size()))
      throw ConfigError("config field '" + field + "' must be in [1, " +
                        std::to_string(all.size()) + "]");
    return {all.begin(), all.begin() + k};
  }
  if (v.is_array()) {
    std::vector<std::string> names;
    for (const json& e : v) {
      if (!e.is_string()) throw ConfigError("config field '" + field + "' must list names");
      const std::string name = e.get<std::string>();
      if (std::find(all.begin(), all.end(), name) == all.end())
        throw ConfigError("config field '" + field + "' contains unknown name '" + name + "'");
      names.push_back(name);
    }
    if (names.empty()) throw ConfigError("config field '" + field + "' must not be empty");
    return names;
  }
  throw ConfigError("config field '" + field + "' must be a count or an array of names");
}

struct SynthesisPlan {
  CorpusSpec spec;
  json echo;  // normalized block, reproducible from config.json alone
};

SynthesisPlan parse_synthesis(const json& block) {
  if (!block.is_object()) throw ConfigError("config field 'synthesis' must be an object");
  SynthesisPlan plan;
  bool identical = false;
  plan.spec.signatures = parse_signatures(block, plan.echo, identical);
  plan.spec.domains = parse_axis(block, "domains", domain_names(), "animals");
  plan.spec.languages = parse_axis(block, "languages", language_names(), "en");
  plan.spec.per_cell = get_int(block, "per_cell", 100);
  plan.spec.image_size = get_int(block, "image_size", 64);
  plan.spec.require_distinct = get_bool(block, "require_distinct", !identical);
  plan.echo["domains"] = plan.spec.domains;
  plan.echo["languages"] = plan.spec.languages;
  plan.echo["per_cell"] = plan.spec.per_cell;
  plan.echo["image_size"] = plan.spec.image_size;
  plan.echo["require_distinct"] = plan.spec.require_distinct;
  return plan;
}

struct CorpusHandle {
  std::string root;
  std::vector<ManifestRow> rows;
};

// Either points at an existing corpus or synthesizes one under run_dir. The
// synthesis seed is derived from the run seed, so one seed reproduces both
// the corpus and everything trained on it.
CorpusHandle acquire_corpus(const json& cfg, const fs::path& run_dir, uint64_t seed, int workers,
                            json& resolved) {
  const bool has_corpus = cfg.contains("corpus");
  const bool has_synth = cfg.contains("synthesis");
  if (has_corpus == has_synth)
    throw ConfigError("config must set exactly one of 'corpus' and 'synthesis'");
  CorpusHandle handle;
  if (has_corpus) {
    handle.root = require_string(cfg, "corpus");
    handle.rows = load_manifest((fs::path(handle.root) / "manifest.jsonl").string());
    resolved["corpus"] = handle.root;
  } else {
    SynthesisPlan plan = parse_synthesis(cfg.at("synthesis"));
    plan.spec.out_dir = (run_dir / "corpus").string();
    plan.spec.seed = hash_combine(seed, hash_str("corpus"));
    handle.rows = generate_corpus(plan.spec, workers);
    handle.root = plan.spec.out_dir;
    resolved["synthesis"] = plan.echo;
  }
  return handle;
}

RowFilter parse_filter(const json& cfg, json& resolved) {
  RowFilter filter;
  if (!cfg.contains("filter")) return filter;
  const json& f = cfg.at("filter");
  if (!f.is_object()) throw ConfigError("config field 'filter' must be an object");
  json echo = json::object();
  if (f.contains("model")) echo["model"] = *(filter.model = require_string(f, "model"));
  if (f.contains("domain")) echo["domain"] = *(filter.domain = require_string(f, "domain"));
  if (f.contains("language")) echo["language"] = *(filter.language = require_string(f, "language"));
  resolved["filter"] = echo;
  return filter;
}

TransformSpec parse_transform(const json& cfg, const std::string& field, json& resolved) {
  TransformSpec spec;
  if (!cfg.contains(field)) return spec;
  try {
    spec = TransformSpec::from_json(cfg.at(field));
  } catch (const std::exception& e) {
    throw ConfigError("config field '" + field + "': " + e.what());
  }
  resolved[field] = spec.to_json();
  return spec;
}

void write_run_files(const fs::path& dir, const json& resolved, double wall_seconds,
                     int workers) {
  write_canonical_json(resolved, (dir / "config.json").string());
  const json info = {{"config_hash", config_hash_hex(resolved)},
                     {"toolkit_version", kToolkitVersion},
                     {"wall_clock_seconds", wall_seconds},
                     {"workers", workers}};
  write_canonical_json(info, (dir / "run_info.json").string());
}

class WallClock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---- subcommands ----

int cmd_gen(const Flags& flags) {
  const json cfg = load_config_file(flags.config);
  const uint64_t seed = resolve_seed(flags, cfg);
  const fs::path out = require_out(flags);
  WallClock clock;

  SynthesisPlan plan = parse_synthesis(cfg.contains("synthesis") ? cfg.at("synthesis") : cfg);
  plan.spec.out_dir = out.string();
  plan.spec.seed = seed;
  const std::vector<ManifestRow> rows = generate_corpus(plan.spec, flags.workers);
  const uint64_t fingerprint = corpus_fingerprint(plan.spec.out_dir, rows);

  const json resolved = {{"schema_version", 1},
                         {"command", "gen"},
                         {"seed", seed},
                         {"synthesis", plan.echo}};
  write_run_files(out, resolved, clock.seconds(), flags.workers);
  std::cout << "wrote " << rows.size() << " images (" << plan.spec.signatures.size()
            << " models x " << plan.spec.domains.size() << " domains x "
            << plan.spec.languages.size() << " languages x " << plan.spec.per_cell
            << " prompts) to " << out.string() << "\n";
  std::cout << "corpus fingerprint " << hex64(fingerprint) << "\n";
  return 0;
}

int cmd_train(const Flags& flags) {
  const json cfg = load_config_file(flags.config);
  const uint64_t seed = resolve_seed(flags, cfg);
  const Precision precision = resolve_precision(flags, cfg);
  const fs::path out = require_out(flags);
  fs::create_directories(out);
  WallClock clock;

  const std::string classifier = get_string(cfg, "classifier", "convnet");
  if (classifier != "convnet" && classifier != "hist")
    throw ConfigError("config field 'classifier' must be 'convnet' or 'hist'");
  ClassKey label_key = ClassKey::model;
  try {
    label_key = class_key_from_name(get_string(cfg, "label_key", "model"));
  } catch (const std::exception&) {
    throw ConfigError("config field 'label_key' must be 'model', 'domain' or 'language'");
  }

  const std::string corpus = require_string(cfg, "corpus");
  const std::vector<ManifestRow> rows =
      load_manifest((fs::path(corpus) / "manifest.jsonl").string());

  json resolved = {{"schema_version", 1}, {"command", "train"},
                   {"seed", seed},        {"precision", precision_name(precision)},
                   {"classifier", classifier}, {"label_key", class_key_name(label_key)},
                   {"corpus", corpus}};
  SplitSpec split_spec;
  split_spec.train_per_class = require_int(cfg, "train_per_class");
  split_spec.test_per_class = get_int(cfg, "test_per_class", 0);
  split_spec.class_key = label_key;
  split_spec.filter = parse_filter(cfg, resolved);
  split_spec.seed = hash_combine(seed, hash_str("split"));
  resolved["train_per_class"] = split_spec.train_per_class;
  resolved["test_per_class"] = split_spec.test_per_class;
  const TransformSpec transform = parse_transform(cfg, "transform", resolved);
  const Split split = make_split(rows, split_spec);

  Checkpoint ckpt;
  if (classifier == "convnet") {
    TrainConfig tc = cfg.contains("train") ? TrainConfig::from_json(cfg.at("train")) : TrainConfig{};
    tc.seed = seed;
    SmallConvNetConfig arch =
        cfg.contains("arch") ? SmallConvNetConfig::from_json(cfg.at("arch")) : SmallConvNetConfig{};
    resolved["train"] = tc.to_json();
    resolved["arch"] = arch.to_json();
    ckpt = train_convnet(corpus, split.train, transform, tc, arch, precision, flags.workers,
                         label_key);
  } else {
    ckpt = train_hist_baseline(corpus, split.train, transform, flags.workers, label_key);
  }

  const std::string ckpt_path = (out / "checkpoint.umat").string();
  save_checkpoint(ckpt, ckpt_path);
  save_manifest(split.train, (out / "train.jsonl").string());
  if (!split.test.empty()) save_manifest(split.test, (out / "test.jsonl").string());
  write_run_files(out, resolved, clock.seconds(), flags.workers);

  std::cout << "trained " << ckpt.kind << " (" << ckpt.param_count() << " parameters, "
            << ckpt.n_classes << " classes, " << split.train.size()
            << " training images), final loss " << ckpt.meta.final_loss << "\n";
  std::cout << "checkpoint: " << ckpt_path << "\n";
  if (!split.test.empty())
    std::cout << "held-out test manifest: " << (out / "test.jsonl").string() << "\n";
  return 0;
}

void print_confusion(const ConfusionMatrix& cm) {
  size_t width = 5;
  for (const std::string& label : cm.labels) width = std::max(width, label.size());
  for (int64_t c : cm.counts) width = std::max(width, std::to_string(c).size());
  const auto pad = [&](const std::string& s) {
    return std::string(width - std::min(width, s.size()), ' ') + s;
  };
  std::cout << "confusion matrix (rows = true, columns = predicted)\n";
  std::cout << pad("");
  for (const std::string& label : cm.labels) std::cout << ' ' << pad(label);
  std::cout << "\n";
  for (int t = 0; t < cm.n(); ++t) {
    std::cout << pad(cm.labels[t]);
    for (int p = 0; p < cm.n(); ++p) std::cout << ' ' << pad(std::to_string(cm.at(t, p)));
    std::cout << "\n";
  }
}

int cmd_eval(const Flags& flags) {
  const json cfg = load_config_file(flags.config);
  const uint64_t seed = resolve_seed(flags, cfg);
  const fs::path out = require_out(flags);
  WallClock clock;

  const std::string ckpt_path = require_string(cfg, "checkpoint");
  const std::string corpus = require_string(cfg, "corpus");
  const std::string manifest =
      get_string(cfg, "manifest", (fs::path(corpus) / "manifest.jsonl").string());

  json resolved = {{"schema_version", 1}, {"command", "eval"},       {"seed", seed},
                   {"checkpoint", ckpt_path}, {"corpus", corpus},    {"manifest", manifest}};
  const RowFilter filter = parse_filter(cfg, resolved);
  const TransformSpec transform = parse_transform(cfg, "transform", resolved);

  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  std::vector<ManifestRow> rows = load_manifest(manifest);
  std::erase_if(rows, [&](const ManifestRow& row) { return !filter.matches(row); });
  if (rows.empty()) throw DataError("no manifest rows left to evaluate after filtering");

  const PredictResult pred = predict(ckpt, corpus, rows, transform, flags.workers);
  const ConfusionMatrix cm = make_confusion(ckpt.labels, pred.predicted, pred.true_labels);

  ExperimentResult result;
  result.kind = "eval";
  result.seed = seed;
  result.toolkit_version = kToolkitVersion;
  result.corpus_fingerprint = corpus_fingerprint(corpus, rows);
  result.config_hash = config_hash_hex(resolved);
  result.config = resolved;
  CellResult cell;
  cell.key = "eval";
  cell.accuracy = cm.accuracy();
  cell.confusion = cm;
  cell.test_fingerprint = result.corpus_fingerprint;
  result.cells.push_back(std::move(cell));
  result.wall_clock_seconds = clock.seconds();
  emit_experiment_report(result, out.string());
  write_run_files(out, resolved, clock.seconds(), flags.workers);

  int64_t trace = 0;
  for (int i = 0; i < cm.n(); ++i) trace += cm.at(i, i);
  print_confusion(cm);
  std::cout << "accuracy: " << pct(cm.accuracy(), 4) << "% (" << trace << "/" << cm.total()
            << ")\n";
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_experiment(const Flags& flags) {
  const json cfg = load_config_file(flags.config);
  const uint64_t seed = resolve_seed(flags, cfg);
  const std::string kind = require_string(cfg, "experiment");
  static const std::set<std::string> kKinds = {"scaling", "corruption_ablation",
                                               "structural_ablation", "ood_matrix",
                                               "language_attribution"};
  if (!kKinds.count(kind)) {
    std::string names;
    for (const std::string& k : kKinds) names += (names.empty() ? "" : ", ") + k;
    throw ConfigError("config field 'experiment' must be one of: " + names);
  }

  const fs::path run_dir = fs::path(require_out(flags)) / (kind + "_seed" + std::to_string(seed));
  fs::create_directories(run_dir);
  WallClock clock;

  json resolved = {{"schema_version", 1},
                   {"command", "experiment"},
                   {"experiment", kind},
                   {"seed", seed}};
  ExperimentContext ctx;
  ctx.precision = resolve_precision(flags, cfg);
  ctx.seed = seed;
  ctx.workers = flags.workers;
  ctx.shuffle_labels = get_bool(cfg, "shuffle_labels", false);
  ctx.arch =
      cfg.contains("arch") ? SmallConvNetConfig::from_json(cfg.at("arch")) : SmallConvNetConfig{};
  ctx.train = cfg.contains("train") ? TrainConfig::from_json(cfg.at("train")) : TrainConfig{};
  ctx.train.seed = 0;  // per-cell seeds are derived from ctx.seed
  resolved["precision"] = precision_name(ctx.precision);
  resolved["shuffle_labels"] = ctx.shuffle_labels;
  resolved["arch"] = ctx.arch.to_json();
  resolved["train"] = ctx.train.to_json();

  const CorpusHandle corpus = acquire_corpus(cfg, run_dir, seed, flags.workers, resolved);
  ctx.corpus_root = corpus.root;
  ctx.rows = corpus.rows;

  ExperimentResult result;
  if (kind == "scaling") {
    const std::vector<int> sizes = require_int_array(cfg, "sizes");
    const int test_per_class = require_int(cfg, "test_per_class");
    resolved["sizes"] = sizes;
    resolved["test_per_class"] = test_per_class;
    result = run_scaling(ctx, sizes, test_per_class);
  } else if (kind == "corruption_ablation") {
    std::vector<TransformSpec> specs;
    json echo = json::array();
    if (cfg.contains("transforms")) {
      const json& list = cfg.at("transforms");
      if (!list.is_array()) throw ConfigError("config field 'transforms' must be an array");
      for (size_t i = 0; i < list.size(); ++i) {
        try {
          specs.push_back(TransformSpec::from_json(list[i]));
        } catch (const std::exception& e) {
          throw ConfigError("config field 'transforms[" + std::to_string(i) + "]': " + e.what());
        }
        echo.push_back(specs.back().to_json());
      }
    }
    const int train_per_class = require_int(cfg, "train_per_class");
    const int test_per_class = require_int(cfg, "test_per_class");
    resolved["transforms"] = echo;
    resolved["train_per_class"] = train_per_class;
    resolved["test_per_class"] = test_per_class;
    result = run_corruption_ablation(ctx, specs, train_per_class, test_per_class);
  } else if (kind == "structural_ablation") {
    const int train_per_class = require_int(cfg, "train_per_class");
    const int test_per_class = require_int(cfg, "test_per_class");
    std::vector<std::string> external_dirs;
    if (cfg.contains("external_dirs")) {
      const json& list = cfg.at("external_dirs");
      if (!list.is_array()) throw ConfigError("config field 'external_dirs' must be an array");
      for (const json& e : list) {
        if (!e.is_string()) throw ConfigError("config field 'external_dirs' must list paths");
        external_dirs.push_back(e.get<std::string>());
      }
    }
    resolved["train_per_class"] = train_per_class;
    resolved["test_per_class"] = test_per_class;
    resolved["external_dirs"] = external_dirs;
    result = run_structural_ablation(ctx, train_per_class, test_per_class, external_dirs);
  } else if (kind == "ood_matrix") {
    const int per_domain_train = require_int(cfg, "per_domain_train");
    const int per_domain_test = require_int(cfg, "per_domain_test");
    const bool mixed = get_bool(cfg, "mixed_baseline", true);
    resolved["per_domain_train"] = per_domain_train;
    resolved["per_domain_test"] = per_domain_test;
    resolved["mixed_baseline"] = mixed;
    result = run_ood_matrix(ctx, per_domain_train, per_domain_test, mixed);
  } else {
    const int per_lang_train = require_int(cfg, "per_lang_train");
    const int per_lang_test = require_int(cfg, "per_lang_test");
    resolved["per_lang_train"] = per_lang_train;
    resolved["per_lang_test"] = per_lang_test;
    result = run_language_attribution(ctx, per_lang_train, per_lang_test);
  }

  result.config_hash = config_hash_hex(resolved);
  emit_experiment_report(result, run_dir.string());
  write_run_files(run_dir, resolved, clock.seconds(), flags.workers);

  std::cout << "experiment " << kind << " seed " << seed << ": " << result.cells.size()
            << " cells\n";
  for (const CellResult& cell : result.cells)
    std::cout << "  " << cell.key << ": accuracy " << pct(cell.accuracy) << "%\n";
  std::cout << "wrote " << run_dir.string() << "\n";
  return 0;
}

std::unique_ptr<ChatClient> make_client(const json& cfg, const std::vector<ManifestRow>& rows,
                                        uint64_t seed, json& resolved) {
  const std::string kind = require_string(cfg, "client");
  resolved["client"] = kind;
  if (kind == "truth") return std::make_unique<TruthClient>(rows);
  if (kind == "uniform")
    return std::make_unique<UniformClient>(class_labels(rows, ClassKey::model),
                                           hash_combine(seed, hash_str("uniform_client")));
  if (kind == "failure") return std::make_unique<FailingClient>();
  if (kind == "domain_oracle") return std::make_unique<DomainOracleClient>(rows);
  if (kind == "http") {
    const json& ep = require_field(cfg, "endpoint");
    if (!ep.is_object()) throw ConfigError("config field 'endpoint' must be an object");
    HttpEndpointConfig http;
    http.base_url = require_string(ep, "base_url");
    http.model = require_string(ep, "model");
    http.auth_token_env = get_string(ep, "auth_token_env", http.auth_token_env);
    if (ep.contains("temperature")) http.temperature = get_double(ep, "temperature", 0.0);
    if (ep.contains("max_tokens")) http.max_tokens = get_int(ep, "max_tokens", 0);
    http.timeout_seconds = get_double(ep, "timeout_seconds", http.timeout_seconds);
    json echo = {{"base_url", http.base_url},
                 {"model", http.model},
                 {"auth_token_env", http.auth_token_env},
                 {"timeout_seconds", http.timeout_seconds}};
    if (http.temperature) echo["temperature"] = *http.temperature;
    if (http.max_tokens) echo["max_tokens"] = *http.max_tokens;
    resolved["endpoint"] = echo;
    return std::make_unique<HttpChatClient>(http);
  }
  throw ConfigError(
      "config field 'client' must be one of: truth, uniform, failure, domain_oracle, http");
}

int cmd_mllm(const Flags& flags) {
  const json cfg = load_config_file(flags.config);
  const uint64_t seed = resolve_seed(flags, cfg);
  const std::string mode = get_string(cfg, "mode", "attribution");
  if (mode != "attribution" && mode != "cooccurrence")
    throw ConfigError("config field 'mode' must be 'attribution' or 'cooccurrence'");

  const fs::path run_dir =
      fs::path(require_out(flags)) / ("mllm_" + mode + "_seed" + std::to_string(seed));
  fs::create_directories(run_dir);
  WallClock clock;

  json resolved = {{"schema_version", 1}, {"command", "mllm"}, {"mode", mode}, {"seed", seed}};
  const CorpusHandle corpus = acquire_corpus(cfg, run_dir, seed, flags.workers, resolved);
  std::unique_ptr<ChatClient> client = make_client(cfg, corpus.rows, seed, resolved);

  json payload = {{"seed", seed}, {"toolkit_version", kToolkitVersion}};
  if (mode == "attribution") {
    MllmRunConfig mc;
    mc.shots = get_int_array(cfg, "shots", mc.shots);
    mc.per_model_queries = get_int(cfg, "per_model_queries", 100);
    mc.seed = seed;
    mc.max_retries = get_int(cfg, "max_retries", mc.max_retries);
    mc.initial_backoff_seconds =
        get_double(cfg, "initial_backoff_seconds", mc.initial_backoff_seconds);
    mc.audit_log_path = (run_dir / "audit.jsonl").string();
    mc.workers = flags.workers;
    resolved["shots"] = mc.shots;
    resolved["per_model_queries"] = mc.per_model_queries;
    resolved["max_retries"] = mc.max_retries;
    resolved["initial_backoff_seconds"] = mc.initial_backoff_seconds;

    const MllmRunResult result = run_mllm_attribution(corpus.root, corpus.rows, *client, mc);
    payload["kind"] = "mllm_attribution";
    payload.update(result.to_json());
    for (const ShotResult& shot : result.per_shot) {
      std::cout << "shots=" << shot.shots << ": accuracy " << pct(shot.accuracy()) << "% ("
                << shot.correct << " correct, " << shot.wrong << " wrong, " << shot.parse_failures
                << " parse failures, " << shot.total() << " queries)\n";
    }
  } else {
    const int per_domain_queries = get_int(cfg, "per_domain_queries", 100);
    resolved["per_domain_queries"] = per_domain_queries;
    const DomainCooccurrence result =
        run_domain_cooccurrence(corpus.root, corpus.rows, *client, per_domain_queries, seed);
    payload["kind"] = "domain_cooccurrence";
    payload.update(result.to_json());
    const int n = static_cast<int>(result.domains.size());
    for (int i = 0; i < n; ++i) {
      std::cout << result.domains[i] << ":";
      for (int q = 0; q < n; ++q) {
        char buf[16];
        std::snprintf(buf, sizeof buf, " %.1f", result.yes_percent[i * n + q]);
        std::cout << buf;
      }
      std::cout << "\n";
    }
  }
  payload["config_hash"] = config_hash_hex(resolved);
  write_canonical_json(payload, (run_dir / "results.json").string());
  write_run_files(run_dir, resolved, clock.seconds(), flags.workers);
  std::cout << "wrote " << run_dir.string() << "\n";
  return 0;
}

int cmd_report(const Flags& flags) {
  if (flags.config.empty())
    throw ConfigError("report requires --config pointing at a results.json or its directory");
  fs::path src = flags.config;
  if (fs::is_directory(src)) src /= "results.json";
  std::ifstream in(src, std::ios::binary);
  if (!in) throw ConfigError("cannot open results file: " + src.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("results " + src.string() + " is not valid JSON: " + e.what());
  }
  const ExperimentResult result = ExperimentResult::from_json(j);
  const std::string out = flags.out.empty() ? src.parent_path().string() : flags.out;
  emit_experiment_report(result, out);
  std::cout << "re-emitted tables and figures for " << result.kind << " seed " << result.seed
            << " to " << out << "\n";
  return 0;
}

int cmd_selftest(const Flags& flags) {
  const uint64_t seed = flags.has_seed ? flags.seed : 7;
  int checks = 0;

  SmallConvNetConfig arch;
  arch.input_side = 16;
  arch.stage_channels = {6, 12};
  const GradCheckResult single = gradient_check(arch, 3, 4, seed, Precision::single_prec, 24);
  std::printf("gradient check (single): max relative error %.3e over %d coordinates\n",
              single.max_rel_error, single.coords_checked);
  if (single.max_rel_error >= 1e-3)
    throw InternalError("single-precision gradient check exceeded 1e-3");
  ++checks;

  const GradCheckResult dbl = gradient_check(arch, 3, 4, seed + 1, Precision::double_prec, 24);
  std::printf("gradient check (double): max relative error %.3e over %d coordinates\n",
              dbl.max_rel_error, dbl.coords_checked);
  if (dbl.max_rel_error >= 1e-6)
    throw InternalError("double-precision gradient check exceeded 1e-6");
  ++checks;

  {
    ConfusionMatrix cm;
    cm.labels = {"a", "b"};
    cm.counts = {1, 3, 2, 2};
    const std::vector<double> recall = recall_matrix(cm);
    const std::vector<double> expected = {25.0, 75.0, 50.0, 50.0};
    for (int i = 0; i < 4; ++i)
      if (std::abs(recall[i] - expected[i]) > 1e-12)
        throw InternalError("confusion normalization oracle failed");
    if (cm.accuracy() != 3.0 / 8.0) throw InternalError("confusion accuracy oracle failed");
    std::printf("confusion normalization: pass\n");
    ++checks;
  }

  {
    const json j = {{"b", 1}, {"a", json::array({1.5, true, nullptr})}};
    const std::string dump = canonical_dump(j);
    if (dump != "{\"a\":[1.5,true,null],\"b\":1}" || dump != canonical_dump(j))
      throw InternalError("canonical JSON oracle failed");
    std::printf("canonical json: pass\n");
    ++checks;
  }

  {
    const GeneratorSignature sig = default_signatures(1)[0];
    ContentSpec content;
    content.domain_id = 0;
    content.prompt_id = 3;
    const ImageBuffer a = render(sig, content, seed, 32);
    const ImageBuffer b = render(sig, content, seed, 32);
    if (a.data != b.data) throw InternalError("render determinism check failed");
    std::printf("render determinism: pass\n");
    ++checks;
  }

  {
    const std::string prompt = build_zero_shot_prompt(default_candidates());
    for (const std::string& name : default_candidates())
      if (prompt.find("- " + name + "\n") == std::string::npos)
        throw InternalError("prompt template check failed");
    std::printf("prompt template: pass\n");
    ++checks;
  }

  std::printf("selftest passed (%d checks)\n", checks);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"umat: synthetic image-attribution toolkit"};
  app.require_subcommand(1);

  Flags flags;
  CLI::Option* seed_opt = app.add_option("--seed", flags.seed, "Run seed (overrides config)");
  app.add_option("--config", flags.config, "Path to a JSON config file");
  app.add_option("--out", flags.out, "Output directory");
  app.add_option("--workers", flags.workers, "Worker threads (never affects results)");
  CLI::Option* precision_opt =
      app.add_option("--precision", flags.precision, "Float precision (overrides config)")
          ->check(CLI::IsMember({"single", "double"}));

  CLI::App* sub_gen = app.add_subcommand("gen", "Generate a synthetic corpus with a manifest");
  CLI::App* sub_train = app.add_subcommand("train", "Train a classifier and save a checkpoint");
  CLI::App* sub_eval =
      app.add_subcommand("eval", "Evaluate a checkpoint; prints the confusion matrix");
  CLI::App* sub_experiment =
      app.add_subcommand("experiment", "Run a full experiment from a config file");
  CLI::App* sub_mllm = app.add_subcommand("mllm", "Query a chat endpoint for attribution");
  CLI::App* sub_report = app.add_subcommand("report", "Re-emit tables and figures from results");
  CLI::App* sub_selftest =
      app.add_subcommand("selftest", "Run gradient checks and internal oracles");
  for (CLI::App* sub : {sub_gen, sub_train, sub_eval, sub_experiment, sub_mllm, sub_report,
                        sub_selftest})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  try {
    flags.has_seed = seed_opt->count() > 0;
    flags.has_precision = precision_opt->count() > 0;
    validate_workers(flags);
    if (app.got_subcommand("gen")) return cmd_gen(flags);
    if (app.got_subcommand("train")) return cmd_train(flags);
    if (app.got_subcommand("eval")) return cmd_eval(flags);
    if (app.got_subcommand("experiment")) return cmd_experiment(flags);
    if (app.got_subcommand("mllm")) return cmd_mllm(flags);
    if (app.got_subcommand("report")) return cmd_report(flags);
    return cmd_selftest(flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
